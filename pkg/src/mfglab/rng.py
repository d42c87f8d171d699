"""Deterministic substream management for reproducible parallel simulation.

Every source of randomness in the package is a named substream of a single
user-supplied seed.  Substreams are addressed by an integer path (purpose
tag, player index, repetition index, ...) through numpy's ``SeedSequence``
spawn keys, so the draws a consumer sees depend only on the seed and the
path, never on evaluation order or thread schedule.  This is also what makes
common-random-number coupling exact: two strategy profiles simulated under
the same seed key read identical per-player noise.
"""
from __future__ import annotations

from typing import Union

import numpy as np

SeedKey = Union[int, tuple]

# Purpose tags. Keep values stable: they are part of the reproducibility
# contract (a seed + tag + indices addresses one stream forever).
NOISE = 0       # per-player Wiener increments
THETA = 1       # per-player auxiliary uniform randomization variables
INITIAL = 2     # sampling of initial states
QUADRATURE = 3  # fixed Monte Carlo quadrature draws inside the DP
THINNING = 4    # stratified resampling in the fixed-point flow update
REPETITION = 5  # repetition-level branching for cost estimates
VALIDATE = 6    # sampling used by assumption checks


def substream(key: SeedKey, *path: int) -> np.random.Generator:
    """Return the generator addressed by a seed key and an integer path.

    ``key`` is either a plain integer seed or a tuple ``(seed, p1, p2, ...)``
    whose tail is a path prefix; ``path`` extends it.  Identical
    ``(key, path)`` pairs always yield identical streams.
    """
    if isinstance(key, tuple):
        seed, prefix = key[0], tuple(int(p) for p in key[1:])
    else:
        seed, prefix = key, ()
    spawn = prefix + tuple(int(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=spawn))


def rep_key(key: SeedKey, rep: int) -> tuple:
    """Seed key addressing repetition ``rep`` of a study run under ``key``."""
    if isinstance(key, tuple):
        return key + (REPETITION, int(rep))
    return (int(key), REPETITION, int(rep))
