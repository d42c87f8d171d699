"""mfglab: a numerical laboratory for symmetric N-player stochastic
differential games with mean-field interaction and their limiting mean
field games.

The package simulates the coupled particle system, solves the limiting
game's frozen-flow control problem by backward dynamic programming plus a
damped fixed point on the measure flow, and verifies the convergence
direction (equilibria of large finite games approach the mean field
solution) through occupation measures, exact Wasserstein diagnostics, and
paired deviation tests.
"""

__version__ = "0.1.0"

from . import benchmarks, dynamics, measures, mfg_solver, nash, relaxed_controls  # noqa: F401
