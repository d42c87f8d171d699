"""Discrete relaxed controls on the action space x time and their surgery.

A step control holds one action per slot of a uniform time grid.  Its
relaxation carries, per slot, a finite probability measure on the action
space, so the cumulative mass over [0, t_j] equals t_j by construction.
The module provides the lift of ordinary controls, truncation of action
mass onto a ball with a fallback action, and the chattering projection
onto finite action grids over dyadic time grids.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "StepControl",
    "RelaxedControlPath",
    "lift",
    "truncate",
    "chattering_project",
    "covering_radius",
]


def _check_uniform_grid(times: np.ndarray) -> float:
    if len(times) < 2:
        raise ValueError("time grid needs at least two points")
    steps = np.diff(times)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=0.0, atol=1e-10):
        raise ValueError("time grid must be uniform and increasing")
    return float(steps[0])


@dataclass(frozen=True)
class StepControl:
    """Piecewise-constant action path: ``values[j]`` rules [t_j, t_{j+1})."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        _check_uniform_grid(t)
        if v.shape[0] != len(t) - 1:
            raise ValueError("one action per time slot required")
        t = t.copy()
        v = v.copy()
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n_slots(self) -> int:
        return self.values.shape[0]

    @property
    def action_dim(self) -> int:
        return self.values.shape[1]

    def energy(self) -> float:
        """Quadrature of |gamma|^2 over time."""
        return float(np.sum(np.einsum("jd,jd->j", self.values, self.values)) * self.dt)

    def at_time(self, t: float) -> np.ndarray:
        j = min(int(np.floor((t - self.times[0]) / self.dt + 1e-12)), self.n_slots - 1)
        if j < 0:
            raise ValueError(f"time {t} precedes the control grid")
        return self.values[j]

    def to_csv(self, path) -> None:
        idx = np.arange(self.n_slots)
        data = np.column_stack([idx, self.times[:-1], self.values])
        header = "slot,t," + ",".join(f"gamma{i + 1}" for i in range(self.action_dim))
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


@dataclass(frozen=True)
class RelaxedControlPath:
    """Per-slot finite mixtures over actions; slot masses are exactly one.

    ``slot_atoms[j]`` has shape (m_j, d2), ``slot_weights[j]`` shape (m_j,).
    """

    times: np.ndarray
    slot_atoms: tuple
    slot_weights: tuple

    def __init__(self, times, slot_atoms: Sequence[np.ndarray], slot_weights: Sequence[np.ndarray]):
        t = np.asarray(times, dtype=float).reshape(-1)
        _check_uniform_grid(t)
        if len(slot_atoms) != len(t) - 1 or len(slot_weights) != len(t) - 1:
            raise ValueError("one slot measure per time slot required")
        atoms = []
        weights = []
        for a, w in zip(slot_atoms, slot_weights):
            a = np.asarray(a, dtype=float)
            if a.ndim == 1:
                a = a[:, None]
            w = np.asarray(w, dtype=float).reshape(-1)
            if len(w) != a.shape[0]:
                raise ValueError("slot atoms and weights must align")
            if np.any(w < 0):
                raise ValueError("negative slot weight")
            if abs(float(w.sum()) - 1.0) > 1e-12:
                raise ValueError("slot weights must sum to one within 1e-12")
            a = a.copy()
            w = w.copy()
            a.setflags(write=False)
            w.setflags(write=False)
            atoms.append(a)
            weights.append(w)
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "slot_atoms", tuple(atoms))
        object.__setattr__(self, "slot_weights", tuple(weights))

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n_slots(self) -> int:
        return len(self.slot_atoms)

    @property
    def action_dim(self) -> int:
        return self.slot_atoms[0].shape[1]

    def mass_up_to(self, j: int) -> float:
        """Cumulative mass over action-space x [0, t_j]; equals t_j exactly."""
        return j * self.dt

    def second_moment(self) -> float:
        total = 0.0
        for a, w in zip(self.slot_atoms, self.slot_weights):
            total += float(w @ np.einsum("md,md->m", a, a))
        return total * self.dt

    def slot_mean_drift(self, j: int, drift) -> np.ndarray:
        """Average of ``drift(gamma)`` under the slot-j mixture."""
        contributions = drift(self.slot_atoms[j])
        return np.einsum("m,m...->...", self.slot_weights[j], contributions)


def lift(u: StepControl) -> RelaxedControlPath:
    """Relaxation of an ordinary control: each slot carries a point mass."""
    atoms = [u.values[j:j + 1] for j in range(u.n_slots)]
    weights = [np.ones(1) for _ in range(u.n_slots)]
    return RelaxedControlPath(u.times, atoms, weights)


def truncate(r: RelaxedControlPath, m_radius: float, gamma0, gamma_set=None) -> RelaxedControlPath:
    """Reassign all slot mass outside the ball of radius ``m_radius`` to the
    fallback action ``gamma0``; per-slot masses are preserved."""
    g0 = np.atleast_1d(np.asarray(gamma0, dtype=float))
    if gamma_set is not None and not bool(np.all(gamma_set.contains(g0[None, :]))):
        raise ValueError("gamma0 must belong to the action space")
    atoms_out = []
    weights_out = []
    for a, w in zip(r.slot_atoms, r.slot_weights):
        norms = np.sqrt(np.einsum("md,md->m", a, a))
        inside = norms <= m_radius + 1e-12
        lost = float(w[~inside].sum())
        kept_a = a[inside]
        kept_w = w[inside]
        if lost > 0.0:
            same = np.all(np.abs(kept_a - g0[None, :]) < 1e-15, axis=1) if len(kept_a) else np.zeros(0, bool)
            if np.any(same):
                kept_w = kept_w.copy()
                kept_w[np.argmax(same)] += lost
            else:
                kept_a = np.vstack([kept_a, g0[None, :]]) if len(kept_a) else g0[None, :]
                kept_w = np.concatenate([kept_w, [lost]])
        atoms_out.append(kept_a)
        weights_out.append(kept_w)
    return RelaxedControlPath(r.times, atoms_out, weights_out)


def covering_radius(grid: np.ndarray, samples: np.ndarray) -> float:
    """Largest distance from a sample point to the grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    diff = samples[:, None, :] - grid[None, :, :]
    dists = np.sqrt(np.einsum("smd,smd->sm", diff, diff))
    return float(dists.min(axis=1).max())


def _snap(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Nearest grid point per value; ties resolve to the smallest grid index."""
    diff = values[:, None, :] - grid[None, :, :]
    dists = np.einsum("jmd,jmd->jm", diff, diff)
    return grid[np.argmin(dists, axis=1)]


def chattering_project(u: StepControl, grid, k: int) -> StepControl:
    """Project a step control onto a finite action grid over the dyadic time
    grid with 2^k slots; coarse slot values snap the fine control at the
    slot's left endpoint."""
    atoms = getattr(grid, "atoms", grid)
    atoms = np.asarray(atoms, dtype=float)
    if atoms.ndim == 1:
        atoms = atoms[:, None]
    if atoms.shape[0] == 0:
        raise ValueError("empty grid")
    n_coarse = 2**int(k)
    horizon = float(u.times[-1] - u.times[0])
    ratio = u.n_slots / n_coarse
    if abs(ratio - round(ratio)) > 1e-9 or u.n_slots < n_coarse:
        raise ValueError(
            f"control grid with {u.n_slots} slots does not refine the dyadic grid with {n_coarse} slots"
        )
    stride = int(round(ratio))
    coarse_times = u.times[0] + horizon * np.arange(n_coarse + 1) / n_coarse
    left_values = u.values[::stride]
    snapped = _snap(left_values, atoms)
    return StepControl(coarse_times, snapped)
