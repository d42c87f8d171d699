"""Discrete probability measures on R^d and exact Wasserstein-2 transport.

All measures handled by the package are finite weighted point clouds: the
empirical measure of a particle system, a quantile sample of an initial law,
or a time slice of a measure flow.  Distances are always the exact squared
Wasserstein distance of the discrete optimal transport problem, never a
regularized surrogate, so measured quantities can be asserted against
independent oracles.

Solver dispatch for :func:`wasserstein2`:

* dimension 1, uniform weights, equal sizes -- sorted quantile matching;
* dimension 1, general weights -- monotone coupling built by merging the two
  cumulative weight profiles (optimal for squared cost in one dimension);
* dimension >= 2, uniform weights, equal sizes -- exact assignment
  (``scipy.optimize.linear_sum_assignment``);
* otherwise -- the transportation linear program solved exactly with HiGHS.

The bounded-Lipschitz metric on spaces of measure-valued laws has no
computable surrogate here; only Wasserstein-2 quantities are offered.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

__all__ = [
    "DiscreteMeasure",
    "MeasureFlow",
    "TransportPlan",
    "dirac",
    "empirical_measure",
    "second_moment",
    "wasserstein2",
    "flow_distance",
]

_WEIGHT_TOL = 1e-12


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise ValueError(f"support must be a list of points, got shape {pts.shape}")
    return pts


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely supported probability measure on R^d.

    ``support`` has shape ``(n, d)``; ``weights`` has shape ``(n,)``, is
    nonnegative, and sums to one within 1e-12.  Duplicate atoms are kept as
    separate rows so index alignment with the generating sample survives.
    """

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = _as_points(self.support)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(w) != len(pts):
            raise ValueError("weights and support must have the same length")
        if len(w) == 0:
            raise ValueError("empty sample")
        if np.any(w < -_WEIGHT_TOL):
            raise ValueError("negative weight")
        total = float(w.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {total}, expected 1")
        w = np.maximum(w, 0.0)
        w = w / w.sum()
        pts = pts.copy()
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "support", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dimension(self) -> int:
        return self.support.shape[1]

    @property
    def size(self) -> int:
        return self.support.shape[0]

    @property
    def is_uniform(self) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.size, atol=_WEIGHT_TOL, rtol=0.0))

    def second_moment(self) -> float:
        """Integral of |x|^2, i.e. the squared distance to the Dirac at 0."""
        return float(self.weights @ np.einsum("nd,nd->n", self.support, self.support))

    def mean(self) -> np.ndarray:
        return self.weights @ self.support

    def to_csv(self, path) -> None:
        """One atom per row: weight, x_1 .. x_d."""
        data = np.column_stack([self.weights, self.support])
        header = "weight," + ",".join(f"x{i + 1}" for i in range(self.dimension))
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")

    def to_payload(self) -> dict:
        """JSON-friendly form for the experiment event log."""
        return {
            "weights": [float(w) for w in self.weights],
            "support": [[float(v) for v in row] for row in self.support],
        }


def dirac(x) -> DiscreteMeasure:
    pt = np.atleast_1d(np.asarray(x, dtype=float))
    return DiscreteMeasure(pt[None, :], np.ones(1))


def empirical_measure(points) -> DiscreteMeasure:
    """Uniform measure on the given atoms (duplicates kept separate)."""
    pts = _as_points(points)
    if pts.shape[0] == 0:
        raise ValueError("empty sample")
    n = pts.shape[0]
    return DiscreteMeasure(pts, np.full(n, 1.0 / n))


def second_moment(mu: DiscreteMeasure) -> float:
    return mu.second_moment()


@dataclass(frozen=True)
class TransportPlan:
    """Sparse coupling between two discrete measures.

    ``source_index``, ``target_index`` and ``mass`` are parallel arrays, one
    entry per atom pair carrying positive mass; ``cost`` is the total squared
    displacement of the plan.
    """

    source_index: np.ndarray
    target_index: np.ndarray
    mass: np.ndarray
    cost: float

    @property
    def pairs(self) -> list:
        return [
            (int(i), int(j), float(m))
            for i, j, m in zip(self.source_index, self.target_index, self.mass)
        ]

    def marginals(self, n_source: int, n_target: int) -> tuple[np.ndarray, np.ndarray]:
        left = np.zeros(n_source)
        right = np.zeros(n_target)
        np.add.at(left, self.source_index, self.mass)
        np.add.at(right, self.target_index, self.mass)
        return left, right

    def check_against(self, mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float = 1e-10) -> None:
        """Raise if the plan is not a coupling of (mu, nu) attaining its cost."""
        left, right = self.marginals(mu.size, nu.size)
        if np.max(np.abs(left - mu.weights)) > tol or np.max(np.abs(right - nu.weights)) > tol:
            raise AssertionError("transport plan marginals do not match the measures")
        disp = mu.support[self.source_index] - nu.support[self.target_index]
        cost = float(self.mass @ np.einsum("nd,nd->n", disp, disp))
        if abs(cost - self.cost) > tol * max(1.0, abs(self.cost)):
            raise AssertionError("transport plan cost does not match its pairs")


def _quantile_plan(mu: DiscreteMeasure, nu: DiscreteMeasure) -> TransportPlan:
    n = mu.size
    order_mu = np.argsort(mu.support[:, 0], kind="stable")
    order_nu = np.argsort(nu.support[:, 0], kind="stable")
    diffs = mu.support[order_mu, 0] - nu.support[order_nu, 0]
    cost = float(np.sum(diffs * diffs) / n)
    return TransportPlan(order_mu, order_nu, np.full(n, 1.0 / n), cost)


def _monotone_plan_1d(mu: DiscreteMeasure, nu: DiscreteMeasure) -> TransportPlan:
    """Exact monotone coupling in one dimension by merging weight profiles."""
    order_mu = np.argsort(mu.support[:, 0], kind="stable")
    order_nu = np.argsort(nu.support[:, 0], kind="stable")
    wa = mu.weights[order_mu]
    wb = nu.weights[order_nu]
    src, tgt, mass = [], [], []
    i = j = 0
    ra, rb = wa[0], wb[0]
    cost = 0.0
    while True:
        m = min(ra, rb)
        if m > 0.0:
            src.append(order_mu[i])
            tgt.append(order_nu[j])
            mass.append(m)
            diff = mu.support[order_mu[i], 0] - nu.support[order_nu[j], 0]
            cost += m * diff * diff
        ra -= m
        rb -= m
        if ra <= _WEIGHT_TOL:
            i += 1
            if i >= len(wa):
                break
            ra = wa[i]
        if rb <= _WEIGHT_TOL:
            j += 1
            if j >= len(wb):
                break
            rb = wb[j]
    return TransportPlan(np.array(src, dtype=int), np.array(tgt, dtype=int), np.array(mass), float(cost))


def _sq_dist_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijd,ijd->ij", diff, diff)


def _assignment_plan(mu: DiscreteMeasure, nu: DiscreteMeasure) -> TransportPlan:
    cost_matrix = _sq_dist_matrix(mu.support, nu.support)
    rows, cols = linear_sum_assignment(cost_matrix)
    n = mu.size
    cost = float(cost_matrix[rows, cols].sum() / n)
    return TransportPlan(rows, cols, np.full(n, 1.0 / n), cost)


def _lp_plan(mu: DiscreteMeasure, nu: DiscreteMeasure) -> TransportPlan:
    n, m = mu.size, nu.size
    cost_matrix = _sq_dist_matrix(mu.support, nu.support)
    c = cost_matrix.reshape(-1)
    # Row-sum constraints for every source atom, column sums for all but the
    # last target atom (the dropped constraint is implied by mass balance).
    n_rows = n + m - 1
    a_eq = np.zeros((n_rows, n * m))
    b_eq = np.zeros(n_rows)
    for i in range(n):
        a_eq[i, i * m:(i + 1) * m] = 1.0
        b_eq[i] = mu.weights[i]
    for j in range(m - 1):
        a_eq[n + j, j::m] = 1.0
        b_eq[n + j] = nu.weights[j]
    res = linprog(c, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    plan = res.x.reshape(n, m)
    src, tgt = np.nonzero(plan > 1e-14)
    mass = plan[src, tgt]
    cost = float(np.sum(mass * cost_matrix[src, tgt]))
    return TransportPlan(src, tgt, mass, cost)


def wasserstein2(mu: DiscreteMeasure, nu: DiscreteMeasure) -> tuple[float, TransportPlan]:
    """Exact Wasserstein-2 distance and an optimal plan between two measures."""
    if mu.dimension != nu.dimension:
        raise ValueError(f"dimension mismatch: {mu.dimension} vs {nu.dimension}")
    equal_uniform = mu.size == nu.size and mu.is_uniform and nu.is_uniform
    if mu.dimension == 1:
        plan = _quantile_plan(mu, nu) if equal_uniform else _monotone_plan_1d(mu, nu)
    elif equal_uniform:
        plan = _assignment_plan(mu, nu)
    else:
        plan = _lp_plan(mu, nu)
    return float(np.sqrt(max(plan.cost, 0.0))), plan


@dataclass(frozen=True)
class MeasureFlow:
    """A measure-valued path sampled on a strictly increasing time grid."""

    times: np.ndarray
    measures: tuple

    def __init__(self, times, measures: Sequence[DiscreteMeasure]):
        t = np.asarray(times, dtype=float).reshape(-1)
        ms = tuple(measures)
        if len(t) != len(ms):
            raise ValueError("one measure per grid point required")
        if len(t) == 0:
            raise ValueError("empty time grid")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        dims = {m.dimension for m in ms}
        if len(dims) != 1:
            raise ValueError(f"measures of mixed dimension: {sorted(dims)}")
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "measures", ms)

    @property
    def dimension(self) -> int:
        return self.measures[0].dimension

    def __len__(self) -> int:
        return len(self.measures)

    def __getitem__(self, idx: int) -> DiscreteMeasure:
        return self.measures[idx]

    def index_at_or_before(self, t: float, tol: float = 1e-9) -> int:
        """Index of the last grid time <= t (within tolerance)."""
        idx = int(np.searchsorted(self.times, t + tol, side="right")) - 1
        if idx < 0:
            raise ValueError(f"time {t} precedes the flow grid")
        return idx

    def at_time(self, t: float, tol: float = 1e-9) -> DiscreteMeasure:
        """Measure at the last grid time <= t (exact on grid times)."""
        return self.measures[self.index_at_or_before(t, tol)]

    def means(self) -> np.ndarray:
        return np.stack([m.mean() for m in self.measures])

    def second_moments(self) -> np.ndarray:
        return np.array([m.second_moment() for m in self.measures])


def constant_flow(times, mu: DiscreteMeasure) -> MeasureFlow:
    return MeasureFlow(times, [mu] * len(np.asarray(times).reshape(-1)))


def dirac_flow(times, path) -> MeasureFlow:
    """Flow of Dirac measures along a deterministic path."""
    pts = np.asarray(path, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return MeasureFlow(times, [dirac(p) for p in pts])


def flow_distance(f1: MeasureFlow, f2: MeasureFlow) -> float:
    """Max over grid times of the exact Wasserstein-2 distance (grid proxy
    for the uniform distance between measure flows)."""
    if len(f1) != len(f2) or not np.allclose(f1.times, f2.times, atol=1e-12, rtol=0.0):
        raise ValueError("flows must share the same time grid")
    worst = 0.0
    for m1, m2 in zip(f1.measures, f2.measures):
        d, _ = wasserstein2(m1, m2)
        worst = max(worst, d)
    return worst
