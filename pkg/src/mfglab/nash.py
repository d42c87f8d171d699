"""Cost evaluation, deviation testing and occupation-measure diagnostics.

Deviation gaps are estimated with common random numbers: the incumbent
profile and every unilateral deviation are simulated under identical
per-player noise substreams, so cost differences are paired samples and the
gap of the incumbent against itself vanishes identically.  The reported
epsilon is a certified lower bound for the true best-response gap, taken
over a finite candidate family; the supremum over all narrow strategies is
not computable.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import rng as rngmod
from .dynamics import ModelSpec, PathBundle, Strategy, simulate_n_player
from .measures import DiscreteMeasure, empirical_measure
from .relaxed_controls import lift

__all__ = [
    "StrategyProfile",
    "CostReport",
    "GapReport",
    "OccupationMeasure",
    "evaluate_costs",
    "deviation_gap",
    "iid_profile",
    "occupation_measure",
    "tightness_diagnostic",
    "condition_statistics",
    "ConditionReport",
    "optimal_coupling",
    "bundle_costs",
]


@dataclass(frozen=True)
class StrategyProfile:
    """A vector of per-player strategies with their information tags."""

    strategies: tuple

    def __init__(self, strategies: Sequence[Strategy]):
        object.__setattr__(self, "strategies", tuple(strategies))

    @property
    def n_players(self) -> int:
        return len(self.strategies)

    @property
    def narrow_tags(self) -> tuple:
        return tuple(bool(s.narrow) for s in self.strategies)

    def replace(self, i: int, strategy: Strategy) -> "StrategyProfile":
        strategies = list(self.strategies)
        strategies[i] = strategy
        return StrategyProfile(strategies)


def iid_profile(psi: Strategy, n: int) -> StrategyProfile:
    """N copies of one narrow strategy, each wired to its own primitives."""
    if not psi.narrow:
        raise ValueError("iid profiles require a narrow strategy")
    return StrategyProfile([psi] * n)


def bundle_costs(bundle: PathBundle, model: ModelSpec) -> np.ndarray:
    """Per-player realized cost of one simulated bundle (left-endpoint
    quadrature of the running cost plus the terminal cost)."""
    n, jp1, _ = bundle.states.shape
    dt = bundle.dt
    costs = np.zeros(n)
    for j in range(jp1 - 1):
        t = float(bundle.times[j])
        costs += model.running_cost(t, bundle.states[:, j], bundle.flow[j], bundle.controls[:, j]) * dt
    costs += model.terminal_cost(bundle.states[:, -1], bundle.flow[jp1 - 1])
    return costs


@dataclass(frozen=True)
class CostReport:
    """Monte Carlo cost summary for one profile.

    ``istar`` is the median-cost player (the designated index of the cost
    symmetry check); ``spread`` is the largest deviation of a per-player
    mean from the population mean cost.
    """

    per_player_mean: np.ndarray
    per_player_se: np.ndarray
    mean_cost: float
    istar: int
    spread: float
    n_players: int
    repetitions: int
    steps: int
    seed: int


def evaluate_costs(
    model: ModelSpec,
    profile: StrategyProfile,
    initials,
    seed: int,
    repetitions: int,
    steps: int,
) -> CostReport:
    """Per-player Monte Carlo costs over independent repetitions.

    Repetition r draws all noise from the repetition's substream family, so
    rerunning any subset of repetitions reproduces identical numbers.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    n = profile.n_players
    samples = np.zeros((repetitions, n))
    for r in range(repetitions):
        bundle = simulate_n_player(model, profile, initials, rngmod.rep_key(seed, r), steps)
        samples[r] = bundle_costs(bundle, model)
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(repetitions) if repetitions > 1 else np.zeros(n)
    mean_cost = float(mean.mean())
    istar = int(np.argsort(mean, kind="stable")[len(mean) // 2])
    spread = float(np.max(np.abs(mean - mean_cost)))
    return CostReport(mean, se, mean_cost, istar, spread, n, repetitions, steps, int(seed))


@dataclass(frozen=True)
class GapReport:
    """Paired-CRN deviation summary for one player."""

    epsilon_hat: float
    best_candidate: int
    gap_means: np.ndarray
    gap_ses: np.ndarray
    incumbent_cost: float
    player: int

    @property
    def best_gap_se(self) -> float:
        return float(self.gap_ses[self.best_candidate])


def deviation_gap(
    model: ModelSpec,
    profile: StrategyProfile,
    i: int,
    candidates: Sequence[Strategy],
    initials,
    seed: int,
    steps: int,
    repetitions: int,
    antithetic: bool = False,
) -> GapReport:
    """Lower bound on player i's best-response gap over a candidate family.

    epsilon_hat = max(0, max_v J_i(u) - J_i([u^{-i}, v])), estimated with
    common random numbers; per-candidate standard errors come from the
    paired per-repetition differences.  With ``antithetic`` each repetition
    averages the run with its noise-flipped companion (same substreams on
    both sides of every comparison, so pairing is preserved).
    """
    if not candidates:
        raise ValueError("candidates must be nonempty")
    for k, cand in enumerate(candidates):
        if not cand.narrow:
            raise ValueError(f"candidate {k} is not a narrow strategy")
    reps = max(1, repetitions)
    flips = (False, True) if antithetic else (False,)

    def rep_cost(prof, r):
        total = 0.0
        for flip in flips:
            bundle = simulate_n_player(model, prof, initials, rngmod.rep_key(seed, r), steps, flip_noise=flip)
            total += bundle_costs(bundle, model)[i]
        return total / len(flips)

    base = np.array([rep_cost(profile, r) for r in range(reps)])
    gap_means = np.zeros(len(candidates))
    gap_ses = np.zeros(len(candidates))
    for k, cand in enumerate(candidates):
        deviated = profile.replace(i, cand)
        diffs = np.array([base[r] - rep_cost(deviated, r) for r in range(reps)])
        gap_means[k] = diffs.mean()
        gap_ses[k] = diffs.std(ddof=1) / np.sqrt(reps) if reps > 1 else 0.0
    best = int(np.argmax(gap_means))
    return GapReport(
        epsilon_hat=float(max(0.0, gap_means[best])),
        best_candidate=best,
        gap_means=gap_means,
        gap_ses=gap_ses,
        incumbent_cost=float(base.mean()),
        player=int(i),
    )


# ---------------------------------------------------------------------------
# Occupation measures and tightness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OccupationMeasure:
    """Uniform empirical measure over (state path, relaxed control, noise)
    triples of one population."""

    bundle: PathBundle
    relaxed: tuple = field(default=None)

    def __post_init__(self):
        if self.relaxed is None:
            lifts = tuple(lift(self.bundle.control(i)) for i in range(self.bundle.n_players))
            object.__setattr__(self, "relaxed", lifts)

    @property
    def n(self) -> int:
        return self.bundle.n_players

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)

    def state_marginal(self, j: int) -> DiscreteMeasure:
        return empirical_measure(self.bundle.states[:, j])

    def triple(self, i: int):
        return self.bundle.states[i], self.relaxed[i], self.bundle.noise(i)


def occupation_measure(bundle: PathBundle) -> OccupationMeasure:
    return OccupationMeasure(bundle)


def _moduli(paths: np.ndarray, n_lags: int) -> np.ndarray:
    """Moduli of continuity over grid pairs: out[i, m-1] is the largest
    |path(t) - path(s)| over |t - s| <= m grid steps for player i."""
    n, jp1, _ = paths.shape
    out = np.zeros((n, n_lags))
    running = np.zeros(n)
    for m in range(1, n_lags + 1):
        diff = paths[:, m:] - paths[:, :-m]
        dist = np.sqrt(np.einsum("njd,njd->nj", diff, diff))
        running = np.maximum(running, dist.max(axis=1) if dist.shape[1] else 0.0)
        out[:, m - 1] = running
    return out


def tightness_diagnostic(occ: OccupationMeasure, delta0: float, alpha: float = None) -> float:
    """Computable tightness functional of the occupation measure.

    Per player: sup-norm of the state path to the power 2 + delta0, plus
    |W(0)|, plus the (2 + delta0)-energy of the control, plus the worst of
    h^{-alpha} (w_X(h) + w_W(h)) over grid lags h up to min(1, T); the
    default exponent is alpha = delta0 / (2 (8 + delta0)).
    """
    bundle = occ.bundle
    T = float(bundle.times[-1])
    if not (0.0 < delta0 <= min(1.0, T)):
        raise ValueError("delta0 must lie in (0, min(1, T)]")
    if alpha is None:
        alpha = delta0 / (2.0 * (8.0 + delta0))
    dt = bundle.dt
    p = 2.0 + delta0

    state_norms = np.sqrt(np.einsum("njd,njd->nj", bundle.states, bundle.states))
    sup_state = state_norms.max(axis=1) ** p

    w0 = 0.0  # noise paths start at zero by construction
    ctrl = np.sqrt(np.einsum("njd,njd->nj", bundle.controls, bundle.controls))
    ctrl_energy = (ctrl**p).sum(axis=1) * dt

    n_lags = max(1, int(np.floor(min(1.0, T) / dt + 1e-9)))
    wx = _moduli(bundle.states, n_lags)
    noise_paths = np.cumsum(
        np.concatenate([np.zeros_like(bundle.noise_increments[:, :1]), bundle.noise_increments], axis=1),
        axis=1,
    )
    ww = _moduli(noise_paths, n_lags)
    hs = dt * np.arange(1, n_lags + 1)
    mod_term = ((wx + ww) * hs[None, :] ** (-alpha)).max(axis=1)

    per_player = sup_state + w0 + ctrl_energy + mod_term
    return float(per_player.mean())


@dataclass(frozen=True)
class ConditionReport:
    """The uniform-integrability statistic and the cost-symmetry block."""

    t_statistic: float
    delta0: float
    istar: int = None
    istar_cost: float = None
    mean_cost: float = None
    spread: float = None


def condition_statistics(bundle: PathBundle, delta0: float, cost_report: CostReport = None) -> ConditionReport:
    """Population (2 + delta0)-moment statistic of initial states and
    controls, plus the designated-player cost block when a cost report is
    supplied (the designated index is the median-cost player)."""
    p = 2.0 + delta0
    dt = bundle.dt
    xi = np.sqrt(np.einsum("nd,nd->n", bundle.initials, bundle.initials))
    ctrl = np.sqrt(np.einsum("njd,njd->nj", bundle.controls, bundle.controls))
    stat = float(np.mean(xi**p + (ctrl**p).sum(axis=1) * dt))
    if cost_report is None:
        return ConditionReport(stat, delta0)
    return ConditionReport(
        stat,
        delta0,
        istar=cost_report.istar,
        istar_cost=float(cost_report.per_player_mean[cost_report.istar]),
        mean_cost=cost_report.mean_cost,
        spread=cost_report.spread,
    )


# ---------------------------------------------------------------------------
# Optimal coupling of initial conditions
# ---------------------------------------------------------------------------

def optimal_coupling(sample, target: DiscreteMeasure, theta) -> np.ndarray:
    """Couple a uniform sample to a target measure at the exact W2 cost.

    Dimension one uses the monotone coupling, with the auxiliary uniforms
    ordering duplicate sample values; higher dimensions require an
    equal-size uniform target and use the exact assignment.  Raises when no
    deterministic map can realize the optimal cost (mass of one sample atom
    would have to split across target atoms).
    """
    pts = np.asarray(sample, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n, d = pts.shape
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if len(theta) != n:
        raise ValueError("one auxiliary uniform per sample point required")
    if d != target.dimension:
        raise ValueError("dimension mismatch between sample and target")

    if d == 1:
        order = np.lexsort((theta, pts[:, 0]))
        t_order = np.argsort(target.support[:, 0], kind="stable")
        t_support = target.support[t_order, 0]
        t_weights = target.weights[t_order]
        coupled = np.zeros(n)
        share = 1.0 / n
        j = 0
        rem = t_weights[0]
        tol = 1e-9
        for idx in order:
            while rem <= tol and j + 1 < len(t_weights):
                j += 1
                rem = t_weights[j]
            if rem < share - tol:
                raise ValueError("incompatible supports: sample mass would split across target atoms")
            coupled[idx] = t_support[j]
            rem -= share
        return coupled[:, None]

    if target.size != n or not target.is_uniform:
        raise ValueError("incompatible supports: d > 1 needs an equal-size uniform target")
    diff = pts[:, None, :] - target.support[None, :, :]
    cost_matrix = np.einsum("ijd,ijd->ij", diff, diff)
    rows, cols = linear_sum_assignment(cost_matrix)
    coupled = np.zeros_like(pts)
    coupled[rows] = target.support[cols]
    return coupled
