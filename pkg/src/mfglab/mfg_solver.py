"""Frozen-flow optimal control by backward dynamic programming, the induced
noise-feedback strategy, and the damped fixed point on the measure flow.

The control problem against a frozen measure flow is discretized exactly as
in the constructive existence argument: actions are restricted to a finite
grid inside a ball, time runs on a dyadic grid with 2^k slots of length
h = T 2^{-k}, and the one-slot transition is sub-stepped Euler driven by the
slot's Wiener increments.  Backward induction on a truncated state grid with
clamped multilinear interpolation yields the value table and an argmin
Markov feedback; replaying the same transition recursion against a player's
own noise turns that feedback into a causal noise-feedback control.

The mean field fixed point is a damped Picard iteration: solve the frozen
problem, push particles with common random numbers, mix the resulting
empirical flow into the iterate, thin back to the particle budget, repeat.
Non-convergence is reported, never asserted away.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.interpolate import RegularGridInterpolator

from . import rng as rngmod
from .dynamics import ModelSpec, NoisePath, PathBundle, Strategy
from .measures import DiscreteMeasure, MeasureFlow, empirical_measure, flow_distance
from .relaxed_controls import StepControl

__all__ = [
    "ControlGrid",
    "StateGrid",
    "NoiseRule",
    "ValueGrid",
    "FeedbackPolicy",
    "MfgSolution",
    "MfgSolverParams",
    "build_control_grid",
    "backward_dp",
    "noise_feedback_strategy",
    "NoiseFeedbackStrategy",
    "push_particles",
    "value_monotonicity_study",
    "solve_mfg",
    "control_spacing",
]


# ---------------------------------------------------------------------------
# Grids and quadrature
# ---------------------------------------------------------------------------

def control_spacing(k: int) -> float:
    """Lattice spacing for level k: the largest power of two <= 1/k.

    Powers of two keep the grids nested across levels while the covering
    radius (half the spacing) stays below 1/(2k).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    return 2.0 ** (-math.ceil(math.log2(k))) if k > 1 else 1.0


@dataclass(frozen=True)
class ControlGrid:
    """Finite action grid: points of the action space inside the ball of
    radius ``m_radius``, ordered lexicographically."""

    m_radius: float
    level: int
    atoms: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        atoms = atoms.copy()
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)

    @property
    def size(self) -> int:
        return self.atoms.shape[0]


def _lexsorted(atoms: np.ndarray) -> np.ndarray:
    order = np.lexsort(atoms.T[::-1])
    return atoms[order]


def build_control_grid(model: ModelSpec, m_radius: float, k: int) -> ControlGrid:
    """Action grid of level k inside the ball of radius ``m_radius``.

    For action sets with full-dimensional membership (boxes, the whole
    space) the grid is the lattice of spacing :func:`control_spacing`
    intersected with the set and the ball.  Sets that expose a ``sampler``
    (lower-dimensional supports) get a greedy 1/k-net over a deterministic
    dense sample, grown level by level so grids of increasing k nest.
    If the intersection is empty the grid degenerates to the fallback
    action.
    """
    if m_radius <= 0 or k < 1:
        raise ValueError("m_radius must be positive and k >= 1")
    gs = model.gamma_set
    d2 = model.d2
    if getattr(gs, "sampler", None) is not None:
        atoms = _sampled_net(gs, m_radius, k, d2)
    else:
        delta = control_spacing(k)
        idx_max = int(np.floor(m_radius / delta + 1e-9))
        axes = [np.arange(-idx_max, idx_max + 1) * delta] * d2
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
        keep = np.einsum("nd,nd->n", pts, pts) <= m_radius**2 + 1e-9
        pts = pts[keep]
        if len(pts):
            pts = pts[gs.contains(pts)]
        atoms = pts
    if len(atoms) == 0:
        atoms = model.gamma0[None, :]
    return ControlGrid(float(m_radius), int(k), _lexsorted(np.asarray(atoms, dtype=float)))


def _sampled_net(gs, m_radius: float, k: int, d2: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(987654321, spawn_key=(d2,)))
    sample = np.asarray(gs.sample(rng, 4000), dtype=float)
    if sample.ndim == 1:
        sample = sample[:, None]
    inside = np.sqrt(np.einsum("nd,nd->n", sample, sample)) <= m_radius + 1e-12
    sample = _lexsorted(sample[inside])
    net: list[np.ndarray] = []
    if k > 1:
        net = [a for a in _sampled_net(gs, m_radius, k - 1, d2)]
    radius = 1.0 / k
    for pt in sample:
        if not net:
            net.append(pt)
            continue
        arr = np.asarray(net)
        dmin = np.min(np.sqrt(np.sum((arr - pt[None, :]) ** 2, axis=1)))
        if dmin > radius:
            net.append(pt)
    return np.asarray(net) if net else np.empty((0, d2))


@dataclass(frozen=True)
class StateGrid:
    """Rectangular state grid plus the dyadic time level of the DP."""

    lo: np.ndarray
    hi: np.ndarray
    counts: tuple
    level: int

    def __init__(self, lo, hi, counts, level: int):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        counts = tuple(int(c) for c in np.atleast_1d(counts))
        if lo.shape != hi.shape or len(counts) != len(lo):
            raise ValueError("lo, hi, counts must have matching lengths")
        if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)) or np.any(lo >= hi):
            raise ValueError("state bounds must be finite with lo < hi")
        if any(c < 2 for c in counts):
            raise ValueError("each dimension needs at least two nodes")
        if level < 1:
            raise ValueError("dyadic level must be >= 1")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "level", int(level))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def n_slots(self) -> int:
        return 2**self.level

    @property
    def axes(self) -> tuple:
        return tuple(np.linspace(self.lo[i], self.hi[i], self.counts[i]) for i in range(self.dim))

    @property
    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.counts))

    def slot_length(self, T: float) -> float:
        return T / self.n_slots

    def interpolate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Multilinear interpolation of node values, clamped at the boundary."""
        pts = np.clip(points, self.lo, self.hi)
        if self.dim == 1:
            return np.interp(pts[:, 0], self.axes[0], values)
        itp = RegularGridInterpolator(self.axes, values.reshape(self.counts), method="linear")
        return itp(pts)

    def nearest_node(self, points: np.ndarray) -> np.ndarray:
        """Flattened index of the closest node; ties resolve per dimension
        toward the lower index."""
        pts = np.clip(points, self.lo, self.hi)
        multi = []
        for i in range(self.dim):
            step = (self.hi[i] - self.lo[i]) / (self.counts[i] - 1)
            pos = (pts[:, i] - self.lo[i]) / step
            base = np.floor(pos)
            frac = pos - base
            idx = base.astype(int) + (frac > 0.5)
            multi.append(np.clip(idx, 0, self.counts[i] - 1))
        return np.ravel_multi_index(tuple(multi), self.counts)


@dataclass(frozen=True)
class NoiseRule:
    """How the DP integrates over one slot's noise.

    ``substeps`` Euler sub-steps discretize the slot transition.  For
    Gauss-Hermite the tensor grid spans substeps x noise dimensions; the
    per-dimension node count shrinks as that product grows (the integrand's
    scale shrinks with the sub-step length, so low orders stay accurate)
    and beyond 12 dimensions the rule falls back to fixed-seed Monte Carlo.
    """

    kind: str = "gauss-hermite"
    nodes: int = 7
    draws: int = 64
    substeps: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gauss-hermite", "monte-carlo"):
            raise ValueError(f"unknown quadrature kind: {self.kind}")
        if self.nodes < 2 or self.draws < 2 or self.substeps < 1:
            raise ValueError("nodes, draws >= 2 and substeps >= 1 required")

    def slot_paths(self, d1: int) -> tuple[np.ndarray, np.ndarray]:
        """Standard-normal slot paths (Q, substeps, d1) and weights (Q,)."""
        dims = self.substeps * d1
        if self.kind == "monte-carlo" or dims > 12:
            rng = rngmod.substream(self.seed, rngmod.QUADRATURE)
            z = rng.standard_normal(size=(self.draws, self.substeps, d1))
            return z, np.full(self.draws, 1.0 / self.draws)
        if dims <= 2:
            q = self.nodes
        elif dims <= 4:
            q = min(self.nodes, 3)
        else:
            q = 2
        x, w = hermgauss(q)
        z1 = np.sqrt(2.0) * x
        w1 = w / np.sqrt(np.pi)
        grids = np.meshgrid(*([z1] * dims), indexing="ij")
        z = np.stack([g.reshape(-1) for g in grids], axis=1).reshape(-1, self.substeps, d1)
        wgrids = np.meshgrid(*([w1] * dims), indexing="ij")
        weights = np.prod(np.stack([g.reshape(-1) for g in wgrids], axis=1), axis=1)
        return z, weights


@dataclass(frozen=True)
class ValueGrid:
    """Backward DP value table: ``values[j, node]`` for j = 0 .. 2^k."""

    values: np.ndarray
    sgrid: StateGrid

    def at_states(self, j: int, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        return self.sgrid.interpolate(self.values[j], pts)


@dataclass(frozen=True)
class FeedbackPolicy:
    """Argmin atom index per (time slot, state node), with its grids."""

    indices: np.ndarray
    sgrid: StateGrid
    cgrid: ControlGrid
    substeps: int

    def action(self, j: int, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        nodes = self.sgrid.nearest_node(pts)
        return self.cgrid.atoms[self.indices[j, nodes]]


# ---------------------------------------------------------------------------
# Backward dynamic programming
# ---------------------------------------------------------------------------

def _check_flow_refines(flow: MeasureFlow, T: float, n_slots: int) -> None:
    dyadic = T * np.arange(n_slots + 1) / n_slots
    pos = np.searchsorted(flow.times, dyadic - 1e-9)
    pos = np.minimum(pos, len(flow.times) - 1)
    if np.any(np.abs(flow.times[pos] - dyadic) > 1e-8):
        raise ValueError("flow must be defined on (a refinement of) the dyadic time grid")


def _propagate_slot(
    model: ModelSpec,
    flow: MeasureFlow,
    x0: np.ndarray,
    gamma: np.ndarray,
    t0: float,
    h: float,
    substeps: int,
    z: np.ndarray,
) -> np.ndarray:
    """Sub-stepped Euler through one slot for a batch of start states.

    ``x0`` is (n, d); ``gamma`` is (n, d2); ``z`` is (n, substeps, d1) of
    standard normals.  Returns the end states (n, d).
    """
    dt = h / substeps
    scale = np.sqrt(dt)
    x = x0
    for s in range(substeps):
        t = t0 + s * dt
        nu = flow.at_time(t)
        drift = model.drift(t, x, nu, gamma)
        sig = model.diffusion(t, x, nu)
        if sig.shape[2] == 1:
            noise_term = sig[:, :, 0] * z[:, s]
        else:
            noise_term = np.einsum("nij,nj->ni", sig, z[:, s])
        x = x + drift * dt + noise_term * scale
    return x


def backward_dp(
    model: ModelSpec,
    flow: MeasureFlow,
    cgrid: ControlGrid,
    sgrid: StateGrid,
    rule: NoiseRule = NoiseRule(),
) -> tuple[ValueGrid, FeedbackPolicy]:
    """Backward induction for the frozen-flow discrete control problem.

    ``V[n_slots] = F(., flow(T))`` at the nodes; descending in j,
    ``V[j](x) = min_gamma { f(jh, x, flow(jh), gamma) h + E V[j+1](Phi) }``
    with the slot expectation taken over the noise rule's weighted paths and
    V[j+1] read by clamped multilinear interpolation.  Ties in the argmin go
    to the smallest atom index.
    """
    n_slots = sgrid.n_slots
    T = model.T
    h = sgrid.slot_length(T)
    _check_flow_refines(flow, T, n_slots)
    nodes = sgrid.nodes
    n = len(nodes)
    z, weights = rule.slot_paths(model.d1)
    q = len(weights)

    values = np.zeros((n_slots + 1, n))
    values[n_slots] = model.terminal_cost(nodes, flow.at_time(T))
    if not np.all(np.isfinite(values[n_slots])):
        bad = int(np.argwhere(~np.isfinite(values[n_slots]))[0][0])
        raise FloatingPointError(f"non-finite terminal cost at (j={n_slots}, node={bad})")
    indices = np.zeros((n_slots, n), dtype=np.int64)

    # Start states replicated per quadrature path: (n*q, d).
    x_rep = np.repeat(nodes, q, axis=0)
    z_rep = np.tile(z, (n, 1, 1))
    for j in range(n_slots - 1, -1, -1):
        t0 = j * h
        nu0 = flow.at_time(t0)
        best = np.full(n, np.inf)
        best_idx = np.zeros(n, dtype=np.int64)
        for a in range(cgrid.size):
            gamma_row = cgrid.atoms[a]
            gam = np.broadcast_to(gamma_row, (n * q, len(gamma_row)))
            x_end = _propagate_slot(model, flow, x_rep, gam, t0, h, rule.substeps, z_rep)
            v_next = sgrid.interpolate(values[j + 1], x_end).reshape(n, q)
            expected = v_next @ weights
            run = model.running_cost(t0, nodes, nu0, np.broadcast_to(gamma_row, (n, len(gamma_row))))
            total = run * h + expected
            if not np.all(np.isfinite(total)):
                bad = int(np.argwhere(~np.isfinite(total))[0][0])
                raise FloatingPointError(f"non-finite DP value at (j={j}, node={bad}, atom={a})")
            better = total < best
            best_idx = np.where(better, a, best_idx)
            best = np.where(better, total, best)
        values[j] = best
        indices[j] = best_idx
    return ValueGrid(values, sgrid), FeedbackPolicy(indices, sgrid, cgrid, rule.substeps)


# ---------------------------------------------------------------------------
# Noise-feedback strategy
# ---------------------------------------------------------------------------

class NoiseFeedbackStrategy(Strategy):
    """Causal control built from a Markov feedback by replaying the slot
    transition against the player's own noise.

    The internal state recursion starts at the player's initial state and
    advances with the same sub-stepped Euler transition the DP used; at each
    dyadic slot the feedback is read at the nearest state node.  The
    returned control path is therefore a function of (initial state, noise
    up to the slot start) only, and takes values in the finite action grid.
    """

    narrow = True

    def __init__(self, policy: FeedbackPolicy, model: ModelSpec, flow: MeasureFlow):
        self.policy = policy
        self.model = model
        self.flow = flow
        self.sgrid = policy.sgrid
        self.cgrid = policy.cgrid
        self.substeps = policy.substeps

    @property
    def n_slots(self) -> int:
        return self.sgrid.n_slots

    @property
    def slot_length(self) -> float:
        return self.model.T / self.n_slots

    def _check_times(self, times: np.ndarray) -> None:
        fine = self.n_slots * self.substeps
        expected = np.linspace(0.0, self.model.T, fine + 1)
        if len(times) != fine + 1 or not np.allclose(times, expected, atol=1e-9, rtol=0.0):
            raise ValueError(
                f"noise grid with {len(times) - 1} steps is incompatible with "
                f"{self.n_slots} slots of {self.substeps} sub-steps"
            )

    def _recurse(self, x0: np.ndarray, increments: np.ndarray):
        """Vectorized state recursion; returns (states, slot atom indices).

        ``x0`` is (P, d); ``increments`` is (P, J_fine, d1) of Wiener
        increments on the sub-step grid.
        """
        h = self.slot_length
        dt = h / self.substeps
        scale = np.sqrt(dt)
        p = x0.shape[0]
        states = np.zeros((p, self.n_slots * self.substeps + 1, self.model.d))
        states[:, 0] = x0
        slot_atoms = np.zeros((p, self.n_slots), dtype=np.int64)
        x = x0.copy()
        for j in range(self.n_slots):
            nodes = self.sgrid.nearest_node(x)
            aidx = self.policy.indices[j, nodes]
            slot_atoms[:, j] = aidx
            gamma = self.cgrid.atoms[aidx]
            for s in range(self.substeps):
                t = j * h + s * dt
                nu = self.flow.at_time(t)
                drift = self.model.drift(t, x, nu, gamma)
                sig = self.model.diffusion(t, x, nu)
                w = increments[:, j * self.substeps + s]
                if sig.shape[2] == 1:
                    noise_term = sig[:, :, 0] * w
                else:
                    noise_term = np.einsum("nij,nj->ni", sig, w)
                x = x + drift * dt + noise_term
                states[:, j * self.substeps + s + 1] = x
        return states, slot_atoms

    def control_path(self, times, xi, theta, noise: NoisePath) -> np.ndarray:
        self._check_times(np.asarray(times, dtype=float))
        x0 = np.atleast_1d(np.asarray(xi, dtype=float))[None, :]
        _, slot_atoms = self._recurse(x0, noise.increments[None, ...])
        gammas = self.cgrid.atoms[slot_atoms[0]]
        return np.repeat(gammas, self.substeps, axis=0)

    def control_paths(self, times, xis, thetas, noises) -> np.ndarray:
        self._check_times(np.asarray(times, dtype=float))
        x0 = np.asarray(xis, dtype=float)
        if x0.ndim == 1:
            x0 = x0[:, None]
        inc = np.stack([nz.increments for nz in noises])
        _, slot_atoms = self._recurse(x0, inc)
        gammas = self.cgrid.atoms[slot_atoms]
        return np.repeat(gammas, self.substeps, axis=1)

    def step_control(self, xi, noise: NoisePath) -> StepControl:
        """The dyadic-grid step control realized on one noise path."""
        self._check_times(noise.times)
        x0 = np.atleast_1d(np.asarray(xi, dtype=float))[None, :]
        _, slot_atoms = self._recurse(x0, noise.increments[None, ...])
        dyadic = np.linspace(0.0, self.model.T, self.n_slots + 1)
        return StepControl(dyadic, self.cgrid.atoms[slot_atoms[0]])

    def __call__(self, t: float, xi, noise: NoisePath) -> np.ndarray:
        """Action at time t given the initial state and the noise path."""
        control = self.step_control(xi, noise)
        return control.at_time(min(t, self.model.T - 1e-12))


def noise_feedback_strategy(
    policy: FeedbackPolicy,
    cgrid: ControlGrid,
    sgrid: StateGrid,
    model: ModelSpec,
    flow: MeasureFlow,
) -> NoiseFeedbackStrategy:
    if cgrid is not policy.cgrid or sgrid is not policy.sgrid:
        policy = FeedbackPolicy(policy.indices, sgrid, cgrid, policy.substeps)
    return NoiseFeedbackStrategy(policy, model, flow)


def push_particles(
    strategy: NoiseFeedbackStrategy,
    x0s: np.ndarray,
    increments: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run the strategy recursion for a particle population.

    Returns (states on the sub-step grid, per-slot atom indices, realized
    frozen-flow costs per particle).  The cost accumulates the running cost
    at slot starts against the strategy's frozen flow, matching the DP's
    quadrature of the cost integral.
    """
    model = strategy.model
    flow = strategy.flow
    h = strategy.slot_length
    states, slot_atoms = strategy._recurse(np.asarray(x0s, dtype=float), increments)
    p = states.shape[0]
    costs = np.zeros(p)
    for j in range(strategy.n_slots):
        t = j * h
        x = states[:, j * strategy.substeps]
        gamma = strategy.cgrid.atoms[slot_atoms[:, j]]
        costs += model.running_cost(t, x, flow.at_time(t), gamma) * h
    costs += model.terminal_cost(states[:, -1], flow.at_time(model.T))
    return states, slot_atoms, costs


# ---------------------------------------------------------------------------
# Value monotonicity study
# ---------------------------------------------------------------------------

def value_monotonicity_study(
    model: ModelSpec,
    flow: MeasureFlow,
    sgrid: StateGrid,
    m_list,
    rule: NoiseRule = NoiseRule(),
    probes=None,
    tol: float = 1e-6,
):
    """Initial-time values under truncated action grids of growing radius.

    Action grids are built at level k = M, so they nest along the ladder;
    all rungs share the study's time and state grids, which makes the
    monotone decrease structural (a minimum over a growing action set).
    Returns (table, nonincreasing flag); table rows are (M, values at
    probes...).
    """
    m_values = list(m_list)
    if any(m2 <= m1 for m1, m2 in zip(m_values, m_values[1:])):
        raise ValueError("m_list must be strictly ascending")
    if probes is None:
        axis = sgrid.axes[0]
        lo, hi = axis[0], axis[-1]
        probes = np.linspace(lo + 0.25 * (hi - lo), hi - 0.25 * (hi - lo), 5)[:, None]
    probes = np.asarray(probes, dtype=float)
    if probes.ndim == 1:
        probes = probes[:, None]
    rows = []
    for m in m_values:
        cgrid = build_control_grid(model, float(m), int(max(1, round(m))))
        vgrid, _ = backward_dp(model, flow, cgrid, sgrid, rule)
        rows.append(np.concatenate([[float(m)], vgrid.at_states(0, probes)]))
    table = np.asarray(rows)
    diffs = np.diff(table[:, 1:], axis=0)
    nonincreasing = bool(np.all(diffs <= tol))
    return table, nonincreasing


# ---------------------------------------------------------------------------
# Mean field game fixed point
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MfgSolverParams:
    particles: int = 1024
    damping: float = 0.5
    max_iters: int = 25
    tol: float = 5e-3
    m_radius: float = 3.0
    level: int = 6
    state_lo: float = -3.0
    state_hi: float = 3.0
    state_nodes: int = 161
    rule: NoiseRule = field(default_factory=lambda: NoiseRule(substeps=2))
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping must lie in (0, 1]")
        if self.particles < 2 or self.max_iters < 1 or self.tol <= 0:
            raise ValueError("invalid solver parameters")


@dataclass(frozen=True)
class MfgSolution:
    """Output of the fixed-point solver.

    ``flow`` is the pure empirical flow of the final particle pass, so the
    mean field condition holds exactly on the grid; ``residual`` is the flow
    distance between the last two damped iterates; ``optimality_gap`` is the
    realized Monte Carlo cost of the final policy minus the grid value
    averaged over the initial particles; ``boundary_hit_fraction`` is the
    share of visited particle states outside the state box (the truncation
    error of the DP made observable).
    """

    flow: MeasureFlow
    policy: FeedbackPolicy
    value: ValueGrid
    particles: PathBundle
    residual: float
    optimality_gap: float
    converged: bool
    iterations: list
    strategy: NoiseFeedbackStrategy
    boundary_hit_fraction: float = 0.0


def _resample_atoms(measure: DiscreteMeasure, n: int) -> np.ndarray:
    """Deterministic stratified resampling of a measure to n atoms."""
    order = np.lexsort(measure.support.T[::-1])
    support = measure.support[order]
    cumw = np.cumsum(measure.weights[order])
    levels = (np.arange(n) + 0.5) / n
    idx = np.searchsorted(cumw, levels, side="left")
    return support[np.minimum(idx, len(support) - 1)]


def _thin(measure: DiscreteMeasure, n: int, uniforms: np.ndarray) -> DiscreteMeasure:
    """Stratified resampling to n uniform atoms using given uniforms."""
    order = np.lexsort(measure.support.T[::-1])
    support = measure.support[order]
    cumw = np.cumsum(measure.weights[order])
    levels = (np.arange(n) + uniforms) / n
    idx = np.searchsorted(cumw, levels, side="left")
    return DiscreteMeasure(support[np.minimum(idx, len(support) - 1)], np.full(n, 1.0 / n))


def solve_mfg(model: ModelSpec, init: DiscreteMeasure, params: MfgSolverParams) -> MfgSolution:
    """Damped Picard iteration on the measure flow.

    Per iteration: backward DP against the current flow iterate, push the
    particle population from the (deterministically resampled) initial
    atoms through the noise-feedback strategy with noise fixed across
    iterations, then mix the resulting empirical flow into the iterate and
    thin back to the particle budget with a dedicated substream.
    """
    if init.dimension != model.d:
        raise ValueError("initial measure dimension does not match the model")
    sgrid = StateGrid(
        np.full(model.d, params.state_lo),
        np.full(model.d, params.state_hi),
        (params.state_nodes,) * model.d,
        params.level,
    )
    rule = params.rule
    cgrid = build_control_grid(model, params.m_radius, max(1, params.level))
    n_fine = sgrid.n_slots * rule.substeps
    times_fine = np.linspace(0.0, model.T, n_fine + 1)
    p = params.particles

    x0s = _resample_atoms(init, p)
    increments = np.stack([
        NoisePath.sample(rngmod.substream(params.seed, rngmod.NOISE, i), times_fine, model.d1).increments
        for i in range(p)
    ])
    thetas = np.array([
        float(rngmod.substream(params.seed, rngmod.THETA, i).random()) for i in range(p)
    ])

    flow_iter = MeasureFlow(times_fine, [empirical_measure(x0s)] * (n_fine + 1))
    history = []
    converged = False
    residual = float("inf")
    vgrid = policy = strategy = states = costs = slot_atoms = None
    for it in range(params.max_iters):
        vgrid, policy = backward_dp(model, flow_iter, cgrid, sgrid, rule)
        strategy = NoiseFeedbackStrategy(policy, model, flow_iter)
        states, slot_atoms, costs = push_particles(strategy, x0s, increments)
        if not np.all(np.isfinite(states)):
            raise FloatingPointError("fixed-point iteration diverged to non-finite states")
        empirical = [empirical_measure(states[:, j]) for j in range(n_fine + 1)]
        nu_flow = MeasureFlow(times_fine, empirical)
        lam = params.damping
        uniforms = rngmod.substream(params.seed, rngmod.THINNING, it).random(size=(n_fine + 1, p))
        mixed = []
        for j in range(n_fine + 1):
            old = flow_iter[j]
            new = empirical[j]
            support = np.vstack([old.support, new.support])
            weights = np.concatenate([(1.0 - lam) * old.weights, lam * new.weights])
            mixed.append(_thin(DiscreteMeasure(support, weights), p, uniforms[j]))
        new_iter = MeasureFlow(times_fine, mixed)
        residual = flow_distance(new_iter, flow_iter)
        gap = float(np.mean(costs) - np.mean(vgrid.at_states(0, x0s)))
        history.append({"iteration": it, "residual": residual, "optimality_gap": gap})
        flow_iter = new_iter
        if residual <= params.tol:
            converged = True
            break

    final_flow = MeasureFlow(times_fine, [empirical_measure(states[:, j]) for j in range(n_fine + 1)])
    outside = np.any((states < sgrid.lo) | (states > sgrid.hi), axis=2)
    boundary_fraction = float(outside.mean())
    gammas = strategy.cgrid.atoms[np.repeat(slot_atoms, rule.substeps, axis=1)]
    bundle = PathBundle(
        times=times_fine,
        states=states,
        controls=gammas,
        noise_increments=increments,
        initials=x0s,
        thetas=thetas,
        flow=final_flow,
        seed_key=(params.seed,),
    )
    gap = float(np.mean(costs) - np.mean(vgrid.at_states(0, x0s)))
    return MfgSolution(
        flow=final_flow,
        policy=policy,
        value=vgrid,
        particles=bundle,
        residual=float(residual),
        optimality_gap=gap,
        converged=converged,
        iterations=history,
        strategy=strategy,
        boundary_hit_fraction=boundary_fraction,
    )
