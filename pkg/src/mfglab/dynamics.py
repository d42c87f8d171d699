"""Model specification and Euler-Maruyama simulation of the particle systems.

Two simulators live here.  ``simulate_n_player`` advances the coupled system
in which every player's drift and diffusion read the synchronously frozen
empirical measure of all current states.  ``simulate_frozen_flow`` advances a
single controlled state against an exogenous measure flow, with the drift
averaged over a relaxed control's slot mixture when one is supplied.

Coefficient functions are expected to broadcast over a leading batch axis:
``b(t, x, nu, gamma)`` maps ``x`` of shape (n, d) and ``gamma`` of shape
(n, d2) to (n, d); ``sigma(t, x, nu)`` to (n, d, d1) (a constant (d, d1)
return is broadcast); ``f(t, x, nu, gamma)`` and ``F(x, nu)`` to (n,).
The measure argument is always a :class:`~mfglab.measures.DiscreteMeasure`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import rng as rngmod
from .measures import DiscreteMeasure, MeasureFlow, empirical_measure, wasserstein2
from .relaxed_controls import RelaxedControlPath, StepControl

__all__ = [
    "CompactBox",
    "ClosedSet",
    "real_space",
    "ModelSpec",
    "NoisePath",
    "PathBundle",
    "Strategy",
    "ConstantControl",
    "NarrowStrategy",
    "StateFeedback",
    "NonFiniteStateError",
    "simulate_n_player",
    "simulate_frozen_flow",
    "validate_assumptions",
    "moment_certificate",
    "growth_constant",
]


class NonFiniteStateError(RuntimeError):
    """A simulated state left the finite range; identifies player and step."""


# ---------------------------------------------------------------------------
# Action spaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompactBox:
    """Axis-aligned box of admissible actions (entries may be infinite)."""

    lo: np.ndarray
    hi: np.ndarray

    def __init__(self, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("invalid box bounds")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def is_compact(self) -> bool:
        return bool(np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi)))

    def contains(self, gammas: np.ndarray) -> np.ndarray:
        g = np.asarray(gammas, dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        return np.all((g >= self.lo - 1e-12) & (g <= self.hi + 1e-12), axis=1)

    def sample(self, rng: np.random.Generator, n: int, scale: float = 2.0) -> np.ndarray:
        lo = np.where(np.isfinite(self.lo), self.lo, -scale)
        hi = np.where(np.isfinite(self.hi), self.hi, scale)
        return rng.uniform(lo, hi, size=(n, self.dim))


@dataclass(frozen=True)
class ClosedSet:
    """Closed action set given by a membership predicate plus the coercivity
    constants c0, r0 of the running cost outside the ball of radius r0.

    ``sampler(rng, n)``, when provided, draws points of the set; it is what
    grid construction uses for sets of empty interior (e.g. a circle).
    """

    contains_fn: Callable[[np.ndarray], np.ndarray]
    c0: float
    r0: float
    dim: int = 1
    sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None

    def contains(self, gammas: np.ndarray) -> np.ndarray:
        g = np.asarray(gammas, dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        return np.asarray(self.contains_fn(g), dtype=bool)

    @property
    def is_compact(self) -> bool:
        return False

    def sample(self, rng: np.random.Generator, n: int, scale: float = 2.0) -> np.ndarray:
        if self.sampler is not None:
            return np.asarray(self.sampler(rng, n), dtype=float)
        out = np.empty((0, self.dim))
        width = max(scale, 2.0 * self.r0)
        for _ in range(200):
            cand = rng.normal(scale=width, size=(4 * n, self.dim))
            good = cand[self.contains(cand)]
            out = np.vstack([out, good])
            if len(out) >= n:
                return out[:n]
        raise ValueError("could not sample the action set (membership too sparse)")


def real_space(dim: int, c0: float, r0: float) -> ClosedSet:
    """The whole action space R^{d2} with declared coercivity constants."""
    return ClosedSet(lambda g: np.ones(len(g), dtype=bool), c0=c0, r0=r0, dim=dim)


# ---------------------------------------------------------------------------
# Model specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    """Coefficients and declared constants of one game instance."""

    d: int
    d1: int
    d2: int
    T: float
    b: Callable
    sigma: Callable
    f: Callable
    F: Callable
    K: float
    L: float
    gamma_set: object
    gamma0: np.ndarray
    delta0: float = 0.5
    name: str = "model"

    def __post_init__(self):
        g0 = np.atleast_1d(np.asarray(self.gamma0, dtype=float))
        if len(g0) != self.d2:
            raise ValueError("gamma0 dimension mismatch")
        object.__setattr__(self, "gamma0", g0)
        if not (0.0 < self.delta0 <= min(1.0, self.T)):
            raise ValueError("delta0 must lie in (0, min(1, T)]")

    def drift(self, t: float, x: np.ndarray, nu: DiscreteMeasure, gamma: np.ndarray) -> np.ndarray:
        out = np.asarray(self.b(t, x, nu, gamma), dtype=float)
        return np.broadcast_to(out, x.shape) if out.shape != x.shape else out

    def diffusion(self, t: float, x: np.ndarray, nu: DiscreteMeasure) -> np.ndarray:
        out = np.asarray(self.sigma(t, x, nu), dtype=float)
        target = (x.shape[0], self.d, self.d1)
        if out.shape == target:
            return out
        return np.broadcast_to(out, target)

    def running_cost(self, t: float, x: np.ndarray, nu: DiscreteMeasure, gamma: np.ndarray) -> np.ndarray:
        out = np.asarray(self.f(t, x, nu, gamma), dtype=float)
        return np.broadcast_to(out, (x.shape[0],)) if out.shape != (x.shape[0],) else out

    def terminal_cost(self, x: np.ndarray, nu: DiscreteMeasure) -> np.ndarray:
        out = np.asarray(self.F(x, nu), dtype=float)
        return np.broadcast_to(out, (x.shape[0],)) if out.shape != (x.shape[0],) else out


def growth_constant(model: ModelSpec) -> float:
    """The explicit second-moment bound constant in terms of T and K."""
    T, K = model.T, model.K
    return 12.0 * max(T, 1.0) * (T + 1.0) * max(K, 1.0) ** 2 * np.exp(24.0 * (T + 1.0) * K**2 * T)


# ---------------------------------------------------------------------------
# Noise paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoisePath:
    """Wiener increments on a uniform grid plus the cumulative path."""

    times: np.ndarray
    increments: np.ndarray  # (J, d1)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim == 1:
            inc = inc[:, None]
        if inc.shape[0] != len(t) - 1:
            raise ValueError("one increment per time slot required")
        t = t.copy()
        inc = inc.copy()
        t.setflags(write=False)
        inc.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "increments", inc)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def path(self) -> np.ndarray:
        """W(t_j) with W(0) = 0, shape (J+1, d1)."""
        w = np.zeros((len(self.times), self.increments.shape[1]))
        np.cumsum(self.increments, axis=0, out=w[1:])
        return w

    @classmethod
    def sample(cls, rng: np.random.Generator, times, d1: int) -> "NoisePath":
        t = np.asarray(times, dtype=float).reshape(-1)
        dt = float(t[1] - t[0])
        inc = rng.standard_normal(size=(len(t) - 1, d1)) * np.sqrt(dt)
        return cls(t, inc)


# ---------------------------------------------------------------------------
# Strategies
# ---------------------------------------------------------------------------

class Strategy:
    """Causal control law of one player.

    Narrow strategies depend only on the player's own initial state,
    randomization variable and noise history; their whole control path is a
    function of those primitives and is precomputed before the coupled
    simulation runs.
    """

    narrow: bool = True

    def control_path(self, times: np.ndarray, xi: np.ndarray, theta: float, noise: NoisePath) -> np.ndarray:
        raise NotImplementedError

    def control_paths(self, times, xis, thetas, noises) -> np.ndarray:
        """Batch version; subclasses may vectorize."""
        return np.stack([
            self.control_path(times, xi, th, nz) for xi, th, nz in zip(xis, thetas, noises)
        ])

    def action(self, j: int, t: float, x_own: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ConstantControl(Strategy):
    def __init__(self, gamma):
        self.gamma = np.atleast_1d(np.asarray(gamma, dtype=float))

    def control_path(self, times, xi, theta, noise):
        return np.tile(self.gamma, (len(times) - 1, 1))

    def control_paths(self, times, xis, thetas, noises):
        return np.tile(self.gamma, (len(xis), len(times) - 1, 1))


class NarrowStrategy(Strategy):
    """Narrow strategy given by ``fn(times, xi, theta, noise) -> (J, d2)``."""

    def __init__(self, fn: Callable):
        self.fn = fn

    def control_path(self, times, xi, theta, noise):
        out = np.asarray(self.fn(times, xi, theta, noise), dtype=float)
        return out[:, None] if out.ndim == 1 else out


class StateFeedback(Strategy):
    """Feedback on the player's own current state: ``fn(t, x) -> gamma``.

    Not narrow: through the empirical measure the own state carries
    information about the other players.
    """

    narrow = False

    def __init__(self, fn: Callable):
        self.fn = fn

    def action_batch(self, t: float, x: np.ndarray) -> np.ndarray:
        out = np.asarray(self.fn(t, x), dtype=float)
        return out[:, None] if out.ndim == 1 else out


# ---------------------------------------------------------------------------
# Path bundles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PathBundle:
    """Complete record of one simulated population."""

    times: np.ndarray            # (J+1,)
    states: np.ndarray           # (N, J+1, d)
    controls: np.ndarray         # (N, J, d2)
    noise_increments: np.ndarray  # (N, J, d1)
    initials: np.ndarray         # (N, d)
    thetas: np.ndarray           # (N,)
    flow: MeasureFlow
    seed_key: tuple = ()

    @property
    def n_players(self) -> int:
        return self.states.shape[0]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def control(self, i: int) -> StepControl:
        return StepControl(self.times, self.controls[i])

    def noise(self, i: int) -> NoisePath:
        return NoisePath(self.times, self.noise_increments[i])

    def to_csv(self, path) -> None:
        """Long format: player, t, state, control, noise path components."""
        n, jp1, d = self.states.shape
        d2 = self.controls.shape[2]
        d1 = self.noise_increments.shape[2]
        rows = []
        for i in range(n):
            w = self.noise(i).path
            for j in range(jp1):
                gamma = self.controls[i, min(j, jp1 - 2)]
                rows.append(
                    [i, self.times[j], *self.states[i, j], *gamma, *w[j]]
                )
        header = (
            "player,t,"
            + ",".join(f"x{k + 1}" for k in range(d))
            + ","
            + ",".join(f"gamma{k + 1}" for k in range(d2))
            + ","
            + ",".join(f"w{k + 1}" for k in range(d1))
        )
        np.savetxt(path, np.asarray(rows), delimiter=",", header=header, comments="", fmt="%.17g")


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def _draw_primitives(seed_key, n_players: int, times: np.ndarray, d1: int, flip_noise: bool = False):
    sign = -1.0 if flip_noise else 1.0
    noises = [
        NoisePath(times, sign * NoisePath.sample(rngmod.substream(seed_key, rngmod.NOISE, i), times, d1).increments)
        for i in range(n_players)
    ]
    thetas = np.array([
        float(rngmod.substream(seed_key, rngmod.THETA, i).random()) for i in range(n_players)
    ])
    return noises, thetas


def simulate_n_player(
    model: ModelSpec,
    profile,
    initials,
    seed,
    steps: int,
    flip_noise: bool = False,
) -> PathBundle:
    """Euler-Maruyama for the coupled system under a strategy profile.

    The empirical measure entering every player's step-j update is frozen
    before any state is advanced.  Per-player noise comes from dedicated
    substreams of ``seed``, so the draws do not depend on evaluation order
    and coincide across profiles simulated under the same seed.
    ``flip_noise`` negates every Wiener increment (antithetic companion of
    the same seed).
    """
    strategies = list(getattr(profile, "strategies", profile))
    initials = np.asarray(initials, dtype=float)
    if initials.ndim == 1:
        initials = initials[:, None]
    n = len(strategies)
    if initials.shape[0] != n:
        raise ValueError("one initial state per strategy required")
    times = np.linspace(0.0, model.T, steps + 1)
    dt = float(times[1] - times[0])
    noises, thetas = _draw_primitives(seed, n, times, model.d1, flip_noise)

    controls = np.zeros((n, steps, model.d2))
    feedback_players: list[int] = []
    by_strategy: dict[int, list[int]] = {}
    for i, strat in enumerate(strategies):
        if isinstance(strat, StateFeedback) or not strat.narrow:
            feedback_players.append(i)
        else:
            by_strategy.setdefault(id(strat), []).append(i)
    for ids in by_strategy.values():
        strat = strategies[ids[0]]
        paths = strat.control_paths(
            times,
            initials[ids],
            thetas[ids],
            [noises[i] for i in ids],
        )
        controls[ids] = paths

    states = np.zeros((n, steps + 1, model.d))
    states[:, 0] = initials
    x = initials.copy()
    measures = []
    inc = np.stack([nz.increments for nz in noises])  # (N, J, d1)
    for j in range(steps):
        t = times[j]
        nu = empirical_measure(x)
        measures.append(nu)
        for i in feedback_players:
            controls[i, j] = strategies[i].action_batch(t, x[i:i + 1])[0]
        gamma = controls[:, j]
        drift = model.drift(t, x, nu, gamma)
        sig = model.diffusion(t, x, nu)
        x = x + drift * dt + np.einsum("nij,nj->ni", sig, inc[:, j])
        if not np.all(np.isfinite(x)):
            bad = np.argwhere(~np.isfinite(x))[0]
            raise NonFiniteStateError(f"non-finite state for player {int(bad[0])} at step {j + 1}")
        states[:, j + 1] = x
    measures.append(empirical_measure(x))
    flow = MeasureFlow(times, measures)
    key = seed if isinstance(seed, tuple) else (int(seed),)
    return PathBundle(times, states, controls, inc, initials, thetas, flow, seed_key=key)


def simulate_frozen_flow(
    model: ModelSpec,
    flow: MeasureFlow,
    control,
    x0,
    noise: NoisePath,
) -> np.ndarray:
    """Single controlled state against an exogenous measure flow.

    With a relaxed control the drift is the slot mixture's average drift;
    the diffusion never depends on the action.  Returns states of shape
    (J+1, d) on the shared grid.
    """
    if len(flow.times) != len(noise.times) or not np.allclose(flow.times, noise.times, atol=1e-10, rtol=0.0):
        raise ValueError("flow and noise must share the time grid")
    relaxed = isinstance(control, RelaxedControlPath)
    if relaxed and (control.n_slots != len(noise.times) - 1 or not np.allclose(control.times, noise.times, atol=1e-10, rtol=0.0)):
        raise ValueError("relaxed control must live on the simulation grid")
    times = noise.times
    steps = len(times) - 1
    dt = float(times[1] - times[0])
    x = np.atleast_1d(np.asarray(x0, dtype=float))[None, :]
    out = np.zeros((steps + 1, model.d))
    out[0] = x[0]
    for j in range(steps):
        t = float(times[j])
        nu = flow[j]
        if relaxed:
            drift = control.slot_mean_drift(j, lambda g: model.drift(t, np.repeat(x, len(g), axis=0), nu, g))
            drift = drift[None, :] if drift.ndim == 1 else drift
        else:
            gamma = control.at_time(t)[None, :]
            drift = model.drift(t, x, nu, gamma)
        sig = model.diffusion(t, x, nu)
        x = x + drift * dt + np.einsum("nij,j->ni", sig, noise.increments[j])
        if not np.all(np.isfinite(x)):
            raise NonFiniteStateError(f"non-finite state at step {j + 1}")
        out[j + 1] = x[0]
    return out


# ---------------------------------------------------------------------------
# Assumption checks
# ---------------------------------------------------------------------------

@dataclass
class AssumptionCheck:
    name: str
    statistic: float
    bound: float
    ok: bool


@dataclass
class AssumptionReport:
    checks: list
    n_samples: int

    @property
    def flags(self) -> list:
        return [c.name for c in self.checks if not c.ok]

    @property
    def ok(self) -> bool:
        return not self.flags

    def __str__(self) -> str:
        lines = [f"assumption report ({self.n_samples} samples)"]
        for c in self.checks:
            status = "ok " if c.ok else "FLAG"
            lines.append(f"  [{status}] {c.name}: stat={c.statistic:.6g} bound={c.bound:.6g}")
        return "\n".join(lines)


def _random_measure(rng: np.random.Generator, d: int) -> DiscreteMeasure:
    m = int(rng.integers(1, 6))
    pts = rng.normal(scale=1.5, size=(m, d))
    w = rng.random(m) + 0.1
    return DiscreteMeasure(pts, w / w.sum())


def validate_assumptions(model: ModelSpec, sampler, n_samples: int = 200) -> AssumptionReport:
    """Sampled growth, Lipschitz, nonnegativity and coercivity checks.

    Reports empirical statistics against the declared constants; a flag means
    the declared bound was violated on some sample.  Passing never proves
    compliance.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = sampler if isinstance(sampler, np.random.Generator) else rngmod.substream(sampler, rngmod.VALIDATE)
    checks = []
    tol = 1e-9

    ratio_b = ratio_sig = 0.0
    lip_b = lip_sig = lip_cost = 0.0
    ratio_cost = 0.0
    min_f = min_F = np.inf
    coercivity_min = np.inf

    gammas = model.gamma_set.sample(rng, n_samples)
    for s in range(n_samples):
        t = float(rng.uniform(0.0, model.T))
        x = rng.normal(scale=2.0, size=(1, model.d))
        x2 = rng.normal(scale=2.0, size=(1, model.d))
        nu = _random_measure(rng, model.d)
        nu2 = _random_measure(rng, model.d)
        g = gammas[s:s + 1]
        root_m2 = np.sqrt(nu.second_moment())
        root_m2b = np.sqrt(nu2.second_moment())
        d2_nu = wasserstein2(nu, nu2)[0]

        bv = model.drift(t, x, nu, g)[0]
        bv2 = model.drift(t, x2, nu2, g)[0]
        sg = model.diffusion(t, x, nu)[0]
        sg2 = model.diffusion(t, x2, nu2)[0]
        fv = float(model.running_cost(t, x, nu, g)[0])
        fv2 = float(model.running_cost(t, x2, nu2, g)[0])
        Fv = float(model.terminal_cost(x, nu)[0])
        Fv2 = float(model.terminal_cost(x2, nu2)[0])

        nx, nx2, ng = np.linalg.norm(x), np.linalg.norm(x2), np.linalg.norm(g)
        ratio_b = max(ratio_b, np.linalg.norm(bv) / (1.0 + nx + ng + root_m2))
        ratio_sig = max(ratio_sig, np.linalg.norm(sg) / (1.0 + nx + root_m2))
        gap = np.linalg.norm(x - x2) + d2_nu
        if gap > 1e-8:
            lip_b = max(lip_b, np.linalg.norm(bv - bv2) / gap)
            lip_sig = max(lip_sig, np.linalg.norm(sg - sg2) / gap)
            envelope = 1.0 + nx + nx2 + root_m2 + root_m2b
            lip_cost = max(lip_cost, (abs(fv - fv2) + abs(Fv - Fv2)) / (gap * envelope))
        ratio_cost = max(
            ratio_cost,
            max(abs(fv), abs(Fv)) / (1.0 + nx**2 + ng**2 + nu.second_moment()),
        )
        min_f = min(min_f, fv)
        min_F = min(min_F, Fv)

    checks.append(AssumptionCheck("growth_b", ratio_b, model.K, ratio_b <= model.K + tol))
    checks.append(AssumptionCheck("growth_sigma", ratio_sig, model.K, ratio_sig <= model.K + tol))
    checks.append(AssumptionCheck("lipschitz_b", lip_b, model.L, lip_b <= model.L + tol))
    checks.append(AssumptionCheck("lipschitz_sigma", lip_sig, model.L, lip_sig <= model.L + tol))
    checks.append(AssumptionCheck("lipschitz_costs", lip_cost, model.L, lip_cost <= model.L + tol))
    checks.append(AssumptionCheck("growth_costs", ratio_cost, model.K, ratio_cost <= model.K + tol))
    checks.append(AssumptionCheck("nonneg_f", min_f, 0.0, min_f >= -tol))
    checks.append(AssumptionCheck("nonneg_F", min_F, 0.0, min_F >= -tol))

    gs = model.gamma_set
    if not getattr(gs, "is_compact", False):
        r0 = float(gs.r0)
        for _ in range(n_samples):
            direction = rng.normal(size=model.d2)
            direction /= max(np.linalg.norm(direction), 1e-12)
            radius = float(rng.uniform(r0 * (1.0 + 1e-6), 3.0 * r0 + 1.0))
            g = (radius * direction)[None, :]
            if not bool(gs.contains(g)[0]):
                continue
            t = float(rng.uniform(0.0, model.T))
            x = rng.normal(scale=2.0, size=(1, model.d))
            nu = _random_measure(rng, model.d)
            fv = float(model.running_cost(t, x, nu, g)[0])
            coercivity_min = min(coercivity_min, fv / radius**2)
        if np.isfinite(coercivity_min):
            checks.append(
                AssumptionCheck("coercivity", coercivity_min, gs.c0, coercivity_min >= gs.c0 - tol)
            )
    return AssumptionReport(checks, n_samples)


# ---------------------------------------------------------------------------
# Moment certificate
# ---------------------------------------------------------------------------

@dataclass
class MomentBound:
    name: str
    lhs: float
    rhs: float

    @property
    def ok(self) -> bool:
        return self.lhs <= self.rhs

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


@dataclass
class MomentCertificate:
    constant: float
    per_player: MomentBound
    population: MomentBound

    @property
    def ok(self) -> bool:
        return self.per_player.ok and self.population.ok

    def __str__(self) -> str:
        rows = []
        for b in (self.per_player, self.population):
            status = "pass" if b.ok else "FAIL"
            rows.append(f"  [{status}] {b.name}: lhs={b.lhs:.6g} rhs={b.rhs:.6g} slack={b.slack:.6g}")
        return f"moment certificate (C={self.constant:.6g})\n" + "\n".join(rows)


def moment_certificate(bundle: PathBundle, model: ModelSpec) -> MomentCertificate:
    """Monte Carlo check of the second-moment bounds with the explicit
    constant 12(T v 1)(T+1)(K v 1)^2 exp(24(T+1)K^2 T)."""
    C = growth_constant(model)
    dt = bundle.dt
    sq = np.einsum("njd,njd->nj", bundle.states, bundle.states)  # |X_i(t_j)|^2
    pop_sq = sq.mean(axis=0)                                     # (1/N) sum |X_j|^2 per time
    ctrl_sq = np.einsum("njd,njd->nj", bundle.controls, bundle.controls)
    xi_sq = np.einsum("nd,nd->n", bundle.initials, bundle.initials)

    # Per-player bound: worst player of sup_t |X_i(t)|^2 vs its own right side.
    lhs_i = sq.max(axis=1)
    ctrl_integral = ctrl_sq.sum(axis=1) * dt
    pop_integral = float(pop_sq[:-1].sum() * dt)
    rhs_i = C * (1.0 + xi_sq + pop_integral + ctrl_integral)
    worst = int(np.argmax(lhs_i - rhs_i))
    per_player = MomentBound("per_player_second_moment", float(lhs_i[worst]), float(rhs_i[worst]))

    lhs_pop = float(pop_sq.max())
    rhs_pop = C * (1.0 + float(xi_sq.mean()) + float(ctrl_integral.mean()))
    population = MomentBound("population_second_moment", lhs_pop, rhs_pop)
    return MomentCertificate(C, per_player, population)
