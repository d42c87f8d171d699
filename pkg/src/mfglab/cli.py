"""Command-line experiment runner.

One subcommand per study.  Every run writes CSV tables with fixed column
orders, a JSON-lines event log, a manifest (config echo, seed, version,
wall clock), and matplotlib figures, all into the output directory.  Exit
status: 0 on success, 2 on configuration errors, 3 on numeric failures.
Identical config and seed produce byte-identical CSVs regardless of the
--threads flag, which is accepted for interface compatibility and recorded
but never changes results.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import figures
from . import rng as rngmod
from .benchmarks import (
    OracleError,
    bounded_initial_measure,
    bounded_model,
    lq_initial_measure,
    lq_model,
    lq_oracle,
)
from .config import ConfigError, ExperimentConfig, STUDIES, load_config
from .dynamics import (
    ConstantControl,
    NonFiniteStateError,
    moment_certificate,
    simulate_n_player,
    validate_assumptions,
)
from .measures import MeasureFlow, empirical_measure, wasserstein2
from .mfg_solver import (
    MfgSolverParams,
    NoiseFeedbackStrategy,
    StateGrid,
    backward_dp,
    build_control_grid,
    solve_mfg,
    value_monotonicity_study,
)
from .nash import (
    StrategyProfile,
    condition_statistics,
    deviation_gap,
    evaluate_costs,
    iid_profile,
    occupation_measure,
    tightness_diagnostic,
)

FMT = "%.17g"


def _jsonify(obj):
    if isinstance(obj, (np.integer, np.floating, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


class StudyLog:
    """JSON-lines event log plus the artifact manifest."""

    def __init__(self, out_dir: Path, config: ExperimentConfig, study: str):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.study = study
        self.started = time.time()
        self.artifacts: list[str] = []
        self._events_path = self.out_dir / "events.jsonl"
        self._events_path.write_text("")
        self.event("study_started", {"study": study, "seed": config.seed})

    def event(self, name: str, payload: dict, level: str = "info") -> None:
        record = {"ts": time.time(), "level": level, "event": name, "payload": payload}
        with self._events_path.open("a") as fh:
            fh.write(json.dumps(record, sort_keys=True, default=_jsonify) + "\n")

    def artifact(self, path: Path) -> Path:
        rel = str(Path(path).relative_to(self.out_dir))
        self.artifacts.append(rel)
        self.event("artifact_written", {"path": rel})
        return path

    def write_rows(self, name: str, header: list, rows: list) -> Path:
        """CSV with a fixed column order and deterministic float formatting."""
        path = self.out_dir / name
        with path.open("w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                cells = []
                for value in row:
                    if isinstance(value, float):
                        cells.append(FMT % value)
                    else:
                        cells.append(str(value))
                fh.write(",".join(cells) + "\n")
        return self.artifact(path)

    def write_jsonl(self, name: str, records: list) -> Path:
        path = self.out_dir / name
        with path.open("w") as fh:
            for record in records:
                fh.write(json.dumps(record, sort_keys=True, default=_jsonify) + "\n")
        return self.artifact(path)

    def finish(self, extra: dict = None) -> None:
        manifest = {
            "study": self.study,
            "seed": self.config.seed,
            "version": __version__,
            "config": self.config.echo(),
            "config_digest": self.config.digest(),
            "wall_clock_s": time.time() - self.started,
            "artifacts": sorted(self.artifacts),
        }
        if extra:
            manifest.update(extra)
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonify))
        self.event("study_finished", {"wall_clock_s": manifest["wall_clock_s"]})


# ---------------------------------------------------------------------------
# Model wiring
# ---------------------------------------------------------------------------

def build_model(config: ExperimentConfig):
    """Instantiate the configured benchmark; returns (model, init_measure_fn,
    oracle-or-None)."""
    if config.benchmark == "lq":
        model = lq_model(config.lq)
        oracle = lq_oracle(config.lq)
        return model, (lambda n: lq_initial_measure(config.lq, n)), oracle
    model = bounded_model()
    return model, bounded_initial_measure, None


def solver_params(config: ExperimentConfig) -> MfgSolverParams:
    return MfgSolverParams(
        particles=config.particles,
        damping=config.damping,
        max_iters=config.max_iters,
        tol=config.tol,
        m_radius=config.control_radius,
        level=config.level,
        state_lo=config.state_lo,
        state_hi=config.state_hi,
        state_nodes=config.state_nodes,
        rule=config.noise_rule(),
        seed=config.seed,
    )


def _flow_rows(flow: MeasureFlow):
    rows = []
    for t, measure in zip(flow.times, flow.measures):
        for a in range(measure.size):
            rows.append([float(t), a, float(measure.weights[a]), *map(float, measure.support[a])])
    return rows


def _flow_header(dim: int):
    return ["t", "atom", "weight"] + [f"x{i + 1}" for i in range(dim)]


def _write_solution(log: StudyLog, solution, model, oracle=None):
    log.write_rows("flow.csv", _flow_header(model.d), _flow_rows(solution.flow))
    sgrid = solution.value.sgrid
    nodes = sgrid.nodes
    h = sgrid.slot_length(model.T)
    value_rows = []
    for j in range(solution.value.values.shape[0]):
        for nidx in range(len(nodes)):
            value_rows.append([j, j * h, *map(float, nodes[nidx]), float(solution.value.values[j, nidx])])
    log.write_rows(
        "value.csv", ["j", "t"] + [f"x{i + 1}" for i in range(model.d)] + ["value"], value_rows
    )
    policy_rows = []
    atoms = solution.policy.cgrid.atoms
    for j in range(solution.policy.indices.shape[0]):
        for nidx in range(len(nodes)):
            aidx = int(solution.policy.indices[j, nidx])
            policy_rows.append(
                [j, j * h, *map(float, nodes[nidx]), aidx, *map(float, atoms[aidx])]
            )
    log.write_rows(
        "policy.csv",
        ["j", "t"] + [f"x{i + 1}" for i in range(model.d)] + ["atom_index"] + [f"gamma{i + 1}" for i in range(model.d2)],
        policy_rows,
    )
    log.write_jsonl("iterations.jsonl", solution.iterations)
    means = solution.flow.means()[:, 0]
    oracle_means = oracle.mean_at(solution.flow.times) if oracle is not None else None
    log.artifact(figures.save_flow_mean(log.out_dir / "flow_mean.png", solution.flow.times, means, oracle_means))
    axis = sgrid.axes[0]
    oracle_values = oracle.value(0.0, axis) if oracle is not None else None
    log.artifact(
        figures.save_value_slice(log.out_dir / "value_initial.png", axis, solution.value.values[0], oracle_values)
    )
    log.artifact(
        figures.save_residual_history(
            log.out_dir / "residuals.png", [h["residual"] for h in solution.iterations]
        )
    )


# ---------------------------------------------------------------------------
# Studies
# ---------------------------------------------------------------------------

def study_solve_mfg(config: ExperimentConfig, log: StudyLog) -> None:
    model, init_fn, oracle = build_model(config)
    init = init_fn(config.particles)
    if init.size <= 64:
        log.event("initial_measure", init.to_payload())
    else:
        log.event(
            "initial_measure",
            {"atoms": init.size, "mean": init.mean().tolist(), "second_moment": init.second_moment()},
        )
    solution = solve_mfg(model, init, solver_params(config))
    log.event(
        "solver_done",
        {
            "converged": solution.converged,
            "residual": solution.residual,
            "boundary_hit_fraction": solution.boundary_hit_fraction,
        },
    )
    _write_solution(log, solution, model, oracle)
    if oracle is not None:
        oracle_path = log.out_dir / "oracle.csv"
        oracle.to_csv(oracle_path)
        log.artifact(oracle_path)
    log.finish(
        {
            "converged": solution.converged,
            "residual": solution.residual,
            "optimality_gap": solution.optimality_gap,
            "boundary_hit_fraction": solution.boundary_hit_fraction,
        }
    )


def _mfg_strategy(config: ExperimentConfig, model, init_fn):
    solution = solve_mfg(model, init_fn(config.particles), solver_params(config))
    return solution, solution.strategy


def _profile_for(config: ExperimentConfig, model, init_fn):
    """Strategy profile for population studies plus the solution (if any)."""
    if config.control == "fallback":
        return None, StrategyProfile([ConstantControl(model.gamma0)] * config.players)
    solution, psi = _mfg_strategy(config, model, init_fn)
    return solution, iid_profile(psi, config.players)


def _sim_steps(config: ExperimentConfig) -> int:
    return 2**config.level * config.substeps


def study_simulate_nplayer(config: ExperimentConfig, log: StudyLog) -> None:
    model, init_fn, _ = build_model(config)
    solution, profile = _profile_for(config, model, init_fn)
    initials = init_fn(config.players).support
    steps = _sim_steps(config)
    bundle = simulate_n_player(model, profile, initials, config.seed, steps)
    bundle_path = log.out_dir / "paths.csv"
    bundle.to_csv(bundle_path)
    log.artifact(bundle_path)
    log.write_rows("flow.csv", _flow_header(model.d), _flow_rows(bundle.flow))
    cert = moment_certificate(bundle, model)
    log.write_rows(
        "certificate.csv",
        ["bound", "lhs", "rhs", "slack", "pass"],
        [
            [b.name, b.lhs, b.rhs, b.slack, int(b.ok)]
            for b in (cert.per_player, cert.population)
        ],
    )
    report = condition_statistics(bundle, config.delta0)
    g = tightness_diagnostic(occupation_measure(bundle), config.delta0)
    log.write_rows(
        "condition.csv",
        ["metric", "value"],
        [["t_statistic", report.t_statistic], ["delta0", config.delta0], ["tightness_g", g]],
    )
    log.artifact(
        figures.save_state_histogram(log.out_dir / "terminal_states.png", bundle.states[:, -1, 0])
    )
    log.artifact(
        figures.save_flow_mean(log.out_dir / "flow_mean.png", bundle.times, bundle.flow.means()[:, 0])
    )
    log.finish({"moment_certificate_ok": cert.ok, "constant": cert.constant})


def _deviation_candidates(config: ExperimentConfig, model, profile, solution, initials, steps):
    """Candidate deviations: best response to the realized average flow, the
    self-inclusive best response (finite-game coefficient rewrite, LQ only,
    on a finer action grid), and constant controls."""
    reps = config.repetitions
    n = profile.n_players
    pooled_states = None
    times = np.linspace(0.0, model.T, steps + 1)
    for r in range(reps):
        bundle = simulate_n_player(model, profile, initials, rngmod.rep_key(config.seed, r), steps)
        pooled_states = (
            bundle.states if pooled_states is None else np.concatenate([pooled_states, bundle.states])
        )
    realized = MeasureFlow(
        times, [empirical_measure(pooled_states[:, j]) for j in range(steps + 1)]
    )
    sgrid = solution.value.sgrid
    rule = config.noise_rule()
    cgrid = solution.policy.cgrid
    _, br_policy = backward_dp(model, realized, cgrid, sgrid, rule)
    candidates = [NoiseFeedbackStrategy(br_policy, model, realized)]
    labels = ["realized_flow_br"]
    if config.benchmark == "lq":
        from .benchmarks import self_inclusive_lq_params

        model_n = lq_model(self_inclusive_lq_params(config.lq, n))
        fine = build_control_grid(model, config.control_radius, max(64, config.control_level))
        _, si_policy = backward_dp(model_n, solution.strategy.flow, fine, sgrid, rule)
        candidates.append(NoiseFeedbackStrategy(si_policy, model, solution.strategy.flow))
        labels.append("self_inclusive_br")
    atoms = cgrid.atoms
    picks = np.unique(np.linspace(0, len(atoms) - 1, 5).astype(int))
    candidates.extend(ConstantControl(atoms[i]) for i in picks)
    labels.extend(f"constant_{atoms[i][0]:g}" for i in picks)
    return candidates, labels


def study_nash_gap(config: ExperimentConfig, log: StudyLog) -> None:
    model, init_fn, _ = build_model(config)
    solution, profile = _profile_for(config, model, init_fn)
    if solution is None:
        raise ConfigError("nash-gap requires control = mfg-policy")
    initials = init_fn(config.players).support
    steps = _sim_steps(config)
    costs = evaluate_costs(model, profile, initials, config.seed, config.repetitions, steps)
    dt = model.T / steps
    log.write_rows(
        "costs.csv",
        ["player", "cost_mean", "cost_se", "N", "seed", "dt", "R"],
        [
            [i, float(costs.per_player_mean[i]), float(costs.per_player_se[i]), config.players, config.seed, dt, config.repetitions]
            for i in range(config.players)
        ],
    )
    candidates, labels = _deviation_candidates(config, model, profile, solution, initials, steps)
    report = deviation_gap(
        model, profile, 0, candidates, initials, config.seed, steps, config.repetitions,
        antithetic=True,
    )
    log.write_rows(
        "gaps.csv",
        ["candidate", "label", "gap_mean", "gap_se", "N", "seed", "dt", "R"],
        [
            [k, labels[k], float(report.gap_means[k]), float(report.gap_ses[k]), config.players, config.seed, dt, config.repetitions]
            for k in range(len(candidates))
        ],
    )
    log.artifact(
        figures.save_gap_bars(log.out_dir / "gaps.png", labels, report.gap_means, report.gap_ses)
    )
    log.finish({"epsilon_hat": report.epsilon_hat, "best_candidate": labels[report.best_candidate]})


def study_convergence(config: ExperimentConfig, log: StudyLog) -> None:
    model, init_fn, _ = build_model(config)
    solution, psi = _mfg_strategy(config, model, init_fn)
    steps = _sim_steps(config)
    dt = model.T / steps
    rows = []
    eps_by_n = {}
    medians = []
    for n in config.n_list:
        profile = iid_profile(psi, n)
        initials = init_fn(n).support
        candidates, labels = _deviation_candidates(config, model, profile, solution, initials, steps)
        gap = deviation_gap(
            model, profile, 0, candidates, initials, config.seed, steps, config.repetitions,
            antithetic=True,
        )
        eps_by_n[n] = gap
        costs = evaluate_costs(model, profile, initials, config.seed, config.repetitions, steps)
        sups = []
        for r in range(config.repetitions):
            bundle = simulate_n_player(model, profile, initials, rngmod.rep_key(config.seed, r), steps)
            sup = 0.0
            for j in range(0, steps + 1):
                d, _ = wasserstein2(bundle.flow[j], solution.flow[j])
                sup = max(sup, d)
            sups.append(sup)
            report = condition_statistics(bundle, config.delta0, costs)
            g = tightness_diagnostic(occupation_measure(bundle), config.delta0)
            rows.append(
                [
                    n,
                    r,
                    float(sup),
                    float(report.t_statistic),
                    float(g),
                    float(gap.epsilon_hat),
                    float(gap.best_gap_se),
                    float(costs.mean_cost),
                    float(report.istar_cost),
                    float(report.spread),
                    config.seed,
                    dt,
                    config.repetitions,
                ]
            )
        medians.append(float(np.median(sups)))
        log.event("n_done", {"N": n, "median_sup_w2": medians[-1], "epsilon_hat": gap.epsilon_hat})
    log.write_rows(
        "convergence.csv",
        [
            "N",
            "rep",
            "sup_w2",
            "t_statistic",
            "tightness_g",
            "epsilon_hat",
            "epsilon_se",
            "mean_cost",
            "istar_cost",
            "cost_spread",
            "seed",
            "dt",
            "R",
        ],
        rows,
    )
    log.artifact(
        figures.save_convergence_decay(
            log.out_dir / "convergence.png",
            list(config.n_list),
            medians,
            [eps_by_n[n].epsilon_hat for n in config.n_list],
        )
    )
    log.finish(
        {
            "median_sup_w2": dict(zip(map(str, config.n_list), medians)),
            "epsilon_hat": {str(n): eps_by_n[n].epsilon_hat for n in config.n_list},
        }
    )


def study_value_monotonicity(config: ExperimentConfig, log: StudyLog) -> None:
    model, init_fn, oracle = build_model(config)
    rule = config.noise_rule()
    sgrid = StateGrid(
        np.full(model.d, config.state_lo),
        np.full(model.d, config.state_hi),
        (config.state_nodes,) * model.d,
        config.level,
    )
    n_fine = sgrid.n_slots * rule.substeps
    times = np.linspace(0.0, model.T, n_fine + 1)
    if oracle is not None:
        flow = oracle.flow(times)
    else:
        init = init_fn(config.particles)
        flow = MeasureFlow(times, [init] * (n_fine + 1))
    table, nonincreasing = value_monotonicity_study(model, flow, sgrid, config.m_list, rule)
    probes = np.linspace(
        config.state_lo + 0.25 * (config.state_hi - config.state_lo),
        config.state_hi - 0.25 * (config.state_hi - config.state_lo),
        table.shape[1] - 1,
    )
    rows = []
    for row in table:
        for p, x in enumerate(probes):
            rows.append([float(row[0]), p, float(x), float(row[1 + p])])
    log.write_rows("monotonicity.csv", ["M", "probe", "x", "value"], rows)
    log.artifact(figures.save_monotonicity_table(log.out_dir / "monotonicity.png", table))
    log.finish({"nonincreasing": nonincreasing})


def study_diagnostics(config: ExperimentConfig, log: StudyLog) -> None:
    model, init_fn, _ = build_model(config)
    report = validate_assumptions(model, config.seed, n_samples=300)
    log.write_rows(
        "assumptions.csv",
        ["check", "statistic", "bound", "ok"],
        [[c.name, c.statistic, c.bound, int(c.ok)] for c in report.checks],
    )
    solution, profile = _profile_for(config, model, init_fn)
    initials = init_fn(config.players).support
    steps = _sim_steps(config)
    bundle = simulate_n_player(model, profile, initials, config.seed, steps)
    cert = moment_certificate(bundle, model)
    cond = condition_statistics(bundle, config.delta0)
    g = tightness_diagnostic(occupation_measure(bundle), config.delta0)
    log.write_rows(
        "diagnostics.csv",
        ["metric", "value"],
        [
            ["moment_constant", cert.constant],
            ["per_player_lhs", cert.per_player.lhs],
            ["per_player_rhs", cert.per_player.rhs],
            ["population_lhs", cert.population.lhs],
            ["population_rhs", cert.population.rhs],
            ["certificate_ok", float(cert.ok)],
            ["t_statistic", cond.t_statistic],
            ["tightness_g", g],
            ["delta0", config.delta0],
        ],
    )
    log.artifact(
        figures.save_state_histogram(log.out_dir / "terminal_states.png", bundle.states[:, -1, 0])
    )
    log.finish({"assumption_flags": report.flags, "moment_certificate_ok": cert.ok})


_RUNNERS = {
    "solve-mfg": study_solve_mfg,
    "simulate-nplayer": study_simulate_nplayer,
    "nash-gap": study_nash_gap,
    "convergence-study": study_convergence,
    "value-monotonicity": study_value_monotonicity,
    "diagnostics": study_diagnostics,
}


def run(config: ExperimentConfig, out_dir=None) -> int:
    """Execute the configured study; returns the process exit status."""
    out = Path(out_dir) if out_dir is not None else Path(config.directory)
    log = StudyLog(out, config, config.study)
    try:
        _RUNNERS[config.study](config, log)
    except (NonFiniteStateError, FloatingPointError, OracleError) as exc:
        log.event("numeric_failure", {"error": str(exc)}, level="error")
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        log.event("validation_error", {"error": str(exc)}, level="error")
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfglab",
        description="Numerical studies of symmetric N-player games and their mean field limit",
    )
    sub = parser.add_subparsers(dest="study", required=True)
    for study in STUDIES:
        p = sub.add_parser(study, help=f"run the {study} study")
        p.add_argument("--config", type=Path, default=None, help="INI experiment file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument(
            "--threads",
            type=int,
            default=1,
            help="accepted for compatibility; results never depend on it",
        )
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config) if args.config else ExperimentConfig()
        overrides = {"study": args.study}
        if args.seed is not None:
            overrides["seed"] = args.seed
        config = dataclasses.replace(config, **overrides)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    return run(config, args.out)


if __name__ == "__main__":
    sys.exit(main())
