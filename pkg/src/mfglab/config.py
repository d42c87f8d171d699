"""Experiment configuration: a strict INI schema with typed sections.

Unknown sections or keys are rejected by name, and every numeric field is
range-checked, so a config either parses into a valid experiment or fails
with an actionable message before any computation starts.
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .benchmarks import LqParams
from .mfg_solver import NoiseRule

__all__ = ["ExperimentConfig", "ConfigError", "load_config", "STUDIES"]

STUDIES = (
    "solve-mfg",
    "simulate-nplayer",
    "nash-gap",
    "convergence-study",
    "value-monotonicity",
    "diagnostics",
)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    # [model]
    benchmark: str = "lq"
    lq: LqParams = field(default_factory=LqParams)
    # [discretization]
    level: int = 6
    state_lo: float = -3.0
    state_hi: float = 3.0
    state_nodes: int = 161
    substeps: int = 2
    quadrature: str = "gauss-hermite"
    gh_nodes: int = 7
    mc_draws: int = 64
    control_radius: float = 3.0
    control_level: int = 6
    # [solver]
    particles: int = 1024
    damping: float = 0.5
    tol: float = 4e-3
    max_iters: int = 25
    # [study]
    study: str = "solve-mfg"
    n_list: tuple = (8, 32, 128, 512)
    repetitions: int = 8
    delta0: float = 0.5
    players: int = 64
    control: str = "mfg-policy"
    m_list: tuple = (1.0, 2.0, 4.0, 8.0)
    seed: int = 1234
    # [output]
    directory: str = "out"

    def noise_rule(self) -> NoiseRule:
        return NoiseRule(
            kind=self.quadrature,
            nodes=self.gh_nodes,
            draws=self.mc_draws,
            substeps=self.substeps,
            seed=self.seed,
        )

    def echo(self) -> dict:
        data = asdict(self)
        data["lq"] = asdict(self.lq)
        return data

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.echo(), sort_keys=True).encode()).hexdigest()[:16]


_LQ_KEYS = {f.lower() for f in ("a", "abar", "c", "s", "q", "kappa", "qT", "kappaT", "m0_mean", "m0_var", "T")}

_SCHEMA = {
    "model": {"benchmark"} | _LQ_KEYS,
    "discretization": {
        "level",
        "state_lo",
        "state_hi",
        "state_nodes",
        "substeps",
        "quadrature",
        "gh_nodes",
        "mc_draws",
        "control_radius",
        "control_level",
    },
    "solver": {"particles", "damping", "tol", "max_iters"},
    "study": {
        "name",
        "n_list",
        "repetitions",
        "delta0",
        "players",
        "control",
        "m_list",
        "seed",
    },
    "output": {"directory"},
}

_LQ_FIELD_BY_KEY = {
    "a": "a",
    "abar": "abar",
    "c": "c",
    "s": "s",
    "q": "q",
    "kappat": "kappaT",
    "kappa": "kappa",
    "qt": "qT",
    "m0_mean": "m0_mean",
    "m0_var": "m0_var",
    "t": "T",
}


def _parse_number(section: str, key: str, raw: str, cast):
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: expected {cast.__name__}") from exc


def _parse_list(section: str, key: str, raw: str, cast):
    try:
        return tuple(cast(part.strip()) for part in raw.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: expected comma-separated {cast.__name__}s") from exc


def load_config(path) -> ExperimentConfig:
    """Parse and validate an INI experiment file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    text = Path(path).read_text()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser[section]:
            if key.lower() not in {k.lower() for k in _SCHEMA[section]}:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")

    values: dict = {}
    lq_kwargs: dict = {}

    if parser.has_section("model"):
        sec = parser["model"]
        if "benchmark" in sec:
            bench = sec["benchmark"].strip().lower()
            if bench not in ("lq", "bounded"):
                raise ConfigError(f"[model] benchmark = {bench!r}: expected 'lq' or 'bounded'")
            values["benchmark"] = bench
        for key in sec:
            lk = key.lower()
            if lk in _LQ_FIELD_BY_KEY:
                lq_kwargs[_LQ_FIELD_BY_KEY[lk]] = _parse_number("model", key, sec[key], float)
    if lq_kwargs:
        try:
            values["lq"] = LqParams(**lq_kwargs)
        except ValueError as exc:
            raise ConfigError(f"[model] invalid LQ parameters: {exc}") from exc

    if parser.has_section("discretization"):
        sec = parser["discretization"]
        ints = {"level": (1, 10), "state_nodes": (2, 4096), "substeps": (1, 16), "gh_nodes": (2, 21), "mc_draws": (2, 100000), "control_level": (1, 64)}
        floats = {"state_lo": (-1e6, 1e6), "state_hi": (-1e6, 1e6), "control_radius": (1e-9, 1e6)}
        for key, (lo, hi) in ints.items():
            if key in sec:
                val = _parse_number("discretization", key, sec[key], int)
                if not lo <= val <= hi:
                    raise ConfigError(f"[discretization] {key} = {val}: outside [{lo}, {hi}]")
                values[key] = val
        for key, (lo, hi) in floats.items():
            if key in sec:
                val = _parse_number("discretization", key, sec[key], float)
                if not lo <= val <= hi:
                    raise ConfigError(f"[discretization] {key} = {val}: outside [{lo}, {hi}]")
                values[key] = val
        if "quadrature" in sec:
            quad = sec["quadrature"].strip().lower()
            if quad not in ("gauss-hermite", "monte-carlo"):
                raise ConfigError(f"[discretization] quadrature = {quad!r}")
            values["quadrature"] = quad
        if values.get("state_lo", -3.0) >= values.get("state_hi", 3.0):
            raise ConfigError("[discretization] state_lo must be below state_hi")

    if parser.has_section("solver"):
        sec = parser["solver"]
        if "particles" in sec:
            val = _parse_number("solver", "particles", sec["particles"], int)
            if not 2 <= val <= 1_000_000:
                raise ConfigError(f"[solver] particles = {val}: outside [2, 1000000]")
            values["particles"] = val
        if "damping" in sec:
            val = _parse_number("solver", "damping", sec["damping"], float)
            if not 0.0 < val <= 1.0:
                raise ConfigError(f"[solver] damping = {val}: outside (0, 1]")
            values["damping"] = val
        if "tol" in sec:
            val = _parse_number("solver", "tol", sec["tol"], float)
            if val <= 0:
                raise ConfigError(f"[solver] tol = {val}: must be positive")
            values["tol"] = val
        if "max_iters" in sec:
            val = _parse_number("solver", "max_iters", sec["max_iters"], int)
            if not 1 <= val <= 10000:
                raise ConfigError(f"[solver] max_iters = {val}: outside [1, 10000]")
            values["max_iters"] = val

    if parser.has_section("study"):
        sec = parser["study"]
        if "name" in sec:
            name = sec["name"].strip().lower()
            if name not in STUDIES:
                raise ConfigError(f"[study] name = {name!r}: expected one of {', '.join(STUDIES)}")
            values["study"] = name
        if "n_list" in sec:
            ns = _parse_list("study", "n_list", sec["n_list"], int)
            if not ns or any(n < 1 for n in ns):
                raise ConfigError("[study] n_list must hold positive integers")
            values["n_list"] = ns
        if "m_list" in sec:
            ms = _parse_list("study", "m_list", sec["m_list"], float)
            if not ms or any(m <= 0 for m in ms) or any(b <= a for a, b in zip(ms, ms[1:])):
                raise ConfigError("[study] m_list must be positive and strictly ascending")
            values["m_list"] = ms
        if "repetitions" in sec:
            val = _parse_number("study", "repetitions", sec["repetitions"], int)
            if not 1 <= val <= 10000:
                raise ConfigError(f"[study] repetitions = {val}: outside [1, 10000]")
            values["repetitions"] = val
        if "delta0" in sec:
            val = _parse_number("study", "delta0", sec["delta0"], float)
            if not 0.0 < val <= 1.0:
                raise ConfigError(f"[study] delta0 = {val}: outside (0, 1]")
            values["delta0"] = val
        if "players" in sec:
            val = _parse_number("study", "players", sec["players"], int)
            if not 1 <= val <= 100000:
                raise ConfigError(f"[study] players = {val}: outside [1, 100000]")
            values["players"] = val
        if "control" in sec:
            ctrl = sec["control"].strip().lower()
            if ctrl not in ("mfg-policy", "fallback"):
                raise ConfigError(f"[study] control = {ctrl!r}: expected 'mfg-policy' or 'fallback'")
            values["control"] = ctrl
        if "seed" in sec:
            values["seed"] = _parse_number("study", "seed", sec["seed"], int)

    if parser.has_section("output") and "directory" in parser["output"]:
        values["directory"] = parser["output"]["directory"].strip()

    cfg = ExperimentConfig(**values)
    if cfg.delta0 > min(1.0, cfg.lq.T if cfg.benchmark == "lq" else 1.0):
        raise ConfigError("[study] delta0 must not exceed min(1, T)")
    return cfg
