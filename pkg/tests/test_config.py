"""Tests for the experiment configuration schema."""
from __future__ import annotations

import pytest

from mfglab.config import ConfigError, ExperimentConfig, load_config


def write(tmp_path, text):
    path = tmp_path / "exp.ini"
    path.write_text(text)
    return path


def test_full_roundtrip(tmp_path):
    path = write(
        tmp_path,
        """
        [model]
        benchmark = lq
        a = -0.3
        q = 1.5

        [discretization]
        level = 5
        state_nodes = 101
        substeps = 2
        quadrature = gauss-hermite

        [solver]
        particles = 512
        damping = 0.4

        [study]
        name = convergence-study
        n_list = 8, 32
        repetitions = 4
        seed = 99

        [output]
        directory = results
        """,
    )
    cfg = load_config(path)
    assert cfg.benchmark == "lq"
    assert cfg.lq.a == -0.3
    assert cfg.lq.q == 1.5
    assert cfg.level == 5
    assert cfg.particles == 512
    assert cfg.damping == 0.4
    assert cfg.study == "convergence-study"
    assert cfg.n_list == (8, 32)
    assert cfg.seed == 99
    assert cfg.directory == "results"


def test_unknown_key_is_named(tmp_path):
    path = write(tmp_path, "[solver]\nparticles = 8\nwarp_factor = 9\n")
    with pytest.raises(ConfigError, match="warp_factor"):
        load_config(path)


def test_unknown_section_is_named(tmp_path):
    path = write(tmp_path, "[quantum]\nfoo = 1\n")
    with pytest.raises(ConfigError, match="quantum"):
        load_config(path)


def test_type_errors_are_reported(tmp_path):
    path = write(tmp_path, "[solver]\nparticles = many\n")
    with pytest.raises(ConfigError, match="particles"):
        load_config(path)


def test_range_violations(tmp_path):
    with pytest.raises(ConfigError, match="damping"):
        load_config(write(tmp_path, "[solver]\ndamping = 1.5\n"))
    with pytest.raises(ConfigError, match="level"):
        load_config(write(tmp_path, "[discretization]\nlevel = 0\n"))
    with pytest.raises(ConfigError, match="state_lo"):
        load_config(write(tmp_path, "[discretization]\nstate_lo = 2\nstate_hi = -2\n"))
    with pytest.raises(ConfigError, match="m_list"):
        load_config(write(tmp_path, "[study]\nm_list = 4, 2\n"))
    with pytest.raises(ConfigError, match="name"):
        load_config(write(tmp_path, "[study]\nname = moon-landing\n"))


def test_defaults_are_valid():
    cfg = ExperimentConfig()
    assert cfg.study == "solve-mfg"
    assert cfg.noise_rule().substeps == cfg.substeps
    assert len(cfg.digest()) == 16


def test_digest_tracks_content(tmp_path):
    a = load_config(write(tmp_path, "[study]\nseed = 1\n"))
    b = load_config(write(tmp_path, "[study]\nseed = 2\n"))
    assert a.digest() != b.digest()
