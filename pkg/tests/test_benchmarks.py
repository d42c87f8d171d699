"""Tests for the benchmark models and the LQ reference oracle."""
from __future__ import annotations

import numpy as np
import pytest

from mfglab.benchmarks import (
    LqParams,
    bounded_initial_measure,
    bounded_model,
    default_lq_params,
    lq_initial_measure,
    lq_model,
    lq_oracle,
)
from mfglab.dynamics import validate_assumptions


def test_zero_params_give_zero_dynamics_and_pass_checks():
    params = LqParams(a=0, abar=0, c=0, s=0, q=0, kappa=0, qT=0, kappaT=0, m0_mean=0, m0_var=0)
    model = lq_model(params)
    report = validate_assumptions(model, sampler=1, n_samples=80)
    assert report.ok, str(report)
    oracle = lq_oracle(params, ode_steps=1000)
    assert np.max(np.abs(oracle.vxx)) == 0.0
    assert np.max(np.abs(oracle.zbar)) == 0.0


def test_pure_control_cost_has_zero_value_and_uncontrolled_mean():
    params = LqParams(a=0.3, abar=0.0, c=1.0, s=0.2, q=0.0, kappa=0.0, qT=0.0, kappaT=0.0, m0_mean=0.8)
    oracle = lq_oracle(params, ode_steps=2000)
    np.testing.assert_allclose(oracle.vxx, 0.0, atol=1e-14)
    np.testing.assert_allclose(oracle.gain, 0.0, atol=1e-14)
    np.testing.assert_allclose(oracle.v0, 0.0, atol=1e-14)
    expected = params.m0_mean * np.exp(params.a * oracle.times)
    np.testing.assert_allclose(oracle.zbar, expected, rtol=1e-9)


def test_uncontrolled_mean_rate_includes_interaction_term():
    params = LqParams(a=0.2, abar=0.3, c=1.0, s=0.0, q=0.0, kappa=0.0, qT=0.0, kappaT=0.0, m0_mean=1.0)
    oracle = lq_oracle(params, ode_steps=2000)
    expected = np.exp((params.a + params.abar) * oracle.times)
    np.testing.assert_allclose(oracle.zbar, expected, rtol=1e-9)


def test_decoupled_case_converges_immediately_and_matches_closed_form():
    # abar = kappa = kappaT = 0, q = 0: the Riccati equation linearizes via
    # w = 1/vxx, w' = 2 a w - 2 c^2, w(T) = 2/qT.
    params = LqParams(a=-0.5, abar=0.0, c=1.0, s=0.3, q=0.0, kappa=0.0, qT=1.0, kappaT=0.0, m0_mean=1.0)
    oracle = lq_oracle(params, ode_steps=4000)
    assert oracle.sweeps <= 2
    t = oracle.times
    w = (2.0 / params.qT) * np.exp(2 * params.a * (t - params.T)) + (params.c**2 / params.a) * (
        1.0 - np.exp(2 * params.a * (t - params.T))
    )
    np.testing.assert_allclose(oracle.vxx, 1.0 / w, rtol=1e-9)
    np.testing.assert_allclose(oracle.vx, 0.0, atol=1e-12)


def test_oracle_self_convergence_under_step_doubling():
    params = default_lq_params()
    coarse = lq_oracle(params, ode_steps=2000)
    fine = lq_oracle(params, ode_steps=4000)
    for name in ("vxx", "vx", "v0"):
        a = getattr(coarse, name)
        b = getattr(fine, name)[::2]
        assert np.max(np.abs(a - b)) < 1e-8, name
    assert np.max(np.abs(coarse.zbar - fine.zbar[::2])) < 1e-8


def test_lq_model_passes_assumption_checks():
    model = lq_model(default_lq_params())
    report = validate_assumptions(model, sampler=7, n_samples=300)
    assert report.ok, str(report)


def test_lq_initial_measure_matches_gaussian_moments():
    params = default_lq_params()
    mu = lq_initial_measure(params, 4096)
    assert mu.mean()[0] == pytest.approx(params.m0_mean, abs=1e-12)
    var = mu.second_moment() - mu.mean()[0] ** 2
    assert var == pytest.approx(params.m0_var, rel=5e-3)


def test_oracle_expected_value_consistency():
    params = default_lq_params()
    oracle = lq_oracle(params, ode_steps=2000)
    mu = lq_initial_measure(params, 2048)
    direct = float(np.mean(oracle.value(0.0, mu.support[:, 0])))
    assert oracle.expected_value(mu) == pytest.approx(direct, rel=1e-12)


def test_bounded_model_passes_checks_and_has_bounded_costs():
    model = bounded_model()
    report = validate_assumptions(model, sampler=3, n_samples=300)
    assert report.ok, str(report)
    rng = np.random.default_rng(5)
    x = rng.normal(scale=10.0, size=(200, 1))
    g = rng.uniform(-1, 1, size=(200, 1))
    from mfglab.measures import empirical_measure

    nu = empirical_measure(rng.normal(scale=4.0, size=(6, 1)))
    fv = model.running_cost(0.3, x, nu, g)
    assert np.all(fv >= 0.0) and np.all(fv <= 3.0)
    assert np.all(model.terminal_cost(x, nu) <= 1.0)


def test_bounded_initial_measure_is_in_range():
    mu = bounded_initial_measure(64)
    assert np.all(np.abs(mu.support) <= 1.0)
    assert mu.mean()[0] == pytest.approx(0.0, abs=1e-12)


def test_frozen_flow_under_oracle_feedback_tracks_mean_ode():
    # Deterministic path from the mean initial state under the oracle's
    # feedback (frozen along the oracle trajectory) reproduces the mean ODE
    # up to the Euler step error.
    from mfglab.dynamics import NoisePath, simulate_frozen_flow
    from mfglab.relaxed_controls import StepControl

    params = default_lq_params()
    model = lq_model(params)
    oracle = lq_oracle(params, ode_steps=2000)
    steps = 128
    times = np.linspace(0.0, params.T, steps + 1)
    flow = oracle.flow(times)
    zbar = oracle.mean_at(times)
    gammas = np.array([
        float(np.interp(t, oracle.times, oracle.gain) * z + np.interp(t, oracle.times, oracle.offset))
        for t, z in zip(times[:-1], zbar[:-1])
    ])[:, None]
    control = StepControl(times, gammas)
    quiet = NoisePath(times, np.zeros((steps, 1)))
    path = simulate_frozen_flow(model, flow, control, [params.m0_mean], quiet)
    err = abs(path[-1, 0] - zbar[-1])
    assert err < 5.0 / steps  # O(dt) discretization tolerance
