"""Tests for cost evaluation, deviation gaps, occupation measures and
couplings."""
from __future__ import annotations

import numpy as np
import pytest

from mfglab.benchmarks import default_lq_params, lq_initial_measure, lq_model, lq_oracle
from mfglab.dynamics import CompactBox, ConstantControl, ModelSpec, StateFeedback
from mfglab.measures import DiscreteMeasure, empirical_measure, wasserstein2
from mfglab.nash import (
    StrategyProfile,
    bundle_costs,
    condition_statistics,
    deviation_gap,
    evaluate_costs,
    iid_profile,
    occupation_measure,
    optimal_coupling,
    tightness_diagnostic,
)
from mfglab.dynamics import simulate_n_player


def make_model(b, sigma_val, f, F, gamma_set=None, T=1.0):
    return ModelSpec(
        d=1,
        d1=1,
        d2=1,
        T=T,
        b=b,
        sigma=lambda t, x, nu: np.full((x.shape[0], 1, 1), sigma_val),
        f=f,
        F=F,
        K=5.0,
        L=5.0,
        gamma_set=gamma_set or CompactBox([-2.0], [2.0]),
        gamma0=0.0,
    )


def test_constant_running_cost_integrates_to_horizon():
    model = make_model(
        b=lambda t, x, nu, g: np.zeros_like(x),
        sigma_val=1.0,
        f=lambda t, x, nu, g: np.ones(x.shape[0]),
        F=lambda x, nu: np.zeros(x.shape[0]),
    )
    profile = StrategyProfile([ConstantControl(0.0)] * 4)
    report = evaluate_costs(model, profile, np.zeros((4, 1)), seed=1, repetitions=3, steps=16)
    np.testing.assert_allclose(report.per_player_mean, 1.0, atol=1e-12)
    np.testing.assert_allclose(report.per_player_se, 0.0, atol=1e-12)


def test_terminal_cost_of_frozen_states():
    model = make_model(
        b=lambda t, x, nu, g: np.zeros_like(x),
        sigma_val=0.0,
        f=lambda t, x, nu, g: np.zeros(x.shape[0]),
        F=lambda x, nu: x[:, 0] ** 2,
    )
    initials = np.array([[0.5], [-2.0], [1.0]])
    profile = StrategyProfile([ConstantControl(0.0)] * 3)
    report = evaluate_costs(model, profile, initials, seed=2, repetitions=2, steps=8)
    np.testing.assert_allclose(report.per_player_mean, initials[:, 0] ** 2, atol=1e-12)


def test_lq_costs_match_oracle_under_oracle_feedback():
    params = default_lq_params()
    model = lq_model(params)
    oracle = lq_oracle(params, ode_steps=4000)
    n, reps, steps = 256, 8, 64
    initials = lq_initial_measure(params, n).support
    feedback = StateFeedback(lambda t, x: oracle.feedback(t, x[:, 0]))
    profile = StrategyProfile([feedback] * n)
    report = evaluate_costs(model, profile, initials, seed=3, repetitions=reps, steps=steps)
    expected = oracle.expected_value(lq_initial_measure(params, n))
    pooled_se = float(np.sqrt(np.mean(report.per_player_se**2) / n)) + 1e-3
    # Mean over players of per-player means vs the oracle value; the slack
    # term covers the Euler discretization bias at 64 steps.
    assert report.mean_cost == pytest.approx(expected, abs=3 * pooled_se + 0.02)


def test_cost_report_median_istar_and_spread():
    model = make_model(
        b=lambda t, x, nu, g: np.zeros_like(x),
        sigma_val=0.0,
        f=lambda t, x, nu, g: np.zeros(x.shape[0]),
        F=lambda x, nu: x[:, 0] ** 2,
    )
    initials = np.array([[0.0], [1.0], [2.0]])
    profile = StrategyProfile([ConstantControl(0.0)] * 3)
    report = evaluate_costs(model, profile, initials, seed=2, repetitions=1, steps=4)
    assert report.istar == 1  # costs 0, 1, 4 -> median is player 1
    assert report.spread == pytest.approx(np.max(np.abs([0, 1, 4] - np.mean([0, 1, 4]))))


def test_deviation_gap_incumbent_is_exactly_zero():
    params = default_lq_params()
    model = lq_model(params)
    incumbent = ConstantControl(0.3)
    profile = StrategyProfile([incumbent] * 4)
    initials = lq_initial_measure(params, 4).support
    report = deviation_gap(
        model, profile, i=1, candidates=[incumbent], initials=initials, seed=5, steps=16, repetitions=3
    )
    assert report.epsilon_hat == 0.0
    np.testing.assert_array_equal(report.gap_means, [0.0])


def test_deviation_gap_deterministic_single_player():
    gamma_bar = 0.8
    model = make_model(
        b=lambda t, x, nu, g: np.zeros_like(x),
        sigma_val=0.0,
        f=lambda t, x, nu, g: g[:, 0] ** 2,
        F=lambda x, nu: np.zeros(x.shape[0]),
    )
    profile = StrategyProfile([ConstantControl(gamma_bar)])
    report = deviation_gap(
        model,
        profile,
        i=0,
        candidates=[ConstantControl(0.0)],
        initials=np.zeros((1, 1)),
        seed=1,
        steps=32,
        repetitions=2,
    )
    assert report.epsilon_hat == pytest.approx(gamma_bar**2, abs=1e-12)


def test_deviation_gap_rejects_non_narrow_candidate():
    model = lq_model(default_lq_params())
    profile = StrategyProfile([ConstantControl(0.0)] * 2)
    feedback = StateFeedback(lambda t, x: -x[:, 0])
    with pytest.raises(ValueError, match="narrow"):
        deviation_gap(
            model, profile, 0, [feedback], np.zeros((2, 1)), seed=1, steps=8, repetitions=1
        )


def test_iid_profile_shares_one_strategy():
    psi = ConstantControl(0.5)
    profile = iid_profile(psi, 8)
    assert profile.n_players == 8
    assert all(s is psi for s in profile.strategies)
    assert all(profile.narrow_tags)
    single = iid_profile(psi, 1)
    assert single.strategies[0] is psi


def test_iid_profile_rejects_full_information_strategy():
    with pytest.raises(ValueError, match="narrow"):
        iid_profile(StateFeedback(lambda t, x: x[:, 0]), 4)


def test_occupation_measure_marginals_match_flow():
    model = lq_model(default_lq_params())
    initials = lq_initial_measure(default_lq_params(), 32).support
    profile = StrategyProfile([ConstantControl(0.1)] * 32)
    bundle = simulate_n_player(model, profile, initials, seed=9, steps=12)
    occ = occupation_measure(bundle)
    assert occ.n == 32
    np.testing.assert_allclose(occ.weights, 1.0 / 32)
    for j in (0, 5, 12):
        np.testing.assert_array_equal(occ.state_marginal(j).support, bundle.flow[j].support)
    states, relaxed, noise = occ.triple(3)
    assert states.shape == (13, 1)
    assert relaxed.n_slots == 12


def quiet_bundle(initial_values, steps=8, T=1.0):
    """Bundle with frozen states, zero controls and zero noise paths."""
    from mfglab.dynamics import PathBundle
    from mfglab.measures import MeasureFlow

    initials = np.asarray(initial_values, dtype=float).reshape(-1, 1)
    n = len(initials)
    times = np.linspace(0.0, T, steps + 1)
    states = np.repeat(initials[:, None, :], steps + 1, axis=1)
    flow = MeasureFlow(times, [empirical_measure(states[:, j]) for j in range(steps + 1)])
    return PathBundle(
        times=times,
        states=states,
        controls=np.zeros((n, steps, 1)),
        noise_increments=np.zeros((n, steps, 1)),
        initials=initials,
        thetas=np.zeros(n),
        flow=flow,
    )


def test_tightness_zero_paths():
    bundle = quiet_bundle([0.0, 0.0, 0.0])
    assert tightness_diagnostic(occupation_measure(bundle), delta0=0.5) == 0.0


def test_tightness_constant_path_reduces_to_sup_norm_term():
    c = 1.7
    delta0 = 0.5
    bundle = quiet_bundle([c])
    g = tightness_diagnostic(occupation_measure(bundle), delta0=delta0)
    assert g == pytest.approx(c ** (2 + delta0), rel=1e-12)


def test_tightness_finite_and_stable_on_ou_population():
    model = make_model(
        b=lambda t, x, nu, g: -x,
        sigma_val=1.0,
        f=lambda t, x, nu, g: np.zeros(x.shape[0]),
        F=lambda x, nu: np.zeros(x.shape[0]),
    )
    values = []
    for n in (32, 128):
        profile = StrategyProfile([ConstantControl(0.0)] * n)
        bundle = simulate_n_player(model, profile, np.zeros((n, 1)), seed=13, steps=64)
        values.append(tightness_diagnostic(occupation_measure(bundle), delta0=0.5))
    assert all(np.isfinite(values))
    assert abs(values[1] - values[0]) <= 0.2 * values[0]


def test_condition_statistic_uniform_bound_for_compact_actions():
    model = make_model(
        b=lambda t, x, nu, g: g,
        sigma_val=0.0,
        f=lambda t, x, nu, g: np.zeros(x.shape[0]),
        F=lambda x, nu: np.zeros(x.shape[0]),
        gamma_set=CompactBox([-1.0], [1.0]),
    )
    delta0 = 0.5
    xi_bound, gamma_bound = 1.0, 1.0
    profile = StrategyProfile([ConstantControl(1.0), ConstantControl(-1.0)])
    initials = np.array([[1.0], [-1.0]])
    bundle = simulate_n_player(model, profile, initials, seed=3, steps=16)
    report = condition_statistics(bundle, delta0)
    bound = xi_bound ** (2 + delta0) + model.T * gamma_bound ** (2 + delta0)
    assert report.t_statistic == pytest.approx(bound, rel=1e-12)


def test_condition_statistic_zero_case_and_cost_block():
    model = make_model(
        b=lambda t, x, nu, g: np.zeros_like(x),
        sigma_val=0.0,
        f=lambda t, x, nu, g: np.zeros(x.shape[0]),
        F=lambda x, nu: x[:, 0] ** 2,
    )
    profile = StrategyProfile([ConstantControl(0.0)] * 3)
    initials = np.array([[0.0], [1.0], [2.0]])
    bundle = simulate_n_player(model, profile, initials, seed=3, steps=8)
    costs = evaluate_costs(model, profile, initials, seed=3, repetitions=1, steps=8)
    report = condition_statistics(bundle, 0.5, costs)
    assert report.istar == 1
    assert report.istar_cost == pytest.approx(1.0)
    zero_bundle = simulate_n_player(model, profile, np.zeros((3, 1)), seed=3, steps=8)
    assert condition_statistics(zero_bundle, 0.5).t_statistic == 0.0


def test_optimal_coupling_identity():
    rng = np.random.default_rng(7)
    sample = rng.normal(size=(16, 1))
    target = empirical_measure(sample)
    coupled = optimal_coupling(sample, target, rng.random(16))
    np.testing.assert_allclose(np.sort(coupled[:, 0]), np.sort(sample[:, 0]), atol=1e-12)
    cost = float(np.mean((sample - coupled) ** 2))
    assert cost == pytest.approx(0.0, abs=1e-12)


def test_optimal_coupling_two_point_oracle():
    sample = np.array([[0.0], [1.0]])
    target = empirical_measure([[2.0], [3.0]])
    coupled = optimal_coupling(sample, target, np.array([0.3, 0.6]))
    np.testing.assert_allclose(coupled[:, 0], [2.0, 3.0])
    cost = float(np.mean(np.sum((sample - coupled) ** 2, axis=1)))
    assert cost == pytest.approx(4.0)


def test_optimal_coupling_matches_wasserstein_1d_unequal_sizes():
    rng = np.random.default_rng(11)
    for _ in range(20):
        k = int(rng.integers(1, 6))
        m = k * int(rng.integers(1, 5))  # target size divides the sample size
        sample = rng.normal(size=(m, 1))
        target = empirical_measure(rng.normal(size=(k, 1)))
        coupled = optimal_coupling(sample, target, rng.random(m))
        cost = float(np.mean((sample - coupled) ** 2))
        d, _ = wasserstein2(empirical_measure(sample), target)
        assert cost == pytest.approx(d**2, abs=1e-9)


def test_optimal_coupling_matches_wasserstein_2d_equal_sizes():
    rng = np.random.default_rng(13)
    for _ in range(10):
        n = int(rng.integers(2, 8))
        sample = rng.normal(size=(n, 2))
        target = empirical_measure(rng.normal(size=(n, 2)))
        coupled = optimal_coupling(sample, target, rng.random(n))
        cost = float(np.mean(np.sum((sample - coupled) ** 2, axis=1)))
        d, _ = wasserstein2(empirical_measure(sample), target)
        assert cost == pytest.approx(d**2, abs=1e-9)


def test_optimal_coupling_incompatible_supports():
    rng = np.random.default_rng(17)
    with pytest.raises(ValueError, match="incompatible supports"):
        # Three uniform target atoms cannot absorb two half-mass samples.
        optimal_coupling(np.zeros((2, 1)), empirical_measure([[0.0], [1.0], [2.0]]), rng.random(2))
    with pytest.raises(ValueError, match="incompatible supports"):
        optimal_coupling(np.zeros((3, 2)), empirical_measure(np.zeros((2, 2))), rng.random(3))


def test_iid_policy_profile_costs_are_exchangeable():
    # Players under the shared policy differ only through their own
    # primitives, so cost samples across players come from one law.
    from scipy.stats import ks_2samp

    from mfglab.benchmarks import lq_oracle
    from mfglab.mfg_solver import (
        NoiseFeedbackStrategy,
        NoiseRule,
        StateGrid,
        backward_dp,
        build_control_grid,
    )

    params = default_lq_params()
    model = lq_model(params)
    oracle = lq_oracle(params, ode_steps=1000)
    sgrid = StateGrid([-3.0], [3.0], [41], level=3)
    rule = NoiseRule(substeps=2, nodes=3)
    times = np.linspace(0.0, model.T, sgrid.n_slots * rule.substeps + 1)
    flow = oracle.flow(times)
    _, policy = backward_dp(model, flow, build_control_grid(model, 2.0, 4), sgrid, rule)
    psi = NoiseFeedbackStrategy(policy, model, flow)
    n, reps = 16, 12
    profile = iid_profile(psi, n)
    initials = np.full((n, 1), params.m0_mean)  # identical initials, own noise only
    samples = np.zeros((reps, n))
    from mfglab import rng as rngmod
    from mfglab.dynamics import simulate_n_player as sim

    for r in range(reps):
        bundle = sim(model, profile, initials, rngmod.rep_key(11, r), len(times) - 1)
        samples[r] = bundle_costs(bundle, model)
    _, p_value = ks_2samp(samples[:, 0], samples[:, n - 1])
    assert p_value > 0.05


def test_bundle_costs_matches_manual_accumulation():
    model = lq_model(default_lq_params())
    initials = lq_initial_measure(default_lq_params(), 8).support
    profile = StrategyProfile([ConstantControl(0.2)] * 8)
    bundle = simulate_n_player(model, profile, initials, seed=21, steps=10)
    costs = bundle_costs(bundle, model)
    manual = np.zeros(8)
    dt = bundle.dt
    for j in range(10):
        manual += model.running_cost(
            bundle.times[j], bundle.states[:, j], bundle.flow[j], bundle.controls[:, j]
        ) * dt
    manual += model.terminal_cost(bundle.states[:, -1], bundle.flow[10])
    np.testing.assert_allclose(costs, manual, atol=1e-14)
