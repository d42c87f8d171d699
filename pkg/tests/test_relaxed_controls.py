"""Tests for relaxed controls: lifting, truncation, chattering projection."""
from __future__ import annotations

import numpy as np
import pytest

from mfglab.relaxed_controls import (
    RelaxedControlPath,
    StepControl,
    chattering_project,
    covering_radius,
    lift,
    truncate,
)


def make_step(values, T=1.0):
    values = np.asarray(values, dtype=float)
    times = np.linspace(0.0, T, len(values) + 1)
    return StepControl(times, values)


def test_lift_constant_control():
    u = make_step([0.7] * 4)
    r = lift(u)
    for j in range(4):
        np.testing.assert_allclose(r.slot_atoms[j], [[0.7]])
        np.testing.assert_allclose(r.slot_weights[j], [1.0])
    assert r.mass_up_to(r.n_slots) == pytest.approx(1.0)


def test_lift_two_slot_control():
    u = make_step([[1.0], [-2.0]])
    r = lift(u)
    assert r.slot_atoms[0][0, 0] == 1.0
    assert r.slot_atoms[1][0, 0] == -2.0


def test_lift_preserves_energy():
    rng = np.random.default_rng(2)
    vals = rng.normal(size=(16, 2))
    u = make_step(vals, T=2.0)
    r = lift(u)
    direct = float(np.sum(np.sum(vals**2, axis=1)) * u.dt)
    assert u.energy() == pytest.approx(direct, rel=1e-14)
    assert r.second_moment() == pytest.approx(direct, rel=1e-14)


def test_truncate_noop_when_inside():
    r = lift(make_step([0.5, -0.5]))
    out = truncate(r, 1.0, 0.0)
    for j in range(2):
        np.testing.assert_allclose(out.slot_atoms[j], r.slot_atoms[j])
        np.testing.assert_allclose(out.slot_weights[j], r.slot_weights[j])


def test_truncate_full_reassignment():
    r = lift(make_step([3.0]))
    out = truncate(r, 1.0, 0.25)
    np.testing.assert_allclose(out.slot_atoms[0], [[0.25]])
    np.testing.assert_allclose(out.slot_weights[0], [1.0])


def test_truncate_mixed_slot_mass_bookkeeping():
    times = np.array([0.0, 1.0])
    r = RelaxedControlPath(times, [np.array([[0.5], [4.0]])], [np.array([0.6, 0.4])])
    out = truncate(r, 1.0, -0.5)
    np.testing.assert_allclose(out.slot_atoms[0], [[0.5], [-0.5]])
    np.testing.assert_allclose(out.slot_weights[0], [0.6, 0.4])
    assert sum(w.sum() for w in out.slot_weights) == pytest.approx(1.0)


def test_truncate_merges_into_existing_fallback_atom():
    times = np.array([0.0, 1.0])
    r = RelaxedControlPath(times, [np.array([[0.0], [9.0]])], [np.array([0.7, 0.3])])
    out = truncate(r, 1.0, 0.0)
    np.testing.assert_allclose(out.slot_atoms[0], [[0.0]])
    np.testing.assert_allclose(out.slot_weights[0], [1.0])


def test_truncate_never_increases_second_moment():
    rng = np.random.default_rng(8)
    for _ in range(20):
        vals = rng.normal(scale=2.0, size=12)
        r = lift(make_step(vals))
        m = float(rng.uniform(0.2, 2.0))
        out = truncate(r, m, 0.1 * m)
        assert out.second_moment() <= r.second_moment() + 1e-12


def test_truncate_rejects_gamma0_outside_action_set():
    from mfglab.dynamics import CompactBox

    r = lift(make_step([0.0]))
    with pytest.raises(ValueError, match="gamma0"):
        truncate(r, 1.0, 5.0, gamma_set=CompactBox([-1.0], [1.0]))


def test_chattering_identity_on_grid_valued_control():
    u = make_step([0.0, 0.5, 0.5, 1.0])  # 4 slots = dyadic k=2
    out = chattering_project(u, np.array([0.0, 0.5, 1.0]), k=2)
    np.testing.assert_allclose(out.values, u.values)
    np.testing.assert_allclose(out.times, u.times)


def test_chattering_snaps_to_nearest():
    u = make_step([0.3, 0.3])  # 2 slots = dyadic k=1
    out = chattering_project(u, np.array([0.0, 0.5, 1.0]), k=1)
    np.testing.assert_allclose(out.values[:, 0], [0.5, 0.5])


def test_chattering_tie_breaks_to_smaller_index():
    u = make_step([0.25, 0.25])
    out = chattering_project(u, np.array([0.0, 0.5]), k=1)
    np.testing.assert_allclose(out.values[:, 0], [0.0, 0.0])


def test_chattering_coarsens_fine_control():
    # 8 fine slots onto the 2-slot dyadic grid: left endpoints rule.
    u = make_step(np.arange(8, dtype=float) / 8.0)
    out = chattering_project(u, np.array([0.0, 0.25, 0.5, 0.75, 1.0]), k=1)
    assert out.n_slots == 2
    np.testing.assert_allclose(out.values[:, 0], [0.0, 0.5])


def test_chattering_rejects_empty_grid_and_bad_refinement():
    u = make_step([0.0, 0.0])
    with pytest.raises(ValueError, match="empty grid"):
        chattering_project(u, np.zeros((0, 1)), k=1)
    u3 = make_step([0.0, 0.0, 0.0])
    with pytest.raises(ValueError, match="refine"):
        chattering_project(u3, np.array([0.0]), k=1)


def test_chattering_moves_values_at_most_covering_radius():
    rng = np.random.default_rng(13)
    grid = np.sort(rng.uniform(-1, 1, size=9))
    samples = rng.uniform(-1, 1, size=64)
    radius = covering_radius(grid, samples)
    u = make_step(samples[:16])
    out = chattering_project(u, grid, k=4)
    moves = np.abs(out.values[:, 0] - u.values[:, 0])
    assert np.all(moves <= radius + 1e-12)


def test_slot_mass_conservation_through_operations():
    rng = np.random.default_rng(21)
    u = make_step(rng.normal(size=8), T=2.0)
    r = lift(u)
    tr = truncate(r, 0.5, 0.0)
    for path in (r, tr):
        for j in range(path.n_slots):
            assert path.slot_weights[j].sum() == pytest.approx(1.0, abs=1e-12)
            assert path.mass_up_to(j) == pytest.approx(j * path.dt, abs=1e-12)
