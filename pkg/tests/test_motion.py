import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from neuroswarms.controller import compute_reward_weights, compute_swarm_weights
from neuroswarms.errors import ContractViolation
from neuroswarms.geometry import build_wall_field
from neuroswarms.motion import (
    apply_position_updates,
    barrier_aware_shift,
    combine_shifts,
    field_chase_velocity,
    invert_reward_kernel,
    invert_swarm_kernel,
    momentum_filter,
    project_inside,
    reward_shift,
    single_entity_velocity,
    speed_limit,
    swarm_shift,
    wall_avoid_velocity,
)

from conftest import interior_points

vec2 = arrays(np.float64, (1, 2), elements=st.floats(-1e3, 1e3))


# -- kernel inversion --------------------------------------------------------

def test_unit_weight_means_zero_distance():
    assert invert_swarm_kernel(np.ones((1, 1)), 3.0)[0, 0] == 0.0
    assert invert_swarm_kernel(np.ones((1, 1)), 3.0, mode="exact")[0, 0] == 0.0
    assert invert_reward_kernel(np.ones((1, 1)), 3.0)[0, 0] == 0.0


def test_verbatim_inversion_value():
    D = invert_swarm_kernel(np.array([[math.exp(-1)]]), 2.0)
    assert D[0, 0] == pytest.approx(2 * math.sqrt(2))


def test_reward_inversion_value():
    assert invert_reward_kernel(np.array([[math.exp(-1)]]), 7.0)[0, 0] == pytest.approx(7.0)


@given(arrays(np.float64, 20, elements=st.floats(0.0, 3.0)), st.floats(0.5, 500.0))
def test_exact_inverse_roundtrip(frac, sigma):
    D = frac * sigma
    V = np.ones_like(D, dtype=bool)
    back = invert_swarm_kernel(compute_swarm_weights(D, V, sigma), sigma, mode="exact")
    np.testing.assert_allclose(back, D, rtol=1e-9, atol=1e-9 * sigma)


@given(arrays(np.float64, 20, elements=st.floats(0.0, 20.0)), st.floats(0.5, 500.0))
def test_reward_inverse_roundtrip(frac, kappa):
    D = frac * kappa
    V = np.ones_like(D, dtype=bool)
    back = invert_reward_kernel(compute_reward_weights(D, V, kappa), kappa)
    np.testing.assert_allclose(back, D, rtol=1e-9, atol=1e-9 * kappa)


def test_verbatim_inversion_overshoots_by_root_two():
    D = np.array([[5.0]])
    W = compute_swarm_weights(D, np.ones_like(D, bool), 4.0)
    assert invert_swarm_kernel(W, 4.0)[0, 0] == pytest.approx(math.sqrt(2) * 5.0)


@pytest.mark.parametrize("bad", [0.0, -0.1, 1.5, math.nan])
def test_weights_outside_unit_interval_violate_contract(bad):
    with pytest.raises(ContractViolation):
        invert_swarm_kernel(np.array([[bad]]), 1.0)
    with pytest.raises(ContractViolation):
        invert_reward_kernel(np.array([[bad]]), 1.0)


def test_unconnected_entries_are_not_inverted():
    W = np.array([[0.0, 0.5]])
    D = invert_swarm_kernel(W, 1.0, V=np.array([[False, True]]))
    assert D[0, 0] == 0.0 and D[0, 1] > 0


def test_desired_distance_cap():
    D = invert_swarm_kernel(np.array([[1e-12]]), 100.0, cap=50.0)
    assert D[0, 0] == 50.0


# -- shifts ------------------------------------------------------------------

def _pair(D_new, D=10.0):
    x = np.array([[0.0, 0.0], [D, 0.0]])
    V = np.array([[False, True], [True, False]])
    Dm = np.array([[0.0, D], [D, 0.0]])
    Dn = np.array([[0.0, D_new], [D_new, 0.0]])
    return Dn, Dm, V, x


def test_no_visible_neighbors_no_shift():
    f = swarm_shift(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2), bool), np.zeros((2, 2)) + [[0, 0], [5, 0]])
    np.testing.assert_array_equal(f, 0.0)


def test_matched_distance_no_shift():
    np.testing.assert_array_equal(swarm_shift(*_pair(10.0)), 0.0)


def test_printed_convention_hand_value():
    # east neighbor, D = 10 shrinking to 6: half of (6 - 10) along (1, 0)
    f = swarm_shift(*_pair(6.0), convention="printed")
    np.testing.assert_allclose(f[0], [-2.0, 0.0])


def test_approach_convention_moves_toward_a_closer_target():
    f = swarm_shift(*_pair(6.0))
    np.testing.assert_allclose(f, [[2.0, 0.0], [-2.0, 0.0]])
    f = swarm_shift(*_pair(14.0))
    np.testing.assert_allclose(f, [[-2.0, 0.0], [2.0, 0.0]])


def test_unknown_convention_rejected():
    with pytest.raises(ContractViolation):
        swarm_shift(*_pair(6.0), convention="sideways")


def test_coincident_pair_contributes_nothing():
    x = np.zeros((2, 2))
    V = np.array([[False, True], [True, False]])
    f = swarm_shift(np.full((2, 2), 3.0), np.zeros((2, 2)), V, x)
    np.testing.assert_array_equal(f, 0.0)


def test_reward_shift_hand_values():
    x = np.array([[0.0, 0.0]])
    reward = np.array([[0.0, 20.0]])
    V = np.array([[True]])
    np.testing.assert_allclose(reward_shift([[5.0]], [[20.0]], V, x, reward, convention="printed"), [[0.0, -15.0]])
    np.testing.assert_allclose(reward_shift([[5.0]], [[20.0]], V, x, reward), [[0.0, 15.0]])
    np.testing.assert_array_equal(reward_shift([[20.0]], [[20.0]], V, x, reward), 0.0)
    np.testing.assert_array_equal(reward_shift([[5.0]], [[20.0]], [[False]], x, reward), 0.0)


@settings(max_examples=30)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1), st.sampled_from(["approach", "printed"]))
def test_kernel_consistent_weights_give_no_drift(n, seed, convention):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 100, (n, 2))
    D = np.linalg.norm(x[:, None] - x[None], axis=-1)
    V = ~np.eye(n, dtype=bool)
    D_new = invert_swarm_kernel(compute_swarm_weights(D, V, 80.0), 80.0, mode="exact", V=V)
    np.testing.assert_allclose(swarm_shift(D_new, D, V, x, convention), 0.0, atol=1e-9)


def test_combine_shifts():
    f, fr = np.array([[2.0, 4.0]]), np.zeros((1, 2))
    np.testing.assert_allclose(combine_shifts(f, fr), [[1.0, 2.0]])
    np.testing.assert_allclose(combine_shifts(f, f), f)
    np.testing.assert_allclose(combine_shifts(f, np.ones((1, 2)), alpha=1.0), f)


# -- wall blends -------------------------------------------------------------

def test_barrier_shift_far_field_identity():
    dx = np.array([[1.0, 2.0]])
    np.testing.assert_allclose(barrier_aware_shift(dx, np.array([1e4]), np.array([[0.0, 1.0]])), dx)


def test_barrier_shift_at_contact_points_inward():
    out = barrier_aware_shift(np.array([[3.0, 4.0]]), np.array([0.0]), np.array([[0.0, 1.0]]))
    np.testing.assert_allclose(out, [[0.0, 5.0]])


def test_barrier_shift_at_one_length_constant():
    out = barrier_aware_shift(np.array([[1.0, 0.0]]), np.array([20.0]), np.array([[0.0, 1.0]]), lam=20.0)
    e = math.exp(-1)
    np.testing.assert_allclose(out, [[1 - e, e]])


@given(vec2, st.floats(0.0, 200.0), st.floats(0.0, 2 * math.pi))
def test_wall_blend_never_speeds_up(v, d, ang):
    n = np.array([[math.cos(ang), math.sin(ang)]])
    out = wall_avoid_velocity(v, np.array([d]), n)
    assert np.linalg.norm(out) <= np.linalg.norm(v) * (1 + 1e-12) + 1e-12


# -- velocities --------------------------------------------------------------

def test_field_chase_velocity():
    np.testing.assert_allclose(field_chase_velocity([[1.0, 0.0]], [[0.0, 0.0]], 0.01), [[100.0, 0.0]])
    np.testing.assert_array_equal(field_chase_velocity([[3.0, 4.0]], [[3.0, 4.0]], 0.01), 0.0)


def test_single_entity_velocity_collapses_to_shared_point():
    x_s = np.array([[5.0, 5.0]] * 4)
    v = single_entity_velocity(x_s, np.array([[1.0, 2.0]]), np.array([0.2, 0.5, 0.9, 0.1]), np.ones(4, bool), 0.01)
    np.testing.assert_allclose(v, [[400.0, 300.0]])


def test_single_entity_velocity_is_cubic_weighted():
    x_s = np.array([[0.0, 0.0], [9.0, 0.0]])
    v = single_entity_velocity(x_s, np.zeros((1, 2)), np.array([1.0, 2.0]), np.ones(2, bool), 1.0)
    # weights 1:8 put the target at 8/9 of the way
    np.testing.assert_allclose(v, [[8.0, 0.0]])


def test_single_entity_velocity_guard():
    x_s = np.array([[3.0, 0.0], [9.0, 0.0]])
    assert not single_entity_velocity(x_s, np.zeros((1, 2)), np.zeros(2), np.ones(2, bool), 0.01).any()
    assert not single_entity_velocity(x_s, np.zeros((1, 2)), np.ones(2), np.zeros(2, bool), 0.01).any()


def test_momentum_filter():
    vs = np.array([[10.0, -20.0]])
    np.testing.assert_allclose(momentum_filter(vs, vs), vs)
    np.testing.assert_allclose(momentum_filter(np.zeros((1, 2)), vs), 0.1 * vs)
    np.testing.assert_array_equal(momentum_filter(np.ones((1, 2)), vs, mu=0.0), vs)


def test_speed_limit_values():
    v_max = math.sqrt(2 * 3e3 / 0.3)
    assert v_max == pytest.approx(141.4213562)
    fast = speed_limit(np.array([[1e9, 0.0]]), np.array([0.3]), 3e3)
    assert fast[0, 0] == pytest.approx(v_max)
    slow = speed_limit(np.array([[0.01, 0.0]]), np.array([0.3]), 3e3)
    assert slow[0, 0] == pytest.approx(0.01, rel=1e-6)
    np.testing.assert_array_equal(speed_limit(np.zeros((1, 2)), np.array([0.3]), 3e3), 0.0)


@given(vec2, st.floats(0.05, 10.0))
def test_speed_limit_bound_and_direction(v, m):
    out = speed_limit(v, np.array([m]), 3e3)
    assert np.linalg.norm(out) <= math.sqrt(2 * 3e3 / m) * (1 + 1e-12)
    assert float(np.dot(out[0], v[0])) >= 0.0


# -- position updates --------------------------------------------------------

def test_still_state_stays_put(square):
    field = build_wall_field(square)
    x = np.array([[40.0, 50.0]])
    x2, xs2 = apply_position_updates(x, np.zeros((1, 2)), x, np.zeros((1, 2)), 0.01, square, field)
    np.testing.assert_array_equal(x2, x)
    np.testing.assert_array_equal(xs2, x)


def test_displacement_scales_with_dt(square):
    field = build_wall_field(square)
    x = np.array([[40.0, 50.0]])
    v = np.array([[30.0, -10.0]])
    a, _ = apply_position_updates(x, v, x, np.zeros((1, 2)), 0.02, square, field)
    b, _ = apply_position_updates(x, v, x, np.zeros((1, 2)), 0.01, square, field)
    np.testing.assert_allclose(b - x, (a - x) / 2)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_wall_crossing_steps_are_projected_inside(hairpin, seed):
    rng = np.random.default_rng(seed)
    field = build_wall_field(hairpin)
    x = interior_points(hairpin, 20, rng)
    v = rng.normal(0, 3000, (20, 2))
    dx = rng.normal(0, 40, (20, 2))
    x2, xs2 = apply_position_updates(x, v, x, dx, 0.01, hairpin, field)
    assert hairpin.contains(x2).all() and hairpin.contains(xs2).all()


def test_projection_leaves_interior_points_alone(square):
    field = build_wall_field(square)
    pts = np.array([[50.0, 50.0], [10.5, 109.5]])
    np.testing.assert_array_equal(project_inside(square, field, pts), pts)
