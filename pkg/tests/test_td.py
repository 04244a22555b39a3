"""Trace algebra, steady-state oracles, and schedule behavior."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from byztd.environments import RandomMrpSpec, build_random_mrp
from byztd.mrp import stationary_distribution, weighted_projection
from byztd.td import (
    EligibilityTrace,
    TdParams,
    centralized_td_step,
    discounted_transition_series,
    local_increment,
    make_schedule,
    sandwich_check,
    steady_state,
    step_matrices,
    trace_update,
)

LAM_GRID = [0.0, 0.25, 0.5, 0.75, 0.9, 1.0]


def small_model(seed: int = 0, s: int = 8, n: int = 3, d: int = 3):
    return build_random_mrp(
        RandomMrpSpec(num_states=s, num_agents=n, feature_dim=d,
                      reward_heterogeneity=0.5, seed=seed, discount=0.9)
    )


def test_trace_geometric_hand_values():
    params = TdParams(lam=5.0 / 6.0, discount=0.9)  # decay product 0.75
    trace = EligibilityTrace.zero(1)
    trace = trace_update(trace, params, np.array([1.0]))
    assert trace.z[0] == pytest.approx(1.0)
    trace = trace_update(trace, params, np.array([1.0]))
    assert trace.z[0] == pytest.approx(1.75)
    trace = trace_update(trace, params, np.array([1.0]))
    assert trace.z[0] == pytest.approx(1.0 + 0.75 + 0.75**2)
    assert trace.step == 2


def test_increment_matches_affine_decomposition():
    rng = np.random.default_rng(1)
    params = TdParams(lam=0.6, discount=0.9)
    d, n = 4, 5
    trace = EligibilityTrace(z=rng.normal(size=d), step=3)
    phi_s, phi_next = rng.normal(size=d), rng.normal(size=d)
    rewards = rng.normal(size=n)
    a_k, b_bar, b_k = step_matrices(phi_s, phi_next, trace, rewards, params)
    assert np.allclose(b_bar, b_k.mean(axis=0), atol=1e-15)
    for agent in range(n):
        theta = rng.normal(size=d)
        direct = local_increment(theta, rewards[agent], phi_s, phi_next, trace, params)
        assert np.allclose(direct, a_k @ theta + b_k[agent], atol=1e-12)


@given(
    lam=st.floats(0.0, 1.0),
    discount=st.floats(0.05, 0.99),
    seed=st.integers(0, 10_000),
)
@settings(max_examples=60, deadline=None)
def test_trace_norm_is_geometrically_bounded(lam, discount, seed):
    rng = np.random.default_rng(seed)
    params = TdParams(lam=lam, discount=discount)
    trace = EligibilityTrace.zero(3)
    bound = 1.0 / (1.0 - lam * discount)
    for _ in range(50):
        phi = rng.normal(size=3)
        phi /= max(1.0, np.linalg.norm(phi))  # feature rows have norm <= 1
        trace = trace_update(trace, params, phi)
        assert np.linalg.norm(trace.z) <= bound + 1e-9


@pytest.mark.parametrize("lam", LAM_GRID)
def test_steady_state_fixed_point_residual(lam):
    model = small_model(2)
    rho = stationary_distribution(model)
    ss = steady_state(model, rho, TdParams(lam=lam, discount=model.discount))
    assert np.linalg.norm(ss.a_star @ ss.theta_inf + ss.b_star) < 1e-10
    sym = np.linalg.eigvalsh(0.5 * (ss.a_star + ss.a_star.T))
    assert sym[-1] < 0.0
    assert ss.sigma_min > 0.0


@pytest.mark.parametrize("lam", [0.0, 0.3, 0.8])
def test_series_closed_form_matches_truncation(lam):
    model = small_model(3)
    gamma = model.discount
    closed = discounted_transition_series(model.transition, gamma, lam)
    acc = np.zeros_like(closed)
    term = gamma * model.transition
    for k in range(201):
        acc += (lam**k) * term
        term = gamma * model.transition @ term
    tail = (lam * gamma) ** 201 / (1.0 - lam * gamma) if lam > 0 else 0.0
    assert np.abs(closed - acc).max() <= tail + 1e-12


def test_lambda_one_reaches_the_projection():
    model = small_model(4)
    rho = stationary_distribution(model)
    ss = steady_state(model, rho, TdParams(lam=1.0, discount=model.discount))
    theta_star, _ = weighted_projection(model, rho)
    assert np.allclose(ss.theta_inf, theta_star, atol=1e-8)


@pytest.mark.parametrize("lam", LAM_GRID)
def test_objective_sandwich(lam):
    model = small_model(5)
    rho = stationary_distribution(model)
    f_fp, f_min, upper = sandwich_check(model, rho, TdParams(lam=lam, discount=model.discount))
    assert f_min - 1e-12 <= f_fp <= upper + 1e-12
    if lam == 1.0:
        assert f_fp == pytest.approx(f_min, rel=1e-9)


def test_step_expectation_converges_to_steady_state():
    # Law of large numbers: averaged A^k and b_bar^k over a long
    # stationary stretch approach A* and b*.
    model = small_model(6, s=6, n=2, d=2)
    rho = stationary_distribution(model)
    params = TdParams(lam=0.5, discount=model.discount)
    ss = steady_state(model, rho, params)

    rng = np.random.default_rng(7)
    cum = np.cumsum(model.transition, axis=1)
    s = int(rng.choice(model.num_states, p=rho.probs))
    trace = EligibilityTrace.zero(model.feature_dim)
    a_sum = np.zeros_like(ss.a_star)
    b_sum = np.zeros_like(ss.b_star)
    burn, count = 2_000, 300_000
    for k in range(burn + count):
        s2 = min(int(np.searchsorted(cum[s], rng.random(), side="right")), model.num_states - 1)
        trace = trace_update(trace, params, model.features[s])
        rewards = model.rewards[:, s, s2]
        a_k, b_bar, _ = step_matrices(model.features[s], model.features[s2], trace, rewards, params)
        if k >= burn:
            a_sum += a_k
            b_sum += b_bar
        s = s2
    a_hat, b_hat = a_sum / count, b_sum / count
    assert np.abs(a_hat - ss.a_star).max() < 0.02
    assert np.abs(b_hat - ss.b_star).max() < 0.02


def test_centralized_iteration_approaches_fixed_point():
    model = small_model(8, s=6, n=3, d=2)
    rho = stationary_distribution(model)
    params = TdParams(lam=0.7, discount=model.discount)
    ss = steady_state(model, rho, params)
    schedule = make_schedule("theoretical", eta=5.0, k0=100)

    rng = np.random.default_rng(9)
    cum = np.cumsum(model.transition, axis=1)
    s = int(rng.choice(model.num_states, p=model.initial_dist))
    trace = EligibilityTrace.zero(model.feature_dim)
    theta = np.zeros(model.feature_dim)
    start_dist = np.linalg.norm(theta - ss.theta_inf)
    for k in range(100_000):
        s2 = min(int(np.searchsorted(cum[s], rng.random(), side="right")), model.num_states - 1)
        trace = trace_update(trace, params, model.features[s])
        theta = centralized_td_step(
            theta, schedule(k), model.rewards[:, s, s2], model.features[s],
            model.features[s2], trace, params,
        )
        s = s2
    assert np.linalg.norm(theta - ss.theta_inf) < 0.05 * start_dist


def test_schedules():
    th = make_schedule("theoretical", eta=2.0, k0=4)
    assert th(0) == pytest.approx(0.5)
    assert th(6) == pytest.approx(0.2)
    ex = make_schedule("experimental", c=0.3)
    assert ex(0) == pytest.approx(0.3)
    assert ex(3) == pytest.approx(0.15)
    with pytest.raises(ValueError):
        make_schedule("theoretical", eta=1.0, k0=0)
    with pytest.raises(ValueError):
        make_schedule("experimental", c=0.0)
    with pytest.raises(ValueError):
        make_schedule("adaptive", c=1.0)
