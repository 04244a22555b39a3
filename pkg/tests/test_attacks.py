"""Byzantine message construction and attack transparency."""
from __future__ import annotations

import numpy as np
import pytest

from byztd.attacks import ATTACK_KINDS, AttackModel, byzantine_message
from byztd.environments import RandomMrpSpec, build_random_mrp
from byztd.errors import NoHonestAgents
from byztd.runner import Simulation
from byztd.td import TdParams, make_schedule
from byztd.topology import build_complete


def test_attack_model_validation():
    assert AttackModel().kind == "none"
    with pytest.raises(ValueError):
        AttackModel(kind="meteor_strike")
    with pytest.raises(ValueError):
        AttackModel(kind="gaussian_noise", noise_std=-0.5)
    assert set(ATTACK_KINDS) == {"none", "sign_flip", "same_value", "gaussian_noise"}


def test_none_returns_independent_copy():
    shadow = np.array([1.0, -2.0])
    out = byzantine_message(AttackModel("none"), 9, {}, shadow, np.random.default_rng(0))
    assert np.array_equal(out, shadow)
    out[0] = 99.0
    assert shadow[0] == 1.0


def test_sign_flip_negates_shadow():
    shadow = np.array([0.5, -1.5, 0.0])
    out = byzantine_message(AttackModel("sign_flip"), 9, {}, shadow, np.random.default_rng(0))
    assert np.array_equal(out, -shadow)


def test_same_value_is_zero():
    out = byzantine_message(
        AttackModel("same_value"), 9, {}, np.array([3.0, 4.0]), np.random.default_rng(0)
    )
    assert np.array_equal(out, np.zeros(2))


def test_gaussian_zero_std_copies_victim():
    honest = {2: np.array([1.0, 2.0]), 5: np.array([-1.0, 0.5])}
    atk = AttackModel("gaussian_noise", noise_std=0.0)
    out = byzantine_message(atk, 9, honest, np.zeros(2), np.random.default_rng(3), victim=5)
    assert np.array_equal(out, honest[5])
    # without an override the pick comes from the rng, uniform over ids
    picks = set()
    for seed in range(40):
        out = byzantine_message(atk, 9, honest, np.zeros(2), np.random.default_rng(seed))
        picks.add(tuple(out))
    assert picks == {(1.0, 2.0), (-1.0, 0.5)}


def test_gaussian_deterministic_given_rng():
    honest = {0: np.array([0.0, 0.0, 0.0])}
    atk = AttackModel("gaussian_noise", noise_std=2.0)
    a = byzantine_message(atk, 9, honest, np.zeros(3), np.random.default_rng(7))
    b = byzantine_message(atk, 9, honest, np.zeros(3), np.random.default_rng(7))
    assert np.array_equal(a, b)
    c = byzantine_message(atk, 9, honest, np.zeros(3), np.random.default_rng(8))
    assert not np.array_equal(a, c)


def test_gaussian_noise_scale():
    honest = {0: np.zeros(2000)}
    atk = AttackModel("gaussian_noise", noise_std=3.0)
    out = byzantine_message(atk, 9, honest, np.zeros(2000), np.random.default_rng(1))
    assert out.std() == pytest.approx(3.0, rel=0.1)


def test_gaussian_requires_honest_targets():
    atk = AttackModel("gaussian_noise")
    with pytest.raises(NoHonestAgents):
        byzantine_message(atk, 9, {}, np.zeros(2), np.random.default_rng(0))
    with pytest.raises(NoHonestAgents):
        byzantine_message(atk, 9, {0: np.zeros(2)}, np.zeros(2),
                          np.random.default_rng(0), victim=3)


def test_none_attack_run_matches_all_honest_run():
    """A 'none' Byzantine agent runs the honest protocol on its shadow, so
    the whole trajectory must be bit-identical to the same network with
    that agent marked honest."""
    model = build_random_mrp(
        RandomMrpSpec(num_states=6, num_agents=4, feature_dim=3,
                      reward_heterogeneity=0.8, seed=5)
    )
    params = TdParams(lam=0.5, discount=model.discount)
    sched = make_schedule("experimental", c=0.3)
    sim_h = Simulation(model, build_complete(4, 0, 1), params, sched, aggregation="trim")
    sim_b = Simulation(
        model, build_complete(3, 1, 1), params, sched,
        aggregation="trim", attack=AttackModel("none"),
    )
    sa = sim_h.initial_state(chain_seed=11, attack_seed=2)
    sb = sim_b.initial_state(chain_seed=11, attack_seed=2)
    for _ in range(150):
        sim_h.run_step(sa)
        sim_b.run_step(sb)
    assert sa.state == sb.state
    assert np.array_equal(sa.thetas, sb.thetas)
    assert np.array_equal(sa.trace.z, sb.trace.z)
