"""Error metrics, streaming means, and the trace CSV format."""
from __future__ import annotations

import io
import math

import numpy as np
import pytest

from byztd.errors import TooShort
from byztd.metrics import (
    MetricsRecorder,
    MetricsTrace,
    consensus_error,
    consensus_rate_diagnostic,
    degree_of_unsaturation,
    fixed_point_distance,
    load_trace_csv,
    measured_reward_variation,
    read_trace_csv,
    save_trace_csv,
    squared_bellman_error,
    write_trace_csv,
)
from byztd.mrp import MrpModel
from byztd.topology import NetworkTopology, build_complete


def two_state_model(rewards=None, reward_fn=None):
    return MrpModel(
        num_states=2,
        num_agents=2,
        transition=np.array([[0.5, 0.5], [1.0, 0.0]]),
        discount=0.9,
        initial_dist=np.array([1.0, 0.0]),
        features=np.eye(2),
        rewards=rewards,
        reward_fn=reward_fn,
    )


def brute_force_sbe(model, thetas, s):
    total = 0.0
    for n in range(model.num_agents):
        pred = float(model.features[s] @ thetas[n])
        target = 0.0
        for s2 in range(model.num_states):
            p = model.transition[s, s2]
            if p == 0.0:
                continue
            r = model.transition_rewards(s, s2)[n]
            target += p * (r + model.discount * float(model.features[s2] @ thetas[n]))
        total += (pred - target) ** 2
    return total / model.num_agents


def test_sbe_matches_brute_force_dense_and_callback():
    rng = np.random.default_rng(0)
    re = rng.normal(size=(2, 2, 2))
    dense = two_state_model(rewards=re)
    callback = two_state_model(reward_fn=lambda s, s2: re[:, s, s2])
    thetas = rng.normal(size=(2, 2))
    for s in (0, 1):
        want = brute_force_sbe(dense, thetas, s)
        assert squared_bellman_error(dense, thetas, s) == pytest.approx(want, rel=1e-12)
        assert squared_bellman_error(callback, thetas, s) == pytest.approx(want, rel=1e-12)


def test_consensus_error_hand_case():
    thetas = np.array([[0.0], [1.0], [2.0]])
    assert consensus_error(thetas) == pytest.approx(2.0 / 3.0)
    assert consensus_error(np.ones((4, 3))) == 0.0


def test_fixed_point_distance_hand_case():
    thetas = np.array([[1.0, 0.0], [0.0, 1.0]])
    target = np.array([0.0, 0.0])
    assert fixed_point_distance(thetas, target) == pytest.approx(1.0)


def test_degree_of_unsaturation():
    assert degree_of_unsaturation(build_complete(7, 2, 2)) == pytest.approx(0.4)
    assert degree_of_unsaturation(build_complete(4, 0, 0)) == pytest.approx(0.0)
    # star: leaves hear only the hub, so the bottleneck denominator is 2
    n = 6
    edges = set()
    for leaf in range(1, n):
        edges.add((0, leaf))
        edges.add((leaf, 0))
    star = NetworkTopology(
        honest=tuple(range(n)), byzantine=(), edges=frozenset(edges),
        trim={a: 0 for a in range(n)},
    )
    assert degree_of_unsaturation(star) == pytest.approx(n / 2 - 1)


def test_measured_reward_variation_supported_only():
    re = np.zeros((2, 2, 2))
    re[0, 0, 0], re[1, 0, 0] = 3.0, -1.0          # supported, var = 4
    re[0, 1, 1], re[1, 1, 1] = 100.0, -100.0      # P[1,1] = 0: ignored
    assert measured_reward_variation(two_state_model(rewards=re)) == pytest.approx(4.0)
    cb = two_state_model(reward_fn=lambda s, s2: re[:, s, s2])
    assert measured_reward_variation(cb) == pytest.approx(4.0)


def test_recorder_prefix_means_match_cumsum():
    rng = np.random.default_rng(1)
    sbe = np.abs(rng.normal(size=5000)) * 10.0 ** rng.integers(-6, 7, size=5000)
    ce = np.abs(rng.normal(size=5000))
    rec = MetricsRecorder()
    for k in range(1, 5001):
        rec.record(k, float(sbe[k - 1]), float(ce[k - 1]), 0.0)
    trace = rec.finish()
    ks = np.arange(1, 5001)
    assert np.allclose(trace.msbe, np.cumsum(sbe) / ks, rtol=1e-12)
    assert np.allclose(trace.mce, np.cumsum(ce) / ks, rtol=1e-12)
    assert math.isnan(trace.mce_rate_ratio[0])
    want3 = trace.mce[2] * 3 / math.log(3)
    assert trace.mce_rate_ratio[2] == pytest.approx(want3, rel=1e-12)
    assert trace.steps[0] == 1 and trace.steps[-1] == 5000


def flat_ratio_trace(n, level=5.0, jitter=0.0, seed=0):
    rng = np.random.default_rng(seed)
    ks = np.arange(1, n + 1)
    ratio = level + jitter * rng.normal(size=n)
    ratio[0] = np.nan
    z = np.zeros(n)
    return MetricsTrace(steps=ks, sbe=z, ce=z, msbe=z, mce=z,
                        mce_rate_ratio=ratio, fixed_point_dist=z)


def test_consensus_rate_diagnostic_plateau():
    mean, spread = consensus_rate_diagnostic(flat_ratio_trace(4000, 5.0, 0.01))
    assert mean == pytest.approx(5.0, rel=0.01)
    assert spread < 0.05
    growing = flat_ratio_trace(4000, 5.0, 0.0)
    growing.mce_rate_ratio[:] = np.arange(4000, dtype=float)
    _, bad_spread = consensus_rate_diagnostic(growing)
    assert bad_spread > 0.5


def test_consensus_rate_diagnostic_guards():
    with pytest.raises(TooShort):
        consensus_rate_diagnostic(flat_ratio_trace(999))
    with pytest.raises(ValueError):
        consensus_rate_diagnostic(flat_ratio_trace(2000), window=0.0)


def test_trace_csv_round_trip(tmp_path):
    rec = MetricsRecorder()
    rng = np.random.default_rng(2)
    for k in range(1, 41):
        rec.record(k, float(rng.normal() ** 2), float(rng.normal() ** 2), float(rng.normal() ** 2))
    rec.diverged_at = 41
    trace = rec.finish(meta={"lambda": 0.5})
    path = tmp_path / "trial.csv"
    save_trace_csv(trace, str(path), header={"lambda": 0.5, "attack": "sign_flip"})
    back = load_trace_csv(str(path))
    assert np.array_equal(back.steps, trace.steps)
    for col in ("sbe", "ce", "msbe", "mce", "fixed_point_dist"):
        assert np.array_equal(getattr(back, col), getattr(trace, col)), col
    assert math.isnan(back.mce_rate_ratio[0])
    assert np.array_equal(back.mce_rate_ratio[1:], trace.mce_rate_ratio[1:])
    assert back.diverged_at == 41
    assert back.meta["attack"] == "sign_flip"
    assert back.meta["lambda"] == "0.5"


def test_trace_csv_rejects_malformed():
    with pytest.raises(ValueError):
        read_trace_csv(io.StringIO("k,sbe\n1,2\n"))
    with pytest.raises(ValueError):
        read_trace_csv(io.StringIO("# only = meta\n"))


def test_write_trace_sorts_meta_keys():
    rec = MetricsRecorder()
    rec.record(1, 1.0, 1.0, 0.0)
    buf = io.StringIO()
    write_trace_csv(rec.finish(), buf, header={"zeta": 1, "alpha": 2})
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# alpha = 2"
    assert lines[1] == "# zeta = 1"
    assert lines[2].startswith("k,sbe,ce,")
