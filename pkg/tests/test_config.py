"""INI experiment config parsing and hashing."""
from __future__ import annotations

import pytest

from byztd.config import ExperimentConfig, parse_config, parse_config_text
from byztd.environments import GridNavSpec, RandomMrpSpec
from byztd.errors import ConfigError

FULL = """
[environment]
kind = random
num_states = 20
num_agents = 9
feature_dim = 5
reward_scale = 2.0
reward_heterogeneity = 0.7   ; inline comment
seed = 4

[topology]
kind = complete
n_honest = 7
n_byz = 2
q = 2

[algorithm]
aggregation = trim
lambda = 0.5

[attack]
kind = gaussian_noise
noise_std = 2.5
fixed_victim = yes

[schedule]
kind = experimental
c = 0.4

[run]
steps = 1000
trials = 3
master_seed = 17
out = results/demo
"""


def test_full_parse():
    cfg = parse_config_text(FULL)
    env = cfg.environment
    assert isinstance(env, RandomMrpSpec)
    assert env.num_states == 20 and env.num_agents == 9 and env.feature_dim == 5
    assert env.reward_scale == 2.0 and env.reward_heterogeneity == 0.7 and env.seed == 4
    assert env.discount == 0.95  # default
    t = cfg.topology
    assert t.kind == "complete" and t.n_honest == 7 and t.n_byz == 2 and t.q == 2
    assert cfg.aggregation == "trim" and cfg.lam == 0.5
    a = cfg.attack
    assert a.kind == "gaussian_noise" and a.noise_std == 2.5 and a.fixed_victim is True
    assert cfg.schedule.kind == "experimental" and cfg.schedule.c == 0.4
    assert cfg.steps == 1000 and cfg.trials == 3 and cfg.master_seed == 17
    assert cfg.out == "results/demo"


MINIMAL = """
[environment]
kind = grid
grid_side = 3
num_movers = 1
num_agents = 4
feature_dim = 6

[topology]
kind = complete
n_honest = 4

[algorithm]
aggregation = mean
lambda = 0

[schedule]
kind = theoretical
eta = 4.0
k0 = 50

[run]
steps = 10
"""


def test_minimal_defaults():
    cfg = parse_config_text(MINIMAL)
    assert isinstance(cfg.environment, GridNavSpec)
    assert cfg.environment.collision_penalty == 1.0
    assert cfg.topology.n_byz == 0 and cfg.topology.q == 0
    assert cfg.attack.kind == "none"       # [attack] section optional
    assert cfg.schedule.eta == 4.0 and cfg.schedule.k0 == 50
    assert cfg.trials == 1 and cfg.master_seed == 0 and cfg.out is None


def test_erdos_renyi_topology_fields():
    text = FULL.replace(
        "kind = complete\nn_honest = 7\nn_byz = 2\nq = 2",
        "kind = erdos_renyi\nn_total = 10\nedge_prob = 0.6\nbyz_prob = 0.2\n"
        "per_neighborhood = true",
    )
    t = parse_config_text(text).topology
    assert t.kind == "erdos_renyi" and t.n_total == 10
    assert t.edge_prob == 0.6 and t.byz_prob == 0.2
    assert t.per_neighborhood is True and t.seed is None


@pytest.mark.parametrize(
    "needle,replacement,fragment",
    [
        ("[schedule]\nkind = experimental\nc = 0.4\n", "", "missing [schedule] section"),
        ("steps = 1000", "", "[run] missing key 'steps'"),
        ("lambda = 0.5", "lambda = 1.5", "[algorithm] lambda"),
        ("lambda = 0.5", "lambda = maybe", "[algorithm] lambda"),
        ("aggregation = trim", "aggregation = median", "[algorithm] aggregation"),
        ("kind = random", "kind = lava", "[environment] kind"),
        ("steps = 1000", "steps = 0", "steps and trials must be positive"),
        ("fixed_victim = yes", "fixed_victim = sometimes", "[attack] fixed_victim"),
        ("noise_std = 2.5", "noise_std = -1", "noise_std"),
        ("n_honest = 7", "n_honest = 7\nwingspan = 3", "[topology] unknown keys: ['wingspan']"),
    ],
)
def test_diagnostics_name_section_and_key(needle, replacement, fragment):
    assert needle in FULL
    with pytest.raises(ConfigError, match=None) as err:
        parse_config_text(FULL.replace(needle, replacement))
    assert fragment in str(err.value)


def test_parse_config_reads_file(tmp_path):
    p = tmp_path / "exp.ini"
    p.write_text(FULL)
    assert parse_config(str(p)) == parse_config_text(FULL)
    with pytest.raises(ConfigError, match="cannot read config"):
        parse_config(str(tmp_path / "absent.ini"))


def test_config_hash_stable_and_sensitive():
    a = parse_config_text(FULL)
    b = parse_config_text(FULL + "\n")
    assert a.config_hash() == b.config_hash()
    assert len(a.config_hash()) == 16
    c = parse_config_text(FULL.replace("lambda = 0.5", "lambda = 0.6"))
    assert c.config_hash() != a.config_hash()
    # output path is routing, not an experiment identity
    d = parse_config_text(FULL.replace("out = results/demo", "out = elsewhere"))
    assert d.config_hash() == a.config_hash()


def test_canonical_mentions_every_knob():
    text = parse_config_text(FULL).canonical()
    for token in ("aggregation=trim", "lambda=0.5", "steps=1000", "master_seed=17"):
        assert token in text
