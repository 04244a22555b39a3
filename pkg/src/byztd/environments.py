"""Seeded environment builders producing MrpModel instances.

Two families: fully mixing random chains with a calibrated reward
heterogeneity level, and a grid navigation task with movers following a
fixed uniform random-walk policy.  Builders are deterministic functions
of their spec (all randomness flows through np.random.default_rng(seed)).

Environment agent counts cover every agent in the experiment topology,
Byzantine ones included; the runner restricts to the honest subset when
evaluating objectives.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpec
from .mrp import MAX_STATES, MrpModel

_MIN_PROB = 1e-6  # floor keeping random kernels strictly positive


@dataclass(frozen=True)
class RandomMrpSpec:
    """Random ergodic chain with tunable per-transition reward disagreement.

    reward_heterogeneity is the target for the measured reward variation
    delta: the max over supported transitions of the across-agent standard
    deviation of rewards comes out at exactly this value (heterogeneity 0
    gives identical rewards for every agent).
    """

    num_states: int
    num_agents: int
    feature_dim: int
    reward_scale: float = 1.0
    reward_heterogeneity: float = 0.0
    seed: int = 0
    discount: float = 0.95


def build_random_mrp(spec: RandomMrpSpec) -> MrpModel:
    """Draw order: transition rows, base rewards, perturbations, features,
    initial distribution.  Fixed so seeds pin every field."""
    s, n, d = spec.num_states, spec.num_agents, spec.feature_dim
    if s < 2 or s > MAX_STATES:
        raise InvalidSpec(f"num_states must be in [2, {MAX_STATES}]")
    if n < 1:
        raise InvalidSpec("num_agents must be positive")
    if not (1 <= d <= s):
        raise InvalidSpec("feature_dim must be in [1, num_states]")
    if spec.reward_heterogeneity < 0.0 or spec.reward_scale < 0.0:
        raise InvalidSpec("reward_scale and reward_heterogeneity must be nonnegative")

    rng = np.random.default_rng(spec.seed)

    # Dirichlet-style rows: positive gamma draws, normalized, floored so
    # every transition is supported (irreducible and aperiodic for free).
    raw = rng.gamma(2.0, 1.0, size=(s, s))
    p = raw / raw.sum(axis=1, keepdims=True)
    p = np.maximum(p, _MIN_PROB)
    p /= p.sum(axis=1, keepdims=True)

    base = spec.reward_scale * rng.normal(size=(s, s))
    eps = rng.normal(size=(n, s, s))
    eps -= eps.mean(axis=0, keepdims=True)
    if spec.reward_heterogeneity > 0.0 and n > 1:
        # Scale so the worst supported transition hits the target exactly:
        # measured variation is max over transitions of mean_n eps_n^2.
        worst = float(np.mean(eps * eps, axis=0).max())
        if worst <= 0.0:
            raise InvalidSpec("degenerate perturbation draw; change the seed")
        eps *= spec.reward_heterogeneity / np.sqrt(worst)
    else:
        eps[:] = 0.0
    rewards = base[None, :, :] + eps

    phi = rng.normal(size=(s, d))
    phi /= np.linalg.norm(phi, axis=1).max()

    initial = rng.dirichlet(np.ones(s))

    return MrpModel(
        num_states=s,
        num_agents=n,
        transition=p,
        discount=spec.discount,
        initial_dist=initial,
        features=phi,
        rewards=rewards,
    )


@dataclass(frozen=True)
class GridNavSpec:
    """Movers random-walking a square grid; each agent scores proximity of
    the movers to its own landmark.

    Movers pick one of {up, left, right, down} uniformly; moves off the
    edge are self-transitions, so single-mover rows hold exact multiples
    of 1/4 (1/16 for two movers).  Rewards attach to the destination
    state: minus the summed Euclidean distance from each mover to the
    agent's landmark, minus collision_penalty when two movers share a
    cell.  Landmarks are sampled uniformly from the seed.
    """

    grid_side: int
    num_movers: int
    num_agents: int
    collision_penalty: float = 1.0
    seed: int = 0
    feature_dim: int = 8
    discount: float = 0.95


def _single_mover_kernel(side: int) -> np.ndarray:
    cells = side * side
    k = np.zeros((cells, cells))
    for r in range(side):
        for c in range(side):
            here = r * side + c
            for dr, dc in ((-1, 0), (0, -1), (0, 1), (1, 0)):
                r2, c2 = r + dr, c + dc
                if 0 <= r2 < side and 0 <= c2 < side:
                    k[here, r2 * side + c2] += 0.25
                else:
                    k[here, here] += 0.25
    return k


def build_grid_navigation(spec: GridNavSpec) -> MrpModel:
    side, movers, n = spec.grid_side, spec.num_movers, spec.num_agents
    if side < 2:
        raise InvalidSpec("grid_side must be at least 2")
    if movers not in (1, 2):
        raise InvalidSpec("num_movers must be 1 or 2")
    if n < 1:
        raise InvalidSpec("num_agents must be positive")
    cells = side * side
    s = cells**movers
    if s > MAX_STATES:
        raise InvalidSpec(f"joint state space {s} exceeds the cap {MAX_STATES}")
    if not (1 <= spec.feature_dim <= s):
        raise InvalidSpec("feature_dim must be in [1, joint states]")

    rng = np.random.default_rng(spec.seed)
    landmarks = rng.integers(0, cells, size=n)

    single = _single_mover_kernel(side)
    p = single if movers == 1 else np.kron(single, single)

    # Joint state s encodes mover cells most-significant-first:
    # positions (c0, c1) <-> s = c0 * cells + c1.
    coords = np.stack(np.divmod(np.arange(cells), side), axis=1).astype(float)
    dists = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=2)  # cell x cell

    state_reward = np.zeros((n, s))
    if movers == 1:
        for a in range(n):
            state_reward[a] = -dists[:, landmarks[a]]
    else:
        c0, c1 = np.divmod(np.arange(s), cells)
        for a in range(n):
            state_reward[a] = -(dists[c0, landmarks[a]] + dists[c1, landmarks[a]])
        state_reward[:, c0 == c1] -= spec.collision_penalty
    state_reward.setflags(write=False)

    def reward_fn(_s: int, s_next: int) -> np.ndarray:
        return state_reward[:, s_next]

    # One-hot joint-state features pushed through a fixed random
    # projection (row lookup of a normal matrix), then norm-capped.
    phi = rng.normal(size=(s, spec.feature_dim))
    phi /= np.linalg.norm(phi, axis=1).max()

    return MrpModel(
        num_states=s,
        num_agents=n,
        transition=p,
        discount=spec.discount,
        initial_dist=np.full(s, 1.0 / s),
        features=phi,
        rewards=None,
        reward_fn=reward_fn,
    )
