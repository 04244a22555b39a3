"""Finite Markov reward process: exact solutions and projection utilities.

The model is the ground truth a simulation runs against: one shared
transition kernel, one reward channel per agent, a discount, an initial
distribution, and a feature row per state.  Everything here is dense
linear algebra; the documented ceiling is ``num_states <= 4096``.

Value convention: the target value function averages the per-agent
rewards, ``r*(s) = (1/N) sum_n sum_s' P(s,s') R_n(s,s')`` and
``V = r* + discount * P V``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence, TextIO

import numpy as np
import scipy.linalg

from .errors import NotErgodic, SingularSystem

MAX_STATES = 4096

_SIMPLEX_TOL = 1e-12
_NORM_TOL = 1e-12
_RANK_TOL = 1e-10  # absolute threshold on pivoted-QR diagonal

# Callback form of the reward tensor: (s, s') -> length-num_agents vector.
RewardFn = Callable[[int, int], np.ndarray]


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class MrpModel:
    """Immutable Markov reward process shared by all agents.

    ``rewards`` is a dense (num_agents, S, S) tensor.  Generated
    environments may instead supply ``reward_fn`` mapping a transition
    (s, s') to the length-num_agents reward vector, which avoids
    materializing the tensor; expectations then iterate over nonzero
    transition entries only.  Exactly one of the two must be given.
    """

    num_states: int
    num_agents: int
    transition: np.ndarray
    discount: float
    initial_dist: np.ndarray
    features: np.ndarray
    rewards: np.ndarray | None = None
    reward_fn: RewardFn | None = None

    def __post_init__(self) -> None:
        s, n = self.num_states, self.num_agents
        if not (1 <= s <= MAX_STATES):
            raise ValueError(f"num_states must be in [1, {MAX_STATES}], got {s}")
        if n < 1:
            raise ValueError("num_agents must be positive")
        if not (0.0 < self.discount < 1.0):
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")

        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "initial_dist", _frozen(self.initial_dist))
        object.__setattr__(self, "features", _frozen(self.features))

        p = self.transition
        if p.shape != (s, s):
            raise ValueError(f"transition must be {s}x{s}, got {p.shape}")
        if np.any(p < 0.0):
            raise ValueError("transition entries must be nonnegative")
        bad = np.abs(p.sum(axis=1) - 1.0) > _SIMPLEX_TOL
        if np.any(bad):
            raise ValueError(f"transition rows {np.flatnonzero(bad).tolist()} do not sum to 1")

        if self.initial_dist.shape != (s,):
            raise ValueError("initial_dist must have one entry per state")
        if np.any(self.initial_dist < 0.0) or abs(self.initial_dist.sum() - 1.0) > _SIMPLEX_TOL:
            raise ValueError("initial_dist must be a probability vector")

        phi = self.features
        if phi.ndim != 2 or phi.shape[0] != s:
            raise ValueError("features must be a (num_states, dim) matrix")
        d = phi.shape[1]
        norms = np.linalg.norm(phi, axis=1)
        if np.any(norms > 1.0 + _NORM_TOL):
            raise ValueError("feature rows must have Euclidean norm <= 1")
        if d > s:
            raise ValueError(f"feature dim {d} exceeds num_states {s}; cannot be full rank")
        r = scipy.linalg.qr(phi, mode="r", pivoting=True)[0]
        rank = int(np.sum(np.abs(np.diag(r)) > _RANK_TOL))
        if rank < d:
            raise ValueError(f"features are rank {rank} < {d} (pivoted QR, tol {_RANK_TOL})")

        if (self.rewards is None) == (self.reward_fn is None):
            raise ValueError("exactly one of rewards / reward_fn must be given")
        if self.rewards is not None:
            object.__setattr__(self, "rewards", _frozen(self.rewards))
            if self.rewards.shape != (n, s, s):
                raise ValueError(f"rewards must be ({n}, {s}, {s}), got {self.rewards.shape}")
            if not np.all(np.isfinite(self.rewards)):
                raise ValueError("rewards must be finite")

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def transition_rewards(self, s: int, s_next: int) -> np.ndarray:
        """Length-num_agents reward vector for the transition s -> s_next."""
        if self.rewards is not None:
            return self.rewards[:, s, s_next]
        return np.asarray(self.reward_fn(s, s_next), dtype=float)

    def expected_rewards(self) -> np.ndarray:
        """(num_agents, S) matrix of E[R_n(s, s') | s] under the kernel."""
        if self.rewards is not None:
            return np.einsum("sz,nsz->ns", self.transition, self.rewards)
        out = np.zeros((self.num_agents, self.num_states))
        for s in range(self.num_states):
            for s2 in np.flatnonzero(self.transition[s]):
                out[:, s] += self.transition[s, s2] * self.transition_rewards(s, int(s2))
        return out

    def materialize_rewards(self) -> np.ndarray:
        """Dense (num_agents, S, S) reward tensor (materializes callbacks)."""
        if self.rewards is not None:
            return self.rewards
        out = np.zeros((self.num_agents, self.num_states, self.num_states))
        for s in range(self.num_states):
            for s2 in range(self.num_states):
                out[:, s, s2] = self.transition_rewards(s, s2)
        return out


def restrict_agents(model: MrpModel, indices: Sequence[int]) -> MrpModel:
    """Model whose reward channels are the given subset, in the given order.

    Used by the runner to evaluate objectives over honest agents only while
    the full environment keeps streaming rewards to every agent.
    """
    idx = [int(i) for i in indices]
    if len(idx) == 0:
        raise ValueError("cannot restrict to zero agents")
    if any(i < 0 or i >= model.num_agents for i in idx):
        raise ValueError("restriction index out of range")
    if list(idx) == list(range(model.num_agents)):
        return model
    if model.rewards is not None:
        return replace(model, num_agents=len(idx), rewards=model.rewards[idx], reward_fn=None)
    base = model.reward_fn
    sel = np.asarray(idx, dtype=int)
    return replace(
        model,
        num_agents=len(idx),
        rewards=None,
        reward_fn=lambda s, s2: np.asarray(base(s, s2), dtype=float)[sel],
    )


@dataclass(frozen=True)
class StationaryDistribution:
    """Probability vector fixed under the kernel (rho^T P = rho^T)."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "probs", _frozen(self.probs))
        if np.any(self.probs < 0.0) or abs(self.probs.sum() - 1.0) > _SIMPLEX_TOL:
            raise ValueError("stationary probabilities must form a simplex point")


def _check_ergodic(p: np.ndarray) -> None:
    """Irreducibility + aperiodicity of the support graph, else NotErgodic."""
    s = p.shape[0]
    support = [np.flatnonzero(p[i] > 0.0) for i in range(s)]

    def reachable(adj) -> np.ndarray:
        seen = np.zeros(s, dtype=bool)
        seen[0] = True
        stack = [0]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(int(v))
        return seen

    if not reachable(support).all():
        raise NotErgodic("support graph is not strongly connected (forward)")
    rsupport = [np.flatnonzero(p[:, i] > 0.0) for i in range(s)]
    if not reachable(rsupport).all():
        raise NotErgodic("support graph is not strongly connected (backward)")

    # BFS levels from state 0; gcd over level[u]+1-level[v] across edges
    # equals the chain period on a strongly connected graph.
    level = np.full(s, -1, dtype=int)
    level[0] = 0
    queue = [0]
    while queue:
        u = queue.pop(0)
        for v in support[u]:
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(int(v))
    g = 0
    for u in range(s):
        for v in support[u]:
            g = math.gcd(g, abs(level[u] + 1 - level[v]))
    if g != 1:
        raise NotErgodic(f"support graph is periodic with period {g}")


def stationary_distribution(model: MrpModel) -> StationaryDistribution:
    """Solve (P^T - I) rho = 0 with sum(rho) = 1 after an ergodicity check."""
    p = model.transition
    _check_ergodic(p)
    s = model.num_states
    a = np.vstack([p.T - np.eye(s), np.ones((1, s))])
    b = np.zeros(s + 1)
    b[-1] = 1.0
    rho, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < s:
        raise SingularSystem(f"augmented stationary system has rank {rank} < {s}")
    return StationaryDistribution(probs=rho)


def global_reward_vector(model: MrpModel) -> np.ndarray:
    """r*(s) = (1/N) sum_n sum_s' P(s,s') R_n(s,s')."""
    return model.expected_rewards().mean(axis=0)


def exact_value_function(model: MrpModel) -> np.ndarray:
    """V solving (I - discount * P) V = r*."""
    s = model.num_states
    a = np.eye(s) - model.discount * model.transition
    try:
        return np.linalg.solve(a, global_reward_vector(model))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - discount<1 keeps it regular
        raise SingularSystem(str(exc)) from exc


def approximation_objective(
    model: MrpModel,
    rho: StationaryDistribution,
    theta: np.ndarray,
    *,
    value: np.ndarray | None = None,
) -> float:
    """F(theta) = 1/2 sum_s rho(s) (phi(s)^T theta - V(s))^2.

    ``value`` lets callers reuse a precomputed exact value function.
    """
    v = exact_value_function(model) if value is None else value
    err = model.features @ np.asarray(theta, dtype=float) - v
    return 0.5 * float(rho.probs @ (err * err))


def weighted_projection(model: MrpModel, rho: StationaryDistribution) -> tuple[np.ndarray, float]:
    """Minimize F: solve the normal equations (Phi^T D Phi) theta = Phi^T D V."""
    phi = model.features
    w = rho.probs[:, None] * phi
    gram = phi.T @ w
    eigs = np.linalg.eigvalsh(gram)
    if eigs[-1] <= 0.0 or eigs[0] <= _RANK_TOL * eigs[-1]:
        raise SingularSystem("weighted Gram matrix is rank deficient")
    v = exact_value_function(model)
    theta = np.linalg.solve(gram, w.T @ v)
    return theta, approximation_objective(model, rho, theta, value=v)


# ---------------------------------------------------------------------------
# Structured-text serialization.  Floats are printed with 17 significant
# digits, which round-trips every finite 64-bit value bit-exactly.


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_row(row: np.ndarray) -> str:
    return " ".join(_fmt(x) for x in row)


def write_model(model: MrpModel, f: TextIO) -> None:
    """Write the documented text form (materializes callback rewards)."""
    s, n = model.num_states, model.num_agents
    f.write("mrp-model v1\n")
    f.write(f"num_states {s}\n")
    f.write(f"num_agents {n}\n")
    f.write(f"feature_dim {model.feature_dim}\n")
    f.write(f"discount {_fmt(model.discount)}\n")
    f.write("initial_dist\n")
    f.write(_fmt_row(model.initial_dist) + "\n")
    f.write("transition\n")
    for row in model.transition:
        f.write(_fmt_row(row) + "\n")
    f.write("features\n")
    for row in model.features:
        f.write(_fmt_row(row) + "\n")
    f.write("rewards\n")
    dense = model.materialize_rewards()
    for a in range(n):
        f.write(f"agent {a}\n")
        for row in dense[a]:
            f.write(_fmt_row(row) + "\n")
    f.write("end\n")


def save_model(model: MrpModel, path: str) -> None:
    with open(path, "w", encoding="ascii") as f:
        write_model(model, f)


class _Lines:
    def __init__(self, f: TextIO) -> None:
        self._lines = f.read().splitlines()
        self._at = 0

    def next(self) -> str:
        while self._at < len(self._lines):
            line = self._lines[self._at].strip()
            self._at += 1
            if line:
                return line
        raise ValueError("unexpected end of model file")

    def expect(self, token: str) -> None:
        got = self.next()
        if got != token:
            raise ValueError(f"model file line {self._at}: expected {token!r}, got {got!r}")

    def scalar(self, key: str) -> str:
        parts = self.next().split()
        if len(parts) != 2 or parts[0] != key:
            raise ValueError(f"model file line {self._at}: expected '{key} <value>'")
        return parts[1]

    def floats(self, count: int) -> np.ndarray:
        parts = self.next().split()
        if len(parts) != count:
            raise ValueError(f"model file line {self._at}: expected {count} values, got {len(parts)}")
        return np.array([float(x) for x in parts])


def read_model(f: TextIO) -> MrpModel:
    lines = _Lines(f)
    lines.expect("mrp-model v1")
    s = int(lines.scalar("num_states"))
    n = int(lines.scalar("num_agents"))
    d = int(lines.scalar("feature_dim"))
    discount = float(lines.scalar("discount"))
    lines.expect("initial_dist")
    initial = lines.floats(s)
    lines.expect("transition")
    transition = np.vstack([lines.floats(s) for _ in range(s)])
    lines.expect("features")
    features = np.vstack([lines.floats(d) for _ in range(s)])
    lines.expect("rewards")
    rewards = np.zeros((n, s, s))
    for a in range(n):
        lines.expect(f"agent {a}")
        rewards[a] = np.vstack([lines.floats(s) for _ in range(s)])
    lines.expect("end")
    return MrpModel(
        num_states=s,
        num_agents=n,
        transition=transition,
        discount=discount,
        initial_dist=initial,
        features=features,
        rewards=rewards,
    )


def load_model(path: str) -> MrpModel:
    with open(path, "r", encoding="ascii") as f:
        return read_model(f)
