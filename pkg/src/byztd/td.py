"""Temporal-difference machinery with eligibility traces.

Single-trajectory TD(lambda) under linear function approximation: the
trace, the per-agent stochastic increment, its affine decomposition
g = A^k theta + b^k, the deterministic steady-state pair (A*, b*) with
its fixed point, and the two supported step-size schedules.

All agents observe the same state process, so one trace is shared by
everybody; there is no per-agent trace.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NotNegativeDefinite, SingularSystem
from .mrp import (
    MrpModel,
    StationaryDistribution,
    approximation_objective,
    exact_value_function,
    global_reward_vector,
    weighted_projection,
)


@dataclass(frozen=True)
class TdParams:
    """Trace decay (lam) and discount; discount mirrors the model's."""

    lam: float
    discount: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        if not (0.0 < self.discount < 1.0):
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        # discount < 1 already forces lam * discount < 1


@dataclass(frozen=True)
class EligibilityTrace:
    """Discounted feature sum z^k; step is the index of the last update."""

    z: np.ndarray
    step: int

    @classmethod
    def zero(cls, dim: int) -> "EligibilityTrace":
        return cls(z=np.zeros(dim), step=-1)


def trace_update(trace: EligibilityTrace, params: TdParams, phi_s: np.ndarray) -> EligibilityTrace:
    """z^k = discount * lam * z^{k-1} + phi(s^k)."""
    return EligibilityTrace(
        z=params.discount * params.lam * trace.z + np.asarray(phi_s, dtype=float),
        step=trace.step + 1,
    )


def local_increment(
    theta: np.ndarray,
    reward: float,
    phi_s: np.ndarray,
    phi_next: np.ndarray,
    trace: EligibilityTrace,
    params: TdParams,
) -> np.ndarray:
    """g_n^k(theta) = (r_n^k + (discount * phi' - phi)^T theta) z^k."""
    delta = reward + (params.discount * phi_next - phi_s) @ theta
    return delta * trace.z


def step_matrices(
    phi_s: np.ndarray,
    phi_next: np.ndarray,
    trace: EligibilityTrace,
    rewards: np.ndarray,
    params: TdParams,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Affine pieces of the increment: g_n^k(theta) = A^k theta + b_n^k.

    Returns (A^k, b_bar^k, per-agent b^k) with A^k = z (discount*phi'-phi)^T,
    b_n^k = r_n^k z, and b_bar the across-agent mean.
    """
    z = trace.z
    a_k = np.outer(z, params.discount * np.asarray(phi_next) - np.asarray(phi_s))
    b_k = np.asarray(rewards, dtype=float)[:, None] * z[None, :]
    return a_k, b_k.mean(axis=0), b_k


def discounted_transition_series(p: np.ndarray, discount: float, lam: float) -> np.ndarray:
    """Closed form of sum_{k>=0} lam^k (discount * P)^{k+1}.

    Equals discount * P (I - lam * discount * P)^{-1}; the geometric sum
    converges because lam * discount < 1 and P is row stochastic.
    """
    s = p.shape[0]
    gp = discount * p
    rhs = np.eye(s) - lam * gp
    # right-division: X = gp @ inv(rhs)
    return np.linalg.solve(rhs.T, gp.T).T


@dataclass(frozen=True)
class SteadyState:
    """Expectation limits of the step matrices and their fixed point.

    a_star = Phi^T D (U - I) Phi with U = (1-lam) * discounted series;
    b_star = Phi^T D (I - lam*discount*P)^{-1} r*;
    theta_inf solves a_star theta = -b_star.  sigma_min is the smallest
    singular value of a_star (step-size diagnostics).
    """

    a_star: np.ndarray
    b_star: np.ndarray
    theta_inf: np.ndarray
    sigma_min: float


def steady_state(model: MrpModel, rho: StationaryDistribution, params: TdParams) -> SteadyState:
    phi = model.features
    d_phi = rho.probs[:, None] * phi
    series = discounted_transition_series(model.transition, params.discount, params.lam)
    u = (1.0 - params.lam) * series
    a_star = d_phi.T @ (u @ phi - phi)

    r_star = global_reward_vector(model)
    s = model.num_states
    resolvent = np.eye(s) - params.lam * params.discount * model.transition
    b_star = d_phi.T @ np.linalg.solve(resolvent, r_star)

    sym_eigs = np.linalg.eigvalsh(0.5 * (a_star + a_star.T))
    if sym_eigs[-1] >= 0.0:
        raise NotNegativeDefinite(
            f"symmetric part of A* has max eigenvalue {sym_eigs[-1]:.3e} >= 0"
        )
    try:
        theta_inf = np.linalg.solve(a_star, -b_star)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"A* is singular: {exc}") from exc
    sigma_min = float(np.linalg.svd(a_star, compute_uv=False)[-1])
    return SteadyState(a_star=a_star, b_star=b_star, theta_inf=theta_inf, sigma_min=sigma_min)


def centralized_td_step(
    theta: np.ndarray,
    eta: float,
    rewards: np.ndarray,
    phi_s: np.ndarray,
    phi_next: np.ndarray,
    trace: EligibilityTrace,
    params: TdParams,
) -> np.ndarray:
    """Single-parameter update using the across-agent mean increment."""
    mean_r = float(np.mean(rewards))
    return theta + eta * local_increment(theta, mean_r, phi_s, phi_next, trace, params)


def sandwich_check(
    model: MrpModel, rho: StationaryDistribution, params: TdParams
) -> tuple[float, float, float]:
    """(F at the TD fixed point, min F, upper bound).

    The fixed point's objective is pinched between min F and
    (1 - discount*lam) / (1 - discount) * min F; the bracket collapses to
    min F at lam = 1.
    """
    value = exact_value_function(model)
    ss = steady_state(model, rho, params)
    f_fp = approximation_objective(model, rho, ss.theta_inf, value=value)
    _, f_min = weighted_projection(model, rho)
    upper = (1.0 - params.discount * params.lam) / (1.0 - params.discount) * f_min
    return f_fp, f_min, upper


Schedule = Callable[[int], float]


def make_schedule(kind: str, **kw: float) -> Schedule:
    """Step sizes by 0-based step index k.

    'theoretical': eta / (k + k0)   (requires k0 >= 1 so eta^0 is finite)
    'experimental': c / sqrt(k + 1) (the 1-based c/sqrt(k) rule)
    """
    if kind == "theoretical":
        eta, k0 = float(kw["eta"]), int(kw["k0"])
        if eta <= 0.0 or k0 < 1:
            raise ValueError("theoretical schedule needs eta > 0 and k0 >= 1")
        return lambda k: eta / (k + k0)
    if kind == "experimental":
        c = float(kw["c"])
        if c <= 0.0:
            raise ValueError("experimental schedule needs c > 0")
        return lambda k: c / np.sqrt(k + 1.0)
    raise ValueError(f"unknown schedule kind {kind!r}")
