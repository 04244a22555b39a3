"""Run metrics, their running means, and the CSV trace format.

Per step k (1-based, the parameter after k updates evaluated at the k-th
state): squared Bellman error averaged over honest agents, consensus
error, their prefix means (compensated summation so 200k-step means stay
exact to ~1e-12), the consensus-rate diagnostic MCE * k / ln k, and the
distance to the deterministic fixed point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, TextIO

import numpy as np

from .errors import TooShort
from .mrp import MrpModel
from .topology import NetworkTopology, in_neighbors


def squared_bellman_error(model: MrpModel, thetas: np.ndarray, s: int) -> float:
    """(1/N) sum_n (phi(s)^T th_n - sum_s' P(s,s')(R_n(s,s') + g phi(s')^T th_n))^2.

    thetas is (N, D) over the model's agents; s is the current state.
    Iterates supported transitions only, so callback-reward models pay
    for nonzero entries, not the dense row.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    p_row = model.transition[s]
    nz = np.flatnonzero(p_row > 0.0)
    probs = p_row[nz]
    if model.rewards is not None:
        exp_r = model.rewards[:, s, nz] @ probs
    else:
        exp_r = np.zeros(model.num_agents)
        for w, s2 in zip(probs, nz):
            exp_r += w * model.transition_rewards(s, int(s2))
    coef = model.features[s] - model.discount * (probs @ model.features[nz])
    resid = thetas @ coef - exp_r
    return float(np.mean(resid * resid))


def consensus_error(thetas: np.ndarray) -> float:
    """(1/N) sum_n ||theta_n - mean theta||^2."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    centered = thetas - thetas.mean(axis=0, keepdims=True)
    return float(np.mean(np.sum(centered * centered, axis=1)))


def fixed_point_distance(thetas: np.ndarray, theta_inf: np.ndarray) -> float:
    """(1/N) sum_n ||theta_n - theta_inf||^2."""
    diff = np.atleast_2d(np.asarray(thetas, dtype=float)) - np.asarray(theta_inf)
    return float(np.mean(np.sum(diff * diff, axis=1)))


def degree_of_unsaturation(topo: NetworkTopology) -> float:
    """N / min_n (N_n + B_n - 2 q_n + 1) - 1: how far the network sits
    from every honest agent hearing everyone after trimming."""
    n = len(topo.honest)
    denoms = []
    for a in topo.honest:
        h_in, b_in = in_neighbors(topo, a)
        denoms.append(len(h_in) + len(b_in) - 2 * topo.trim[a] + 1)
    if not denoms or min(denoms) < 1:
        raise ValueError("topology has an empty trimmed neighborhood")
    return n / min(denoms) - 1.0


def measured_reward_variation(model: MrpModel) -> float:
    """delta^2: max over supported transitions of the across-agent reward
    variance (1/N) sum_n (R_n - mean R)^2."""
    if model.num_agents == 1:
        return 0.0
    if model.rewards is not None:
        var = model.rewards.var(axis=0)
        return float(var[model.transition > 0.0].max(initial=0.0))
    worst = 0.0
    for s in range(model.num_states):
        for s2 in np.flatnonzero(model.transition[s] > 0.0):
            r = model.transition_rewards(s, int(s2))
            worst = max(worst, float(np.var(r)))
    return worst


class _Kahan:
    """Compensated running sum."""

    __slots__ = ("total", "_comp")

    def __init__(self) -> None:
        self.total = 0.0
        self._comp = 0.0

    def add(self, x: float) -> float:
        y = x - self._comp
        t = self.total + y
        self._comp = (t - self.total) - y
        self.total = t
        return t


@dataclass
class MetricsTrace:
    """Column arrays indexed by step k = 1..len; diverged_at marks the
    step at which the run tripped the divergence guard (metrics for that
    step are not recorded)."""

    steps: np.ndarray
    sbe: np.ndarray
    ce: np.ndarray
    msbe: np.ndarray
    mce: np.ndarray
    mce_rate_ratio: np.ndarray
    fixed_point_dist: np.ndarray
    diverged_at: int | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.steps)


class MetricsRecorder:
    """Streams per-step metrics into a MetricsTrace."""

    def __init__(self) -> None:
        self._rows: list[tuple[int, float, float, float]] = []
        self._sbe_sum = _Kahan()
        self._ce_sum = _Kahan()
        self._msbe: list[float] = []
        self._mce: list[float] = []
        self._ratio: list[float] = []
        self.diverged_at: int | None = None

    def record(self, k: int, sbe: float, ce: float, fixed_dist: float) -> None:
        self._rows.append((k, sbe, ce, fixed_dist))
        msbe = self._sbe_sum.add(sbe) / k
        mce = self._ce_sum.add(ce) / k
        self._msbe.append(msbe)
        self._mce.append(mce)
        self._ratio.append(mce * k / math.log(k) if k >= 2 else math.nan)

    def finish(self, meta: dict | None = None) -> MetricsTrace:
        rows = np.asarray(self._rows, dtype=float).reshape(-1, 4)
        return MetricsTrace(
            steps=rows[:, 0].astype(int),
            sbe=rows[:, 1],
            ce=rows[:, 2],
            msbe=np.asarray(self._msbe),
            mce=np.asarray(self._mce),
            mce_rate_ratio=np.asarray(self._ratio),
            fixed_point_dist=rows[:, 3],
            diverged_at=self.diverged_at,
            meta=dict(meta or {}),
        )


def consensus_rate_diagnostic(trace: MetricsTrace, window: float = 0.5) -> tuple[float, float]:
    """Mean and relative spread of MCE * k / ln k over the trailing
    window fraction; a horizontal plateau (small spread) is the O(1/k
    up to log factors) consensus signature.  TooShort below 1000 steps.
    """
    if not (0.0 < window <= 1.0):
        raise ValueError("window must lie in (0, 1]")
    if len(trace) < 1000:
        raise TooShort(f"need at least 1000 recorded steps, have {len(trace)}")
    ratio = trace.mce_rate_ratio
    ratio = ratio[~np.isnan(ratio)]
    tail = ratio[-max(1, int(len(ratio) * window)) :]
    mean = float(tail.mean())
    if mean == 0.0:
        return 0.0, 0.0
    spread = float((tail.max() - tail.min()) / abs(mean))
    return mean, spread


_COLUMNS = ("k", "sbe", "ce", "msbe", "mce", "mce_rate_ratio", "fixed_point_dist")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_trace_csv(trace: MetricsTrace, f: TextIO, header: Mapping[str, object]) -> None:
    """CSV with '#'-prefixed metadata lines, then the column table."""
    meta = dict(header)
    if trace.diverged_at is not None:
        meta.setdefault("diverged_at", trace.diverged_at)
    for key in sorted(meta):
        f.write(f"# {key} = {meta[key]}\n")
    f.write(",".join(_COLUMNS) + "\n")
    cols = (trace.sbe, trace.ce, trace.msbe, trace.mce, trace.mce_rate_ratio, trace.fixed_point_dist)
    for i, k in enumerate(trace.steps):
        f.write(str(int(k)) + "," + ",".join(_fmt(c[i]) for c in cols) + "\n")


def save_trace_csv(trace: MetricsTrace, path: str, header: Mapping[str, object]) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as f:
        write_trace_csv(trace, f, header)


def read_trace_csv(f: TextIO) -> MetricsTrace:
    meta: dict[str, str] = {}
    rows: list[list[float]] = []
    saw_header = False
    for line in f:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition("=")
            meta[key.strip()] = val.strip()
            continue
        if not saw_header:
            if line != ",".join(_COLUMNS):
                raise ValueError(f"unexpected CSV header {line!r}")
            saw_header = True
            continue
        rows.append([float(x) for x in line.split(",")])
    if not saw_header:
        raise ValueError("missing CSV column header")
    data = np.asarray(rows, dtype=float).reshape(-1, len(_COLUMNS))
    diverged = meta.get("diverged_at")
    return MetricsTrace(
        steps=data[:, 0].astype(int),
        sbe=data[:, 1],
        ce=data[:, 2],
        msbe=data[:, 3],
        mce=data[:, 4],
        mce_rate_ratio=data[:, 5],
        fixed_point_dist=data[:, 6],
        diverged_at=int(diverged) if diverged is not None else None,
        meta=meta,
    )


def load_trace_csv(path: str) -> MetricsTrace:
    with open(path, "r", encoding="ascii") as f:
        return read_trace_csv(f)
