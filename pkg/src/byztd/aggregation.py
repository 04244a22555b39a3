"""Robust aggregation rules and their verification machinery.

The trimmed rule sorts each coordinate's neighbor values, discards the q
lowest and q highest (the receiver's own value is never trimmed), and
averages the survivors together with the receiver.  The witness records
exactly what was discarded so the equivalent mixing-matrix row can be
rebuilt afterwards: a row-stochastic weight vector over honest agents
that reproduces the trimmed output exactly even though Byzantine values
were present.  verify_conditions checks the structural conditions that
the convergence theory needs from those rows.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import BracketingFailed, TooFewNeighbors
from .topology import NetworkTopology, in_neighbors

_FMAX = float(np.finfo(float).max)
_ZERO_TOL = 1e-15


@dataclass(frozen=True)
class InboxSnapshot:
    """One synchronous round's view at a receiver.

    messages hold (sender id, vector) pairs in ascending sender order;
    the receiver's own parameter rides along so aggregation is a pure
    function of the snapshot.
    """

    receiver: int
    messages: tuple[tuple[int, np.ndarray], ...]
    self_param: np.ndarray

    def __post_init__(self) -> None:
        msgs = tuple((int(m), np.asarray(v, dtype=float)) for m, v in self.messages)
        object.__setattr__(self, "messages", msgs)
        object.__setattr__(self, "self_param", np.asarray(self.self_param, dtype=float))
        senders = [m for m, _ in msgs]
        if any(a >= b for a, b in zip(senders, senders[1:])):
            raise ValueError("messages must be in strictly ascending sender order")
        if self.receiver in senders:
            raise ValueError("receiver cannot message itself")
        d = self.self_param.shape[0]
        if any(v.shape != (d,) for _, v in msgs):
            raise ValueError("all message vectors must match the self parameter's dim")
        if not np.all(np.isfinite(self.self_param)):
            raise ValueError("self parameter must be finite")


def _inbox_arrays(inbox: InboxSnapshot) -> tuple[np.ndarray, np.ndarray]:
    senders = np.array([m for m, _ in inbox.messages], dtype=int)
    if len(inbox.messages) == 0:
        return senders, np.zeros((0, inbox.self_param.shape[0]))
    return senders, np.vstack([v for _, v in inbox.messages])


def sanitize_values(values: np.ndarray) -> np.ndarray:
    """Adversarial payload policy: NaN becomes +inf at even coordinates
    and -inf at odd ones, then everything clamps to finite extremes so
    later sums cannot produce NaN."""
    out = np.array(values, dtype=float)
    if out.size and not np.all(np.isfinite(out)):
        nan = np.isnan(out)
        if nan.any():
            parity = np.arange(out.shape[-1]) % 2 == 0
            out[nan & parity] = np.inf
            out[nan & ~parity] = -np.inf
        np.clip(out, -_FMAX, _FMAX, out=out)
    return out


def mean_aggregate(inbox: InboxSnapshot) -> np.ndarray:
    """Plain average of all in-neighbors and self (the fragile baseline)."""
    _, values = _inbox_arrays(inbox)
    return (values.sum(axis=0) + inbox.self_param) / (len(inbox.messages) + 1)


@dataclass(frozen=True)
class TrimWitness:
    """Per-coordinate record of the trim: who was discarded low/high and
    who was kept, as sender-id tuples (self is never listed)."""

    q: int
    low: tuple[tuple[int, ...], ...]
    high: tuple[tuple[int, ...], ...]
    kept: tuple[tuple[int, ...], ...]


def trimmed_aggregate(inbox: InboxSnapshot, q: int) -> tuple[np.ndarray, TrimWitness]:
    """Coordinate-wise trimmed mean with a witness of the trim.

    Ties sort by (value, sender id) ascending; the stable argsort over
    rows already ordered by sender id gives exactly that.
    """
    if q < 0:
        raise ValueError("q must be nonnegative")
    senders, values = _inbox_arrays(inbox)
    m = len(senders)
    if m < 2 * q:
        raise TooFewNeighbors(f"{m} neighbors cannot lose 2q = {2 * q} values")
    d = inbox.self_param.shape[0]
    if m == 0:
        empty = tuple(() for _ in range(d))
        return inbox.self_param.copy(), TrimWitness(q=q, low=empty, high=empty, kept=empty)
    clean = sanitize_values(values)
    order = np.argsort(clean, axis=0, kind="stable")
    kept_rows = order[q : m - q, :]
    kept_sum = np.take_along_axis(clean, kept_rows, axis=0).sum(axis=0)
    result = (kept_sum + inbox.self_param) / (m - 2 * q + 1)
    witness = TrimWitness(
        q=q,
        low=tuple(tuple(senders[order[:q, j]].tolist()) for j in range(d)),
        high=tuple(tuple(senders[order[m - q :, j]].tolist()) for j in range(d)),
        kept=tuple(tuple(senders[kept_rows[:, j]].tolist()) for j in range(d)),
    )
    return result, witness


@dataclass(frozen=True)
class WeightRow:
    """One receiver's equivalent mixing weights over honest agents.

    weights[d, i] applies to honest agent ids[i] at coordinate d; applied
    to the honest agents' true values it reproduces the trimmed output.
    """

    receiver: int
    ids: tuple[int, ...]
    weights: np.ndarray


def _safe_convex_coef(v: float, lo: float, hi: float) -> float:
    """y with v = y*hi + (1-y)*lo; halved arithmetic avoids overflow at
    the clamped extremes, degenerate brackets pin y = 1."""
    if hi == lo:
        return 1.0
    y = (0.5 * v - 0.5 * lo) / (0.5 * hi - 0.5 * lo)
    return float(min(1.0, max(0.0, y)))


def reconstruct_weight_matrix(
    inbox: InboxSnapshot,
    q: int,
    byzantine_ids: Iterable[int],
    witness: TrimWitness,
) -> WeightRow:
    """Rebuild the honest-only mixing row hidden inside a trimmed update.

    Kept Byzantine values are bracketed by discarded honest values (any
    discarded-low value <= any kept value <= any discarded-high value),
    so each one is a convex combination of honest values.  The kept
    Byzantine mass (1/N*) and the c-fraction of each kept honest value's
    mass are spread uniformly over the q - B_n + B* bracket pairs using
    the exact per-pair convex coefficients; this reproduces the trimmed
    output exactly and meets the entry bounds the theory asks of the row
    (a single nearest-pair assignment can pile too much weight on one
    discarded agent).
    """
    byzset = set(int(b) for b in byzantine_ids)
    senders, values = _inbox_arrays(inbox)
    clean = sanitize_values(values)
    val_of = {int(s): clean[i] for i, s in enumerate(senders)}
    m = len(senders)
    n_star = m - 2 * q + 1
    b_n = sum(1 for s in senders if int(s) in byzset)
    d = inbox.self_param.shape[0]

    honest_ids = sorted({int(s) for s in senders if int(s) not in byzset} | {inbox.receiver})
    col = {a: i for i, a in enumerate(honest_ids)}
    w = np.zeros((d, len(honest_ids)))

    for dim in range(d):
        kept = witness.kept[dim]
        kept_byz = [s for s in kept if s in byzset]
        b_star = len(kept_byz)
        j = q - b_n + b_star
        row = w[dim]
        row[col[inbox.receiver]] = 1.0 / n_star

        if b_star == 0 and j <= 0:
            # Case 1: every kept neighbor is honest and no redistribution
            # is owed; uniform 1/N* over self and the kept set.
            for s in kept:
                row[col[s]] += 1.0 / n_star
            continue
        if j <= 0:
            raise BracketingFailed(
                f"dim {dim}: {b_star} kept Byzantine values with q={q} <= B_n={b_n}"
            )

        hon_high = sorted(
            ((float(val_of[s][dim]), s) for s in witness.high[dim] if s not in byzset)
        )
        hon_low = sorted(
            ((float(val_of[s][dim]), s) for s in witness.low[dim] if s not in byzset)
        )
        if len(hon_high) < j or len(hon_low) < j:
            raise BracketingFailed(
                f"dim {dim}: need {j} honest brackets, have "
                f"{len(hon_low)} low / {len(hon_high)} high"
            )
        # nearest-to-kept first: smallest discarded-high, largest discarded-low
        pairs = list(zip(hon_low[::-1][:j], hon_high[:j]))

        kept_honest = [s for s in kept if s not in byzset]
        kh = len(kept_honest)
        c = 0.0 if kh == 0 else (q - b_n) / kh
        for s in kept_honest:
            row[col[s]] += (1.0 - c) / n_star

        for s in kept:
            mass = (1.0 / n_star) if s in byzset else (c / n_star)
            if mass == 0.0:
                continue
            share = mass / j
            v = float(val_of[s][dim])
            for (lo_v, lo_id), (hi_v, hi_id) in pairs:
                y = _safe_convex_coef(v, lo_v, hi_v)
                row[col[hi_id]] += share * y
                row[col[lo_id]] += share * (1.0 - y)

    return WeightRow(receiver=inbox.receiver, ids=tuple(honest_ids), weights=w)


@dataclass(frozen=True)
class ConditionsReport:
    """Outcome of the structural checks over a batch of mixing matrices."""

    row_stochastic: bool          # (c1)
    self_weight: bool             # (c2) diagonal equals 1/N*_n
    support: bool                 # (c3) entries only on graph edges
    entry_count: bool             # (c4) >= N_n - q_n + 1 entries >= mu0
    entry_bound: bool             # (c5) entries <= 1 / min_n N*_n
    positive_column: bool | None  # (c6) some column of Y^tau positive
    mu0: float
    checked: int
    failures: tuple[str, ...]

    @property
    def all_hold(self) -> bool:
        core = (
            self.row_stochastic
            and self.self_weight
            and self.support
            and self.entry_count
            and self.entry_bound
        )
        return core and (self.positive_column is not False)


def assemble_matrix(rows: Sequence[WeightRow], topo: NetworkTopology) -> np.ndarray:
    """Stack per-receiver rows (one coordinate each) into the full honest
    matrix ordered by topo.honest."""
    order = {a: i for i, a in enumerate(topo.honest)}
    n = len(topo.honest)
    if len(rows) != n:
        raise ValueError(f"need {n} rows, got {len(rows)}")
    y = np.zeros((n, n))
    for row in rows:
        if row.weights.ndim != 1:
            raise ValueError("assemble_matrix expects single-coordinate rows")
        r = order[row.receiver]
        for a, weight in zip(row.ids, row.weights):
            y[r, order[a]] = weight
    return y


def _mu0(topo: NetworkTopology) -> float:
    """Closed-form lower bound on the guaranteed positive row entries;
    terms with nonpositive denominators are skipped (outside the range
    where the bound is provable)."""
    best = np.inf
    for a in topo.honest:
        h_in, b_in = in_neighbors(topo, a)
        nn, bn, q = len(h_in), len(b_in), topo.trim[a]
        n_star = nn + bn - 2 * q + 1
        if n_star < 1:
            continue
        terms = []
        if nn - 2 * q > 0:
            terms.append((nn + bn - 3 * q) / (nn - 2 * q))
        if nn - q > 0:
            terms.append((nn + bn - 2 * q) * (q - bn) / (nn - q) ** 2)
        if terms:
            best = min(best, min(terms) / n_star)
    return 0.0 if not np.isfinite(best) else float(best)


def verify_conditions(
    matrices: Sequence[np.ndarray],
    topo: NetworkTopology,
    tau_budget: int | None = None,
) -> ConditionsReport:
    """Check the structural conditions on reconstructed mixing matrices.

    Matrices are (N, N) over topo.honest order, one per step/coordinate.
    The entry-count check uses strictly positive entries >= mu0, which is
    the stricter reading when mu0 degenerates to 0 (q_n = B_n rows).
    """
    honest = list(topo.honest)
    n = len(honest)
    n_star = np.zeros(n)
    needed = np.zeros(n, dtype=int)
    for i, a in enumerate(honest):
        h_in, b_in = in_neighbors(topo, a)
        n_star[i] = len(h_in) + len(b_in) - 2 * topo.trim[a] + 1
        needed[i] = len(h_in) - topo.trim[a] + 1
    mu0 = _mu0(topo)
    order = {a: i for i, a in enumerate(honest)}
    allowed = np.eye(n, dtype=bool)
    byzset = set(topo.byzantine)
    for msender, mrecv in topo.edges:
        if msender not in byzset and mrecv not in byzset:
            allowed[order[mrecv], order[msender]] = True

    ok = {"c1": True, "c2": True, "c3": True, "c4": True, "c5": True}
    c6: bool | None = None if tau_budget is None else True
    failures: list[str] = []

    def fail(code: str, msg: str) -> None:
        ok[code] = False
        if len(failures) < 8:
            failures.append(f"({code}) {msg}")

    cap = 1.0 / n_star.min() if n else np.inf
    count = 0
    for y in matrices:
        y = np.asarray(y, dtype=float)
        count += 1
        sums = y.sum(axis=1)
        if np.any(y < -_ZERO_TOL) or np.any(np.abs(sums - 1.0) > 1e-9):
            fail("c1", f"matrix {count}: rows not stochastic (sums {sums})")
        if np.any(np.abs(np.diag(y) - 1.0 / n_star) > 1e-9):
            fail("c2", f"matrix {count}: self weights differ from 1/N*")
        if np.any((np.abs(y) > _ZERO_TOL) & ~allowed):
            fail("c3", f"matrix {count}: support outside the graph")
        counts = ((y > _ZERO_TOL) & (y >= mu0 - 1e-12)).sum(axis=1)
        if np.any(counts < needed):
            fail("c4", f"matrix {count}: entry counts {counts} below {needed}")
        if np.any(y > cap + 1e-9):
            fail("c5", f"matrix {count}: entry above 1/min N* = {cap}")
        if c6 is not None and c6:
            power = y.copy()
            hit = False
            for _ in range(int(tau_budget)):
                if np.any(np.all(power > _ZERO_TOL, axis=0)):
                    hit = True
                    break
                power = power @ y
            if not hit:
                c6 = False
                failures.append(f"(c6) matrix {count}: no positive column within tau {tau_budget}")

    return ConditionsReport(
        row_stochastic=ok["c1"],
        self_weight=ok["c2"],
        support=ok["c3"],
        entry_count=ok["c4"],
        entry_bound=ok["c5"],
        positive_column=c6,
        mu0=mu0,
        checked=count,
        failures=tuple(failures),
    )


# ---------------------------------------------------------------------------
# Batched forms used by the simulation hot loop.  Rows of `values` must
# already be sanitized (the runner sanitizes Byzantine payloads once per
# step; honest parameters are finite by invariant).


def trimmed_mean_batch(values: np.ndarray, self_values: np.ndarray, q: int) -> np.ndarray:
    """values (G, M, D) per receiver group; returns (G, D)."""
    g, m, d = values.shape
    if m < 2 * q:
        raise TooFewNeighbors(f"{m} neighbors cannot lose 2q = {2 * q} values")
    if m == 0:
        return self_values.copy()
    order = np.argsort(values, axis=1, kind="stable")
    kept = np.take_along_axis(values, order[:, q : m - q, :], axis=1)
    return (kept.sum(axis=1) + self_values) / (m - 2 * q + 1)


def mean_batch(values: np.ndarray, self_values: np.ndarray) -> np.ndarray:
    m = values.shape[1]
    return (values.sum(axis=1) + self_values) / (m + 1)
