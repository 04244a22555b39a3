"""Directed communication networks with Byzantine labels and trim counts.

A topology is pure data: ordered honest/Byzantine id sets, directed
edges (sender, receiver), and a per-honest-agent trim count q_n.  The
connectivity check enumerates every honest subgraph that survives worst
case edge removal (drop all Byzantine agents, then any q_n incoming
edges per honest node) and asks for a source node reaching everyone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, TextIO

import numpy as np

from .errors import BudgetExceeded, InvalidTrim, UnknownAgent, UnknownPreset


@dataclass(frozen=True)
class NetworkTopology:
    """Agents, directed links, and trim counts.

    Edges are (sender, receiver) pairs; self links are forbidden.  trim
    maps every honest id to its q_n.  Construction validates structure
    only; theorem-grade conditions are in validate_theorem_mode so that
    random builders may return lenient draws (the runner re-checks what
    it needs).
    """

    honest: tuple[int, ...]
    byzantine: tuple[int, ...] = ()
    edges: frozenset[tuple[int, int]] = frozenset()
    trim: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        honest = tuple(sorted(int(a) for a in self.honest))
        byz = tuple(sorted(int(a) for a in self.byzantine))
        object.__setattr__(self, "honest", honest)
        object.__setattr__(self, "byzantine", byz)
        if len(set(honest)) != len(honest) or len(set(byz)) != len(byz):
            raise ValueError("duplicate agent ids")
        if set(honest) & set(byz):
            raise ValueError("honest and Byzantine sets must be disjoint")
        agents = set(honest) | set(byz)
        edges = frozenset((int(m), int(n)) for m, n in self.edges)
        object.__setattr__(self, "edges", edges)
        for m, n in edges:
            if m == n:
                raise ValueError(f"self link on agent {m}")
            if m not in agents or n not in agents:
                raise ValueError(f"edge ({m}, {n}) references unknown agents")
        trim = {int(k): int(v) for k, v in dict(self.trim).items()}
        object.__setattr__(self, "trim", trim)
        if set(trim) != set(honest):
            raise ValueError("trim must map exactly the honest ids")
        if any(q < 0 for q in trim.values()):
            raise ValueError("trim counts must be nonnegative")

    @property
    def agents(self) -> tuple[int, ...]:
        return tuple(sorted(self.honest + self.byzantine))

    def trim_violations(self) -> list[str]:
        """Soft warnings: q_n below the Byzantine in-count, or an empty
        trimmed neighborhood (nonpositive update denominator)."""
        out = []
        for n in self.honest:
            h_in, b_in = in_neighbors(self, n)
            q = self.trim[n]
            if len(b_in) > q:
                out.append(f"agent {n}: q={q} below Byzantine in-count {len(b_in)}")
            if len(h_in) + len(b_in) - 2 * q + 1 < 1:
                out.append(f"agent {n}: trimmed denominator {len(h_in) + len(b_in) - 2 * q + 1} < 1")
        return out

    def validate_theorem_mode(self) -> None:
        """Require B_n <= q_n < N_n / 3 for every honest agent."""
        for n in self.honest:
            h_in, b_in = in_neighbors(self, n)
            q = self.trim[n]
            if q < len(b_in):
                raise InvalidTrim(f"agent {n}: q={q} < Byzantine in-count {len(b_in)}")
            if 3 * q >= len(h_in):
                raise InvalidTrim(f"agent {n}: 3q={3 * q} >= honest in-count {len(h_in)}")


def in_neighbors(topo: NetworkTopology, n: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """(honest, Byzantine) in-neighbor ids of agent n, each ascending."""
    if n not in topo.honest and n not in topo.byzantine:
        raise UnknownAgent(f"agent {n} is not in the topology")
    byz = set(topo.byzantine)
    h_in, b_in = [], []
    for m, r in topo.edges:
        if r == n:
            (b_in if m in byz else h_in).append(m)
    return tuple(sorted(h_in)), tuple(sorted(b_in))


def build_complete(n_honest: int, n_byz: int, q: int, theorem_mode: bool = False) -> NetworkTopology:
    """All-to-all directed graph; honest ids first, Byzantine ids after."""
    if n_honest < 1 or n_byz < 0 or q < 0:
        raise ValueError("need n_honest >= 1, n_byz >= 0, q >= 0")
    honest = tuple(range(n_honest))
    byz = tuple(range(n_honest, n_honest + n_byz))
    agents = honest + byz
    edges = frozenset((m, n) for m in agents for n in agents if m != n)
    topo = NetworkTopology(honest=honest, byzantine=byz, edges=edges, trim={n: q for n in honest})
    if theorem_mode:
        topo.validate_theorem_mode()
    return topo


def build_erdos_renyi(
    n_total: int,
    edge_prob: float,
    byz_prob: float,
    seed: int,
    per_neighborhood: bool = False,
) -> NetworkTopology:
    """Random undirected graph realized as symmetric directed links.

    Draw order (fixed for reproducibility): one Byzantine coin per agent,
    then one edge coin per unordered pair (i, j), i < j, lexicographic.
    Trim defaults to the global Byzantine count for every honest agent;
    per_neighborhood=True uses each agent's own Byzantine in-count.
    No validation is performed here; lenient draws are the caller's to
    screen (theorem-mode check or the runner's resampling).
    """
    if n_total < 1:
        raise ValueError("n_total must be positive")
    if not (0.0 <= edge_prob <= 1.0 and 0.0 <= byz_prob <= 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    is_byz = rng.random(n_total) < byz_prob
    edges = set()
    for i in range(n_total):
        for j in range(i + 1, n_total):
            if rng.random() < edge_prob:
                edges.add((i, j))
                edges.add((j, i))
    honest = tuple(i for i in range(n_total) if not is_byz[i])
    byz = tuple(i for i in range(n_total) if is_byz[i])
    if per_neighborhood:
        byzset = set(byz)
        trim = {
            n: sum(1 for m, r in edges if r == n and m in byzset) for n in honest
        }
    else:
        trim = {n: len(byz) for n in honest}
    return NetworkTopology(honest=honest, byzantine=byz, edges=frozenset(edges), trim=trim)


_PRESETS = {
    # name -> (honest ids, byzantine ids, extra honest<->byz pairings)
    "H2B1": ((0, 1), (2, 3), ((0, 2), (1, 3))),
    "H3B1": ((0, 1, 2), (3, 4, 5), ((0, 3), (1, 4), (2, 5))),
}


def build_preset(name: str, q: int) -> NetworkTopology:
    """Small hand-checkable networks.

    The honest subgraph is complete and every Byzantine agent is paired
    bidirectionally with one honest agent (the attack edge plus a return
    edge so the Byzantine shadow has an in-neighborhood): H2B1 is two
    honest agents with one dedicated Byzantine each, H3B1 three honest
    with one each.
    """
    if name not in _PRESETS:
        raise UnknownPreset(f"unknown preset {name!r} (have {sorted(_PRESETS)})")
    honest, byz, pairs = _PRESETS[name]
    edges = {(m, n) for m in honest for n in honest if m != n}
    for h, b in pairs:
        edges.add((b, h))
        edges.add((h, b))
    return NetworkTopology(
        honest=honest, byzantine=byz, edges=frozenset(edges), trim={n: q for n in honest}
    )


@dataclass(frozen=True)
class ConnectivityReport:
    holds: bool
    tau: int | None
    subgraphs: int


def _mask_dtype(n: int):
    for width, dt in ((8, np.uint8), (16, np.uint16), (32, np.uint32), (62, np.uint64)):
        if n <= width:
            return dt
    raise BudgetExceeded(f"{n} honest agents exceed the bit-mask enumeration limit")


def check_worst_case_connectivity(topo: NetworkTopology, max_subgraphs: int) -> ConnectivityReport:
    """Exhaustively test worst-case reachability after trim-level removals.

    Every subgraph keeps the honest agents only and, per honest node n,
    drops some q_n of its incoming honest edges (all combinations, cross
    product over nodes).  The assumption holds when each subgraph has a
    source node that reaches every honest node; tau is the worst, over
    subgraphs, of the best source's eccentricity.

    The budget check uses the conservative pre-removal count
    prod_n C(N_n + B_n, q_n) and raises BudgetExceeded before any work.
    """
    honest = list(topo.honest)
    n = len(honest)
    if n == 0:
        raise ValueError("topology has no honest agents")
    pos = {a: i for i, a in enumerate(honest)}

    budget = 1
    hin: list[list[int]] = []
    for a in honest:
        h_in, b_in = in_neighbors(topo, a)
        budget *= math.comb(len(h_in) + len(b_in), topo.trim[a])
        if budget > max_subgraphs:
            raise BudgetExceeded(
                f"subgraph budget {budget} exceeds max_subgraphs {max_subgraphs}"
            )
        hin.append([pos[m] for m in h_in])

    if n == 1:
        return ConnectivityReport(holds=True, tau=0, subgraphs=1)

    dt = _mask_dtype(n)
    tables: list[np.ndarray] = []
    for i, a in enumerate(honest):
        q = min(topo.trim[a], len(hin[i]))
        full = 0
        for w in hin[i]:
            full |= 1 << w
        masks = []
        for removed in combinations(hin[i], q):
            m = full
            for w in removed:
                m ^= 1 << w
            masks.append(m)
        tables.append(np.asarray(masks, dtype=dt))
    counts = [len(t) for t in tables]
    total = math.prod(counts)
    strides = [1] * n
    for i in range(n - 2, -1, -1):
        strides[i] = strides[i + 1] * counts[i + 1]

    chunk = 1 << 21
    tau = 0
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        kept = [tables[u][(idx // strides[u]) % counts[u]] for u in range(n)]
        # reach[u] = bitmask of nodes with a path to u of length <= t
        reach = [np.full(idx.shape, 1 << u, dtype=dt) for u in range(n)]
        found = np.zeros(idx.shape, dtype=bool)
        ecc = np.zeros(idx.shape, dtype=np.int16)
        for t in range(1, n):
            nxt = []
            for u in range(n):
                acc = np.full(idx.shape, 1 << u, dtype=dt)
                ku = kept[u]
                for w in range(n):
                    if w == u:
                        continue
                    acc |= ((ku >> w) & 1) * reach[w]
                nxt.append(acc)
            reach = nxt
            src_any = np.zeros(idx.shape, dtype=bool)
            for v in range(n):
                ok = np.ones(idx.shape, dtype=bool)
                for u in range(n):
                    ok &= ((reach[u] >> v) & 1).astype(bool)
                src_any |= ok
            newly = src_any & ~found
            ecc[newly] = t
            found |= src_any
            if found.all():
                break
        if not found.all():
            return ConnectivityReport(holds=False, tau=None, subgraphs=total)
        tau = max(tau, int(ecc.max()))
    return ConnectivityReport(holds=True, tau=tau, subgraphs=total)


# ---------------------------------------------------------------------------
# Edge-list text format.


def write_topology(topo: NetworkTopology, f: TextIO) -> None:
    f.write("topology v1\n")
    f.write("honest " + " ".join(str(a) for a in topo.honest) + "\n")
    f.write("byzantine " + " ".join(str(a) for a in topo.byzantine) + "\n")
    f.write("trim " + " ".join(f"{n}:{topo.trim[n]}" for n in topo.honest) + "\n")
    f.write("edges\n")
    for m, n in sorted(topo.edges):
        f.write(f"{m} {n}\n")
    f.write("end\n")


def save_topology(topo: NetworkTopology, path: str) -> None:
    with open(path, "w", encoding="ascii") as f:
        write_topology(topo, f)


def read_topology(f: TextIO) -> NetworkTopology:
    lines = [ln.strip() for ln in f.read().splitlines() if ln.strip()]
    if not lines or lines[0] != "topology v1":
        raise ValueError("not a topology v1 file")

    def ids(line: str, key: str) -> tuple[int, ...]:
        parts = line.split()
        if not parts or parts[0] != key:
            raise ValueError(f"expected '{key} ...' line, got {line!r}")
        return tuple(int(x) for x in parts[1:])

    honest = ids(lines[1], "honest")
    byz = ids(lines[2], "byzantine")
    tparts = lines[3].split()
    if tparts[0] != "trim":
        raise ValueError("expected 'trim ...' line")
    trim = {}
    for item in tparts[1:]:
        k, v = item.split(":")
        trim[int(k)] = int(v)
    if lines[4] != "edges":
        raise ValueError("expected 'edges' line")
    edges = set()
    for ln in lines[5:]:
        if ln == "end":
            break
        m, n = ln.split()
        edges.add((int(m), int(n)))
    else:
        raise ValueError("missing 'end' line")
    return NetworkTopology(honest=honest, byzantine=byz, edges=frozenset(edges), trim=trim)


def load_topology(path: str) -> NetworkTopology:
    with open(path, "r", encoding="ascii") as f:
        return read_topology(f)
