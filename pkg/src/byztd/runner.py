"""Synchronous simulation of decentralized TD(lambda) under attack.

Each step: Byzantine agents place messages on the wire (honest agents
broadcast their parameters verbatim), the shared chain advances one
transition, and every agent combines its inbox with the robust or plain
rule and adds its own local TD increment.  Byzantine agents keep shadow
parameters by running the honest rule over their own in-neighborhoods,
which gives reference-dependent attacks a well-defined value to distort.

The hot loop is batched: all agents with the same in-degree and trim
level aggregate in a single vectorized call, so 200k-step runs over a
dozen agents finish in seconds.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .aggregation import (
    ConditionsReport,
    InboxSnapshot,
    WeightRow,
    assemble_matrix,
    mean_batch,
    reconstruct_weight_matrix,
    sanitize_values,
    trimmed_aggregate,
    trimmed_mean_batch,
    verify_conditions,
)
from .attacks import AttackModel, byzantine_message
from .config import ExperimentConfig, TopologySpec
from .environments import GridNavSpec, RandomMrpSpec, build_grid_navigation, build_random_mrp
from .errors import ConfigError, NonFiniteParameter, TooFewNeighbors
from .metrics import (
    MetricsRecorder,
    MetricsTrace,
    degree_of_unsaturation,
    measured_reward_variation,
    save_trace_csv,
)
from .mrp import MrpModel, restrict_agents, save_model, stationary_distribution
from .td import EligibilityTrace, Schedule, TdParams, make_schedule, steady_state
from .topology import (
    NetworkTopology,
    build_complete,
    build_erdos_renyi,
    build_preset,
    in_neighbors,
    save_topology,
)

logger = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1e12
_MAX_TOPOLOGY_ATTEMPTS = 1000


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def sample_next_state(cum_row: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from one cumulative probability row."""
    u = rng.random()
    return min(int(np.searchsorted(cum_row, u, side="right")), len(cum_row) - 1)


@dataclass
class SimulationState:
    """Mutable per-trial state advanced in place by Simulation.run_step.

    thetas has one row per topology agent in ascending-id order (honest
    parameters and Byzantine shadows alike).  attack_rngs and victims
    align with the ascending Byzantine ids.  diverged_at is the 1-based
    step at which an honest parameter first left the finite range; a
    diverged state cannot be stepped further.
    """

    step: int
    state: int
    thetas: np.ndarray
    trace: EligibilityTrace
    chain_rng: np.random.Generator
    attack_rngs: tuple[np.random.Generator, ...]
    victims: tuple[int | None, ...]
    diverged_at: int | None = None


class Simulation:
    """Environment + topology + algorithm bound together, ready to run.

    Construction precomputes everything trial-independent: cumulative
    transition rows, the deterministic fixed point over the honest
    agents, Bellman-residual coefficients, and the grouping that lets
    one vectorized call aggregate every agent sharing an in-degree and
    trim level.
    """

    def __init__(
        self,
        model: MrpModel,
        topology: NetworkTopology,
        params: TdParams,
        schedule: Schedule,
        *,
        aggregation: str = "trim",
        attack: AttackModel | None = None,
        divergence_threshold: float = DIVERGENCE_THRESHOLD,
    ) -> None:
        if aggregation not in ("mean", "trim"):
            raise ValueError(f"aggregation must be mean or trim, got {aggregation!r}")
        if not topology.honest:
            raise ValueError("topology needs at least one honest agent")
        agents = topology.agents
        if model.num_agents != len(agents):
            raise ValueError(
                f"model carries {model.num_agents} reward channels "
                f"but the topology has {len(agents)} agents"
            )
        if abs(params.discount - model.discount) > 1e-12:
            raise ValueError("TdParams.discount must equal the model discount")

        self.model = model
        self.topology = topology
        self.params = params
        self.schedule = schedule
        self.aggregation = aggregation
        self.attack = attack if attack is not None else AttackModel()
        self._trim = aggregation == "trim"
        self._div = float(divergence_threshold)

        self._chan = {a: i for i, a in enumerate(agents)}
        self._honest_rows = np.array([self._chan[a] for a in topology.honest], dtype=int)
        self._byz_ids = topology.byzantine
        self._byz_rows = np.array([self._chan[b] for b in self._byz_ids], dtype=int)

        # Shadows trim like the most lenient honest agent, clipped so the
        # rule stays defined on their own in-degree.
        q_floor = min(topology.trim[n] for n in topology.honest)
        grouped: dict[tuple[int, int], tuple[list[int], list[list[int]]]] = {}
        self._nbr_ids: dict[int, tuple[int, ...]] = {}
        strict = self._trim
        pools: list[tuple[int, ...]] = []
        for a in agents:
            h_in, b_in = in_neighbors(topology, a)
            nbrs = tuple(sorted(h_in + b_in))
            self._nbr_ids[a] = nbrs
            m = len(nbrs)
            if a in topology.trim:
                q = topology.trim[a]
                if self._trim and m < 2 * q:
                    raise TooFewNeighbors(
                        f"agent {a}: {m} in-neighbors cannot lose 2q = {2 * q}"
                    )
                if self._trim and q < len(b_in):
                    strict = False
            else:
                q = min(q_floor, m // 2)
                pools.append(h_in if h_in else topology.honest)
            key = (m, q if self._trim else 0)
            mem, nbr_rows = grouped.setdefault(key, ([], []))
            mem.append(self._chan[a])
            nbr_rows.append([self._chan[x] for x in nbrs])
        self._strict = strict
        self._victim_pools = tuple(pools)
        self._groups = [
            (np.asarray(mem, dtype=int), np.asarray(nbr_rows, dtype=int).reshape(len(mem), m), q)
            for (m, q), (mem, nbr_rows) in grouped.items()
        ]

        self.restricted_model = restrict_agents(model, self._honest_rows.tolist())
        self.rho = stationary_distribution(model)
        self.steady = steady_state(self.restricted_model, self.rho, params)
        self._theta_inf = self.steady.theta_inf
        self._phi = model.features
        self._gamma = params.discount
        self._glam = params.discount * params.lam
        self._cum_p = np.cumsum(model.transition, axis=1)
        self._cum_init = np.cumsum(model.initial_dist)
        self._sbe_coef = self._phi - self._gamma * (model.transition @ self._phi)
        self._exp_r = self.restricted_model.expected_rewards()

    def initial_state(
        self,
        chain_seed: int | np.random.SeedSequence = 0,
        attack_seed: int | np.random.SeedSequence = 0,
        theta0: np.ndarray | None = None,
    ) -> SimulationState:
        """Fresh state: zero parameters (or theta0), s0 from the model's
        initial distribution, one child RNG per Byzantine agent."""
        chain_rng = np.random.default_rng(chain_seed)
        n_byz = len(self._byz_ids)
        a_ss = (
            attack_seed
            if isinstance(attack_seed, np.random.SeedSequence)
            else np.random.SeedSequence(attack_seed)
        )
        attack_rngs = tuple(np.random.default_rng(c) for c in (a_ss.spawn(n_byz) if n_byz else ()))
        victims: list[int | None] = [None] * n_byz
        if self.attack.kind == "gaussian_noise" and self.attack.fixed_victim:
            for i in range(n_byz):
                pool = self._victim_pools[i]
                victims[i] = int(pool[int(attack_rngs[i].integers(len(pool)))])

        a, d = len(self._chan), self._phi.shape[1]
        if theta0 is None:
            thetas = np.zeros((a, d))
        else:
            t0 = np.asarray(theta0, dtype=float)
            thetas = np.tile(t0, (a, 1)) if t0.ndim == 1 else np.array(t0, dtype=float)
            if thetas.shape != (a, d):
                raise ValueError(f"theta0 must broadcast to ({a}, {d}), got {t0.shape}")
            if not np.all(np.isfinite(thetas)):
                raise ValueError("theta0 must be finite")
        s0 = sample_next_state(self._cum_init, chain_rng)
        return SimulationState(
            step=0,
            state=s0,
            thetas=thetas,
            trace=EligibilityTrace.zero(d),
            chain_rng=chain_rng,
            attack_rngs=attack_rngs,
            victims=tuple(victims),
        )

    def run_step(self, state: SimulationState, collect_weights: list | None = None) -> None:
        """One synchronous round, mutating the state in place.

        collect_weights (trim only) receives one reconstructed honest
        mixing matrix per coordinate for this step, before the update.
        """
        if state.diverged_at is not None:
            raise ValueError("cannot advance a diverged simulation state")
        k = state.step
        th = state.thetas

        if self._byz_rows.size:
            msg = th.copy()
            gaussian = self.attack.kind == "gaussian_noise"
            for i, b in enumerate(self._byz_ids):
                view = (
                    {a: th[self._chan[a]] for a in self._victim_pools[i]} if gaussian else {}
                )
                row = byzantine_message(
                    self.attack, b, view, th[self._byz_rows[i]], state.attack_rngs[i],
                    victim=state.victims[i],
                )
                msg[self._byz_rows[i]] = sanitize_values(row)
        else:
            msg = th

        if collect_weights is not None:
            collect_weights.extend(self._weight_matrices(msg, th))

        s = state.state
        s2 = sample_next_state(self._cum_p[s], state.chain_rng)
        z = self._glam * state.trace.z + self._phi[s]
        r_all = self.model.transition_rewards(s, s2)
        coef = self._gamma * self._phi[s2] - self._phi[s]
        delta = th @ coef + r_all
        scaled = (self.schedule(k) * delta)[:, None] * z[None, :]

        new = np.empty_like(th)
        for mem, nbr, q in self._groups:
            vals = msg[nbr]
            if self._trim:
                agg = trimmed_mean_batch(vals, th[mem], q)
            else:
                agg = mean_batch(vals, th[mem])
            new[mem] = agg + scaled[mem]

        state.thetas = new
        state.state = s2
        state.trace = EligibilityTrace(z=z, step=state.trace.step + 1)
        state.step = k + 1

        h = new[self._honest_rows]
        if not np.all(np.isfinite(h)) or float(np.abs(h).max()) > self._div:
            state.diverged_at = state.step
            if self._strict:
                raise NonFiniteParameter(
                    f"honest parameter left the finite range at step {state.step} "
                    "although trimming covers every Byzantine in-neighbor"
                )

    def metrics_at(self, state: SimulationState) -> tuple[float, float, float]:
        """(squared Bellman error, consensus error, fixed-point distance)
        of the honest parameters at the state's current chain state."""
        h = state.thetas[self._honest_rows]
        s = state.state
        resid = h @ self._sbe_coef[s] - self._exp_r[:, s]
        sbe = float(resid @ resid) / h.shape[0]
        centered = h - h.mean(axis=0)
        ce = float((centered * centered).sum()) / h.shape[0]
        diff = h - self._theta_inf
        fd = float((diff * diff).sum()) / h.shape[0]
        return sbe, ce, fd

    def run_trial(
        self,
        steps: int,
        chain_seed: int | np.random.SeedSequence = 0,
        attack_seed: int | np.random.SeedSequence = 0,
        theta0: np.ndarray | None = None,
        meta: dict | None = None,
    ) -> MetricsTrace:
        """Run `steps` rounds recording per-step metrics; stops early (and
        leaves the trace short) if the honest parameters diverge."""
        if steps < 1:
            raise ValueError("steps must be positive")
        state = self.initial_state(chain_seed, attack_seed, theta0)
        rec = MetricsRecorder()
        for k in range(1, steps + 1):
            self.run_step(state)
            if state.diverged_at is not None:
                rec.diverged_at = state.diverged_at
                logger.warning("run diverged at step %d", state.diverged_at)
                break
            sbe, ce, fd = self.metrics_at(state)
            rec.record(k, sbe, ce, fd)
        return rec.finish(meta)

    def _weight_matrices(self, msg: np.ndarray, th: np.ndarray) -> list[np.ndarray]:
        """Reconstructed honest mixing matrices (one per coordinate) for
        the current wire contents; trim aggregation only."""
        if not self._trim:
            raise ValueError("weight reconstruction is defined for trim aggregation only")
        d = self._phi.shape[1]
        rows_by_dim: list[list[WeightRow]] = [[] for _ in range(d)]
        for n in self.topology.honest:
            inbox = InboxSnapshot(
                receiver=n,
                messages=tuple((a, msg[self._chan[a]]) for a in self._nbr_ids[n]),
                self_param=th[self._chan[n]],
            )
            q = self.topology.trim[n]
            _, witness = trimmed_aggregate(inbox, q)
            wr = reconstruct_weight_matrix(inbox, q, self._byz_ids, witness)
            for dim in range(d):
                rows_by_dim[dim].append(WeightRow(receiver=n, ids=wr.ids, weights=wr.weights[dim]))
        return [assemble_matrix(rows, self.topology) for rows in rows_by_dim]

    def run_verification(
        self,
        steps: int,
        chain_seed: int | np.random.SeedSequence = 0,
        attack_seed: int | np.random.SeedSequence = 0,
        tau_budget: int | None = None,
    ) -> ConditionsReport:
        """Drive a short run collecting every reconstructed mixing matrix
        and check the structural conditions on all of them."""
        state = self.initial_state(chain_seed, attack_seed)
        mats: list[np.ndarray] = []
        for _ in range(steps):
            self.run_step(state, collect_weights=mats)
            if state.diverged_at is not None:
                break
        return verify_conditions(mats, self.topology, tau_budget=tau_budget)


# ---------------------------------------------------------------------------
# Config-driven experiments: trials, seeding discipline, output files.


@dataclass
class ExperimentResult:
    traces: list[MetricsTrace]
    averaged: MetricsTrace
    model: MrpModel
    topologies: list[NetworkTopology] = field(default_factory=list)
    out_dir: str | None = None


def build_environment(spec: RandomMrpSpec | GridNavSpec) -> MrpModel:
    if isinstance(spec, RandomMrpSpec):
        return build_random_mrp(spec)
    if isinstance(spec, GridNavSpec):
        return build_grid_navigation(spec)
    raise ConfigError(f"unknown environment spec type {type(spec).__name__}")


def _topology_agent_count(tspec: TopologySpec) -> int:
    if tspec.kind == "complete":
        return tspec.n_honest + tspec.n_byz
    if tspec.kind == "erdos_renyi":
        return tspec.n_total
    return len(build_preset(tspec.preset, max(tspec.q, 0)).agents)


def _unsaturation_or_none(topo: NetworkTopology) -> str | None:
    """Formatted degree of unsaturation, or None where it is undefined
    (an empty trimmed neighborhood, possible for drawn topologies under
    the mean rule, which ignores trim counts)."""
    try:
        return _fmt(degree_of_unsaturation(topo))
    except ValueError:
        return None


def _runnable(topo: NetworkTopology, aggregation: str) -> bool:
    """Whether a drawn topology supports the requested rule at all."""
    if not topo.honest:
        return False
    if aggregation != "trim":
        return True
    for n in topo.honest:
        h_in, b_in = in_neighbors(topo, n)
        if len(h_in) + len(b_in) < 2 * topo.trim[n]:
            return False
    return True


def _draw_erdos_renyi(
    tspec: TopologySpec, ss: np.random.SeedSequence, aggregation: str
) -> NetworkTopology:
    for attempt in ss.spawn(_MAX_TOPOLOGY_ATTEMPTS):
        topo = build_erdos_renyi(
            tspec.n_total,
            tspec.edge_prob,
            tspec.byz_prob,
            seed=attempt,
            per_neighborhood=tspec.per_neighborhood,
        )
        if _runnable(topo, aggregation):
            return topo
    raise ConfigError(
        f"no runnable random topology in {_MAX_TOPOLOGY_ATTEMPTS} draws "
        f"(edge_prob {tspec.edge_prob}, byz_prob {tspec.byz_prob})"
    )


def build_topology_once(tspec: TopologySpec, aggregation: str) -> NetworkTopology | None:
    """The trial-independent topology, or None when each trial redraws."""
    if tspec.kind == "complete":
        return build_complete(tspec.n_honest, tspec.n_byz, tspec.q)
    if tspec.kind == "preset":
        return build_preset(tspec.preset, tspec.q)
    if tspec.seed is not None:
        return _draw_erdos_renyi(tspec, np.random.SeedSequence(tspec.seed), aggregation)
    return None


def average_traces(traces: list[MetricsTrace]) -> MetricsTrace:
    """Elementwise mean over trials, truncated to the shortest trace."""
    if not traces:
        raise ValueError("no traces to average")
    length = min(len(t) for t in traces)

    def col(name: str) -> np.ndarray:
        if length == 0:
            return np.zeros(0)
        return np.mean([getattr(t, name)[:length] for t in traces], axis=0)

    return MetricsTrace(
        steps=np.arange(1, length + 1),
        sbe=col("sbe"),
        ce=col("ce"),
        msbe=col("msbe"),
        mce=col("mce"),
        mce_rate_ratio=col("mce_rate_ratio"),
        fixed_point_dist=col("fixed_point_dist"),
    )


def schedule_from_spec(spec) -> Schedule:
    if spec.kind == "experimental":
        return make_schedule("experimental", c=spec.c)
    return make_schedule("theoretical", eta=spec.eta, k0=spec.k0)


def _prepare(cfg: ExperimentConfig) -> tuple[MrpModel, TdParams, Schedule]:
    model = build_environment(cfg.environment)
    expected = _topology_agent_count(cfg.topology)
    if model.num_agents != expected:
        raise ConfigError(
            f"[environment] num_agents = {model.num_agents} "
            f"but the topology has {expected} agents"
        )
    return model, TdParams(lam=cfg.lam, discount=model.discount), schedule_from_spec(cfg.schedule)


def build_trial_simulation(
    cfg: ExperimentConfig, trial: int = 0
) -> tuple[Simulation, np.random.SeedSequence, np.random.SeedSequence]:
    """The exact simulation plus (chain, attack) seed streams that
    run_experiment would use for the given trial index."""
    if trial < 0 or trial >= cfg.trials:
        raise ValueError(f"trial must be in [0, {cfg.trials})")
    model, params, schedule = _prepare(cfg)
    tseed = np.random.SeedSequence(cfg.master_seed).spawn(trial + 1)[trial]
    topo_ss, chain_ss, attack_ss = tseed.spawn(3)
    topo = build_topology_once(cfg.topology, cfg.aggregation)
    if topo is None:
        topo = _draw_erdos_renyi(cfg.topology, topo_ss, cfg.aggregation)
    sim = Simulation(
        model, topo, params, schedule, aggregation=cfg.aggregation, attack=cfg.attack
    )
    return sim, chain_ss, attack_ss


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None) -> ExperimentResult:
    """Run every trial of a config, averaging traces and writing outputs.

    Seeding: SeedSequence(master_seed) spawns one child per trial; each
    trial child spawns (topology, chain, attack) streams in that order.
    Random topologies redraw per trial unless their seed is pinned in
    the config.  out_dir overrides [run] out; with neither, nothing is
    written.
    """
    model, params, schedule = _prepare(cfg)
    out = out_dir if out_dir is not None else cfg.out
    if out:
        os.makedirs(out, exist_ok=True)

    fixed_topo = build_topology_once(cfg.topology, cfg.aggregation)
    fixed_sim = None
    if fixed_topo is not None:
        fixed_sim = Simulation(
            model, fixed_topo, params, schedule, aggregation=cfg.aggregation, attack=cfg.attack
        )

    chash = cfg.config_hash()
    master = np.random.SeedSequence(cfg.master_seed)
    traces: list[MetricsTrace] = []
    topologies: list[NetworkTopology] = []
    for i, tseed in enumerate(master.spawn(cfg.trials)):
        topo_ss, chain_ss, attack_ss = tseed.spawn(3)
        if fixed_sim is not None:
            sim = fixed_sim
        else:
            topo = _draw_erdos_renyi(cfg.topology, topo_ss, cfg.aggregation)
            sim = Simulation(
                model, topo, params, schedule, aggregation=cfg.aggregation, attack=cfg.attack
            )
        header = {
            "config": chash,
            "master_seed": cfg.master_seed,
            "trial": i,
            "lambda": _fmt(cfg.lam),
            "aggregation": cfg.aggregation,
            "attack": cfg.attack.kind,
            "schedule": cfg.schedule.kind,
            "delta_sq": _fmt(measured_reward_variation(sim.restricted_model)),
            "theta_inf": " ".join(_fmt(x) for x in sim.steady.theta_inf),
        }
        d_g = _unsaturation_or_none(sim.topology)
        if d_g is not None:
            header["d_g"] = d_g
        trace = sim.run_trial(cfg.steps, chain_seed=chain_ss, attack_seed=attack_ss, meta=header)
        traces.append(trace)
        topologies.append(sim.topology)
        logger.info(
            "trial %d/%d: %d recorded steps%s",
            i + 1,
            cfg.trials,
            len(trace),
            "" if trace.diverged_at is None else f" (diverged at {trace.diverged_at})",
        )
        if out:
            save_trace_csv(trace, os.path.join(out, f"trial_{i:03d}.csv"), header)
            if fixed_topo is None:
                save_topology(sim.topology, os.path.join(out, f"topology_{i:03d}.txt"))

    averaged = average_traces(traces)
    avg_meta = {
        "config": chash,
        "master_seed": cfg.master_seed,
        "trials": cfg.trials,
        "lambda": _fmt(cfg.lam),
        "aggregation": cfg.aggregation,
        "attack": cfg.attack.kind,
        "schedule": cfg.schedule.kind,
        "steps": cfg.steps,
    }
    if fixed_sim is not None:
        d_g = _unsaturation_or_none(fixed_topo)
        if d_g is not None:
            avg_meta["d_g"] = d_g
        avg_meta["delta_sq"] = _fmt(measured_reward_variation(fixed_sim.restricted_model))
        avg_meta["theta_inf"] = " ".join(_fmt(x) for x in fixed_sim.steady.theta_inf)
    averaged.meta.update(avg_meta)
    if out:
        save_trace_csv(averaged, os.path.join(out, "averaged.csv"), avg_meta)
        save_model(model, os.path.join(out, "model.txt"))
        if fixed_topo is not None:
            save_topology(fixed_topo, os.path.join(out, "topology.txt"))

    return ExperimentResult(
        traces=traces, averaged=averaged, model=model, topologies=topologies, out_dir=out or None
    )
