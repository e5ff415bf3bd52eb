"""Booster station placement: per-step forward greedy, scenario weighting,
baselines, district-wise solving and backup re-placement.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

from .controllability import (
    EPS_REL,
    MetricKind,
    column_traces,
    gramian,
    gramian_trace,
    logdet,
    logdet_epsilon,
)
from .dynamics import BoosterPacing, StateIndex, StateSpace, WQParams, state_space_for_step
from .hydraulics import HydraulicProfile
from .network import NetworkTopology
from .structural import StructurePair, _pattern, sc_dimsrs

__all__ = [
    "PlacementConfig",
    "StepEvaluator",
    "StepResult",
    "PlacementTimeline",
    "SetWeight",
    "WeightReport",
    "WEIGHTING_PRESETS",
    "greedy_step",
    "greedy_placement",
    "solve_space",
    "solve_timeline",
    "weigh_sets",
    "weigh_sets_by_dimsrs",
    "peak_demand_steps",
    "compare_strategies",
    "district_space",
    "partition_solve",
    "BackupResult",
    "backup_replacement",
]

# (mu1, mu2, mu3, mu4)
WEIGHTING_PRESETS = {
    "WS1": (1.0, 1.0, 1.0, 1.0),
    "WS2": (1.0, 0.0, 1.0, 1.0),
    "WS3": (0.0, 0.0, 1.0, 0.0),
}

# cap on cached per-candidate Gramians for the log-det objective
_GRAMIAN_CACHE_BYTES = 512 * 2**20


@dataclass(frozen=True)
class PlacementConfig:
    n_s: int
    metric: MetricKind = MetricKind.TRACE
    pool: tuple[str, ...] | None = None
    dt_wq: float = 10.0
    dt_h: float | None = None
    pacing: BoosterPacing = field(default_factory=BoosterPacing)
    max_segments: int | None = None
    eps_rel: float = EPS_REL
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "metric", MetricKind(self.metric))
        if self.n_s < 1:
            raise ValueError("n_s must be at least 1")
        if self.pool is not None:
            object.__setattr__(self, "pool", tuple(self.pool))
            if self.n_s > len(self.pool):
                raise ValueError(f"n_s={self.n_s} exceeds the candidate pool ({len(self.pool)})")

    @property
    def params(self) -> WQParams:
        return WQParams(self.dt_wq, self.pacing, self.max_segments)

    def horizon(self, dt_h: float) -> int:
        if self.dt_h is not None and not math.isclose(self.dt_h, dt_h, rel_tol=1e-9):
            raise ValueError(f"configured dt_h={self.dt_h} but profile has {dt_h}")
        return self.params.steps_per(dt_h)

    def candidates(self, topology_or_nodes) -> tuple[str, ...]:
        nodes = topology_or_nodes.node_ids if isinstance(topology_or_nodes, NetworkTopology) else list(topology_or_nodes)
        if self.pool is None:
            return tuple(nodes)
        known = set(nodes)
        unknown = [n for n in self.pool if n not in known]
        if unknown:
            raise ValueError(f"candidate pool contains unknown nodes {unknown}")
        return self.pool


class StepEvaluator:
    """Set-function values f(S) for one state space and horizon.

    Trace uses per-column traces (the trace objective is modular). LogDet is
    the normalized ``logdet(W_S + eps I) - n_x log eps`` with one eps per
    step, computed from the Gramian of the whole pool plus any fixed inputs,
    so every set is compared under the same regularization.

    ``base`` holds always-on input columns (imports from other districts,
    surviving stations); they enter every W_S.
    """

    def __init__(
        self,
        space: StateSpace,
        kind: MetricKind | str,
        n_steps: int,
        pool: Sequence[str],
        base: np.ndarray | None = None,
        eps_rel: float = EPS_REL,
    ):
        self.space = space
        self.kind = MetricKind(kind)
        self.n_steps = n_steps
        self.pool = list(pool)
        self.column = {node: j for j, node in enumerate(self.pool)}
        self.B = space.input_matrix(self.pool)
        n = space.n_x
        self.base = np.zeros((n, 0)) if base is None else np.asarray(base, dtype=float).reshape(n, -1)
        self.traces = column_traces(space.A, self.B, n_steps) if self.pool else np.zeros(0)
        self.base_trace = gramian_trace(space.A, self.base, n_steps) if self.base.shape[1] else 0.0
        self.trace_of = dict(zip(self.pool, self.traces.tolist()))
        self.eps = logdet_epsilon(self.base_trace + math.fsum(self.traces), n, eps_rel)
        self._FA = _pattern(space.A)
        self._W: dict[str, np.ndarray] = {}
        self._cache_ok = n * n * 8 * max(1, len(self.pool)) <= _GRAMIAN_CACHE_BYTES
        self._W_base = None

    # -- Gramians ----------------------------------------------------------

    def gramian_of(self, node: str) -> np.ndarray:
        W = self._W.get(node)
        if W is None:
            j = self.column[node]
            W = gramian(self.space.A, self.B[:, j : j + 1], self.n_steps).W
            if self._cache_ok:
                self._W[node] = W
        return W

    @property
    def base_gramian(self) -> np.ndarray:
        if self._W_base is None:
            n = self.space.n_x
            self._W_base = gramian(self.space.A, self.base, self.n_steps).W if self.base.shape[1] else np.zeros((n, n))
        return self._W_base

    def _normalized_logdet(self, W: np.ndarray) -> float:
        return logdet(W, self.eps) - W.shape[0] * math.log(self.eps)

    # -- set function --------------------------------------------------------

    def value(self, nodes: Iterable[str]) -> float:
        """f(S) for the pool subset ``nodes`` (plus base inputs)."""
        nodes = sorted(set(nodes))
        if self.kind is MetricKind.TRACE:
            return self.base_trace + math.fsum(self.trace_of[n] for n in nodes)
        W = self.base_gramian.copy()
        for n in nodes:
            W += self.gramian_of(n)
        return self._normalized_logdet(W)

    def structure(self, nodes: Sequence[str]) -> tuple[bool, int]:
        """(sc, dimsrs) of (A, [base, B_S])."""
        cols = [self.column[n] for n in nodes]
        B = np.hstack([self.base, self.B[:, cols]])
        return sc_dimsrs(StructurePair(self._FA, _pattern(B, self.space.n_x)))


def greedy_step(
    space: StateSpace | StepEvaluator,
    config: PlacementConfig,
    already: Sequence[str] = (),
    *,
    n_steps: int | None = None,
    pool: Sequence[str] | None = None,
) -> tuple[str, float, bool]:
    """One forward-greedy pick: the candidate with the largest marginal gain.

    Ties go to the lexicographically smallest node name. Returns the node,
    its gain and whether (A, B_{already + node}) is structurally controllable.
    """
    ev = space if isinstance(space, StepEvaluator) else None
    if ev is None:
        if n_steps is None:
            raise ValueError("n_steps (the controllability horizon) is required with a bare StateSpace")
        ev = StepEvaluator(space, config.metric, n_steps, pool or config.candidates(space.nodes), eps_rel=config.eps_rel)
    node, gain = _best_candidate(ev, list(already))
    flag, _ = ev.structure(list(already) + [node])
    return node, gain, flag


def _best_candidate(ev: StepEvaluator, already: list[str], current: tuple[float, np.ndarray | None] | None = None):
    taken = set(already)
    remaining = sorted(n for n in ev.pool if n not in taken)
    if not remaining:
        raise ValueError("no candidates left in the pool")
    if ev.kind is MetricKind.TRACE:
        best, best_gain = None, -math.inf
        for node in remaining:
            gain = ev.trace_of[node]
            if gain > best_gain:
                best, best_gain = node, gain
        return best, best_gain
    if current is None:
        W_S = ev.base_gramian.copy()
        for n in already:
            W_S += ev.gramian_of(n)
        f_S = ev._normalized_logdet(W_S)
    else:
        f_S, W_S = current
    best, best_gain = None, -math.inf
    for node in remaining:
        gain = ev._normalized_logdet(W_S + ev.gramian_of(node)) - f_S
        if gain > best_gain:
            best, best_gain = node, gain
    return best, best_gain


def greedy_placement(ev: StepEvaluator, n_s: int, already: Sequence[str] = ()):
    """Run ``n_s`` greedy picks. Returns (nodes, gains, sc flags, dimsrs values)."""
    chosen = list(already)
    nodes, gains, flags, dims = [], [], [], []
    current = None
    for _ in range(n_s):
        node, gain = _best_candidate(ev, chosen, current)
        chosen.append(node)
        if ev.kind is MetricKind.LOGDET:
            W_S = (current[1] if current else _sum_gramians(ev, chosen[:-1])) + ev.gramian_of(node)
            current = (ev._normalized_logdet(W_S), W_S)
        flag, dim = ev.structure(chosen)
        nodes.append(node)
        gains.append(gain)
        flags.append(flag)
        dims.append(dim)
    return nodes, gains, flags, dims


def _sum_gramians(ev: StepEvaluator, nodes):
    W = ev.base_gramian.copy()
    for n in nodes:
        W += ev.gramian_of(n)
    return W


# --------------------------------------------------------------------------
# timelines


@dataclass(frozen=True)
class StepResult:
    step: int
    time: float
    nodes: tuple[str, ...]
    gains: tuple[float, ...]
    sc_prefix: tuple[bool, ...]
    dimsrs_prefix: tuple[int, ...]
    n_x: int
    value: float
    total_demand: float = 0.0
    eps: float | None = None

    @property
    def station_set(self) -> frozenset[str]:
        return frozenset(self.nodes)

    @property
    def sc(self) -> bool:
        return self.sc_prefix[-1]

    @property
    def dimsrs(self) -> int:
        return self.dimsrs_prefix[-1]


@dataclass(frozen=True)
class PlacementTimeline:
    scenario: str
    metric: MetricKind
    n_s: int
    dt_h: float
    steps: tuple[StepResult, ...]

    @property
    def sets(self) -> list[frozenset[str]]:
        return [s.station_set for s in self.steps]

    @property
    def z(self) -> list[bool]:
        return [s.sc for s in self.steps]


def solve_space(
    space: StateSpace,
    config: PlacementConfig,
    n_steps: int,
    pool: Sequence[str],
    base: np.ndarray | None = None,
    total_demand: float = 0.0,
) -> StepResult:
    ev = StepEvaluator(space, config.metric, n_steps, pool, base, config.eps_rel)
    if config.n_s > len(ev.pool):
        raise ValueError(f"n_s={config.n_s} exceeds the candidate pool ({len(ev.pool)})")
    nodes, gains, flags, dims = greedy_placement(ev, config.n_s)
    return StepResult(
        step=space.step,
        time=space.time,
        nodes=tuple(nodes),
        gains=tuple(gains),
        sc_prefix=tuple(flags),
        dimsrs_prefix=tuple(dims),
        n_x=space.n_x,
        value=ev.value(nodes),
        total_demand=total_demand,
        eps=ev.eps if ev.kind is MetricKind.LOGDET else None,
    )


def _solve_step(args) -> StepResult:
    topology, profile, config, k, pool, n_p = args
    space = state_space_for_step(topology, profile, k, config.params)
    return solve_space(space, config, n_p, pool, total_demand=profile.total_demand(k))


def _map(fn, items: list, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def solve_timeline(topology: NetworkTopology, profile: HydraulicProfile, config: PlacementConfig) -> PlacementTimeline:
    """Greedy placement at every hydraulic step of a profile."""
    n_p = config.horizon(profile.dt_h)
    pool = config.candidates(topology)
    if config.n_s > len(pool):
        raise ValueError(f"n_s={config.n_s} exceeds the candidate pool ({len(pool)})")
    items = [(topology, profile, config, k, pool, n_p) for k in range(profile.n_steps)]
    steps = _map(_solve_step, items, config.jobs)
    return PlacementTimeline(profile.scenario_id, config.metric, config.n_s, profile.dt_h, tuple(steps))


# --------------------------------------------------------------------------
# weighting across scenarios


@dataclass(frozen=True)
class SetWeight:
    nodes: tuple[str, ...]
    weight: float
    terms: tuple[float, float, float, float]
    count: int
    sc_count: float


@dataclass(frozen=True)
class WeightReport:
    mu: tuple[float, float, float, float]
    entries: tuple[SetWeight, ...]
    winner: tuple[str, ...]
    node_frequency: Mapping[str, int]
    structural_term: str = "sc"

    def entry(self, nodes) -> SetWeight:
        key = tuple(sorted(nodes))
        for e in self.entries:
            if e.nodes == key:
                return e
        raise KeyError(key)

    def as_dict(self) -> dict:
        return {
            "mu": list(self.mu),
            "structural_term": self.structural_term,
            "winner": list(self.winner),
            "node_frequency": dict(self.node_frequency),
            "sets": [
                {
                    "set": list(e.nodes),
                    "weight": e.weight,
                    "terms": list(e.terms),
                    "count": e.count,
                    "sc_count": e.sc_count,
                }
                for e in self.entries
            ],
        }


def peak_demand_steps(timeline: PlacementTimeline, percentile: float = 90.0) -> set[int]:
    """Steps whose total demand is at or above the given percentile of the scenario."""
    demands = np.array([s.total_demand for s in timeline.steps])
    if demands.size == 0:
        return set()
    cut = np.percentile(demands, percentile)
    return {s.step for s in timeline.steps if s.total_demand >= cut}


CriticalSpec = None | Iterable[int] | Mapping[str, Iterable[int]] | Callable[[PlacementTimeline, StepResult], bool]


def _critical_predicate(critical: CriticalSpec):
    if critical is None:
        return lambda tl, st: False
    if callable(critical):
        return critical
    if isinstance(critical, Mapping):
        table = {k: set(v) for k, v in critical.items()}
        return lambda tl, st: st.step in table.get(tl.scenario, ())
    steps = set(critical)
    return lambda tl, st: st.step in steps


def _weigh(timelines: Sequence[PlacementTimeline], mu, critical: CriticalSpec, structural_term: str) -> WeightReport:
    if not timelines or not any(tl.steps for tl in timelines):
        raise ValueError("no timelines to weigh")
    mu = tuple(float(m) for m in mu)
    if len(mu) != 4:
        raise ValueError("mu needs four coefficients")
    n_s = timelines[0].n_s
    t_steps = len(timelines[0].steps)
    for tl in timelines:
        if tl.n_s != n_s or len(tl.steps) != t_steps or tl.dt_h != timelines[0].dt_h:
            raise ValueError("timelines differ in n_s, step count or hydraulic step")
    n_hp = len(timelines)
    is_critical = _critical_predicate(critical)

    count: Counter = Counter()
    struct: dict[tuple, float] = {}
    crit: set[tuple] = set()
    node_count: Counter = Counter()
    for tl in timelines:
        for st in tl.steps:
            key = tuple(sorted(st.nodes))
            count[key] += 1
            if structural_term == "dimsrs":
                struct[key] = struct.get(key, 0.0) + st.dimsrs / st.n_x
            else:
                struct[key] = struct.get(key, 0.0) + (1.0 if st.sc else 0.0)
            if is_critical(tl, st):
                crit.add(key)
            node_count.update(st.nodes)

    denom = n_hp * t_steps
    entries = []
    for key in sorted(count):
        t1 = count[key] / denom
        t2 = struct[key] / count[key]
        t3 = sum(node_count[k] for k in key) / (n_s * denom)
        t4 = 1.0 if key in crit else 0.0
        w = mu[0] * t1 + mu[1] * t2 + mu[2] * t3 + mu[3] * t4
        entries.append(SetWeight(key, w, (t1, t2, t3, t4), count[key], struct[key]))

    # near-equal weights (within rounding) are ties: prefer term 1, then set order
    top = max(e.weight for e in entries)
    tol = 1e-12 * max(1.0, abs(top))
    tied = [e for e in entries if e.weight >= top - tol]
    best_t1 = max(e.terms[0] for e in tied)
    tied = [e for e in tied if e.terms[0] >= best_t1 - 1e-12]
    winner = min(e.nodes for e in tied)
    freq = {k: node_count[k] for k in sorted(node_count)}
    return WeightReport(mu, tuple(entries), winner, freq, structural_term)


def weigh_sets(timelines: Sequence[PlacementTimeline], mu=WEIGHTING_PRESETS["WS1"], critical: CriticalSpec = None) -> WeightReport:
    """Weight every distinct station set over all scenarios and pick the heaviest.

    Terms per set S_i (each in [0, 1]):
    1. selections of S_i / (N_HP * T);
    2. selections where the full set was structurally controllable / selections of S_i;
    3. sum over members of their selection counts (in any set) / (n_s * N_HP * T);
    4. 1 if S_i was selected at a critical step, else 0.
    The weight is sum mu_k * term_k. Ties go to term 1, then to the
    lexicographically smallest set.
    """
    return _weigh(list(timelines), mu, critical, "sc")


def weigh_sets_by_dimsrs(
    timelines: Sequence[PlacementTimeline], mu=WEIGHTING_PRESETS["WS1"], critical: CriticalSpec = None
) -> WeightReport:
    """As :func:`weigh_sets`, with term 2 the mean dimsrs / n_x over the set's selections."""
    return _weigh(list(timelines), mu, critical, "dimsrs")


# --------------------------------------------------------------------------
# baselines


def compare_strategies(
    topology: NetworkTopology,
    profile: HydraulicProfile,
    config: PlacementConfig,
    seeds: Sequence[int] = (),
) -> list[dict]:
    """Greedy vs. random vs. uniform (whole pool) metric values at every step.

    Each seed owns one generator that draws a uniform n_s-subset of the pool
    at every step. ``relative_pct`` is 100 f(S) / f(pool) with the
    normalized (nonnegative) LogDet, so both metrics read as percentages.
    """
    n_p = config.horizon(profile.dt_h)
    pool = list(config.candidates(topology))
    rngs = [(seed, np.random.default_rng(seed)) for seed in seeds]
    rows = []
    for k in range(profile.n_steps):
        space = state_space_for_step(topology, profile, k, config.params)
        ev = StepEvaluator(space, config.metric, n_p, pool, eps_rel=config.eps_rel)
        nodes, *_ = greedy_placement(ev, config.n_s)
        f_pool = ev.value(pool)

        def row(strategy, seed, value):
            rel = 100.0 * value / f_pool if f_pool > 0 else float("nan")
            return {
                "step": k,
                "strategy": strategy,
                "seed": seed,
                "metric": config.metric.value,
                "value": value,
                "relative_pct": rel,
                "set": tuple(sorted(nodes)) if strategy == "greedy" else None,
            }

        rows.append(row("greedy", None, ev.value(nodes)))
        for seed, rng in rngs:
            pick = rng.choice(len(pool), size=config.n_s, replace=False)
            chosen = [pool[i] for i in sorted(pick)]
            r = row("random", seed, ev.value(chosen))
            r["set"] = tuple(sorted(chosen))
            rows.append(r)
        r = row("uniform", None, f_pool)
        r["set"] = tuple(sorted(pool))
        rows.append(r)
    return rows


# --------------------------------------------------------------------------
# districts


def district_space(space: StateSpace, topology: NetworkTopology, members: set[str]) -> tuple[StateSpace, np.ndarray, list[str]]:
    """Restrict a network state space to one district.

    Kept states: the district's nodes, and pumps, valves and pipe segments of
    links with both ends inside. Every excluded state that feeds a kept state
    becomes an always-on import column (the water it delivers is taken as
    already chlorinated), with the coefficient it had in A.

    Returns the district StateSpace, the import columns and their labels.
    """
    idx = space.index
    internal = {
        link.id for link in topology.links if link.start in members and link.end in members
    }
    keep_mask = np.zeros(space.n_x, dtype=bool)
    for i, label in enumerate(idx.labels[: idx.n_nodes]):
        keep_mask[i] = label in members
    for i in range(idx.n_nodes, idx.n_nodes + idx.n_links):
        keep_mask[i] = idx.labels[i] in internal
    for pid, (start, count, _) in idx.pipes.items():
        if pid in internal:
            keep_mask[start : start + count] = True
    keep = np.flatnonzero(keep_mask)
    if keep.size == 0:
        raise ValueError("district has no states")
    drop = np.flatnonzero(~keep_mask)
    A = space.A.tocsr()
    A_d = A[keep][:, keep].tocsr()
    A_d.sort_indices()
    coupling = A[keep][:, drop].tocsc()
    feeding = [j for j in range(coupling.shape[1]) if coupling.indptr[j + 1] > coupling.indptr[j]]
    imports = coupling[:, feeding].toarray() if feeding else np.zeros((keep.size, 0))
    import_labels = [f"import:{idx.labels[drop[j]]}" for j in feeding]

    new_pos = {int(old): new for new, old in enumerate(keep)}
    labels = tuple(idx.labels[i] for i in keep)
    n_nodes = sum(1 for i in keep if i < idx.n_nodes)
    n_links = sum(1 for i in keep if idx.n_nodes <= i < idx.n_nodes + idx.n_links)
    pipes = {pid: (new_pos[start], count, rev) for pid, (start, count, rev) in idx.pipes.items() if pid in internal}
    columns = {}
    for node in labels[:n_nodes]:
        col = space.candidate_columns[node]
        rows = [new_pos[int(r)] for r in col.indices]
        columns[node] = sparse.csc_matrix((col.data, (rows, [0] * len(rows))), shape=(keep.size, 1))
    sub = StateSpace(
        A=A_d,
        index=StateIndex(labels, pipes, n_nodes, n_links),
        dt_wq=space.dt_wq,
        step=space.step,
        time=space.time,
        segmentation={pid: s for pid, s in space.segmentation.items() if pid in internal},
        candidate_columns=columns,
    )
    return sub, imports, import_labels


def _solve_district_step(args) -> StepResult:
    topology, profile, config, k, members, pool, n_p = args
    space = state_space_for_step(topology, profile, k, config.params)
    sub, imports, _ = district_space(space, topology, members)
    demand = sum(d for j, d in profile.snapshots[k].demand.items() if j in members)
    return solve_space(sub, config, n_p, pool, imports, total_demand=demand)


def partition_solve(
    topology: NetworkTopology,
    profile: HydraulicProfile,
    partition: Mapping[str, str],
    config: PlacementConfig,
) -> dict[str, PlacementTimeline]:
    """Solve every district separately with boundary inflows as fixed inputs."""
    missing = [n for n in topology.node_ids if n not in partition]
    if missing:
        raise ValueError(f"partition does not cover nodes {missing}")
    n_p = config.horizon(profile.dt_h)
    pool_all = config.candidates(topology)
    districts: dict[str, set[str]] = {}
    for node in topology.node_ids:
        districts.setdefault(partition[node], set()).add(node)
    out = {}
    for name in sorted(districts):
        members = districts[name]
        pool = tuple(n for n in pool_all if n in members)
        if config.n_s > len(pool):
            raise ValueError(f"district {name!r}: n_s={config.n_s} exceeds its pool ({len(pool)})")
        items = [(topology, profile, config, k, members, pool, n_p) for k in range(profile.n_steps)]
        steps = _map(_solve_district_step, items, config.jobs)
        out[name] = PlacementTimeline(f"{profile.scenario_id}@{name}", config.metric, config.n_s, profile.dt_h, tuple(steps))
    return out


# --------------------------------------------------------------------------
# backup stations


@dataclass(frozen=True)
class BackupResult:
    steps: tuple[tuple[int, float, str, float], ...]
    most_frequent: str | None


def backup_replacement(
    topology: NetworkTopology,
    profile: HydraulicProfile,
    config: PlacementConfig,
    fixed: Sequence[str],
    failed: str,
    t_fail: float,
    horizon: float,
    pool: Sequence[str] | None = None,
) -> BackupResult:
    """Best single replacement for a failed station at each step of the outage.

    Covers the hydraulic steps overlapping [t_fail, t_fail + horizon). The
    surviving stations stay in place; candidates exclude every station of the
    original set. The most frequent pick (ties: smallest name) is reported.
    """
    fixed = list(fixed)
    if failed not in fixed:
        raise ValueError(f"failed station {failed!r} is not in the fixed set")
    if not 0.0 <= t_fail <= profile.duration:
        raise ValueError(f"t_fail={t_fail} outside the profile")
    if pool is not None and failed in pool:
        raise ValueError(f"failed station {failed!r} cannot be a replacement candidate")
    base_pool = list(pool) if pool is not None else list(config.candidates(topology))
    candidates = [n for n in base_pool if n not in set(fixed)]
    if not candidates:
        raise ValueError("no replacement candidates left")
    survivors = [n for n in fixed if n != failed]
    n_p = config.horizon(profile.dt_h)
    rows = []
    for k, snap in enumerate(profile.snapshots):
        if not (snap.time < t_fail + horizon and snap.time + profile.dt_h > t_fail):
            continue
        space = state_space_for_step(topology, profile, k, config.params)
        base = space.input_matrix(survivors)
        ev = StepEvaluator(space, config.metric, n_p, candidates, base, config.eps_rel)
        node, gain = _best_candidate(ev, [])
        rows.append((k, snap.time, node, gain))
    if not rows:
        return BackupResult((), None)
    counts = Counter(r[2] for r in rows)
    top = max(counts.values())
    best = min(n for n, c in counts.items() if c == top)
    return BackupResult(tuple(rows), best)
