"""Discrete-time chlorine transport model for one hydraulic step.

States are concentrations at every reservoir, junction and tank, at every
pump and valve, and at every pipe segment produced by the upwind grid. The
update is ``x(t + dt_wq) = A x(t) + B u(t)`` with A fixed for the duration of
a hydraulic step, except for the tank rows, which follow the tank volume.

Modelling conventions:

* junctions, pumps and valves are states updated from upstream values of
  the previous WQ step (one-step transport lag);
* a junction with no demand and no outflow, and a pump or valve without
  flow, keep their concentration (identity row);
* a stagnant pipe is a single segment that only decays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import sparse

from .hydraulics import HydraulicProfile, HydraulicSnapshot, node_flows, tank_volume_at
from .network import Link, LinkKind, NetworkTopology, NodeKind

__all__ = [
    "SegmentationError",
    "Segmentation",
    "BoosterPacing",
    "WQParams",
    "StateIndex",
    "StateSpace",
    "segmentize",
    "build_state_matrix",
    "state_space_for_step",
    "candidate_column",
    "remap_state",
    "initial_state",
    "simulate",
    "dump_coo",
    "index_json",
]


class SegmentationError(ValueError):
    """The WQ time-step is too long for a pipe (water crosses it in one step)."""

    def __init__(self, pipe: str, velocity: float, dt_wq: float, length: float):
        self.pipe = pipe
        super().__init__(
            f"pipe {pipe!r}: v*dt_wq = {velocity * dt_wq:.6g} m exceeds length {length:.6g} m; "
            "reduce the WQ time-step"
        )


@dataclass(frozen=True)
class Segmentation:
    n_segments: int
    dx: float
    courant: float


def segmentize(pipe: Link, velocity: float, dt_wq: float, max_segments: int | None = None) -> Segmentation:
    """Split a pipe into ``floor(L / (v dt))`` segments so the Courant number is at most 1.

    ``max_segments`` optionally caps the count for very slow pipes; the
    Courant number then drops below the floor-formula value but stays in (0, 1].
    """
    length = pipe.length
    if velocity < 0:
        raise ValueError("velocity must be nonnegative (use |q|/area)")
    if velocity == 0.0:
        return Segmentation(1, length, 0.0)
    travel = velocity * dt_wq
    if travel > length:
        raise SegmentationError(pipe.id, velocity, dt_wq, length)
    # the 1e-9 guard keeps an exact ratio such as 100 from flooring to 99
    n = int(math.floor(length / travel + 1e-9))
    if max_segments is not None:
        n = min(n, max_segments)
    n = max(n, 1)
    dx = length / n
    return Segmentation(n, dx, min(1.0, travel / dx))


@dataclass(frozen=True)
class BoosterPacing:
    """How strongly a unit booster input moves the concentration at its node.

    ``mode="unit"``: each candidate column is a unit vector at the node's row,
    i.e. the booster flow equals the node throughput (junction) or the
    injected volume equals the tank volume.

    ``mode="flow"``: the booster flow is ``fraction`` of the node
    throughput, at least ``floor`` m3/s, unless given in ``flows``.
    Reservoir columns are 1 in both modes.
    """

    mode: str = "unit"
    fraction: float = 0.01
    floor: float = 1e-6
    flows: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("unit", "flow"):
            raise ValueError(f"unknown booster pacing mode {self.mode!r}")


@dataclass(frozen=True)
class WQParams:
    dt_wq: float
    pacing: BoosterPacing = field(default_factory=BoosterPacing)
    max_segments: int | None = None

    def __post_init__(self):
        if not self.dt_wq > 0:
            raise ValueError("dt_wq must be positive")

    def steps_per(self, dt_h: float) -> int:
        ratio = dt_h / self.dt_wq
        n = int(round(ratio))
        if n < 1 or not math.isclose(ratio, n, rel_tol=1e-9):
            raise ValueError(f"dt_wq={self.dt_wq} does not divide dt_h={dt_h}")
        return n


@dataclass(frozen=True)
class StateIndex:
    """Bijection between positions 0..n_x-1 and named states.

    Nodes come first (topology order), then pumps and valves (link order),
    then pipe segments. A segment label is ``"<pipe>:<k>"`` with k = 1 at the
    upstream end of the current flow; ``pipes[pid] = (start, count, reversed)``
    where ``reversed`` means the flow runs against the declared direction.
    """

    labels: tuple[str, ...]
    pipes: Mapping[str, tuple[int, int, bool]]
    n_nodes: int
    n_links: int

    @property
    def n_x(self) -> int:
        return len(self.labels)

    @property
    def position(self) -> dict[str, int]:
        try:
            return self._position
        except AttributeError:
            pos = {label: i for i, label in enumerate(self.labels)}
            object.__setattr__(self, "_position", pos)
            return pos

    def __getitem__(self, label: str) -> int:
        return self.position[label]

    def outlet(self, link: Link) -> int:
        """State carrying water out of ``link`` into its downstream node."""
        if link.kind is LinkKind.PIPE:
            start, count, _ = self.pipes[link.id]
            return start + count - 1
        return self.position[link.id]

    def physical_order(self, pipe_id: str) -> np.ndarray:
        """Positions of a pipe's segments from declared start node to end node."""
        start, count, rev = self.pipes[pipe_id]
        idx = np.arange(start, start + count)
        return idx[::-1] if rev else idx


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Water-quality model of one hydraulic step."""

    A: sparse.csr_matrix
    index: StateIndex
    dt_wq: float
    step: int
    time: float
    segmentation: Mapping[str, Segmentation]
    candidate_columns: Mapping[str, sparse.csc_matrix]

    @property
    def n_x(self) -> int:
        return self.index.n_x

    @property
    def nodes(self) -> list[str]:
        return list(self.candidate_columns)

    def input_matrix(self, nodes) -> np.ndarray:
        """Dense B whose columns are the candidate columns of ``nodes``, in order."""
        B = np.zeros((self.n_x, len(nodes)))
        for j, node in enumerate(nodes):
            col = self.candidate_columns[node]
            B[col.indices, j] = col.data
        return B


# --------------------------------------------------------------------------
# assembly


def _build_index(topology: NetworkTopology, snapshot: HydraulicSnapshot, seg: Mapping[str, Segmentation]):
    labels = [n.id for n in topology.nodes]
    n_nodes = len(labels)
    labels += [link.id for link in topology.links if link.kind is not LinkKind.PIPE]
    n_links = len(labels) - n_nodes
    pipes = {}
    for link in topology.links:
        if link.kind is not LinkKind.PIPE:
            continue
        count = seg[link.id].n_segments
        pipes[link.id] = (len(labels), count, snapshot.flow[link.id] < 0)
        labels += [f"{link.id}:{k}" for k in range(1, count + 1)]
    if len(set(labels)) != len(labels):
        raise ValueError("state labels collide; node, pump/valve and pipe ids must be distinct")
    return StateIndex(tuple(labels), pipes, n_nodes, n_links)


class _Assembler:
    """Triplet assembly shared by the step matrix and per-substep tank updates."""

    def __init__(self, topology: NetworkTopology, snapshot: HydraulicSnapshot, params: WQParams):
        self.topology = topology
        self.snapshot = snapshot
        self.params = params
        self.seg = {
            link.id: segmentize(link, snapshot.velocity[link.id], params.dt_wq, params.max_segments)
            for link in topology.links
            if link.kind is LinkKind.PIPE
        }
        self.index = _build_index(topology, snapshot, self.seg)
        self.flows = {n.id: node_flows(topology, snapshot, n.id) for n in topology.nodes}
        self.static = self._static_entries()

    def _static_entries(self):
        topo, snap, idx = self.topology, self.snapshot, self.index
        pos = idx.position
        dt = self.params.dt_wq
        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(r)
            cols.append(c)
            vals.append(v)

        for node in topo.nodes:
            r = pos[node.id]
            if node.kind is NodeKind.RESERVOIR:
                add(r, r, 1.0)
            elif node.kind is NodeKind.JUNCTION:
                inflows, outflows = self.flows[node.id]
                den = snap.demand[node.id] + math.fsum(q for _, q in outflows)
                if den == 0.0:
                    add(r, r, 1.0)
                else:
                    for lid, q in inflows:
                        add(r, idx.outlet(topo.link(lid)), q / den)
        for link in topo.links:
            q = snap.flow[link.id]
            if link.kind is LinkKind.PIPE:
                start, count, rev = idx.pipes[link.id]
                s = self.seg[link.id]
                decay = topo.bulk_rate + link.decay_rate_wall
                lam = s.courant
                self_coeff = (1.0 - lam) - dt * decay
                up = pos[link.end if rev else link.start]
                for k in range(count):
                    r = start + k
                    if self_coeff != 0.0:
                        add(r, r, self_coeff)
                    if lam > 0.0:
                        add(r, up if k == 0 else r - 1, lam)
            else:
                r = pos[link.id]
                if q == 0.0:
                    add(r, r, 1.0)
                else:
                    add(r, pos[link.start if q > 0 else link.end], 1.0)
        return rows, cols, vals

    def default_volumes(self) -> dict[str, tuple[float, float]]:
        dt = self.params.dt_wq
        vols = {}
        for tank, v in self.snapshot.volume.items():
            inflows, outflows = self.flows[tank]
            net = sum(q for _, q in inflows) - sum(q for _, q in outflows)
            vols[tank] = (v, v + net * dt)
        return vols

    def tank_entries(self, volumes: Mapping[str, tuple[float, float]]):
        topo, idx = self.topology, self.index
        pos = idx.position
        dt = self.params.dt_wq
        kb = topo.bulk_rate
        rows, cols, vals = [], [], []
        for node in topo.nodes:
            if node.kind is not NodeKind.TANK:
                continue
            v_now, v_next = volumes[node.id]
            if v_now <= 0 or v_next <= 0:
                raise ValueError(f"tank {node.id!r} volume must stay positive ({v_now}, {v_next})")
            inflows, outflows = self.flows[node.id]
            q_out = math.fsum(q for _, q in outflows)
            r = pos[node.id]
            rows.append(r)
            cols.append(r)
            vals.append((v_now * (1.0 - kb * dt) - q_out * dt) / v_next)
            for lid, q in inflows:
                rows.append(r)
                cols.append(idx.outlet(topo.link(lid)))
                vals.append(q * dt / v_next)
        return rows, cols, vals

    def matrix(self, volumes) -> sparse.csr_matrix:
        r1, c1, v1 = self.static
        r2, c2, v2 = self.tank_entries(volumes)
        n = self.index.n_x
        A = sparse.coo_matrix((v1 + v2, (r1 + r2, c1 + c2)), shape=(n, n)).tocsr()
        A.sort_indices()
        return A

    def column(self, node_id: str, volumes) -> sparse.csc_matrix:
        return _candidate_column(self.topology, self.snapshot, self.params, self.index, self.flows, node_id, volumes)

    def columns(self, volumes) -> dict[str, sparse.csc_matrix]:
        return {n.id: self.column(n.id, volumes) for n in self.topology.nodes}


def _booster_flow(pacing: BoosterPacing, node_id: str, throughput: float) -> float:
    if node_id in pacing.flows:
        return pacing.flows[node_id]
    return max(pacing.fraction * throughput, pacing.floor)


def _candidate_column(topology, snapshot, params, index, flows, node_id, volumes) -> sparse.csc_matrix:
    try:
        node = topology.node(node_id)
    except KeyError:
        raise KeyError(f"{node_id!r} is not a node; boosters sit at nodes only") from None
    r = index.position[node_id]
    pacing = params.pacing
    if node.kind is NodeKind.RESERVOIR:
        value = 1.0
    elif node.kind is NodeKind.JUNCTION:
        inflows, outflows = flows[node_id]
        den = snapshot.demand[node_id] + math.fsum(q for _, q in outflows)
        if pacing.mode == "unit":
            value = 1.0
        else:
            qb = _booster_flow(pacing, node_id, den)
            # a stagnant junction takes the injected water as-is
            value = qb / max(den, qb)
    else:
        v_next = volumes[node_id][1]
        if pacing.mode == "unit":
            value = 1.0
        else:
            inflows, outflows = flows[node_id]
            throughput = max(sum(q for _, q in inflows), sum(q for _, q in outflows))
            vb = _booster_flow(pacing, node_id, throughput) * params.dt_wq
            value = vb / v_next
    return sparse.csc_matrix(([value], ([r], [0])), shape=(index.n_x, 1))


def build_state_matrix(
    topology: NetworkTopology,
    snapshot: HydraulicSnapshot,
    params: WQParams,
    tank_volumes: Mapping[str, tuple[float, float]] | None = None,
    step: int = 0,
) -> StateSpace:
    """Assemble A and all candidate input columns for one hydraulic snapshot.

    ``tank_volumes`` maps each tank to ``(V(t), V(t + dt_wq))``. By default
    they come from the snapshot volume and the snapshot's net tank flow.
    """
    asm = _Assembler(topology, snapshot, params)
    volumes = tank_volumes if tank_volumes is not None else asm.default_volumes()
    return StateSpace(
        A=asm.matrix(volumes),
        index=asm.index,
        dt_wq=params.dt_wq,
        step=step,
        time=snapshot.time,
        segmentation=asm.seg,
        candidate_columns=asm.columns(volumes),
    )


def _step_volumes(topology, profile: HydraulicProfile, t0: float, dt: float):
    return {
        tank: (tank_volume_at(profile, tank, t0, topology), tank_volume_at(profile, tank, t0 + dt, topology))
        for tank in profile.snapshots[0].volume
    }


def state_space_for_step(
    topology: NetworkTopology, profile: HydraulicProfile, step: int, params: WQParams
) -> StateSpace:
    """State space at the start of hydraulic step ``step``, tank volumes interpolated."""
    snap = profile.snapshots[step]
    volumes = _step_volumes(topology, profile, snap.time, params.dt_wq)
    return build_state_matrix(topology, snap, params, volumes, step)


def candidate_column(
    topology: NetworkTopology,
    snapshot: HydraulicSnapshot,
    params: WQParams,
    node_id: str,
    tank_volumes: Mapping[str, tuple[float, float]] | None = None,
) -> sparse.csc_matrix:
    """Input column b for a booster at ``node_id`` (n_x by 1, sparse)."""
    asm = _Assembler(topology, snapshot, params)
    volumes = tank_volumes if tank_volumes is not None else asm.default_volumes()
    return asm.column(node_id, volumes)


# --------------------------------------------------------------------------
# state transfer between hydraulic steps


def _resample(values: np.ndarray, n_new: int) -> np.ndarray:
    """Overlap-weighted averages of a piecewise-constant profile on a new uniform grid."""
    n_old = len(values)
    if n_old == n_new:
        return values.copy()
    edges_old = np.linspace(0.0, 1.0, n_old + 1)
    edges_new = np.linspace(0.0, 1.0, n_new + 1)
    out = np.empty(n_new)
    for i in range(n_new):
        lo, hi = edges_new[i], edges_new[i + 1]
        j0 = max(0, np.searchsorted(edges_old, lo, side="right") - 1)
        acc = 0.0
        j = j0
        while j < n_old and edges_old[j] < hi:
            overlap = min(hi, edges_old[j + 1]) - max(lo, edges_old[j])
            if overlap > 0:
                acc += overlap * values[j]
            j += 1
        out[i] = acc / (hi - lo)
    return out


def remap_state(prev: StateSpace, nxt: StateSpace, x_prev: np.ndarray) -> np.ndarray:
    """Carry a concentration vector across a change of segmentation or flow direction.

    Node, pump and valve states are copied. Each pipe's segment values are
    put in physical order, resampled conservatively onto the new grid, then
    put back in the new flow orientation.
    """
    pi, ni = prev.index, nxt.index
    if pi.labels[: pi.n_nodes + pi.n_links] != ni.labels[: ni.n_nodes + ni.n_links] or set(pi.pipes) != set(
        ni.pipes
    ):
        raise ValueError("state spaces belong to different topologies")
    x_prev = np.asarray(x_prev, dtype=float)
    if x_prev.shape != (pi.n_x,):
        raise ValueError(f"state vector has shape {x_prev.shape}, expected ({pi.n_x},)")
    x = np.empty(ni.n_x)
    k = pi.n_nodes + pi.n_links
    x[:k] = x_prev[:k]
    for pid in ni.pipes:
        physical = x_prev[pi.physical_order(pid)]
        x[ni.physical_order(pid)] = _resample(physical, ni.pipes[pid][1])
    return x


def initial_state(space: StateSpace, values: Mapping[str, float] | None = None, default: float = 0.0) -> np.ndarray:
    """State vector from per-element values; a pipe's value fills all its segments."""
    x = np.full(space.n_x, float(default))
    for name, value in (values or {}).items():
        if name in space.index.pipes:
            start, count, _ = space.index.pipes[name]
            x[start : start + count] = value
        else:
            x[space.index[name]] = value
    return x


# --------------------------------------------------------------------------
# forward simulation


Injection = Callable[[float], float]


def simulate(
    topology: NetworkTopology,
    profile: HydraulicProfile,
    params: WQParams,
    initial: Mapping[str, float] | None = None,
    injections: Mapping[str, float | Injection] | None = None,
    n_steps: int | None = None,
) -> list[np.ndarray]:
    """Propagate concentrations through the profile with the assembled matrices.

    ``injections`` maps booster nodes to a constant or a function of time
    giving u(t). Returns, per hydraulic step, an array of shape
    ``(N_p + 1, n_x)`` whose first row is the state at the start of the step.
    """
    injections = dict(injections or {})
    n_p = params.steps_per(profile.dt_h)
    n_steps = profile.n_steps if n_steps is None else n_steps
    dt = params.dt_wq
    out = []
    prev_space = None
    x = None
    for k in range(n_steps):
        snap = profile.snapshots[k]
        asm = _Assembler(topology, snap, params)
        space = StateSpace(asm.matrix(asm.default_volumes()), asm.index, dt, k, snap.time, asm.seg, {})
        if prev_space is None:
            x = initial_state(space, initial)
        else:
            x = remap_state(prev_space, space, x)
        traj = np.empty((n_p + 1, space.n_x))
        traj[0] = x
        tanks_static = not any(n.kind is NodeKind.TANK for n in topology.nodes)
        A = space.A
        for j in range(n_p):
            t = snap.time + j * dt
            if not tanks_static:
                volumes = _step_volumes(topology, profile, t, dt)
                A = asm.matrix(volumes)
            else:
                volumes = {}
            x_next = A @ x
            for node, u in injections.items():
                value = u(t) if callable(u) else u
                if value:
                    col = asm.column(node, volumes)
                    x_next[col.indices] += col.data * value
            x = x_next
            traj[j + 1] = x
        out.append(traj)
        prev_space = space
    return out


# --------------------------------------------------------------------------
# debugging dumps


def dump_coo(space: StateSpace) -> str:
    """A as ``row col value`` lines (0-based), row-major order."""
    A = space.A.tocoo()
    order = np.lexsort((A.col, A.row))
    return "".join(f"{A.row[i]} {A.col[i]} {float(A.data[i])!r}\n" for i in order)


def index_json(space: StateSpace) -> dict:
    return {
        "n_x": space.n_x,
        "labels": list(space.index.labels),
        "pipes": {
            pid: {"start": s, "count": c, "reversed": rev, "courant": space.segmentation[pid].courant}
            for pid, (s, c, rev) in space.index.pipes.items()
        },
    }
