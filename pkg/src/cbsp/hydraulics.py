"""Time-varying hydraulic inputs: loading, validation and tank interpolation.

Hydraulics are exogenous. A profile is a list of snapshots taken every
``dt_h`` seconds starting at t = 0; flows are held constant inside a
hydraulic step and tank volumes vary linearly.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .network import LinkKind, NetworkTopology, NodeKind

__all__ = [
    "HydraulicError",
    "HydraulicSnapshot",
    "HydraulicProfile",
    "ScenarioSet",
    "MassBalanceViolation",
    "MassBalanceReport",
    "load_profile",
    "read_records",
    "write_records",
    "validate_mass_balance",
    "tank_volume_at",
    "node_flows",
]

KINDS = ("flow", "demand", "volume", "velocity")
VELOCITY_RTOL = 1e-9


class HydraulicError(ValueError):
    pass


@dataclass(frozen=True)
class HydraulicSnapshot:
    time: float
    flow: Mapping[str, float]
    velocity: Mapping[str, float]
    demand: Mapping[str, float]
    volume: Mapping[str, float]


@dataclass(frozen=True)
class HydraulicProfile:
    scenario_id: str
    dt_h: float
    snapshots: tuple[HydraulicSnapshot, ...]

    @property
    def n_steps(self) -> int:
        return len(self.snapshots)

    @property
    def duration(self) -> float:
        """Total simulated period T_s in seconds."""
        return self.n_steps * self.dt_h

    def total_demand(self, step: int) -> float:
        return sum(self.snapshots[step].demand.values())


@dataclass(frozen=True)
class ScenarioSet:
    topology: NetworkTopology
    profiles: tuple[HydraulicProfile, ...] = field(default=())

    def __post_init__(self):
        if not self.profiles:
            return
        ref = self.profiles[0]
        for p in self.profiles[1:]:
            if p.dt_h != ref.dt_h or p.n_steps != ref.n_steps:
                raise HydraulicError(
                    f"scenario {p.scenario_id!r} differs from {ref.scenario_id!r} in time grid"
                )
            if set(p.snapshots[0].flow) != set(ref.snapshots[0].flow):
                raise HydraulicError(f"scenario {p.scenario_id!r} covers different links")

    def __len__(self):
        return len(self.profiles)

    def __iter__(self):
        return iter(self.profiles)


def _normalize(record) -> tuple[float, str, str, float]:
    if isinstance(record, Mapping):
        try:
            t, element, kind, value = (record[k] for k in ("time_s", "element", "kind", "value"))
        except KeyError as exc:
            raise HydraulicError(f"record missing field {exc.args[0]!r}: {record!r}") from None
    else:
        t, element, kind, value = record
    try:
        t = float(t)
        value = float(value)
    except (TypeError, ValueError):
        raise HydraulicError(f"malformed numeric value in record {record!r}") from None
    kind = str(kind).strip().lower()
    if kind not in KINDS:
        raise HydraulicError(f"unknown quantity kind {kind!r}")
    if not (math.isfinite(t) and math.isfinite(value)):
        raise HydraulicError(f"non-finite value in record {record!r}")
    return t, str(element).strip(), kind, value


def load_profile(
    topology: NetworkTopology,
    table: Iterable,
    scenario_id: str = "scenario",
    dt_h: float | None = None,
) -> HydraulicProfile:
    """Assemble a :class:`HydraulicProfile` from ``(time_s, element, kind, value)`` records.

    Records may be mappings with those keys or 4-tuples. Every link needs a
    flow and every tank a volume at every timestamp; a missing junction demand
    means zero. Pipe velocities are derived from flows, and any velocity
    records present are checked against the derived value.
    """
    links = topology.link_by_id
    nodes = topology.node_by_id
    data: dict[float, dict[str, dict[str, float]]] = defaultdict(lambda: {k: {} for k in KINDS})
    for record in table:
        t, element, kind, value = _normalize(record)
        if kind in ("flow", "velocity"):
            if element not in links:
                raise HydraulicError(f"unknown link {element!r} in {kind} record")
            if kind == "velocity" and links[element].kind is not LinkKind.PIPE:
                raise HydraulicError(f"velocity given for non-pipe {element!r}")
        else:
            if element not in nodes:
                raise HydraulicError(f"unknown node {element!r} in {kind} record")
            want = NodeKind.JUNCTION if kind == "demand" else NodeKind.TANK
            if nodes[element].kind is not want:
                raise HydraulicError(f"{kind} given for {nodes[element].kind.value} {element!r}")
            if kind == "demand" and value < 0:
                raise HydraulicError(f"negative demand at {element!r}, t={t}")
            if kind == "volume" and value <= 0:
                raise HydraulicError(f"nonpositive tank volume at {element!r}, t={t}")
        slot = data[t][kind]
        if element in slot:
            raise HydraulicError(f"duplicate {kind} record for {element!r} at t={t}")
        slot[element] = value

    times = sorted(data)
    if not times:
        raise HydraulicError("no hydraulic records")
    if times[0] != 0.0:
        raise HydraulicError(f"first timestamp must be 0, got {times[0]}")
    if len(times) > 1:
        spacing = times[1] - times[0]
        for a, b in zip(times, times[1:]):
            if not math.isclose(b - a, spacing, rel_tol=1e-9):
                raise HydraulicError(f"nonuniform timestamps near t={a}")
        if dt_h is not None and not math.isclose(dt_h, spacing, rel_tol=1e-9):
            raise HydraulicError(f"declared dt_h={dt_h} but records are spaced {spacing}")
        dt_h = spacing
    elif dt_h is None:
        raise HydraulicError("single snapshot needs an explicit dt_h")
    if dt_h <= 0:
        raise HydraulicError("hydraulic time-step must be positive")

    tanks = [n.id for n in topology.nodes if n.kind is NodeKind.TANK]
    junctions = [n.id for n in topology.nodes if n.kind is NodeKind.JUNCTION]
    snapshots = []
    for t in times:
        d = data[t]
        missing = [lid for lid in links if lid not in d["flow"]]
        if missing:
            raise HydraulicError(f"missing flow series for {missing[0]!r} at t={t}")
        missing = [tk for tk in tanks if tk not in d["volume"]]
        if missing:
            raise HydraulicError(f"missing volume series for tank {missing[0]!r} at t={t}")
        flow = {lid: d["flow"][lid] for lid in links}
        velocity = {}
        for link in topology.links:
            if link.kind is LinkKind.PIPE:
                v = abs(flow[link.id]) / link.area
                given = d["velocity"].get(link.id)
                if given is not None and not math.isclose(given, v, rel_tol=VELOCITY_RTOL, abs_tol=1e-15):
                    raise HydraulicError(
                        f"velocity of {link.id!r} at t={t} inconsistent with flow ({given} vs {v})"
                    )
                velocity[link.id] = v
        demand = {j: d["demand"].get(j, 0.0) for j in junctions}
        volume = {tk: d["volume"][tk] for tk in tanks}
        snapshots.append(HydraulicSnapshot(t, flow, velocity, demand, volume))
    return HydraulicProfile(scenario_id, float(dt_h), tuple(snapshots))


def read_records(path) -> list[dict]:
    """Read hydraulic records from CSV (``time_s,element,kind,value``) or JSON."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        with open(path, encoding="utf-8") as fh:
            records = json.load(fh)
        if not isinstance(records, list):
            raise HydraulicError(f"{path}: expected a JSON array of records")
        return records
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(rows)
    if reader.fieldnames is None or set(reader.fieldnames) < {"time_s", "element", "kind", "value"}:
        raise HydraulicError(f"{path}: header must be time_s,element,kind,value")
    return list(reader)


def write_records(profile: HydraulicProfile, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "element", "kind", "value"])
        for snap in profile.snapshots:
            for lid, q in snap.flow.items():
                w.writerow([repr(snap.time), lid, "flow", repr(q)])
            for j, q in snap.demand.items():
                w.writerow([repr(snap.time), j, "demand", repr(q)])
            for tk, v in snap.volume.items():
                w.writerow([repr(snap.time), tk, "volume", repr(v)])


def node_flows(topology: NetworkTopology, snapshot: HydraulicSnapshot, node_id: str):
    """Oriented flows at a node: ``(inflows, outflows)`` as lists of ``(link_id, |q|)``.

    A link carries flow out of its declared start when q > 0 and into it when
    q < 0. Zero-flow links appear in neither list.
    """
    inflows, outflows = [], []
    for lid in topology.outgoing[node_id]:
        q = snapshot.flow[lid]
        if q > 0:
            outflows.append((lid, q))
        elif q < 0:
            inflows.append((lid, -q))
    for lid in topology.incoming[node_id]:
        q = snapshot.flow[lid]
        if q > 0:
            inflows.append((lid, q))
        elif q < 0:
            outflows.append((lid, -q))
    return inflows, outflows


@dataclass(frozen=True)
class MassBalanceViolation:
    time: float
    junction: str
    residual: float

    def as_dict(self) -> dict:
        return {"time": self.time, "junction": self.junction, "residual": self.residual}


@dataclass(frozen=True)
class MassBalanceReport:
    tol_rel: float
    violations: tuple[MassBalanceViolation, ...]

    @property
    def passed(self) -> bool:
        return not self.violations


def validate_mass_balance(
    topology: NetworkTopology,
    profile: HydraulicProfile,
    tol_rel: float = 1e-6,
    scale_floor: float = 1e-12,
) -> MassBalanceReport:
    """Check |sum q_in - demand - sum q_out| / max(floor, sum |q|) <= tol at every junction.

    The scale is the sum of absolute flows on links incident to the junction.
    Junctions are visited in topology order, so the report does not depend on
    record order.
    """
    violations = []
    junctions = [n.id for n in topology.nodes if n.kind is NodeKind.JUNCTION]
    for snap in profile.snapshots:
        for j in junctions:
            inflows, outflows = node_flows(topology, snap, j)
            q_in = math.fsum(q for _, q in inflows)
            q_out = math.fsum(q for _, q in outflows)
            scale = max(scale_floor, q_in + q_out)
            residual = abs(q_in - snap.demand[j] - q_out) / scale
            if residual > tol_rel:
                violations.append(MassBalanceViolation(snap.time, j, residual))
    return MassBalanceReport(tol_rel, tuple(violations))


def tank_volume_at(profile: HydraulicProfile, tank: str, t: float, topology: NetworkTopology | None = None) -> float:
    """Tank volume at time ``t`` in [0, T_s].

    Linear between the bounding snapshots. Past the last snapshot the volume
    is extrapolated with that snapshot's net tank inflow, which needs
    ``topology``; without it the last value is held.
    """
    snaps = profile.snapshots
    if not 0.0 <= t <= profile.duration * (1 + 1e-12):
        raise HydraulicError(f"t={t} outside [0, {profile.duration}]")
    if tank not in snaps[0].volume:
        raise HydraulicError(f"unknown tank {tank!r}")
    k = min(int(t // profile.dt_h), len(snaps) - 1)
    tau = t - k * profile.dt_h
    if tau == 0.0:
        return snaps[k].volume[tank]
    if k + 1 < len(snaps):
        v0 = snaps[k].volume[tank]
        v1 = snaps[k + 1].volume[tank]
        return v0 + (v1 - v0) * (tau / profile.dt_h)
    if topology is None:
        return snaps[k].volume[tank]
    inflows, outflows = node_flows(topology, snaps[k], tank)
    net = sum(q for _, q in inflows) - sum(q for _, q in outflows)
    return snaps[k].volume[tank] + net * tau
