"""Synthetic test networks with hand-balanced hydraulics.

Flows are not solved from heads. Demands and pump or tank supplies are
chosen first; pipe flows on loops come from a minimum-norm weighted
solution of the junction balance, which satisfies continuity exactly and
spreads flow over parallel routes roughly like conductances would. Tank
volumes are integrated from the resulting net tank flow.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hydraulics import HydraulicProfile, load_profile, write_records
from .network import LinkKind, NetworkTopology, NodeKind, parse_inp, to_inp

__all__ = [
    "Fixture",
    "three_node_fixture",
    "net1_like_fixture",
    "net1_like_scenarios",
    "grid_fixture",
    "balanced_flows",
    "write_bundle",
]

HOUR = 3600.0


@dataclass(frozen=True)
class Fixture:
    name: str
    topology: NetworkTopology
    profiles: tuple[HydraulicProfile, ...]
    dt_wq: float
    max_segments: int | None = None
    pool: tuple[str, ...] | None = None
    notes: dict = field(default_factory=dict)

    @property
    def profile(self) -> HydraulicProfile:
        return self.profiles[0]


def balanced_flows(topology: NetworkTopology, supply: dict[str, float], fixed: dict[str, float]) -> dict[str, float]:
    """Link flows meeting ``supply`` (inflow > 0, demand < 0) at every junction.

    ``fixed`` gives flows of links decided by the caller (pumps, tank
    connections); the remaining pipes take the minimum-norm solution weighted
    by d^2.6 / L. Flows below 1e-12 in magnitude are set to zero.
    """
    free = [link for link in topology.links if link.id not in fixed]
    # reservoirs and tanks absorb whatever the fixed links carry
    nodes = [n.id for n in topology.nodes if n.kind is NodeKind.JUNCTION]
    row = {n: i for i, n in enumerate(nodes)}
    b = np.array([supply.get(n, 0.0) for n in nodes])
    for lid, q in fixed.items():
        link = topology.link(lid)
        # flow q leaves start and enters end
        if link.start in row:
            b[row[link.start]] -= q
        if link.end in row:
            b[row[link.end]] += q
    E = np.zeros((len(nodes), len(free)))
    w = np.empty(len(free))
    for j, link in enumerate(free):
        if link.start not in row or link.end not in row:
            raise ValueError(f"link {link.id!r} touches a reservoir or tank; give its flow in ``fixed``")
        E[row[link.start], j] = 1.0
        E[row[link.end], j] = -1.0
        w[j] = (2.0 * link.radius) ** 2.6 / link.length
    # node balance: sum of outgoing q minus incoming q equals net supply
    L = (E * w) @ E.T
    p = np.linalg.lstsq(L, b, rcond=None)[0]
    q = w * (E.T @ p)
    if np.abs(E @ q - b).max() > 1e-9 * max(1.0, np.abs(b).max()):
        raise ValueError("supplies are not balanced on the free-link graph")
    flows = {link.id: float(v) for link, v in zip(free, q)}
    flows.update(fixed)
    return {lid: (0.0 if abs(flows[lid]) < 1e-12 else flows[lid]) for lid in (lk.id for lk in topology.links)}


def _records(topology, times, flows, demands, volumes):
    recs = []
    for t, f, d, v in zip(times, flows, demands, volumes):
        recs += [(t, lid, "flow", q) for lid, q in f.items()]
        recs += [(t, j, "demand", q) for j, q in d.items()]
        recs += [(t, tk, "volume", q) for tk, q in v.items()]
    return recs


# --------------------------------------------------------------------------
# three-node network

THREE_NODE_INP = """\
[TITLE]
three-node network: reservoir, pump, junction, pipe, tank

[OPTIONS]
 Units LPS

[RESERVOIRS]
 R1 0

[JUNCTIONS]
 J1 0

[TANKS]
;id elev init min max diam minvol
 TK1 20 10 2 20 11.2838 0

[PIPES]
 P1 J1 TK1 1000 160 100

[PUMPS]
 PU1 R1 J1 HEAD 1

[CURVES]
 1 0.03 30

[REACTIONS]
 Global Bulk -0.5
 Global Wall -0.1
 Global MassTransfer 1.0

[END]
"""

FILL_HOURS = range(7, 17)


def three_node_fixture(n_hours: int = 24) -> Fixture:
    """Reservoir, pump, junction, pipe and tank over a day.

    The pump runs from 07:00 to 17:00 (hours 7-16) and fills the tank
    through the pipe while serving the junction demand. Outside that window
    the pump is off and the tank drains back through the pipe to the
    junction (negative pipe flow).
    """
    topo = parse_inp(THREE_NODE_INP)
    area_volume = topo.node("TK1").tank.init_volume
    pump_q = 0.03
    times, flows, demands, volumes = [], [], [], []
    v = area_volume
    for h in range(n_hours):
        d = 0.015 + 0.005 * math.sin(2.0 * math.pi * (h - 6) / 24.0)
        q_pump = pump_q if h in FILL_HOURS else 0.0
        q_pipe = q_pump - d
        times.append(h * HOUR)
        flows.append({"PU1": q_pump, "P1": q_pipe})
        demands.append({"J1": d})
        volumes.append({"TK1": v})
        v += q_pipe * HOUR
    prof = load_profile(topo, _records(topo, times, flows, demands, volumes), "three-node")
    return Fixture(
        "three-node",
        topo,
        (prof,),
        dt_wq=10.0,
        notes={"fill_steps": list(FILL_HOURS), "drain_steps": [h for h in range(n_hours) if h not in FILL_HOURS]},
    )


# --------------------------------------------------------------------------
# Net1-like network

NET1_INP = """\
[TITLE]
Net1-like looped network (9 junctions, 1 reservoir, 1 tank, 12 pipes, 1 pump)

[OPTIONS]
 Units GPM

[JUNCTIONS]
 J10 710
 J11 710
 J12 700
 J13 695
 J21 700
 J22 695
 J23 690
 J31 700
 J32 710

[RESERVOIRS]
 R9 800

[TANKS]
 TK2 850 120 100 150 50.5 0

[PIPES]
 P10  J10 J11 10530 18 100
 P11  J11 J12 5280 14 100
 P12  J12 J13 5280 10 100
 P21  J21 J22 5280 10 100
 P22  J22 J23 5280 12 100
 P31  J31 J32 5280 6 100
 P110 TK2 J12 200 18 100
 P111 J11 J21 5280 10 100
 P112 J12 J22 5280 12 100
 P113 J13 J23 5280 8 100
 P121 J21 J31 5280 8 100
 P122 J22 J32 5280 6 100

[PUMPS]
 PU9 R9 J10 HEAD 1

[REACTIONS]
 Global Bulk -0.5
 Global Wall -1

[END]
"""

# base demands in m3/s (about 150 gpm at most junctions)
NET1_BASE = {
    "J10": 0.0,
    "J11": 0.0095,
    "J12": 0.0095,
    "J13": 0.0063,
    "J21": 0.0095,
    "J22": 0.0126,
    "J23": 0.0095,
    "J31": 0.0063,
    "J32": 0.0063,
}

# (pattern multipliers over 24 h, base-demand scale, pump on-hours, pump flow m3/s)
_NET1_CASES = {
    1: ([1.0, 1.2, 1.4, 1.6, 1.4, 1.2, 1.0, 0.8, 0.6, 0.4, 0.6, 0.8] * 2, 1.0, set(range(0, 6)) | set(range(12, 18)), 0.11),
    2: (
        [0.5, 0.5, 0.6, 0.7, 0.9, 1.2, 1.5, 1.6, 1.4, 1.2, 1.1, 1.0, 1.0, 1.1, 1.2, 1.3, 1.5, 1.7, 1.6, 1.3, 1.0, 0.8, 0.6, 0.5],
        1.0,
        set(range(0, 8)) | set(range(20, 24)),
        0.14,
    ),
    3: (
        [0.8, 0.8, 0.9, 1.0, 1.1, 1.3, 1.4, 1.3, 1.2, 1.1, 1.0, 0.9] * 2,
        1.25,
        set(range(2, 9)) | set(range(14, 20)),
        0.16,
    ),
    4: (
        [1.3, 1.2, 1.0, 0.8, 0.7, 0.6, 0.6, 0.7, 0.9, 1.1, 1.3, 1.4, 1.4, 1.3, 1.1, 0.9, 0.8, 0.7, 0.7, 0.8, 1.0, 1.2, 1.3, 1.3],
        0.8,
        set(range(4, 16)),
        0.09,
    ),
}


def net1_like_scenarios() -> tuple[int, ...]:
    return tuple(sorted(_NET1_CASES))


def _net1_profile(topo: NetworkTopology, case: int, n_hours: int) -> HydraulicProfile:
    pattern, scale, on_hours, pump_q = _NET1_CASES[case]
    v = topo.node("TK2").tank.init_volume
    times, flows, demands, volumes = [], [], [], []
    for h in range(n_hours):
        d = {j: scale * base * pattern[h % len(pattern)] for j, base in NET1_BASE.items()}
        total = math.fsum(d.values())
        q_pump = pump_q if h in on_hours else 0.0
        # P110 runs TK2 -> J12: positive when the tank drains
        q_tank = total - q_pump
        supply = {j: -q for j, q in d.items()}
        f = balanced_flows(topo, supply, {"PU9": q_pump, "P110": q_tank})
        times.append(h * HOUR)
        flows.append(f)
        demands.append(d)
        volumes.append({"TK2": v})
        v -= q_tank * HOUR
        if v <= 0:
            raise ValueError(f"case {case}: tank empties at hour {h}")
    return load_profile(topo, _records(topo, times, flows, demands, volumes), f"net1-case{case}")


def net1_like_fixture(case: int | None = None, n_hours: int = 24, dt_wq: float = 30.0, max_segments: int | None = 24) -> Fixture:
    """Net1-like looped network with one (``case`` in 1..4) or all four demand scenarios.

    The cases differ in base-demand scale, demand pattern and pump schedule,
    so the tank fills and drains in different windows. Pipe lengths are the
    original feet converted to metres; ``max_segments`` caps the grid of the
    long pipes to keep n_x in the low hundreds.
    """
    topo = parse_inp(NET1_INP)
    cases = net1_like_scenarios() if case is None else (case,)
    for c in cases:
        if c not in _NET1_CASES:
            raise ValueError(f"unknown Net1-like case {c}; choose from {net1_like_scenarios()}")
    profiles = tuple(_net1_profile(topo, c, n_hours) for c in cases)
    name = "net1-like" if case is None else f"net1-like-case{case}"
    return Fixture(name, topo, profiles, dt_wq=dt_wq, max_segments=max_segments)


# --------------------------------------------------------------------------
# grid network for scale checks


def grid_fixture(
    rows: int = 6, cols: int = 6, length: float = 400.0, n_hours: int = 24, dt_wq: float = 30.0, max_segments: int = 16
) -> Fixture:
    """Rectangular grid of junctions fed by a pumped reservoir at one corner
    and a tank at the opposite corner; about 1,000 states with the defaults.

    The candidate pool is the reservoir, the tank and 28 junctions.
    """
    lines = ["[OPTIONS]", " Units LPS", "", "[RESERVOIRS]", " R0 50", "", "[JUNCTIONS]"]
    name = lambda r, c: f"J{r}_{c}"  # noqa: E731
    for r in range(rows):
        for c in range(cols):
            lines.append(f" {name(r, c)} 0")
    lines += ["", "[TANKS]", " TK0 30 10 2 20 20 0", "", "[PIPES]"]
    k = 0
    for r in range(rows):
        for c in range(cols):
            for dr, dc in ((0, 1), (1, 0)):
                rr, cc = r + dr, c + dc
                if rr < rows and cc < cols:
                    diam = 300 if (r == 0 or c == 0) else 200
                    lines.append(f" G{k} {name(r, c)} {name(rr, cc)} {length} {diam} 100")
                    k += 1
    lines.append(f" GT {name(rows - 1, cols - 1)} TK0 {length} 300 100")
    lines += ["", "[PUMPS]", f" PU0 R0 {name(0, 0)} HEAD 1", "", "[REACTIONS]", " Global Bulk -0.5", "", "[END]", ""]
    topo = parse_inp("\n".join(lines))
    junctions = [n.id for n in topo.nodes if n.kind is NodeKind.JUNCTION]
    base = 0.004
    v = topo.node("TK0").tank.init_volume
    times, flows, demands, volumes = [], [], [], []
    for h in range(n_hours):
        mult = 1.0 + 0.4 * math.sin(2.0 * math.pi * h / 24.0)
        d = {j: base * mult * (1.0 + 0.25 * ((i * 7) % 5) / 4.0) for i, j in enumerate(junctions)}
        total = math.fsum(d.values())
        q_pump = total * (1.35 if 6 <= h < 18 else 0.55)
        q_tank_in = q_pump - total
        supply = {j: -q for j, q in d.items()}
        f = balanced_flows(topo, supply, {"PU0": q_pump, "GT": q_tank_in})
        times.append(h * HOUR)
        flows.append(f)
        demands.append(d)
        volumes.append({"TK0": v})
        v += q_tank_in * HOUR
    prof = load_profile(topo, _records(topo, times, flows, demands, volumes), "grid")
    pool = ("R0", "TK0") + tuple(junctions[:28])
    return Fixture("grid", topo, (prof,), dt_wq=dt_wq, max_segments=max_segments, pool=pool)


# --------------------------------------------------------------------------
# bundles on disk


def write_bundle(fixture: Fixture, directory, **config) -> Path:
    """Write INP, one hydraulics CSV per scenario and a run config JSON.

    Extra keyword arguments go into the config (e.g. ``n_s``, ``metric``).
    Returns the config path.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    inp = directory / f"{fixture.name}.inp"
    inp.write_text(to_inp(fixture.topology), encoding="utf-8")
    hyd = []
    for prof in fixture.profiles:
        path = directory / f"{prof.scenario_id}.csv"
        write_records(prof, path)
        hyd.append(path.name)
    cfg = {
        "topology": inp.name,
        "hydraulics": hyd,
        "output_dir": "out",
        "dt_wq": fixture.dt_wq,
        "dt_h": fixture.profiles[0].dt_h,
        "n_s": 1,
        "metric": "trace",
    }
    if fixture.max_segments is not None:
        cfg["max_segments"] = fixture.max_segments
    if fixture.pool is not None:
        cfg["pool"] = {"include": list(fixture.pool)}
    cfg.update(config)
    path = directory / "config.json"
    path.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
