"""Water network graph types and a reader for a subset of the EPANET INP format.

Everything is normalized to SI at parse time: lengths and radii in metres,
volumes in cubic metres, rate constants per second.
"""

from __future__ import annotations

import enum
import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

__all__ = [
    "InpError",
    "NodeKind",
    "LinkKind",
    "TankGeometry",
    "Node",
    "Link",
    "NetworkTopology",
    "parse_inp",
    "read_inp",
    "to_inp",
    "to_json",
    "topology_summary",
]

SECONDS_PER_DAY = 86400.0
FT = 0.3048
INCH = 0.0254

US_FLOW_UNITS = {"CFS", "GPM", "MGD", "IMGD", "AFD"}
SI_FLOW_UNITS = {"LPS", "LPM", "MLD", "CMH", "CMD"}

NODE_SECTIONS = {"JUNCTIONS", "RESERVOIRS", "TANKS"}
LINK_SECTIONS = {"PIPES", "PUMPS", "VALVES"}
KNOWN_SECTIONS = NODE_SECTIONS | LINK_SECTIONS | {"OPTIONS", "REACTIONS", "TITLE", "END"}


class InpError(ValueError):
    """Malformed or inconsistent network file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NodeKind(str, enum.Enum):
    JUNCTION = "junction"
    RESERVOIR = "reservoir"
    TANK = "tank"


class LinkKind(str, enum.Enum):
    PIPE = "pipe"
    PUMP = "pump"
    VALVE = "valve"


@dataclass(frozen=True)
class TankGeometry:
    """Cylindrical tank description (SI)."""

    diameter: float
    init_level: float
    min_level: float
    max_level: float
    min_vol: float = 0.0

    @property
    def area(self) -> float:
        return math.pi * self.diameter**2 / 4.0

    @property
    def min_volume(self) -> float:
        return max(self.min_vol, self.area * self.min_level)

    @property
    def max_volume(self) -> float:
        return self.area * self.max_level

    @property
    def init_volume(self) -> float:
        return self.area * self.init_level


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    elevation: float = 0.0
    tank: TankGeometry | None = None


@dataclass(frozen=True)
class Link:
    """A pipe, pump or valve.

    Only pipes carry ``length``, ``radius``, ``wall_coeff`` (k_w, m/s) and
    ``mass_transfer`` (k_f, m/s). For pumps and valves these are ``None``.
    """

    id: str
    kind: LinkKind
    start: str
    end: str
    length: float | None = None
    radius: float | None = None
    wall_coeff: float | None = None
    mass_transfer: float | None = None

    @property
    def area(self) -> float:
        if self.radius is None:
            raise AttributeError(f"{self.kind.value} {self.id} has no cross-section")
        return math.pi * self.radius**2

    @property
    def decay_rate_wall(self) -> float:
        """Wall contribution 2 k_w k_f / (r (k_w + k_f)) in 1/s."""
        kw = self.wall_coeff or 0.0
        kf = self.mass_transfer or 0.0
        if kw + kf == 0.0:
            return 0.0
        return 2.0 * kw * kf / (self.radius * (kw + kf))


@dataclass(frozen=True)
class NetworkTopology:
    nodes: tuple[Node, ...] = ()
    links: tuple[Link, ...] = ()
    bulk_rate: float = 0.0
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        seen = set()
        for n in self.nodes:
            if n.id in seen:
                raise InpError(f"duplicate node id {n.id!r}")
            seen.add(n.id)
        lseen = set()
        for link in self.links:
            if link.id in lseen:
                raise InpError(f"duplicate link id {link.id!r}")
            lseen.add(link.id)
            for end in (link.start, link.end):
                if end not in seen:
                    raise InpError(f"link {link.id!r} references unknown node {end!r}")
            if link.kind is LinkKind.PIPE:
                if not (link.length and link.length > 0):
                    raise InpError(f"pipe {link.id!r} has nonpositive length")
                if not (link.radius and link.radius > 0):
                    raise InpError(f"pipe {link.id!r} has nonpositive diameter")

    @cached_property
    def node_by_id(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def link_by_id(self) -> dict[str, Link]:
        return {link.id: link for link in self.links}

    def node(self, node_id: str) -> Node:
        try:
            return self.node_by_id[node_id]
        except KeyError:
            raise KeyError(f"unknown node {node_id!r}") from None

    def link(self, link_id: str) -> Link:
        try:
            return self.link_by_id[link_id]
        except KeyError:
            raise KeyError(f"unknown link {link_id!r}") from None

    @cached_property
    def outgoing(self) -> dict[str, tuple[str, ...]]:
        """Links whose declared start is the node."""
        out: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for link in self.links:
            out[link.start].append(link.id)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def incoming(self) -> dict[str, tuple[str, ...]]:
        """Links whose declared end is the node."""
        inc: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for link in self.links:
            inc[link.end].append(link.id)
        return {k: tuple(v) for k, v in inc.items()}

    def nodes_of(self, kind: NodeKind) -> list[Node]:
        return [n for n in self.nodes if n.kind is kind]

    def links_of(self, kind: LinkKind) -> list[Link]:
        return [link for link in self.links if link.kind is kind]

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def is_weakly_connected(self) -> bool:
        if not self.nodes:
            return True
        nbrs: dict[str, set[str]] = {n.id: set() for n in self.nodes}
        for link in self.links:
            nbrs[link.start].add(link.end)
            nbrs[link.end].add(link.start)
        start = self.nodes[0].id
        seen = {start}
        queue = deque([start])
        while queue:
            for nxt in nbrs[queue.popleft()]:
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return len(seen) == len(self.nodes)


def topology_summary(topology: NetworkTopology) -> dict[str, int]:
    """Component counts in the column order of the usual network tables."""
    return {
        "junctions": len(topology.nodes_of(NodeKind.JUNCTION)),
        "reservoirs": len(topology.nodes_of(NodeKind.RESERVOIR)),
        "tanks": len(topology.nodes_of(NodeKind.TANK)),
        "pipes": len(topology.links_of(LinkKind.PIPE)),
        "pumps": len(topology.links_of(LinkKind.PUMP)),
        "valves": len(topology.links_of(LinkKind.VALVE)),
    }


# --------------------------------------------------------------------------
# parsing


def _num(token: str, what: str, lineno: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise InpError(f"malformed numeric field {what}={token!r}", lineno) from None
    if not math.isfinite(value):
        raise InpError(f"non-finite numeric field {what}={token!r}", lineno)
    return value


def _split_sections(text: str):
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise InpError(f"unterminated section header {line!r}", lineno)
            section = line[1:-1].strip().upper()
            yield lineno, section, None
            continue
        yield lineno, section, line.split()


def parse_inp(text: str) -> NetworkTopology:
    """Parse EPANET-style INP text into a validated :class:`NetworkTopology`.

    Recognized sections are JUNCTIONS, RESERVOIRS, TANKS, PIPES, PUMPS,
    VALVES, OPTIONS (``Units``) and REACTIONS. Other sections are skipped and
    listed in ``topology.warnings``.

    REACTIONS follows EPANET sign conventions (negative coefficient = decay)
    for ``Global Bulk``, ``Global Wall`` and per-pipe ``Wall``. The pipe-wall
    mass-transfer coefficient k_f has no EPANET keyword; it is read from the
    extension keywords ``Global MassTransfer <v>`` and
    ``MassTransfer <pipe> <v>`` (positive, length/day).
    """
    rows: dict[str, list[tuple[int, list[str]]]] = {}
    skipped: list[str] = []
    for lineno, section, parts in _split_sections(text):
        if parts is None:
            if section not in KNOWN_SECTIONS and section not in skipped:
                skipped.append(section)
            continue
        if section is None:
            raise InpError("data before first section header", lineno)
        if section in KNOWN_SECTIONS:
            rows.setdefault(section, []).append((lineno, parts))

    units = "GPM"
    for lineno, parts in rows.get("OPTIONS", []):
        if parts[0].upper() == "UNITS":
            if len(parts) < 2:
                raise InpError("Units option without value", lineno)
            units = parts[1].upper()
            if units not in US_FLOW_UNITS | SI_FLOW_UNITS:
                raise InpError(f"unknown flow units {parts[1]!r}", lineno)
    us = units in US_FLOW_UNITS
    length_scale = FT if us else 1.0
    diam_scale = INCH if us else 1e-3
    vol_scale = FT**3 if us else 1.0

    nodes: list[Node] = []
    node_ids: set[str] = set()

    def add_node(node: Node, lineno: int) -> None:
        if node.id in node_ids:
            raise InpError(f"duplicate node id {node.id!r}", lineno)
        node_ids.add(node.id)
        nodes.append(node)

    for section, kind in (
        ("RESERVOIRS", NodeKind.RESERVOIR),
        ("JUNCTIONS", NodeKind.JUNCTION),
        ("TANKS", NodeKind.TANK),
    ):
        for lineno, parts in rows.get(section, []):
            nid = parts[0]
            elev = _num(parts[1], "elevation", lineno) * length_scale if len(parts) > 1 else 0.0
            tank = None
            if kind is NodeKind.TANK:
                if len(parts) < 6:
                    raise InpError(f"tank {nid!r} needs Elev InitLvl MinLvl MaxLvl Diam", lineno)
                init, lo, hi, diam = (
                    _num(parts[i], name, lineno) * length_scale
                    for i, name in zip(range(2, 6), ("InitLevel", "MinLevel", "MaxLevel", "Diameter"))
                )
                minvol = _num(parts[6], "MinVol", lineno) * vol_scale if len(parts) > 6 else 0.0
                if diam <= 0 or hi <= 0 or not lo <= init <= hi:
                    raise InpError(f"tank {nid!r} has inconsistent geometry", lineno)
                tank = TankGeometry(diam, init, lo, hi, minvol)
            add_node(Node(nid, kind, elev, tank), lineno)

    # reactions before links, so per-pipe overrides can be applied
    bulk = 0.0
    wall_global = 0.0
    kf_global = 0.0
    wall_pipe: dict[str, tuple[float, int]] = {}
    kf_pipe: dict[str, tuple[float, int]] = {}
    wall_scale = length_scale / SECONDS_PER_DAY
    for lineno, parts in rows.get("REACTIONS", []):
        key = parts[0].upper()
        if key == "GLOBAL" and len(parts) >= 3:
            what = parts[1].upper()
            value = _num(parts[2], f"Global {parts[1]}", lineno)
            if what == "BULK":
                bulk = -value / SECONDS_PER_DAY
            elif what == "WALL":
                wall_global = -value * wall_scale
            elif what == "MASSTRANSFER":
                kf_global = value * wall_scale
        elif key in ("WALL", "MASSTRANSFER") and len(parts) >= 3:
            value = _num(parts[2], parts[0], lineno)
            if key == "WALL":
                wall_pipe[parts[1]] = (-value * wall_scale, lineno)
            else:
                kf_pipe[parts[1]] = (value * wall_scale, lineno)
    if bulk < 0:
        raise InpError("bulk reaction must be a decay (negative coefficient)")
    if wall_global < 0 or kf_global < 0:
        raise InpError("wall and mass-transfer coefficients must describe decay")

    links: list[Link] = []
    link_ids: set[str] = set()

    def add_link(link: Link, lineno: int) -> None:
        if link.id in link_ids:
            raise InpError(f"duplicate link id {link.id!r}", lineno)
        for end in (link.start, link.end):
            if end not in node_ids:
                raise InpError(f"link {link.id!r} references unknown node {end!r}", lineno)
        link_ids.add(link.id)
        links.append(link)

    for lineno, parts in rows.get("PIPES", []):
        if len(parts) < 5:
            raise InpError("pipe needs ID Node1 Node2 Length Diameter", lineno)
        pid = parts[0]
        length = _num(parts[3], "length", lineno) * length_scale
        diameter = _num(parts[4], "diameter", lineno) * diam_scale
        if length <= 0:
            raise InpError(f"pipe {pid!r} has nonpositive length", lineno)
        if diameter <= 0:
            raise InpError(f"pipe {pid!r} has nonpositive diameter", lineno)
        kw = wall_pipe.get(pid, (wall_global, lineno))[0]
        kf = kf_pipe.get(pid, (kf_global, lineno))[0]
        if kw < 0 or kf < 0:
            raise InpError(f"pipe {pid!r} has a growth wall reaction", lineno)
        add_link(Link(pid, LinkKind.PIPE, parts[1], parts[2], length, diameter / 2.0, kw, kf), lineno)

    for section, kind in (("PUMPS", LinkKind.PUMP), ("VALVES", LinkKind.VALVE)):
        for lineno, parts in rows.get(section, []):
            if len(parts) < 3:
                raise InpError(f"{kind.value} needs ID Node1 Node2", lineno)
            add_link(Link(parts[0], kind, parts[1], parts[2]), lineno)

    pipe_ids = {link.id for link in links if link.kind is LinkKind.PIPE}
    for table in (wall_pipe, kf_pipe):
        for pid, (_, lineno) in table.items():
            if pid not in pipe_ids:
                raise InpError(f"reaction refers to unknown pipe {pid!r}", lineno)

    warnings = [f"skipped section [{name}]" for name in skipped]
    topo = NetworkTopology(tuple(nodes), tuple(links), bulk, ())
    if not topo.is_weakly_connected():
        warnings.append("network is not weakly connected")
    return NetworkTopology(topo.nodes, topo.links, bulk, tuple(warnings))


def read_inp(path) -> NetworkTopology:
    with open(path, encoding="utf-8") as fh:
        return parse_inp(fh.read())


# --------------------------------------------------------------------------
# serialization


def to_inp(topology: NetworkTopology) -> str:
    """Write the topology as INP text in SI units (LPS: metres, millimetres)."""
    out = ["[TITLE]", "written by cbsp", "", "[OPTIONS]", " Units LPS", ""]
    sections = {
        NodeKind.RESERVOIR: ["[RESERVOIRS]"],
        NodeKind.JUNCTION: ["[JUNCTIONS]"],
        NodeKind.TANK: ["[TANKS]"],
    }
    for n in topology.nodes:
        if n.kind is NodeKind.TANK:
            t = n.tank
            sections[n.kind].append(
                f" {n.id} {n.elevation!r} {t.init_level!r} {t.min_level!r} "
                f"{t.max_level!r} {t.diameter!r} {t.min_vol!r}"
            )
        else:
            sections[n.kind].append(f" {n.id} {n.elevation!r}")
    for kind in (NodeKind.RESERVOIR, NodeKind.JUNCTION, NodeKind.TANK):
        out += sections[kind] + [""]
    pipes = ["[PIPES]"]
    pumps = ["[PUMPS]"]
    valves = ["[VALVES]"]
    walls = []
    for link in topology.links:
        if link.kind is LinkKind.PIPE:
            pipes.append(f" {link.id} {link.start} {link.end} {link.length!r} {link.radius * 2000.0!r} 100")
            walls.append(
                f" Wall {link.id} {-link.wall_coeff * SECONDS_PER_DAY!r}\n"
                f" MassTransfer {link.id} {link.mass_transfer * SECONDS_PER_DAY!r}"
            )
        elif link.kind is LinkKind.PUMP:
            pumps.append(f" {link.id} {link.start} {link.end}")
        else:
            valves.append(f" {link.id} {link.start} {link.end}")
    out += pipes + [""] + pumps + [""] + valves + [""]
    out += ["[REACTIONS]", f" Global Bulk {-topology.bulk_rate * SECONDS_PER_DAY!r}", *walls, "", "[END]", ""]
    return "\n".join(out)


def to_json(topology: NetworkTopology) -> str:
    """Canonical JSON (stable key order) for debugging and fixtures."""

    def node_dict(n: Node) -> dict:
        d = {"id": n.id, "kind": n.kind.value, "elevation": n.elevation}
        if n.tank is not None:
            d["tank"] = {
                "diameter": n.tank.diameter,
                "init_level": n.tank.init_level,
                "min_level": n.tank.min_level,
                "max_level": n.tank.max_level,
                "min_vol": n.tank.min_vol,
                "min_volume": n.tank.min_volume,
                "max_volume": n.tank.max_volume,
            }
        return d

    def link_dict(link: Link) -> dict:
        d = {"id": link.id, "kind": link.kind.value, "from": link.start, "to": link.end}
        if link.kind is LinkKind.PIPE:
            d.update(
                length=link.length,
                radius=link.radius,
                wall_coeff=link.wall_coeff,
                mass_transfer=link.mass_transfer,
            )
        return d

    doc = {
        "bulk_rate": topology.bulk_rate,
        "nodes": [node_dict(n) for n in topology.nodes],
        "links": [link_dict(link) for link in topology.links],
        "summary": topology_summary(topology),
    }
    return json.dumps(doc, indent=2, sort_keys=True)
