"""Reference implementations used only by the test suite.

Nothing here touches the matrix assembly in :mod:`cbsp.dynamics`; the
transport update is written out per component and per segment.
"""

from __future__ import annotations

import itertools
import math
from typing import Mapping

import numpy as np

from .controllability import MetricKind, logdet_epsilon
from .hydraulics import HydraulicProfile
from .network import LinkKind, NetworkTopology, NodeKind

__all__ = ["oracle_simulate", "oracle_exhaustive_placement", "OracleBudgetError"]


class OracleBudgetError(ValueError):
    pass


def _segments(length, velocity, dt, cap):
    if velocity == 0.0:
        return 1, 0.0
    n = int(math.floor(length / (velocity * dt) + 1e-9))
    if cap is not None:
        n = min(n, cap)
    n = max(n, 1)
    return n, min(1.0, velocity * dt / (length / n))


def _volume(profile: HydraulicProfile, topology, tank: str, t: float) -> float:
    snaps = profile.snapshots
    k = min(int(t // profile.dt_h), len(snaps) - 1)
    frac = (t - snaps[k].time) / profile.dt_h
    v0 = snaps[k].volume[tank]
    if k + 1 < len(snaps):
        return v0 + frac * (snaps[k + 1].volume[tank] - v0)
    net = 0.0
    for link in topology.links:
        q = snaps[k].flow[link.id]
        if link.end == tank:
            net += q
        elif link.start == tank:
            net -= q
    return v0 + net * (t - snaps[k].time)


def _regrid(values, n):
    """Cell averages of a piecewise-constant profile on n equal cells."""
    m = len(values)
    if m == n:
        return list(values)
    out = []
    for i in range(n):
        lo, hi = i / n, (i + 1) / n
        acc = 0.0
        for j in range(m):
            a, b = max(lo, j / m), min(hi, (j + 1) / m)
            if b > a:
                acc += (b - a) * values[j]
        out.append(acc * n)
    return out


def oracle_simulate(
    topology: NetworkTopology,
    profile: HydraulicProfile,
    dt_wq: float,
    initial: Mapping[str, float] | None = None,
    injections: Mapping[str, float] | None = None,
    n_steps: int | None = None,
    max_segments: int | None = None,
) -> list[dict[str, np.ndarray]]:
    """Straight-line chlorine transport with unit booster inputs.

    Returns, per hydraulic step, a mapping from state label (node id, pump or
    valve id, ``"pipe:k"`` with k = 1 at the upstream end) to its trajectory
    over the step's WQ instants, first entry being the start of the step.
    ``injections`` adds a constant amount to a node's concentration each
    WQ step.
    """
    initial = dict(initial or {})
    injections = dict(injections or {})
    kb = topology.bulk_rate
    n_sub = int(round(profile.dt_h / dt_wq))
    n_steps = profile.n_steps if n_steps is None else n_steps

    node_c = {n.id: initial.get(n.id, 0.0) for n in topology.nodes}
    link_c = {lk.id: initial.get(lk.id, 0.0) for lk in topology.links if lk.kind is not LinkKind.PIPE}
    # pipe values in declared direction (start -> end)
    pipe_c = None
    results = []
    for k in range(n_steps):
        snap = profile.snapshots[k]
        layout = {}
        for lk in topology.links:
            if lk.kind is LinkKind.PIPE:
                v = abs(snap.flow[lk.id]) / (math.pi * lk.radius**2)
                layout[lk.id] = _segments(lk.length, v, dt_wq, max_segments)
        if pipe_c is None:
            pipe_c = {pid: [initial.get(pid, 0.0)] * n for pid, (n, _) in layout.items()}
        else:
            pipe_c = {pid: _regrid(pipe_c[pid], layout[pid][0]) for pid in layout}

        def outlet(lk):
            """Concentration leaving a link at its downstream end."""
            if lk.kind is not LinkKind.PIPE:
                return link_c[lk.id]
            seg = pipe_c[lk.id]
            return seg[-1] if snap.flow[lk.id] > 0 else seg[0]

        traj: dict[str, list[float]] = {}

        def record():
            for n in topology.nodes:
                traj.setdefault(n.id, []).append(node_c[n.id])
            for lid, c in link_c.items():
                traj.setdefault(lid, []).append(c)
            for pid, seg in pipe_c.items():
                ordered = seg if snap.flow[pid] >= 0 else seg[::-1]
                for i, c in enumerate(ordered):
                    traj.setdefault(f"{pid}:{i + 1}", []).append(c)

        record()
        for j in range(n_sub):
            t = snap.time + j * dt_wq
            new_node = {}
            for n in topology.nodes:
                if n.kind is NodeKind.RESERVOIR:
                    new_node[n.id] = node_c[n.id]
                    continue
                q_in, q_out, mix = 0.0, 0.0, 0.0
                for lk in topology.links:
                    q = snap.flow[lk.id]
                    if (lk.end == n.id and q > 0) or (lk.start == n.id and q < 0):
                        q_in += abs(q)
                        mix += abs(q) * outlet(lk)
                    elif (lk.start == n.id and q > 0) or (lk.end == n.id and q < 0):
                        q_out += abs(q)
                if n.kind is NodeKind.JUNCTION:
                    den = snap.demand[n.id] + q_out
                    new_node[n.id] = node_c[n.id] if den == 0.0 else mix / den
                else:
                    v_now = _volume(profile, topology, n.id, t)
                    v_next = _volume(profile, topology, n.id, t + dt_wq)
                    new_node[n.id] = (node_c[n.id] * (v_now * (1.0 - kb * dt_wq) - q_out * dt_wq) + mix * dt_wq) / v_next
            new_link = {}
            for lid in link_c:
                lk = topology.link(lid)
                q = snap.flow[lid]
                if q == 0.0:
                    new_link[lid] = link_c[lid]
                else:
                    new_link[lid] = node_c[lk.start if q > 0 else lk.end]
            new_pipe = {}
            for pid, seg in pipe_c.items():
                lk = topology.link(pid)
                n_seg, lam = layout[pid]
                kw = lk.wall_coeff or 0.0
                kf = lk.mass_transfer or 0.0
                wall = 0.0 if kw + kf == 0.0 else 2.0 * kw * kf / (lk.radius * (kw + kf))
                keep = 1.0 - lam - dt_wq * (kb + wall)
                q = snap.flow[pid]
                flow_order = seg if q >= 0 else seg[::-1]
                upstream = node_c[lk.start if q >= 0 else lk.end]
                moved = []
                for i in range(n_seg):
                    prev = upstream if i == 0 else flow_order[i - 1]
                    moved.append(keep * flow_order[i] + lam * prev)
                new_pipe[pid] = moved if q >= 0 else moved[::-1]
            for node, u in injections.items():
                new_node[node] += u
            node_c, link_c, pipe_c = new_node, new_link, new_pipe
            record()
        results.append({label: np.array(v) for label, v in traj.items()})
    return results


def oracle_exhaustive_placement(A, columns: Mapping[str, np.ndarray], n_s: int, n_steps: int, kind, eps: float | None = None, budget: int = 10**6):
    """Best n_s-subset of ``columns`` by brute force.

    Trace is computed from the explicit Gramian; LogDet uses the normalized
    form ``logdet(W + eps I) - n log eps`` with ``eps`` (default: from the
    Gramian of all columns). Ties go to the lexicographically smallest set.
    Returns (best set, best value, all values).
    """
    kind = MetricKind(kind)
    names = sorted(columns)
    if math.comb(len(names), n_s) > budget:
        raise OracleBudgetError(f"C({len(names)}, {n_s}) exceeds the enumeration budget {budget}")
    # explicit controllability blocks [b, Ab, ..., A^(N-1) b] per candidate
    blocks = {}
    for name in names:
        x = np.asarray(columns[name], dtype=float).ravel()
        cols = []
        for _ in range(n_steps):
            cols.append(x)
            x = A @ x
        blocks[name] = np.column_stack(cols)
    single = {name: K @ K.T for name, K in blocks.items()}
    n = next(iter(single.values())).shape[0]
    if eps is None:
        eps = logdet_epsilon(sum(float(np.trace(W)) for W in single.values()), n)
    values = {}
    for combo in itertools.combinations(names, n_s):
        W = sum(single[c] for c in combo)
        if kind is MetricKind.TRACE:
            values[combo] = float(np.trace(W))
        else:
            sign, ld = np.linalg.slogdet(W + eps * np.eye(n))
            if sign <= 0:
                raise ValueError("regularized Gramian is not positive definite")
            values[combo] = ld - n * math.log(eps)
    best = max(values.values())
    winner = min(c for c, v in values.items() if v == best)
    return winner, best, values
