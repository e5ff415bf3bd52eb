"""Command-line front end.

Every command reads one JSON run config; flags override single fields.
Relative paths in the config are resolved against the config's directory.

Exit codes: 0 success, 1 invalid input (config, INP, hydraulics, time-step
too long for a pipe), 2 runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .controllability import MetricError, MetricKind
from .dynamics import BoosterPacing, SegmentationError, WQParams, segmentize, state_space_for_step
from .hydraulics import HydraulicError, load_profile, read_records, validate_mass_balance
from .network import InpError, LinkKind, read_inp, topology_summary
from .placement import (
    WEIGHTING_PRESETS,
    PlacementConfig,
    PlacementTimeline,
    StepResult,
    backup_replacement,
    compare_strategies,
    partition_solve,
    peak_demand_steps,
    solve_timeline,
    weigh_sets,
    weigh_sets_by_dimsrs,
)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
TIMELINE_COLUMNS = ["scenario", "step", "time_s", "rank", "node", "gain", "sc_prefix", "dimsrs", "n_x"]
COMPARISON_COLUMNS = ["step", "strategy", "seed", "metric", "value", "relative_pct"]


class ConfigError(ValueError):
    pass


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.12g" % x


# --------------------------------------------------------------------------
# config


@dataclass
class RunConfig:
    raw: dict
    base: Path

    def path(self, key: str) -> Path:
        return (self.base / self.raw[key]).resolve()

    @property
    def hydraulics(self) -> list[Path]:
        return [(self.base / p).resolve() for p in self.raw["hydraulics"]]

    @property
    def output_dir(self) -> Path:
        return (self.base / self.raw.get("output_dir", "out")).resolve()

    @property
    def metrics(self) -> list[MetricKind]:
        m = self.raw.get("metric", "trace")
        names = ["trace", "logdet"] if m == "both" else ([m] if isinstance(m, str) else list(m))
        return [MetricKind(n) for n in names]

    @property
    def mu(self) -> tuple[float, ...]:
        mu = self.raw.get("mu", "WS1")
        if isinstance(mu, str):
            return WEIGHTING_PRESETS[mu]
        return tuple(float(v) for v in mu)

    @property
    def pacing(self) -> BoosterPacing:
        p = self.raw.get("pacing", {})
        return BoosterPacing(**p) if isinstance(p, dict) else BoosterPacing(mode=p)

    def digest(self) -> str:
        # output location and worker count do not change results
        doc = {k: v for k, v in self.raw.items() if k not in ("output_dir", "jobs")}
        return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    cfg = RunConfig(raw, path.parent.resolve())
    _check_config(cfg)
    return cfg


def _check_config(cfg: RunConfig) -> None:
    raw = cfg.raw
    for key in ("topology", "hydraulics", "dt_wq", "n_s"):
        if key not in raw:
            raise ConfigError(f"config is missing {key!r}")
    if isinstance(raw["hydraulics"], str):
        raw["hydraulics"] = [raw["hydraulics"]]
    if not raw["hydraulics"]:
        raise ConfigError("at least one hydraulics file is required")
    files = [cfg.path("topology"), *cfg.hydraulics]
    if raw.get("partition"):
        files.append(cfg.path("partition"))
    for f in files:
        if not f.is_file():
            raise ConfigError(f"file not found: {f}")
    for key in ("dt_wq", "dt_h", "n_s", "max_segments", "jobs"):
        if key in raw and raw[key] is not None and not (isinstance(raw[key], (int, float)) and raw[key] > 0):
            raise ConfigError(f"{key} must be positive")
    if not isinstance(raw["n_s"], int):
        raise ConfigError("n_s must be an integer")
    try:
        cfg.metrics
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    mu = raw.get("mu", "WS1")
    if isinstance(mu, str):
        if mu not in WEIGHTING_PRESETS:
            raise ConfigError(f"unknown weighting preset {mu!r}; choose from {sorted(WEIGHTING_PRESETS)}")
    elif len(mu) != 4 or any(not isinstance(v, (int, float)) or v < 0 for v in mu):
        raise ConfigError("mu needs four nonnegative coefficients")
    crit = raw.get("critical")
    if crit is not None and crit != "peak" and not (isinstance(crit, list) and all(isinstance(s, int) for s in crit)):
        raise ConfigError("critical must be 'peak' or a list of step indices")
    try:
        cfg.pacing
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"pacing: {exc}") from None


class Inputs:
    """Parsed topology and hydraulic profiles for a config."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.topology = read_inp(cfg.path("topology"))
        self.profiles = []
        for path in cfg.hydraulics:
            prof = load_profile(self.topology, read_records(path), path.stem, cfg.raw.get("dt_h"))
            self.profiles.append(prof)
        steps = {p.n_steps for p in self.profiles}
        dts = {p.dt_h for p in self.profiles}
        if len(steps) > 1 or len(dts) > 1:
            raise HydraulicError("scenarios must share the hydraulic time grid")
        self.pool = self._pool()

    def _pool(self):
        spec = self.cfg.raw.get("pool")
        nodes = self.topology.node_ids
        if not spec:
            return None
        include = spec.get("include") or nodes
        exclude = set(spec.get("exclude") or ())
        unknown = [n for n in list(include) + list(exclude) if n not in set(nodes)]
        if unknown:
            raise ConfigError(f"pool names unknown nodes {unknown}")
        return tuple(n for n in include if n not in exclude)

    def placement(self, metric: MetricKind, **changes) -> PlacementConfig:
        raw = self.cfg.raw
        kw = dict(
            n_s=raw["n_s"],
            metric=metric,
            pool=self.pool,
            dt_wq=float(raw["dt_wq"]),
            dt_h=raw.get("dt_h"),
            pacing=self.cfg.pacing,
            max_segments=raw.get("max_segments"),
            eps_rel=float(raw.get("eps_rel", 1e-12)),
            jobs=int(raw.get("jobs", 1)),
        )
        kw.update(changes)
        try:
            return PlacementConfig(**kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def partition(self) -> dict | None:
        if not self.cfg.raw.get("partition"):
            return None
        with open(self.cfg.path("partition"), encoding="utf-8") as fh:
            return json.load(fh)


# --------------------------------------------------------------------------
# output helpers


def header(cfg: RunConfig, extra: list[str] = ()) -> str:
    lines = [f"# cbsp {__version__}", f"# config_sha256 {cfg.digest()}"]
    lines += [f"# {line}" for line in extra]
    return "\n".join(lines) + "\n"


def eps_lines(timelines: list[PlacementTimeline]) -> list[str]:
    out = []
    for tl in timelines:
        values = [s.eps for s in tl.steps]
        if any(v is not None for v in values):
            out.append(f"eps[{tl.scenario}] " + " ".join(fmt(v) for v in values))
        else:
            out.append(f"eps[{tl.scenario}] none (trace metric)")
    return out


def write_csv(path: Path, head: str, columns: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    buf.write(head)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue(), encoding="utf-8")


def write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_round(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _round(obj):
    """Floats through the 12-significant-digit formatter so JSON is stable too."""
    if isinstance(obj, float):
        return float(fmt(obj)) if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def timeline_rows(timelines: list[PlacementTimeline]) -> list[list]:
    rows = []
    for tl in timelines:
        for st in tl.steps:
            for r, (node, gain, flag, dim) in enumerate(zip(st.nodes, st.gains, st.sc_prefix, st.dimsrs_prefix), 1):
                rows.append([tl.scenario, st.step, st.time, r, node, gain, flag, dim, st.n_x])
    return rows


def read_timelines(path: Path, metric: MetricKind, demands: dict | None = None) -> list[PlacementTimeline]:
    """Rebuild timelines from a timeline CSV (gains and flags only)."""
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    grouped: dict[str, dict[int, list[dict]]] = {}
    for row in rows:
        grouped.setdefault(row["scenario"], {}).setdefault(int(row["step"]), []).append(row)
    out = []
    for scen, steps in grouped.items():
        results = []
        times = sorted(float(r[0]["time_s"]) for r in steps.values())
        dt_h = times[1] - times[0] if len(times) > 1 else 0.0
        for k in sorted(steps):
            picks = sorted(steps[k], key=lambda r: int(r["rank"]))
            results.append(
                StepResult(
                    step=k,
                    time=float(picks[0]["time_s"]),
                    nodes=tuple(r["node"] for r in picks),
                    gains=tuple(float(r["gain"]) for r in picks),
                    sc_prefix=tuple(r["sc_prefix"] == "1" for r in picks),
                    dimsrs_prefix=tuple(int(r["dimsrs"]) for r in picks),
                    n_x=int(picks[0]["n_x"]),
                    value=float("nan"),
                    # district timelines fall back to their scenario's total demand
                    total_demand=(demands or {}).get(scen.partition("@")[0], {}).get(k, 0.0),
                )
            )
        out.append(PlacementTimeline(scen, metric, len(results[0].nodes), dt_h, tuple(results)))
    return out


# --------------------------------------------------------------------------
# commands


def cmd_validate(cfg: RunConfig, out=sys.stdout) -> int:
    inputs = Inputs(cfg)
    topo = inputs.topology
    tol = float(cfg.raw.get("mass_balance_tol", 1e-6))
    dt_wq = float(cfg.raw["dt_wq"])
    cap = cfg.raw.get("max_segments")
    report = {"warnings": list(topo.warnings), "scenarios": []}
    ok = True
    for prof in inputs.profiles:
        mb = validate_mass_balance(topo, prof, tol)
        seg_errors = []
        for k, snap in enumerate(prof.snapshots):
            for link in topo.links_of(LinkKind.PIPE):
                try:
                    segmentize(link, snap.velocity[link.id], dt_wq, cap)
                except SegmentationError as exc:
                    seg_errors.append({"step": k, "time": snap.time, "pipe": link.id, "message": str(exc)})
        try:
            WQParams(dt_wq).steps_per(prof.dt_h)
            step_error = None
        except ValueError as exc:
            step_error = str(exc)
        ok = ok and mb.passed and not seg_errors and step_error is None
        report["scenarios"].append(
            {
                "scenario": prof.scenario_id,
                "mass_balance": [v.as_dict() | {"step": int(round(v.time / prof.dt_h))} for v in mb.violations],
                "segmentation": seg_errors,
                "time_step": step_error,
            }
        )
    write_json(cfg.output_dir / "validation.json", report)
    for scen in report["scenarios"]:
        for v in scen["mass_balance"]:
            print(f"{scen['scenario']}: junction {v['junction']} unbalanced at step {v['step']} "
                  f"(relative residual {fmt(v['residual'])})", file=out)
        for e in scen["segmentation"]:
            print(f"{scen['scenario']}: step {e['step']}: {e['message']}", file=out)
        if scen["time_step"]:
            print(f"{scen['scenario']}: {scen['time_step']}", file=out)
    print("valid" if ok else "INVALID", file=out)
    return EXIT_OK if ok else EXIT_INVALID


def _critical(cfg: RunConfig):
    crit = cfg.raw.get("critical")
    if crit == "peak":
        return lambda tl, st: st.step in peak_demand_steps(tl)
    return crit


def _weight_doc(cfg: RunConfig, timelines: list[PlacementTimeline]) -> dict:
    critical = _critical(cfg)
    doc = {"config": weigh_sets(timelines, cfg.mu, critical).as_dict()}
    for name, mu in WEIGHTING_PRESETS.items():
        doc[name] = weigh_sets(timelines, mu, critical).as_dict()
    if cfg.raw.get("dimsrs_weighting"):
        doc["config_dimsrs"] = weigh_sets_by_dimsrs(timelines, cfg.mu, critical).as_dict()
    return doc


def _districts(timelines: list[PlacementTimeline]) -> dict[str, list[PlacementTimeline]]:
    groups: dict[str, list[PlacementTimeline]] = {}
    for tl in timelines:
        _, _, district = tl.scenario.partition("@")
        groups.setdefault(district, []).append(tl)
    return groups


def _write_weights(cfg: RunConfig, metric: MetricKind, timelines, out) -> None:
    groups = _districts(timelines)
    doc = {"version": __version__, "config_sha256": cfg.digest(), "metric": metric.value, "eps": eps_lines(timelines)}
    if list(groups) == [""]:
        doc["reports"] = _weight_doc(cfg, timelines)
        print(f"{metric.value}: final set {' '.join(doc['reports']['config']['winner'])}", file=out)
    else:
        doc["districts"] = {}
        for name in sorted(groups):
            doc["districts"][name] = _weight_doc(cfg, groups[name])
            print(f"{metric.value} [{name}]: final set {' '.join(doc['districts'][name]['config']['winner'])}", file=out)
    write_json(cfg.output_dir / f"weights_{metric.value}.json", doc)


def cmd_place(cfg: RunConfig, out=sys.stdout) -> int:
    inputs = Inputs(cfg)
    partition = inputs.partition()
    for metric in cfg.metrics:
        pc = inputs.placement(metric)
        timelines = []
        for prof in inputs.profiles:
            if partition is None:
                timelines.append(solve_timeline(inputs.topology, prof, pc))
            else:
                timelines += list(partition_solve(inputs.topology, prof, partition, pc).values())
        head = header(cfg, [f"metric {metric.value}", f"eps_rel {fmt(pc.eps_rel)}", *eps_lines(timelines)])
        write_csv(cfg.output_dir / f"timeline_{metric.value}.csv", head, TIMELINE_COLUMNS, timeline_rows(timelines))
        _write_weights(cfg, metric, timelines, out)
    return EXIT_OK


def cmd_weigh(cfg: RunConfig, out=sys.stdout) -> int:
    inputs = Inputs(cfg)
    demands = {
        prof.scenario_id: {k: prof.total_demand(k) for k in range(prof.n_steps)} for prof in inputs.profiles
    }
    for metric in cfg.metrics:
        path = cfg.output_dir / f"timeline_{metric.value}.csv"
        if not path.is_file():
            raise ConfigError(f"no timeline at {path}; run `place` first")
        timelines = read_timelines(path, metric, demands)
        _write_weights(cfg, metric, timelines, out)
    return EXIT_OK


def cmd_compare(cfg: RunConfig, out=sys.stdout) -> int:
    inputs = Inputs(cfg)
    seeds = [int(s) for s in cfg.raw.get("seeds", [])]
    for metric in cfg.metrics:
        pc = inputs.placement(metric)
        for prof in inputs.profiles:
            table = compare_strategies(inputs.topology, prof, pc, seeds)
            rows = [[r[c] for c in COMPARISON_COLUMNS] for r in table]
            write_csv(
                cfg.output_dir / f"comparison_{metric.value}_{prof.scenario_id}.csv",
                header(cfg, [f"scenario {prof.scenario_id}", f"metric {metric.value}", f"seeds {' '.join(map(str, seeds))}"]),
                COMPARISON_COLUMNS,
                rows,
            )
            greedy = [r for r in table if r["strategy"] == "greedy"]
            wins = sum(
                g["value"] >= r["value"]
                for g in greedy
                for r in table
                if r["strategy"] == "random" and r["step"] == g["step"]
            )
            total = len(seeds) * len(greedy)
            print(f"{metric.value} {prof.scenario_id}: greedy >= random in {wins}/{total} (step, seed) pairs", file=out)
    return EXIT_OK


def cmd_backup(cfg: RunConfig, out=sys.stdout) -> int:
    inputs = Inputs(cfg)
    spec = cfg.raw.get("backup")
    if not spec:
        raise ConfigError("config has no 'backup' section (fixed, failed, t_fail, horizon)")
    for metric in cfg.metrics:
        pc = inputs.placement(metric, n_s=1)
        rows, summary = [], []
        for prof in inputs.profiles:
            try:
                res = backup_replacement(
                    inputs.topology,
                    prof,
                    pc,
                    spec["fixed"],
                    spec["failed"],
                    float(spec["t_fail"]),
                    float(spec["horizon"]),
                    pool=spec.get("pool"),
                )
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            rows += [[prof.scenario_id, k, t, node, gain] for k, t, node, gain in res.steps]
            summary.append(f"most_frequent[{prof.scenario_id}] {res.most_frequent or 'none'}")
            print(f"{metric.value} {prof.scenario_id}: replacement {res.most_frequent or 'none'}", file=out)
        write_csv(
            cfg.output_dir / f"backup_{metric.value}.csv",
            header(cfg, [f"metric {metric.value}", f"failed {spec['failed']}", *summary]),
            ["scenario", "step", "time_s", "replacement", "gain"],
            rows,
        )
    return EXIT_OK


def cmd_summary(cfg: RunConfig, out=sys.stdout) -> int:
    inputs = Inputs(cfg)
    doc = {"topology": topology_summary(inputs.topology), "warnings": list(inputs.topology.warnings), "scenarios": []}
    params = WQParams(float(cfg.raw["dt_wq"]), cfg.pacing, cfg.raw.get("max_segments"))
    for prof in inputs.profiles:
        sizes = [state_space_for_step(inputs.topology, prof, k, params).n_x for k in range(prof.n_steps)]
        doc["scenarios"].append(
            {"scenario": prof.scenario_id, "steps": prof.n_steps, "dt_h": prof.dt_h, "n_x_min": min(sizes), "n_x_max": max(sizes)}
        )
    write_json(cfg.output_dir / "summary.json", doc)
    print(json.dumps(doc, indent=2, sort_keys=True), file=out)
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "place": cmd_place,
    "weigh": cmd_weigh,
    "compare": cmd_compare,
    "backup": cmd_backup,
    "summary": cmd_summary,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cbsp", description="Chlorine booster station placement")
    p.add_argument("--version", action="version", version=f"cbsp {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("config", help="run config (JSON)")
        s.add_argument("--output-dir", dest="output_dir")
        s.add_argument("--n-s", dest="n_s", type=int)
        s.add_argument("--metric", choices=["trace", "logdet", "both"])
        s.add_argument("--dt-wq", dest="dt_wq", type=float)
        s.add_argument("--dt-h", dest="dt_h", type=float)
        s.add_argument("--max-segments", dest="max_segments", type=int)
        s.add_argument("--mu", help="preset name (WS1, WS2, WS3) or four comma-separated numbers")
        s.add_argument("--seeds", help="comma-separated integers")
        s.add_argument("--jobs", type=int, help="worker processes for per-step solves")
    return p


def _overrides(args) -> dict:
    ov = {k: getattr(args, k) for k in ("output_dir", "n_s", "metric", "dt_wq", "dt_h", "max_segments", "jobs")}
    if args.mu is not None:
        ov["mu"] = args.mu if args.mu in WEIGHTING_PRESETS else [float(v) for v in args.mu.split(",")]
    if args.seeds is not None:
        ov["seeds"] = [int(v) for v in args.seeds.split(",") if v.strip()]
    return ov


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](cfg, sys.stdout)
    except (ConfigError, InpError, HydraulicError, SegmentationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (MetricError, ArithmeticError, np.linalg.LinAlgError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
