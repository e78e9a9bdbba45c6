"""Command line: ``simdem validate|run|sweep|render``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, metrics
from .scenario import (
    MODES, Scenario, ScenarioError, apply_overrides, load_scenario, resolve_scenario_path,
    validate,
)

MANIFEST_SCHEMA = "simdem.manifest"

STATE_COLORS = {
    "q_O": (255, 255, 255),
    "q_D": (255, 48, 48),
    "q_G": (255, 160, 255),
    "q_I": (192, 192, 192),
    "q_P": (255, 255, 96),
}


class RenderError(ValueError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def load_any(path: str | Path, overrides: Sequence[str] = ()) -> Scenario:
    """Load a scenario file, a bundled scenario name, or a run manifest."""
    p = resolve_scenario_path(path)
    doc = json.loads(p.read_text())
    if isinstance(doc, dict) and doc.get("schema") == MANIFEST_SCHEMA:
        doc = doc["scenario"]
        if overrides:
            apply_overrides(doc, overrides)
        errors = validate(doc, p.parent)
        if errors:
            raise ScenarioError(errors)
        return Scenario(doc, p.parent)
    return load_scenario(p, overrides)


def parse_seeds(text: str) -> list[int]:
    """``"1,2,5"`` or ranges like ``"0-19"``."""
    seeds: list[int] = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


# -- commands ---------------------------------------------------------------

def cmd_validate(args) -> int:
    try:
        load_any(args.scenario, args.override)
    except ScenarioError as exc:
        for err in exc.errors:
            print(err, file=sys.stderr)
        return 1
    print("OK")
    return 0


def _with_run_flags(args) -> Scenario:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.steps is not None:
        overrides.append(f"horizon={args.steps}")
    return load_any(args.scenario, overrides)


def write_run(scenario: Scenario, out: Path) -> dict[str, metrics.RunSummary]:
    """Run ``scenario`` and write events, trajectories, summary and manifest."""
    out.mkdir(parents=True, exist_ok=True)
    result = scenario.build().run()
    events_path = out / "events.jsonl"
    with open(events_path, "w") as fh:
        for line in result.event_lines():
            fh.write(line + "\n")
    traj_dir = out / "trajectories"
    traj_dir.mkdir(exist_ok=True)
    for aid, rows in result.trajectories.items():
        with open(traj_dir / f"{aid}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tick", "x", "y", "state"])
            w.writerows(rows)
    summaries = metrics.summarize_run(result)
    summary = {"horizon": result.horizon, "seed": result.seed,
               "agents": {k: v.as_dict() for k, v in summaries.items()}}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    doc = scenario.resolved()
    doc["map"] = str(scenario.map_path.resolve())
    manifest = {
        "schema": MANIFEST_SCHEMA, "version": 1, "simdem": __version__,
        "scenario": doc, "seed": result.seed,
        "map_sha256": _sha256(scenario.map_path),
        "events_sha256": _sha256(events_path),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return summaries


def cmd_run(args) -> int:
    try:
        scenario = _with_run_flags(args)
    except ScenarioError as exc:
        for err in exc.errors:
            print(err, file=sys.stderr)
        return 1
    out = Path(args.out)
    try:
        summaries = write_run(scenario, out)
    except OSError as exc:
        print(f"cannot write to {out}: {exc}", file=sys.stderr)
        return 1
    for aid, s in summaries.items():
        d = s.as_dict()
        print(f"{aid}: TE={d['te']} n={d['n']} mu={d['mu']} "
              f"qO/qD/qG={s.pct_qO:.1f}/{s.pct_qD:.1f}/{s.pct_qG:.1f}")
    return 0


def cmd_sweep(args, parser: argparse.ArgumentParser) -> int:
    seeds = parse_seeds(args.seeds)
    if not seeds:
        parser.error("--seeds must name at least one seed")
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if bad or not modes:
        parser.error(f"--modes must be drawn from {', '.join(MODES)}")
    capacities = _floats(args.capacities)
    if not capacities or any(not 0 <= c <= 1 for c in capacities):
        parser.error("--capacities must be numbers in [0, 1]")
    try:
        overrides = list(args.override)
        if args.steps is not None:
            overrides.append(f"horizon={args.steps}")
        scenario = load_any(args.scenario, overrides)
    except ScenarioError as exc:
        for err in exc.errors:
            print(err, file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    keep = out / "events" if args.keep_events else None
    rows = metrics.sweep(scenario, capacities, modes, seeds, workers=args.workers, keep_events=keep)
    aggs = metrics.aggregate(rows)
    (out / "replicates.csv").write_text(metrics.rows_csv(rows))
    (out / "aggregate.csv").write_text(metrics.aggregate_csv(aggs))
    for a in aggs:
        te, se = a.mean["TE"], a.stderr["TE"]
        te_s = "n/a" if te is None else f"{te:.3f}"
        se_s = "" if se is None else f" ± {se:.3f}"
        print(f"capacity={a.capacity:g} mode={a.mode}: TE={te_s}{se_s} "
              f"({a.replicates - a.failed}/{a.replicates} ok)")
    return 1 if any(r.error for r in rows) else 0


def read_trajectory(path: str | Path) -> list[tuple[int, int, int, str]]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append((int(rec["tick"]), int(rec["x"]), int(rec["y"]), rec.get("state", "")))
    return rows


def render(map_path: str | Path, trajectory: Sequence[tuple[int, int, int, str]],
           out: str | Path, scale: int = 1) -> int:
    """Overlay a trajectory on the map raster; returns the overlaid pixel count."""
    from PIL import Image, ImageChops, ImageDraw

    with Image.open(map_path) as im:
        base = im.convert("RGB")
    w, h = base.size
    for tick, x, y, _ in trajectory:
        if not (0 <= x < w and 0 <= y < h):
            raise RenderError(f"trajectory leaves the map at tick {tick}: ({x}, {y})")
    if scale > 1:
        base = base.resize((w * scale, h * scale), Image.NEAREST)
    img = base.copy()
    draw = ImageDraw.Draw(img)

    def centre(x: int, y: int) -> tuple[int, int]:
        return x * scale + scale // 2, y * scale + scale // 2

    prev = None
    for _, x, y, state in trajectory:
        color = STATE_COLORS.get(state, (255, 255, 0))
        if prev is None:
            draw.point(centre(x, y), fill=color)
        elif prev != (x, y):
            draw.line([centre(*prev), centre(x, y)], fill=color, width=1)
        prev = (x, y)
    img.save(out)
    diff = ImageChops.difference(img, base).convert("L")
    return int(np.count_nonzero(np.asarray(diff)))


def cmd_render(args) -> int:
    try:
        traj = read_trajectory(args.trajectory)
        n = render(args.map, traj, args.out, args.scale)
    except (RenderError, OSError, KeyError, ValueError) as exc:
        print(f"render failed: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out} ({n} overlaid pixels)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simdem", description=__doc__)
    p.add_argument("--version", action="version", version=f"simdem {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_flags(sp):
        sp.add_argument("--scenario", required=True,
                        help="scenario JSON, run manifest, or bundled name (default, ward_large, corridor)")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a leaf value, e.g. pwd.capacity=0.5 (repeatable)")

    v = sub.add_parser("validate", help="check a scenario file")
    scenario_flags(v)

    r = sub.add_parser("run", help="run one replicate and write its artifacts")
    scenario_flags(r)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--steps", type=int, help="override the horizon")

    s = sub.add_parser("sweep", help="capacity x assistance x seed sweep")
    scenario_flags(s)
    s.add_argument("--out", required=True)
    s.add_argument("--capacities", default="1.0,0.5,0.1")
    s.add_argument("--modes", default=",".join(MODES))
    s.add_argument("--seeds", required=True, help="e.g. 0-19 or 1,2,3")
    s.add_argument("--steps", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--keep-events", action="store_true", help="write every replicate's event log")

    d = sub.add_parser("render", help="draw a trajectory over the map")
    d.add_argument("--map", required=True)
    d.add_argument("--trajectory", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--scale", type=int, default=1)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "validate":
        return cmd_validate(args)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "sweep":
        return cmd_sweep(args, parser)
    return cmd_render(args)


if __name__ == "__main__":
    sys.exit(main())
