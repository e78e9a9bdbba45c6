"""Travel efficiency, disorientation episodes and state fractions.

Everything here is computed from the event log (plus the static map and
routing table), so a run can be re-scored from its artifacts alone.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .world import DIAG_NM, NM_PER_M, ORTHO_NM, GridMap, PathTable

log = logging.getLogger(__name__)

STATES = ("q_O", "q_D", "q_G")
INITIAL_STATE = "q_O"
ROW_COLUMNS = ["capacity", "mode", "seed", "TE", "n", "mu", "sigma",
               "pct_qO", "pct_qD", "pct_qG", "error"]
METRIC_COLUMNS = ["TE", "n", "mu", "sigma", "pct_qO", "pct_qD", "pct_qG"]


class LogParseError(ValueError):
    pass


@dataclass
class TripRecord:
    agent: str
    goal: str
    start_tick: int
    start_cell: int
    end_tick: int
    end_cell: int
    shortest_nm: float
    traveled_nm: int
    completed: bool

    @property
    def shortest_distance(self) -> float:
        return self.shortest_nm / NM_PER_M

    @property
    def traveled_distance(self) -> float:
        return self.traveled_nm / NM_PER_M

    @property
    def ratio(self) -> float | None:
        if not self.completed or self.shortest_nm <= 0 or not math.isfinite(self.shortest_nm):
            return None
        return self.shortest_nm / self.traveled_nm


@dataclass
class EpisodeRecord:
    agent: str
    start_tick: int
    duration: int


@dataclass
class RunSummary:
    te: float | None
    n: int
    mu: float | None
    sigma: float | None
    pct_qO: float
    pct_qD: float
    pct_qG: float
    trips: int = 0

    def as_dict(self) -> dict[str, Any]:
        d = asdict(self)
        return {k: ("n/a" if v is None else v) for k, v in d.items()}


# -- log reading ------------------------------------------------------------

def read_log(source: str | Path | Iterable[str]) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    """Parse JSONL events into ``(header, events)``.

    ``source`` is a path or an iterable of lines.
    """
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            return read_log(fh.readlines())
    header: dict[str, Any] = {}
    events = []
    last_tick = -1
    for lineno, line in enumerate(source, 1):
        line = line.strip()
        if not line:
            continue
        try:
            ev = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogParseError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(ev, dict) or "kind" not in ev:
            raise LogParseError(f"line {lineno}: expected an object with a 'kind'")
        if ev["kind"] == "header":
            header = ev
            continue
        if not isinstance(ev.get("tick"), int) or "agent" not in ev:
            raise LogParseError(f"line {lineno}: event needs integer 'tick' and 'agent'")
        if ev["tick"] < last_tick:
            raise LogParseError(f"line {lineno}: tick {ev['tick']} goes backwards")
        last_tick = ev["tick"]
        events.append(ev)
    return header, events


def step_nm(gmap: GridMap, a: int, b: int) -> int:
    ax, ay = gmap.coords(a)
    bx, by = gmap.coords(b)
    dx, dy = abs(ax - bx), abs(ay - by)
    if max(dx, dy) != 1:
        raise LogParseError(f"move {a}->{b} is not between Moore neighbours")
    return DIAG_NM if dx and dy else ORTHO_NM


# -- trips ------------------------------------------------------------------

def extract_trips(events: Sequence[Mapping[str, Any]], table: PathTable,
                  gmap: GridMap) -> dict[str, list[TripRecord]]:
    """Trips per patient, delimited by ``goal_adopted`` / ``goal_reached``.

    ``table`` should be the unpenalized (Euclidean) table so that the
    shortest distance is geometric.  Zero-length trips (adopted on a goal
    cell) are dropped.
    """
    open_trips: dict[str, dict[str, Any]] = {}
    out: dict[str, list[TripRecord]] = {}
    last_tick = 0

    def close(agent: str, tick: int, cell: int, completed: bool) -> None:
        t = open_trips.pop(agent)
        if t["shortest"] > 0:
            out[agent].append(TripRecord(agent, t["goal"], t["tick"], t["cell"], tick, cell,
                                         t["shortest"], t["traveled"], completed))

    position: dict[str, int] = {}
    for ev in events:
        kind, agent, tick = ev["kind"], ev["agent"], ev["tick"]
        last_tick = tick
        if kind == "goal_adopted":
            out.setdefault(agent, [])
            if agent in open_trips:
                close(agent, tick, ev["cell"], False)
            targets = [c for name in ev["target"] for c in gmap.cells_with(name)]
            _, d = table.nearest(ev["cell"], targets)
            open_trips[agent] = {"goal": ev.get("label", ev["goal"]), "tick": tick,
                                 "cell": ev["cell"], "shortest": d, "traveled": 0}
            position[agent] = ev["cell"]
        elif kind == "moved":
            src = ev.get("src", position.get(agent))
            position[agent] = ev["cell"]
            if agent in open_trips and src is not None:
                open_trips[agent]["traveled"] += step_nm(gmap, src, ev["cell"])
        elif kind == "goal_reached" and agent in open_trips:
            close(agent, tick, ev["cell"], True)
    for agent in list(open_trips):
        close(agent, last_tick, position.get(agent, open_trips[agent]["cell"]), False)
    return out


def travel_efficiency(trips: Iterable[TripRecord]) -> float | None:
    ratios = [r for r in (t.ratio for t in trips) if r is not None]
    return statistics.fmean(ratios) if ratios else None


# -- states and episodes ------------------------------------------------------

def states_from_events(events: Sequence[Mapping[str, Any]], agent: str,
                       horizon: int) -> list[str]:
    """Per-tick end-of-tick state of one patient, rebuilt from state changes."""
    final: dict[int, str] = {}
    for ev in events:
        if ev["kind"] == "state_changed" and ev["agent"] == agent:
            final[ev["tick"]] = ev["to"]
    out = []
    state = INITIAL_STATE
    for t in range(horizon):
        state = final.get(t, state)
        out.append(state)
    return out


def episodes_from_states(states: Sequence[str], agent: str = "") -> list[EpisodeRecord]:
    """Maximal runs of ``q_D`` in a per-tick state sequence."""
    episodes = []
    start = None
    for t, s in enumerate(states):
        if s == "q_D":
            if start is None:
                start = t
        elif start is not None:
            episodes.append(EpisodeRecord(agent, start, t - start))
            start = None
    if start is not None:
        episodes.append(EpisodeRecord(agent, start, len(states) - start))
    return episodes


def episodes_from_events(events: Sequence[Mapping[str, Any]], agent: str,
                         horizon: int) -> list[EpisodeRecord]:
    """Episodes straight from state transitions, without expanding ticks.

    Same-tick transitions collapse to the tick's final state.
    """
    changes: dict[int, str] = {}
    for ev in events:
        if ev["kind"] == "state_changed" and ev["agent"] == agent:
            changes[ev["tick"]] = ev["to"]
    episodes = []
    state, start = INITIAL_STATE, None
    for tick in sorted(changes):
        new = changes[tick]
        if new == state:
            continue
        if new == "q_D":
            start = tick
        elif state == "q_D":
            episodes.append(EpisodeRecord(agent, start, tick - start))
            start = None
        state = new
    if state == "q_D" and start is not None:
        episodes.append(EpisodeRecord(agent, start, horizon - start))
    return episodes


def state_counts(states: Sequence[str]) -> dict[str, int]:
    counts = {s: 0 for s in STATES}
    for s in states:
        counts[s] += 1
    return counts


def summarize(trips: Sequence[TripRecord], episodes: Sequence[EpisodeRecord],
              counts: Mapping[str, int], horizon: int) -> RunSummary:
    """Table-style summary: TE, episode statistics and state percentages."""
    durations = [e.duration for e in episodes]
    n = len(durations)
    mu = statistics.fmean(durations) if n else None
    sigma = (statistics.stdev(durations) if n > 1 else 0.0) if n else None
    pct = {s: 100.0 * counts.get(s, 0) / horizon for s in STATES}
    completed = [t for t in trips if t.ratio is not None]
    return RunSummary(travel_efficiency(trips), n, mu, sigma,
                      pct["q_O"], pct["q_D"], pct["q_G"], trips=len(completed))


def summarize_log(header: Mapping[str, Any], events: Sequence[Mapping[str, Any]],
                  table: PathTable, gmap: GridMap) -> dict[str, RunSummary]:
    horizon = int(header["horizon"])
    patients = sorted(a for a, k in header["agents"].items() if k == "pwd")
    trips = extract_trips(events, table, gmap)
    out = {}
    for pid in patients:
        states = states_from_events(events, pid, horizon)
        out[pid] = summarize(trips.get(pid, []), episodes_from_states(states, pid),
                             state_counts(states), horizon)
    return out


def summarize_run(result) -> dict[str, RunSummary]:
    """Per-patient summaries of an in-memory :class:`~simdem.engine.RunResult`."""
    return summarize_log(result.header(), result.events, result.world.metric, result.world.gmap)


def pooled_summary(summaries: Mapping[str, RunSummary]) -> RunSummary:
    """Single row for a run with several patients (means over patients)."""
    if len(summaries) == 1:
        return next(iter(summaries.values()))
    vals = list(summaries.values())

    def mean(xs):
        xs = [x for x in xs if x is not None]
        return statistics.fmean(xs) if xs else None

    return RunSummary(mean(v.te for v in vals), sum(v.n for v in vals), mean(v.mu for v in vals),
                      mean(v.sigma for v in vals), mean(v.pct_qO for v in vals),
                      mean(v.pct_qD for v in vals), mean(v.pct_qG for v in vals),
                      sum(v.trips for v in vals))


# -- sweeps -----------------------------------------------------------------

@dataclass
class SweepRow:
    capacity: float
    mode: str
    seed: int
    summary: RunSummary | None
    digest: str = ""
    error: str = ""

    def as_csv(self) -> dict[str, Any]:
        row: dict[str, Any] = {"capacity": self.capacity, "mode": self.mode, "seed": self.seed,
                               "error": self.error}
        if self.summary is None:
            row.update({k: "" for k in METRIC_COLUMNS})
        else:
            s = self.summary
            row.update({"TE": s.te, "n": s.n, "mu": s.mu, "sigma": s.sigma, "pct_qO": s.pct_qO,
                        "pct_qD": s.pct_qD, "pct_qG": s.pct_qG})
        return {k: _fmt(v) for k, v in row.items()}


def _fmt(v: Any) -> Any:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.6g}"
    return v


def _replicate(args) -> SweepRow:
    scenario, capacity, mode, seed, keep_dir = args
    try:
        sc = scenario.with_capacity(capacity).with_mode(mode).with_changes(seed=seed)
        result = sc.build(record_positions=False).run()
        summary = pooled_summary(summarize_run(result))
        digest = result.events_digest()
        if keep_dir is not None:
            path = Path(keep_dir) / f"events-c{capacity:g}-{mode}-s{seed}.jsonl"
            path.write_text("\n".join(result.event_lines()) + "\n")
        return SweepRow(capacity, mode, seed, summary, digest)
    except Exception as exc:  # one failed replicate must not sink the sweep
        log.exception("replicate capacity=%s mode=%s seed=%s failed", capacity, mode, seed)
        return SweepRow(capacity, mode, seed, None, error=f"{type(exc).__name__}: {exc}")


def sweep(scenario, capacities: Sequence[float], modes: Sequence[str], seeds: Sequence[int],
          workers: int = 1, keep_events: str | Path | None = None) -> list[SweepRow]:
    """Run every (capacity, mode, seed) replicate.

    Rows come back in (capacity, mode, seed) input order whatever the
    worker count, so output files are identical across ``workers``.
    """
    if not seeds:
        raise ValueError("sweep needs at least one seed")
    from .scenario import MODES

    for m in modes:
        if m not in MODES:
            raise ValueError(f"unknown mode {m!r}; expected one of {', '.join(MODES)}")
    if keep_events is not None:
        Path(keep_events).mkdir(parents=True, exist_ok=True)
    jobs = [(scenario, float(c), m, int(s), keep_events) for c in capacities for m in modes for s in seeds]
    scenario.world()  # build or load the path cache once, before fanning out
    if workers <= 1:
        return [_replicate(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_replicate, jobs))


@dataclass
class Aggregate:
    capacity: float
    mode: str
    replicates: int
    failed: int
    mean: dict[str, float | None]
    stderr: dict[str, float | None]


def aggregate(rows: Sequence[SweepRow]) -> list[Aggregate]:
    """Mean and standard error per (capacity, mode), ignoring n/a values."""
    groups: dict[tuple[float, str], list[SweepRow]] = {}
    for r in rows:
        groups.setdefault((r.capacity, r.mode), []).append(r)
    out = []
    for (cap, mode), rs in groups.items():
        ok = [r.summary for r in rs if r.summary is not None]
        mean, se = {}, {}
        for col in METRIC_COLUMNS:
            attr = "te" if col == "TE" else col
            xs = [getattr(s, attr) for s in ok if getattr(s, attr) is not None]
            mean[col] = statistics.fmean(xs) if xs else None
            se[col] = statistics.stdev(xs) / math.sqrt(len(xs)) if len(xs) > 1 else None
        out.append(Aggregate(cap, mode, len(rs), len(rs) - len(ok), mean, se))
    return out


def rows_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=ROW_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r.as_csv())
    return buf.getvalue()


def aggregate_csv(aggs: Sequence[Aggregate]) -> str:
    cols = ["capacity", "mode", "replicates", "failed"]
    for c in METRIC_COLUMNS:
        cols += [c, f"{c}_se"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for a in aggs:
        row: dict[str, Any] = {"capacity": a.capacity, "mode": a.mode,
                               "replicates": a.replicates, "failed": a.failed}
        for c in METRIC_COLUMNS:
            row[c] = a.mean[c]
            row[f"{c}_se"] = a.stderr[c]
        w.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue()
