"""Scenario documents: JSON schema, semantic checks, overrides and assembly."""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

import jsonschema

from .agents import NurseAgent, PwdAgent, WatchAgent
from .cognition import Appointment, CognitiveMap, Need, Schedule
from .engine import Simulation, agent_rng, initial_memory
from .world import (
    DEFAULT_DISCOMFORT, DEFAULT_VERTEX_LIMIT, CellFeature, GridMap, MapLoadError,
    World, build_world, load_map,
)

MODES = ("none", "nurse", "nurse+watch")

_PROB = {"type": "number", "minimum": 0, "maximum": 1}
_CLOCK = {"type": "string", "pattern": r"^\d{1,2}:\d{2}(:\d{2})?$"}
_TIME = {"oneOf": [{"type": "integer", "minimum": 0}, _CLOCK]}
_NAMES = {"type": "array", "items": {"type": "string", "minLength": 1}, "minItems": 1}
_CELL = {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2}

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["map", "palette", "horizon", "seed", "agents"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "map": {"type": "string"},
        "palette": {
            "type": "object",
            "minProperties": 1,
            "propertyNames": {"pattern": "^#[0-9a-fA-F]{6}$"},
            "additionalProperties": {"type": "string"},
        },
        "discomfort": {"type": "number", "minimum": 1},
        "path_limit": {"type": "integer", "minimum": 1},
        "step_seconds": {"type": "number", "exclusiveMinimum": 0},
        "day_start": _CLOCK,
        "horizon": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "agents": {"type": "array", "items": {
            "type": "object", "required": ["type", "id"],
            "properties": {"type": {"enum": ["pwd", "nurse", "watch"]}, "id": {"type": "string"}},
        }},
    },
}

PWD_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["type", "id", "home"],
    "properties": {
        "type": {"const": "pwd"},
        "id": {"type": "string", "minLength": 1},
        "home": _NAMES,
        "start": _CELL,
        "schedule": {"type": "array", "items": {
            "type": "object", "additionalProperties": False,
            "required": ["start", "location", "duration"],
            "properties": {
                "start": _TIME,
                "location": {"type": "string", "minLength": 1},
                "duration": {"type": "integer", "minimum": 0},
            },
        }},
        "p_forget_appointment": _PROB,
        "capacity": _PROB,
        "p_forget_cell": _PROB,
        "sight": {"type": "integer", "minimum": 0},
        "fov": {"type": "number", "exclusiveMinimum": 0, "maximum": 360},
        "p_landmarks": _PROB,
        "p_interventions": _PROB,
        "needs": {"type": "array", "items": {
            "type": "object", "additionalProperties": False,
            "required": ["name", "location", "growth_rate"],
            "properties": {
                "name": {"type": "string", "minLength": 1},
                "location": {"type": "string", "minLength": 1},
                "growth_rate": {"type": "number", "minimum": 0},
                "threshold": {"type": "number", "exclusiveMinimum": 0},
                "level": {"type": "number", "minimum": 0},
                "service_time": {"type": "integer", "minimum": 0},
            },
        }},
    },
}

NURSE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["type", "id", "home"],
    "properties": {
        "type": {"const": "nurse"},
        "id": {"type": "string", "minLength": 1},
        "home": _NAMES,
        "start": _CELL,
        "sight": {"type": "integer", "minimum": 0},
    },
}

WATCH_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["type", "id", "patient"],
    "properties": {
        "type": {"const": "watch"},
        "id": {"type": "string", "minLength": 1},
        "patient": {"type": "string", "minLength": 1},
        "cooldown": {"type": "integer", "minimum": 0},
        "sensor_model": _PROB,
        "n_help": {"type": "integer", "minimum": 0},
    },
}

AGENT_SCHEMAS = {"pwd": PWD_SCHEMA, "nurse": NURSE_SCHEMA, "watch": WATCH_SCHEMA}

# Table 1 values
PWD_DEFAULTS = {"p_forget_appointment": 0.0, "capacity": 1.0, "p_forget_cell": 0.0, "sight": 5,
                "fov": 90.0, "p_landmarks": 0.1, "p_interventions": 0.8}
NURSE_DEFAULTS = {"sight": 10}
WATCH_DEFAULTS = {"cooldown": 60, "sensor_model": 0.1, "n_help": 3}


class ScenarioError(ValueError):
    """Validation failure; ``errors`` holds ``"field.path: message"`` strings."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.errors))


def _path(parts: Iterable) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _schema_errors(doc: Any, schema: dict, prefix: Sequence = ()) -> list[str]:
    validator = jsonschema.Draft202012Validator(schema)
    errs = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    return [f"{_path([*prefix, *e.absolute_path])}: {e.message}" for e in errs]


def parse_clock(text: str) -> int:
    parts = [int(p) for p in text.split(":")]
    h, m = parts[0], parts[1]
    s = parts[2] if len(parts) > 2 else 0
    if not (0 <= h < 24 and 0 <= m < 60 and 0 <= s < 60):
        raise ValueError(f"bad clock time {text!r}")
    return h * 3600 + m * 60 + s


def to_tick(value: int | str, day_start: str, step_seconds: float) -> int:
    """Tick for a schedule time: ints are ticks, clock strings are wall time."""
    if isinstance(value, int):
        return value
    return round((parse_clock(value) - parse_clock(day_start)) / step_seconds)


@dataclass
class Scenario:
    doc: dict[str, Any]
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def name(self) -> str:
        return self.doc.get("name", "scenario")

    @property
    def seed(self) -> int:
        return int(self.doc["seed"])

    @property
    def horizon(self) -> int:
        return int(self.doc["horizon"])

    @property
    def discomfort(self) -> float:
        return float(self.doc.get("discomfort", DEFAULT_DISCOMFORT))

    @property
    def map_path(self) -> Path:
        p = Path(self.doc["map"])
        return p if p.is_absolute() else (self.base_dir / p)

    def load_gmap(self) -> GridMap:
        return load_map(self.map_path, self.doc["palette"])

    def world(self, cache_dir: Path | None = None) -> World:
        return build_world(self.load_gmap(), self.discomfort, cache_dir,
                           int(self.doc.get("path_limit", DEFAULT_VERTEX_LIMIT)))

    def agents(self, kind: str) -> list[dict[str, Any]]:
        return [a for a in self.doc["agents"] if a["type"] == kind]

    def with_changes(self, **top: Any) -> "Scenario":
        doc = copy.deepcopy(self.doc)
        doc.update(top)
        return Scenario(doc, self.base_dir)

    def with_mode(self, mode: str) -> "Scenario":
        """Drop assistance agents: ``none`` keeps patients only, ``nurse`` drops watches."""
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
        keep = {"none": {"pwd"}, "nurse": {"pwd", "nurse"}, "nurse+watch": {"pwd", "nurse", "watch"}}[mode]
        doc = copy.deepcopy(self.doc)
        doc["agents"] = [a for a in doc["agents"] if a["type"] in keep]
        return Scenario(doc, self.base_dir)

    def with_capacity(self, capacity: float) -> "Scenario":
        doc = copy.deepcopy(self.doc)
        for a in doc["agents"]:
            if a["type"] == "pwd":
                a["capacity"] = capacity
        return Scenario(doc, self.base_dir)

    def resolved(self) -> dict[str, Any]:
        """Document with defaults filled in, as recorded in run manifests."""
        doc = copy.deepcopy(self.doc)
        doc.setdefault("discomfort", DEFAULT_DISCOMFORT)
        doc.setdefault("path_limit", DEFAULT_VERTEX_LIMIT)
        doc.setdefault("step_seconds", 1)
        doc.setdefault("day_start", "00:00")
        for a in doc["agents"]:
            defaults = {"pwd": PWD_DEFAULTS, "nurse": NURSE_DEFAULTS, "watch": WATCH_DEFAULTS}[a["type"]]
            for k, v in defaults.items():
                a.setdefault(k, v)
            if a["type"] == "pwd":
                a.setdefault("schedule", [])
                a.setdefault("needs", [])
        return doc

    def build(self, world: World | None = None, record_positions: bool = True) -> Simulation:
        """Instantiate agents on ``world`` (built from the map if omitted)."""
        world = world or self.world()
        gmap = world.gmap
        doc = self.resolved()
        seed = int(doc["seed"])
        day_start, step_s = doc["day_start"], float(doc["step_seconds"])
        taken: set[int] = set()

        def start_cell(a: dict) -> int:
            if "start" in a:
                x, y = a["start"]
                return gmap.index(x, y)
            for c in world.goal_cells(a["home"]):
                if c not in taken:
                    return c
            raise ScenarioError([f"agents.{a['id']}.home: no free cell to start on"])

        pwds, nurses, watches = [], [], []
        for a in sorted(doc["agents"], key=lambda a: (a["type"] != "pwd", a["id"])):
            if a["type"] == "watch":
                watches.append(WatchAgent(a["id"], a["patient"], int(a["cooldown"]),
                                          float(a["sensor_model"]), int(a["n_help"]),
                                          rng=agent_rng(seed, a["id"])))
                continue
            pos = start_cell(a)
            taken.add(pos)
            if a["type"] == "nurse":
                nurses.append(NurseAgent(a["id"], pos, tuple(a["home"]), int(a["sight"])))
                continue
            cmap = CognitiveMap(len(gmap.accessible), float(a["capacity"]), float(a["p_forget_cell"]))
            initial_memory(world, pos, tuple(a["home"]), cmap)
            schedule = Schedule([Appointment(to_tick(s["start"], day_start, step_s), s["location"],
                                             int(s["duration"])) for s in a["schedule"]])
            needs = [Need(n["name"], n["location"], float(n["growth_rate"]),
                          float(n.get("threshold", 1.0)), float(n.get("level", 0.0)),
                          int(n.get("service_time", 1))) for n in a["needs"]]
            pwds.append(PwdAgent(a["id"], pos, tuple(a["home"]), schedule,
                                 float(a["p_forget_appointment"]), needs, cmap,
                                 sight=int(a["sight"]), fov=float(a["fov"]),
                                 p_landmarks=float(a["p_landmarks"]),
                                 p_interventions=float(a["p_interventions"]),
                                 rng=agent_rng(seed, a["id"])))
        return Simulation(world, pwds, nurses, watches, horizon=int(doc["horizon"]),
                          seed=seed, name=self.name, record_positions=record_positions)


def validate(doc: Any, base_dir: Path | None = None, check_map: bool = True) -> list[str]:
    """All problems with ``doc`` as ``field.path: message`` strings."""
    errors = _schema_errors(doc, SCENARIO_SCHEMA)
    if errors:
        return errors
    for i, a in enumerate(doc["agents"]):
        errors += _schema_errors(a, AGENT_SCHEMAS[a["type"]], ("agents", i))
    ids = [a["id"] for a in doc["agents"]]
    for i, a in enumerate(doc["agents"]):
        if ids.count(a["id"]) > 1:
            errors.append(f"agents[{i}].id: duplicate agent id {a['id']!r}")
    pwd_ids = {a["id"] for a in doc["agents"] if a["type"] == "pwd"}
    for i, a in enumerate(doc["agents"]):
        if a["type"] == "watch" and a.get("patient") not in pwd_ids:
            errors.append(f"agents[{i}].patient: no pwd agent with id {a.get('patient')!r}")
    for color, feat in doc["palette"].items():
        try:
            CellFeature.parse(feat)
        except ValueError as exc:
            errors.append(f"palette.{color}: {exc}")
    if errors:
        return errors

    step_s = doc.get("step_seconds", 1)
    day_start = doc.get("day_start", "00:00")
    try:
        parse_clock(day_start)
    except ValueError as exc:
        errors.append(f"day_start: {exc}")
        return errors
    for i, a in enumerate(doc["agents"]):
        if a["type"] != "pwd":
            continue
        ticks = []
        for j, s in enumerate(a.get("schedule", [])):
            where = f"agents[{i}].schedule[{j}].start"
            try:
                t = to_tick(s["start"], day_start, step_s)
            except ValueError as exc:
                errors.append(f"{where}: {exc}")
                continue
            if t < 0:
                errors.append(f"{where}: {s['start']!r} is before day_start {day_start!r}")
            ticks.append((t, s["duration"], j))
        ticks.sort()
        for (t0, d0, j0), (t1, _, j1) in zip(ticks, ticks[1:]):
            if t0 + d0 > t1:
                errors.append(f"agents[{i}].schedule[{j1}]: overlaps schedule[{j0}]")

    if not check_map:
        return errors
    base_dir = Path.cwd() if base_dir is None else base_dir
    map_path = Path(doc["map"])
    map_path = map_path if map_path.is_absolute() else base_dir / map_path
    if not map_path.is_file():
        errors.append(f"map: file not found: {map_path}")
        return errors
    try:
        gmap = load_map(map_path, doc["palette"])
    except (MapLoadError, OSError) as exc:
        errors.append(f"map: {exc}" if isinstance(exc, OSError) else f"palette: {exc}")
        return errors

    names = gmap.location_names
    taken: dict[int, str] = {}
    for i, a in enumerate(doc["agents"]):
        refs = []
        if a["type"] in ("pwd", "nurse"):
            refs += [(f"agents[{i}].home[{k}]", n) for k, n in enumerate(a["home"])]
        if a["type"] == "pwd":
            refs += [(f"agents[{i}].schedule[{k}].location", s["location"])
                     for k, s in enumerate(a.get("schedule", []))]
            refs += [(f"agents[{i}].needs[{k}].location", n["location"])
                     for k, n in enumerate(a.get("needs", []))]
        for where, name in refs:
            if name not in names:
                errors.append(f"{where}: location {name!r} does not exist in the map")
        if "start" in a:
            x, y = a["start"]
            if not gmap.in_bounds(x, y) or not gmap.is_accessible(gmap.index(x, y)):
                errors.append(f"agents[{i}].start: ({x}, {y}) is not an accessible cell")
            elif gmap.index(x, y) in taken:
                errors.append(f"agents[{i}].start: cell already used by {taken[gmap.index(x, y)]}")
            else:
                taken[gmap.index(x, y)] = a["id"]
    return errors


def load_scenario(path: str | Path, overrides: Sequence[str] = ()) -> Scenario:
    """Read, override and validate a scenario file (or bundled scenario name)."""
    path = resolve_scenario_path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"<root>: not valid JSON ({exc})"]) from None
    if overrides:
        apply_overrides(doc, overrides)
    errors = validate(doc, path.parent)
    if errors:
        raise ScenarioError(errors)
    return Scenario(doc, path.parent)


def bundled_dir() -> Path:
    return Path(str(resources.files("simdem") / "data"))


def resolve_scenario_path(path: str | Path) -> Path:
    p = Path(path)
    if p.exists():
        return p
    bundled = bundled_dir() / "scenarios" / f"{p.name.removesuffix('.json')}.json"
    if bundled.exists():
        return bundled
    raise ScenarioError([f"<root>: scenario file not found: {path}"])


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in (bundled_dir() / "scenarios").glob("*.json"))


# -- overrides --------------------------------------------------------------

_SEGMENT = re.compile(r"^[A-Za-z0-9_\-+]+$")


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ScenarioError([f"override {text!r}: expected key=value"])
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_overrides(doc: dict[str, Any], overrides: Sequence[str]) -> dict[str, Any]:
    """Set leaf scalars by dotted path, in place.

    The first segment may be a top-level key (``horizon``), an agent type
    (``pwd.capacity`` applies to every patient), an agent id
    (``p1.sight``) or ``agents.<index>``.
    """
    for text in overrides:
        key, value = parse_override(text)
        parts = key.split(".")
        if not all(_SEGMENT.match(p) for p in parts):
            raise ScenarioError([f"override {key!r}: invalid key"])
        if isinstance(value, (dict, list)):
            raise ScenarioError([f"override {key!r}: only scalar values can be overridden"])
        agents = doc.get("agents", [])
        head, rest = parts[0], parts[1:]
        if head in AGENT_SCHEMAS and rest:
            targets = [a for a in agents if a.get("type") == head]
        elif rest and any(a.get("id") == head for a in agents):
            targets = [a for a in agents if a.get("id") == head]
        else:
            targets, rest = [doc], parts
        if not targets:
            raise ScenarioError([f"override {key!r}: no {head} agents in the scenario"])
        for t in targets:
            _set_leaf(t, rest, value, key)
    return doc


def _set_leaf(obj: Any, parts: list[str], value: Any, key: str) -> None:
    for p in parts[:-1]:
        obj = _child(obj, p, key)
    last = parts[-1]
    if isinstance(obj, list):
        idx = _index(obj, last, key)
        if isinstance(obj[idx], (dict, list)):
            raise ScenarioError([f"override {key!r}: not a leaf scalar"])
        obj[idx] = value
        return
    if not isinstance(obj, dict):
        raise ScenarioError([f"override {key!r}: invalid key"])
    if isinstance(obj.get(last), (dict, list)):
        raise ScenarioError([f"override {key!r}: not a leaf scalar"])
    if last not in obj and not _known_leaf(obj, last):
        raise ScenarioError([f"override {key!r}: invalid key {last!r}"])
    obj[last] = value


def _known_leaf(obj: dict, name: str) -> bool:
    schema = AGENT_SCHEMAS.get(obj.get("type")) if "type" in obj else SCENARIO_SCHEMA
    if schema is None:
        return False
    sub = schema["properties"].get(name)
    return sub is not None and sub.get("type") not in ("array", "object")


def _child(obj: Any, part: str, key: str) -> Any:
    if isinstance(obj, list):
        return obj[_index(obj, part, key)]
    if isinstance(obj, dict) and part in obj:
        return obj[part]
    raise ScenarioError([f"override {key!r}: invalid key {part!r}"])


def _index(obj: list, part: str, key: str) -> int:
    try:
        idx = int(part)
        obj[idx]
    except (ValueError, IndexError):
        raise ScenarioError([f"override {key!r}: invalid index {part!r}"]) from None
    return idx
