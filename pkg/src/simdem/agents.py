"""Patient, nurse and smart-watch agents.

Each agent is a small state machine driven by the engine's step protocol.
The step functions read the shared simulation context ``sim`` (map,
routing tables, other agents) and return a movement intent as
``(next_cell, destination)`` or ``None`` to stay put; the engine resolves
occupancy and applies the move.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .cognition import (
    CognitiveMap, Goal, GoalKind, Need, Schedule, knows_goal,
)
from .perception import EAST

if TYPE_CHECKING:
    from .engine import Simulation

Intent = tuple[int, int]


class PwdState(str, enum.Enum):
    ORIENTED = "q_O"
    DISORIENTED = "q_D"
    GUIDED = "q_G"


class NurseState(str, enum.Enum):
    IDLE = "q_I"
    PURSUING = "q_P"
    GUIDING = "q_G"


class WatchState(str, enum.Enum):
    MONITORING = "monitoring"
    COOLDOWN = "cooldown"
    WAITING = "q_W"


@dataclass(eq=False)
class PwdAgent:
    id: str
    position: int
    home: tuple[str, ...]
    schedule: Schedule
    p_forget_appointment: float
    needs: list[Need]
    cmap: CognitiveMap
    sight: int = 5
    fov: float = 90.0
    p_landmarks: float = 0.1
    p_interventions: float = 0.8
    state: PwdState = PwdState.ORIENTED
    rng: random.Random = field(default_factory=random.Random, repr=False)
    # derived runtime state
    heading: tuple[int, int] = EAST
    goal: Goal | None = None
    goal_reached: bool = False
    reoriented: bool = False  # set by landmark/watch/nurse, consumed by the next act
    dwell: int = 0
    blocked: int = 0
    stuck: bool = False

    kind = "pwd"


@dataclass(eq=False)
class NurseAgent:
    id: str
    position: int
    home: tuple[str, ...]
    sight: int = 10
    state: NurseState = NurseState.IDLE
    patient: str | None = None
    inbox: list[str] = field(default_factory=list)
    heading: tuple[int, int] = EAST
    led_from: int | None = None  # cell vacated this tick while guiding
    blocked: int = 0

    kind = "nurse"


@dataclass(eq=False)
class WatchAgent:
    id: str
    patient: str
    cooldown: int = 60
    sensor_model: float = 0.1
    n_help: int = 3
    state: WatchState = WatchState.MONITORING
    counter: int = 0
    remaining: int = 0
    help_pending: bool = False
    rng: random.Random = field(default_factory=random.Random, repr=False)

    kind = "watch"


def goal_cells(sim: "Simulation", goal: Goal | None) -> tuple[int, ...]:
    if goal is None or goal.kind is GoalKind.NONE:
        return ()
    return sim.world.goal_cells(goal.target)


def set_pwd_state(sim: "Simulation", agent: PwdAgent, state: PwdState, now: int,
                  **why) -> None:
    if agent.state is not state:
        sim.emit(now, agent.id, "state_changed", frm=agent.state.value, to=state.value, **why)
        agent.state = state


def reorient(sim: "Simulation", agent: PwdAgent, now: int) -> None:
    """Insert the current goal's cells into working memory."""
    cells = goal_cells(sim, agent.goal)
    if cells:
        agent.cmap.memorize(cells, now)
        agent.reoriented = True


# -- patient -----------------------------------------------------------------

def pwd_percept(agent: PwdAgent, sim: "Simulation", now: int) -> bool:
    """Memorize the visible cells; maybe reorient on a landmark.

    Returns True when a landmark reorientation fired.
    """
    visible = sim.view(agent.position, agent.sight, agent.fov, agent.heading)
    blocked = sim.gmap.blocked
    agent.cmap.memorize((c for c in visible if not blocked[c]), now)
    if agent.state is not PwdState.DISORIENTED:
        return False
    landmarks = sim.gmap.landmarks
    if not any(c in landmarks for c in visible):
        return False
    fired = agent.rng.random() < agent.p_landmarks
    sim.emit(now, agent.id, "intervention", type="landmark", success=fired)
    if fired:
        reorient(sim, agent, now)
    return fired


def pwd_act(agent: PwdAgent, sim: "Simulation", now: int) -> Intent | None:
    """Choose orientation state and the next step toward the goal.

    Oriented agents follow the shortest path to the nearest goal cell;
    disoriented ones head for the graph-nearest cell missing from memory.
    """
    agent.reoriented = False
    table = sim.world.paths
    pos = agent.position
    goal = agent.goal
    if goal is None or goal.kind is GoalKind.NONE:
        return None
    if knows_goal(agent.cmap, goal, sim.gmap):
        target, _ = table.nearest(pos, goal_cells(sim, goal))
        if target is None:
            set_pwd_state(sim, agent, PwdState.DISORIENTED, now)
            if not agent.stuck:
                sim.emit(now, agent.id, "diagnostic", what="goal_unreachable", goal=goal.label)
                agent.stuck = True
            return None
        agent.stuck = False
        set_pwd_state(sim, agent, PwdState.ORIENTED, now)
        if target == pos:
            return None
        return table.next_cell(pos, target), target

    agent.stuck = False
    set_pwd_state(sim, agent, PwdState.DISORIENTED, now)
    target = nearest_unknown(agent, sim)
    if target is None:
        return None
    return table.next_cell(pos, target), target


def nearest_unknown(agent: PwdAgent, sim: "Simulation") -> int | None:
    """Graph-nearest reachable cell absent from working memory."""
    table = sim.world.paths
    row = table.row_nm(agent.position).copy()
    row[table.vertex_of[agent.position]] = np.inf
    if agent.cmap.memory:
        known = table.vertex_of[np.fromiter(agent.cmap.memory, dtype=np.int64,
                                            count=len(agent.cmap.memory))]
        row[known] = np.inf
    v = int(np.argmin(row))
    if not np.isfinite(row[v]):
        return None
    return int(table.cells[v])


# -- nurse -------------------------------------------------------------------

def graph_adjacent(sim: "Simulation", a: int, b: int) -> bool:
    return sim.world.graph.edge_weight_nm(a, b) is not None


def nurse_step(nurse: NurseAgent, sim: "Simulation", now: int) -> Intent | None:
    """Advance one nurse: pick up requests, pursue, guide, or walk home."""
    nurse.led_from = None
    if nurse.state is NurseState.GUIDING:
        intent = _guide(nurse, sim, now)
        if nurse.state is NurseState.GUIDING:
            return intent
    if nurse.state is NurseState.PURSUING:
        p = sim.pwds[nurse.patient]
        if p.state is PwdState.ORIENTED:
            _release(nurse, sim, now, "patient_reoriented")
        else:
            return _pursue(nurse, sim, now)

    # idle
    candidate = _pick_patient(nurse, sim)
    if candidate is not None:
        nurse.state = NurseState.PURSUING
        nurse.patient = candidate
        sim.assign(candidate, nurse.id)
        sim.emit(now, nurse.id, "state_changed", frm=NurseState.IDLE.value,
                 to=NurseState.PURSUING.value, patient=candidate)
        return _pursue(nurse, sim, now)
    home_cells = sim.world.goal_cells(nurse.home)
    if nurse.position in home_cells:
        return None
    target, _ = sim.world.paths.nearest(nurse.position, home_cells)
    if target is None:
        return None
    return sim.world.paths.next_cell(nurse.position, target), target


def _pick_patient(nurse: NurseAgent, sim: "Simulation") -> str | None:
    table = sim.world.paths
    if nurse.inbox:
        ids = sorted(set(nurse.inbox))
        nurse.inbox.clear()
        ids = [i for i in ids if sim.assignment.get(i) in (None, nurse.id)]
        if ids:
            return min(ids, key=lambda i: (table.distance_nm(nurse.position, sim.pwds[i].position), i))
    seen = sim.view(nurse.position, nurse.sight)
    best = None
    for pid in sorted(sim.pwds):
        p = sim.pwds[pid]
        if p.state is not PwdState.DISORIENTED or p.reoriented or pid in sim.assignment:
            continue
        if p.position in seen:
            key = (table.distance_nm(nurse.position, p.position), pid)
            if best is None or key < best[0]:
                best = (key, pid)
    return None if best is None else best[1]


def _pursue(nurse: NurseAgent, sim: "Simulation", now: int) -> Intent | None:
    p = sim.pwds[nurse.patient]
    if graph_adjacent(sim, nurse.position, p.position):
        _start_guiding(nurse, p, sim, now)
        return None
    nxt = sim.world.paths.next_cell(nurse.position, p.position)
    if nxt is None:
        _release(nurse, sim, now, "patient_unreachable")
        return None
    return nxt, p.position


def _start_guiding(nurse: NurseAgent, p: PwdAgent, sim: "Simulation", now: int) -> None:
    sim.emit(now, nurse.id, "state_changed", frm=nurse.state.value,
             to=NurseState.GUIDING.value, patient=p.id)
    nurse.state = NurseState.GUIDING
    set_pwd_state(sim, p, PwdState.GUIDED, now, by=nurse.id)


def after_nurse_move(nurse: NurseAgent, sim: "Simulation", now: int) -> None:
    """A pursuing nurse that just became adjacent takes the lead at once."""
    if nurse.state is NurseState.PURSUING:
        p = sim.pwds[nurse.patient]
        if graph_adjacent(sim, nurse.position, p.position):
            _start_guiding(nurse, p, sim, now)


def _release(nurse: NurseAgent, sim: "Simulation", now: int, reason: str) -> None:
    sim.emit(now, nurse.id, "state_changed", frm=nurse.state.value,
             to=NurseState.IDLE.value, patient=nurse.patient, reason=reason)
    sim.unassign(nurse.patient)
    nurse.state = NurseState.IDLE
    nurse.patient = None


def _guide(nurse: NurseAgent, sim: "Simulation", now: int) -> Intent | None:
    p = sim.pwds[nurse.patient]
    cells = goal_cells(sim, p.goal)
    if not cells:
        sim.emit(now, nurse.id, "diagnostic", what="guide_aborted", patient=p.id)
        set_pwd_state(sim, p, PwdState.DISORIENTED, now, by=nurse.id)
        _release(nurse, sim, now, "goal_lost")
        return None
    if p.position in cells:
        reorient(sim, p, now)
        set_pwd_state(sim, p, PwdState.ORIENTED, now, by=nurse.id)
        _release(nurse, sim, now, "delivered")
        return None

    table = sim.world.paths
    if not graph_adjacent(sim, nurse.position, p.position):
        # patient fell behind; close the gap first
        nxt = table.next_cell(nurse.position, p.position)
        return None if nxt is None or nxt == p.position else (nxt, p.position)
    if nurse.position in cells:
        # step deeper so the patient can take the vacated goal cell
        goal_set = set(cells)
        options = [n for n in sim.world.graph.neighbors(nurse.position)
                   if n != p.position and n not in sim.occupied]
        if not options:
            return None
        options.sort(key=lambda n: (n not in goal_set, n))
        return options[0], options[0]
    target, _ = table.nearest(nurse.position, cells)
    if target is None:
        sim.emit(now, nurse.id, "diagnostic", what="guide_aborted", patient=p.id)
        set_pwd_state(sim, p, PwdState.DISORIENTED, now, by=nurse.id)
        _release(nurse, sim, now, "goal_unreachable")
        return None
    return table.next_cell(nurse.position, target), target


# -- smart watch -------------------------------------------------------------

def watch_step(watch: WatchAgent, patient: PwdAgent, sim: "Simulation", now: int) -> str | None:
    """Monitor the patient; returns the intervention fired this tick, if any."""
    if patient.state is PwdState.ORIENTED and watch.counter:
        watch.counter = 0

    if watch.state is WatchState.WAITING:
        if patient.state is PwdState.ORIENTED and not sim.is_assigned(patient.id):
            _watch_state(watch, sim, now, WatchState.MONITORING)
            watch.counter = 0
            watch.help_pending = False
        elif watch.help_pending:
            watch.help_pending = not sim.request_help(patient.id, watch.id, now)
        return None

    if watch.state is WatchState.COOLDOWN:
        watch.remaining -= 1
        if watch.remaining <= 0:
            watch.remaining = 0
            _watch_state(watch, sim, now, WatchState.MONITORING)
        return None

    due = patient.schedule.due(now)
    if due is not None and due.forgotten:
        ok = watch.rng.random() < patient.p_interventions
        if ok:
            due.forgotten = False
        watch.counter += 1
        sim.emit(now, watch.id, "intervention", type="reminder", success=ok,
                 patient=patient.id, location=due.location)
        _enter_cooldown(watch, sim, now)
        return "reminder"

    if patient.state is PwdState.DISORIENTED and not patient.reoriented:
        if not watch.rng.random() < watch.sensor_model:
            return None
        watch.counter += 1
        if watch.counter > watch.n_help:
            sim.emit(now, watch.id, "intervention", type="help", success=True,
                     patient=patient.id, count=watch.counter)
            _watch_state(watch, sim, now, WatchState.WAITING)
            watch.help_pending = not sim.request_help(patient.id, watch.id, now)
            return "help"
        ok = watch.rng.random() < patient.p_interventions
        if ok:
            reorient(sim, patient, now)
        sim.emit(now, watch.id, "intervention", type="navigation", success=ok,
                 patient=patient.id, count=watch.counter)
        _enter_cooldown(watch, sim, now)
        return "navigation"
    return None


def _enter_cooldown(watch: WatchAgent, sim: "Simulation", now: int) -> None:
    if watch.cooldown > 0:
        watch.remaining = watch.cooldown
        _watch_state(watch, sim, now, WatchState.COOLDOWN)


def _watch_state(watch: WatchAgent, sim: "Simulation", now: int, state: WatchState) -> None:
    if watch.state is not state:
        sim.emit(now, watch.id, "state_changed", frm=watch.state.value, to=state.value)
        watch.state = state
