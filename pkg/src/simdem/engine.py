"""Deterministic discrete-time simulation loop.

Each tick runs fixed phases:

1. patient percept (agent-id order)
2. watch steps
3. nurse steps and nurse movement
4. patient goal arbitration, act and movement
5. dwell, appointment, need and forgetting updates
6. working-memory capacity enforcement

A cell holds at most one agent.  An agent whose next cell is taken waits;
after ``SIDESTEP_AFTER`` consecutive waits it steps to the free neighbour
closest to its destination so that head-on encounters cannot lock up.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from .agents import (
    NurseAgent, NurseState, PwdAgent, PwdState, WatchAgent, after_nurse_move,
    goal_cells, nurse_step, pwd_act, pwd_percept, watch_step,
)
from .cognition import CognitiveMap, arbitrate_goal, update_needs
from .perception import Viewshed
from .world import World

EVENT_SCHEMA = "simdem.events"
EVENT_VERSION = 1
SIDESTEP_AFTER = 3


def agent_rng(seed: int, agent_id: str) -> random.Random:
    """Independent stream per agent, stable across processes and agent sets."""
    digest = hashlib.blake2b(f"{seed}:{agent_id}".encode(), digest_size=8).digest()
    return random.Random(int.from_bytes(digest, "little"))


@dataclass
class RunResult:
    scenario_name: str
    seed: int
    horizon: int
    agents: dict[str, str]  # id -> kind
    events: list[dict[str, Any]]
    trajectories: dict[str, list[tuple[int, int, int, str]]]
    world: World = field(repr=False)

    def header(self) -> dict[str, Any]:
        return {
            "kind": "header", "schema": EVENT_SCHEMA, "version": EVENT_VERSION,
            "scenario": self.scenario_name, "seed": self.seed, "horizon": self.horizon,
            "agents": dict(sorted(self.agents.items())),
            "map": {"width": self.world.gmap.width, "height": self.world.gmap.height,
                    "digest": self.world.gmap.digest},
        }

    def event_lines(self) -> Iterable[str]:
        yield dump_event(self.header())
        for ev in self.events:
            yield dump_event(ev)

    def events_digest(self) -> str:
        h = hashlib.sha256()
        for line in self.event_lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()


def dump_event(ev: dict[str, Any]) -> str:
    return json.dumps(ev, sort_keys=True, separators=(",", ":"))


class Simulation:
    """One replicate: agents, occupancy, event log."""

    def __init__(self, world: World, pwds: Iterable[PwdAgent] = (),
                 nurses: Iterable[NurseAgent] = (), watches: Iterable[WatchAgent] = (),
                 horizon: int = 1, seed: int = 0, name: str = "scenario",
                 record_positions: bool = True):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.world = world
        self.gmap = world.gmap
        self.view = Viewshed(world.gmap)
        self.pwds: dict[str, PwdAgent] = {a.id: a for a in sorted(pwds, key=lambda a: a.id)}
        self.nurses: dict[str, NurseAgent] = {a.id: a for a in sorted(nurses, key=lambda a: a.id)}
        self.watches: dict[str, WatchAgent] = {a.id: a for a in sorted(watches, key=lambda a: a.id)}
        ids = list(self.pwds) + list(self.nurses) + list(self.watches)
        if len(set(ids)) != len(ids):
            raise ValueError("agent ids must be unique")
        for w in self.watches.values():
            if w.patient not in self.pwds:
                raise ValueError(f"watch {w.id} refers to unknown patient {w.patient!r}")
        self.horizon = horizon
        self.seed = seed
        self.name = name
        self.tick = 0
        self.events: list[dict[str, Any]] = []
        self.assignment: dict[str, str] = {}  # patient -> nurse
        self.occupied: dict[int, str] = {}
        self.trajectories: dict[str, list[tuple[int, int, int, str]]] = {
            i: [] for i in list(self.pwds) + list(self.nurses)}
        self.record_positions = record_positions
        for a in list(self.pwds.values()) + list(self.nurses.values()):
            if not self.gmap.is_accessible(a.position):
                raise ValueError(f"agent {a.id} starts on an inaccessible cell")
            if a.position in self.occupied:
                raise ValueError(f"agents {self.occupied[a.position]} and {a.id} share a start cell")
            self.occupied[a.position] = a.id

    # -- services used by agents --------------------------------------------

    def emit(self, tick: int, agent: str, kind: str, **payload: Any) -> None:
        ev = {"tick": tick, "agent": agent, "kind": kind}
        for k, v in payload.items():
            ev["from" if k == "frm" else k] = v
        self.events.append(ev)

    def assign(self, patient: str, nurse: str) -> None:
        self.assignment[patient] = nurse

    def unassign(self, patient: str | None) -> None:
        if patient is not None:
            self.assignment.pop(patient, None)

    def is_assigned(self, patient: str) -> bool:
        return patient in self.assignment

    def request_help(self, patient: str, watch: str, now: int) -> bool:
        """Hand ``patient`` to the nearest idle nurse; False if none is free."""
        if patient in self.assignment:
            return True
        pos = self.pwds[patient].position
        table = self.world.paths
        idle = [n for n in self.nurses.values()
                if n.state is NurseState.IDLE and n.id not in self.assignment.values()]
        reachable = [(table.distance_nm(n.position, pos), n.id) for n in idle]
        reachable = [r for r in reachable if r[0] != float("inf")]
        if not reachable:
            return False
        _, nid = min(reachable)
        self.nurses[nid].inbox.append(patient)
        self.assignment[patient] = nid
        self.emit(now, watch, "notification", nurse=nid, patient=patient)
        return True

    def nurse_of(self, patient: str) -> NurseAgent | None:
        nid = self.assignment.get(patient)
        return None if nid is None else self.nurses[nid]

    # -- movement -------------------------------------------------------------

    def _place(self, agent, cell: int, now: int) -> None:
        src = agent.position
        del self.occupied[src]
        self.occupied[cell] = agent.id
        agent.position = cell
        sx, sy = self.gmap.coords(src)
        tx, ty = self.gmap.coords(cell)
        agent.heading = (tx - sx, ty - sy)
        self.emit(now, agent.id, "moved", cell=cell, x=tx, y=ty, src=src)

    def move(self, agent, intent, now: int, sidestep: bool = True) -> bool:
        """Apply a ``(next_cell, destination)`` intent; returns True if moved."""
        if intent is None:
            agent.blocked = 0
            return False
        nxt, dest = intent
        if nxt is None or nxt == agent.position:
            agent.blocked = 0
            return False
        if nxt not in self.occupied:
            self._place(agent, nxt, now)
            agent.blocked = 0
            return True
        agent.blocked += 1
        if sidestep and agent.blocked >= SIDESTEP_AFTER:
            alt = self._sidestep(agent.position, nxt, dest)
            if alt is not None:
                self._place(agent, alt, now)
                agent.blocked = 0
                return True
        return False

    def _sidestep(self, pos: int, blocked: int, dest: int) -> int | None:
        table = self.world.paths
        best = None
        for n in self.world.graph.neighbors(pos):
            if n == blocked or n in self.occupied:
                continue
            key = (table.distance_nm(n, dest), n)
            if best is None or key < best[0]:
                best = (key, n)
        return None if best is None else best[1]

    def swap(self, nurse: NurseAgent, patient: PwdAgent, now: int) -> None:
        a, b = nurse.position, patient.position
        del self.occupied[a]
        del self.occupied[b]
        self.occupied[a] = patient.id
        nurse.position, patient.position = b, a
        self.occupied[b] = nurse.id
        for agent, src, dst in ((nurse, a, b), (patient, b, a)):
            sx, sy = self.gmap.coords(src)
            tx, ty = self.gmap.coords(dst)
            agent.heading = (tx - sx, ty - sy)
            self.emit(now, agent.id, "moved", cell=dst, x=tx, y=ty, src=src)

    # -- the step protocol ----------------------------------------------------

    def step(self) -> None:
        now = self.tick
        if now >= self.horizon:
            raise RuntimeError("simulation already reached its horizon")
        start_pos = {pid: p.position for pid, p in self.pwds.items()}

        for p in self.pwds.values():
            pwd_percept(p, self, now)

        for w in self.watches.values():
            watch_step(w, self.pwds[w.patient], self, now)

        swapped: set[str] = set()
        for n in self.nurses.values():
            intent = nurse_step(n, self, now)
            if n.state is NurseState.GUIDING and intent is not None:
                patient = self.pwds[n.patient]
                if intent[0] == patient.position:
                    self.swap(n, patient, now)
                    swapped.add(patient.id)
                    n.blocked = 0
                    continue
                src = n.position
                if self.move(n, intent, now):
                    n.led_from = src
            else:
                self.move(n, intent, now)
                after_nurse_move(n, self, now)

        for p in self.pwds.values():
            self._pwd_phase(p, now, moved_already=p.id in swapped)

        for p in self.pwds.values():
            p.dwell = p.dwell + 1 if p.position == start_pos[p.id] else 0
            here = self.gmap.features[p.position]
            due = p.schedule.due(now)
            if (due is not None and not due.completed and here.name == due.location
                    and p.dwell >= due.duration):
                due.completed = True
            update_needs(p.needs, here, p.dwell)
            p.cmap.forget_step(p.rng)

        for p in self.pwds.values():
            p.cmap.enforce_capacity()

        if self.record_positions:
            for a in list(self.pwds.values()) + list(self.nurses.values()):
                x, y = self.gmap.coords(a.position)
                self.trajectories[a.id].append((now, x, y, a.state.value))
        self.tick += 1

    def _pwd_phase(self, p: PwdAgent, now: int, moved_already: bool) -> None:
        forgot = p.schedule.draw_forgetting(now, p.p_forget_appointment, p.rng)
        if forgot is not None and forgot.forgotten:
            self.emit(now, p.id, "diagnostic", what="appointment_forgotten",
                      location=forgot.location, start=forgot.start)
        goal = arbitrate_goal(p.schedule, p.needs, now, p.home)
        if not goal.same_as(p.goal):
            p.goal = goal
            p.goal_reached = False
            self.emit(now, p.id, "goal_adopted", goal=goal.kind.value,
                      target=list(goal.target), label=goal.label, cell=p.position)

        if p.state is PwdState.GUIDED:
            nurse = self.nurse_of(p.id)
            if (not moved_already and nurse is not None and nurse.led_from is not None
                    and self.world.graph.edge_weight_nm(p.position, nurse.led_from) is not None):
                self.move(p, (nurse.led_from, nurse.led_from), now, sidestep=False)
        elif not moved_already:
            self.move(p, pwd_act(p, self, now), now)

        if not p.goal_reached and p.position in goal_cells(self, p.goal):
            p.goal_reached = True
            self.emit(now, p.id, "goal_reached", goal=p.goal.kind.value,
                      label=p.goal.label, cell=p.position)

    def run(self) -> RunResult:
        while self.tick < self.horizon:
            self.step()
        kinds = {i: a.kind for d in (self.pwds, self.nurses, self.watches) for i, a in d.items()}
        return RunResult(self.name, self.seed, self.horizon, kinds, self.events,
                         self.trajectories, self.world)


def initial_memory(world: World, start: int, home: tuple[str, ...], cmap: CognitiveMap) -> None:
    """Seed memory with the cells closest to home, up to capacity.

    Familiarity falls off with graph distance from the agent's start
    cell; ties go to the lower cell index.
    """
    table = world.paths
    row = table.row_nm(start)
    order = np.lexsort((table.cells, row))
    cells = [int(table.cells[v]) for v in order if np.isfinite(row[v])]
    home_cells = world.goal_cells(home)
    first = [c for c in home_cells] + [c for c in cells if c not in set(home_cells)]
    cmap.seed(first)
