"""Memory and motivation of the patient agent.

The cognitive map is a bounded working memory of perceived cells with a
least-recently-perceived eviction policy and per-step random forgetting.
Needs are scalar levels that grow linearly and are reset by dwelling at
the matching location.  Goal arbitration picks between appointments,
needs and returning home.
"""

from __future__ import annotations

import enum
import math
import random
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .world import CellFeature, CellKind, GridMap


class CognitiveMap:
    """Working memory ``cell -> last perceived tick`` plus its limits.

    Only accessible cells are stored; walls are perceived but add nothing a
    walker needs to remember.  Iteration order of ``memory`` is eviction
    order: oldest tick first, lowest cell index first within a tick.
    """

    def __init__(self, n_accessible: int, capacity: float = 1.0, forget_prob: float = 0.0):
        if not 0.0 <= capacity <= 1.0:
            raise ValueError("capacity must lie in [0, 1]")
        if not 0.0 <= forget_prob <= 1.0:
            raise ValueError("forget_prob must lie in [0, 1]")
        self.n_accessible = n_accessible
        self.capacity = capacity
        self.forget_prob = forget_prob
        self.memory: OrderedDict[int, int] = OrderedDict()

    @property
    def bound(self) -> int:
        # round before ceil so 0.1 * 1000 is not read as 100.00000000000001
        return math.ceil(round(self.capacity * self.n_accessible, 9))

    def __len__(self) -> int:
        return len(self.memory)

    def __contains__(self, cell: int) -> bool:
        return cell in self.memory

    def cells(self) -> set[int]:
        return set(self.memory)

    def entries(self, gmap: GridMap) -> set[tuple[int, CellFeature]]:
        return {(c, gmap.features[c]) for c in self.memory}

    def seed(self, cells: Sequence[int], tick: int = -1) -> None:
        """Preload familiar cells, keeping the first ``bound`` of them."""
        for c in sorted(cells[: self.bound]):
            self.memory[c] = tick

    def memorize(self, cells: Iterable[int], now: int) -> None:
        """Store ``cells`` as perceived at ``now`` and evict down to the bound.

        Entries stamped ``now`` survive this call even if that leaves the
        memory over its bound; :meth:`enforce_capacity` settles that case.
        """
        mem = self.memory
        for c in sorted(set(cells)):
            if c in mem:
                mem.move_to_end(c)
            mem[c] = now
        excess = len(mem) - self.bound
        while excess > 0:
            c, t = next(iter(mem.items()))
            if t >= now:
                break
            del mem[c]
            excess -= 1

    def enforce_capacity(self) -> list[int]:
        """Evict oldest entries until the bound holds; returns evicted cells."""
        evicted = []
        while len(self.memory) > self.bound:
            c, _ = self.memory.popitem(last=False)
            evicted.append(c)
        return evicted

    def forget_step(self, rng: random.Random) -> int:
        """Drop each entry independently with ``forget_prob``; returns the count."""
        p = self.forget_prob
        if p <= 0.0 or not self.memory:
            return 0
        if p >= 1.0:
            n = len(self.memory)
            self.memory.clear()
            return n
        doomed = [c for c in self.memory if rng.random() < p]
        for c in doomed:
            del self.memory[c]
        return len(doomed)

    def knows_any(self, cells: Iterable[int]) -> bool:
        mem = self.memory
        return any(c in mem for c in cells)


def memorize(cmap: CognitiveMap, perceived, now: int) -> CognitiveMap:
    """Functional wrapper accepting cells or ``(cell, feature)`` pairs."""
    cmap.memorize((p[0] if isinstance(p, tuple) else p for p in perceived), now)
    return cmap


def forget_step(cmap: CognitiveMap, rng: random.Random) -> CognitiveMap:
    cmap.forget_step(rng)
    return cmap


class GoalKind(str, enum.Enum):
    APPOINTMENT = "appointment"
    NEED = "need"
    HOME = "home"
    NONE = "none"


@dataclass(frozen=True)
class Goal:
    kind: GoalKind
    target: tuple[str, ...] = ()
    adopted_at: int = 0
    label: str = ""

    def same_as(self, other: "Goal | None") -> bool:
        return (other is not None and self.kind == other.kind
                and self.target == other.target and self.label == other.label)


NO_GOAL = Goal(GoalKind.NONE)


def knows_goal(cmap: CognitiveMap, goal: Goal, gmap: GridMap) -> bool:
    """True iff every goal feature has at least one bearing cell in memory."""
    if goal.kind is GoalKind.NONE or not goal.target:
        return False
    return all(cmap.knows_any(gmap.cells_with(name)) for name in goal.target)


@dataclass
class Need:
    name: str
    satisfy_feature: str
    growth_rate: float
    threshold: float = 1.0
    level: float = 0.0
    service_time: int = 1
    requested: bool = False

    def __post_init__(self) -> None:
        self.requested = self.level >= self.threshold


def update_needs(needs: Sequence[Need], position_feature: CellFeature | None,
                 dwell: int) -> list[Need]:
    """Grow every need one step and satisfy those served at the current cell."""
    here = (position_feature.name
            if position_feature is not None and position_feature.kind is CellKind.LOCATION
            else None)
    for need in needs:
        need.level += need.growth_rate
        if here is not None and here == need.satisfy_feature and dwell >= need.service_time:
            need.level = 0.0
        need.requested = need.level >= need.threshold
    return list(needs)


@dataclass
class Appointment:
    start: int
    location: str
    duration: int
    forgotten: bool | None = None  # None until drawn at the start tick
    completed: bool = False


@dataclass
class Schedule:
    appointments: list[Appointment] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.appointments.sort(key=lambda a: a.start)
        for a, b in zip(self.appointments, self.appointments[1:]):
            if a.start + a.duration > b.start:
                raise ValueError(
                    f"appointments at {a.start} ({a.location}) and {b.start} ({b.location}) overlap")

    def due(self, now: int) -> Appointment | None:
        """The appointment whose slot covers ``now`` and that is not completed.

        A slot runs from its start until the next appointment's start.
        """
        current = None
        for a in self.appointments:
            if a.start <= now:
                current = a
            else:
                break
        if current is None or current.completed:
            return None
        return current

    def draw_forgetting(self, now: int, p_forget: float, rng: random.Random) -> Appointment | None:
        """Draw the forget flag once, at the tick an appointment falls due."""
        a = self.due(now)
        if a is not None and a.forgotten is None:
            a.forgotten = p_forget > 0.0 and rng.random() < p_forget
            return a
        return None


def arbitrate_goal(schedule: Schedule, needs: Sequence[Need], now: int,
                   home: Sequence[str]) -> Goal:
    """Due appointment, else the most pressing requested need, else home."""
    a = schedule.due(now)
    if a is not None and not a.forgotten:
        return Goal(GoalKind.APPOINTMENT, (a.location,), now, label=f"{a.location}@{a.start}")
    best = None
    for need in needs:
        if need.requested and (best is None or need.level > best.level):
            best = need
    if best is not None:
        return Goal(GoalKind.NEED, (best.satisfy_feature,), now, label=best.name)
    return Goal(GoalKind.HOME, tuple(home), now, label="home")
