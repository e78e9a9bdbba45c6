"""Grid ray casting for agent vision.

A target cell is visible when the segment between the origin's centre and
the target's centre passes through no Boundary cell before reaching it.
Rays are traced with an integer Amanatides-Woo walk; when a ray passes
exactly through a cell corner both side cells count as crossed.  Because
the walk only depends on the offset between the two cells, traversals are
computed once per sight radius and translated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from .world import CellFeature, GridMap

EAST = (1, 0)
FOV_EPS = 1e-9


@dataclass(frozen=True)
class VisionParams:
    sight: int
    fov: float = 360.0
    heading: tuple[int, int] = EAST

    def __post_init__(self) -> None:
        if self.sight < 0:
            raise ValueError("sight must be >= 0")
        if not 0.0 < self.fov <= 360.0:
            raise ValueError("fov must lie in (0, 360]")
        if self.heading == (0, 0):
            raise ValueError("heading must be a non-zero direction")


def ray_cells(dx: int, dy: int) -> tuple[tuple[int, int], ...]:
    """Offsets crossed by the centre-to-centre ray from (0, 0) to (dx, dy).

    Excludes both endpoints.
    """
    sx = (dx > 0) - (dx < 0)
    sy = (dy > 0) - (dy < 0)
    ax, ay = abs(dx), abs(dy)
    cx = cy = 0
    i = j = 0  # boundary crossings taken along x and y
    out: list[tuple[int, int]] = []
    while i < ax or j < ay:
        # next x crossing at t=(2i+1)/(2ax), y crossing at t=(2j+1)/(2ay)
        if j >= ay:
            order = -1
        elif i >= ax:
            order = 1
        else:
            tx, ty = (2 * i + 1) * ay, (2 * j + 1) * ax
            order = (tx > ty) - (tx < ty)
        if order < 0:
            cx += sx
            i += 1
        elif order > 0:
            cy += sy
            j += 1
        else:
            out.append((cx + sx, cy))
            out.append((cx, cy + sy))
            cx += sx
            cy += sy
            i += 1
            j += 1
        out.append((cx, cy))
    if out:
        out.pop()  # the target itself
    return tuple(out)


@lru_cache(maxsize=None)
def _disc(sight: int) -> tuple[tuple[int, int, tuple[tuple[int, int], ...]], ...]:
    r2 = sight * sight
    rays = []
    for dy in range(-sight, sight + 1):
        for dx in range(-sight, sight + 1):
            if (dx or dy) and dx * dx + dy * dy <= r2:
                rays.append((dx, dy, ray_cells(dx, dy)))
    rays.sort(key=lambda r: (r[0] * r[0] + r[1] * r[1], r[1], r[0]))
    return tuple(rays)


def in_fov(dx: int, dy: int, heading: tuple[int, int], fov: float) -> bool:
    if fov >= 360.0 or (dx == 0 and dy == 0):
        return True
    hx, hy = heading
    angle = math.degrees(math.atan2(abs(hx * dy - hy * dx), hx * dx + hy * dy))
    return angle <= fov / 2.0 + FOV_EPS


def visible_indices(gmap: GridMap, origin: int, params: VisionParams) -> tuple[int, ...]:
    """Sorted indices of cells visible from ``origin``."""
    ox, oy = gmap.coords(origin)
    w, h = gmap.width, gmap.height
    blocked = gmap.blocked
    out = [origin]
    for dx, dy, between in _disc(params.sight):
        x, y = ox + dx, oy + dy
        if not (0 <= x < w and 0 <= y < h):
            continue
        if not in_fov(dx, dy, params.heading, params.fov):
            continue
        clear = True
        for bx, by in between:
            px, py = ox + bx, oy + by
            if 0 <= px < w and 0 <= py < h and blocked[py * w + px]:
                clear = False
                break
        if clear:
            out.append(y * w + x)
    out.sort()
    return tuple(out)


def visible_cells(gmap: GridMap, origin: int,
                  params: VisionParams) -> set[tuple[int, CellFeature]]:
    """Visible ``(cell, feature)`` pairs; the origin is always included."""
    return {(c, gmap.features[c]) for c in visible_indices(gmap, origin, params)}


def sees_agent(observer_cells, target_position: int) -> bool:
    """True iff ``target_position`` lies in the observer's visible set.

    Accepts either plain cell indices or ``(cell, feature)`` pairs.
    """
    for item in observer_cells:
        cell = item[0] if isinstance(item, tuple) else item
        if cell == target_position:
            return True
    return False


class Viewshed:
    """Memoised visibility for one static map.

    Visibility only depends on (origin, sight, fov, heading), so agents
    that stand still or revisit cells hit the cache.
    """

    def __init__(self, gmap: GridMap):
        self.gmap = gmap
        self._cache: dict[tuple[int, int, float, tuple[int, int]], tuple[int, ...]] = {}

    def __call__(self, origin: int, sight: int, fov: float = 360.0,
                 heading: tuple[int, int] = EAST) -> tuple[int, ...]:
        if fov >= 360.0:
            heading = EAST
        key = (origin, sight, fov, heading)
        cells = self._cache.get(key)
        if cells is None:
            cells = visible_indices(self.gmap, origin, VisionParams(sight, fov, heading))
            self._cache[key] = cells
        return cells
