"""Grid environment, penalized navigation graph and all-pairs routing.

Distances are held internally as integer nanometres stored in float64
arrays.  Every edge weight is snapped to that grid once, so sums along
any path are exact and the Floyd-Warshall table agrees bit-for-bit with
any other shortest-path search over the same weights.
"""

from __future__ import annotations

import enum
import hashlib
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

CELL_SIDE = 0.5  # metres
NM_PER_M = 1_000_000_000
ORTHO_NM = round(CELL_SIDE * NM_PER_M)
DIAG_NM = round(CELL_SIDE * math.sqrt(2.0) * NM_PER_M)
DEFAULT_DISCOMFORT = 1.5
DEFAULT_VERTEX_LIMIT = 5000

# Moore neighbourhood, orthogonal first.
MOORE = ((1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, 1), (-1, -1), (1, -1))


class MapLoadError(ValueError):
    pass


class PathLimitError(RuntimeError):
    pass


class CellKind(str, enum.Enum):
    WALKABLE = "walkable"
    BOUNDARY = "boundary"
    LANDMARK = "landmark"
    LOCATION = "location"


@dataclass(frozen=True, order=True)
class CellFeature:
    kind: CellKind
    name: str | None = None

    def __post_init__(self) -> None:
        if (self.kind is CellKind.LOCATION) != (self.name is not None):
            raise ValueError("only Location features carry a name")

    @property
    def walkable(self) -> bool:
        return self.kind is not CellKind.BOUNDARY

    def __str__(self) -> str:
        if self.kind is CellKind.LOCATION:
            return f"location:{self.name}"
        return self.kind.value

    @classmethod
    def parse(cls, text: str) -> "CellFeature":
        """Parse ``walkable``, ``boundary``, ``landmark`` or ``location:<name>``."""
        text = text.strip()
        if text.startswith("location:"):
            name = text[len("location:"):]
            if not name:
                raise ValueError("empty location name")
            return cls(CellKind.LOCATION, name)
        try:
            kind = CellKind(text)
        except ValueError:
            raise ValueError(f"unknown cell feature {text!r}") from None
        if kind is CellKind.LOCATION:
            raise ValueError("location features need a name, e.g. 'location:toilet'")
        return cls(kind)


WALKABLE = CellFeature(CellKind.WALKABLE)
BOUNDARY = CellFeature(CellKind.BOUNDARY)
LANDMARK = CellFeature(CellKind.LANDMARK)


def Location(name: str) -> CellFeature:
    return CellFeature(CellKind.LOCATION, name)


def parse_color(color: str | Sequence[int]) -> tuple[int, int, int]:
    if isinstance(color, str):
        c = color.lstrip("#")
        if len(c) != 6:
            raise ValueError(f"bad hex colour {color!r}")
        return int(c[0:2], 16), int(c[2:4], 16), int(c[4:6], 16)
    r, g, b = (int(v) for v in color)
    return r, g, b


def color_hex(rgb: Sequence[int]) -> str:
    return "#{:02x}{:02x}{:02x}".format(*(int(v) for v in rgb))


@dataclass(frozen=True, eq=False)
class GridMap:
    """The environment: one feature per cell of a ``width`` x ``height`` grid.

    Cells are addressed by index ``y * width + x``; ``y`` grows downwards
    as in the source raster.
    """

    width: int
    height: int
    features: tuple[CellFeature, ...]
    cell_side: float = CELL_SIDE

    def __post_init__(self) -> None:
        if len(self.features) != self.width * self.height:
            raise ValueError("features must cover every cell exactly once")

    @property
    def size(self) -> int:
        return self.width * self.height

    @cached_property
    def accessible(self) -> frozenset[int]:
        return frozenset(i for i, f in enumerate(self.features) if f.walkable)

    @cached_property
    def blocked(self) -> np.ndarray:
        return np.array([not f.walkable for f in self.features], dtype=bool)

    @cached_property
    def digest(self) -> str:
        h = hashlib.sha256(f"{self.width}x{self.height}".encode())
        for f in self.features:
            h.update(str(f).encode())
            h.update(b"\0")
        return h.hexdigest()

    @cached_property
    def _by_location(self) -> dict[str, tuple[int, ...]]:
        out: dict[str, list[int]] = {}
        for i, f in enumerate(self.features):
            if f.kind is CellKind.LOCATION:
                out.setdefault(f.name, []).append(i)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def landmarks(self) -> frozenset[int]:
        return frozenset(i for i, f in enumerate(self.features) if f.kind is CellKind.LANDMARK)

    @property
    def location_names(self) -> frozenset[str]:
        return frozenset(self._by_location)

    def cells_with(self, name: str) -> tuple[int, ...]:
        """Cells whose feature is ``Location(name)``; empty if none."""
        return self._by_location.get(name, ())

    def index(self, x: int, y: int) -> int:
        return y * self.width + x

    def coords(self, cell: int) -> tuple[int, int]:
        return cell % self.width, cell // self.width

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def feature(self, cell: int) -> CellFeature:
        return self.features[cell]

    def is_accessible(self, cell: int) -> bool:
        return 0 <= cell < self.size and self.features[cell].walkable

    def moore(self, cell: int) -> Iterable[int]:
        x, y = self.coords(cell)
        for dx, dy in MOORE:
            nx, ny = x + dx, y + dy
            if self.in_bounds(nx, ny):
                yield self.index(nx, ny)


def load_map(image, palette: Mapping) -> GridMap:
    """Build a :class:`GridMap` from a colour-indexed raster.

    ``image`` is an ``(H, W, 3)`` uint8 array, a PIL image, or a path to a
    PNG.  ``palette`` maps hex strings or RGB triples to
    :class:`CellFeature` instances or their string forms.
    """
    arr = _as_rgb_array(image)
    h, w = arr.shape[:2]
    if h < 2 or w < 2:
        raise MapLoadError(f"map must be at least 2x2 cells, got {w}x{h}")
    lut: dict[tuple[int, int, int], CellFeature] = {}
    for color, feat in palette.items():
        lut[parse_color(color)] = feat if isinstance(feat, CellFeature) else CellFeature.parse(feat)

    features: list[CellFeature] = []
    for y in range(h):
        row = arr[y]
        for x in range(w):
            rgb = (int(row[x, 0]), int(row[x, 1]), int(row[x, 2]))
            try:
                features.append(lut[rgb])
            except KeyError:
                raise MapLoadError(
                    f"pixel ({x}, {y}) has colour {color_hex(rgb)} which is not in the palette"
                ) from None
    gmap = GridMap(w, h, tuple(features))
    if not gmap.accessible:
        raise MapLoadError("map has no accessible cells")
    return gmap


def _as_rgb_array(image) -> np.ndarray:
    if isinstance(image, (str, os.PathLike)):
        from PIL import Image

        with Image.open(image) as im:
            return np.asarray(im.convert("RGB"))
    if hasattr(image, "convert"):
        return np.asarray(image.convert("RGB"))
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] < 3:
        raise MapLoadError(f"expected an (H, W, 3) raster, got shape {arr.shape}")
    return arr[:, :, :3]


@dataclass(frozen=True, eq=False)
class NavGraph:
    """Moore-neighbour graph over accessible cells.

    ``adjacency[v]`` lists ``(u, weight_nm)`` pairs by vertex index; weights
    are symmetric even though each direction is stored separately.
    """

    gmap: GridMap
    discomfort: float
    cells: np.ndarray  # vertex -> cell
    vertex_of: np.ndarray  # cell -> vertex, -1 for boundary
    adjacency: tuple[tuple[tuple[int, int], ...], ...]

    @property
    def n_vertices(self) -> int:
        return len(self.cells)

    def neighbors(self, cell: int) -> list[int]:
        v = self.vertex_of[cell]
        if v < 0:
            return []
        return [int(self.cells[u]) for u, _ in self.adjacency[v]]

    def edge_weight(self, a: int, b: int) -> float:
        """Weight of edge ``a -> b`` in metres; ``inf`` if not adjacent."""
        va, vb = self.vertex_of[a], self.vertex_of[b]
        if va >= 0:
            for u, w in self.adjacency[va]:
                if u == vb:
                    return w / NM_PER_M
        return math.inf

    def edge_weight_nm(self, a: int, b: int) -> int | None:
        va, vb = self.vertex_of[a], self.vertex_of[b]
        if va >= 0:
            for u, w in self.adjacency[va]:
                if u == vb:
                    return w
        return None

    @cached_property
    def digest(self) -> str:
        return hashlib.sha256(f"{self.gmap.digest}:{self.discomfort!r}".encode()).hexdigest()


def build_nav_graph(gmap: GridMap, discomfort: float = DEFAULT_DISCOMFORT) -> NavGraph:
    if not discomfort >= 1.0:
        raise ValueError(f"discomfort factor must be >= 1, got {discomfort}")
    cells = np.array(sorted(gmap.accessible), dtype=np.int64)
    vertex_of = np.full(gmap.size, -1, dtype=np.int64)
    vertex_of[cells] = np.arange(len(cells))

    near_wall = np.zeros(gmap.size, dtype=bool)
    for c in cells:
        near_wall[c] = any(not gmap.features[n].walkable for n in gmap.moore(int(c)))

    acc = ~gmap.blocked
    adjacency = []
    for c in cells:
        c = int(c)
        x, y = gmap.coords(c)
        edges = []
        for dx, dy in MOORE:
            nx, ny = x + dx, y + dy
            if not gmap.in_bounds(nx, ny):
                continue
            n = gmap.index(nx, ny)
            if not acc[n]:
                continue
            diagonal = dx != 0 and dy != 0
            # no corner cutting
            if diagonal and not (acc[gmap.index(x + dx, y)] and acc[gmap.index(x, y + dy)]):
                continue
            base = DIAG_NM if diagonal else ORTHO_NM
            w = round(base * discomfort) if (near_wall[c] or near_wall[n]) else base
            edges.append((int(vertex_of[n]), int(w)))
        adjacency.append(tuple(edges))
    return NavGraph(gmap, float(discomfort), cells, vertex_of, tuple(adjacency))


@dataclass(frozen=True, eq=False)
class PathTable:
    """All-pairs distances (nm, ``inf`` when unreachable) and successors.

    ``succ[i, j]`` is the vertex after ``i`` on a shortest path to ``j``,
    or -1 when ``j`` is unreachable from ``i``.
    """

    cells: np.ndarray
    vertex_of: np.ndarray
    dist_nm: np.ndarray
    succ: np.ndarray
    key: str

    def distance(self, a: int, b: int) -> float:
        """Shortest-path distance between cells ``a`` and ``b`` in metres."""
        return float(self.dist_nm[self.vertex_of[a], self.vertex_of[b]]) / NM_PER_M

    def distance_nm(self, a: int, b: int) -> float:
        return float(self.dist_nm[self.vertex_of[a], self.vertex_of[b]])

    def row_nm(self, cell: int) -> np.ndarray:
        """Distances (nm) from ``cell`` to every vertex, indexed by vertex."""
        return self.dist_nm[self.vertex_of[cell]]

    def next_cell(self, a: int, b: int) -> int | None:
        """First step from ``a`` toward ``b``; ``a`` itself if they coincide."""
        s = self.succ[self.vertex_of[a], self.vertex_of[b]]
        return None if s < 0 else int(self.cells[s])

    def nearest(self, cell: int, targets: Sequence[int]) -> tuple[int | None, float]:
        """Closest of ``targets`` from ``cell`` (ties to the lowest cell index)."""
        if not len(targets):
            return None, math.inf
        tv = self.vertex_of[np.asarray(targets, dtype=np.int64)]
        d = self.dist_nm[self.vertex_of[cell], tv]
        best = float(d.min())
        if math.isinf(best):
            return None, math.inf
        cand = np.asarray(targets)[d == best]
        return int(cand.min()), best


def all_pairs_paths(graph: NavGraph, limit: int = DEFAULT_VERTEX_LIMIT) -> PathTable:
    """Floyd-Warshall over ``graph``, vectorised across each pivot."""
    n = graph.n_vertices
    if n > limit:
        raise PathLimitError(
            f"navigation graph has {n} vertices, above the limit of {limit}; "
            "raise the vertex limit (scenario 'path_limit') to compute it anyway"
        )
    dist = np.full((n, n), np.inf)
    succ = np.full((n, n), -1, dtype=np.int32)
    idx = np.arange(n)
    dist[idx, idx] = 0.0
    succ[idx, idx] = idx
    for v, edges in enumerate(graph.adjacency):
        for u, w in edges:
            dist[v, u] = w
            succ[v, u] = u

    for k in range(n):
        dk = dist[k]
        col = dist[:, k]
        rows = np.flatnonzero(np.isfinite(col))
        if len(rows) == 0:
            continue
        cand = col[rows, None] + dk[None, :]
        sub = dist[rows]
        better = cand < sub
        if not better.any():
            continue
        sub[better] = cand[better]
        dist[rows] = sub
        ssub = succ[rows]
        ssub[better] = np.broadcast_to(succ[rows, k][:, None], better.shape)[better]
        succ[rows] = ssub
    return PathTable(graph.cells, graph.vertex_of, dist, succ, graph.digest)


def shortest_path(table: PathTable, start: int, goal: int) -> list[int] | None:
    """Cells from ``start`` to ``goal`` inclusive, or ``None`` if unreachable."""
    a, b = table.vertex_of[start], table.vertex_of[goal]
    if a < 0 or b < 0:
        raise ValueError("both endpoints must be accessible cells")
    if table.succ[a, b] < 0:
        return None
    path = [int(table.cells[a])]
    while a != b:
        a = table.succ[a, b]
        path.append(int(table.cells[a]))
    return path


def path_cost(graph: NavGraph, path: Sequence[int]) -> float:
    """Summed edge weights of ``path`` in metres."""
    total = 0
    for a, b in zip(path, path[1:]):
        w = graph.edge_weight_nm(a, b)
        if w is None:
            raise ValueError(f"cells {a} and {b} are not adjacent in the graph")
        total += w
    return total / NM_PER_M


# -- on-disk cache -----------------------------------------------------------

CACHE_MAGIC = b"SIMDEMPT"
CACHE_VERSION = 1
CACHE_ENV = "SIMDEM_CACHE_DIR"


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "simdem"


def save_table(table: PathTable, path: Path) -> None:
    n = len(table.cells)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + f".{os.getpid()}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<I", CACHE_VERSION))
        fh.write(bytes.fromhex(table.key))
        fh.write(struct.pack("<QQ", n, len(table.vertex_of)))
        fh.write(np.ascontiguousarray(table.cells, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(table.vertex_of, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(table.dist_nm, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(table.succ, dtype="<i4").tobytes())
    os.replace(tmp, path)


def load_table(path: Path, key: str) -> PathTable | None:
    """Read a cached table; ``None`` if missing, stale or from another version."""
    try:
        data = path.read_bytes()
    except OSError:
        return None
    head = len(CACHE_MAGIC) + 4 + 32 + 16
    if len(data) < head or not data.startswith(CACHE_MAGIC):
        return None
    off = len(CACHE_MAGIC)
    (version,) = struct.unpack_from("<I", data, off)
    off += 4
    if version != CACHE_VERSION or data[off:off + 32].hex() != key:
        return None
    off += 32
    n, size = struct.unpack_from("<QQ", data, off)
    off += 16
    expected = head + 8 * n + 8 * size + 8 * n * n + 4 * n * n
    if len(data) != expected:
        return None

    def take(count, dtype, shape=None):
        nonlocal off
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=off)
        off += arr.nbytes
        return arr.reshape(shape) if shape else arr

    cells = take(n, "<i8").astype(np.int64)
    vertex_of = take(size, "<i8").astype(np.int64)
    dist = take(n * n, "<f8", (n, n)).astype(np.float64)
    succ = take(n * n, "<i4", (n, n)).astype(np.int32)
    return PathTable(cells, vertex_of, dist, succ, key)


def cached_all_pairs(graph: NavGraph, cache_dir: Path | None = None,
                     limit: int = DEFAULT_VERTEX_LIMIT) -> PathTable:
    """:func:`all_pairs_paths`, persisted per (map, discomfort) content hash."""
    cache_dir = default_cache_dir() if cache_dir is None else Path(cache_dir)
    path = cache_dir / f"paths-{graph.digest[:32]}.bin"
    table = load_table(path, graph.digest)
    if table is not None:
        return table
    log.info("computing all-pairs paths for %d vertices", graph.n_vertices)
    table = all_pairs_paths(graph, limit)
    try:
        save_table(table, path)
    except OSError as exc:  # read-only cache dir is not fatal
        log.warning("could not write path cache %s: %s", path, exc)
    return table


@dataclass(eq=False)
class World:
    """Map plus routing tables shared read-only by every replicate.

    ``paths`` routes over the penalized graph; ``metric`` is the plain
    Euclidean (discomfort 1) table used to measure travel efficiency.
    """

    gmap: GridMap
    graph: NavGraph
    paths: PathTable
    metric_graph: NavGraph
    metric: PathTable
    _goal_cells: dict = field(default_factory=dict, repr=False)

    def goal_cells(self, names: Sequence[str]) -> tuple[int, ...]:
        key = tuple(names)
        cells = self._goal_cells.get(key)
        if cells is None:
            cells = tuple(sorted({c for n in key for c in self.gmap.cells_with(n)}))
            self._goal_cells[key] = cells
        return cells


_WORLDS: dict[tuple[str, float], World] = {}


def build_world(gmap: GridMap, discomfort: float = DEFAULT_DISCOMFORT,
                cache_dir: Path | None = None, limit: int = DEFAULT_VERTEX_LIMIT,
                use_cache: bool = True) -> World:
    key = (gmap.digest, float(discomfort))
    if use_cache and key in _WORLDS:
        return _WORLDS[key]
    graph = build_nav_graph(gmap, discomfort)
    table = cached_all_pairs(graph, cache_dir, limit) if use_cache else all_pairs_paths(graph, limit)
    if discomfort == 1.0:
        metric_graph, metric = graph, table
    else:
        metric_graph = build_nav_graph(gmap, 1.0)
        metric = (cached_all_pairs(metric_graph, cache_dir, limit) if use_cache
                  else all_pairs_paths(metric_graph, limit))
    world = World(gmap, graph, table, metric_graph, metric)
    if use_cache:
        _WORLDS[key] = world
    return world
