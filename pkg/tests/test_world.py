import math
import random

import numpy as np
import pytest

from conftest import ascii_map, cell
from oracles import dijkstra, oracle_edges
from simdem.scenario import load_scenario
from simdem.world import (
    BOUNDARY, CACHE_MAGIC, DIAG_NM, LANDMARK, NM_PER_M, WALKABLE, CellFeature, Location,
    MapLoadError, PathLimitError, all_pairs_paths, build_nav_graph, build_world,
    cached_all_pairs, load_map, load_table, path_cost, shortest_path,
)

GREEN, BLACK, BLUE = (0, 192, 0), (0, 0, 0), (0, 0, 255)
PALETTE = {"#00c000": "walkable", "#000000": "boundary", "#0000ff": "location:toilet"}


def raster(rows):
    lut = {".": GREEN, "#": BLACK, "T": BLUE}
    return np.array([[lut[c] for c in r] for r in rows], dtype=np.uint8)


def random_map(rng, w, h, density):
    rows = ["".join("#" if rng.random() < density else "." for _ in range(w)) for _ in range(h)]
    if all(c == "#" for r in rows for c in r):
        rows[0] = "." + rows[0][1:]
    return ascii_map(rows)


def assert_matches_oracle(graph, table, lam):
    edges = oracle_edges(graph.gmap, lam)
    assert set(edges) == set(int(c) for c in graph.cells)
    for src in edges:
        ref = dijkstra(edges, src)
        row = table.row_nm(src)
        for v, c in enumerate(graph.cells):
            expect = ref.get(int(c), math.inf)
            assert row[v] == expect, (src, int(c))


# -- load_map ---------------------------------------------------------------

def test_uniform_map_all_walkable():
    g = load_map(raster(["..."] * 3), PALETTE)
    assert (g.width, g.height) == (3, 3)
    assert len(g.accessible) == 9
    assert all(f == WALKABLE for f in g.features)


def test_palette_green_black_blue():
    g = load_map(raster([".#", "T."]), PALETTE)
    assert g.features == (WALKABLE, BOUNDARY, Location("toilet"), WALKABLE)
    assert g.cells_with("toilet") == (2,)


def test_centre_obstacle_not_a_vertex():
    g = load_map(raster(["...", ".#.", "..."]), PALETTE)
    assert len(g.accessible) == 8
    graph = build_nav_graph(g)
    assert 4 not in set(int(c) for c in graph.cells)
    assert graph.vertex_of[4] == -1


def test_unknown_colour_names_pixel():
    arr = raster(["..", ".."])
    arr[1, 0] = (1, 2, 3)
    with pytest.raises(MapLoadError, match=r"\(0, 1\).*#010203"):
        load_map(arr, PALETTE)


def test_too_small_and_empty_maps_rejected():
    with pytest.raises(MapLoadError):
        load_map(raster(["...."]), PALETTE)
    with pytest.raises(MapLoadError, match="accessible"):
        load_map(raster(["##", "##"]), PALETTE)


def test_feature_parsing():
    assert CellFeature.parse("location:home:p1") == Location("home:p1")
    assert CellFeature.parse("landmark") == LANDMARK
    assert LANDMARK.walkable and Location("x").walkable and not BOUNDARY.walkable
    with pytest.raises(ValueError):
        CellFeature.parse("pool")


# -- build_nav_graph ---------------------------------------------------------

def test_two_by_two_open_grid():
    graph = build_nav_graph(ascii_map(["..", ".."]), 1.5)
    for c in range(4):
        assert len(graph.neighbors(c)) == 3
    assert graph.edge_weight(0, 3) == pytest.approx(0.5 * math.sqrt(2), abs=1e-9)
    assert graph.edge_weight(0, 1) == 0.5


def test_lambda_one_is_euclidean():
    g = ascii_map(["#####", "#...#", "#...#", "#####"])
    graph = build_nav_graph(g, 1.0)
    for c in g.accessible:
        for n in graph.neighbors(c):
            (ax, ay), (bx, by) = g.coords(c), g.coords(n)
            assert graph.edge_weight(c, n) == pytest.approx(0.5 * math.hypot(ax - bx, ay - by), abs=1e-9)


def test_at_most_eight_neighbours_and_no_corner_cutting():
    g = ascii_map(["...", ".#.", "..."])
    graph = build_nav_graph(g, 1.0)
    assert all(len(graph.neighbors(c)) <= 8 for c in g.accessible)
    # (0,1) -> (1,0) would clip the wall at (1,1)
    assert graph.edge_weight_nm(cell(g, 0, 1), cell(g, 1, 0)) is None
    assert graph.edge_weight_nm(cell(g, 0, 0), cell(g, 1, 0)) is not None


def test_corridor_centre_lane_cheaper_than_wall_lane():
    # 3-wide, 7-long corridor inside walls
    g = ascii_map(["#########", "#.......#", "#.......#", "#.......#", "#########"])
    graph = build_nav_graph(g, 1.5)
    centre = [cell(g, x, 2) for x in range(1, 8)]
    wall = [cell(g, x, 1) for x in range(1, 8)]
    # centre: the two end edges touch the end walls, the four middle ones are free
    assert path_cost(graph, centre) == pytest.approx(2 * 0.75 + 4 * 0.5, abs=1e-9)
    assert path_cost(graph, wall) == pytest.approx(6 * 0.75, abs=1e-9)
    table = all_pairs_paths(graph)
    assert table.distance(centre[0], centre[-1]) == pytest.approx(3.5, abs=1e-9)
    assert shortest_path(table, centre[0], centre[-1]) == centre


def test_discomfort_below_one_rejected():
    with pytest.raises(ValueError):
        build_nav_graph(ascii_map(["..", ".."]), 0.9)


# -- all_pairs_paths ---------------------------------------------------------

def test_single_vertex():
    table = all_pairs_paths(build_nav_graph(ascii_map([".#", "##"])))
    assert table.distance(0, 0) == 0.0
    assert shortest_path(table, 0, 0) == [0]


@pytest.mark.parametrize("lam", [1.0, 1.5])
def test_open_grid_matches_single_source_oracle(lam):
    g = ascii_map(["#" * 12] + ["#" + "." * 10 + "#"] * 10 + ["#" * 12])
    graph = build_nav_graph(g, lam)
    assert_matches_oracle(graph, all_pairs_paths(graph), lam)


@pytest.mark.parametrize("seed", range(6))
def test_random_maps_match_oracle(seed):
    rng = random.Random(seed)
    g = random_map(rng, rng.randint(2, 14), rng.randint(2, 14), 0.3)
    lam = rng.choice([1.0, 1.5, 2.25])
    graph = build_nav_graph(g, lam)
    assert_matches_oracle(graph, all_pairs_paths(graph), lam)


def test_disconnected_rooms_infinite():
    g = ascii_map(["..#..", "..#..", "..#.."])
    table = all_pairs_paths(build_nav_graph(g))
    assert table.distance(0, 4) == math.inf
    assert shortest_path(table, 0, 4) is None
    assert table.next_cell(0, 4) is None


def test_straight_corridor_end_to_end():
    g = ascii_map(["#######", "#.....#", "#######"])
    table = all_pairs_paths(build_nav_graph(g, 1.0))
    path = shortest_path(table, cell(g, 1, 1), cell(g, 5, 1))
    assert len(path) == 5
    assert table.distance(path[0], path[-1]) == 2.0


def test_l_shaped_corridor_matches_oracle():
    g = ascii_map(["#####", "#.###", "#.###", "#...#", "#####"])
    graph = build_nav_graph(g, 1.5)
    table = all_pairs_paths(graph)
    a, b = cell(g, 1, 1), cell(g, 3, 3)
    ref = dijkstra(oracle_edges(g, 1.5), a)
    path = shortest_path(table, a, b)
    assert table.distance_nm(a, b) == ref[b]
    assert path_cost(graph, path) == pytest.approx(ref[b] / NM_PER_M, abs=1e-9)


def test_symmetry_paths_and_triangle_inequality():
    g = random_map(random.Random(7), 12, 12, 0.25)
    graph = build_nav_graph(g, 1.5)
    table = all_pairs_paths(graph)
    d = table.dist_nm
    assert np.array_equal(d, d.T)
    assert np.all(np.diag(d) == 0)
    n = len(d)
    for k in range(0, n, 5):
        assert np.all(d <= d[:, [k]] + d[[k], :] + 1e-6)
    for i in range(n):
        for j in range(n):
            a, b = int(table.cells[i]), int(table.cells[j])
            p = shortest_path(table, a, b)
            if np.isfinite(d[i, j]):
                assert p[0] == a and p[-1] == b
                assert abs(path_cost(graph, p) - d[i, j] / NM_PER_M) <= 1e-9
            else:
                assert p is None


def test_larger_discomfort_never_shortens():
    g = random_map(random.Random(3), 10, 10, 0.2)
    prev = None
    for lam in (1.0, 1.2, 1.5, 3.0):
        d = all_pairs_paths(build_nav_graph(g, lam)).dist_nm
        if prev is not None:
            assert np.all(d >= prev)
        prev = d


def test_vertex_limit_refuses_with_guidance():
    graph = build_nav_graph(ascii_map(["...."] * 4))
    with pytest.raises(PathLimitError, match="limit"):
        all_pairs_paths(graph, limit=10)


def test_diagonal_constant():
    assert DIAG_NM == 707106781


# -- cache -------------------------------------------------------------------

def test_cache_roundtrip_and_invalidation(tmp_path):
    g = ascii_map(["#####", "#...#", "#.#.#", "#...#", "#####"])
    graph = build_nav_graph(g, 1.5)
    t1 = cached_all_pairs(graph, tmp_path)
    files = list(tmp_path.glob("paths-*.bin"))
    assert len(files) == 1
    assert files[0].read_bytes().startswith(CACHE_MAGIC)
    t2 = load_table(files[0], graph.digest)
    assert np.array_equal(t1.dist_nm, t2.dist_nm) and np.array_equal(t1.succ, t2.succ)
    # key mismatch and corruption both force a recompute
    assert load_table(files[0], build_nav_graph(g, 2.0).digest) is None
    files[0].write_bytes(b"garbage")
    assert load_table(files[0], graph.digest) is None
    t3 = cached_all_pairs(graph, tmp_path)
    assert np.array_equal(t1.dist_nm, t3.dist_nm)


def test_cache_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("SIMDEM_CACHE_DIR", str(tmp_path))
    g = ascii_map(["...", "..."])
    build_world(g, 1.5, use_cache=True)
    assert list(tmp_path.glob("paths-*.bin"))


def test_world_metric_table_is_unpenalized():
    g = ascii_map(["#####", "#...#", "#####"])
    w = build_world(g, 1.5, use_cache=False)
    a, b = cell(g, 1, 1), cell(g, 3, 1)
    assert w.metric.distance(a, b) == 1.0
    assert w.paths.distance(a, b) == 1.5


# -- bundled maps --------------------------------------------------------------

@pytest.mark.parametrize("name", ["corridor", "default"])
def test_bundled_maps_match_oracle(name):
    sc = load_scenario(name)
    world = sc.world()
    assert_matches_oracle(world.graph, world.paths, sc.discomfort)
