import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ascii_map
from simdem.metrics import (
    EpisodeRecord, LogParseError, TripRecord, aggregate, aggregate_csv, episodes_from_events,
    episodes_from_states, extract_trips, read_log, rows_csv, state_counts, states_from_events,
    summarize, sweep, travel_efficiency,
)
from simdem.scenario import load_scenario
from simdem.world import all_pairs_paths, build_nav_graph

ROWS = ["." * 22] * 3


@pytest.fixture(scope="module")
def flat():
    g = ascii_map(ROWS)
    return g, all_pairs_paths(build_nav_graph(g, 1.0))


def walk(g, cells, agent="p1", t0=0):
    out = []
    for i, (a, b) in enumerate(zip(cells, cells[1:])):
        x, y = g.coords(b)
        out.append({"tick": t0 + i, "agent": agent, "kind": "moved", "cell": b, "x": x, "y": y, "src": a})
    return out


def adopt(g, tick, cell, target="dining", agent="p1"):
    return {"tick": tick, "agent": agent, "kind": "goal_adopted", "goal": "appointment",
            "target": [target], "label": target, "cell": cell}


def test_exact_shortest_path_scores_one():
    g = ascii_map(["D" + "." * 20 + "H", "." * 22])
    table = all_pairs_paths(build_nav_graph(g, 1.0))
    cells = [g.index(x, 0) for x in range(21, -1, -1)]
    ev = [adopt(g, 0, cells[0])] + walk(g, cells)
    ev.append({"tick": 21, "agent": "p1", "kind": "goal_reached", "cell": cells[-1], "goal": "appointment"})
    trips = extract_trips(ev, table, g)["p1"]
    assert len(trips) == 1 and trips[0].completed
    assert trips[0].ratio == 1.0
    assert trips[0].traveled_distance == pytest.approx(10.5)


def test_detour_of_two_diagonals():
    # 10 m trip plus a diagonal step out and back: 10 / (10 + sqrt 2)
    g = ascii_map(["." * 22, "D" + "." * 21, "." * 22])
    table = all_pairs_paths(build_nav_graph(g, 1.0))
    start = g.index(20, 1)
    cells = [start, g.index(19, 0), start] + [g.index(x, 1) for x in range(19, -1, -1)]
    ev = [adopt(g, 0, start)] + walk(g, cells)
    ev.append({"tick": 30, "agent": "p1", "kind": "goal_reached", "cell": g.index(0, 1), "goal": "appointment"})
    (trip,) = extract_trips(ev, table, g)["p1"]
    assert trip.shortest_distance == 10.0
    assert trip.ratio == pytest.approx(10 / (10 + math.sqrt(2)), abs=1e-9)
    assert round(trip.ratio, 3) == 0.876


def test_goal_change_abandons_trip():
    g = ascii_map(["D" + "." * 20 + "T", "." * 22])
    table = all_pairs_paths(build_nav_graph(g, 1.0))
    start = g.index(10, 0)
    cells = [start, g.index(9, 0), g.index(8, 0)]
    ev = [adopt(g, 0, start)] + walk(g, cells) + [adopt(g, 2, cells[-1], "toilet")]
    trips = extract_trips(ev, table, g)["p1"]
    assert [t.completed for t in trips] == [False, False]
    assert travel_efficiency(trips) is None
    s = summarize(trips, [], {"q_O": 3}, 3)
    assert s.te is None and s.trips == 0


def test_zero_length_trips_dropped():
    g = ascii_map(["D.", ".."])
    table = all_pairs_paths(build_nav_graph(g, 1.0))
    ev = [adopt(g, 0, 0), {"tick": 0, "agent": "p1", "kind": "goal_reached", "cell": 0, "goal": "x"}]
    assert extract_trips(ev, table, g)["p1"] == []


def test_summary_conventions():
    s = summarize([], [], {"q_O": 100}, 100)
    assert s.n == 0 and s.as_dict()["mu"] == "n/a" and s.as_dict()["sigma"] == "n/a"
    assert s.as_dict()["te"] == "n/a"
    s = summarize([], [EpisodeRecord("p1", 3, 5)], {"q_O": 95, "q_D": 5}, 100)
    assert (s.n, s.mu, s.sigma) == (1, 5, 0.0)
    s = summarize([], [], {"q_O": 58, "q_D": 42}, 100)
    assert (s.pct_qO, s.pct_qD, s.pct_qG) == (58.0, 42.0, 0.0)
    s = summarize([], [EpisodeRecord("p", 0, 2), EpisodeRecord("p", 5, 4)], {"q_D": 6, "q_O": 4}, 10)
    assert s.mu == 3 and s.sigma == pytest.approx(math.sqrt(2))


def test_trip_ratio_bounds():
    t = TripRecord("p", "g", 0, 0, 5, 5, 2_000_000_000, 2_500_000_000, True)
    assert t.ratio == 0.8
    assert TripRecord("p", "g", 0, 0, 5, 5, 1, 1, False).ratio is None


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(["q_O", "q_D", "q_G"]), min_size=1, max_size=60))
def test_episode_extractors_agree(states):
    events, prev = [], "q_O"
    for t, s in enumerate(states):
        if s != prev:
            events.append({"tick": t, "agent": "p", "kind": "state_changed", "from": prev, "to": s})
            prev = s
    horizon = len(states)
    assert states_from_events(events, "p", horizon) == list(states)
    a = episodes_from_states(states, "p")
    b = episodes_from_events(events, "p", horizon)
    assert a == b
    for x, y in zip(a, a[1:]):
        assert y.start_tick > x.start_tick + x.duration  # disjoint, non-adjacent
    assert sum(e.duration for e in a) == state_counts(states)["q_D"]


def test_extractors_agree_on_real_run():
    sc = load_scenario("ward_large", ["pwd.capacity=0.1", "horizon=8000"])
    res = sc.build(record_positions=True).run()
    states = [r[3] for r in res.trajectories["p1"]]
    assert states == states_from_events(res.events, "p1", res.horizon)
    assert episodes_from_states(states, "p1") == episodes_from_events(res.events, "p1", res.horizon)
    assert episodes_from_states(states)  # the low-capacity walker does get lost


def test_read_log_reports_line_numbers():
    good = ['{"kind":"header","horizon":3,"agents":{}}', '{"tick":0,"agent":"a","kind":"moved"}']
    header, events = read_log(good)
    assert header["horizon"] == 3 and len(events) == 1
    with pytest.raises(LogParseError, match="line 2"):
        read_log([good[0], "{not json"])
    with pytest.raises(LogParseError, match="line 3.*backwards"):
        read_log([good[0], '{"tick":5,"agent":"a","kind":"x"}', '{"tick":4,"agent":"a","kind":"x"}'])


# -- sweep -------------------------------------------------------------------

@pytest.fixture(scope="module")
def corridor():
    return load_scenario("corridor", ["horizon=60"])


def test_sweep_smoke(corridor):
    rows = sweep(corridor, [1.0], ["none"], [42])
    assert len(rows) == 1 and rows[0].summary.te > 0 and not rows[0].error


def test_sweep_shape_and_aggregate(corridor):
    rows = sweep(corridor, [1.0, 0.5, 0.1], ["none", "nurse", "nurse+watch"], list(range(20)))
    assert len(rows) == 180
    aggs = aggregate(rows)
    assert len(aggs) == 9
    body = rows_csv(rows).splitlines()
    assert body[0] == "capacity,mode,seed,TE,n,mu,sigma,pct_qO,pct_qD,pct_qG,error"
    assert len(body) == 181
    agg_lines = aggregate_csv(aggs).splitlines()
    assert len(agg_lines) == 10 and "TE_se" in agg_lines[0]
    # the reduction is plain arithmetic over the group's rows
    group = [r.summary.pct_qO for r in rows if r.capacity == 0.5 and r.mode == "nurse"]
    a = next(a for a in aggs if a.capacity == 0.5 and a.mode == "nurse")
    assert a.mean["pct_qO"] == pytest.approx(sum(group) / 20)


def test_sweep_identical_across_worker_counts(corridor):
    args = (corridor, [1.0, 0.1], ["none"], [1, 2, 3])
    one = sweep(*args, workers=1)
    two = sweep(*args, workers=2)
    assert [r.digest for r in one] == [r.digest for r in two]
    assert rows_csv(one) == rows_csv(two)


def test_failed_replicate_recorded(corridor):
    rows = sweep(corridor, [2.0, 1.0], ["none"], [1])
    assert rows[0].error and rows[0].summary is None
    assert not rows[1].error and rows[1].summary is not None
    lines = rows_csv(rows).splitlines()
    assert lines[1].startswith("2,none,1,,,") and "ValueError" in lines[1]
    assert lines[2].endswith(",")  # empty error column


def test_sweep_rejects_empty_seeds(corridor):
    with pytest.raises(ValueError):
        sweep(corridor, [1.0], ["none"], [])
