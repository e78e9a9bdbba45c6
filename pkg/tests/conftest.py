import json
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from simdem.world import BOUNDARY, LANDMARK, WALKABLE, GridMap, Location

sys.path.insert(0, str(Path(__file__).parent))

LEGEND = {
    "#": BOUNDARY, ".": WALKABLE, "L": LANDMARK,
    "H": Location("home:p1"), "h": Location("home:p2"), "D": Location("dining"),
    "T": Location("toilet"), "N": Location("nurse-station"), "C": Location("clinic"),
}

COLORS = {
    "#": "#000000", ".": "#00c000", "L": "#ffd700", "H": "#804810", "h": "#805020",
    "D": "#ff8000", "T": "#0000ff", "N": "#ff00ff", "C": "#ff0000",
}


def ascii_map(rows):
    rows = [r for r in rows]
    h, w = len(rows), len(rows[0])
    return GridMap(w, h, tuple(LEGEND[ch] for r in rows for ch in r))


def cell(gmap, x, y):
    return gmap.index(x, y)


def write_png(rows, path):
    arr = np.zeros((len(rows), len(rows[0]), 3), dtype=np.uint8)
    for y, r in enumerate(rows):
        for x, ch in enumerate(r):
            h = COLORS[ch].lstrip("#")
            arr[y, x] = (int(h[0:2], 16), int(h[2:4], 16), int(h[4:6], 16))
    Image.fromarray(arr, "RGB").save(path)


def palette_for(rows):
    used = {ch for r in rows for ch in r}
    names = {ch: str(LEGEND[ch]) for ch in used}
    return {COLORS[ch]: names[ch] for ch in used}


def scenario_doc(rows, tmp_path, agents, horizon=200, seed=1, discomfort=1.5, **extra):
    """Write the map next to a scenario document and return (doc, path)."""
    tmp_path = Path(tmp_path)
    write_png(rows, tmp_path / "map.png")
    doc = {"name": "test", "map": "map.png", "palette": palette_for(rows),
           "discomfort": discomfort, "horizon": horizon, "seed": seed, "agents": agents}
    doc.update(extra)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(doc))
    return doc, path


@pytest.fixture
def open_room():
    return ascii_map(["." * 11] * 11)


def make_world(rows, lam=1.5):
    from simdem.world import build_world

    return build_world(ascii_map(rows), lam, use_cache=False)


def make_pwd(world, pid, x, y, home=("home:p1",), schedule=(), needs=(), capacity=1.0,
             p_forget_cell=0.0, know="none", seed=0, **kw):
    """PwD at (x, y); ``know`` is ``"none"``, ``"all"`` or ``"home"``."""
    from simdem.agents import PwdAgent
    from simdem.cognition import CognitiveMap, Schedule
    from simdem.engine import agent_rng, initial_memory

    gmap = world.gmap
    cmap = CognitiveMap(len(gmap.accessible), capacity, p_forget_cell)
    pos = gmap.index(x, y)
    if know == "all":
        cmap.seed(sorted(gmap.accessible))
    elif know == "home":
        initial_memory(world, pos, tuple(home), cmap)
    return PwdAgent(pid, pos, tuple(home), Schedule(list(schedule)), kw.pop("p_forget_appointment", 0.0),
                    list(needs), cmap, rng=agent_rng(seed, pid), **kw)


def make_nurse(world, nid, x, y, home=("nurse-station",), sight=10):
    from simdem.agents import NurseAgent

    return NurseAgent(nid, world.gmap.index(x, y), tuple(home), sight)


def make_watch(wid, patient, seed=0, **kw):
    from simdem.agents import WatchAgent
    from simdem.engine import agent_rng

    return WatchAgent(wid, patient, rng=agent_rng(seed, wid), **kw)
