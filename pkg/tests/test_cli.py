import hashlib
import json
import subprocess
import sys

import pytest
from PIL import Image, ImageChops

from simdem.cli import main, parse_seeds, read_trajectory, render
from simdem.metrics import read_log, summarize_log
from simdem.scenario import resolve_scenario_path
from simdem.cli import load_any


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(args, capsys):
    code = main([str(a) for a in args])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def bad_doc(tmp_path):
    def write(mutate):
        src = resolve_scenario_path("default")
        doc = json.loads(src.read_text())
        doc["map"] = str((src.parent / doc["map"]).resolve())
        mutate(doc)
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(doc))
        return p
    return write


def test_validate_default_ok(capsys):
    code, out, _ = run(["validate", "--scenario", "default"], capsys)
    assert code == 0 and out.strip() == "OK"


def test_validate_rejects_fov_400(bad_doc, capsys):
    p = bad_doc(lambda d: d["agents"][0].update(fov=400))
    code, _, err = run(["validate", "--scenario", p], capsys)
    assert code != 0 and "fov" in err


def test_validate_rejects_unknown_location(bad_doc, capsys):
    p = bad_doc(lambda d: d["agents"][0]["schedule"][0].update(location="pool"))
    code, _, err = run(["validate", "--scenario", p], capsys)
    assert code != 0 and "pool" in err and "schedule[0].location" in err


def test_run_twice_same_checksum(tmp_path, capsys):
    for name in ("a", "b"):
        code, _, _ = run(["run", "--scenario", "corridor", "--out", tmp_path / name, "--seed", 7], capsys)
        assert code == 0
    assert sha(tmp_path / "a" / "events.jsonl") == sha(tmp_path / "b" / "events.jsonl")


def test_run_artifacts_and_full_capacity(tmp_path, capsys):
    out = tmp_path / "r"
    code, _, _ = run(["run", "--scenario", "default", "--out", out, "--steps", 4000,
                      "--override", "pwd.capacity=1.0"], capsys)
    assert code == 0
    for f in ("events.jsonl", "summary.json", "manifest.json", "trajectories/p1.csv", "trajectories/n1.csv"):
        assert (out / f).exists(), f
    summary = json.loads((out / "summary.json").read_text())
    s = summary["agents"]["p1"]
    assert s["n"] == 0 and s["mu"] == "n/a"
    assert abs(s["pct_qO"] + s["pct_qD"] + s["pct_qG"] - 100) <= 0.01
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 42 and manifest["scenario"]["agents"][0]["capacity"] == 1.0
    assert manifest["events_sha256"] == sha(out / "events.jsonl")


def test_summary_recomputed_from_artifacts(tmp_path, capsys):
    out = tmp_path / "r"
    assert run(["run", "--scenario", "ward_large", "--out", out, "--steps", 5000,
                "--override", "pwd.capacity=0.1"], capsys)[0] == 0
    sc = load_any(out / "manifest.json")
    world = sc.world()
    header, events = read_log(out / "events.jsonl")
    again = {k: v.as_dict() for k, v in summarize_log(header, events, world.metric, world.gmap).items()}
    assert again == json.loads((out / "summary.json").read_text())["agents"]
    assert again["p1"]["n"] > 0


def test_manifest_alone_reproduces_run(tmp_path, capsys):
    assert run(["run", "--scenario", "corridor", "--out", tmp_path / "a", "--seed", 3], capsys)[0] == 0
    assert run(["run", "--scenario", tmp_path / "a" / "manifest.json", "--out", tmp_path / "b"], capsys)[0] == 0
    assert sha(tmp_path / "a" / "events.jsonl") == sha(tmp_path / "b" / "events.jsonl")


def test_run_errors(tmp_path, capsys):
    code, _, err = run(["run", "--scenario", "corridor", "--out", tmp_path / "x",
                        "--override", "pwd.wings=2"], capsys)
    assert code != 0 and "wings" in err
    blocker = tmp_path / "file"
    blocker.write_text("")
    code, _, err = run(["run", "--scenario", "corridor", "--out", blocker / "sub"], capsys)
    assert code != 0 and "cannot write" in err


def test_sweep_outputs(tmp_path, capsys):
    out = tmp_path / "s"
    code, stdout, _ = run(["sweep", "--scenario", "corridor", "--out", out, "--steps", 40,
                           "--capacities", "1.0,0.5,0.1", "--modes", "none,nurse,nurse+watch",
                           "--seeds", "0-19", "--workers", 2], capsys)
    assert code == 0
    assert len((out / "replicates.csv").read_text().splitlines()) == 181
    assert len((out / "aggregate.csv").read_text().splitlines()) == 10
    assert len(stdout.strip().splitlines()) == 9


def test_sweep_empty_seeds_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "--scenario", "corridor", "--out", str(tmp_path), "--seeds", ""])
    assert exc.value.code == 2


def test_parse_seeds():
    assert parse_seeds("0-3,7") == [0, 1, 2, 3, 7]
    assert parse_seeds(" ") == []


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "simdem", "validate", "--scenario", "corridor"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip() == "OK"


# -- render ------------------------------------------------------------------

def map_path(name):
    src = resolve_scenario_path(name)
    return src.parent / json.loads(src.read_text())["map"]


def test_render_empty_trajectory_is_copy(tmp_path):
    out = tmp_path / "o.png"
    assert render(map_path("corridor"), [], out) == 0
    with Image.open(map_path("corridor")) as a, Image.open(out) as b:
        assert ImageChops.difference(a.convert("RGB"), b.convert("RGB")).getbbox() is None


def test_render_straight_polyline(tmp_path):
    out = tmp_path / "o.png"
    traj = [(t, 4 + t, 2, "q_O") for t in range(10)]
    assert render(map_path("corridor"), traj, out) == 10
    with Image.open(map_path("corridor")) as a, Image.open(out) as b:
        box = ImageChops.difference(a.convert("RGB"), b.convert("RGB")).getbbox()
    assert box == (4, 2, 14, 3)  # one row of pixels
    assert render(map_path("corridor"), traj, tmp_path / "big.png", scale=4) == 37


def test_render_out_of_bounds_names_tick(tmp_path, capsys):
    traj = tmp_path / "t.csv"
    traj.write_text("tick,x,y,state\n0,1,1,q_O\n1,2,1,q_O\n2,99,1,q_O\n")
    code, _, err = run(["render", "--map", map_path("corridor"), "--trajectory", traj,
                        "--out", tmp_path / "o.png"], capsys)
    assert code != 0 and "tick 2" in err


def test_low_capacity_path_covers_more_pixels(tmp_path, capsys):
    counts = {}
    for cap in ("1.0", "0.1"):
        out = tmp_path / cap
        assert run(["run", "--scenario", "ward_large", "--out", out, "--steps", 6000,
                    "--override", f"pwd.capacity={cap}"], capsys)[0] == 0
        traj = read_trajectory(out / "trajectories" / "p1.csv")
        counts[cap] = render(map_path("ward_large"), traj, tmp_path / f"{cap}.png")
    assert counts["0.1"] > counts["1.0"] > 0
