import hashlib
import json
import shutil
from pathlib import Path

import pytest

from gnntrack.cli import main

FAST = ["--set", "train.epochs=2", "--set", "train.sequences=2", "--set", "synth.num_frames=12",
        "--set", "model.node_dim=16", "--set", "model.edge_hidden=16", "--set", "model.branch_dim=16"]


def run(*argv):
    return main([str(a) for a in argv])


def tree_digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    assert run("synth", "--preset", "clean", "--sequences", 2, "--seed", 4, "--output", base / "data", *FAST) == 0
    assert run("train", "--seed", 4, "--output", base / "model", *FAST) == 0
    return base


def test_synth_layout(workspace):
    data = workspace / "data"
    assert (data / "label_02" / "0000.txt").exists() and (data / "detection" / "0001.txt").exists()
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["command"] == "synth" and manifest["seed"] == 4
    assert set(manifest["versions"]) >= {"gnntrack", "python", "numpy", "backend"}
    assert manifest["config"]["train.epochs"] == "2"


def test_track_eval_pipeline(workspace, capsys):
    out = workspace / "track"
    assert run("track", "--data", workspace / "data", "--checkpoint", workspace / "model" / "model.gnnw",
               "--output", out, *FAST) == 0
    assert sorted(p.name for p in (out / "results").iterdir()) == ["0000.txt", "0001.txt"]
    capsys.readouterr()
    assert run("eval", "--gt", workspace / "data", "--results", out, "--output", workspace / "eval") == 0
    printed = capsys.readouterr().out
    assert "sAMOTA" in printed and "IDS=" in printed
    summary = (workspace / "eval" / "summary.txt").read_text()
    assert [l.split("=")[0] for l in summary.splitlines()] == [
        "sAMOTA", "AMOTA", "AMOTP", "MOTA", "MOTP", "IDS", "FRAG", "FP", "FN", "TP", "GT"]


def test_eval_identical_files_is_perfect(workspace, tmp_path):
    res = tmp_path / "res"
    shutil.copytree(workspace / "data" / "label_02", res)
    assert run("eval", "--gt", workspace / "data", "--results", res, "--output", tmp_path / "e") == 0
    assert "MOTA=100.00" in (tmp_path / "e" / "summary.txt").read_text().splitlines()


def test_track_is_deterministic_and_leaves_inputs_alone(workspace, tmp_path):
    before = tree_digest(workspace / "data")
    outs = []
    for k, jobs in enumerate((1, 2)):
        out = tmp_path / f"t{k}"
        assert run("track", "--data", workspace / "data", "--checkpoint", workspace / "model" / "model.gnnw",
                   "--jobs", jobs, "--output", out, *FAST) == 0
        outs.append(tree_digest(out / "results"))
    assert outs[0] == outs[1]
    assert tree_digest(workspace / "data") == before


def test_manifest_reproduces_run(workspace, tmp_path):
    manifest = json.loads((workspace / "model" / "manifest.json").read_text())
    cfg = tmp_path / "run.cfg"
    cfg.write_text("".join(f"{k} = {v}\n" for k, v in manifest["config"].items()))
    assert run("train", "--config", cfg, "--output", tmp_path / "m") == 0
    assert (tmp_path / "m" / "model.gnnw").read_bytes() == (workspace / "model" / "model.gnnw").read_bytes()


def test_iou_baseline_needs_no_checkpoint(workspace, tmp_path):
    assert run("track", "--data", workspace / "data", "--set", "tracker.mode=iou", "--output", tmp_path) == 0


def test_gradcheck_command(tmp_path, capsys):
    assert run("gradcheck", "--output", tmp_path) == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert line.startswith("max_rel_error=") and float(line.split("=")[1]) <= 1e-5


def test_bench_command(tmp_path, capsys):
    assert run("bench", "--sizes", "4", "--repeats", 1, "--output", tmp_path) == 0
    assert "assignment" in capsys.readouterr().out
    assert "bench" in json.loads((tmp_path / "run_summary.json").read_text())


@pytest.mark.parametrize("argv, code, tag", [
    (["frobnicate"], 2, "E_USAGE"),
    (["track", "--data", "/nonexistent/dir", "--set", "tracker.mode=iou"], 4, "E_MISSING"),
    (["synth", "--set", "no.such.key=1"], 3, "E_CONFIG"),
    (["synth", "--set", "seed=abc"], 3, "E_CONFIG"),
    (["synth", "--config", "/nonexistent.cfg"], 4, "E_MISSING"),
])
def test_error_codes(argv, code, tag, tmp_path, capsys):
    assert main(argv + ["--output", str(tmp_path)] if argv != ["frobnicate"] else argv) == code
    err = capsys.readouterr().err.strip().splitlines()
    assert err[-1].startswith(f"error {tag}: ")


def test_malformed_inputs(workspace, tmp_path, capsys):
    bad = tmp_path / "model.gnnw"
    bad.write_bytes(b"garbage")
    assert run("track", "--data", workspace / "data", "--checkpoint", bad, "--output", tmp_path / "o") == 5
    res = tmp_path / "res"
    res.mkdir()
    (res / "0000.txt").write_text("0 1 Car 0 0 0 1 2 3\n")
    assert run("eval", "--gt", workspace / "data", "--results", res, "--sequences", "0000",
               "--output", tmp_path / "e") == 5
    err = capsys.readouterr().err.strip().splitlines()
    assert err[-1].startswith("error E_FORMAT: ") and "line 1" in err[-1]
