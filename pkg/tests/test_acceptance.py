"""End-to-end acceptance criteria; each prints one PASS/FAIL line."""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from gnntrack import autograd as ad
from gnntrack.assoc import solve_assignment
from gnntrack.cli import gradcheck_problem, main, training_samples
from gnntrack.config import load_config
from gnntrack.core import Box3D, iou3d
from gnntrack.featnet import EmbeddingProvider, RawFeatures
from gnntrack.gnn import ModelConfig, graph_from_counts, init_params, model_forward, sample_loss
from gnntrack.kitti import labels_by_frame
from gnntrack.metrics import clear_metrics, evaluate, smota_r
from gnntrack.rng import CounterRNG
from gnntrack.synth import generate_scenario
from gnntrack.tracker import run_sequence
from gnntrack.training import train

from oracles import brute_force_min_cost, mc_iou3d


@pytest.fixture
def verdict(capsys):
    def report(name: str, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, detail
    return report


def _kitti_line(frame, tid, x, score=None):
    row = f"{frame} {tid} Car 0 0 0 {100 + 10 * x:.2f} 100 {140 + 10 * x:.2f} 130 1.5 1.6 3.9 {x} 1.6 20 0"
    return row + (f" {score}" if score is not None else "") + "\n"


def test_c1_eval_on_external_pair(tmp_path, verdict):
    # hand-written files: two objects over four frames, identities swap halfway
    (tmp_path / "gt" / "label_02").mkdir(parents=True)
    (tmp_path / "res").mkdir()
    gt = "".join(_kitti_line(f, k, 10.0 * k) for f in range(4) for k in range(2))
    res = "".join(_kitti_line(f, (k + (f >= 2)) % 2 + 3, 10.0 * k, 0.9 - 0.1 * k) for f in range(4) for k in range(2))
    (tmp_path / "gt" / "label_02" / "0007.txt").write_text(gt)
    (tmp_path / "res" / "0007.txt").write_text(res)
    code = main(["eval", "--gt", str(tmp_path / "gt"), "--results", str(tmp_path / "res"),
                 "--output", str(tmp_path / "out")])
    summary = dict(l.split("=") for l in (tmp_path / "out" / "summary.txt").read_text().splitlines())
    seven = ("sAMOTA", "AMOTA", "AMOTP", "MOTA", "MOTP", "IDS", "FRAG")
    ok = (code == 0 and all(k in summary and math.isfinite(float(summary[k])) for k in seven)
          and summary["MOTA"] == "75.00" and summary["IDS"] == "2" and summary["FRAG"] == "0")
    verdict("1 eval computes all seven metrics", ok, " ".join(f"{k}={summary.get(k)}" for k in seven))


def test_c2_assignment_oracle(verdict):
    rng = np.random.default_rng(2024)
    shapes = [(m, n) for m in range(8) for n in range(8)]
    t0 = time.perf_counter()
    bad = 0
    for k in range(1000):
        m, n = shapes[k % len(shapes)]
        cost = rng.integers(-20, 21, size=(m, n)).astype(float)
        pairs = solve_assignment(cost)
        total = sum(cost[i, j] for i, j in pairs)
        bad += len(pairs) != min(m, n) or total != brute_force_min_cost(cost)
    solve_time = time.perf_counter() - t0
    # time the solver alone for the runtime bound
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    for k in range(1000):
        m, n = shapes[k % len(shapes)]
        solve_assignment(rng.integers(-20, 21, size=(m, n)).astype(float))
    elapsed = time.perf_counter() - t0
    verdict("2 assignment oracle", bad == 0 and elapsed < 5.0,
            f"{bad} mismatches in 1000 matrices; solver {elapsed:.2f}s (with brute force {solve_time:.1f}s)")


def test_c3_geometry_oracle(verdict):
    rng = np.random.default_rng(7)
    worst = 0.0
    for k in range(100):
        a = Box3D((0.0, 0.0, 0.0), tuple(rng.uniform(0.5, 4.0, 3)), rng.uniform(-math.pi, math.pi))
        b = Box3D(tuple(rng.uniform(-1.5, 1.5, 3)), tuple(rng.uniform(0.5, 4.0, 3)), rng.uniform(-math.pi, math.pi))
        worst = max(worst, abs(iou3d(a, b) - mc_iou3d(a, b, 2_000_000, seed=k)))
    cube = abs(iou3d(Box3D((0, 0, 0), (1, 1, 1), 0), Box3D((0.5, 0, 0), (1, 1, 1), 0)) - 1 / 3)
    verdict("3 geometry oracle", worst <= 0.01 and cube <= 1e-9,
            f"max |iou3d - MC| = {worst:.4f}; unit cube error {cube:.1e}")


def test_c4_gradient_correctness(verdict):
    mc, store, sample = gradcheck_problem(seed=0, layers=2, M=4, N=3)
    rep = ad.grad_check(lambda: sample_loss(sample, store, mc)[0], store, 1e-5)
    verdict("4 gradient check", rep.passed,
            f"max relative error {rep.worst:.2e} over {len(rep.max_rel_error)} parameters")


def test_c5_equivariance(verdict):
    cfg = ModelConfig()
    worst = 0.0
    for k in range(50):
        rng = np.random.default_rng(k)
        M, N = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        store = init_params(cfg, k)
        n = M + N
        raw = RawFeatures(rng.normal(size=(n, cfg.app2d_dim)), rng.normal(size=(n, cfg.app3d_dim)),
                          rng.normal(size=(n, 4)), rng.normal(size=(n, 7)))
        p, q = rng.permutation(M), rng.permutation(N)
        base = model_forward(raw, graph_from_counts(M, N, cfg.layers), store, cfg)
        perm = model_forward(raw.take(np.concatenate([p, M + q])), graph_from_counts(M, N, cfg.layers), store, cfg)
        for lvl in range(cfg.layers + 1):
            worst = max(worst, np.abs(base.affinity_matrix(lvl)[np.ix_(p, q)] - perm.affinity_matrix(lvl)).max())
    verdict("5 permutation equivariance", worst <= 1e-6, f"max deviation {worst:.1e} over 50 problems")


def _rec(frame, tid, x):
    from gnntrack.core import Box2D
    from gnntrack.kitti import LabelRecord
    return LabelRecord(frame, tid, "Car", 0.0, 0, 0.0, Box2D(10 * x, 0, 10 * x + 40, 30),
                       (1.5, 1.6, 3.9), (x, 1.6, 20.0), 0.0)


def test_c6_clear_scenarios(verdict):
    one = [[_rec(f, 0, 0.0)] for f in range(3)]
    perfect = clear_metrics(one, one)
    two = [[_rec(f, 0, 0.0), _rec(f, 1, 10.0)] for f in range(4)]
    swap = clear_metrics(two, [[_rec(f, 5 + (f >= 2), 0.0), _rec(f, 6 - (f >= 2), 10.0)] for f in range(4)])
    miss = clear_metrics(one, [[_rec(0, 3, 0.0)], [], [_rec(2, 3, 0.0)]])
    s = smota_r(10, 50, 2, 100, 0.5)
    ok = ((perfect.MOTA, perfect.MOTP, perfect.IDS, perfect.FRAG) == (1.0, 1.0, 0, 0)
          and (swap.IDS, swap.FP, swap.FN, swap.FRAG, swap.MOTA) == (2, 0, 0, 0, 0.75)
          and (miss.FN, miss.FRAG, miss.MOTA) == (1, 1, 1 - 1 / 3)
          and s == 1 - (62 - 50) / 50)
    verdict("6 CLEAR oracle scenarios", ok,
            f"perfect MOTA {perfect.MOTA}; swap IDS {swap.IDS} MOTA {swap.MOTA}; "
            f"miss MOTA {miss.MOTA:.4f} FRAG {miss.FRAG}; sMOTA_r {s}")


HELD_OUT = 90_000


def test_c7_learning_effect(verdict):
    t0 = time.perf_counter()
    cfg = load_config()
    mc = cfg.model()
    res = train(training_samples(cfg, None), mc, cfg["train.epochs"], cfg.optimizer(), cfg["seed"],
                augment=cfg["train.augment"], schedule=cfg["train.schedule"])
    tcfg = cfg.tracker()
    iou_cfg = load_config(None, {"tracker.mode": "iou"}).tracker()
    prov = EmbeddingProvider(mc.app2d_dim, mc.app3d_dim)

    clean_pairs = []
    for k in range(5):
        seq = generate_scenario(cfg.scenario("clean", seed=HELD_OUT + k)).sequence
        out = run_sequence(seq, tcfg, res.store, mc, prov)
        clean_pairs.append((seq.labels, labels_by_frame(out.records(), len(seq.labels))))
    samota = evaluate(clean_pairs, cfg.evaluation()).sAMOTA

    ids_gnn = ids_iou = 0
    for k in range(5):
        seq = generate_scenario(cfg.scenario("crossing", seed=HELD_OUT + 100 + k)).sequence
        for mode, tc in (("gnn", tcfg), ("iou", iou_cfg)):
            out = run_sequence(seq, tc, res.store, mc, prov)
            ids = clear_metrics(seq.labels, labels_by_frame(out.records(), len(seq.labels)), cfg.evaluation()).IDS
            if mode == "gnn":
                ids_gnn += ids
            else:
                ids_iou += ids
    elapsed = time.perf_counter() - t0
    ok = samota >= 0.90 and ids_iou > 0 and ids_gnn <= 0.7 * ids_iou and elapsed < 600
    verdict("7 end-to-end learning effect", ok,
            f"clean sAMOTA {samota:.4f}; crossing IDS gnn {ids_gnn / 5:.1f} vs iou {ids_iou / 5:.1f} "
            f"per sequence; {elapsed:.0f}s")


def _pipeline(root: Path) -> dict:
    fast = ["--seed", "11", "--set", "train.epochs=2", "--set", "train.sequences=3"]
    steps = [
        ["synth", "--preset", "crossing", "--sequences", "2", "--output", str(root / "data")],
        ["train", "--output", str(root / "model")],
        ["track", "--data", str(root / "data"), "--checkpoint", str(root / "model" / "model.gnnw"),
         "--output", str(root / "track")],
        ["eval", "--gt", str(root / "data"), "--results", str(root / "track"), "--output", str(root / "eval")],
    ]
    for argv in steps:
        assert main(argv + fast) == 0
    files = [root / "model" / "model.gnnw", root / "eval" / "report.txt", root / "eval" / "summary.txt"]
    files += sorted((root / "track" / "results").iterdir())
    return {str(p.relative_to(root)): p.read_bytes() for p in files}


def test_c8_determinism(tmp_path, verdict):
    a, b = _pipeline(tmp_path / "a"), _pipeline(tmp_path / "b")
    same = [k for k in a if a[k] == b.get(k)]
    verdict("8 determinism", a.keys() == b.keys() and len(same) == len(a),
            f"{len(same)}/{len(a)} artifacts byte-identical (results, checkpoint, reports)")


def test_c9_locality_without_interaction(verdict):
    cfg = ModelConfig(layers=0)
    worst, moved = 0.0, 0.0
    for k in range(20):
        rng = np.random.default_rng(100 + k)
        M, N = 3, 3
        store = init_params(cfg, k)
        raw = RawFeatures(rng.normal(size=(6, cfg.app2d_dim)), rng.normal(size=(6, cfg.app3d_dim)),
                          rng.normal(size=(6, 4)), rng.normal(size=(6, 7)))
        base = model_forward(raw, graph_from_counts(M, N, 0), store, cfg).affinity_matrix()
        other = RawFeatures(*(raw.branch(b).copy() for b in ("app2d", "app3d", "mot2d", "mot3d")))
        for br in ("app2d", "app3d", "mot2d", "mot3d"):
            getattr(other, br)[2] += rng.normal(size=getattr(other, br).shape[1])  # track 2
            getattr(other, br)[M + 2] += rng.normal(size=getattr(other, br).shape[1])  # detection 2
        out = model_forward(other, graph_from_counts(M, N, 0), store, cfg).affinity_matrix()
        worst = max(worst, np.abs(out[:2, :2] - base[:2, :2]).max())
        moved = max(moved, np.abs(out[2] - base[2]).max())
    verdict("9 L=0 locality", worst <= 1e-12 and moved > 0,
            f"max change on untouched edges {worst:.1e}; touched edges change up to {moved:.2e}")
