"""Command-line entry point: ``gnntrack <subcommand> [flags]``.

Subcommands: synth, train, track, eval, gradcheck, bench. Every run writes
``manifest.json`` (config snapshot, seed, versions) and ``config.txt`` to its
output directory; wall-clock timings go to ``run_summary.json`` only, so the
other artifacts are byte-stable across runs. Failures print one line

    error <CODE>: <message>

to stderr and exit with a nonzero status.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import autograd as ad
from ._accel import backend_name
from .config import ConfigError, RunConfig, load_config
from .featnet import AppearanceLookupError, FileProvider, ZerosProvider
from .gnn import NonFiniteActivationError, TrainingDivergedError, init_params
from .kitti import (KittiFormatError, labels_by_frame, list_sequences, load_sequence, parse_labels,
                    read_feat, read_identity, write_results)
from .synth import generate_scenario, write_scenario
from .tracker import TrackerError, run_sequence

EXIT = {"E_USAGE": 2, "E_CONFIG": 3, "E_MISSING": 4, "E_FORMAT": 5, "E_NUMERIC": 6,
        "E_GRADCHECK": 7, "E_INTERNAL": 1}


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("E_USAGE", message)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _versions() -> dict:
    out = {"gnntrack": __version__, "python": platform.python_version(), "numpy": np.__version__,
           "backend": backend_name()}
    try:
        import numba
        out["numba"] = numba.__version__
    except ImportError:  # pragma: no cover
        out["numba"] = None
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _start(args, cfg: RunConfig, inputs: dict) -> Path:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dumps(), encoding="utf-8")
    _write_json(out / "manifest.json", {"command": args.command, "inputs": inputs, "seed": cfg["seed"],
                                        "jobs": cfg["jobs"], "config": cfg.snapshot(),
                                        "versions": _versions()})
    return out


def _require_dir(path: str, what: str) -> Path:
    if not path:
        raise CliError("E_USAGE", f"missing {what} path")
    p = Path(path)
    if not p.is_dir():
        raise CliError("E_MISSING", f"{what} directory not found: {p}")
    return p


def _provider(cfg: RunConfig, root: Path, seq_id: str):
    kind = cfg["features.appearance"]
    mc = cfg.model()
    if kind == "zeros":
        return ZerosProvider(mc.app2d_dim, mc.app3d_dim)
    if kind not in ("file", "synthetic"):
        raise CliError("E_CONFIG", f"unknown appearance provider {kind!r}")
    p2, p3 = (root / "appearance" / f"{seq_id}_2d.feat", root / "appearance" / f"{seq_id}_3d.feat")
    for p in (p2, p3):
        if not p.exists():
            raise CliError("E_MISSING", f"appearance file not found: {p}")
    try:
        prov = FileProvider(read_feat(p2), read_feat(p3))
    except ValueError as e:
        raise CliError("E_FORMAT", str(e)) from None
    if prov.dims != (mc.app2d_dim, mc.app3d_dim):
        raise CliError("E_CONFIG", f"{seq_id}: appearance dims {prov.dims} do not match model "
                                   f"({mc.app2d_dim}, {mc.app3d_dim})")
    return prov


def _load_store(cfg: RunConfig, path: str) -> ad.ParamStore:
    if not path:
        raise CliError("E_USAGE", "missing checkpoint path")
    if not Path(path).exists():
        raise CliError("E_MISSING", f"checkpoint not found: {path}")
    store = init_params(cfg.model(), cfg["seed"])
    try:
        vals = ad.load_params(path)
    except (ValueError, OSError) as e:
        raise CliError("E_FORMAT", str(e)) from None
    missing = sorted(set(store) - set(vals))
    extra = sorted(set(vals) - set(store))
    if missing or extra:
        raise CliError("E_FORMAT", f"checkpoint does not fit the configured model "
                                   f"(missing {missing[:3]}, unexpected {extra[:3]})")
    try:
        store.load_values(vals)
    except ad.ShapeError as e:
        raise CliError("E_FORMAT", str(e)) from None
    return store


def _load_seq(root: Path, seq_id: str):
    try:
        return load_sequence(root, seq_id)
    except KittiFormatError as e:
        raise CliError("E_FORMAT", f"sequence {seq_id}: {e}") from None


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args, cfg: RunConfig) -> dict:
    preset = args.preset or cfg["synth.preset"]
    n = args.sequences if args.sequences is not None else cfg["synth.sequences"]
    out = _start(args, cfg, {"preset": preset, "sequences": n})
    for k in range(n):
        sc = generate_scenario(cfg.scenario(preset, seed=cfg["seed"] * 1000 + k), f"{k:04d}")
        write_scenario(out, sc)
    print(f"wrote {n} {preset} sequence(s) to {out}")
    return {"sequences": n}


def training_samples(cfg: RunConfig, data: Optional[Path]):
    from .featnet import EmbeddingProvider
    from .training import frame_pair_samples, identities_from_labels, identities_from_rows

    samples = []
    if data is None:
        presets = cfg["train.presets"]
        mc = cfg.model()
        for k in range(cfg["train.sequences"]):
            sc = generate_scenario(cfg.scenario(presets[k % len(presets)], seed=cfg["seed"] * 1000 + k),
                                   f"{k:04d}")
            prov = (ZerosProvider(mc.app2d_dim, mc.app3d_dim) if cfg["features.appearance"] == "zeros"
                    else EmbeddingProvider(mc.app2d_dim, mc.app3d_dim))
            samples += frame_pair_samples(sc.sequence, sc.identities, prov)
        return samples
    seqs = list_sequences(data)
    if not seqs:
        raise CliError("E_MISSING", f"no sequences under {data}")
    for sid in seqs:
        seq = _load_seq(data, sid)
        flat = read_identity(data, sid)
        try:
            ids = identities_from_rows(seq, flat) if flat is not None else identities_from_labels(seq)
        except LookupError as e:
            raise CliError("E_FORMAT", f"sequence {sid}: {e}") from None
        samples += frame_pair_samples(seq, ids, _provider(cfg, data, sid))
    return samples


def cmd_train(args, cfg: RunConfig) -> dict:
    from .training import train

    data = args.data or cfg["paths.data"]
    root = _require_dir(data, "data") if data else None
    out = _start(args, cfg, {"data": data})
    samples = training_samples(cfg, root)
    if not samples:
        raise CliError("E_FORMAT", "no usable frame pairs for training")
    try:
        res = train(samples, cfg.model(), cfg["train.epochs"], cfg.optimizer(), cfg["seed"],
                    augment=cfg["train.augment"], schedule=cfg["train.schedule"])
    except ValueError as e:
        raise CliError("E_CONFIG", str(e)) from None
    ad.save_params(res.store, out / "model.gnnw")
    _write_json(out / "train_log.json", {"samples": len(samples),
                                         "epoch_losses": [float(v) for v in res.epoch_losses]})
    print(f"trained on {len(samples)} frame pairs; final epoch loss {res.epoch_losses[-1]:.6g}")
    print(f"checkpoint: {out / 'model.gnnw'}")
    return {"samples": len(samples)}


def _track_one(job):
    cfg, root, sid, ckpt = job
    tcfg = cfg.tracker()
    store = _load_store(cfg, ckpt) if tcfg.mode == "gnn" else None
    seq = _load_seq(root, sid)
    prov = _provider(cfg, root, sid) if tcfg.mode == "gnn" else None
    res = run_sequence(seq, tcfg, store, cfg.model(), prov)
    return sid, write_results(res.records()), res.stats


def cmd_track(args, cfg: RunConfig) -> dict:
    root = _require_dir(args.data or cfg["paths.data"], "data")
    ckpt = args.checkpoint or cfg["paths.checkpoint"]
    tcfg = cfg.tracker()
    if tcfg.mode == "gnn":
        _load_store(cfg, ckpt)  # fail early
    seqs = args.sequences.split(",") if args.sequences else list_sequences(root)
    if not seqs:
        raise CliError("E_MISSING", f"no sequences under {root}")
    out = _start(args, cfg, {"data": str(root), "checkpoint": ckpt, "sequences": seqs})
    (out / "results").mkdir(exist_ok=True)
    jobs = [(cfg, root, sid, ckpt) for sid in seqs]
    if cfg["jobs"] > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            results = list(pool.map(_track_one, jobs))
    else:
        results = [_track_one(j) for j in jobs]
    stats = []
    for sid, text, st in results:
        (out / "results" / f"{sid}.txt").write_text(text, encoding="utf-8")
        stats.append(st)
    print(f"tracked {len(results)} sequence(s); results in {out / 'results'}")
    return {"sequences": stats}


def _result_file(results: Path, sid: str) -> Path:
    for cand in (results / f"{sid}.txt", results / "results" / f"{sid}.txt"):
        if cand.exists():
            return cand
    raise CliError("E_MISSING", f"no result file for sequence {sid} under {results}")


def _read_labels(path: Path, what: str):
    try:
        return parse_labels(path.read_text(encoding="utf-8"))
    except KittiFormatError as e:
        raise CliError("E_FORMAT", f"{what} {path}: {e}") from None


def cmd_eval(args, cfg: RunConfig) -> dict:
    from .metrics import evaluate

    gt_root = _require_dir(args.gt or cfg["paths.gt"], "ground-truth")
    res_root = _require_dir(args.results or cfg["paths.results"], "results")
    gt_dir = gt_root / "label_02" if (gt_root / "label_02").is_dir() else gt_root
    seqs = args.sequences.split(",") if args.sequences else sorted(p.stem for p in gt_dir.glob("*.txt"))
    if not seqs:
        raise CliError("E_MISSING", f"no ground-truth files under {gt_dir}")
    out = _start(args, cfg, {"gt": str(gt_root), "results": str(res_root), "sequences": seqs})
    pairs = []
    for sid in seqs:
        gp = gt_dir / f"{sid}.txt"
        if not gp.exists():
            raise CliError("E_MISSING", f"ground-truth file not found: {gp}")
        gt = _read_labels(gp, "ground truth")
        hyp = _read_labels(_result_file(res_root, sid), "results")
        n = max([r.frame + 1 for r in gt + hyp], default=0)
        pairs.append((labels_by_frame(gt, n), labels_by_frame(hyp, n)))
    try:
        rep = evaluate(pairs, cfg.evaluation())
    except ValueError as e:
        raise CliError("E_FORMAT", str(e)) from None
    (out / "report.txt").write_text(rep.table(), encoding="utf-8")
    (out / "summary.txt").write_text(rep.summary(), encoding="utf-8")
    sys.stdout.write(rep.table())
    sys.stdout.write(rep.summary())
    return {"sequences": len(seqs)}


def gradcheck_problem(seed: int, layers: int = 2, M: int = 4, N: int = 3):
    """A random M x N frame-pair problem on a narrow copy of the full model."""
    from .featnet import RawFeatures
    from .gnn import ModelConfig, TrainingSample, labels_from_ids
    from .rng import CounterRNG

    mc = ModelConfig(app2d_dim=8, app3d_dim=8, branch_dim=8, node_dim=16, edge_hidden=16, layers=layers)
    store = init_params(mc, seed)
    rng = CounterRNG(seed, stream=500)
    for _, p in store.items():  # nonzero biases so every ReLU path is exercised
        p.value += 0.05 * rng.normal(p.value.size).reshape(p.shape)
    k = M + N
    raw = RawFeatures(rng.normal(k * 8).reshape(k, 8), rng.normal(k * 8).reshape(k, 8),
                      rng.normal(k * 4).reshape(k, 4), rng.normal(k * 7).reshape(k, 7))
    track_ids = list(range(M))
    det_ids = [(i + 1) % M if i < M - 1 else M + 10 for i in range(N)]
    gt, labels = labels_from_ids(track_ids, det_ids)
    return mc, store, TrainingSample(raw, M, N, gt, labels)


def cmd_gradcheck(args, cfg: RunConfig) -> dict:
    from .gnn import sample_loss

    out = _start(args, cfg, {"tolerance": args.tolerance})
    mc, store, sample = gradcheck_problem(cfg["seed"], cfg["model.layers"])
    rep = ad.grad_check(lambda: sample_loss(sample, store, mc)[0], store, args.tolerance)
    text = "\n".join(rep.lines()) + f"\nmax_rel_error={rep.worst:.3e}\n"
    (out / "gradcheck.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    if not rep.passed:
        raise CliError("E_GRADCHECK", f"max relative error {rep.worst:.3e} exceeds {args.tolerance:g}")
    return {"max_rel_error": rep.worst}


def cmd_bench(args, cfg: RunConfig) -> dict:
    from . import bench

    out = _start(args, cfg, {"sizes": args.sizes, "repeats": args.repeats})
    sizes = tuple(int(s) for s in args.sizes.split(","))
    rows = bench.run(sizes, args.repeats, cfg["seed"])
    sys.stdout.write(bench.format_rows(rows))
    sp = bench.speedups(rows)
    for k, v in sp.items():
        print(f"speedup {k}: {v:.1f}x")
    # timings are not reproducible, so they live with the run summary only
    return {"bench": rows, "speedups": sp}


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "track": cmd_track, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--jobs", type=int, help="worker processes (overrides config)")
    common.add_argument("--output", default="out", help="output directory (default: out)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")

    p = _Parser(prog="gnntrack", description="GNN-based 3D multi-object tracking")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("synth", parents=[common], help="generate synthetic sequences")
    s.add_argument("--preset", choices=("clean", "crossing"))
    s.add_argument("--sequences", type=int)
    s = sub.add_parser("train", parents=[common], help="train fusion + GNN")
    s.add_argument("--data", help="sequence root (default: in-memory synthetic data)")
    s = sub.add_parser("track", parents=[common], help="run the tracker over sequences")
    s.add_argument("--data")
    s.add_argument("--checkpoint")
    s.add_argument("--sequences", help="comma-separated sequence ids (default: all)")
    s = sub.add_parser("eval", parents=[common], help="evaluate results against ground truth")
    s.add_argument("--gt")
    s.add_argument("--results")
    s.add_argument("--sequences", help="comma-separated sequence ids (default: all GT files)")
    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    s.add_argument("--tolerance", type=float, default=1e-5)
    s = sub.add_parser("bench", parents=[common], help="kernel and forward-pass throughput")
    s.add_argument("--sizes", default="16,64")
    s.add_argument("--repeats", type=int, default=5)
    return p


def _resolve_config(args) -> RunConfig:
    over = {}
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            raise CliError("E_USAGE", f"--set expects KEY=VALUE, got {item!r}")
        over[key.strip()] = val
    if args.seed is not None:
        over["seed"] = str(args.seed)
    if args.jobs is not None:
        over["jobs"] = str(args.jobs)
    if args.config and not Path(args.config).exists():
        raise CliError("E_MISSING", f"config file not found: {args.config}")
    cfg = load_config(args.config, over)
    if cfg["jobs"] < 1:
        raise ConfigError("jobs must be >= 1")
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    t0 = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        cfg = _resolve_config(args)
        info = COMMANDS[args.command](args, cfg)
        summary = {"command": args.command, "seconds": time.perf_counter() - t0}
        summary.update(info or {})
        _write_json(Path(args.output) / "run_summary.json", summary)
        return 0
    except CliError as e:
        code, msg = e.code, str(e)
    except ConfigError as e:
        code, msg = "E_CONFIG", str(e)
    except FileNotFoundError as e:
        code, msg = "E_MISSING", str(e)
    except (KittiFormatError, AppearanceLookupError) as e:
        code, msg = "E_FORMAT", str(e)
    except (TrainingDivergedError, NonFiniteActivationError) as e:
        code, msg = "E_NUMERIC", str(e)
    except TrackerError as e:
        code = "E_NUMERIC" if isinstance(e.__cause__, FloatingPointError) else "E_FORMAT"
        msg = str(e)
    msg = " ".join(msg.split())
    print(f"error {code}: {msg}", file=sys.stderr)
    return EXIT[code]


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
