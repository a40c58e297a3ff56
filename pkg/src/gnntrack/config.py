"""Run configuration: flat ``key = value`` files with ``#`` comments.

Keys carry dotted section prefixes (``tracker.min_hits``). Every key has a
declared type and default; unknown keys and unparseable values are errors.
Lists are comma separated; booleans accept true/false/1/0/yes/no.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Union

from .featnet import BRANCHES
from .gnn import ModelConfig, OptimizerConfig
from .metrics import EvalConfig
from .synth import ScenarioConfig
from .tracker import TrackerConfig


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _str_list(s: str) -> tuple:
    return tuple(t.strip() for t in s.split(",") if t.strip())


def _bool_list(s: str) -> tuple:
    return tuple(_bool(t) for t in _str_list(s))


def _classes(s: str):
    v = _str_list(s)
    return None if v in ((), ("all",), ("*",)) else v


def _float_pair(s: str) -> tuple:
    v = tuple(float(t) for t in _str_list(s))
    if len(v) != 2:
        raise ValueError(f"expected two numbers, got {s!r}")
    return v


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "all"
    if isinstance(v, tuple):
        return ",".join(_fmt_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    doc: str


_m, _o, _t, _e, _s = ModelConfig(), OptimizerConfig(), TrackerConfig(), EvalConfig(), ScenarioConfig()

SCHEMA: dict[str, Key] = {
    "seed": Key(int, 0, "master seed"),
    "jobs": Key(int, 1, "worker processes for per-sequence work"),
    # tracker
    "tracker.min_hits": Key(int, _t.min_hits, "consecutive matches before a track is confirmed"),
    "tracker.max_age": Key(int, _t.max_age, "missed frames tolerated before deletion"),
    "tracker.threshold": Key(float, _t.threshold, "minimum affinity of an accepted match"),
    "tracker.classes": Key(_classes, _t.classes, "detection classes to track ('all' keeps every class)"),
    "tracker.mode": Key(str, _t.mode, "gnn or iou (greedy 3D IoU baseline)"),
    "tracker.iou_threshold": Key(float, _t.iou_threshold, "minimum IoU for the greedy baseline"),
    # model
    "model.app2d_dim": Key(int, _m.app2d_dim, "raw 2D appearance dim"),
    "model.app3d_dim": Key(int, _m.app3d_dim, "raw 3D appearance dim"),
    "model.branch_dim": Key(int, _m.branch_dim, "per-branch fused dim"),
    "model.node_dim": Key(int, _m.node_dim, "node feature dim D"),
    "model.edge_hidden": Key(int, _m.edge_hidden, "edge regressor hidden width H"),
    "model.layers": Key(int, _m.layers, "message passing layers L (0 disables interaction)"),
    "model.aggregation": Key(str, _m.aggregation, "diff or mean"),
    "model.edge_input": Key(str, _m.edge_input, "absdiff or concat"),
    "model.branch_mask": Key(_bool_list, _m.branch_mask, "enable flags for " + ",".join(BRANCHES)),
    "model.gate_radius": Key(float, _m.gate_radius, "center-distance gate in meters (0 disables)"),
    # losses
    "loss.margin": Key(float, _m.margin, "triplet margin"),
    "loss.triplet_weight": Key(float, _m.triplet_weight, "weight of the triplet term"),
    # training
    "train.lr": Key(float, _o.lr, "Adam learning rate"),
    "train.beta1": Key(float, _o.beta1, "Adam beta1"),
    "train.beta2": Key(float, _o.beta2, "Adam beta2"),
    "train.eps": Key(float, _o.eps, "Adam epsilon"),
    "train.weight_decay": Key(float, _o.weight_decay, "decoupled weight decay"),
    "train.schedule": Key(str, "cosine", "learning-rate schedule: constant or cosine"),
    "train.epochs": Key(int, 20, "training epochs"),
    "train.augment": Key(_bool, True, "random orthogonal rotation of appearance vectors per sample"),
    "train.sequences": Key(int, 20, "synthetic training sequences when no data dir is given"),
    "train.presets": Key(_str_list, ("clean", "crossing"), "synthetic presets cycled over training sequences"),
    "features.appearance": Key(str, "synthetic", "appearance provider: zeros, synthetic or file"),
    # synthetic data
    "synth.preset": Key(str, "clean", "clean or crossing"),
    "synth.sequences": Key(int, 1, "number of sequences to generate"),
    "synth.num_objects": Key(int, -1, "objects per sequence (-1: preset value)"),
    "synth.num_frames": Key(int, -1, "frames per sequence (-1: preset value)"),
    "synth.sigma_pos": Key(float, _s.sigma_pos, "detection center noise (m)"),
    "synth.sigma_dim": Key(float, _s.sigma_dim, "detection size noise (m)"),
    "synth.sigma_yaw": Key(float, _s.sigma_yaw, "detection heading noise (rad)"),
    "synth.dropout": Key(float, _s.dropout, "probability a true detection is dropped"),
    "synth.fp_rate": Key(float, _s.fp_rate, "expected clutter detections per frame"),
    "synth.app_dim": Key(int, _s.app_dim, "embedding dim"),
    "synth.sigma_app": Key(float, _s.sigma_app, "embedding noise"),
    "synth.x_range": Key(_float_pair, _s.x_range, "world x extent (m)"),
    "synth.z_range": Key(_float_pair, _s.z_range, "world z extent (m)"),
    # paths (command-line flags take precedence)
    "paths.data": Key(str, "", "sequence root for train/track"),
    "paths.checkpoint": Key(str, "", "model checkpoint for track"),
    "paths.gt": Key(str, "", "ground-truth root for eval"),
    "paths.results": Key(str, "", "results directory for eval"),
    # evaluation
    "eval.tau": Key(float, _e.tau, "3D IoU match threshold"),
    "eval.criterion": Key(str, _e.criterion, "iou or distance"),
    "eval.dist_threshold": Key(float, _e.dist_threshold, "center distance threshold (m)"),
    "eval.recall_points": Key(int, _e.num_recall_points, "recall points for sAMOTA/AMOTA/AMOTP"),
    "eval.classes": Key(_classes, _e.classes, "evaluated classes"),
    "eval.dontcare_iou": Key(float, _e.dontcare_iou, "2D IoU with a DontCare region that exempts a FP"),
}


class RunConfig(Mapping):
    """Resolved settings; iterate for a full snapshot."""

    def __init__(self, values: Optional[dict] = None):
        self._v = {k: entry.default for k, entry in SCHEMA.items()}
        for k, v in (values or {}).items():
            self._v[k] = v

    def __getitem__(self, key: str):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        return self._v[key]

    def __iter__(self):
        return iter(SCHEMA)

    def __len__(self) -> int:
        return len(SCHEMA)

    def with_overrides(self, pairs: Mapping[str, str]) -> "RunConfig":
        vals = dict(self._v)
        for k, raw in pairs.items():
            vals[k] = parse_value(k, raw)
        return RunConfig(vals)

    def snapshot(self) -> dict:
        return {k: _fmt_value(self._v[k]) for k in SCHEMA}

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.snapshot().items())

    # -- typed views -----------------------------------------------------

    def model(self) -> ModelConfig:
        try:
            return ModelConfig(
                app2d_dim=self["model.app2d_dim"], app3d_dim=self["model.app3d_dim"],
                branch_dim=self["model.branch_dim"], node_dim=self["model.node_dim"],
                edge_hidden=self["model.edge_hidden"], layers=self["model.layers"],
                aggregation=self["model.aggregation"], edge_input=self["model.edge_input"],
                branch_mask=self["model.branch_mask"], gate_radius=self["model.gate_radius"],
                margin=self["loss.margin"], triplet_weight=self["loss.triplet_weight"])
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(self["train.lr"], self["train.beta1"], self["train.beta2"], self["train.eps"],
                               self["train.weight_decay"])

    def tracker(self) -> TrackerConfig:
        try:
            return TrackerConfig(self["tracker.min_hits"], self["tracker.max_age"],
                                 self["tracker.threshold"], self["tracker.classes"],
                                 self["tracker.mode"], self["tracker.iou_threshold"])
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def evaluation(self) -> EvalConfig:
        try:
            return EvalConfig(self["eval.tau"], self["eval.criterion"], self["eval.dist_threshold"],
                              self["eval.recall_points"], self["eval.classes"], self["eval.dontcare_iou"])
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def scenario(self, preset: Optional[str] = None, seed: int = 0) -> ScenarioConfig:
        over = {k: self[f"synth.{k}"] for k in ("sigma_pos", "sigma_dim", "sigma_yaw", "dropout",
                                                "fp_rate", "app_dim", "sigma_app", "x_range", "z_range")}
        for k in ("num_objects", "num_frames"):
            if self[f"synth.{k}"] >= 0:
                over[k] = self[f"synth.{k}"]
        try:
            return ScenarioConfig.preset(preset or self["synth.preset"], seed=seed, **over)
        except ValueError as e:
            raise ConfigError(str(e)) from None


def parse_value(key: str, raw: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return SCHEMA[key].parse(raw.strip())
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {e}") from None


def parse_config(text: str) -> dict:
    """Parse config text into ``{key: raw string}`` without applying types."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, str]] = None) -> RunConfig:
    raw = {}
    if path is not None:
        raw.update(parse_config(Path(path).read_text(encoding="utf-8")))
    raw.update(overrides or {})
    return RunConfig().with_overrides(raw)


def describe() -> str:
    """Documented default config, usable as a starting file."""
    lines = []
    for k, entry in SCHEMA.items():
        lines.append(f"# {entry.doc}")
        lines.append(f"{k} = {_fmt_value(entry.default)}")
    return "\n".join(lines) + "\n"
