"""Deterministic synthetic tracking scenarios.

Objects move on the ground plane (x-z) at constant velocity. The ``crossing``
preset turns pairs of objects into head-on encounters: each pair meets,
dwells on the same spot and then continues, so the two swap positions within
ten frames while their boxes fully overlap. Detections are noisy copies of the ground-truth boxes and
carry identity-coded appearance embeddings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Box3D, Detection, NotProjectableError, project_box, wrap_angle
from .kitti import (LabelRecord, SequenceData, format_calib, write_detections, write_feat,
                    write_results)
from .rng import CounterRNG

DEFAULT_P2 = np.array([[720.0, 0.0, 620.0, 0.0],
                       [0.0, 720.0, 190.0, 0.0],
                       [0.0, 0.0, 1.0, 0.0]])

GROUND_Y = 1.65

# stream ids, one per independent random decision family
_S_OBJECTS, _S_DETECT, _S_CLUTTER, _S_APPEAR, _S_ORDER = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class ScenarioConfig:
    num_objects: int = 6
    num_frames: int = 60
    x_range: tuple = (-20.0, 20.0)
    z_range: tuple = (6.0, 60.0)
    speed_range: tuple = (0.1, 0.5)  # meters per frame
    sigma_pos: float = 0.05
    sigma_dim: float = 0.02
    sigma_yaw: float = 0.02
    dropout: float = 0.0
    fp_rate: float = 0.2  # expected clutter detections per frame
    app_dim: int = 32
    sigma_app: float = 0.05
    seed: int = 0
    crossing: bool = False
    crossing_frame: Optional[int] = None  # frame at which the pair meets
    crossing_speed: float = 0.5
    crossing_dwell: int = 2
    crossing_pairs: int = 1
    tp_score: tuple = (0.5, 1.0)
    fp_score: tuple = (0.05, 0.55)

    def __post_init__(self):
        for name in ("dropout",):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        for name in ("sigma_pos", "sigma_dim", "sigma_yaw", "sigma_app", "fp_rate"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.num_frames < 2:
            raise ValueError("num_frames must be >= 2")
        if self.crossing and self.num_objects < 2 * self.crossing_pairs:
            raise ValueError(f"{self.crossing_pairs} crossing pairs need {2 * self.crossing_pairs} objects")

    @classmethod
    def preset(cls, name: str, **overrides) -> "ScenarioConfig":
        if name == "clean":
            base = cls()
        elif name == "crossing":
            base = cls(num_objects=4, num_frames=30, crossing=True, crossing_pairs=2)
        else:
            raise ValueError(f"unknown preset {name!r} (expected 'clean' or 'crossing')")
        return replace(base, **overrides)


@dataclass
class Scenario:
    sequence: SequenceData
    identities: list  # per frame: int array, GT id per detection, -1 for clutter
    base_2d: np.ndarray  # (num_objects, app_dim)
    base_3d: np.ndarray
    config: ScenarioConfig = field(repr=False, default=None)


def _unit_rows(rng: CounterRNG, n: int, dim: int) -> np.ndarray:
    v = rng.normal(n * dim).reshape(n, dim)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _heading_yaw(vx: float, vz: float) -> float:
    # a box's length axis maps to (cos ry, -sin ry) in the x-z plane
    return wrap_angle(math.atan2(-vz, vx))


def _trajectories(cfg: ScenarioConfig, rng: CounterRNG):
    """Per-object arrays: positions (T, 2), yaw (T,), alive (T,), dims (3,)."""
    T = cfg.num_frames
    x0, x1 = cfg.x_range
    z0, z1 = cfg.z_range
    # inner region keeps starting points away from the border
    ix = (x0 + 0.25 * (x1 - x0), x1 - 0.25 * (x1 - x0))
    iz = (z0 + 0.25 * (z1 - z0), z1 - 0.25 * (z1 - z0))
    t = np.arange(T, dtype=np.float64)
    objs = []
    for k in range(cfg.num_objects):
        dims = np.array([rng.uniform(low=1.4, high=1.7), rng.uniform(low=1.5, high=1.8),
                         rng.uniform(low=3.5, high=4.5)])
        px, pz = rng.uniform(low=ix[0], high=ix[1]), rng.uniform(low=iz[0], high=iz[1])
        heading = rng.uniform(low=-math.pi, high=math.pi)
        speed = rng.uniform(low=cfg.speed_range[0], high=cfg.speed_range[1])
        vx, vz = speed * math.cos(heading), speed * math.sin(heading)
        pos = np.stack([px + vx * t, pz + vz * t], axis=1)
        yaw = np.full(T, _heading_yaw(vx, vz)) if speed > 0 else np.full(T, heading)
        objs.append([pos, yaw, dims])
    for k in range(cfg.crossing_pairs if cfg.crossing else 0):
        a, b = 2 * k, 2 * k + 1
        tc = cfg.crossing_frame if cfg.crossing_frame is not None else T // 2 - 1
        s = cfg.crossing_speed
        meet = np.array([rng.uniform(low=ix[0], high=ix[1]), rng.uniform(low=iz[0], high=iz[1])])
        heading = rng.uniform(low=-math.pi, high=math.pi)
        u = np.array([math.cos(heading), math.sin(heading)])
        leave = tc + cfg.crossing_dwell - 1
        # signed progress along u: negative before the meeting, 0 while dwelling
        prog = np.where(t < tc, -(tc - t) * s, np.where(t > leave, (t - leave) * s, 0.0))
        shared = objs[a][2]
        objs[a] = [meet + prog[:, None] * u, np.full(T, _heading_yaw(*u)), shared]
        objs[b] = [meet - prog[:, None] * u, np.full(T, _heading_yaw(*(-u))), shared.copy()]
    out = []
    for pos, yaw, dims in objs:
        inside = (pos[:, 0] >= x0) & (pos[:, 0] <= x1) & (pos[:, 1] >= z0) & (pos[:, 1] <= z1)
        # the first exit ends the track; it never re-enters
        alive = np.cumprod(inside).astype(bool)
        out.append((pos, yaw, alive, dims))
    return out


def generate_scenario(cfg: ScenarioConfig, seq_id: str = "0000",
                      P2: Optional[np.ndarray] = None) -> Scenario:
    P2 = DEFAULT_P2 if P2 is None else np.asarray(P2, dtype=np.float64)
    r_obj = CounterRNG(cfg.seed, _S_OBJECTS)
    r_det = CounterRNG(cfg.seed, _S_DETECT)
    r_fp = CounterRNG(cfg.seed, _S_CLUTTER)
    r_app = CounterRNG(cfg.seed, _S_APPEAR)
    r_ord = CounterRNG(cfg.seed, _S_ORDER)

    trajs = _trajectories(cfg, r_obj)
    base_2d = _unit_rows(r_app, cfg.num_objects, cfg.app_dim)
    base_3d = _unit_rows(r_app, cfg.num_objects, cfg.app_dim)

    def embed(base):
        v = base + r_app.normal(cfg.app_dim, cfg.sigma_app)
        return (v / np.linalg.norm(v)).astype(np.float32)

    labels, frames, identities = [], [], []
    row = 0
    for f in range(cfg.num_frames):
        gt_f, dets, ids = [], [], []
        for k, (pos, yaw, alive, dims) in enumerate(trajs):
            if not alive[f]:
                continue
            box = Box3D((pos[f, 0], GROUND_Y, pos[f, 1]), tuple(dims), yaw[f])
            try:
                box2d = project_box(box, P2)
            except NotProjectableError:
                continue
            alpha = wrap_angle(box.yaw - math.atan2(box.center[0], box.center[2]))
            gt_f.append(LabelRecord(f, k, "Car", 0.0, 0, alpha, box2d, box.dims, box.center,
                                    box.yaw))
            if cfg.dropout > 0.0 and r_det.uniform() < cfg.dropout:
                continue
            noise = r_det.normal(7)
            noisy = Box3D(
                (box.center[0] + cfg.sigma_pos * noise[0], box.center[1] + cfg.sigma_pos * noise[1],
                 box.center[2] + cfg.sigma_pos * noise[2]),
                tuple(max(d + cfg.sigma_dim * e, 0.1) for d, e in zip(box.dims, noise[3:6])),
                box.yaw + cfg.sigma_yaw * noise[6])
            try:
                nbox2d = project_box(noisy, P2)
            except NotProjectableError:
                continue
            score = r_det.uniform(low=cfg.tp_score[0], high=cfg.tp_score[1])
            dets.append(Detection(f, noisy, nbox2d, score, "Car",
                                  appearance_2d=embed(base_2d[k]), appearance_3d=embed(base_3d[k]),
                                  alpha=alpha))
            ids.append(k)
        for _ in range(r_fp.poisson(cfg.fp_rate)):
            p = r_fp.uniform(7)
            x = cfg.x_range[0] + p[0] * (cfg.x_range[1] - cfg.x_range[0])
            z = cfg.z_range[0] + p[1] * (cfg.z_range[1] - cfg.z_range[0])
            box = Box3D((x, GROUND_Y, z), (1.4 + 0.3 * p[2], 1.5 + 0.3 * p[3], 3.5 + p[4]),
                        -math.pi + 2 * math.pi * p[5])
            try:
                box2d = project_box(box, P2)
            except NotProjectableError:
                continue
            score = cfg.fp_score[0] + p[6] * (cfg.fp_score[1] - cfg.fp_score[0])
            a2 = _unit_rows(r_fp, 1, cfg.app_dim)[0].astype(np.float32)
            a3 = _unit_rows(r_fp, 1, cfg.app_dim)[0].astype(np.float32)
            dets.append(Detection(f, box, box2d, score, "Car", appearance_2d=a2, appearance_3d=a3,
                                  alpha=wrap_angle(box.yaw - math.atan2(x, z))))
            ids.append(-1)
        order = np.argsort(r_ord.uniform(len(dets)), kind="stable") if dets else []
        dets = [replace(dets[i], row=row + n) for n, i in enumerate(order)]
        ids = np.array([ids[i] for i in order], dtype=np.int64)
        row += len(dets)
        labels.append(gt_f)
        frames.append(dets)
        identities.append(ids)
    seq = SequenceData(seq_id, frames, labels, P2.copy())
    return Scenario(seq, identities, base_2d, base_3d, cfg)


def write_scenario(root, scenario: Scenario) -> None:
    """Write a scenario in the on-disk layout read by :func:`kitti.load_sequence`."""
    root = Path(root)
    seq = scenario.sequence
    for sub in ("label_02", "detection", "calib", "appearance", "identity"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    (root / "label_02" / f"{seq.seq_id}.txt").write_text(write_results(seq.all_labels()),
                                                         encoding="utf-8")
    (root / "detection" / f"{seq.seq_id}.txt").write_text(write_detections(seq.detections),
                                                          encoding="utf-8")
    (root / "calib" / f"{seq.seq_id}.txt").write_text(format_calib(seq.P2), encoding="utf-8")
    flat = [d for frame in seq.detections for d in frame]
    dim = scenario.config.app_dim if scenario.config else 0
    write_feat(root / "appearance" / f"{seq.seq_id}_2d.feat",
               np.array([d.appearance_2d for d in flat]).reshape(len(flat), dim))
    write_feat(root / "appearance" / f"{seq.seq_id}_3d.feat",
               np.array([d.appearance_3d for d in flat]).reshape(len(flat), dim))
    ids = [int(i) for frame in scenario.identities for i in frame]
    (root / "identity" / f"{seq.seq_id}.txt").write_text("".join(f"{i}\n" for i in ids),
                                                         encoding="utf-8")
