"""Frame-pair training samples and the multi-epoch training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autograd as ad
from .core import Tracklet, iou3d_matrix
from .featnet import RawFeatures, object_features
from .gnn import (ModelConfig, OptimizerConfig, TrainingSample, _greedy_claim, init_params,
                  labels_from_ids, train_epoch)
from .kitti import SequenceData
from .rng import CounterRNG
from .tracker import predict, predict_2d


def identities_from_labels(seq: SequenceData, iou_threshold: float = 0.25) -> list[np.ndarray]:
    """Per-frame GT id for each detection by greedy best-IoU claiming (-1 = none)."""
    out = []
    for f, dets in enumerate(seq.detections):
        gts = [r for r in (seq.labels[f] if f < len(seq.labels) else []) if not r.is_dontcare]
        ids = np.full(len(dets), -1, dtype=np.int64)
        if dets and gts:
            iou = iou3d_matrix([d.box3d for d in dets], [r.box3d for r in gts])
            cols = _greedy_claim(iou, iou_threshold)
            ids[cols >= 0] = [gts[c].track_id for c in cols[cols >= 0]]
        out.append(ids)
    return out


def identities_from_rows(seq: SequenceData, flat_ids: Sequence[int]) -> list[np.ndarray]:
    """Split a per-row identity list (as stored on disk) into frames."""
    flat_ids = np.asarray(flat_ids, dtype=np.int64)
    out = []
    for dets in seq.detections:
        rows = [d.row for d in dets]
        if any(r < 0 or r >= len(flat_ids) for r in rows):
            raise LookupError(f"identity list has {len(flat_ids)} rows, detection row out of range")
        out.append(flat_ids[rows] if rows else np.zeros(0, dtype=np.int64))
    return out


def _pseudo_tracks(seq: SequenceData, ids: list, t: int, provider) -> list[Tracklet]:
    """Tracks at frame t built from detections at t (and t-1 for the same identity)."""
    prev = {}
    if t > 0:
        for d, k in zip(seq.detections[t - 1], ids[t - 1]):
            if k >= 0:
                prev.setdefault(int(k), d)
    tracks = []
    for n, (d, k) in enumerate(zip(seq.detections[t], ids[t])):
        hist = []
        if k >= 0 and int(k) in prev:
            p = prev[int(k)]
            hist.append((t - 1, p.box3d, p.box2d))
        hist.append((t, d.box3d, d.box2d))
        tr = Tracklet(n, hist, hits=len(hist))
        tr.cached_appearance = provider(d)
        tracks.append(tr)
    return tracks


def frame_pair_samples(seq: SequenceData, ids: list, provider) -> list[TrainingSample]:
    """One sample per consecutive frame pair with objects on both sides."""
    samples = []
    for t in range(len(seq.detections) - 1):
        dets = seq.detections[t + 1]
        if not seq.detections[t] or not dets:
            continue
        tracks = _pseudo_tracks(seq, ids, t, provider)
        predicted = [(predict(tr, t + 1), predict_2d(tr, t + 1)) for tr in tracks]
        raw = object_features(tracks, predicted, dets, provider)
        gt, labels = labels_from_ids(ids[t], ids[t + 1])
        samples.append(TrainingSample(raw, len(tracks), len(dets), gt, labels))
    return samples


def random_rotation(rng: CounterRNG, dim: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian matrix, sign-fixed)."""
    q, r = np.linalg.qr(rng.normal(dim * dim).reshape(dim, dim))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def rotate_appearance(sample: TrainingSample, rng: CounterRNG) -> TrainingSample:
    """Copy of ``sample`` with both appearance blocks under fresh random rotations.

    Distances between embeddings are unchanged, so identities cannot be
    memorized by their absolute direction.
    """
    raw = sample.raw
    r2 = random_rotation(rng, raw.app2d.shape[1]) if raw.app2d.shape[1] else np.zeros((0, 0))
    r3 = random_rotation(rng, raw.app3d.shape[1]) if raw.app3d.shape[1] else np.zeros((0, 0))
    out = RawFeatures(raw.app2d @ r2, raw.app3d @ r3, raw.mot2d, raw.mot3d)
    return TrainingSample(out, sample.M, sample.N, sample.gt, sample.labels, sample.graph)


@dataclass
class TrainResult:
    store: ad.ParamStore
    epoch_losses: list


def train(samples: Sequence[TrainingSample], cfg: ModelConfig, epochs: int = 10,
          opt: OptimizerConfig = OptimizerConfig(), seed: int = 0,
          store: Optional[ad.ParamStore] = None, shuffle: bool = True,
          augment: bool = True, schedule: str = "constant") -> TrainResult:
    """Run ``epochs`` epochs from ``seed``.

    Sample order is reshuffled every epoch; with ``augment`` each sample's
    appearance vectors get a fresh random rotation every epoch. ``schedule``
    is ``constant`` or ``cosine`` (per-step decay from ``opt.lr`` to 0).
    """
    if schedule not in ("constant", "cosine"):
        raise ValueError(f"unknown schedule {schedule!r}")
    store = store if store is not None else init_params(cfg, seed)
    r_order = CounterRNG(seed, stream=200)
    r_aug = CounterRNG(seed, stream=201)
    losses = []
    for _ in range(epochs):
        order = np.argsort(r_order.uniform(len(samples)), kind="stable") if shuffle else range(len(samples))
        batch = [samples[k] for k in order]
        if augment:
            batch = [rotate_appearance(s, r_aug) for s in batch]
        lr_at = None
        if schedule == "cosine":
            base = len(losses) * len(batch)
            total = epochs * len(batch)
            lr_at = lambda k, base=base: 0.5 * opt.lr * (1.0 + math.cos(math.pi * (base + k) / total))
        losses.append(train_epoch(batch, store, cfg, opt, lr_at))
    return TrainResult(store, losses)
