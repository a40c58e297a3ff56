"""Online tracking: predict, featurize, interact, match, update, birth and death."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import autograd as ad
from .assoc import greedy_match, match_with_gating
from .core import AssociationProblem, Box2D, Box3D, Detection, Tracklet, TrackState, iou3d_matrix
from .featnet import ZerosProvider, object_features
from .gnn import ModelConfig, build_graph, model_forward
from .kitti import LabelRecord, SequenceData


class TrackerError(RuntimeError):
    def __init__(self, frame: int, cause: BaseException):
        super().__init__(f"frame {frame}: {type(cause).__name__}: {cause}")
        self.frame = frame


@dataclass(frozen=True)
class TrackerConfig:
    min_hits: int = 3
    max_age: int = 2
    threshold: float = 0.5
    classes: Optional[tuple] = ("Car",)  # None keeps every class
    mode: str = "gnn"  # "gnn" or "iou" (greedy 3D IoU baseline)
    iou_threshold: float = 0.1

    def __post_init__(self):
        if self.min_hits < 1:
            raise ValueError("min_hits must be >= 1")
        if self.max_age < 0:
            raise ValueError("max_age must be >= 0")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.mode not in ("gnn", "iou"):
            raise ValueError(f"unknown tracker mode {self.mode!r}")


def _velocity(tr: Tracklet):
    (f1, b1, _), (f2, b2, _) = tr.history[-2], tr.history[-1]
    return (np.asarray(b2.center) - np.asarray(b1.center)) / (f2 - f1)


def predict(tr: Tracklet, frame: Optional[int] = None) -> Box3D:
    """Constant-velocity center extrapolation to ``frame`` (default: next frame)."""
    last_f, last, _ = tr.history[-1]
    if len(tr.history) < 2:
        return last
    dt = (last_f + 1 if frame is None else frame) - last_f
    c = np.asarray(last.center) + _velocity(tr) * dt
    return Box3D(tuple(float(v) for v in c), last.dims, last.yaw)


def predict_2d(tr: Tracklet, frame: Optional[int] = None) -> Box2D:
    """Image-box counterpart of :func:`predict`: the box center moves, the size stays."""
    last_f, _, last = tr.history[-1]
    if len(tr.history) < 2:
        return last
    f1, _, prev = tr.history[-2]
    dt = (last_f + 1 if frame is None else frame) - last_f
    (pu, pv), (cu, cv) = prev.center, last.center
    du = (cu - pu) / (last_f - f1) * dt
    dv = (cv - pv) / (last_f - f1) * dt
    return last.translated(du, dv)


AffinityFn = Callable[[Sequence[Tracklet], Sequence[tuple], Sequence[Detection]], np.ndarray]


class Tracker:
    """Per-sequence tracker state. Not shared between sequences."""

    def __init__(self, cfg: TrackerConfig = TrackerConfig(), store: Optional[ad.ParamStore] = None,
                 model_cfg: Optional[ModelConfig] = None, provider=None,
                 affinity_fn: Optional[AffinityFn] = None):
        if cfg.mode == "gnn" and store is None and affinity_fn is None:
            raise ValueError("gnn mode needs model parameters or an affinity function")
        self.cfg = cfg
        self.store = store
        self.model_cfg = model_cfg or ModelConfig()
        self.provider = provider or ZerosProvider(self.model_cfg.app2d_dim, self.model_cfg.app3d_dim)
        self.affinity_fn = affinity_fn
        self.tracks: list[Tracklet] = []
        self.next_id = 0
        self.frame = -1

    # -- association -----------------------------------------------------

    def _affinity(self, predicted, dets):
        if self.affinity_fn is not None:
            return np.asarray(self.affinity_fn(self.tracks, predicted, dets), dtype=np.float64), None, None
        raw = object_features(self.tracks, predicted, dets, self.provider)
        problem = AssociationProblem(self.tracks, dets, self.frame)
        graph = build_graph(problem, layers=self.model_cfg.layers,
                            gate_radius=self.model_cfg.gate_radius,
                            track_boxes=[p[0] for p in predicted],
                            aggregation=self.model_cfg.aggregation)
        out = model_forward(raw, graph, self.store, self.model_cfg)
        return out.affinity_matrix(), graph.edge_mask, out.node_feats[0].value[len(self.tracks):]

    def _associate(self, frame, dets):
        if not self.tracks or not dets:
            return [], list(range(len(self.tracks))), list(range(len(dets))), None
        predicted = [(predict(t, frame), predict_2d(t, frame)) for t in self.tracks]
        if self.cfg.mode == "iou":
            S = iou3d_matrix([p[0] for p in predicted], [d.box3d for d in dets])
            a = greedy_match(S, self.cfg.iou_threshold)
            return a.matches, a.unmatched_tracks, a.unmatched_detections, None
        A, mask, det_feats = self._affinity(predicted, dets)
        a = match_with_gating(A, self.cfg.threshold, mask)
        return a.matches, a.unmatched_tracks, a.unmatched_detections, det_feats

    # -- lifecycle -------------------------------------------------------

    def _refresh(self, tr: Tracklet, det: Detection, feat) -> None:
        tr.cached_appearance = self.provider(det) if self.cfg.mode == "gnn" else None
        if feat is not None:
            tr.cached_feature = np.array(feat)
        tr.score = det.score
        tr.alpha = det.alpha
        tr.class_label = det.class_label

    def _output(self, tr: Tracklet, det: Detection) -> LabelRecord:
        b = det.box3d
        return LabelRecord(det.frame, tr.id, det.class_label, 0.0, 0, det.alpha, det.box2d,
                           b.dims, b.center, b.yaw, det.score)

    def step(self, frame: int, detections: Sequence[Detection]) -> list[LabelRecord]:
        """Consume the detections of ``frame``; return outputs of confirmed tracks."""
        if frame <= self.frame:
            raise ValueError(f"frame {frame} is not after the last processed frame {self.frame}")
        try:
            return self._step(frame, detections)
        except (ValueError, LookupError, FloatingPointError) as e:
            raise TrackerError(frame, e) from e

    def _step(self, frame, detections):
        self.frame = frame - 1
        dets = [d for d in detections if self.cfg.classes is None or d.class_label in self.cfg.classes]
        for d in dets:
            if d.frame != frame:
                raise ValueError(f"detection tagged frame {d.frame} passed to frame {frame}")
        matches, um_t, um_d, det_feats = self._associate(frame, dets)
        out = []
        for i, j in matches:
            tr, det = self.tracks[i], dets[j]
            tr.append(frame, det.box3d, det.box2d)
            tr.hits += 1
            tr.misses = 0
            self._refresh(tr, det, None if det_feats is None else det_feats[j])
            if tr.hits >= self.cfg.min_hits:
                tr.confirmed_once = True
            tr.state = TrackState.CONFIRMED if tr.confirmed_once else TrackState.TENTATIVE
            if tr.confirmed_once:
                out.append(self._output(tr, det))
        keep = []
        dead = set()
        for i in um_t:
            tr = self.tracks[i]
            tr.misses += 1
            tr.hits = 0
            tr.state = TrackState.LOST
            if tr.misses > self.cfg.max_age:
                dead.add(i)
        keep = [t for k, t in enumerate(self.tracks) if k not in dead]
        for j in um_d:
            det = dets[j]
            tr = Tracklet(self.next_id, [(frame, det.box3d, det.box2d)], hits=1)
            self.next_id += 1
            self._refresh(tr, det, None if det_feats is None else det_feats[j])
            if tr.hits >= self.cfg.min_hits:
                tr.confirmed_once = True
                tr.state = TrackState.CONFIRMED
                out.append(self._output(tr, det))
            keep.append(tr)
        self.tracks = keep
        self.frame = frame
        out.sort(key=lambda r: r.track_id)
        return out


@dataclass
class TrackingResult:
    frames: list  # per frame: LabelRecords of confirmed tracks
    stats: dict = field(default_factory=dict)

    def records(self) -> list[LabelRecord]:
        return [r for f in self.frames for r in f]


def run_sequence(seq: SequenceData, cfg: TrackerConfig = TrackerConfig(),
                 store: Optional[ad.ParamStore] = None, model_cfg: Optional[ModelConfig] = None,
                 provider=None, affinity_fn: Optional[AffinityFn] = None) -> TrackingResult:
    tracker = Tracker(cfg, store, model_cfg, provider, affinity_fn)
    frames = []
    t0 = time.perf_counter()
    for f, dets in enumerate(seq.detections):
        frames.append(tracker.step(f, dets))
    dt = time.perf_counter() - t0
    stats = {"sequence": seq.seq_id, "frames": len(frames), "seconds": dt,
             "fps": len(frames) / dt if dt > 0 else float("inf"),
             "tracks_created": tracker.next_id}
    return TrackingResult(frames, stats)
