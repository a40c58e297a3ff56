"""Four-branch object features (2D/3D appearance, 2D/3D motion) and their fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autograd as ad
from .core import Box2D, Box3D, Detection, Tracklet, wrap_angle
from .rng import CounterRNG, glorot_uniform

BRANCHES = ("app2d", "app3d", "mot2d", "mot3d")
MOTION_2D_DIM = 4
MOTION_3D_DIM = 7


class AppearanceLookupError(LookupError):
    pass


@dataclass
class RawFeatures:
    """Per-object branch inputs, one row per object."""

    app2d: np.ndarray
    app3d: np.ndarray
    mot2d: np.ndarray
    mot3d: np.ndarray

    def __post_init__(self):
        self.app2d = np.asarray(self.app2d, dtype=np.float64).reshape(len(self.app2d), -1)
        self.app3d = np.asarray(self.app3d, dtype=np.float64).reshape(len(self.app3d), -1)
        self.mot2d = np.asarray(self.mot2d, dtype=np.float64).reshape(-1, MOTION_2D_DIM)
        self.mot3d = np.asarray(self.mot3d, dtype=np.float64).reshape(-1, MOTION_3D_DIM)
        n = {len(self.app2d), len(self.app3d), len(self.mot2d), len(self.mot3d)}
        if len(n) != 1:
            raise ValueError(f"branch row counts differ: {sorted(n)}")
        if not (np.isfinite(self.mot2d).all() and np.isfinite(self.mot3d).all()):
            raise ValueError("non-finite motion feature")

    def __len__(self) -> int:
        return len(self.mot2d)

    def branch(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def take(self, idx) -> "RawFeatures":
        idx = np.asarray(idx, dtype=np.int64)
        return RawFeatures(self.app2d[idx], self.app3d[idx], self.mot2d[idx], self.mot3d[idx])

    @classmethod
    def concat(cls, parts: Sequence["RawFeatures"]) -> "RawFeatures":
        return cls(*(np.concatenate([p.branch(b) for p in parts], axis=0) for b in BRANCHES))


def motion_feat_2d(prev: Box2D, cur: Box2D) -> np.ndarray:
    (pcx, pcy), (ccx, ccy) = prev.center, cur.center
    return np.array([(ccx - pcx) / prev.width, (ccy - pcy) / prev.height,
                     math.log(cur.width / prev.width), math.log(cur.height / prev.height)])


def motion_feat_3d(prev: Box3D, cur: Box3D) -> np.ndarray:
    d = [c - p for c, p in zip(cur.center, prev.center)]
    return np.array([*d, wrap_angle(cur.yaw - prev.yaw),
                     *(math.log(c / p) for c, p in zip(cur.dims, prev.dims))])


# ---------------------------------------------------------------------------
# appearance providers
# ---------------------------------------------------------------------------


class ZerosProvider:
    name = "zeros"

    def __init__(self, dim2d: int = 32, dim3d: int = 32):
        self.dims = (dim2d, dim3d)

    def detection(self, det: Detection):
        return np.zeros(self.dims[0]), np.zeros(self.dims[1])

    def __call__(self, obj):
        if isinstance(obj, Tracklet):
            return _cached(obj, self.dims)
        return self.detection(obj)


class EmbeddingProvider:
    """Passes through the embeddings attached to each detection (synthetic data)."""

    name = "synthetic"

    def __init__(self, dim2d: int = 32, dim3d: int = 32):
        self.dims = (dim2d, dim3d)

    def detection(self, det: Detection):
        if det.appearance_2d is None or det.appearance_3d is None:
            raise AppearanceLookupError(f"frame {det.frame}, row {det.row}: detection carries no embedding")
        a2, a3 = det.appearance_2d, det.appearance_3d
        if a2.shape != (self.dims[0],) or a3.shape != (self.dims[1],):
            raise AppearanceLookupError(
                f"frame {det.frame}, row {det.row}: embedding dims {a2.shape}/{a3.shape} != {self.dims}")
        return a2, a3

    def __call__(self, obj):
        if isinstance(obj, Tracklet):
            return _cached(obj, self.dims)
        return self.detection(obj)


class FileProvider:
    """Rows of two FEAT arrays, indexed by the detection's row in its source file."""

    name = "file"

    def __init__(self, feats2d: np.ndarray, feats3d: np.ndarray):
        if len(feats2d) != len(feats3d):
            raise ValueError(f"feature files disagree on row count: {len(feats2d)} vs {len(feats3d)}")
        self.feats2d = np.asarray(feats2d)
        self.feats3d = np.asarray(feats3d)
        self.dims = (self.feats2d.shape[1] if self.feats2d.ndim == 2 else 0,
                     self.feats3d.shape[1] if self.feats3d.ndim == 2 else 0)

    def row(self, k: int, frame: int = -1):
        if not 0 <= k < len(self.feats2d):
            raise AppearanceLookupError(
                f"frame {frame}, object row {k}: out of range for {len(self.feats2d)} feature rows")
        return self.feats2d[k], self.feats3d[k]

    def detection(self, det: Detection):
        return self.row(det.row, det.frame)

    def __call__(self, obj):
        if isinstance(obj, Tracklet):
            return _cached(obj, self.dims)
        return self.detection(obj)


def _cached(tr: Tracklet, dims):
    if tr.cached_appearance is None:
        return np.zeros(dims[0]), np.zeros(dims[1])
    return tr.cached_appearance


def make_provider(kind: str, dim2d: int, dim3d: int, feats2d=None, feats3d=None):
    if kind == "zeros":
        return ZerosProvider(dim2d, dim3d)
    if kind == "synthetic":
        return EmbeddingProvider(dim2d, dim3d)
    if kind == "file":
        if feats2d is None or feats3d is None:
            raise AppearanceLookupError("file provider needs both FEAT arrays")
        return FileProvider(feats2d, feats3d)
    raise ValueError(f"unknown appearance provider {kind!r}")


def object_features(tracks: Sequence[Tracklet], predicted: Sequence[tuple],
                    detections: Sequence[Detection], provider) -> RawFeatures:
    """Raw features for tracks (rows first) then detections.

    Track motion compares the last observed boxes with the predicted ones;
    detections have no history, so their motion rows are zero.
    """
    dims = provider.dims
    n = len(tracks) + len(detections)
    app2d = np.zeros((n, dims[0]))
    app3d = np.zeros((n, dims[1]))
    mot2d = np.zeros((n, MOTION_2D_DIM))
    mot3d = np.zeros((n, MOTION_3D_DIM))
    for i, (tr, (p3, p2)) in enumerate(zip(tracks, predicted)):
        app2d[i], app3d[i] = provider(tr)
        mot2d[i] = motion_feat_2d(tr.last_box2d, p2)
        mot3d[i] = motion_feat_3d(tr.last_box3d, p3)
    off = len(tracks)
    for j, det in enumerate(detections):
        app2d[off + j], app3d[off + j] = provider(det)
    return RawFeatures(app2d, app3d, mot2d, mot3d)


# ---------------------------------------------------------------------------
# fusion
# ---------------------------------------------------------------------------


def init_fusion_params(store: ad.ParamStore, rng: CounterRNG, in_dims: dict,
                       branch_dim: int = 32, node_dim: int = 64) -> None:
    for b in BRANCHES:
        store.add(f"fuse.{b}.W", glorot_uniform(rng, in_dims[b], branch_dim))
        store.add(f"fuse.{b}.b", np.zeros((1, branch_dim)))
    store.add("fuse.head.W", glorot_uniform(rng, 4 * branch_dim, node_dim))
    store.add("fuse.head.b", np.zeros((1, node_dim)))


def fuse(raw: RawFeatures, store: ad.ParamStore,
         branch_mask: Optional[Sequence[bool]] = None) -> ad.DiffTensor:
    """Per-branch linear + ReLU, concatenation, then linear + ReLU to the node dim.

    A masked-off branch contributes a zero block, so the head keeps its shape.
    """
    mask = tuple(branch_mask) if branch_mask is not None else (True,) * len(BRANCHES)
    n = len(raw)
    parts = []
    for b, on in zip(BRANCHES, mask):
        W = store[f"fuse.{b}.W"]
        x = raw.branch(b)
        if x.shape[1] != W.shape[0]:
            raise ad.ShapeError(f"fuse: branch {b} has dim {x.shape[1]}, weights expect {W.shape[0]}")
        if on:
            parts.append(ad.relu(ad.add_row(ad.matmul(x, W), store[f"fuse.{b}.b"])))
        else:
            parts.append(np.zeros((n, W.shape[1])))
    h = ad.concat(parts, axis=1)
    return ad.relu(ad.add_row(ad.matmul(h, store["fuse.head.W"]), store["fuse.head.b"]))
