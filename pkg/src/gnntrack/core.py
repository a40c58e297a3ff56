"""Domain types and box geometry.

Coordinates follow the KITTI camera frame: x right, y down, z forward. A
3D box center is the center of its bottom face, so the box spans
``[y - h, y]`` vertically.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels

TWO_PI = 2.0 * math.pi


class NotProjectableError(ValueError):
    """A box corner lies at or behind the camera plane."""


def wrap_angle(a: float) -> float:
    """Map an angle into [-pi, pi)."""
    r = math.fmod(a + math.pi, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    r -= math.pi
    # fmod can land exactly on +pi after rounding
    if r >= math.pi:
        r -= TWO_PI
    return r


def _finite(*vals: float) -> bool:
    return all(math.isfinite(v) for v in vals)


@dataclass(frozen=True)
class Box3D:
    center: tuple[float, float, float]
    dims: tuple[float, float, float]  # (h, w, l)
    yaw: float

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        d = tuple(float(v) for v in self.dims)
        if len(c) != 3 or len(d) != 3:
            raise ValueError("Box3D needs a 3-vector center and (h, w, l) dims")
        if not _finite(*c, *d, self.yaw):
            raise ValueError(f"non-finite Box3D component: center={c} dims={d} yaw={self.yaw}")
        if min(d) < 0.0:
            raise ValueError(f"negative Box3D extent: dims={d}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "dims", d)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def h(self) -> float:
        return self.dims[0]

    @property
    def w(self) -> float:
        return self.dims[1]

    @property
    def l(self) -> float:  # noqa: E743
        return self.dims[2]

    @property
    def volume(self) -> float:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def params(self) -> np.ndarray:
        """The 7-vector ``(x, y, z, h, w, l, yaw)`` used by the kernels."""
        return np.array([*self.center, *self.dims, self.yaw])

    @classmethod
    def from_params(cls, p: Sequence[float]) -> "Box3D":
        return cls((p[0], p[1], p[2]), (p[3], p[4], p[5]), p[6])

    def translated(self, dx: float, dy: float, dz: float) -> "Box3D":
        x, y, z = self.center
        return Box3D((x + dx, y + dy, z + dz), self.dims, self.yaw)

    def corners(self) -> np.ndarray:
        """The 8 corners, shape (8, 3); bottom face first."""
        h, w, l = self.dims
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        lx = np.array([l, -l, -l, l, l, -l, -l, l]) / 2
        wz = np.array([w, w, -w, -w, w, w, -w, -w]) / 2
        ys = np.array([0, 0, 0, 0, -h, -h, -h, -h], dtype=float)
        x, y, z = self.center
        return np.stack([x + c * lx + s * wz, y + ys, z - s * lx + c * wz], axis=1)


@dataclass(frozen=True)
class Box2D:
    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self):
        vals = tuple(float(v) for v in (self.left, self.top, self.right, self.bottom))
        if not _finite(*vals):
            raise ValueError(f"non-finite Box2D: {vals}")
        # zero-width boxes are admitted (projection of a degenerate 3D box)
        if vals[0] > vals[2] or vals[1] > vals[3]:
            raise ValueError(f"inverted Box2D: {vals}")
        for name, v in zip(("left", "top", "right", "bottom"), vals):
            object.__setattr__(self, name, v)

    @property
    def width(self) -> float:
        return self.right - self.left

    @property
    def height(self) -> float:
        return self.bottom - self.top

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.left + self.right), 0.5 * (self.top + self.bottom))

    def as_array(self) -> np.ndarray:
        return np.array([self.left, self.top, self.right, self.bottom])

    def translated(self, du: float, dv: float) -> "Box2D":
        return Box2D(self.left + du, self.top + dv, self.right + du, self.bottom + dv)


@dataclass(frozen=True)
class Detection:
    frame: int
    box3d: Box3D
    box2d: Box2D
    score: float = 1.0
    class_label: str = "Car"
    appearance_2d: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    appearance_3d: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    alpha: float = -10.0
    row: int = -1  # ordinal in the source file, used by file-backed features

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0, 1]")


class TrackState(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    LOST = "lost"


@dataclass
class Tracklet:
    """A live identity. Mutated in place by the tracker that owns it."""

    id: int
    history: list = field(default_factory=list)  # (frame, Box3D, Box2D)
    state: TrackState = TrackState.TENTATIVE
    hits: int = 0
    misses: int = 0
    cached_feature: Optional[np.ndarray] = None
    cached_appearance: Optional[tuple] = None
    score: float = 0.0
    class_label: str = "Car"
    alpha: float = -10.0
    confirmed_once: bool = False

    @property
    def last_frame(self) -> int:
        return self.history[-1][0]

    @property
    def last_box3d(self) -> Box3D:
        return self.history[-1][1]

    @property
    def last_box2d(self) -> Box2D:
        return self.history[-1][2]

    def append(self, frame: int, box3d: Box3D, box2d: Box2D) -> None:
        if self.history and frame <= self.history[-1][0]:
            raise ValueError(f"track {self.id}: frame {frame} not after {self.history[-1][0]}")
        self.history.append((frame, box3d, box2d))


@dataclass
class AssociationProblem:
    tracks: list
    detections: list
    frame_t: int

    def __post_init__(self):
        for d in self.detections:
            if d.frame != self.frame_t + 1:
                raise ValueError(f"detection frame {d.frame} != frame_t + 1 = {self.frame_t + 1}")

    @property
    def M(self) -> int:
        return len(self.tracks)

    @property
    def N(self) -> int:
        return len(self.detections)


@dataclass
class Assignment:
    matches: list
    unmatched_tracks: list
    unmatched_detections: list

    def validate(self, M: int, N: int) -> None:
        rows = [i for i, _ in self.matches] + list(self.unmatched_tracks)
        cols = [j for _, j in self.matches] + list(self.unmatched_detections)
        if sorted(rows) != list(range(M)) or sorted(cols) != list(range(N)):
            raise AssertionError(f"invalid assignment for {M}x{N}: {self}")


def iou2d(a: Box2D, b: Box2D) -> float:
    iw = min(a.right, b.right) - max(a.left, b.left)
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.width * a.height + b.width * b.height - inter
    return inter / union if union > 0.0 else 0.0


def iou3d(a: Box3D, b: Box3D) -> float:
    return float(kernels.iou3d_params(a.params(), b.params()))


def iou3d_matrix(A: Sequence[Box3D], B: Sequence[Box3D]) -> np.ndarray:
    pa = np.array([b.params() for b in A]).reshape(-1, 7)
    pb = np.array([b.params() for b in B]).reshape(-1, 7)
    return kernels.iou3d_matrix(pa, pb)


def iou2d_matrix(A: Sequence[Box2D], B: Sequence[Box2D]) -> np.ndarray:
    pa = np.array([b.as_array() for b in A]).reshape(-1, 4)
    pb = np.array([b.as_array() for b in B]).reshape(-1, 4)
    return kernels.iou2d_matrix(pa, pb)


def center_distance(a: Box3D, b: Box3D) -> float:
    return math.dist(a.center, b.center)


def project_box(b: Box3D, P: np.ndarray) -> Box2D:
    """Axis-aligned image hull of the 8 projected corners."""
    P = np.asarray(P, dtype=np.float64).reshape(3, 4)
    pts = np.hstack([b.corners(), np.ones((8, 1))]) @ P.T
    depth = pts[:, 2]
    if np.any(depth <= 0.0):
        raise NotProjectableError(f"box at {b.center} has corners at or behind the camera")
    u = pts[:, 0] / depth
    v = pts[:, 1] / depth
    return Box2D(u.min(), v.min(), u.max(), v.max())
