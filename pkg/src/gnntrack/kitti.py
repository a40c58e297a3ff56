"""KITTI tracking label, detection and calibration files.

Label rows (17 columns, 18 with score)::

    frame track_id type truncated occluded alpha l t r b h w l x y z ry [score]

Detection rows drop ``track_id`` and always carry the score (17 columns).
Floats are written with Python's shortest round-trip repr.
"""

from __future__ import annotations

import io
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, TextIO, Union

import numpy as np

from .core import Box2D, Box3D, Detection, NotProjectableError, project_box

log = logging.getLogger(__name__)

Source = Union[str, TextIO, Iterable[str]]

LABEL_COLUMNS = 17
DETECTION_COLUMNS = 17
FEAT_MAGIC = b"FEAT"


class KittiFormatError(ValueError):
    def __init__(self, message: str, line: int, column: Optional[int] = None):
        where = f"line {line}" + (f", column {column}" if column is not None else "")
        super().__init__(f"{where}: {message}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class LabelRecord:
    frame: int
    track_id: int
    class_label: str
    truncated: float
    occluded: int
    alpha: float
    box2d: Box2D
    dims: tuple  # (h, w, l)
    location: tuple  # (x, y, z)
    rotation_y: float
    score: Optional[float] = None

    @property
    def is_dontcare(self) -> bool:
        return self.class_label == "DontCare"

    @property
    def box3d(self) -> Box3D:
        return Box3D(self.location, self.dims, self.rotation_y)


@dataclass
class SequenceData:
    seq_id: str
    detections: list = field(default_factory=list)  # per-frame Detection lists
    labels: list = field(default_factory=list)  # per-frame LabelRecord lists
    P2: Optional[np.ndarray] = None

    @property
    def num_frames(self) -> int:
        return max(len(self.detections), len(self.labels))

    def all_labels(self) -> list:
        return [r for frame in self.labels for r in frame]


class DetectionFrames(NamedTuple):
    frames: list
    clamped: int


def _lines(src: Source):
    if isinstance(src, str):
        src = io.StringIO(src)
    for lineno, line in enumerate(src, start=1):
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        yield lineno, line


def _num(tok: str, lineno: int, col: int, kind=float):
    try:
        if kind is int:
            return int(tok)
        v = float(tok)
    except ValueError:
        raise KittiFormatError(f"cannot parse {tok!r} as {kind.__name__}", lineno, col) from None
    if not math.isfinite(v):
        raise KittiFormatError(f"non-finite value {tok!r}", lineno, col)
    return v


def _geometry(toks, base, lineno):
    """Parse ``alpha bbox(4) dims(3) loc(3) ry`` starting at token ``base``."""
    vals = [_num(toks[base + k], lineno, base + k + 1) for k in range(12)]
    alpha = vals[0]
    try:
        box2d = Box2D(*vals[1:5])
    except ValueError as e:
        raise KittiFormatError(str(e), lineno, base + 2) from None
    dims = tuple(vals[5:8])
    loc = tuple(vals[8:11])
    return alpha, box2d, dims, loc, vals[11]


def parse_labels(src: Source) -> list[LabelRecord]:
    out = []
    for lineno, line in _lines(src):
        toks = line.split()
        if not toks:
            continue
        if len(toks) not in (LABEL_COLUMNS, LABEL_COLUMNS + 1):
            raise KittiFormatError(f"expected 17 or 18 fields, got {len(toks)}", lineno)
        frame = _num(toks[0], lineno, 1, int)
        if frame < 0:
            raise KittiFormatError("negative frame index", lineno, 1)
        track_id = _num(toks[1], lineno, 2, int)
        truncated = _num(toks[3], lineno, 4)
        occluded = _num(toks[4], lineno, 5, int)
        alpha, box2d, dims, loc, ry = _geometry(toks, 5, lineno)
        score = _num(toks[17], lineno, 18) if len(toks) == 18 else None
        out.append(LabelRecord(frame, track_id, toks[2], truncated, occluded, alpha,
                               box2d, dims, loc, ry, score))
    return out


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def format_label(r: LabelRecord) -> str:
    b = r.box2d
    cols = [r.frame, r.track_id, r.class_label, r.truncated, r.occluded, r.alpha,
            b.left, b.top, b.right, b.bottom, *r.dims, *r.location, r.rotation_y]
    if r.score is not None:
        cols.append(r.score)
    return " ".join(c if isinstance(c, str) else _fmt(c) for c in cols)


def write_results(records: Iterable[LabelRecord], dst: Optional[TextIO] = None) -> str:
    """Serialize records ordered by (frame, track id); returns the text."""
    ordered = sorted(records, key=lambda r: (r.frame, r.track_id))
    text = "".join(format_label(r) + "\n" for r in ordered)
    if dst is not None:
        dst.write(text)
    return text


def parse_detections(src: Source, calib: Optional[np.ndarray] = None,
                     sort_by_score: bool = False,
                     num_frames: Optional[int] = None) -> DetectionFrames:
    """Bucket detections by frame; buckets are contiguous from frame 0.

    With ``calib`` the 2D box is recomputed by projecting the 3D box, keeping
    the stored box when the projection is impossible.
    """
    buckets: dict[int, list] = {}
    clamped = 0
    row = 0
    for lineno, line in _lines(src):
        toks = line.split()
        if not toks:
            continue
        if len(toks) != DETECTION_COLUMNS:
            raise KittiFormatError(f"expected {DETECTION_COLUMNS} fields, got {len(toks)}", lineno)
        frame = _num(toks[0], lineno, 1, int)
        if frame < 0:
            raise KittiFormatError("negative frame index", lineno, 1)
        alpha, box2d, dims, loc, ry = _geometry(toks, 4, lineno)
        score = _num(toks[16], lineno, 17)
        if not 0.0 <= score <= 1.0:
            clamped += 1
            score = min(max(score, 0.0), 1.0)
        try:
            box3d = Box3D(loc, dims, ry)
        except ValueError as e:
            raise KittiFormatError(str(e), lineno) from None
        if calib is not None:
            try:
                box2d = project_box(box3d, calib)
            except NotProjectableError:
                pass
        det = Detection(frame, box3d, box2d, score, toks[1], alpha=alpha, row=row)
        row += 1
        buckets.setdefault(frame, []).append(det)
    if clamped:
        log.warning("clamped %d detection scores into [0, 1]", clamped)
    n = max(buckets, default=-1) + 1
    if num_frames is not None:
        n = max(n, num_frames)
    frames = [buckets.get(f, []) for f in range(n)]
    if sort_by_score:
        frames = [sorted(f, key=lambda d: -d.score) for f in frames]
    return DetectionFrames(frames, clamped)


def format_detection(d: Detection) -> str:
    b = d.box2d
    cols = [d.frame, d.class_label, 0.0, 0, d.alpha, b.left, b.top, b.right, b.bottom,
            *d.box3d.dims, *d.box3d.center, d.box3d.yaw, d.score]
    return " ".join(c if isinstance(c, str) else _fmt(c) for c in cols)


def write_detections(frames: Iterable[Iterable[Detection]], dst: Optional[TextIO] = None) -> str:
    text = "".join(format_detection(d) + "\n" for frame in frames for d in frame)
    if dst is not None:
        dst.write(text)
    return text


def parse_calib(src: Source, key: str = "P2") -> np.ndarray:
    prefix = key + ":"
    for lineno, line in _lines(src):
        toks = line.split()
        if not toks or toks[0] != prefix:
            continue
        if len(toks) != 13:
            raise KittiFormatError(f"{key} needs 12 values, got {len(toks) - 1}", lineno)
        vals = [_num(t, lineno, k + 2) for k, t in enumerate(toks[1:])]
        return np.array(vals, dtype=np.float64).reshape(3, 4)
    raise KittiFormatError(f"no {prefix} line in calibration", 0)


def format_calib(P: np.ndarray, key: str = "P2") -> str:
    vals = np.asarray(P, dtype=np.float64).reshape(12)
    return key + ": " + " ".join(_fmt(v) for v in vals) + "\n"


def labels_by_frame(records: Iterable[LabelRecord], num_frames: Optional[int] = None) -> list:
    buckets: dict[int, list] = {}
    for r in records:
        buckets.setdefault(r.frame, []).append(r)
    n = max(buckets, default=-1) + 1
    if num_frames is not None:
        n = max(n, num_frames)
    return [buckets.get(f, []) for f in range(n)]


# ---------------------------------------------------------------------------
# "FEAT" sidecar: magic, uint32 count, uint32 dim, count*dim float32 (all LE)
# ---------------------------------------------------------------------------


def write_feat(path: Union[str, Path], rows: np.ndarray) -> None:
    rows = np.asarray(rows, dtype="<f4").reshape(len(rows), -1) if len(rows) else np.zeros((0, 0), "<f4")
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC + struct.pack("<II", rows.shape[0], rows.shape[1]))
        fh.write(np.ascontiguousarray(rows).tobytes())


def read_feat(path: Union[str, Path]) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != FEAT_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}, expected b'FEAT'")
    count, dim = struct.unpack("<II", data[4:12])
    body = data[12:]
    if len(body) != 4 * count * dim:
        raise ValueError(f"{path}: expected {count}x{dim} floats, found {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(count, dim).astype(np.float32)


# ---------------------------------------------------------------------------
# On-disk sequence layout used by the CLI:
#   <root>/label_02/<seq>.txt      ground truth (optional)
#   <root>/detection/<seq>.txt     detections
#   <root>/calib/<seq>.txt         P2 (optional)
#   <root>/appearance/<seq>_2d.feat, <seq>_3d.feat   (optional)
#   <root>/identity/<seq>.txt      GT id per detection row, -1 for clutter (optional)
# ---------------------------------------------------------------------------


def list_sequences(root: Union[str, Path]) -> list[str]:
    root = Path(root)
    names = {p.stem for p in (root / "detection").glob("*.txt")}
    names |= {p.stem for p in (root / "label_02").glob("*.txt")}
    return sorted(names)


def load_sequence(root: Union[str, Path], seq_id: str, project: bool = False) -> SequenceData:
    root = Path(root)
    P2 = None
    calib_path = root / "calib" / f"{seq_id}.txt"
    if calib_path.exists():
        P2 = parse_calib(calib_path.read_text(encoding="utf-8"))
    labels = []
    label_path = root / "label_02" / f"{seq_id}.txt"
    if label_path.exists():
        labels = parse_labels(label_path.read_text(encoding="utf-8"))
    dets: list = []
    det_path = root / "detection" / f"{seq_id}.txt"
    if det_path.exists():
        dets = parse_detections(det_path.read_text(encoding="utf-8"),
                                calib=P2 if project else None).frames
    n = max(len(dets), max((r.frame for r in labels), default=-1) + 1)
    dets = dets + [[] for _ in range(n - len(dets))]
    return SequenceData(seq_id, dets, labels_by_frame(labels, n), P2)


def read_identity(root: Union[str, Path], seq_id: str) -> Optional[np.ndarray]:
    p = Path(root) / "identity" / f"{seq_id}.txt"
    if not p.exists():
        return None
    return np.array([int(t) for t in p.read_text(encoding="utf-8").split()], dtype=np.int64)


def read_split(path: Union[str, Path]) -> dict[str, list[str]]:
    """Read a split file of ``name = id id id`` lines."""
    out: dict[str, list[str]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        name, _, ids = line.partition("=")
        out[name.strip()] = ids.split()
    return out
