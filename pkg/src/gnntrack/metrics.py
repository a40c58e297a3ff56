"""3D MOT evaluation: CLEAR metrics and the recall-integrated sAMOTA / AMOTA / AMOTP.

Ground truth and hypotheses are per-frame lists of :class:`LabelRecord`.
Pairs are compared by 3D IoU (valid at ``>= tau``) or, alternatively, by
center distance (valid within ``dist_threshold``, similarity
``1 - d / dist_threshold``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .assoc import solve_assignment
from .core import iou2d_matrix, iou3d_matrix
from .kitti import LabelRecord

_INFEASIBLE = 1e6


class DuplicateIdError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    tau: float = 0.25
    criterion: str = "iou"  # or "distance"
    dist_threshold: float = 2.0
    num_recall_points: int = 40
    classes: Optional[tuple] = ("Car",)
    dontcare_iou: float = 0.25

    def __post_init__(self):
        if self.criterion not in ("iou", "distance"):
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.num_recall_points < 1:
            raise ValueError("num_recall_points must be >= 1")


@dataclass
class EvalFrame:
    gt_ids: np.ndarray
    hyp_ids: np.ndarray
    hyp_scores: np.ndarray
    sim: np.ndarray  # (G, H) similarity
    valid: np.ndarray  # (G, H) bool
    dontcare: np.ndarray  # (H,) bool: hypothesis lies on a DontCare region


def _check_unique(records, side, frame):
    seen = set()
    for r in records:
        if r.track_id in seen:
            raise DuplicateIdError(f"{side}: duplicate id {r.track_id} in frame {frame}")
        seen.add(r.track_id)


def _keep_class(r: LabelRecord, classes) -> bool:
    return classes is None or r.class_label in classes


def prepare(gt_frames: Sequence[Sequence[LabelRecord]], hyp_frames: Sequence[Sequence[LabelRecord]],
            cfg: EvalConfig = EvalConfig(), id_offset: int = 0) -> list[EvalFrame]:
    """Pair up frames and precompute all similarity matrices once."""
    n = max(len(gt_frames), len(hyp_frames))
    out = []
    for f in range(n):
        g_all = list(gt_frames[f]) if f < len(gt_frames) else []
        h_all = list(hyp_frames[f]) if f < len(hyp_frames) else []
        _check_unique([r for r in g_all if not r.is_dontcare], "ground truth", f)
        _check_unique(h_all, "hypotheses", f)
        # ids are unique per frame, so sorting by id makes input order irrelevant
        gts = sorted((r for r in g_all if not r.is_dontcare and _keep_class(r, cfg.classes)),
                     key=lambda r: r.track_id)
        hyps = sorted((r for r in h_all if _keep_class(r, cfg.classes)), key=lambda r: r.track_id)
        dcs = [r for r in g_all if r.is_dontcare]
        gb = [r.box3d for r in gts]
        hb = [r.box3d for r in hyps]
        if cfg.criterion == "iou":
            sim = iou3d_matrix(gb, hb)
            valid = sim >= cfg.tau
        else:
            gc = np.array([b.center for b in gb]).reshape(-1, 3)
            hc = np.array([b.center for b in hb]).reshape(-1, 3)
            d = np.linalg.norm(gc[:, None, :] - hc[None, :, :], axis=2)
            valid = d <= cfg.dist_threshold
            sim = np.where(valid, 1.0 - d / cfg.dist_threshold, 0.0)
        if dcs and hyps:
            dc = (iou2d_matrix([r.box2d for r in hyps], [r.box2d for r in dcs]) >= cfg.dontcare_iou).any(axis=1)
        else:
            dc = np.zeros(len(hyps), dtype=bool)
        out.append(EvalFrame(np.array([r.track_id + id_offset for r in gts], dtype=np.int64),
                             np.array([r.track_id + id_offset for r in hyps], dtype=np.int64),
                             np.array([r.score if r.score is not None else 1.0 for r in hyps]),
                             sim, valid, dc))
    return out


def prepare_many(pairs: Iterable[tuple], cfg: EvalConfig = EvalConfig()) -> list[EvalFrame]:
    """Concatenate several sequences; ids are offset so sequences never share one."""
    frames = []
    offset = 0
    for gt, hyp in pairs:
        ids = [r.track_id for f in list(gt) + list(hyp) for r in f]
        lo, hi = min(ids, default=0), max(ids, default=0)
        frames.extend(prepare(gt, hyp, cfg, offset - lo))
        offset += hi - lo + 1
    return frames


# ---------------------------------------------------------------------------
# CLEAR
# ---------------------------------------------------------------------------


@dataclass
class ClearResult:
    TP: int = 0
    FP: int = 0
    FN: int = 0
    IDS: int = 0
    FRAG: int = 0
    GT: int = 0
    sim_sum: float = 0.0

    @property
    def MOTA(self) -> float:
        if self.GT == 0:
            return math.nan
        return 1.0 - (self.FP + self.FN + self.IDS) / self.GT

    @property
    def MOTP(self) -> float:
        return self.sim_sum / self.TP if self.TP else 0.0

    @property
    def recall(self) -> float:
        return self.TP / self.GT if self.GT else math.nan


def clear_from_frames(frames: Sequence[EvalFrame], keep: Optional[Sequence[np.ndarray]] = None) -> ClearResult:
    """CLEAR protocol; ``keep[f]`` optionally selects the surviving hypotheses."""
    res = ClearResult()
    prev: dict[int, int] = {}  # gt id -> hyp id matched in the previous frame
    last_hyp: dict[int, int] = {}  # gt id -> most recent matched hyp id
    was_tracked: dict[int, bool] = {}
    ever: set = set()
    for f, fr in enumerate(frames):
        hsel = np.arange(len(fr.hyp_ids)) if keep is None else np.flatnonzero(keep[f])
        gid = fr.gt_ids
        hid = fr.hyp_ids[hsel]
        sim = fr.sim[:, hsel]
        valid = fr.valid[:, hsel]
        G, H = len(gid), len(hid)
        res.GT += G
        g2h = {}
        col_of = {int(h): k for k, h in enumerate(hid)}
        used = set()
        for g in range(G):
            h = prev.get(int(gid[g]))
            if h is not None and h in col_of and valid[g, col_of[h]] and col_of[h] not in used:
                g2h[g] = col_of[h]
                used.add(col_of[h])
        rest_g = [g for g in range(G) if g not in g2h]
        rest_h = [h for h in range(H) if h not in used]
        if rest_g and rest_h:
            sub_valid = valid[np.ix_(rest_g, rest_h)]
            cost = np.where(sub_valid, 1.0 - sim[np.ix_(rest_g, rest_h)], _INFEASIBLE)
            for a, b in solve_assignment(cost):
                if sub_valid[a, b]:
                    g2h[rest_g[a]] = rest_h[b]
        new_prev = {}
        for g in range(G):
            key = int(gid[g])
            if g in g2h:
                h = int(hid[g2h[g]])
                res.TP += 1
                res.sim_sum += float(sim[g, g2h[g]])
                if key in last_hyp and last_hyp[key] != h:
                    res.IDS += 1
                last_hyp[key] = h
                new_prev[key] = h
                if key in ever and not was_tracked[key]:
                    res.FRAG += 1
                ever.add(key)
                was_tracked[key] = True
            else:
                res.FN += 1
                was_tracked[key] = False
        matched_h = set(g2h.values())
        dc = fr.dontcare[hsel]
        res.FP += sum(1 for h in range(H) if h not in matched_h and not dc[h])
        prev = new_prev
    return res


def clear_metrics(gt_frames, hyp_frames, cfg: EvalConfig = EvalConfig()) -> ClearResult:
    return clear_from_frames(prepare(gt_frames, hyp_frames, cfg))


# ---------------------------------------------------------------------------
# recall sweep
# ---------------------------------------------------------------------------


def _try_augment(h: int, adj: list, match_g: dict, match_h: dict, seen: set) -> bool:
    for g in adj[h]:
        if g in seen:
            continue
        seen.add(g)
        if g not in match_g or _try_augment(match_g[g], adj, match_g, match_h, seen):
            match_g[g] = h
            match_h[h] = g
            return True
    return False


def recall_curve(frames: Sequence[EvalFrame]) -> list[tuple[float, int]]:
    """(cutoff, matched GT count) for every distinct score, highest first.

    The count is the maximum one-to-one matching of GT to hypotheses with
    score >= cutoff, ignoring ids. It grows by at most one per added
    hypothesis, found by a single augmenting-path search.
    """
    items = [(-float(s), f, h) for f, fr in enumerate(frames) for h, s in enumerate(fr.hyp_scores)]
    items.sort()
    adj = [[np.flatnonzero(fr.valid[:, h]).tolist() for h in range(len(fr.hyp_ids))] for fr in frames]
    state = [({}, {}) for _ in frames]
    matched = 0
    curve = []
    k = 0
    while k < len(items):
        s = items[k][0]
        while k < len(items) and items[k][0] == s:
            _, f, h = items[k]
            mg, mh = state[f]
            if _try_augment(h, adj[f], mg, mh, set()):
                matched += 1
            k += 1
        curve.append((-s, matched))
    return curve


def _cutoff_from_curve(curve, gt_total: int, r: float, max_score: Optional[float]):
    if r <= 0.0:
        return math.inf if max_score is None else float(np.nextafter(max_score, math.inf))
    if gt_total == 0:
        return None
    for cutoff, m in curve:
        if m >= r * gt_total - 1e-9:
            return cutoff
    return None


def threshold_for_recall(frames: Sequence[EvalFrame], r: float):
    """Highest score cutoff whose surviving hypotheses reach recall ``r``; None if unreachable."""
    gt_total = sum(len(fr.gt_ids) for fr in frames)
    scores = [float(s) for fr in frames for s in fr.hyp_scores]
    return _cutoff_from_curve(recall_curve(frames), gt_total, r, max(scores, default=None))


def smota_r(fp: int, fn: int, ids: int, gt: int, r: float) -> float:
    """Recall-scaled MOTA at recall ``r``, clamped to [0, 1]."""
    v = 1.0 - (fp + fn + ids - (1.0 - r) * gt) / (r * gt)
    return min(1.0, max(0.0, v))


def mota_clamped(fp: int, fn: int, ids: int, gt: int) -> float:
    return max(0.0, 1.0 - (fp + fn + ids) / gt)


@dataclass
class RecallPoint:
    r: float
    cutoff: Optional[float]
    result: Optional[ClearResult]
    smota: float
    mota: float
    motp: float


@dataclass
class MetricsReport:
    sAMOTA: float
    AMOTA: float
    AMOTP: float
    MOTA: float
    MOTP: float
    IDS: int
    FRAG: int
    FP: int
    FN: int
    TP: int
    GT: int
    per_recall: list = field(default_factory=list)

    RATIOS = ("sAMOTA", "AMOTA", "AMOTP", "MOTA", "MOTP")
    COUNTS = ("IDS", "FRAG", "FP", "FN", "TP", "GT")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.RATIOS + self.COUNTS}

    def summary(self) -> str:
        """``key=value`` lines; ratios as percentages with two decimals."""
        lines = [f"{k}={_pct(getattr(self, k))}" for k in self.RATIOS]
        lines += [f"{k}={getattr(self, k)}" for k in self.COUNTS]
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        heads = self.RATIOS + self.COUNTS
        vals = [_pct(getattr(self, k)) for k in self.RATIOS] + [str(getattr(self, k)) for k in self.COUNTS]
        widths = [max(len(h), len(v)) for h, v in zip(heads, vals)]
        out = ["  ".join(h.rjust(w) for h, w in zip(heads, widths)),
               "  ".join(v.rjust(w) for v, w in zip(vals, widths)), ""]
        out.append(f"{'recall':>7s}  {'cutoff':>10s}  {'sMOTA':>7s}  {'MOTA':>7s}  {'MOTP':>7s}"
                   f"  {'FP':>6s}  {'FN':>6s}  {'IDS':>5s}")
        for p in self.per_recall:
            if p.result is None:
                out.append(f"{p.r:7.4f}  {'-':>10s}  {'-':>7s}  {'-':>7s}  {'-':>7s}  {'-':>6s}  {'-':>6s}  {'-':>5s}")
                continue
            res = p.result
            out.append(f"{p.r:7.4f}  {p.cutoff:10.6f}  {_pct(p.smota):>7s}  {_pct(p.mota):>7s}  "
                       f"{_pct(p.motp):>7s}  {res.FP:6d}  {res.FN:6d}  {res.IDS:5d}")
        return "\n".join(out) + "\n"


def _pct(v: float) -> str:
    return "nan" if v is None or math.isnan(v) else f"{100.0 * v:.2f}"


def amota_suite(frames: Sequence[EvalFrame], L: int = 40) -> tuple[float, float, float, list]:
    """sAMOTA, AMOTA, AMOTP over recall points r = 1/L .. 1, plus the per-point table."""
    gt_total = sum(len(fr.gt_ids) for fr in frames)
    curve = recall_curve(frames)
    points = []
    s_sum = a_sum = p_sum = 0.0
    for k in range(1, L + 1):
        r = k / L
        cutoff = _cutoff_from_curve(curve, gt_total, r, None)
        if cutoff is None:
            points.append(RecallPoint(r, None, None, 0.0, 0.0, 0.0))
            continue
        keep = [fr.hyp_scores >= cutoff for fr in frames]
        res = clear_from_frames(frames, keep)
        sm = smota_r(res.FP, res.FN, res.IDS, gt_total, r)
        ma = mota_clamped(res.FP, res.FN, res.IDS, gt_total)
        points.append(RecallPoint(r, cutoff, res, sm, ma, res.MOTP))
        s_sum += sm
        a_sum += ma
        p_sum += res.MOTP
    return s_sum / L, a_sum / L, p_sum / L, points


def evaluate_frames(frames: Sequence[EvalFrame], cfg: EvalConfig = EvalConfig()) -> MetricsReport:
    clear = clear_from_frames(frames)
    s, a, p, points = amota_suite(frames, cfg.num_recall_points)
    return MetricsReport(s, a, p, clear.MOTA, clear.MOTP, clear.IDS, clear.FRAG, clear.FP, clear.FN,
                         clear.TP, clear.GT, points)


def evaluate(pairs: Iterable[tuple], cfg: EvalConfig = EvalConfig()) -> MetricsReport:
    """Full report over one or more (gt_frames, hyp_frames) sequence pairs."""
    return evaluate_frames(prepare_many(pairs, cfg), cfg)
