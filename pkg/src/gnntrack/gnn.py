"""Bipartite interaction graph, message passing and edge-regressed affinities.

Nodes are ordered tracks first, then detections. Each layer updates

    h_i <- relu(W_s h_i + mean_{j in N(i)} W_n (h_j - h_i))

(``aggregation="mean"`` drops the ``- h_i``), and every level of node
features, including the fused input, yields an M x N affinity matrix
``sigmoid(mlp(|h_i - h_j|))``. Matching uses the last one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autograd as ad
from .core import AssociationProblem, Box3D, center_distance
from .featnet import BRANCHES, MOTION_2D_DIM, MOTION_3D_DIM, RawFeatures, fuse, init_fusion_params
from .rng import CounterRNG, glorot_uniform


class NonFiniteActivationError(FloatingPointError):
    pass


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    app2d_dim: int = 32
    app3d_dim: int = 32
    branch_dim: int = 32
    node_dim: int = 64
    edge_hidden: int = 64
    layers: int = 2
    aggregation: str = "diff"  # or "mean"
    edge_input: str = "absdiff"  # or "concat"
    branch_mask: tuple = (True, True, True, True)
    gate_radius: float = 0.0  # meters; 0 disables gating
    margin: float = 0.2
    triplet_weight: float = 1.0

    def __post_init__(self):
        if self.aggregation not in ("diff", "mean"):
            raise ValueError(f"aggregation must be 'diff' or 'mean', got {self.aggregation!r}")
        if self.edge_input not in ("absdiff", "concat"):
            raise ValueError(f"edge_input must be 'absdiff' or 'concat', got {self.edge_input!r}")
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if len(self.branch_mask) != len(BRANCHES):
            raise ValueError("branch_mask needs one flag per branch")

    @property
    def in_dims(self) -> dict:
        return {"app2d": self.app2d_dim, "app3d": self.app3d_dim,
                "mot2d": MOTION_2D_DIM, "mot3d": MOTION_3D_DIM}


def init_params(cfg: ModelConfig, seed: int = 0) -> ad.ParamStore:
    """Glorot-uniform weights from the seeded stream, zero biases."""
    rng = CounterRNG(seed, stream=100)
    store = ad.ParamStore()
    init_fusion_params(store, rng, cfg.in_dims, cfg.branch_dim, cfg.node_dim)
    D = cfg.node_dim
    for l in range(cfg.layers):
        store.add(f"gnn.{l}.Ws", glorot_uniform(rng, D, D))
        store.add(f"gnn.{l}.Wn", glorot_uniform(rng, D, D))
    e_in = D if cfg.edge_input == "absdiff" else 2 * D
    for l in range(cfg.layers + 1):
        store.add(f"edge.{l}.W1", glorot_uniform(rng, e_in, cfg.edge_hidden))
        store.add(f"edge.{l}.b1", np.zeros((1, cfg.edge_hidden)))
        store.add(f"edge.{l}.W2", glorot_uniform(rng, cfg.edge_hidden, 1))
        store.add(f"edge.{l}.b2", np.zeros((1, 1)))
    return store


# ---------------------------------------------------------------------------
# graph
# ---------------------------------------------------------------------------


@dataclass
class InteractionGraph:
    M: int
    N: int
    edge_mask: np.ndarray  # (M, N) bool
    layers: int
    node_feats: Optional[ad.DiffTensor] = None
    aggregation: str = "diff"
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_nodes(self) -> int:
        return self.M + self.N

    @property
    def edges(self) -> list:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.edge_mask))]

    @property
    def num_edges(self) -> int:
        return int(self.edge_mask.sum())

    def aggregator(self) -> np.ndarray:
        """Constant (n, n) matrix C with C @ H the per-node neighbor aggregate."""
        key = ("agg", self.aggregation)
        if key not in self._cache:
            M, n = self.M, self.num_nodes
            A = np.zeros((n, n))
            A[:M, M:] = self.edge_mask
            A[M:, :M] = self.edge_mask.T
            deg = A.sum(axis=1)
            has = deg > 0
            A[has] /= deg[has, None]
            if self.aggregation == "diff":
                A -= np.diag(has.astype(np.float64))
            self._cache[key] = A
        return self._cache[key]

    def pair_selectors(self):
        """Row-major (i, j) pair selectors, each (M*N, n)."""
        if "pairs" not in self._cache:
            M, N, n = self.M, self.N, self.num_nodes
            rows = np.arange(M * N)
            St = np.zeros((M * N, n))
            Sd = np.zeros((M * N, n))
            St[rows, np.repeat(np.arange(M), N)] = 1.0
            Sd[rows, M + np.tile(np.arange(N), M)] = 1.0
            self._cache["pairs"] = (St, Sd, St - Sd)
        return self._cache["pairs"]


def graph_from_counts(M: int, N: int, layers: int, edge_mask: Optional[np.ndarray] = None,
                      aggregation: str = "diff") -> InteractionGraph:
    mask = np.ones((M, N), dtype=bool) if edge_mask is None else np.asarray(edge_mask, dtype=bool)
    return InteractionGraph(M, N, mask.reshape(M, N), layers, aggregation=aggregation)


def build_graph(problem: AssociationProblem, node_feats: Optional[ad.DiffTensor] = None,
                layers: int = 2, gate_radius: float = 0.0,
                track_boxes: Optional[Sequence[Box3D]] = None,
                aggregation: str = "diff") -> InteractionGraph:
    """Full bipartite graph between tracks and detections.

    With ``gate_radius > 0`` pairs whose 3D centers are farther apart are
    dropped. Track positions come from ``track_boxes`` (e.g. predictions)
    or else each track's last observed box.
    """
    M, N = problem.M, problem.N
    mask = np.ones((M, N), dtype=bool)
    if gate_radius and gate_radius > 0.0 and M and N:
        tb = track_boxes if track_boxes is not None else [t.last_box3d for t in problem.tracks]
        for i, b in enumerate(tb):
            for j, d in enumerate(problem.detections):
                mask[i, j] = center_distance(b, d.box3d) <= gate_radius
    if node_feats is not None and node_feats.shape[0] != M + N:
        raise ad.ShapeError(f"build_graph: {node_feats.shape[0]} node features for {M + N} nodes")
    g = graph_from_counts(M, N, layers, mask, aggregation)
    g.node_feats = node_feats
    return g


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


@dataclass
class GnnOutput:
    node_feats: list  # L + 1 DiffTensors of shape (M + N, D)
    logits: list  # L + 1 DiffTensors of shape (M, N)
    graph: InteractionGraph

    @property
    def affinities(self) -> list:
        return [ad.sigmoid(z) for z in self.logits]

    def affinity_matrix(self, level: int = -1) -> np.ndarray:
        """Affinity values as an array; gated-out pairs read 0."""
        a = ad.sigmoid(self.logits[level]).value
        return np.where(self.graph.edge_mask, a, 0.0)


def _edge_logits(H: ad.DiffTensor, graph: InteractionGraph, store: ad.ParamStore, level: int,
                 edge_input: str) -> ad.DiffTensor:
    M, N = graph.M, graph.N
    St, Sd, Sdiff = graph.pair_selectors()
    if edge_input == "absdiff":
        e = ad.absolute(ad.matmul(Sdiff, H))
    else:
        e = ad.concat([ad.matmul(St, H), ad.matmul(Sd, H)], axis=1)
    hid = ad.relu(ad.add_row(ad.matmul(e, store[f"edge.{level}.W1"]), store[f"edge.{level}.b1"]))
    z = ad.add_row(ad.matmul(hid, store[f"edge.{level}.W2"]), store[f"edge.{level}.b2"])
    return ad.reshape(z, (M, N))


def gnn_forward(graph: InteractionGraph, store: ad.ParamStore,
                node_feats: Optional[ad.DiffTensor] = None,
                edge_input: str = "absdiff") -> GnnOutput:
    H = node_feats if node_feats is not None else graph.node_feats
    if H is None:
        raise ValueError("gnn_forward needs node features")
    H = ad.const(H)
    C = graph.aggregator()
    feats = [H]
    logits = [_edge_logits(H, graph, store, 0, edge_input)]
    for l in range(graph.layers):
        self_term = ad.matmul(H, store[f"gnn.{l}.Ws"])
        nbr_term = ad.matmul(ad.matmul(C, H), store[f"gnn.{l}.Wn"])
        H = ad.relu(ad.add(self_term, nbr_term))
        if not np.isfinite(H.value).all():
            raise NonFiniteActivationError(f"non-finite node activation after GNN layer {l}")
        feats.append(H)
        logits.append(_edge_logits(H, graph, store, l + 1, edge_input))
    for l, z in enumerate(logits):
        if not np.isfinite(z.value).all():
            raise NonFiniteActivationError(f"non-finite affinity logit at level {l}")
    return GnnOutput(feats, logits, graph)


def model_forward(raw: RawFeatures, graph: InteractionGraph, store: ad.ParamStore,
                  cfg: ModelConfig) -> GnnOutput:
    H0 = fuse(raw, store, cfg.branch_mask)
    return gnn_forward(graph, store, H0, cfg.edge_input)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


_PAIR_CACHE: dict = {}


def _all_pairs(K: int) -> np.ndarray:
    """(K*K, K) matrix whose row a*K+b is e_a - e_b."""
    if K not in _PAIR_CACHE:
        S = np.zeros((K * K, K))
        r = np.arange(K * K)
        S[r, r // K] += 1.0
        S[r, r % K] -= 1.0
        _PAIR_CACHE[K] = S
    return _PAIR_CACHE[K]


def triplet_loss(feats, labels: Sequence[int], margin: float = 0.2,
                 per_anchor: bool = False) -> ad.DiffTensor:
    """Batch-hard triplet loss with Euclidean distance.

    For each anchor with at least one positive and one negative,
    ``max(0, max_pos d - min_neg d + margin)``; the loss is the mean over
    those anchors, or 0 when there are none. ``per_anchor`` returns the
    (K, 1) column of hinge terms instead (0 for anchors without a triplet).
    """
    feats = ad.const(feats)
    labels = np.asarray(labels)
    K = feats.shape[0]
    same = labels[:, None] == labels[None, :]
    pos = same & ~np.eye(K, dtype=bool)
    neg = ~same
    valid = pos.any(axis=1) & neg.any(axis=1)
    if not valid.any():
        return ad.DiffTensor(np.zeros((K, 1)) if per_anchor else 0.0)
    diff = ad.matmul(_all_pairs(K), feats)
    dist = ad.reshape(ad.sqrt(ad.sum(ad.mul(diff, diff), axis=1)), (K, K))
    hinge = ad.relu(ad.add_scalar(ad.sub(ad.masked_max(dist, pos), ad.masked_min(dist, neg)), margin))
    col = valid.astype(np.float64).reshape(K, 1)
    terms = ad.mul(hinge, col)
    if per_anchor:
        return terms
    return ad.scale(ad.sum(terms), 1.0 / valid.sum())


def affinity_loss(affinities: Sequence, gt: np.ndarray) -> ad.DiffTensor:
    """Mean binary cross-entropy per level, summed over levels."""
    gt = np.asarray(gt, dtype=np.float64)
    total = None
    for a in affinities:
        a = ad.const(a)
        if a.value.size == 0:
            continue
        term = ad.add(ad.mul(gt, ad.log(a)), ad.mul(1.0 - gt, ad.log(ad.add_scalar(ad.scale(a, -1.0), 1.0))))
        lvl = ad.scale(ad.mean(term), -1.0)
        total = lvl if total is None else ad.add(total, lvl)
    return total if total is not None else ad.DiffTensor(0.0)


def affinity_loss_logits(logits: Sequence, gt: np.ndarray,
                         edge_mask: Optional[np.ndarray] = None) -> ad.DiffTensor:
    """Same quantity as :func:`affinity_loss`, evaluated from logits.

    Uses ``-[g ln s(z) + (1-g) ln(1-s(z))] = softplus(z) - g z``, which stays
    finite when the sigmoid saturates. Gated-out pairs are excluded.
    """
    gt = np.asarray(gt, dtype=np.float64)
    total = None
    for z in logits:
        if z.value.size == 0:
            continue
        elem = ad.sub(ad.softplus(z), ad.mul(gt, z))
        if edge_mask is None or edge_mask.all():
            lvl = ad.mean(elem)
        else:
            w = edge_mask.astype(np.float64)
            if not w.any():
                continue
            lvl = ad.scale(ad.sum(ad.mul(elem, w)), 1.0 / w.sum())
        total = lvl if total is None else ad.add(total, lvl)
    return total if total is not None else ad.DiffTensor(0.0)


# ---------------------------------------------------------------------------
# supervision
# ---------------------------------------------------------------------------


def _greedy_claim(iou: np.ndarray, threshold: float) -> np.ndarray:
    """One-to-one claim of GT columns by object rows, best IoU first.

    Ties resolve to the lower object index, then the lower GT index.
    Returns the claimed GT column per row, -1 when none.
    """
    n, g = iou.shape
    out = np.full(n, -1, dtype=np.int64)
    if n == 0 or g == 0:
        return out
    cand = [(-iou[i, k], i, k) for i in range(n) for k in range(g) if iou[i, k] >= threshold]
    taken = set()
    for _, i, k in sorted(cand):
        if out[i] == -1 and k not in taken:
            out[i] = k
            taken.add(k)
    return out


def labels_from_ids(track_ids: Sequence[int], det_ids: Sequence[int]):
    """GT matrix and per-node identity labels from known ids (negative = none).

    Objects without an identity get unique negative labels.
    """
    track_ids = [int(t) for t in track_ids]
    det_ids = [int(d) for d in det_ids]
    gt = np.zeros((len(track_ids), len(det_ids)))
    for i, t in enumerate(track_ids):
        for j, d in enumerate(det_ids):
            if t >= 0 and t == d:
                gt[i, j] = 1.0
    labels = []
    nxt = -1
    for v in track_ids + det_ids:
        if v >= 0:
            labels.append(v)
        else:
            labels.append(nxt)
            nxt -= 1
    return gt, np.array(labels, dtype=np.int64)


def make_gt_assignment(problem: AssociationProblem, gt_prev: Sequence[tuple],
                       gt_next: Sequence[tuple], iou_threshold: float = 0.25):
    """Binary M x N supervision plus identity labels for all M + N nodes.

    ``gt_prev``/``gt_next`` are ``(gt_id, Box3D)`` pairs at frames t and t+1.
    Tracks (by last box) and detections claim GT ids through
    :func:`_greedy_claim` at ``iou_threshold``.
    """
    from .core import iou3d_matrix  # local: avoids a cycle at import time

    def claim(boxes, gts):
        if not gts:
            return [-1] * len(boxes)
        cols = _greedy_claim(iou3d_matrix(boxes, [b for _, b in gts]), iou_threshold)
        return [gts[c][0] if c >= 0 else -1 for c in cols]

    tids = claim([t.last_box3d for t in problem.tracks], list(gt_prev))
    dids = claim([d.box3d for d in problem.detections], list(gt_next))
    return labels_from_ids(tids, dids)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainingSample:
    raw: RawFeatures
    M: int
    N: int
    gt: np.ndarray
    labels: np.ndarray
    graph: Optional[InteractionGraph] = None

    def get_graph(self, cfg: ModelConfig) -> InteractionGraph:
        if self.graph is None or self.graph.layers != cfg.layers or self.graph.aggregation != cfg.aggregation:
            self.graph = graph_from_counts(self.M, self.N, cfg.layers, aggregation=cfg.aggregation)
        return self.graph


def sample_loss(sample: TrainingSample, store: ad.ParamStore, cfg: ModelConfig):
    """Total loss ``affinity + weight * triplet`` and its two parts."""
    graph = sample.get_graph(cfg)
    out = model_forward(sample.raw, graph, store, cfg)
    la = affinity_loss_logits(out.logits, sample.gt, graph.edge_mask)
    lt = triplet_loss(out.node_feats[-1], sample.labels, cfg.margin)
    total = ad.add(la, ad.scale(lt, cfg.triplet_weight))
    return total, la, lt


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


def train_epoch(samples: Sequence[TrainingSample], store: ad.ParamStore, cfg: ModelConfig,
                opt: OptimizerConfig = OptimizerConfig(), lr_at=None) -> float:
    """One pass in the given order: forward, backward, Adam step per sample.

    ``lr_at(k)`` optionally overrides the learning rate for the k-th sample.
    Returns the mean of the pre-step losses.
    """
    if not samples:
        raise ValueError("train_epoch needs at least one sample")
    acc = 0.0
    for k, s in enumerate(samples):
        store.zero_grad()
        total, la, lt = sample_loss(s, store, cfg)
        val = total.item()
        if not math.isfinite(val):
            raise TrainingDivergedError(
                f"sample {k}: loss {val} (affinity {la.item()}, triplet {lt.item()})")
        acc += val
        total.backward()
        lr = opt.lr if lr_at is None else lr_at(k)
        ad.adam_step(store, lr, opt.beta1, opt.beta2, opt.eps, opt.weight_decay)
    return acc / len(samples)
