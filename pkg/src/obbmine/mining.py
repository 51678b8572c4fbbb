"""Pseudo-label mining from teacher proposals.

Proposals are filtered in three stages (score threshold, overlap-with-known-GT
exclusion, top-k), connected into clusters over an IoU graph, and each cluster
is fused into a single candidate pseudo label carrying a confidence score that
grows with cluster support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .geometry import RotatedBox, as_box_array, iou_matrix, normalize_angle


@dataclass(frozen=True)
class Proposal:
    """One teacher proposal: a rotated box plus a per-category score vector."""

    box: RotatedBox
    scores: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("Proposal.scores must be a non-empty 1-D vector")
        if (arr < 0).any() or (arr > 1).any():
            raise ValueError("Proposal.scores must lie in [0, 1]")
        object.__setattr__(self, "scores", arr)

    @property
    def max_score(self) -> float:
        return float(self.scores.max())

    @property
    def category(self) -> int:
        """Argmax category; ties resolve to the lower id."""
        return int(self.scores.argmax())


@dataclass(frozen=True)
class PseudoLabel:
    """A mined candidate annotation with confidence `score` in (0, 1]."""

    box: RotatedBox
    category: int
    score: float
    cluster_size: int = 1


@dataclass(frozen=True)
class MiningConfig:
    score_thr: float = 0.6
    top_k: int = 30
    gt_excl_iou: float = 0.5
    edge_iou: float = 0.5
    literal_fusion: bool = False

    def __post_init__(self):
        for name in ("score_thr", "gt_excl_iou", "edge_iou"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise UsageError(f"MiningConfig.{name} must be in (0, 1), got {v}")
        if self.top_k < 1:
            raise UsageError(f"MiningConfig.top_k must be >= 1, got {self.top_k}")


def filter_proposals(proposals, known_gt, cfg: MiningConfig) -> list[int]:
    """Three-stage candidate selection.

    1. keep proposals whose max score is strictly above cfg.score_thr;
    2. drop any with IoU >= cfg.gt_excl_iou against a known (real or frozen)
       ground-truth box -- those objects are already annotated;
    3. keep the top_k remaining by max score, ties broken by lower index.

    Returns indices into `proposals`, sorted by descending score.
    """
    if not proposals:
        return []
    scores = np.array([p.max_score for p in proposals])
    alive = np.nonzero(scores > cfg.score_thr)[0]
    if alive.size and len(known_gt):
        boxes = as_box_array([proposals[i].box for i in alive])
        overlap = iou_matrix(boxes, known_gt if isinstance(known_gt, np.ndarray)
                             else as_box_array(known_gt))
        alive = alive[overlap.max(axis=1) < cfg.gt_excl_iou]
    order = sorted(alive, key=lambda i: (-scores[i], i))
    return [int(i) for i in order[: cfg.top_k]]


def build_clusters(candidates, edge_iou: float) -> list[list[int]]:
    """Connected components of the proposal graph.

    Two candidates are connected when their rotated IoU is strictly above
    edge_iou. Components are discovered greedily, seeded from the
    highest-score unvisited candidate and expanded breadth-first; member
    lists are sorted ascending, components ordered by seed score.
    """
    n = len(candidates)
    if n == 0:
        return []
    boxes = as_box_array([c.box for c in candidates])
    adj = iou_matrix(boxes, boxes) > edge_iou
    np.fill_diagonal(adj, False)
    seeds = sorted(range(n), key=lambda i: (-candidates[i].max_score, i))
    visited = np.zeros(n, dtype=bool)
    clusters = []
    for seed in seeds:
        if visited[seed]:
            continue
        members = [seed]
        visited[seed] = True
        frontier = [seed]
        while frontier:
            nxt = []
            for i in frontier:
                for j in np.nonzero(adj[i] & ~visited)[0]:
                    visited[j] = True
                    members.append(int(j))
                    nxt.append(int(j))
            frontier = nxt
        clusters.append(sorted(members))
    return clusters


def cluster_score(member_scores, top_k: int) -> float:
    """Cluster confidence: (max member score) * cluster_size / top_k."""
    if len(member_scores) == 0:
        raise UsageError("cluster_score: empty cluster")
    if len(member_scores) > top_k:
        raise UsageError(
            f"cluster_score: cluster size {len(member_scores)} exceeds top_k {top_k}"
        )
    return float(max(member_scores)) * len(member_scores) / top_k


def fuse_box(members, literal: bool = False) -> RotatedBox:
    """Fuse cluster members (list of (box, score)) into one box.

    Centers and extents are score-weighted means; the angle is a circular
    mean with period pi (via doubled-angle vectors). Members are first
    re-expressed in the representation of the highest-score member so that
    canonical w/h swaps at the angle boundary cannot corrupt the average.

    `literal` divides the weighted sums by the member count instead of the
    score sum, an audit mode that shrinks boxes whenever scores are below 1.
    """
    if not members:
        raise UsageError("fuse_box: empty cluster")
    ref_idx = min(range(len(members)), key=lambda i: (-members[i][1], i))
    ref_theta = members[ref_idx][0].theta
    half_pi = 0.5 * math.pi

    cxs, cys, ws, hs, thetas, scores = [], [], [], [], [], []
    for box, score in members:
        q = round((box.theta - ref_theta) / half_pi)
        theta = box.theta - q * half_pi
        w, h = (box.h, box.w) if q % 2 else (box.w, box.h)
        cxs.append(box.cx)
        cys.append(box.cy)
        ws.append(w)
        hs.append(h)
        thetas.append(theta)
        scores.append(score)

    s = np.asarray(scores)
    denom = float(len(members)) if literal else float(s.sum())
    if denom <= 0.0:
        raise UsageError("fuse_box: non-positive weight normalizer")
    cx = float(np.dot(s, cxs)) / denom
    cy = float(np.dot(s, cys)) / denom
    w = float(np.dot(s, ws)) / denom
    h = float(np.dot(s, hs)) / denom

    a = float(np.dot(s, np.cos(2.0 * np.asarray(thetas))))
    b = float(np.dot(s, np.sin(2.0 * np.asarray(thetas))))
    if math.hypot(a, b) < 1e-12 * max(1.0, float(s.sum())):
        theta = ref_theta
    else:
        theta = 0.5 * math.atan2(b, a)
    return RotatedBox(cx, cy, w, h, theta)


def vote_category(categories, scores) -> int:
    """Majority vote over member categories; ties broken by larger summed
    member score, then by lower category id."""
    if len(categories) == 0:
        raise UsageError("vote_category: empty cluster")
    counts: dict[int, int] = {}
    sums: dict[int, float] = {}
    for c, s in zip(categories, scores):
        counts[c] = counts.get(c, 0) + 1
        sums[c] = sums.get(c, 0.0) + float(s)
    return min(counts, key=lambda c: (-counts[c], -sums[c], c))


def mine_pseudo_labels(proposals, known_gt, cfg: MiningConfig) -> list[PseudoLabel]:
    """Full mining pass: filter, cluster, fuse. Returns candidate labels in
    cluster-seed score order; never more than cfg.top_k labels."""
    idx = filter_proposals(proposals, known_gt, cfg)
    cand = [proposals[i] for i in idx]
    labels = []
    for members_idx in build_clusters(cand, cfg.edge_iou):
        members = [cand[i] for i in members_idx]
        score = cluster_score([m.max_score for m in members], cfg.top_k)
        box = fuse_box([(m.box, m.max_score) for m in members], cfg.literal_fusion)
        category = vote_category([m.category for m in members],
                                 [m.max_score for m in members])
        labels.append(PseudoLabel(box, category, score, len(members)))
    return labels
