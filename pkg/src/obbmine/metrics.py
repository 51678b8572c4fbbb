"""Detection quality (AP/mAP at rotated IoU 0.5) and mined-label
precision/recall against withheld ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import RotatedBox, as_box_array, iou_matrix


@dataclass(frozen=True)
class Detection:
    image_id: str
    category: int
    box: RotatedBox
    score: float


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    category: int
    box: RotatedBox


def greedy_match_boxes(boxes_a, cats_a, boxes_b, cats_b, iou_thr: float):
    """One-to-one greedy matching between two box collections.

    Candidate pairs share a category and have IoU >= iou_thr; they are
    consumed in descending IoU order (ties by lower index on either side).
    Returns a list of (index_a, index_b) pairs.
    """
    if len(boxes_a) == 0 or len(boxes_b) == 0:
        return []
    m = iou_matrix(as_box_array(boxes_a), as_box_array(boxes_b))
    ca = np.asarray(cats_a)
    cb = np.asarray(cats_b)
    same = ca[:, None] == cb[None, :]
    ia, ib = np.nonzero(same & (m >= iou_thr))
    order = sorted(range(ia.size), key=lambda k: (-m[ia[k], ib[k]], ia[k], ib[k]))
    used_a = set()
    used_b = set()
    pairs = []
    for k in order:
        a, b = int(ia[k]), int(ib[k])
        if a in used_a or b in used_b:
            continue
        used_a.add(a)
        used_b.add(b)
        pairs.append((a, b))
    return pairs


@dataclass
class EvalResult:
    ap: dict[int, float] = field(default_factory=dict)
    n_gt: dict[int, int] = field(default_factory=dict)

    @property
    def map(self) -> float:
        """Unweighted mean AP over categories present in the ground truth."""
        if not self.ap:
            return 0.0
        return float(sum(self.ap.values()) / len(self.ap))


def _all_point_ap(tp_flags: np.ndarray, n_gt: int) -> float:
    if n_gt == 0 or tp_flags.size == 0:
        return 0.0
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(~tp_flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate(([0.0], recall[:-1]))
    return float(((recall - prev) * envelope).sum())


def evaluate_detections(detections, ground_truth, iou_thr: float = 0.5) -> EvalResult:
    """AP per category and mAP at the given rotated-IoU threshold.

    Detections are processed in descending score order (ties by insertion
    order); each one greedily claims the highest-IoU unmatched ground truth
    of its image and category, scoring a true positive iff that IoU clears
    iou_thr. Categories absent from the ground truth are not scored.
    """
    result = EvalResult()
    gt_cats = sorted({g.category for g in ground_truth})
    for cat in gt_cats:
        gts = [g for g in ground_truth if g.category == cat]
        by_image: dict[str, list[int]] = {}
        for idx, g in enumerate(gts):
            by_image.setdefault(g.image_id, []).append(idx)
        gt_boxes = as_box_array([g.box for g in gts])
        matched = np.zeros(len(gts), dtype=bool)

        dets = [d for d in detections if d.category == cat]
        order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
        tp_flags = np.zeros(len(dets), dtype=bool)
        for rank, di in enumerate(order):
            det = dets[di]
            cand = [gi for gi in by_image.get(det.image_id, []) if not matched[gi]]
            if not cand:
                continue
            ious = iou_matrix(det.box.to_array()[None, :], gt_boxes[cand])[0]
            best = int(np.argmax(ious))
            if ious[best] >= iou_thr:
                matched[cand[best]] = True
                tp_flags[rank] = True
        result.ap[cat] = _all_point_ap(tp_flags, len(gts))
        result.n_gt[cat] = len(gts)
    return result


@dataclass(frozen=True)
class PseudoMetrics:
    precision: float
    recall: float
    tp: int
    n_mined: int
    n_hidden: int


def pseudo_label_metrics(mined, hidden, iou_thr: float = 0.5) -> PseudoMetrics:
    """Precision/recall of mined labels against the withheld (unlabeled)
    instances. A mined label is correct iff it greedily matches an unmatched
    hidden instance of its category at IoU >= iou_thr. An empty mined set
    scores precision 1, recall 0 by convention.
    """
    n_mined = len(mined)
    n_hidden = len(hidden)
    if n_mined == 0:
        return PseudoMetrics(1.0, 0.0, 0, 0, n_hidden)
    pairs = greedy_match_boxes(
        [m.box for m in mined], [m.category for m in mined],
        [h.box for h in hidden], [h.category for h in hidden], iou_thr,
    )
    tp = len(pairs)
    recall = tp / n_hidden if n_hidden else 0.0
    return PseudoMetrics(tp / n_mined, recall, tp, n_mined, n_hidden)
