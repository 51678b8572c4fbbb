"""Classification and regression losses for the mining loop.

Positives (real, frozen, or pseudo labels) carry a focal classification term
plus a 1 - IoU regression term, weighted 1.0 for real/frozen and by the mined
confidence for pseudo labels. Negatives split into hard negatives (confident
teacher, substantial overlap with an annotation -- kept at full weight) and
normal negatives, down-weighted by (1 - teacher foreground score) so that
unlabeled true objects mistaken for background do not dominate.

Analytic gradients are provided for the probability-dependent terms and are
verified against central finite differences by grad_check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .geometry import RotatedBox, as_box_array, iou_matrix, rotated_iou

PROB_EPS = 1e-7

ROLE_REAL = "real_gt"
ROLE_FROZEN = "frozen_gt"
ROLE_PSEUDO = "pseudo_gt"
ROLE_HARD_NEGATIVE = "hard_negative"
ROLE_NORMAL_NEGATIVE = "normal_negative"

_POSITIVE_ROLES = (ROLE_REAL, ROLE_FROZEN, ROLE_PSEUDO)
_NEGATIVE_ROLES = (ROLE_HARD_NEGATIVE, ROLE_NORMAL_NEGATIVE)


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.25
    gamma: float = 2.0
    bg_score_thr: float = 0.5   # teacher foreground score above this = "not background"
    hard_neg_iou: float = 0.3   # overlap with an annotation above this = "hard"

    def __post_init__(self):
        if self.gamma < 0:
            raise UsageError(f"LossConfig.gamma must be >= 0, got {self.gamma}")
        if not 0.0 < self.alpha <= 1.0:
            raise UsageError(f"LossConfig.alpha must be in (0, 1], got {self.alpha}")
        for name in ("bg_score_thr", "hard_neg_iou"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise UsageError(f"LossConfig.{name} must be in (0, 1), got {v}")


@dataclass
class TrainingSample:
    """One loss input: per-category student probabilities, an optional target
    category (None for negatives), the teacher's foreground score, a role,
    and optional box pair for the regression term."""

    probs: np.ndarray
    target: int | None = None
    role: str | None = None
    weight: float | None = None          # mined confidence for pseudo positives
    teacher_score: float | None = None   # q, foreground probability under the teacher
    pred_box: RotatedBox | None = None
    gt_box: RotatedBox | None = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 1 or self.probs.size == 0:
            raise ValueError("TrainingSample.probs must be a non-empty vector")


def _clip_probs(p: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)


def focal_loss(probs, target: int | None, cfg: LossConfig) -> float:
    """Focal classification loss over a per-category probability vector.

    The target category contributes -alpha * (1-p)^gamma * ln(p); every other
    category contributes the background side -(1-alpha) * p^gamma * ln(1-p).
    target None means all categories are background. Probabilities are
    clamped to [1e-7, 1 - 1e-7].
    """
    p = _clip_probs(probs)
    if target is not None and not 0 <= target < p.size:
        raise UsageError(f"focal_loss: target {target} out of range for C={p.size}")
    loss = 0.0
    for c in range(p.size):
        if c == target:
            loss += -cfg.alpha * (1.0 - p[c]) ** cfg.gamma * math.log(p[c])
        else:
            loss += -(1.0 - cfg.alpha) * p[c] ** cfg.gamma * math.log(1.0 - p[c])
    return float(loss)


def focal_loss_grad(probs, target: int | None, cfg: LossConfig) -> np.ndarray:
    """Analytic d(focal_loss)/d(probs). Valid on the open interval; inputs at
    the clamp boundary follow the clamped formula."""
    p = _clip_probs(probs)
    a, g = cfg.alpha, cfg.gamma
    grad = np.empty_like(p)
    for c in range(p.size):
        if c == target:
            grad[c] = a * g * (1.0 - p[c]) ** (g - 1.0) * math.log(p[c]) \
                - a * (1.0 - p[c]) ** g / p[c]
        else:
            grad[c] = -(1.0 - a) * g * p[c] ** (g - 1.0) * math.log(1.0 - p[c]) \
                + (1.0 - a) * p[c] ** g / (1.0 - p[c])
    return grad


def rotated_iou_loss(pred: RotatedBox, gt: RotatedBox) -> float:
    """Regression loss 1 - IoU, in [0, 1]."""
    return 1.0 - rotated_iou(pred, gt)


def partition_negatives(samples: list[TrainingSample], known_gt,
                        cfg: LossConfig) -> list[TrainingSample]:
    """Assign negative roles in place (positives pass through untouched).

    A negative is a hard negative iff the teacher still sees foreground there
    (teacher_score > bg_score_thr) AND its box overlaps some known annotation
    at IoU >= hard_neg_iou; otherwise it is a normal negative, whose loss
    will be scaled by (1 - teacher_score).
    """
    negatives = [s for s in samples if s.role is None or s.role in _NEGATIVE_ROLES]
    gt_arr = known_gt if isinstance(known_gt, np.ndarray) else as_box_array(known_gt)
    neg_boxes = []
    for s in negatives:
        if s.teacher_score is None:
            raise UsageError("partition_negatives: negative sample without teacher_score")
        if s.pred_box is None:
            raise UsageError("partition_negatives: negative sample without pred_box")
        neg_boxes.append(s.pred_box)
    if negatives:
        if gt_arr.shape[0]:
            best = iou_matrix(as_box_array(neg_boxes), gt_arr).max(axis=1)
        else:
            best = np.zeros(len(negatives))
        for s, iou in zip(negatives, best):
            if s.teacher_score > cfg.bg_score_thr and iou >= cfg.hard_neg_iou:
                s.role = ROLE_HARD_NEGATIVE
            else:
                s.role = ROLE_NORMAL_NEGATIVE
    return samples


def focal_ignore_loss(negatives: list[TrainingSample], cfg: LossConfig) -> float:
    """Two-term negative loss.

    Hard negatives average the plain focal term; normal negatives average the
    focal term scaled by (1 - teacher_score). An empty partition contributes
    0 (its mean would be undefined).
    """
    hard = []
    normal = []
    for s in negatives:
        if s.role == ROLE_HARD_NEGATIVE:
            hard.append(s)
        elif s.role == ROLE_NORMAL_NEGATIVE:
            normal.append(s)
        else:
            raise UsageError(
                f"focal_ignore_loss: sample role {s.role!r} is not a negative role"
            )
    loss = 0.0
    if hard:
        loss += sum(focal_loss(s.probs, None, cfg) for s in hard) / len(hard)
    if normal:
        for s in normal:
            if s.teacher_score is None:
                raise UsageError("focal_ignore_loss: normal negative without teacher_score")
        loss += sum(
            (1.0 - s.teacher_score) * focal_loss(s.probs, None, cfg) for s in normal
        ) / len(normal)
    return float(loss)


def focal_ignore_loss_grad(negatives: list[TrainingSample],
                           cfg: LossConfig) -> list[np.ndarray]:
    """Per-sample analytic gradients of focal_ignore_loss w.r.t. each
    sample's probability vector."""
    n_hard = sum(1 for s in negatives if s.role == ROLE_HARD_NEGATIVE)
    n_normal = sum(1 for s in negatives if s.role == ROLE_NORMAL_NEGATIVE)
    grads = []
    for s in negatives:
        g = focal_loss_grad(s.probs, None, cfg)
        if s.role == ROLE_HARD_NEGATIVE:
            grads.append(g / n_hard)
        else:
            grads.append(g * (1.0 - s.teacher_score) / n_normal)
    return grads


def total_loss(samples: list[TrainingSample], cfg: LossConfig) -> float:
    """Assemble the full training loss.

    Positives: weight * (focal classification + (1 - IoU) regression when a
    box pair is present), with weight 1.0 for real and frozen labels and the
    mined confidence for pseudo labels. Negatives: focal_ignore_loss over
    the hard/normal partition.
    """
    positives = []
    negatives = []
    for s in samples:
        if s.role in _POSITIVE_ROLES:
            positives.append(s)
        elif s.role in _NEGATIVE_ROLES:
            negatives.append(s)
        else:
            raise UsageError(f"total_loss: sample with unassigned role {s.role!r}")
    loss = 0.0
    for s in positives:
        if s.target is None:
            raise UsageError("total_loss: positive sample without target category")
        if s.role == ROLE_PSEUDO:
            if s.weight is None:
                raise UsageError("total_loss: pseudo positive without mined confidence")
            w = s.weight
        else:
            w = 1.0
        term = focal_loss(s.probs, s.target, cfg)
        if s.pred_box is not None and s.gt_box is not None:
            term += rotated_iou_loss(s.pred_box, s.gt_box)
        loss += w * term
    loss += focal_ignore_loss(negatives, cfg) if negatives else 0.0
    return float(loss)


def grad_check(fn, grad_fn, x0: np.ndarray, step: float = 1e-5) -> float:
    """Max relative error between analytic gradient and central differences.

    The denominator floors at max(|analytic|, |numeric|, 1e-6) so near-zero
    components cannot manufacture spurious blowups.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    analytic = np.asarray(grad_fn(x0), dtype=np.float64)
    worst = 0.0
    for i in range(x0.size):
        hi = x0.copy()
        lo = x0.copy()
        hi[i] += step
        lo[i] -= step
        numeric = (fn(hi) - fn(lo)) / (2.0 * step)
        denom = max(abs(analytic[i]), abs(numeric), 1e-6)
        worst = max(worst, abs(numeric - analytic[i]) / denom)
    return worst
