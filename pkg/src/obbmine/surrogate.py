"""A deterministic, parametric stand-in for a trained detection teacher.

The teacher carries one skill value per category, s_c = 1 - exp(-lambda *
n_c), where n_c is the effective supervised instance count the caller
reports. Proposal emission is an explicit noise model: each true instance
fires with probability s_c * (1 - difficulty); a firing instance yields m
jittered copies of its box with target-category scores centered on the same
quantity; solid distractor objects fire in proportion to the teacher's best
skill with moderate scores in every category; and a Poisson number of
clutter proposals lands on empty background with scores too low to mine.

Every instance draws from its own RNG substream keyed by (caller key,
instance index), so emission for one instance never depends on how many
draws another instance consumed — raising a skill can only add fired
instances, never reshuffle existing ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .geometry import RotatedBox, nms, rotated_iou
from .metrics import Detection
from .mining import Proposal

_INSTANCE_TAG = 2
_DISTRACTOR_TAG = 3
_CLUTTER_TAG = 4


@dataclass(frozen=True)
class TeacherConfig:
    lam: float = 0.05                 # skill growth rate per supervised instance
    proposals_per_object: int = 12    # m jittered copies per fired instance
    clutter_rate: float = 5.0         # mean background false proposals per scene
    center_jitter: float = 1.5        # px
    size_jitter: float = 0.10         # multiplicative std
    angle_jitter: float = 0.05        # rad
    score_noise: float = 0.04
    other_score_scale: float = 0.08   # non-target category score ceiling
    distractor_fire: float = 0.9      # scaled by the best current skill
    distractor_score_lo: float = 0.45
    distractor_score_hi: float = 0.72
    clutter_score_lo: float = 0.05
    clutter_score_hi: float = 0.50

    def __post_init__(self):
        if self.lam < 0:
            raise UsageError(f"TeacherConfig.lam must be >= 0, got {self.lam}")
        if self.proposals_per_object < 1:
            raise UsageError("TeacherConfig.proposals_per_object must be >= 1")
        if self.clutter_rate < 0:
            raise UsageError("TeacherConfig.clutter_rate must be >= 0")
        for name in ("center_jitter", "size_jitter", "angle_jitter",
                     "score_noise"):
            if getattr(self, name) < 0:
                raise UsageError(f"TeacherConfig.{name} must be >= 0")
        if not 0.0 <= self.distractor_fire <= 1.0:
            raise UsageError("TeacherConfig.distractor_fire must be in [0, 1]")
        for lo, hi in ((self.distractor_score_lo, self.distractor_score_hi),
                       (self.clutter_score_lo, self.clutter_score_hi)):
            if not 0.0 < lo < hi < 1.0:
                raise UsageError("TeacherConfig score ranges must satisfy "
                                 "0 < lo < hi < 1")


class SurrogateTeacher:
    def __init__(self, cfg: TeacherConfig, n_categories: int):
        if n_categories < 1:
            raise UsageError("SurrogateTeacher needs at least one category")
        self.cfg = cfg
        self.n_categories = n_categories
        self.skills = np.zeros(n_categories)

    def set_counts(self, counts) -> np.ndarray:
        """Refresh skills from per-category effective supervision counts."""
        counts = np.asarray(counts, dtype=np.float64)
        if counts.shape != (self.n_categories,):
            raise UsageError(
                f"set_counts: expected {self.n_categories} counts, got "
                f"shape {counts.shape}")
        if (counts < 0).any():
            raise UsageError("set_counts: counts must be >= 0")
        self.skills = 1.0 - np.exp(-self.cfg.lam * counts)
        return self.skills

    # ------------------------------------------------------------- emission

    def _jitter_box(self, rng, box: RotatedBox) -> RotatedBox:
        """One noisy copy of `box`, re-drawn until it localizes to IoU >= 0.7
        with the original.  A converged proposal head stays on its object;
        the floor means (a) fully-labeled scenes mine nothing, because every
        instance proposal overlaps a known annotation above the exclusion
        threshold, and (b) one object's proposals stay mutually connected in
        the cluster graph instead of splitting off stray singletons."""
        cfg = self.cfg
        for _ in range(10):
            jb = RotatedBox(
                box.cx + rng.normal(0.0, cfg.center_jitter),
                box.cy + rng.normal(0.0, cfg.center_jitter),
                box.w * max(0.2, 1.0 + rng.normal(0.0, cfg.size_jitter)),
                box.h * max(0.2, 1.0 + rng.normal(0.0, cfg.size_jitter)),
                box.theta + rng.normal(0.0, cfg.angle_jitter),
            )
            if rotated_iou(jb, box) >= 0.7:
                return jb
        return box

    def _jittered(self, rng, box: RotatedBox, base_score: float, cat: int):
        cfg = self.cfg
        out = []
        for _ in range(cfg.proposals_per_object):
            jb = self._jitter_box(rng, box)
            scores = rng.random(self.n_categories) * cfg.other_score_scale
            scores[cat] = min(0.99, max(0.01,
                                        base_score + rng.normal(0.0, cfg.score_noise)))
            out.append(Proposal(jb, scores))
        return out

    def emit(self, scene, rng_key: tuple) -> list[Proposal]:
        """Pre-NMS proposals for one scene, deterministic in (skills, scene,
        rng_key). rng_key should be a tuple of non-negative ints unique to
        (run seed, phase, epoch, scene)."""
        cfg = self.cfg
        proposals: list[Proposal] = []

        for i, inst in enumerate(scene.instances):
            rng = np.random.default_rng((*rng_key, _INSTANCE_TAG, i))
            fire = self.skills[inst.category] * (1.0 - inst.difficulty)
            if rng.random() >= fire:
                continue
            proposals.extend(self._jittered(rng, inst.box, fire, inst.category))

        best_skill = float(self.skills.max()) if self.n_categories else 0.0
        for d, dis in enumerate(getattr(scene, "distractors", ())):
            rng = np.random.default_rng((*rng_key, _DISTRACTOR_TAG, d))
            if rng.random() >= cfg.distractor_fire * best_skill:
                continue
            for _ in range(cfg.proposals_per_object):
                jb = self._jitter_box(rng, dis.box)
                scores = rng.uniform(cfg.distractor_score_lo,
                                     cfg.distractor_score_hi,
                                     size=self.n_categories)
                proposals.append(Proposal(jb, scores))

        proposals.extend(self._clutter(scene, rng_key))
        return proposals

    def _clutter(self, scene, rng_key) -> list[Proposal]:
        """Low-score false proposals on empty background."""
        cfg = self.cfg
        rng = np.random.default_rng((*rng_key, _CLUTTER_TAG))
        width, height = _scene_extent(scene)
        occupied = [inst.box for inst in scene.instances]
        occupied += [d.box for d in getattr(scene, "distractors", ())]
        out = []
        for _ in range(int(rng.poisson(cfg.clutter_rate))):
            box = None
            for _attempt in range(20):
                cand = RotatedBox(
                    rng.uniform(16.0, width - 16.0),
                    rng.uniform(16.0, height - 16.0),
                    rng.uniform(8.0, 30.0),
                    rng.uniform(5.0, 15.0),
                    rng.uniform(-math.pi / 2, math.pi / 2),
                )
                if all(rotated_iou(cand, b) < 0.05 for b in occupied):
                    box = cand
                    break
            if box is None:
                continue
            scores = rng.random(self.n_categories) * cfg.other_score_scale
            cat = int(rng.integers(0, self.n_categories))
            scores[cat] = rng.uniform(cfg.clutter_score_lo, cfg.clutter_score_hi)
            out.append(Proposal(box, scores))
        return out


def _scene_extent(scene) -> tuple[float, float]:
    """Raster extent implied by the annotation (used to scatter clutter when
    emission runs without the raster in hand)."""
    width = height = 64.0
    for inst in scene.instances:
        cs = inst.box.corners()
        width = max(width, float(cs[:, 0].max()) + 16.0)
        height = max(height, float(cs[:, 1].max()) + 16.0)
    return width, height


def detections_from_proposals(proposals, image_id: str,
                              score_floor: float = 0.05,
                              nms_iou: float = 0.5) -> list[Detection]:
    """Post-process raw proposals into per-category NMS'd detections."""
    detections: list[Detection] = []
    if not proposals:
        return detections
    scores = np.stack([p.scores for p in proposals])
    n_categories = scores.shape[1]
    for cat in range(n_categories):
        idxs = [i for i in range(len(proposals)) if scores[i, cat] > score_floor]
        if not idxs:
            continue
        boxes = [proposals[i].box for i in idxs]
        kept = nms(boxes, [float(scores[i, cat]) for i in idxs], nms_iou)
        detections.extend(
            Detection(image_id, cat, proposals[idxs[k]].box,
                      float(scores[idxs[k], cat]))
            for k in kept
        )
    return detections
