"""Multi-epoch pseudo-label tracking.

Labels re-mined across epochs accumulate confidence (+delta_up when matched,
-delta_down when missed); crossing 1.0 freezes a label permanently, after
which it counts as ground truth for later mining passes. Mined batches are
remembered in a bounded FIFO queue sized to one epoch of updates.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .errors import DataError, UsageError
from .geometry import RotatedBox
from .metrics import greedy_match_boxes
from .mining import PseudoLabel


@dataclass(frozen=True)
class TrackerConfig:
    delta_up: float = 0.2
    delta_down: float = 0.1
    match_iou: float = 0.5
    queue_capacity: int = 256

    def __post_init__(self):
        if self.delta_up <= 0 or self.delta_down <= 0:
            raise UsageError("TrackerConfig deltas must be positive")
        if not 0.0 < self.match_iou < 1.0:
            raise UsageError(f"TrackerConfig.match_iou must be in (0,1), got {self.match_iou}")
        if self.queue_capacity < 1:
            raise UsageError("TrackerConfig.queue_capacity must be >= 1")


@dataclass
class TrackedLabel:
    uid: int
    image_id: str
    box: RotatedBox
    category: int
    confidence: float
    created_epoch: int
    last_matched_epoch: int

    def to_dict(self) -> dict:
        return {
            "uid": self.uid,
            "image_id": self.image_id,
            "box": [self.box.cx, self.box.cy, self.box.w, self.box.h, self.box.theta],
            "category": self.category,
            "confidence": self.confidence,
            "created_epoch": self.created_epoch,
            "last_matched_epoch": self.last_matched_epoch,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrackedLabel":
        try:
            return cls(
                uid=int(d["uid"]),
                image_id=str(d["image_id"]),
                box=RotatedBox.from_array(d["box"]),
                category=int(d["category"]),
                confidence=float(d["confidence"]),
                created_epoch=int(d["created_epoch"]),
                last_matched_epoch=int(d["last_matched_epoch"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed tracked label: {exc}") from None


@dataclass(frozen=True)
class UpdateResult:
    newly_frozen: list[TrackedLabel]
    dropped: int
    n_active: int


class LabelTracker:
    """Owns the per-image candidate and frozen label sets across epochs."""

    def __init__(self, cfg: TrackerConfig):
        self.cfg = cfg
        self.active: dict[str, list[TrackedLabel]] = {}
        self.frozen: dict[str, list[TrackedLabel]] = {}
        self.queue: deque = deque(maxlen=cfg.queue_capacity)
        self._last_epoch: int | None = None
        self._next_uid = 0

    # ------------------------------------------------------------- queries

    def frozen_labels(self, image_id: str) -> list[TrackedLabel]:
        return self.frozen.get(image_id, [])

    def frozen_boxes(self, image_id: str) -> list[RotatedBox]:
        return [t.box for t in self.frozen.get(image_id, [])]

    def frozen_count(self, category: int | None = None) -> int:
        total = 0
        for labels in self.frozen.values():
            for t in labels:
                if category is None or t.category == category:
                    total += 1
        return total

    def active_labels(self, image_id: str) -> list[TrackedLabel]:
        return self.active.get(image_id, [])

    # -------------------------------------------------------------- update

    def update(self, image_id: str, mined: list[PseudoLabel], epoch: int) -> UpdateResult:
        """Apply one epoch tick of mined labels for one image.

        Matched candidates gain delta_up (confidence capped at 1 + delta_up)
        and adopt the newly mined box; candidates missed this epoch lose
        delta_down and are dropped at 0; confidence above 1 freezes the label
        for good. Fresh labels enter at their mining confidence.
        """
        if self._last_epoch is not None and epoch < self._last_epoch:
            raise UsageError(
                f"tracker updates must use nondecreasing epochs "
                f"(got {epoch} after {self._last_epoch})"
            )
        self._last_epoch = epoch
        act = self.active.get(image_id, [])
        pairs = greedy_match_boxes(
            [m.box for m in mined], [m.category for m in mined],
            [t.box for t in act], [t.category for t in act],
            self.cfg.match_iou,
        )
        matched_mined = {a for a, _ in pairs}
        matched_tracked = {b for _, b in pairs}

        survivors: list[TrackedLabel] = []
        newly_frozen: list[TrackedLabel] = []
        dropped = 0
        for mi, ti in pairs:
            t = act[ti]
            t.confidence = min(t.confidence + self.cfg.delta_up, 1.0 + self.cfg.delta_up)
            t.box = mined[mi].box
            t.last_matched_epoch = epoch
            if t.confidence > 1.0:
                if self._overlaps_frozen(image_id, t):
                    dropped += 1
                else:
                    self.frozen.setdefault(image_id, []).append(t)
                    newly_frozen.append(t)
            else:
                survivors.append(t)
        for ti, t in enumerate(act):
            if ti in matched_tracked:
                continue
            t.confidence -= self.cfg.delta_down
            if t.confidence > 0.0:
                survivors.append(t)
            else:
                dropped += 1
        for mi, m in enumerate(mined):
            if mi in matched_mined:
                continue
            survivors.append(TrackedLabel(
                uid=self._next_uid,
                image_id=image_id,
                box=m.box,
                category=m.category,
                confidence=m.score,
                created_epoch=epoch,
                last_matched_epoch=epoch,
            ))
            self._next_uid += 1
        if survivors:
            self.active[image_id] = survivors
        else:
            self.active.pop(image_id, None)
        self.queue.append((epoch, image_id, len(mined)))
        return UpdateResult(newly_frozen, dropped, len(survivors))

    def _overlaps_frozen(self, image_id: str, label: TrackedLabel) -> bool:
        """Freezing guard: the frozen set never holds two same-category labels
        of one image overlapping at match_iou or more."""
        peers = [t for t in self.frozen.get(image_id, []) if t.category == label.category]
        if not peers:
            return False
        pairs = greedy_match_boxes(
            [label.box], [label.category],
            [t.box for t in peers], [t.category for t in peers],
            self.cfg.match_iou,
        )
        return bool(pairs)

    # ------------------------------------------------------- serialization

    def to_dict(self) -> dict:
        return {
            "config": {
                "delta_up": self.cfg.delta_up,
                "delta_down": self.cfg.delta_down,
                "match_iou": self.cfg.match_iou,
                "queue_capacity": self.cfg.queue_capacity,
            },
            "last_epoch": self._last_epoch,
            "next_uid": self._next_uid,
            "active": {
                img: [t.to_dict() for t in labels]
                for img, labels in sorted(self.active.items())
            },
            "frozen": {
                img: [t.to_dict() for t in labels]
                for img, labels in sorted(self.frozen.items())
            },
            "queue": [list(entry) for entry in self.queue],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabelTracker":
        try:
            cfg = TrackerConfig(
                delta_up=float(d["config"]["delta_up"]),
                delta_down=float(d["config"]["delta_down"]),
                match_iou=float(d["config"]["match_iou"]),
                queue_capacity=int(d["config"]["queue_capacity"]),
            )
            tracker = cls(cfg)
            tracker._last_epoch = d["last_epoch"]
            tracker._next_uid = int(d["next_uid"])
            tracker.active = {
                img: [TrackedLabel.from_dict(t) for t in labels]
                for img, labels in d["active"].items()
            }
            tracker.frozen = {
                img: [TrackedLabel.from_dict(t) for t in labels]
                for img, labels in d["frozen"].items()
            }
            for entry in d["queue"]:
                tracker.queue.append(tuple(entry))
            return tracker
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed tracker checkpoint: {exc}") from None
