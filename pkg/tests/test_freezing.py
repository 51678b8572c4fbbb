import numpy as np
import pytest

from obbmine.errors import DataError, UsageError
from obbmine.freezing import LabelTracker, TrackerConfig
from obbmine.geometry import RotatedBox, rotated_iou
from obbmine.mining import PseudoLabel


def pl(cx, cy, score, cat=0, w=6.0, h=3.0, theta=0.0):
    return PseudoLabel(RotatedBox(cx, cy, w, h, theta), cat, score)


def test_confidence_climbs_and_freezes_on_third_match():
    # 0.5 -> 0.7 -> 0.9 -> 1.1: crosses 1.0 on the third repeat
    tracker = LabelTracker(TrackerConfig())
    label = pl(10, 10, 0.5)
    tracker.update("img0", [label], epoch=0)
    assert tracker.frozen_count() == 0
    active = tracker.active_labels("img0")
    assert len(active) == 1 and active[0].confidence == pytest.approx(0.5)

    tracker.update("img0", [label], epoch=1)
    assert tracker.active_labels("img0")[0].confidence == pytest.approx(0.7)
    res = tracker.update("img0", [label], epoch=2)
    assert tracker.active_labels("img0")[0].confidence == pytest.approx(0.9)
    assert res.newly_frozen == []

    res = tracker.update("img0", [label], epoch=3)
    assert len(res.newly_frozen) == 1
    assert tracker.frozen_count() == 1
    assert tracker.active_labels("img0") == []


def test_confidence_decay_and_drop():
    tracker = LabelTracker(TrackerConfig())
    tracker.update("img0", [pl(10, 10, 0.25)], epoch=0)
    # unmatched: 0.25 -> 0.15 -> 0.05 -> dropped at <= 0
    tracker.update("img0", [], epoch=1)
    assert tracker.active_labels("img0")[0].confidence == pytest.approx(0.15)
    tracker.update("img0", [], epoch=2)
    assert tracker.active_labels("img0")[0].confidence == pytest.approx(0.05)
    res = tracker.update("img0", [], epoch=3)
    assert res.dropped == 1
    assert tracker.active_labels("img0") == []
    assert tracker.frozen_count() == 0


def test_confidence_clamped_above_freeze_point():
    cfg = TrackerConfig(delta_up=0.2)
    tracker = LabelTracker(cfg)
    tracker.update("img0", [pl(0, 0, 0.99)], epoch=0)
    res = tracker.update("img0", [pl(0, 0, 0.99)], epoch=1)
    # 0.99 + 0.2 = 1.19 stays within the 1 + delta_up = 1.2 cap and freezes
    assert len(res.newly_frozen) == 1
    frozen = tracker.frozen_labels("img0")[0]
    assert frozen.confidence <= 1.0 + cfg.delta_up + 1e-12


def test_match_refreshes_box_geometry():
    tracker = LabelTracker(TrackerConfig())
    tracker.update("img0", [pl(10, 10, 0.5)], epoch=0)
    shifted = pl(11, 10, 0.5)
    assert rotated_iou(pl(10, 10, 0.5).box, shifted.box) > 0.5
    tracker.update("img0", [shifted], epoch=1)
    active = tracker.active_labels("img0")[0]
    assert active.box.cx == pytest.approx(11.0)


def test_matching_prefers_higher_iou():
    tracker = LabelTracker(TrackerConfig())
    tracker.update("img0", [pl(10, 10, 0.5), pl(14, 10, 0.5)], epoch=0)
    a, b = tracker.active_labels("img0")
    # a single mined box nearer the first tracked label: only that one matches
    tracker.update("img0", [pl(10.5, 10, 0.5)], epoch=1)
    active = {t.uid: t for t in tracker.active_labels("img0")}
    assert active[a.uid].confidence == pytest.approx(0.7)
    assert active[b.uid].confidence == pytest.approx(0.4)


def test_matching_requires_same_category():
    tracker = LabelTracker(TrackerConfig())
    tracker.update("img0", [pl(10, 10, 0.5, cat=0)], epoch=0)
    tracker.update("img0", [pl(10, 10, 0.5, cat=1)], epoch=1)
    # category mismatch: the old label decays and a new one is created
    active = sorted(tracker.active_labels("img0"), key=lambda t: t.uid)
    assert len(active) == 2
    assert active[0].confidence == pytest.approx(0.4)
    assert active[1].confidence == pytest.approx(0.5)
    assert active[1].category == 1


def test_match_below_iou_threshold_is_new_label():
    tracker = LabelTracker(TrackerConfig(match_iou=0.5))
    tracker.update("img0", [pl(10, 10, 0.5)], epoch=0)
    tracker.update("img0", [pl(30, 30, 0.5)], epoch=1)
    assert len(tracker.active_labels("img0")) == 2


def test_images_are_independent():
    tracker = LabelTracker(TrackerConfig())
    tracker.update("img0", [pl(10, 10, 0.5)], epoch=0)
    tracker.update("img1", [pl(10, 10, 0.6)], epoch=0)
    tracker.update("img0", [pl(10, 10, 0.5)], epoch=1)
    assert tracker.active_labels("img0")[0].confidence == pytest.approx(0.7)
    assert tracker.active_labels("img1")[0].confidence == pytest.approx(0.6)


def test_epoch_must_not_decrease():
    tracker = LabelTracker(TrackerConfig())
    tracker.update("img0", [pl(10, 10, 0.5)], epoch=2)
    with pytest.raises(UsageError):
        tracker.update("img0", [], epoch=1)
    # equal epoch stays legal (multiple images per epoch)
    tracker.update("img1", [], epoch=2)


def test_frozen_label_not_duplicated():
    tracker = LabelTracker(TrackerConfig())
    label = pl(10, 10, 0.9)
    for epoch in range(2):
        tracker.update("img0", [label], epoch=epoch)
    assert tracker.frozen_count() == 1
    # the same box keeps getting mined; it must not freeze a duplicate
    for epoch in range(2, 6):
        tracker.update("img0", [label], epoch=epoch)
    assert tracker.frozen_count() == 1


def test_frozen_count_by_category():
    tracker = LabelTracker(TrackerConfig())
    for epoch in range(2):
        tracker.update("img0", [pl(10, 10, 0.9, cat=0), pl(40, 40, 0.9, cat=2)], epoch=epoch)
    assert tracker.frozen_count() == 2
    assert tracker.frozen_count(category=0) == 1
    assert tracker.frozen_count(category=1) == 0
    assert tracker.frozen_count(category=2) == 1


def test_queue_evicts_oldest_entries():
    tracker = LabelTracker(TrackerConfig(queue_capacity=3))
    for epoch in range(5):
        tracker.update("img0", [], epoch=epoch)
    assert len(tracker.queue) == 3
    assert [entry[0] for entry in tracker.queue] == [2, 3, 4]


def test_checkpoint_roundtrip():
    tracker = LabelTracker(TrackerConfig(queue_capacity=8))
    rng = np.random.default_rng(5)
    for epoch in range(4):
        for img in ("a", "b"):
            mined = [
                pl(rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(0.3, 0.95),
                   cat=int(rng.integers(0, 3)))
                for _ in range(int(rng.integers(0, 4)))
            ]
            tracker.update(img, mined, epoch=epoch)
    blob = tracker.to_dict()
    restored = LabelTracker.from_dict(blob)
    assert restored.to_dict() == blob
    assert restored.frozen_count() == tracker.frozen_count()
    for img in ("a", "b"):
        got = [t.to_dict() for t in restored.active_labels(img)]
        want = [t.to_dict() for t in tracker.active_labels(img)]
        assert got == want


def test_from_dict_rejects_malformed():
    with pytest.raises(DataError):
        LabelTracker.from_dict({"bogus": True})


def test_frozen_set_only_grows():
    cfg = TrackerConfig()
    tracker = LabelTracker(cfg)
    rng = np.random.default_rng(11)
    prev = 0
    for epoch in range(12):
        mined = [
            pl(rng.uniform(0, 80), rng.uniform(0, 80), rng.uniform(0.4, 0.99),
               cat=int(rng.integers(0, 2)))
            for _ in range(int(rng.integers(0, 6)))
        ]
        tracker.update("img0", mined, epoch=epoch)
        now = tracker.frozen_count()
        assert now >= prev
        prev = now


def test_no_overlapping_frozen_same_category():
    cfg = TrackerConfig()
    tracker = LabelTracker(cfg)
    rng = np.random.default_rng(23)
    for epoch in range(15):
        mined = [
            pl(rng.uniform(0, 40), rng.uniform(0, 40), rng.uniform(0.5, 0.99),
               w=rng.uniform(5, 12), h=rng.uniform(5, 12))
            for _ in range(int(rng.integers(1, 5)))
        ]
        tracker.update("img0", mined, epoch=epoch)
    frozen = tracker.frozen_labels("img0")
    for i in range(len(frozen)):
        for j in range(i + 1, len(frozen)):
            if frozen[i].category == frozen[j].category:
                assert rotated_iou(frozen[i].box, frozen[j].box) < cfg.match_iou


def test_config_validation():
    with pytest.raises(UsageError):
        TrackerConfig(delta_up=0.0)
    with pytest.raises(UsageError):
        TrackerConfig(delta_down=-0.1)
    with pytest.raises(UsageError):
        TrackerConfig(match_iou=1.5)
    with pytest.raises(UsageError):
        TrackerConfig(queue_capacity=0)
