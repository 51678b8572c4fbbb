import math
from types import SimpleNamespace

import numpy as np
import pytest

from obbmine.entropy import (
    EntropyModel,
    EntropyRecord,
    collect_entropy_values,
    entropy_band_filter,
    fit_entropy_model,
    region_entropy,
)
from obbmine.errors import UsageError
from obbmine.geometry import RotatedBox
from obbmine.mining import PseudoLabel


def _flat(level, shape=(16, 16)):
    return np.full(shape, level, dtype=np.uint8)


# ------------------------------------------------------------- region entropy


def test_constant_region_zero_entropy():
    stats = region_entropy(_flat(124), RotatedBox(8, 8, 8, 8, 0))
    assert stats.value == 0.0
    assert stats.pixel_count == 64


def test_two_level_region_ln2():
    img = _flat(20)
    img[:, 8:] = 220  # half the box pixels in a distant bin
    stats = region_entropy(img, RotatedBox(8, 8, 8, 8, 0))
    assert stats.value == pytest.approx(math.log(2), abs=1e-12)


def test_uniform_over_all_bins_ln32():
    # 32 columns, one intensity bin each; box covers them all equally
    img = np.zeros((8, 32), dtype=np.uint8)
    img[:] = (np.arange(32, dtype=np.uint8) * 8)[None, :]
    stats = region_entropy(img, RotatedBox(16, 4, 32, 8, 0), bins=32)
    assert stats.pixel_count == 256
    assert stats.value == pytest.approx(math.log(32), abs=1e-12)


def test_same_bin_levels_collapse():
    img = _flat(120)
    img[:, 8:] = 121  # 120 and 121 share the [120, 127] bin
    stats = region_entropy(img, RotatedBox(8, 8, 8, 8, 0))
    assert stats.value == 0.0


def test_empty_region():
    stats = region_entropy(_flat(0), RotatedBox(100, 100, 4, 4, 0))
    assert (stats.value, stats.pixel_count) == (0.0, 0)


def test_entropy_bounds_random():
    rng = np.random.default_rng(8)
    for _ in range(30):
        img = rng.integers(0, 256, (24, 24)).astype(np.uint8)
        box = RotatedBox(rng.uniform(4, 20), rng.uniform(4, 20),
                         rng.uniform(2, 12), rng.uniform(2, 12), rng.uniform(-1.5, 1.5))
        stats = region_entropy(img, box)
        assert 0.0 <= stats.value <= math.log(32) + 1e-12


def test_region_entropy_argument_errors():
    with pytest.raises(UsageError):
        region_entropy(_flat(0), RotatedBox(4, 4, 2, 2, 0), bins=1)
    with pytest.raises(UsageError):
        region_entropy(_flat(0).astype(np.float64), RotatedBox(4, 4, 2, 2, 0))
    with pytest.raises(UsageError):
        region_entropy(np.zeros(5, dtype=np.uint8), RotatedBox(4, 4, 2, 2, 0))


# ---------------------------------------------------------------- model fit


def test_fit_single_category_hand_values():
    model = fit_entropy_model({0: [1.0, 3.0]}, min_samples=2)
    rec = model.records[0]
    assert rec.mu == pytest.approx(2.0, abs=1e-12)
    assert rec.sigma == pytest.approx(math.sqrt(2.0), abs=1e-12)
    assert rec.count == 2


def test_fit_equal_values_sigma_zero():
    model = fit_entropy_model({2: [1.7, 1.7, 1.7, 1.7, 1.7]})
    assert model.records[2].sigma == 0.0
    assert model.records[2].mu == pytest.approx(1.7)


def test_fit_single_sample_sigma_zero():
    model = fit_entropy_model({0: [2.5]}, min_samples=1)
    assert model.records[0].sigma == 0.0


def test_fallback_below_min_samples():
    model = fit_entropy_model({0: [1.0, 1.2], 1: [2.0, 2.1, 2.2, 2.3, 2.4]},
                              min_samples=5)
    # category 0 has 2 < 5 samples: record_for falls back to the global fit
    assert model.record_for(0) == model.global_record
    assert model.record_for(1) == model.records[1]


def test_fit_empty_raises():
    with pytest.raises(UsageError):
        fit_entropy_model({})


def test_band_inclusive_edges():
    model = EntropyModel(records={0: EntropyRecord(2.0, 0.5, 9)},
                         global_record=EntropyRecord(2.0, 0.5, 9))
    assert model.accepts(0, 2.0)
    assert model.accepts(0, 1.5)   # mu - sigma, inclusive
    assert model.accepts(0, 2.5)   # mu + sigma, inclusive
    assert not model.accepts(0, 2.5000001)
    assert not model.accepts(0, 1.4999999)


def test_sigma_zero_band_is_exact_match():
    model = EntropyModel(records={0: EntropyRecord(1.7, 0.0, 9)},
                         global_record=EntropyRecord(1.7, 0.0, 9))
    assert model.accepts(0, 1.7)
    assert not model.accepts(0, 1.7 + 1e-9)


def test_retention_rate_near_one_sigma_mass():
    rng = np.random.default_rng(123)
    fitted = fit_entropy_model({0: list(rng.normal(2.0, 0.4, 500))})
    rec = fitted.records[0]
    draws = rng.normal(rec.mu, rec.sigma, 10_000)
    frac = np.mean([fitted.accepts(0, d) for d in draws])
    assert abs(frac - 0.6827) < 0.03


def test_model_dict_roundtrip():
    model = fit_entropy_model({0: [1.0, 1.5, 2.0], 3: [2.5, 2.6]}, bins=16,
                              min_pixels=8, min_samples=2)
    back = EntropyModel.from_dict(model.to_dict())
    assert back == model


# -------------------------------------------------------------------- filter


def _textured_image():
    """Left half: strongly textured (high entropy); right half: flat."""
    rng = np.random.default_rng(0)
    img = np.full((32, 32), 124, dtype=np.uint8)
    img[:, :16] = rng.choice(np.arange(0, 256, 16, dtype=np.uint8), (32, 16))
    return img


def test_filter_keeps_in_band_rejects_outside():
    img = _textured_image()
    textured_box = RotatedBox(8, 16, 12, 24, 0)
    flat_box = RotatedBox(24, 16, 12, 24, 0)
    h_textured = region_entropy(img, textured_box).value
    model = EntropyModel(records={0: EntropyRecord(h_textured, 0.2, 99)},
                         global_record=EntropyRecord(h_textured, 0.2, 99))
    labels = [
        PseudoLabel(textured_box, 0, 0.8),
        PseudoLabel(flat_box, 0, 0.9),  # flat region: entropy ~0, far below band
    ]
    kept, rejected = entropy_band_filter(labels, img, model)
    assert [l.box for l in kept] == [textured_box]
    assert [l.box for l in rejected] == [flat_box]


def test_filter_abstains_on_tiny_regions():
    img = _textured_image()
    tiny = RotatedBox(24, 16, 2, 2, 0)  # 4 pixel centers < min_pixels=16
    model = EntropyModel(records={0: EntropyRecord(3.0, 0.1, 99)},
                         global_record=EntropyRecord(3.0, 0.1, 99))
    kept, rejected = entropy_band_filter([PseudoLabel(tiny, 0, 0.5)], img, model)
    assert len(kept) == 1 and not rejected


def test_filter_uses_fallback_for_sparse_categories():
    img = _textured_image()
    flat_box = RotatedBox(24, 16, 12, 24, 0)
    model = EntropyModel(records={5: EntropyRecord(0.0, 0.05, 1)},  # below min_samples
                         global_record=EntropyRecord(0.0, 0.05, 40),
                         min_samples=5)
    kept, rejected = entropy_band_filter([PseudoLabel(flat_box, 5, 0.5)], img, model)
    # global record centered at 0 accepts the flat region
    assert len(kept) == 1 and not rejected


# ---------------------------------------------------------------- collection


def test_collect_entropy_values_labeled_only():
    img = _textured_image()
    scene = SimpleNamespace(
        image_id="s0",
        instances=[
            SimpleNamespace(box=RotatedBox(8, 16, 12, 24, 0), category=0, labeled=True),
            SimpleNamespace(box=RotatedBox(24, 16, 12, 24, 0), category=0, labeled=False),
            SimpleNamespace(box=RotatedBox(24, 8, 2, 2, 0), category=1, labeled=True),
        ],
    )
    values = collect_entropy_values([scene], {"s0": img})
    assert set(values) == {0}          # unlabeled skipped; tiny region skipped
    assert len(values[0]) == 1
    assert values[0][0] > 1.0
