"""Region intensity entropy, per-category Gaussian entropy models, and the
entropy-band pseudo-label filter.

Entropy is the Shannon entropy (natural log) of the histogram of intensities
under a rotated box, with equal-width bins spanning [0, 255]. Labels whose
region entropy falls outside their category's mu +/- sigma band are rejected;
regions too small to measure reliably are passed through untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, UsageError
from .geometry import RotatedBox, pixels_inside

DEFAULT_BINS = 32
DEFAULT_MIN_PIXELS = 16
DEFAULT_MIN_SAMPLES = 5


@dataclass(frozen=True)
class EntropyStats:
    """Measured entropy of one region: value in nats plus the pixel count."""

    value: float
    pixel_count: int


def region_entropy(image: np.ndarray, box: RotatedBox, bins: int = DEFAULT_BINS) -> EntropyStats:
    """Entropy of the intensity histogram under `box`.

    The histogram uses `bins` equal-width bins over [0, 255] (so 8 intensity
    levels per bin at the default 32). Empty regions yield value 0 with
    pixel_count 0.
    """
    if bins < 2:
        raise UsageError(f"region_entropy: bins must be >= 2, got {bins}")
    if image.ndim != 2 or image.size == 0:
        raise UsageError("region_entropy: image must be a non-empty 2-D array")
    if image.dtype != np.uint8:
        raise UsageError(f"region_entropy: expected uint8 raster, got {image.dtype}")
    h, w = image.shape
    coords = pixels_inside(box, w, h)
    n = coords.shape[0]
    if n == 0:
        return EntropyStats(0.0, 0)
    values = image[coords[:, 1], coords[:, 0]].astype(np.int64)
    binned = values * bins // 256
    counts = np.bincount(binned, minlength=bins)
    p = counts[counts > 0] / n
    value = float(-(p * np.log(p)).sum())
    return EntropyStats(max(0.0, value), int(n))


@dataclass(frozen=True)
class EntropyRecord:
    mu: float
    sigma: float
    count: int


@dataclass
class EntropyModel:
    """Per-category Gaussian records over labeled-region entropies.

    Categories with fewer than min_samples observations fall back to the
    global record (fitted over every observation).
    """

    records: dict[int, EntropyRecord] = field(default_factory=dict)
    global_record: EntropyRecord | None = None
    bins: int = DEFAULT_BINS
    min_pixels: int = DEFAULT_MIN_PIXELS
    min_samples: int = DEFAULT_MIN_SAMPLES

    def record_for(self, category: int) -> EntropyRecord:
        rec = self.records.get(category)
        if rec is not None and rec.count >= self.min_samples:
            return rec
        if self.global_record is None:
            raise UsageError("entropy model is empty; fit it before filtering")
        return self.global_record

    def accepts(self, category: int, value: float) -> bool:
        """True iff value lies inside [mu - sigma, mu + sigma], inclusive."""
        rec = self.record_for(category)
        return rec.mu - rec.sigma <= value <= rec.mu + rec.sigma

    def to_dict(self) -> dict:
        return {
            "bins": self.bins,
            "min_pixels": self.min_pixels,
            "min_samples": self.min_samples,
            "global": _rec_dict(self.global_record),
            "categories": {
                str(c): _rec_dict(r) for c, r in sorted(self.records.items())
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EntropyModel":
        try:
            records = {
                int(c): EntropyRecord(float(r["mu"]), float(r["sigma"]), int(r["count"]))
                for c, r in d.get("categories", {}).items()
            }
            g = d.get("global")
            global_record = (
                EntropyRecord(float(g["mu"]), float(g["sigma"]), int(g["count"]))
                if g is not None else None
            )
            return cls(
                records=records,
                global_record=global_record,
                bins=int(d["bins"]),
                min_pixels=int(d["min_pixels"]),
                min_samples=int(d["min_samples"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed entropy model: {exc}") from None


def _rec_dict(rec: EntropyRecord | None):
    if rec is None:
        return None
    return {"mu": rec.mu, "sigma": rec.sigma, "count": rec.count}


def _fit_record(values: list[float]) -> EntropyRecord:
    arr = np.asarray(values, dtype=np.float64)
    mu = float(arr.mean())
    sigma = float(arr.std(ddof=1)) if arr.size >= 2 else 0.0
    return EntropyRecord(mu, sigma, int(arr.size))


def fit_entropy_model(values_by_category: dict[int, list[float]],
                      bins: int = DEFAULT_BINS,
                      min_pixels: int = DEFAULT_MIN_PIXELS,
                      min_samples: int = DEFAULT_MIN_SAMPLES) -> EntropyModel:
    """Fit per-category Gaussians (sample mean, unbiased std) plus the global
    fallback record from observed entropy values.

    Raises UsageError when no values at all are supplied.
    """
    all_values = [v for vs in values_by_category.values() for v in vs]
    if not all_values:
        raise UsageError("fit_entropy_model: no labeled entropy observations")
    records = {
        int(c): _fit_record(vs)
        for c, vs in sorted(values_by_category.items()) if vs
    }
    return EntropyModel(
        records=records,
        global_record=_fit_record(all_values),
        bins=bins,
        min_pixels=min_pixels,
        min_samples=min_samples,
    )


def collect_entropy_values(scenes, rasters, bins: int = DEFAULT_BINS,
                           min_pixels: int = DEFAULT_MIN_PIXELS) -> dict[int, list[float]]:
    """Measure region entropy of every labeled instance, grouped by category.
    Regions smaller than min_pixels are skipped (too few samples to trust)."""
    out: dict[int, list[float]] = {}
    for scene in scenes:
        image = rasters[scene.image_id]
        for inst in scene.instances:
            if not inst.labeled:
                continue
            stats = region_entropy(image, inst.box, bins)
            if stats.pixel_count < min_pixels:
                continue
            out.setdefault(inst.category, []).append(stats.value)
    return out


def entropy_band_filter(labels, image: np.ndarray, model: EntropyModel):
    """Split pseudo labels into (kept, rejected) by the entropy band test.

    A label is kept iff its region entropy lies within the fitted mu +/- sigma
    band of its category (inclusive). Labels whose region has fewer than
    model.min_pixels pixels are kept unconditionally: the filter abstains
    rather than judging on a handful of samples.
    """
    kept = []
    rejected = []
    for label in labels:
        stats = region_entropy(image, label.box, model.bins)
        if stats.pixel_count < model.min_pixels:
            kept.append(label)
        elif model.accepts(label.category, stats.value):
            kept.append(label)
        else:
            rejected.append(label)
    return kept, rejected
