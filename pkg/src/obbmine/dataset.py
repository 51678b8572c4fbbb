"""Synthetic dense-scene benchmark data.

Scenes are grayscale rasters containing textured rotated rectangles over a
smooth noisy background. Texture is a per-instance categorical distribution
over a fixed 24-level palette whose levels all land in distinct histogram
bins, so the measured region entropy of an instance equals the empirical
entropy of its level draws. The level distribution is a truncated geometric
solved (by bisection) so that the *expected measured* entropy hits the
instance's target, including a Miller-Madow correction for the downward
bias of plug-in entropy at finite pixel counts.

Also here: the per-image, per-category sparse annotation sampler and the
box-ratio statistic, plus the manifest (de)serialization schema.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import beta as _beta_dist

from .entropy import region_entropy
from .errors import DataError, GenerationError, UsageError
from .geometry import RotatedBox, as_box_array, iou_matrix, pixels_inside
from .io import load_json, save_json

# 24 intensity levels, every one in a different 8-wide histogram bin (32-bin
# histogram over [0, 255]); the head level 124 shares its bin with the
# background mean, so minimum-entropy instances fade into the background.
PALETTE = np.array(
    [124, 4, 244, 52, 196, 28, 220, 76, 172, 100, 148, 12,
     236, 60, 188, 36, 212, 84, 164, 108, 132, 20, 228, 44],
    dtype=np.uint8,
)
MAX_LEVEL_ENTROPY = math.log(len(PALETTE))

_GEN_STREAM = 7      # rng stream tags: generation,
_SAMPLE_STREAM = 13  # sparse sampling


# ------------------------------------------------------------------- types


@dataclass(frozen=True)
class Instance:
    box: RotatedBox
    category: int
    labeled: bool
    difficulty: float

    def __post_init__(self):
        if not 0.0 <= self.difficulty <= 1.0:
            raise UsageError(
                f"Instance.difficulty must be in [0, 1], got {self.difficulty}"
            )

    def to_dict(self) -> dict:
        return {
            "cx": self.box.cx, "cy": self.box.cy, "w": self.box.w,
            "h": self.box.h, "theta": self.box.theta,
            "category": self.category, "labeled": self.labeled,
            "difficulty": self.difficulty,
        }


@dataclass(frozen=True)
class Distractor:
    """An unknown solid-color object: no category, near-zero region entropy."""

    box: RotatedBox
    level: int

    def to_dict(self) -> dict:
        return {
            "cx": self.box.cx, "cy": self.box.cy, "w": self.box.w,
            "h": self.box.h, "theta": self.box.theta, "level": self.level,
        }


@dataclass(frozen=True)
class SceneAnnotation:
    image_id: str
    instances: tuple[Instance, ...]
    distractors: tuple[Distractor, ...] = ()

    def to_dict(self) -> dict:
        blob = {
            "image_id": self.image_id,
            "instances": [inst.to_dict() for inst in self.instances],
        }
        if self.distractors:
            blob["distractors"] = [d.to_dict() for d in self.distractors]
        return blob


@dataclass(frozen=True)
class DatasetManifest:
    categories: tuple[str, ...]
    scenes: tuple[SceneAnnotation, ...]
    seed: int
    ratio: float = 1.0

    def to_dict(self) -> dict:
        return {
            "categories": list(self.categories),
            "scenes": [s.to_dict() for s in self.scenes],
            "seed": self.seed,
            "ratio": self.ratio,
        }

    @property
    def n_instances(self) -> int:
        return sum(len(s.instances) for s in self.scenes)

    @property
    def n_labeled(self) -> int:
        return sum(1 for s in self.scenes for i in s.instances if i.labeled)


def _require(blob, key, where, kind=None):
    if not isinstance(blob, dict) or key not in blob:
        raise DataError(f"{where}: missing field '{key}'")
    value = blob[key]
    if kind is not None and not isinstance(value, kind):
        raise DataError(f"{where}: field '{key}' has wrong type")
    return value


def _box_from_fields(blob, where) -> RotatedBox:
    vals = [_require(blob, k, where, (int, float)) for k in
            ("cx", "cy", "w", "h", "theta")]
    try:
        return RotatedBox(*(float(v) for v in vals))
    except (ValueError, UsageError) as exc:
        raise DataError(f"{where}: {exc}") from exc


def manifest_from_dict(blob: dict, where: str = "annotations") -> DatasetManifest:
    categories = _require(blob, "categories", where, list)
    if not categories or not all(isinstance(c, str) for c in categories):
        raise DataError(f"{where}: field 'categories' must be a non-empty "
                        f"list of names")
    seed = _require(blob, "seed", where, int)
    ratio = float(_require(blob, "ratio", where, (int, float)))
    if not 0.0 < ratio <= 1.0:
        raise DataError(f"{where}: field 'ratio' must be in (0, 1], got {ratio}")
    scenes = []
    for s_idx, sb in enumerate(_require(blob, "scenes", where, list)):
        s_where = f"{where}: scenes[{s_idx}]"
        image_id = _require(sb, "image_id", s_where, str)
        instances = []
        for i_idx, ib in enumerate(_require(sb, "instances", s_where, list)):
            i_where = f"{s_where}.instances[{i_idx}]"
            cat = _require(ib, "category", i_where, int)
            if not 0 <= cat < len(categories):
                raise DataError(f"{i_where}: field 'category' {cat} out of "
                                f"range for {len(categories)} categories")
            difficulty = float(_require(ib, "difficulty", i_where, (int, float)))
            if not 0.0 <= difficulty <= 1.0:
                raise DataError(f"{i_where}: field 'difficulty' must be in "
                                f"[0, 1], got {difficulty}")
            instances.append(Instance(
                box=_box_from_fields(ib, i_where),
                category=cat,
                labeled=_require(ib, "labeled", i_where, bool),
                difficulty=difficulty,
            ))
        distractors = []
        for d_idx, db in enumerate(sb.get("distractors", [])):
            d_where = f"{s_where}.distractors[{d_idx}]"
            level = _require(db, "level", d_where, int)
            if not 0 <= level <= 255:
                raise DataError(f"{d_where}: field 'level' must be an 8-bit "
                                f"intensity, got {level}")
            distractors.append(Distractor(_box_from_fields(db, d_where), level))
        scenes.append(SceneAnnotation(image_id, tuple(instances),
                                      tuple(distractors)))
    return DatasetManifest(tuple(categories), tuple(scenes), seed, ratio)


# -------------------------------------------------------------- level solver


def _level_probs(r: float, m: int = len(PALETTE)) -> np.ndarray:
    """Truncated geometric p_k proportional to r^k over the palette levels;
    r = 1 is uniform, r -> 0 collapses onto the head level."""
    if r >= 1.0:
        return np.full(m, 1.0 / m)
    w = r ** np.arange(m)
    return w / w.sum()


def _dist_entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def _solve_level_ratio(target: float) -> float:
    """Bisect for the geometric ratio whose distribution entropy hits target.

    Entropy is continuous and strictly increasing in r on [0, 1], from 0 to
    ln(palette size); 60 halvings pin r far below the entropy tolerance."""
    if target <= 0.0:
        return 0.0
    if target >= MAX_LEVEL_ENTROPY:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _dist_entropy(_level_probs(mid)) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def level_distribution(target: float, n_pixels: int) -> np.ndarray:
    """Palette distribution whose *plug-in* entropy over n_pixels draws is
    expected to land on `target`.

    The plug-in estimator is biased low by about (m_hat - 1) / (2 n) where
    m_hat is the expected number of distinct observed levels, so the
    distribution is solved for a compensated target, refining m_hat twice.
    """
    if n_pixels <= 0:
        raise UsageError(f"level_distribution: n_pixels must be positive, "
                         f"got {n_pixels}")
    compensated = target
    probs = _level_probs(_solve_level_ratio(compensated))
    for _ in range(2):
        m_hat = float((1.0 - (1.0 - probs) ** n_pixels).sum())
        compensated = min(target + (m_hat - 1.0) / (2.0 * n_pixels),
                          MAX_LEVEL_ENTROPY - 1e-3)
        probs = _level_probs(_solve_level_ratio(compensated))
    return probs


# ------------------------------------------------------------------- config


@dataclass(frozen=True)
class GenConfig:
    n_scenes: int = 20
    width: int = 320
    height: int = 320
    n_categories: int = 3
    density: float = 12.0            # mean instances per scene (Poisson)
    entropy_targets: tuple[float, ...] = ()   # empty = spread over [0.9, 2.5]
    entropy_jitter: float = 0.25     # per-instance target std around the category mean
    cluster_spread: float = 40.0     # std (px) of instance centers around category anchors
    box_w: tuple[float, float] = (12.0, 26.0)
    box_h: tuple[float, float] = (7.0, 13.0)
    difficulty_a: float = 2.0        # Beta shape of the difficulty marginal
    difficulty_b: float = 3.5
    difficulty_coupling: float = 0.0  # 0 = independent; 1 = difficulty tracks |entropy jitter|
    distractor_rate: float = 0.0     # mean solid-color distractors per scene (Poisson)
    background_level: int = 124
    background_noise: float = 2.0
    overlap_cap: float = 0.05        # max pairwise IoU between placed objects
    max_place_attempts: int = 200
    validate_tolerance: float = 0.15  # nats; per-category mean entropy check

    def __post_init__(self):
        if self.n_scenes < 0 or self.n_categories < 1:
            raise UsageError("GenConfig: n_scenes must be >= 0 and "
                             "n_categories >= 1")
        if self.width < 32 or self.height < 32:
            raise UsageError(f"GenConfig: raster must be at least 32x32, got "
                             f"{self.width}x{self.height}")
        if self.density < 0 or self.distractor_rate < 0:
            raise UsageError("GenConfig: density and distractor_rate must be "
                             ">= 0")
        targets = self.resolved_targets()
        if len(targets) != self.n_categories:
            raise UsageError(
                f"GenConfig: {len(self.entropy_targets)} entropy targets for "
                f"{self.n_categories} categories")
        for t in targets:
            if not 0.05 <= t <= MAX_LEVEL_ENTROPY - 0.05:
                raise UsageError(
                    f"GenConfig: entropy target {t} outside the renderable "
                    f"range [0.05, {MAX_LEVEL_ENTROPY - 0.05:.3f}]")
        if not 0.0 <= self.difficulty_coupling <= 1.0:
            raise UsageError("GenConfig: difficulty_coupling must be in [0, 1]")
        if self.difficulty_a <= 0 or self.difficulty_b <= 0:
            raise UsageError("GenConfig: Beta shape parameters must be positive")
        if not 0 <= self.background_level <= 255:
            raise UsageError("GenConfig: background_level must be 8-bit")
        if not 0.0 <= self.overlap_cap < 1.0:
            raise UsageError("GenConfig: overlap_cap must be in [0, 1)")
        if self.max_place_attempts < 1:
            raise UsageError("GenConfig: max_place_attempts must be >= 1")

    def resolved_targets(self) -> tuple[float, ...]:
        if self.entropy_targets:
            return tuple(float(t) for t in self.entropy_targets)
        if self.n_categories == 1:
            return (1.7,)
        return tuple(np.linspace(0.9, 2.5, self.n_categories))


# ----------------------------------------------------------------- generation


def _sample_difficulty(z: np.ndarray, rng: np.random.Generator,
                       cfg: GenConfig) -> np.ndarray:
    """Difficulty with an exact Beta(a, b) marginal, optionally correlated
    with the magnitude of the entropy jitter through a Gaussian copula.

    |z| is mapped through its own CDF to a uniform, back to a standard
    normal, mixed with an independent normal at weight `difficulty_coupling`,
    and pushed through the Beta quantile function. Coupling > 0 makes
    off-target-texture instances systematically harder.
    """
    c = cfg.difficulty_coupling
    g = ndtri(np.clip(2.0 * ndtr(np.abs(z)) - 1.0, 1e-12, 1.0 - 1e-12))
    y = c * g + math.sqrt(1.0 - c * c) * rng.standard_normal(z.size)
    u = np.clip(ndtr(y), 1e-12, 1.0 - 1e-12)
    return _beta_dist.ppf(u, cfg.difficulty_a, cfg.difficulty_b)


def _place_box(rng: np.random.Generator, cfg: GenConfig, anchor, placed,
               context: str) -> RotatedBox:
    """Rejection-sample a box near `anchor` that stays inside the raster and
    overlaps nothing already placed above the overlap cap."""
    placed_arr = as_box_array(placed) if placed else None
    for _ in range(cfg.max_place_attempts):
        w = rng.uniform(*cfg.box_w)
        h = rng.uniform(*cfg.box_h)
        theta = rng.uniform(-math.pi / 2, math.pi / 2)
        cx = anchor[0] + rng.normal(0.0, cfg.cluster_spread)
        cy = anchor[1] + rng.normal(0.0, cfg.cluster_spread)
        box = RotatedBox(cx, cy, w, h, theta)
        cs = box.corners()
        if (cs[:, 0].min() < 1.0 or cs[:, 0].max() > cfg.width - 1.0
                or cs[:, 1].min() < 1.0 or cs[:, 1].max() > cfg.height - 1.0):
            continue
        if placed_arr is not None and iou_matrix(
                as_box_array([box]), placed_arr).max() >= cfg.overlap_cap:
            continue
        return box
    raise GenerationError(
        f"{context}: no admissible placement in {cfg.max_place_attempts} "
        f"attempts (raster {cfg.width}x{cfg.height}, density too high?)")


def _render_background(rng: np.random.Generator, cfg: GenConfig) -> np.ndarray:
    noise = rng.normal(0.0, cfg.background_noise, size=(cfg.height, cfg.width))
    return np.clip(np.rint(cfg.background_level + noise), 0, 255).astype(np.uint8)


def _generate_scene(scene_idx: int, cfg: GenConfig, seed: int):
    rng = np.random.default_rng((seed, _GEN_STREAM, scene_idx))
    image_id = f"scene_{scene_idx:04d}"
    targets = cfg.resolved_targets()
    raster = _render_background(rng, cfg)

    n_inst = int(rng.poisson(cfg.density))
    margin = min(40.0, cfg.width / 4, cfg.height / 4)
    anchors = [
        (rng.uniform(margin, cfg.width - margin),
         rng.uniform(margin, cfg.height - margin))
        for _ in range(cfg.n_categories)
    ]
    cats = rng.integers(0, cfg.n_categories, size=n_inst)
    z = rng.standard_normal(n_inst)
    difficulty = _sample_difficulty(z, rng, cfg) if n_inst else np.empty(0)

    placed: list[RotatedBox] = []
    boxes = []
    for i in range(n_inst):
        box = _place_box(rng, cfg, anchors[cats[i]], placed,
                         f"{image_id}: instance {i} (category {cats[i]})")
        placed.append(box)
        boxes.append(box)

    distractors = []
    for d in range(int(rng.poisson(cfg.distractor_rate))):
        anchor = (rng.uniform(margin, cfg.width - margin),
                  rng.uniform(margin, cfg.height - margin))
        box = _place_box(rng, cfg, anchor, placed, f"{image_id}: distractor {d}")
        placed.append(box)
        level = int(PALETTE[int(rng.integers(1, len(PALETTE)))])
        distractors.append(Distractor(box, level))
        pix = pixels_inside(box, cfg.width, cfg.height)
        raster[pix[:, 1], pix[:, 0]] = level

    instances = []
    for i in range(n_inst):
        target = float(np.clip(targets[cats[i]] + cfg.entropy_jitter * z[i],
                               0.08, MAX_LEVEL_ENTROPY - 0.08))
        pix = pixels_inside(boxes[i], cfg.width, cfg.height)
        if pix.shape[0]:
            probs = level_distribution(target, pix.shape[0])
            levels = rng.choice(PALETTE, size=pix.shape[0], p=probs)
            raster[pix[:, 1], pix[:, 0]] = levels
        instances.append(Instance(boxes[i], int(cats[i]), True,
                                  float(difficulty[i])))

    return SceneAnnotation(image_id, tuple(instances), tuple(distractors)), raster


def _validate_generation(manifest: DatasetManifest, rasters: dict,
                         cfg: GenConfig) -> None:
    """Check that per-category mean measured entropy lands on target.

    Categories with fewer than 30 instances are skipped: the sample mean of
    so few jittered targets is noisier than the tolerance being enforced."""
    targets = cfg.resolved_targets()
    measured: dict[int, list[float]] = {}
    for scene in manifest.scenes:
        image = rasters[scene.image_id]
        for inst in scene.instances:
            stats = region_entropy(image, inst.box)
            if stats.pixel_count:
                measured.setdefault(inst.category, []).append(stats.value)
    for cat, values in sorted(measured.items()):
        if len(values) < 30:
            continue
        mean = float(np.mean(values))
        if abs(mean - targets[cat]) > cfg.validate_tolerance:
            raise GenerationError(
                f"category {cat}: mean measured entropy {mean:.3f} misses "
                f"target {targets[cat]:.3f} by more than "
                f"{cfg.validate_tolerance} nats")


def generate_scenes(cfg: GenConfig, seed: int):
    """Build the full dataset: (manifest, {image_id: raster}).

    Deterministic in (cfg, seed); every scene draws from its own RNG stream
    so scene content does not depend on generation order.
    """
    if seed < 0:
        raise UsageError(f"generate_scenes: seed must be non-negative, got {seed}")
    scenes = []
    rasters = {}
    for idx in range(cfg.n_scenes):
        scene, raster = _generate_scene(idx, cfg, seed)
        scenes.append(scene)
        rasters[scene.image_id] = raster
    manifest = DatasetManifest(
        categories=tuple(f"cat{i}" for i in range(cfg.n_categories)),
        scenes=tuple(scenes),
        seed=seed,
        ratio=1.0,
    )
    _validate_generation(manifest, rasters, cfg)
    return manifest, rasters


# ------------------------------------------------------------------ sampling


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def sample_sparse(manifest: DatasetManifest, ratio: float,
                  seed: int) -> DatasetManifest:
    """Keep a per-image, per-category fraction of labels; hide the rest.

    n_keep = round_half_up(ratio * n) clamped to at least 1, so every
    category present in an image keeps at least one label. Requires a fully
    labeled manifest (sampling an already-sparse set would compound ratios).
    """
    if not 0.0 < ratio <= 1.0:
        raise UsageError(f"sample_sparse: ratio must be in (0, 1], got {ratio}")
    if any(not i.labeled for s in manifest.scenes for i in s.instances):
        raise UsageError("sample_sparse: input manifest must be fully labeled")
    scenes = []
    for s_idx, scene in enumerate(manifest.scenes):
        rng = np.random.default_rng((seed, _SAMPLE_STREAM, s_idx))
        keep: set[int] = set()
        cats = sorted({i.category for i in scene.instances})
        for cat in cats:
            idxs = [k for k, inst in enumerate(scene.instances)
                    if inst.category == cat]
            n_keep = min(max(round_half_up(ratio * len(idxs)), 1), len(idxs))
            chosen = rng.choice(len(idxs), size=n_keep, replace=False)
            keep.update(idxs[int(c)] for c in chosen)
        instances = tuple(
            replace(inst, labeled=(k in keep))
            for k, inst in enumerate(scene.instances)
        )
        scenes.append(replace(scene, instances=instances))
    return replace(manifest, scenes=tuple(scenes), ratio=ratio)


def box_ratio(manifest: DatasetManifest) -> float:
    """Labeled instances over total instances, across the whole set."""
    total = manifest.n_instances
    if total == 0:
        raise UsageError("box_ratio: manifest has no instances")
    return manifest.n_labeled / total


# ----------------------------------------------------------------- manifests


def save_manifest(path, manifest: DatasetManifest) -> None:
    save_json(path, manifest.to_dict())


def load_manifest(path) -> DatasetManifest:
    return manifest_from_dict(load_json(path), where=str(path))
