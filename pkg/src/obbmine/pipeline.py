"""Closed mining loop: teach, mine, filter, freeze, measure — once per epoch.

Each epoch runs three phases:

1. **Mine** (parallelizable per scene): the teacher emits proposals, the
   cluster miner turns them into candidate labels away from every known
   annotation (sparse labels plus already-frozen pseudo labels), and the
   entropy band filter discards candidates whose texture does not match
   their claimed category.
2. **Account** (serial, scene order): the label tracker absorbs the
   candidates, then the teacher's per-category supervision count is
   refreshed: labels that cover a real unlabeled instance add their
   confidence, labels that cover nothing subtract a penalty, and the count
   never drops below the human-labeled floor nor below any earlier epoch
   (supervision, once gained, is not forgotten).
3. **Measure**: detection quality (mAP over *all* instances, labeled or
   not), pseudo-label precision/recall against the hidden instances, a
   fixed-probe training loss, and the per-category annotation coverage
   ratio — all appended to the run directory's CSV logs.

Every random draw is keyed by ``(seed, stream, epoch, scene)``, so results
are byte-identical across repeat runs and across ``threads`` settings.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .dataset import DatasetManifest
from .entropy import entropy_band_filter
from .errors import UsageError
from .freezing import LabelTracker, TrackerConfig
from .geometry import RotatedBox, rotated_iou
from .losses import (ROLE_FROZEN, ROLE_PSEUDO, ROLE_REAL, LossConfig,
                     TrainingSample, partition_negatives, total_loss)
from .metrics import (GroundTruth, evaluate_detections, greedy_match_boxes)
from .mining import MiningConfig, mine_pseudo_labels
from .surrogate import (SurrogateTeacher, TeacherConfig,
                        detections_from_proposals)

_MINE_STREAM = 101
_EVAL_STREAM = 202
_PROBE_STREAM = 303


@dataclass(frozen=True)
class PipelineConfig:
    """Loop-level knobs that sit outside any single stage."""

    wrong_label_penalty: float = 3.0   # supervision cost of a label covering nothing
    eval_score_floor: float = 0.05
    eval_nms_iou: float = 0.5
    probe_scenes: int = 8              # fixed monitoring batch for loss.csv
    match_iou: float = 0.5             # label-vs-instance match for accounting

    def __post_init__(self):
        if self.wrong_label_penalty < 0:
            raise UsageError("wrong_label_penalty must be >= 0")
        if not 0.0 <= self.eval_score_floor < 1.0:
            raise UsageError("eval_score_floor must be in [0, 1)")
        if not 0.0 < self.eval_nms_iou <= 1.0:
            raise UsageError("eval_nms_iou must be in (0, 1]")
        if self.probe_scenes < 0:
            raise UsageError("probe_scenes must be >= 0")
        if not 0.0 < self.match_iou <= 1.0:
            raise UsageError("match_iou must be in (0, 1]")


@dataclass
class RunSettings:
    """Everything a mining run needs besides the dataset itself."""

    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    egpf: bool = True        # entropy band filter on mined candidates
    plf: bool = True         # multi-epoch freezing via the label tracker
    baseline: bool = False   # sparse labels only, no mining at all
    threads: int = 1

    def __post_init__(self):
        if self.threads < 1:
            raise UsageError("threads must be >= 1")


@dataclass
class RunResult:
    metrics_rows: list      # rows of metrics.csv, in file order
    loss_rows: list         # rows of loss.csv
    tracker: LabelTracker
    counts: np.ndarray      # final effective supervision per category
    out_dir: Path | None

    def aggregate(self, epoch: int):
        """The 'all' metrics row for one epoch."""
        for row in self.metrics_rows:
            if row[0] == epoch and row[1] == "all":
                return row
        raise KeyError(f"no aggregate row for epoch {epoch}")

    def series(self, column: str):
        """Aggregate-row series over epochs for one metrics column."""
        idx = io.METRICS_HEADER.split(",").index(column)
        return [row[idx] for row in self.metrics_rows if row[1] == "all"]


def _map_indexed(fn, n: int, threads: int) -> list:
    """[fn(0), ..., fn(n-1)], optionally on a thread pool, always in order."""
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, range(n)))


class _Run:
    """State of one mining run; run_mining() drives it epoch by epoch."""

    def __init__(self, manifest: DatasetManifest, rasters, model,
                 settings: RunSettings, epochs: int, seed: int,
                 out_dir):
        if epochs < 0:
            raise UsageError("epochs must be >= 0")
        mining_on = not settings.baseline
        if settings.egpf and mining_on:
            if model is None:
                raise UsageError(
                    "an entropy model is required unless the entropy filter "
                    "is disabled or the run is a baseline")
            missing = [s.image_id for s in manifest.scenes
                       if s.image_id not in rasters]
            if missing:
                raise UsageError(
                    f"no raster for scene {missing[0]!r} (entropy filtering "
                    f"needs every scene image)")
        self.manifest = manifest
        self.rasters = rasters
        self.model = model
        self.s = settings
        self.epochs = epochs
        self.seed = seed
        self.out_dir = Path(out_dir) if out_dir is not None else None

        self.n_cat = len(manifest.categories)
        self.scenes = list(manifest.scenes)
        self.teacher = SurrogateTeacher(settings.teacher, self.n_cat)
        self.tracker = LabelTracker(settings.tracker)

        self.labeled_boxes = []   # per scene: [RotatedBox] of human labels
        self.labeled_cats = []
        self.inst_boxes = []      # per scene: every instance
        self.inst_cats = []
        self.inst_hidden = []     # per scene: bool per instance
        self.hidden_boxes = []
        self.hidden_cats = []
        self.labeled_counts = np.zeros(self.n_cat)
        self.total_counts = np.zeros(self.n_cat)
        self.hidden_counts = np.zeros(self.n_cat)
        for scene in self.scenes:
            lb, lc, ib, ic, hid, hb, hc = [], [], [], [], [], [], []
            for inst in scene.instances:
                ib.append(inst.box)
                ic.append(inst.category)
                hid.append(not inst.labeled)
                self.total_counts[inst.category] += 1
                if inst.labeled:
                    lb.append(inst.box)
                    lc.append(inst.category)
                    self.labeled_counts[inst.category] += 1
                else:
                    hb.append(inst.box)
                    hc.append(inst.category)
                    self.hidden_counts[inst.category] += 1
            self.labeled_boxes.append(lb)
            self.labeled_cats.append(lc)
            self.inst_boxes.append(ib)
            self.inst_cats.append(ic)
            self.inst_hidden.append(hid)
            self.hidden_boxes.append(hb)
            self.hidden_cats.append(hc)

        self.ground_truth = [
            GroundTruth(scene.image_id, cat, box)
            for scene, boxes, cats in zip(self.scenes, self.inst_boxes,
                                          self.inst_cats)
            for box, cat in zip(boxes, cats)
        ]
        self.counts = self.labeled_counts.astype(float).copy()
        self.teacher.set_counts(self.counts)

        self.metrics_rows: list = []
        self.loss_rows: list = []

    # ---------------------------------------------------------------- phases

    def _mine_scene(self, epoch: int, idx: int):
        scene = self.scenes[idx]
        props = self.teacher.emit(scene,
                                  (self.seed, _MINE_STREAM, epoch, idx))
        known = self.labeled_boxes[idx] + self.tracker.frozen_boxes(scene.image_id)
        mined = mine_pseudo_labels(props, known, self.s.mining)
        if self.s.egpf and mined:
            mined, _ = entropy_band_filter(mined,
                                           self.rasters[scene.image_id],
                                           self.model)
        return mined

    def _contributors(self, idx: int, kept):
        """(boxes, cats, weights) of pseudo supervision active this epoch."""
        iid = self.scenes[idx].image_id
        if self.s.plf:
            frozen = self.tracker.frozen_labels(iid)
            active = self.tracker.active_labels(iid)
            boxes = [t.box for t in frozen] + [t.box for t in active]
            cats = [t.category for t in frozen] + [t.category for t in active]
            weights = ([1.0] * len(frozen)
                       + [min(t.confidence, 1.0) for t in active])
            return boxes, cats, weights
        labels = kept[idx]
        return ([l.box for l in labels], [l.category for l in labels],
                [l.score for l in labels])

    def _refresh_counts(self, kept) -> None:
        """Effective supervision: labeled floor + covering labels - penalties,
        ratcheted so a category's count never shrinks across epochs."""
        snapshot = self.labeled_counts.astype(float).copy()
        penalty = self.s.pipeline.wrong_label_penalty
        for idx in range(len(self.scenes)):
            boxes, cats, weights = self._contributors(idx, kept)
            if not boxes:
                continue
            pairs = greedy_match_boxes(boxes, cats, self.inst_boxes[idx],
                                       self.inst_cats[idx],
                                       self.s.pipeline.match_iou)
            matched = dict(pairs)
            for a, (cat, w) in enumerate(zip(cats, weights)):
                if a in matched:
                    if self.inst_hidden[idx][matched[a]]:
                        snapshot[cat] += w
                    # covering an already-labeled instance adds nothing new
                else:
                    snapshot[cat] -= penalty * w
        snapshot = np.maximum(snapshot, self.labeled_counts)
        self.counts = np.maximum(self.counts, snapshot)
        self.teacher.set_counts(self.counts)

    def _labels_out(self, idx: int, kept):
        """Pseudo labels delivered for scene `idx`: frozen ones plus this
        epoch's candidates that do not duplicate a frozen label."""
        iid = self.scenes[idx].image_id
        if not self.s.plf:
            labels = kept[idx]
            return [t.box for t in labels], [t.category for t in labels]
        frozen = self.tracker.frozen_labels(iid)
        fboxes = [t.box for t in frozen]
        fcats = [t.category for t in frozen]
        cboxes = [l.box for l in kept[idx]]
        ccats = [l.category for l in kept[idx]]
        dup = {a for a, _ in greedy_match_boxes(
            cboxes, ccats, fboxes, fcats, self.s.tracker.match_iou)}
        boxes = fboxes + [b for a, b in enumerate(cboxes) if a not in dup]
        cats = fcats + [c for a, c in enumerate(ccats) if a not in dup]
        return boxes, cats

    def _eval_scene(self, epoch: int, idx: int):
        scene = self.scenes[idx]
        props = self.teacher.emit(scene,
                                  (self.seed, _EVAL_STREAM, epoch, idx))
        return detections_from_proposals(props, scene.image_id,
                                         self.s.pipeline.eval_score_floor,
                                         self.s.pipeline.eval_nms_iou)

    def _probe_samples(self, idx: int, kept) -> list:
        scene = self.scenes[idx]
        iid = scene.image_id
        rng = np.random.default_rng((self.seed, _PROBE_STREAM, idx))
        skills = self.teacher.skills
        n_cat = self.n_cat

        def fg_probs(cat: int, level: float) -> np.ndarray:
            p = rng.uniform(0.01, 0.06, n_cat)
            p[cat] = min(0.99, max(0.01, level + rng.normal(0.0, 0.02)))
            return p

        frozen = self.tracker.frozen_labels(iid)
        frozen_boxes = [t.box for t in frozen]
        known = self.labeled_boxes[idx] + frozen_boxes
        samples = []
        for inst in scene.instances:
            if not inst.labeled:
                continue
            level = skills[inst.category] * (1.0 - inst.difficulty)
            samples.append(TrainingSample(
                probs=fg_probs(inst.category, level), target=inst.category,
                role=ROLE_REAL))
        for t in frozen:
            level = skills[t.category] * 0.75
            samples.append(TrainingSample(
                probs=fg_probs(t.category, level), target=t.category,
                role=ROLE_FROZEN))
        if self.s.plf:
            cands = [(t.category, min(t.confidence, 1.0))
                     for t in self.tracker.active_labels(iid)]
        else:
            cands = [(l.category, l.score) for l in kept[idx]]
        for cat, weight in cands:
            samples.append(TrainingSample(
                probs=fg_probs(cat, 0.6), target=cat, role=ROLE_PSEUDO,
                weight=weight))

        negatives = []
        for _ in range(3):  # plain background, low teacher score everywhere
            box = RotatedBox(rng.uniform(15.0, 200.0), rng.uniform(15.0, 200.0),
                             10.0, 6.0, 0.0)
            negatives.append(TrainingSample(
                probs=rng.uniform(0.01, 0.2, n_cat),
                teacher_score=float(rng.uniform(0.0, 0.3)), pred_box=box))
        for inst in scene.instances:
            if inst.labeled:
                continue
            if any(rotated_iou(inst.box, b) >= 0.5 for b in frozen_boxes):
                continue  # covered by a frozen label; no longer a negative
            q = min(0.99, max(0.01,
                              skills[inst.category] * (1.0 - inst.difficulty)))
            negatives.append(TrainingSample(
                probs=fg_probs(inst.category, q), teacher_score=q,
                pred_box=inst.box))
        if self.labeled_boxes[idx]:
            src = self.labeled_boxes[idx][0]  # overlaps an annotation -> hard
            shifted = RotatedBox(src.cx + 0.35 * src.w, src.cy, src.w, src.h,
                                 src.theta)
            negatives.append(TrainingSample(
                probs=rng.uniform(0.3, 0.6, n_cat), teacher_score=0.7,
                pred_box=shifted))
        partition_negatives(negatives, known, self.s.loss)
        return samples + negatives

    def _probe_loss(self, kept) -> float:
        n_probe = min(self.s.pipeline.probe_scenes, len(self.scenes))
        if n_probe == 0:
            return 0.0
        values = [total_loss(self._probe_samples(idx, kept), self.s.loss)
                  for idx in range(n_probe)]
        return float(np.mean(values))

    # ----------------------------------------------------------------- epoch

    def run_epoch(self, epoch: int) -> None:
        n = len(self.scenes)
        if self.s.baseline:
            kept = [[] for _ in range(n)]
        else:
            kept = _map_indexed(lambda i: self._mine_scene(epoch, i), n,
                                self.s.threads)
        if self.s.plf and not self.s.baseline:
            for idx in range(n):
                self.tracker.update(self.scenes[idx].image_id, kept[idx],
                                    epoch=epoch)
        if not self.s.baseline:
            self._refresh_counts(kept)

        per_scene_dets = _map_indexed(lambda i: self._eval_scene(epoch, i), n,
                                      self.s.threads)
        detections = [d for dets in per_scene_dets for d in dets]
        result = evaluate_detections(detections, self.ground_truth, 0.5)

        tp = np.zeros(self.n_cat)
        mined_n = np.zeros(self.n_cat)
        for idx in range(n):
            boxes, cats = self._labels_out(idx, kept)
            for c in cats:
                mined_n[c] += 1
            pairs = greedy_match_boxes(boxes, cats, self.hidden_boxes[idx],
                                       self.hidden_cats[idx], 0.5)
            for a, _ in pairs:
                tp[cats[a]] += 1

        frozen_total = self.tracker.frozen_count()
        for c, name in enumerate(self.manifest.categories):
            frozen_c = self.tracker.frozen_count(c)
            prec = tp[c] / mined_n[c] if mined_n[c] else 1.0
            rec = tp[c] / self.hidden_counts[c] if self.hidden_counts[c] else 0.0
            ratio = ((self.labeled_counts[c] + frozen_c) / self.total_counts[c]
                     if self.total_counts[c] else 1.0)
            self.metrics_rows.append(
                (epoch, name, float(result.ap.get(c, 0.0)), float(prec),
                 float(rec), int(frozen_c), float(ratio)))
        total_mined = mined_n.sum()
        total_hidden = self.hidden_counts.sum()
        self.metrics_rows.append(
            (epoch, "all", float(result.map),
             float(tp.sum() / total_mined) if total_mined else 1.0,
             float(tp.sum() / total_hidden) if total_hidden else 0.0,
             int(frozen_total),
             float((self.labeled_counts.sum() + frozen_total)
                   / self.total_counts.sum()) if self.total_counts.sum()
             else 1.0))

        self.loss_rows.append((epoch, self._probe_loss(kept)))
        self._write_state()

    # ----------------------------------------------------------------- files

    def _write_state(self) -> None:
        if self.out_dir is None:
            return
        io.write_csv(self.out_dir / "metrics.csv", io.METRICS_HEADER,
                     self.metrics_rows)
        io.write_csv(self.out_dir / "loss.csv", io.LOSS_HEADER, self.loss_rows)
        io.save_json(self.out_dir / "tracker.json", self.tracker.to_dict())


def run_mining(manifest: DatasetManifest, rasters: dict, model,
               settings: RunSettings, epochs: int, seed: int,
               out_dir=None) -> RunResult:
    """Drive the closed loop for `epochs` epochs (numbered from 1).

    `rasters` maps image_id to the scene's uint8 image; it may be empty when
    the entropy filter is off. `model` is the fitted EntropyModel (may be
    None under the same condition). With `out_dir` set, metrics.csv,
    loss.csv, and tracker.json are rewritten after every epoch, so a run
    directory is complete even for epochs=0.
    """
    run = _Run(manifest, rasters, model, settings, epochs, seed, out_dir)
    if run.out_dir is not None:
        run.out_dir.mkdir(parents=True, exist_ok=True)
        run._write_state()
    for epoch in range(1, epochs + 1):
        run.run_epoch(epoch)
    return RunResult(run.metrics_rows, run.loss_rows, run.tracker,
                     run.counts.copy(), run.out_dir)


def run_baseline(manifest: DatasetManifest, settings: RunSettings,
                 epochs: int, seed: int, out_dir=None) -> RunResult:
    """Sparse labels only: the teacher never sees a pseudo label."""
    base = RunSettings(teacher=settings.teacher, mining=settings.mining,
                       tracker=settings.tracker, loss=settings.loss,
                       pipeline=settings.pipeline, egpf=False, plf=False,
                       baseline=True, threads=settings.threads)
    return run_mining(manifest, {}, None, base, epochs, seed, out_dir)
