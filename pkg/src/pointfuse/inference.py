"""Sliding-window inference with probability summation, and mIoU evaluation."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .nn.model import ModelConfig, predict_proba
from .sampling import PointSet, SubVolumeSpec, extract_subvolume, sample_random


@dataclass(eq=False)
class ClassProbabilityField:
    """Per-vertex probability sums; column j belongs to label id j + 1."""

    sums: np.ndarray  # (n, num_classes)
    window_counts: np.ndarray  # (n,) windows in which the vertex was sampled

    @classmethod
    def zeros(cls, n: int, num_classes: int) -> "ClassProbabilityField":
        return cls(np.zeros((n, num_classes)), np.zeros(n, dtype=np.int64))

    @property
    def n(self) -> int:
        return self.sums.shape[0]

    @property
    def num_classes(self) -> int:
        return self.sums.shape[1]

    def add(self, vertex_ids: np.ndarray, proba: np.ndarray) -> None:
        """Add one window's rows; repeated vertex ids add once per occurrence."""
        np.add.at(self.sums, vertex_ids, proba)
        self.window_counts[np.unique(vertex_ids)] += 1

    def merged(self, other: "ClassProbabilityField") -> "ClassProbabilityField":
        return ClassProbabilityField(self.sums + other.sums, self.window_counts + other.window_counts)


def window_schedule(scene_bounds, window: float = 1.5, stride: float = 0.45, pad: float = 0.5) -> list[SubVolumeSpec]:
    """Window grid over the x-y bounds padded by `pad`, row-major with x fastest.

    The grid is centered on the padded extent and has just enough windows
    that every point within the padded bounds lies in at least one of them.
    """
    if window <= 0 or stride <= 0:
        raise ValueError("window and stride must be positive")
    lo, hi = (np.asarray(b, dtype=np.float64) for b in scene_bounds)

    def centers(a, b):
        a, b = a - pad, b + pad
        # abutting windows leave a seam that rounding can drop from both sides,
        # so neighbours always overlap by far more than one ulp
        step = min(stride, window - 1e-9 * max(1.0, abs(a), abs(b)))
        n = max(1, math.ceil((b - a - window) / step - 1e-9) + 1)
        while True:
            c = (a + b) / 2 + step * (np.arange(n) - (n - 1) / 2)
            # same inclusive test as extract_subvolume, so float rounding cannot open a gap at the ends
            if abs(a - c[0]) <= window / 2 and abs(b - c[-1]) <= window / 2:
                break
            n += 1
        if n > 1 and stride > window:
            raise ValueError("stride larger than the window leaves gaps between windows")
        return c

    xs, ys = centers(lo[0], hi[0]), centers(lo[1], hi[1])
    return [SubVolumeSpec(float(x), float(y), window, window) for y in ys for x in xs]


def _window_seed(seed: int, spec: SubVolumeSpec) -> np.random.SeedSequence:
    geom = np.array([spec.center_x, spec.center_y, spec.width, spec.depth], dtype="<f8")
    return np.random.SeedSequence([seed, 1, *np.frombuffer(geom.tobytes(), dtype="<u4").tolist()])


def _window_proba(scene, scene_sample, idx, config, params, rng):
    chosen = sample_random(idx, config.subvolume_points, rng)
    return chosen, predict_proba(scene.take(chosen), scene_sample, config, params)


def infer_scene(
    scene: PointSet,
    model: tuple[ModelConfig, dict],
    schedule: Sequence[SubVolumeSpec],
    seed: int = 0,
    threads: int = 1,
) -> ClassProbabilityField:
    """Run the network on every non-empty window and sum softmax rows per vertex.

    One sparse scene sample is drawn for the global encoder.  Each window's
    generator is keyed on `seed` and the window's own geometry, so neither
    the thread count nor the schedule order changes which points are drawn.
    """
    config, params = model
    scene_rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    scene_sample = scene.take(sample_random(np.arange(len(scene)), config.scene_points, scene_rng))
    jobs = []
    for spec in schedule:
        idx = extract_subvolume(scene, spec)
        if len(idx):
            jobs.append((idx, np.random.default_rng(_window_seed(seed, spec))))

    field = ClassProbabilityField.zeros(len(scene), config.num_classes)
    if threads <= 1:
        for idx, rng in jobs:
            chosen, proba = _window_proba(scene, scene_sample, idx, config, params, rng)
            field.add(chosen, proba)
        return field

    def work(k):
        part = ClassProbabilityField.zeros(len(scene), config.num_classes)
        for idx, rng in jobs[k::threads]:
            chosen, proba = _window_proba(scene, scene_sample, idx, config, params, rng)
            part.add(chosen, proba)
        return part

    with ThreadPoolExecutor(max_workers=threads) as ex:
        for part in ex.map(work, range(threads)):
            field = field.merged(part)
    return field


def argmax_labels(field: ClassProbabilityField) -> np.ndarray:
    """Label id (column + 1) of the largest sum, lowest on ties; 0 where never sampled."""
    pred = np.argmax(field.sums, axis=1) + 1
    pred[field.window_counts == 0] = 0
    return pred


@dataclass
class MiouResult:
    iou: np.ndarray  # (num_classes,), NaN for classes absent from both truth and prediction
    miou: float
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    confusion: np.ndarray  # rows = truth, cols = prediction, both 0-based over ids 1..K


def confusion_matrix(predictions, ground_truth, num_classes: int) -> np.ndarray:
    """Counts over vertices with ground truth != 0.  Predictions of 0 (no
    prediction) are not a class and so only show up as false negatives."""
    pred = np.asarray(predictions, dtype=np.int64)
    gt = np.asarray(ground_truth, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth lengths differ")
    keep = gt > 0
    pred, gt = pred[keep], gt[keep]
    if gt.max(initial=0) > num_classes or pred.max(initial=0) > num_classes or pred.min(initial=0) < 0:
        raise ValueError("label id outside [0, num_classes]")
    # column num_classes collects "no prediction"
    pc = np.where(pred > 0, pred - 1, num_classes)
    cm = np.bincount((gt - 1) * (num_classes + 1) + pc, minlength=num_classes * (num_classes + 1))
    return cm.reshape(num_classes, num_classes + 1)


def evaluate_miou(predictions, ground_truth, num_classes: int) -> MiouResult:
    cm_full = confusion_matrix(predictions, ground_truth, num_classes)
    if cm_full.sum() == 0:
        raise ValueError("no annotated vertices to evaluate")
    cm = cm_full[:, :num_classes]
    tp = np.diag(cm).astype(np.int64)
    fp = cm.sum(axis=0) - tp
    fn = cm_full.sum(axis=1) - tp
    denom = tp + fp + fn
    iou = np.full(num_classes, np.nan)
    present = denom > 0
    iou[present] = tp[present] / denom[present]
    # plain left-to-right sum in class order, so the mean does not depend on numpy's pairwise summation
    return MiouResult(iou, sum(iou[present].tolist()) / int(present.sum()), tp, fp, fn, cm_full)


def format_report(result: MiouResult, class_names: Optional[Sequence[str]] = None) -> str:
    lines = []
    for c in range(len(result.iou)):
        if np.isnan(result.iou[c]):
            continue
        name = class_names[c] if class_names else f"class{c + 1}"
        lines.append(f"{name} {result.iou[c]:.4f} {result.tp[c]} {result.fp[c]} {result.fn[c]}")
    lines.append(f"miou {result.miou:.4f}")
    return "\n".join(lines) + "\n"


def write_predictions(path, labels) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(f"{int(x)}\n" for x in labels))


def read_predictions(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        toks = fh.read().split()
    try:
        return np.array([int(t) for t in toks], dtype=np.int64)
    except ValueError as exc:
        raise ValueError(f"{path}: predictions must be one integer per line") from exc
