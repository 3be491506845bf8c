"""Grasp metrics, cross-validation folds and evaluation reports."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .detection import NoCandidates, SearchSpace, detect_two_stage
from .geometry import intersection_area
from .network import CascadeParams, forward
from .rects import GraspRect, angle_distance


def jaccard(a: GraspRect, b: GraspRect) -> float:
    """Area(a & b) / Area(a | b) for two oriented rectangles."""
    if a.area <= 0 or b.area <= 0:
        raise ValueError("zero-area rectangle")
    inter = intersection_area(a.corners(), b.corners())
    union = a.area + b.area - inter
    return float(min(max(inter / union, 0.0), 1.0))


def rect_metric(pred: GraspRect, gts, max_angle_deg=30.0, min_jaccard=0.25) -> bool:
    """True if some ground truth within the angle gate overlaps pred by at least min_jaccard."""
    limit = math.radians(max_angle_deg)
    for gt in gts:
        if angle_distance(pred.angle, gt.angle) <= limit + 1e-12 and jaccard(pred, gt) >= min_jaccard:
            return True
    return False


def point_metric(pred: GraspRect, gts, dist_thresh=None) -> bool:
    """True if pred's center is within dist_thresh (inclusive) of some ground-truth center.

    With ``dist_thresh=None`` each ground truth uses a quarter of its own diagonal.
    """
    for gt in gts:
        d = math.hypot(pred.cx - gt.cx, pred.cy - gt.cy)
        limit = 0.25 * math.hypot(gt.len, gt.wid) if dist_thresh is None else dist_thresh
        if d <= limit:
            return True
    return False


def split_folds(scenes, mode="image_wise", k=5, seed=0):
    """Partition scene indices into k folds, by image or by object id."""
    if k < 2:
        raise ValueError("need at least two folds")
    rng = np.random.default_rng(seed)
    n = len(scenes)
    if mode == "image_wise":
        if n < k:
            raise ValueError(f"{n} images cannot fill {k} folds")
        perm = rng.permutation(n)
        return [sorted(chunk.tolist()) for chunk in np.array_split(perm, k)]
    if mode == "object_wise":
        ids = sorted({sc.object_id for sc in scenes})
        if len(ids) < k:
            raise ValueError(f"{len(ids)} objects cannot fill {k} object-wise folds")
        groups = np.array_split(rng.permutation(ids), k)
        owner = {int(o): f for f, g in enumerate(groups) for o in g}
        folds = [[] for _ in range(k)]
        for i, sc in enumerate(scenes):
            folds[owner[sc.object_id]].append(i)
        return folds
    raise ValueError(f"unknown split mode {mode!r}")


@dataclass(frozen=True)
class MetricConfig:
    T: int = 100
    max_angle_deg: float = 30.0
    min_jaccard: float = 0.25
    point_dist: float | None = None
    threshold: float = 0.5


@dataclass
class FoldResult:
    fold: int
    n_rects: int
    n_scenes: int
    recognition_accuracy: float
    point_rate: float
    rect_rate: float


@dataclass
class EvalReport:
    recognition_accuracy: float
    point_rate: float
    rect_rate: float
    split_mode: str = "none"
    folds: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    label: str = ""

    def to_record(self):
        return json.dumps(asdict(self), default=str)

    def row(self):
        return (f"{self.label or '-':<28} {self.split_mode:<12} {100 * self.recognition_accuracy:8.1f} "
                f"{100 * self.point_rate:8.1f} {100 * self.rect_rate:8.1f}")


TABLE_HEADER = f"{'Algorithm':<28} {'Split':<12} {'Recog%':>8} {'Point%':>8} {'Rect%':>8}"


def format_table(reports):
    return "\n".join([TABLE_HEADER, "-" * len(TABLE_HEADER)] + [r.row() for r in reports])


def recognition_accuracy(net, scenes, threshold=0.5):
    """Fraction of annotated rectangles classified correctly (p == threshold counts as negative)."""
    feat = net.featurizer()
    correct = total = 0
    for sc in scenes:
        rects = list(sc.positives) + list(sc.negatives)
        if not rects:
            continue
        p = forward(net, feat.scaled(sc.image, rects)).p
        y = np.r_[np.ones(len(sc.positives)), np.zeros(len(sc.negatives))]
        correct += int(np.sum((p > threshold) == (y > 0.5)))
        total += len(rects)
    return correct / total if total else float("nan"), total


def detection_rates(cascade, scenes, space, metrics: MetricConfig = MetricConfig()):
    point_hits = rect_hits = counted = 0
    for sc in scenes:
        if not sc.positives:
            continue
        counted += 1
        res = detect_two_stage(cascade, sc.image, space, metrics.T)
        if isinstance(res, NoCandidates):
            continue
        point_hits += point_metric(res.best, sc.positives, metrics.point_dist)
        rect_hits += rect_metric(res.best, sc.positives, metrics.max_angle_deg, metrics.min_jaccard)
    if not counted:
        return float("nan"), float("nan")
    return point_hits / counted, rect_hits / counted


def evaluate(cascade: CascadeParams, scenes, space: SearchSpace, metrics: MetricConfig = MetricConfig(), label=""):
    """Recognition with the large network plus two-stage detection on each scene."""
    acc, n = recognition_accuracy(cascade.large, scenes, metrics.threshold)
    point, rect = detection_rates(cascade, scenes, space, metrics)
    return EvalReport(acc, point, rect, config={"metrics": asdict(metrics), "space": repr(space)}, label=label,
                      folds=[FoldResult(0, n, len(scenes), acc, point, rect)])


def cross_validate(scenes, train_fn, space: SearchSpace, mode="image_wise", k=5, seed=0,
                   metrics: MetricConfig = MetricConfig(), label=""):
    """k-fold evaluation; ``train_fn(train_scenes) -> CascadeParams``.

    Aggregate rates weight every held-out rectangle (recognition) or scene
    (detection) equally across folds.
    """
    folds = split_folds(scenes, mode, k, seed)
    results = []
    for f, test_idx in enumerate(folds):
        test_set = set(test_idx)
        train = [sc for i, sc in enumerate(scenes) if i not in test_set]
        test = [scenes[i] for i in test_idx]
        cascade = train_fn(train)
        acc, n = recognition_accuracy(cascade.large, test, metrics.threshold)
        point, rect = detection_rates(cascade, test, space, metrics)
        results.append(FoldResult(f, n, len(test), acc, point, rect))
    n_rects = sum(r.n_rects for r in results)
    n_sc = sum(r.n_scenes for r in results)
    return EvalReport(
        recognition_accuracy=sum(r.recognition_accuracy * r.n_rects for r in results) / n_rects,
        point_rate=sum(r.point_rate * r.n_scenes for r in results) / n_sc,
        rect_rate=sum(r.rect_rate * r.n_scenes for r in results) / n_sc,
        split_mode=mode, folds=results,
        config={"k": k, "seed": seed, "metrics": asdict(metrics), "space": repr(space)}, label=label,
    )
