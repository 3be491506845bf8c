"""Exhaustive and two-stage (cascaded) search over grasp rectangles."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .network import CascadeParams, NetworkParams, forward
from .rects import GraspRect

CHUNK = 1024


@dataclass(frozen=True)
class Gripper:
    """Admissible rectangle sizes in pixels: wid is plate separation, len the plate length."""

    min_wid: float = 0.0
    max_wid: float = math.inf
    min_len: float = 0.0
    max_len: float = math.inf

    def admits(self, length, wid):
        return self.min_len <= length <= self.max_len and self.min_wid <= wid <= self.max_wid


@dataclass(frozen=True)
class SearchSpace:
    angle_step: float = math.pi / 12
    position_stride: float = 10.0
    len_set: tuple = (20.0, 30.0, 45.0)
    wid_set: tuple = (20.0, 30.0)
    gripper: Gripper = Gripper()

    def __post_init__(self):
        if self.angle_step <= 0 or self.position_stride <= 0:
            raise ValueError("angle_step and position_stride must be positive")
        if not self.len_set or not self.wid_set:
            raise ValueError("len_set and wid_set must be non-empty")

    @classmethod
    def for_synthetic(cls, gripper=Gripper()):
        """Defaults sized for the 96x96 synthetic scenes."""
        return cls(math.pi / 12, 5.0, (14.0, 20.0), (14.0, 20.0), gripper)

    def with_gripper(self, gripper: Gripper) -> SearchSpace:
        return SearchSpace(self.angle_step, self.position_stride, self.len_set, self.wid_set, gripper)

    def angles(self):
        n = max(1, int(math.ceil(math.pi / self.angle_step - 1e-9)))
        return [k * self.angle_step for k in range(n)]

    def sizes(self):
        return [(l, w) for l in self.len_set for w in self.wid_set if self.gripper.admits(l, w)]

    def positions(self, size):
        n = int(math.floor((size - 1) / self.position_stride)) + 1
        offset = ((size - 1) - (n - 1) * self.position_stride) / 2.0
        return [offset + k * self.position_stride for k in range(n)]

    def count(self, width, height):
        return len(self.positions(width)) * len(self.positions(height)) * len(self.angles()) * len(self.sizes())


def enumerate_rects(width, height, space: SearchSpace):
    """All candidate rectangles in a fixed order: rows, columns, angles, then sizes."""
    xs, ys = space.positions(width), space.positions(height)
    angles, sizes = space.angles(), space.sizes()
    for cy in ys:
        for cx in xs:
            for a in angles:
                for length, wid in sizes:
                    yield GraspRect(cx, cy, a, length, wid)


def score_all(net: NetworkParams, image, rects, chunk=CHUNK):
    """P(graspable) for every rectangle, evaluated in fixed-size chunks."""
    rects = list(rects)
    feat = net.featurizer()
    out = np.empty(len(rects))
    for start in range(0, len(rects), chunk):
        batch = rects[start:start + chunk]
        out[start:start + len(batch)] = forward(net, feat.scaled(image, batch)).p
    return out


@dataclass(frozen=True)
class NoCandidates:
    """Returned by detection when the search space admits no rectangle."""

    reason: str = "no rectangle size satisfies the gripper constraints"


@dataclass
class DetectionResult:
    best: GraspRect
    best_score: float
    top_t: list  # (rect, stage-1 score, stage-2 score), sorted by stage-1 score
    counters: dict
    timing: dict = field(default_factory=dict)

    def records(self):
        """Line-delimited records: one summary line, then one line per top-T rectangle."""
        lines = [json.dumps({"type": "best", "rect": list(self.best.as_tuple()), "score": self.best_score,
                             **self.counters, **{f"time_{k}": v for k, v in self.timing.items()}})]
        for rank, (r, s1, s2) in enumerate(self.top_t):
            lines.append(json.dumps({"type": "candidate", "rank": rank, "rect": list(r.as_tuple()),
                                     "stage1": s1, "stage2": s2}))
        return lines


def _top_indices(scores, T):
    order = np.argsort(-scores, kind="stable")
    return order[:T]


def detect_exhaustive(net: NetworkParams, image, space: SearchSpace):
    rects = list(enumerate_rects(image.width, image.height, space))
    if not rects:
        return NoCandidates()
    t0 = time.perf_counter()
    scores = score_all(net, image, rects)
    best = int(np.argmax(scores))
    return DetectionResult(rects[best], float(scores[best]), [(rects[best], float(scores[best]), float(scores[best]))],
                           {"stage1_evals": len(rects), "stage2_evals": 0},
                           {"stage1": time.perf_counter() - t0, "stage2": 0.0})


def detect_two_stage(cascade: CascadeParams, image, space: SearchSpace, T=100):
    """Rank all candidates with the small network, re-score the top T with the large one.

    The best rectangle is the stage-2 maximum; ties go to the earliest
    candidate in enumeration order.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    rects = list(enumerate_rects(image.width, image.height, space))
    if not rects:
        return NoCandidates()
    t0 = time.perf_counter()
    s1 = score_all(cascade.small, image, rects)
    top = _top_indices(s1, T)
    t1 = time.perf_counter()
    chosen = np.sort(top)  # enumeration order keeps stage-2 batches identical to an exhaustive run
    s2_chosen = score_all(cascade.large, image, [rects[i] for i in chosen])
    s2 = dict(zip(chosen.tolist(), s2_chosen.tolist()))
    best_idx = int(chosen[int(np.argmax(s2_chosen))])
    t2 = time.perf_counter()
    top_t = [(rects[i], float(s1[i]), s2[int(i)]) for i in top]
    return DetectionResult(rects[best_idx], s2[best_idx], top_t,
                           {"stage1_evals": len(rects), "stage2_evals": len(chosen), "candidates": len(rects)},
                           {"stage1": t1 - t0, "stage2": t2 - t1})


def plate_pixels(rects, width, height):
    """Integer (row, col) of each rectangle's left and right plate centers, or -1 when off-image."""
    p = np.array([r.as_tuple() for r in rects]).reshape(-1, 5)
    cx, cy, ang, wid = p[:, 0], p[:, 1], p[:, 2], p[:, 4]
    vx, vy = -np.sin(ang), np.cos(ang)
    out = []
    for sign in (-1.0, 1.0):
        x = np.floor(cx + sign * 0.5 * wid * vx + 0.5).astype(np.int64)
        y = np.floor(cy + sign * 0.5 * wid * vy + 0.5).astype(np.int64)
        ok = (x >= 0) & (x < width) & (y >= 0) & (y < height)
        out.append((np.where(ok, y, -1), np.where(ok, x, -1)))
    return out


def score_heatmap(net: NetworkParams, image, space: SearchSpace, gripper: Gripper | None = None):
    """Per-pixel maximum score of rectangles whose left (right) plate is centered there.

    Pixels no candidate reaches are NaN.
    """
    if gripper is not None:
        space = space.with_gripper(gripper)
    rects = list(enumerate_rects(image.width, image.height, space))
    H, W = image.height, image.width
    planes = []
    scores = score_all(net, image, rects) if rects else np.zeros(0)
    for rows, cols in plate_pixels(rects, W, H) if rects else [(np.zeros(0, int),) * 2] * 2:
        plane = np.full(H * W, -np.inf)
        ok = rows >= 0
        np.maximum.at(plane, rows[ok] * W + cols[ok], scores[ok])
        plane[np.isneginf(plane)] = np.nan
        planes.append(plane.reshape(H, W))
    return planes[0], planes[1]
