"""Deterministic synthetic RGB-D grasping scenes.

A scene is a flat table with graspable bars (raised ridges with a reddish
stripe) and non-graspable distractors (grooves and slabs too wide for the
gripper).  Positive rectangles straddle a bar with the plates parallel to its
axis; negatives sit across bars, off to one side of them, on distractors, or on
bare table.  Only the channels listed in ``relevant_modes`` carry the scene;
the rest are a constant plus noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rects import GraspRect
from .rgbd import CHANNELS, AnnotatedScene, RgbdImage, estimate_normals, rgb_to_yuv

TABLE_DEPTH = 10.0
TABLE_RGB = (0.55, 0.55, 0.5)
BAR_RGB = (0.85, 0.2, 0.15)
GROOVE_RGB = (0.2, 0.35, 0.8)
SLAB_RGB = (0.25, 0.7, 0.3)


@dataclass(frozen=True)
class SynthSpec:
    n_bars: int = 1
    n_distractors: int = 1
    noise_sigma: float = 0.02
    relevant_modes: tuple = CHANNELS
    height: int = 96
    width: int = 96
    dropout: float = 0.0
    positives_per_bar: int = 6
    background_negatives: int = 1
    normal_window: int = 5
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        modes = tuple(self.relevant_modes)
        unknown = set(modes) - set(CHANNELS)
        if unknown:
            raise ValueError(f"unknown modes {sorted(unknown)}; expected names from {CHANNELS}")
        object.__setattr__(self, "relevant_modes", modes)


@dataclass(frozen=True)
class _Shape:
    kind: str  # bar | groove | slab
    cx: float
    cy: float
    angle: float
    length: float
    width: float
    height: float

    @property
    def radius(self):
        return 0.5 * math.hypot(self.length, self.width)


def _raised_cosine(z):
    z = np.minimum(np.abs(z), 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * z))


def _footprint(shape, xs, ys):
    c, s = math.cos(shape.angle), math.sin(shape.angle)
    dx, dy = xs - shape.cx, ys - shape.cy
    along = dx * c + dy * s
    across = -dx * s + dy * c
    prof = _raised_cosine(across / (0.5 * shape.width))
    ends = np.clip((0.5 * shape.length - np.abs(along)) / 2.0, 0.0, 1.0)
    return prof * ends


def _place(rng, kind, shapes, H, W):
    for _ in range(200):
        if kind == "bar":
            length, width, height = rng.uniform(34, 46), rng.uniform(6, 9), rng.uniform(2.5, 4.0)
        elif kind == "groove":
            length, width, height = rng.uniform(30, 44), rng.uniform(8, 12), -rng.uniform(2.0, 3.5)
        else:
            length, width, height = rng.uniform(28, 38), rng.uniform(26, 32), rng.uniform(2.0, 3.5)
        angle = rng.uniform(0, math.pi)
        margin = 0.5 * length * 0.6 + 6
        cx = rng.uniform(margin, W - margin)
        cy = rng.uniform(margin, H - margin)
        cand = _Shape(kind, cx, cy, angle, length, width, height)
        if all(math.hypot(cx - o.cx, cy - o.cy) > 0.7 * (cand.radius + o.radius) + 2 for o in shapes):
            return cand
    raise RuntimeError("could not place shapes without overlap; image too small for the requested count")


def _rect_clear(rect, shapes):
    r = 0.5 * math.hypot(rect.len, rect.wid)
    return all(math.hypot(rect.cx - o.cx, rect.cy - o.cy) > r + 0.5 * o.width + 4 for o in shapes)


def synth_scene(seed, spec: SynthSpec = SynthSpec(), *, image_id=None, object_id=None) -> AnnotatedScene:
    if spec.n_bars <= 0 and spec.n_distractors <= 0:
        raise ValueError("a synthetic scene needs at least one bar or distractor")
    rng = np.random.default_rng(seed)
    H, W = spec.height, spec.width
    ys, xs = np.mgrid[0:H, 0:W].astype(float)

    shapes = []
    for _ in range(spec.n_bars):
        shapes.append(_place(rng, "bar", shapes, H, W))
    for _ in range(spec.n_distractors):
        shapes.append(_place(rng, "groove" if rng.random() < 0.5 else "slab", shapes, H, W))

    relief = np.zeros((H, W))
    rgb = np.broadcast_to(np.array(TABLE_RGB), (H, W, 3)).copy()
    colors = {"bar": BAR_RGB, "groove": GROOVE_RGB, "slab": SLAB_RGB}
    for sh in shapes:
        fp = _footprint(sh, xs, ys)
        relief += sh.height * fp
        paint = np.clip(fp * 1.5, 0.0, 1.0)[..., None]
        rgb = rgb * (1 - paint) + paint * np.array(colors[sh.kind])

    sigma = spec.noise_sigma
    relevant = set(spec.relevant_modes)
    depth = TABLE_DEPTH - (relief if "depth" in relevant else 0.0)
    depth = depth + sigma * rng.standard_normal((H, W))

    valid = np.ones((H, W), dtype=bool)
    if spec.dropout > 0:
        valid &= rng.random((H, W)) >= spec.dropout

    y, u, v = rgb_to_yuv(rgb[..., 0], rgb[..., 1], rgb[..., 2])
    base = {"Y": 0.5, "U": 0.0, "V": 0.0}
    yuv = {}
    for name, plane in (("Y", y), ("U", u), ("V", v)):
        plane = plane if name in relevant else np.full((H, W), base[name])
        plane = plane + sigma * rng.standard_normal((H, W))
        lo, hi = (0.0, 1.0) if name == "Y" else (-0.5, 0.5)
        yuv[name] = np.clip(plane, lo, hi)

    if relevant & {"nX", "nY", "nZ"}:
        geometry = TABLE_DEPTH - relief + sigma * rng.standard_normal((H, W))
        nx, ny, nz, ok = estimate_normals(geometry, valid, spec.normal_window)
    else:
        tilt = sigma * rng.standard_normal((2, H, W))
        norm = np.sqrt(1.0 + tilt[0] ** 2 + tilt[1] ** 2)
        nx, ny, nz = tilt[0] / norm, tilt[1] / norm, 1.0 / norm
        _, _, _, ok = estimate_normals(depth, valid, spec.normal_window)
    ok &= valid
    planes = [depth, yuv["Y"], yuv["U"], yuv["V"], nx, ny, nz]
    channels = np.stack([np.where(ok, p, 0.0) for p in planes])
    image = RgbdImage(channels, ok)

    positives, negatives = [], []
    for sh in shapes:
        if sh.kind == "bar":
            _bar_rects(rng, sh, spec, positives, negatives)
        else:
            for _ in range(2):
                t = rng.uniform(-0.25, 0.25) * sh.length
                c = (sh.cx + t * math.cos(sh.angle), sh.cy + t * math.sin(sh.angle))
                wid = min(sh.width + rng.uniform(6, 12), 24.0) if sh.kind == "groove" else rng.uniform(14, 22)
                negatives.append(GraspRect(c[0], c[1], sh.angle + math.radians(rng.normal(0, 4)),
                                           rng.uniform(14, 22), wid))
    for _ in range(spec.background_negatives):
        for _ in range(200):
            rect = GraspRect(rng.uniform(12, W - 12), rng.uniform(12, H - 12), rng.uniform(0, math.pi),
                             rng.uniform(14, 22), rng.uniform(12, 21))
            if _rect_clear(rect, shapes):
                negatives.append(rect)
                break

    meta = {"shapes": [sh.__dict__.copy() for sh in shapes], "seed": seed}
    image_id = seed if image_id is None else image_id
    object_id = image_id if object_id is None else object_id
    return AnnotatedScene(image, positives, negatives, object_id, image_id, meta)


def _bar_rects(rng, bar, spec, positives, negatives):
    c, s = math.cos(bar.angle), math.sin(bar.angle)
    for _ in range(spec.positives_per_bar):
        t = rng.uniform(-0.3, 0.3) * bar.length
        jitter = math.radians(rng.normal(0, 4)) if spec.noise_sigma > 0 else 0.0
        positives.append(GraspRect(bar.cx + t * c, bar.cy + t * s, bar.angle + jitter,
                                   rng.uniform(14, 22), bar.width + rng.uniform(6, 12)))

    def around(t, dv, dangle, length, wid):
        cx = bar.cx + t * c - dv * s
        cy = bar.cy + t * s + dv * c
        return GraspRect(cx, cy, bar.angle + dangle, length, wid)

    # ridge running between the plates
    negatives.append(around(rng.uniform(-0.2, 0.2) * bar.length, 0.0, math.pi / 2,
                            rng.uniform(14, 22), rng.uniform(14, 21)))
    # plates crossing the bar diagonally
    negatives.append(around(rng.uniform(-0.2, 0.2) * bar.length, 0.0,
                            rng.choice([-1, 1]) * math.radians(rng.uniform(50, 70)),
                            rng.uniform(14, 22), rng.uniform(14, 21)))
    # bar under one plate instead of between them
    wid = bar.width + rng.uniform(6, 12)
    off = rng.choice([-1, 1]) * (0.5 * wid + rng.uniform(0, 3))
    negatives.append(around(rng.uniform(-0.25, 0.25) * bar.length, off, 0.0, rng.uniform(14, 22), wid))


def synth_dataset(seeds, spec: SynthSpec = SynthSpec(), images_per_object=1):
    """Scenes for ``seeds``; consecutive groups of ``images_per_object`` share an object id."""
    return [synth_scene(s, spec, image_id=k, object_id=k // images_per_object)
            for k, s in enumerate(seeds)]


def mode_relevance_data(seed, n=600, dims=16, n_modes=3, rank=4, signal=10.0, nuisance=2.0, noise=0.2):
    """Flat feature vectors where only mode 0 carries the signal.

    Mode 0 is a rank-``rank`` signal of amplitude ``signal``.  Every other mode
    holds its own independent rank-2 nuisance of amplitude ``nuisance`` plus
    white noise, uncorrelated with mode 0.  Returns ``(X, labels)`` where
    ``labels[i]`` is the mode of input ``i``.
    """
    rng = np.random.default_rng(seed)
    X = np.empty((n, n_modes * dims))
    A = rng.normal(size=(dims, rank)) / math.sqrt(rank)
    X[:, :dims] = signal * rng.normal(size=(n, rank)) @ A.T
    for r in range(1, n_modes):
        B = rng.normal(size=(dims, 2)) / math.sqrt(2)
        X[:, r * dims:(r + 1) * dims] = nuisance * rng.normal(size=(n, 2)) @ B.T + noise * rng.normal(size=(n, dims))
    return X, np.repeat(np.arange(n_modes), dims)
