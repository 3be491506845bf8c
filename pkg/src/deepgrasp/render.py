"""Raster outputs: rectangle overlays and score heatmaps as 8-bit images."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .rects import GraspRect

PLATE_RGB = (0, 255, 0)
SIDE_RGB = (255, 0, 0)
ABSENT_SHADE = 0  # heatmap pixels no candidate reaches; scores use 1..255


def _draw_segment(img, p, q, color):
    H, W = img.shape[:2]
    n = int(np.ceil(4 * np.hypot(*(q - p)))) + 1
    t = np.linspace(0.0, 1.0, n)[:, None]
    pts = np.floor(p + t * (q - p) + 0.5).astype(np.int64)
    ok = (pts[:, 0] >= 0) & (pts[:, 0] < W) & (pts[:, 1] >= 0) & (pts[:, 1] < H)
    img[pts[ok, 1], pts[ok, 0]] = color


def overlay(rgb, rects, plate_color=PLATE_RGB, side_color=SIDE_RGB):
    """Copy of ``rgb`` (H, W, 3; float in [0, 1] or uint8) with each rectangle drawn on it.

    The two gripper-plate edges use ``plate_color``; the other two edges use
    ``side_color``.  Plates are drawn last so they win where edges meet.
    """
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8:
        rgb = np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
    img = rgb.copy()
    rects = [rects] if isinstance(rects, GraspRect) else list(rects)
    for r in rects:
        c = r.corners()
        _draw_segment(img, c[1], c[2], side_color)
        _draw_segment(img, c[3], c[0], side_color)
    for r in rects:
        for seg in r.plate_segments():
            _draw_segment(img, seg[0], seg[1], plate_color)
    return img


def heatmap_gray(plane):
    """Map scores in [0, 1] to 1..255; NaN (absent) pixels get ``ABSENT_SHADE``."""
    plane = np.asarray(plane, dtype=float)
    out = np.full(plane.shape, ABSENT_SHADE, dtype=np.uint8)
    ok = np.isfinite(plane)
    out[ok] = 1 + np.rint(254.0 * np.clip(plane[ok], 0.0, 1.0)).astype(np.uint8)
    return out


def save_png(path, array):
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path, format="PNG")
