"""Rectangle-to-input-vector mapping: extraction, normalization and mask scaling.

Flattening order (part of the model file contract): mode-major, i.e. all
cells of the depth plane, then Y, U, V, nX, nY, nZ; row-major within a mode.
Patch rows run along the rectangle's width axis (plate separation), columns
along its length axis (parallel to the plates), so the plates lie along the
first and last used rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import intersection_area
from .rects import GraspRect
from .rgbd import N_CHANNELS, RgbdImage

FLATTEN_ORDER = "mode-major/row-major/v1"
DEFAULT_SIDE = 24
DEFAULT_CAP = 2.0


@dataclass(frozen=True, eq=False)
class ModalityMask:
    """Assignment of each input coordinate to exactly one mode.

    Stored as a label per coordinate; :attr:`matrix` gives the binary R x N
    matrix form.
    """

    labels: np.ndarray
    n_modes: int

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ValueError("labels must be one-dimensional")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_modes):
            raise ValueError("label out of range")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def for_patch(cls, side=DEFAULT_SIDE, n_modes=N_CHANNELS):
        return cls(np.repeat(np.arange(n_modes), side * side), n_modes)

    @classmethod
    def single(cls, n):
        """All coordinates in one group."""
        return cls(np.zeros(n, dtype=np.int64), 1)

    @classmethod
    def from_matrix(cls, S):
        S = np.asarray(S)
        if S.ndim != 2 or not np.isin(S, (0, 1)).all():
            raise ValueError("S must be a binary matrix")
        if not np.all(S.sum(axis=0) == 1):
            raise ValueError("every coordinate must belong to exactly one mode")
        return cls(np.argmax(S, axis=0), S.shape[0])

    @property
    def n_inputs(self) -> int:
        return self.labels.size

    @property
    def matrix(self) -> np.ndarray:
        S = np.zeros((self.n_modes, self.n_inputs), dtype=np.int8)
        S[self.labels, np.arange(self.n_inputs)] = 1
        return S

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_modes)

    def __eq__(self, other):
        return (isinstance(other, ModalityMask) and self.n_modes == other.n_modes
                and np.array_equal(self.labels, other.labels))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PatchInput:
    x: np.ndarray
    mu: np.ndarray
    psi: np.ndarray
    source: GraspRect


@dataclass(frozen=True)
class NormStats:
    """Per-channel mean/std used to whiten masked-in cells."""

    mean: tuple
    std: tuple

    @classmethod
    def fit(cls, X, MU, modality):
        X = np.asarray(X, dtype=float)
        MU = np.asarray(MU, dtype=bool)
        mean, std = [], []
        for r in range(modality.n_modes):
            cols = modality.labels == r
            vals = X[:, cols][MU[:, cols]]
            if vals.size == 0:
                mean.append(0.0)
                std.append(1.0)
                continue
            m = float(vals.mean())
            s = float(vals.std())
            mean.append(m)
            std.append(s if s > 1e-8 else 1.0)
        return cls(tuple(mean), tuple(std))

    @classmethod
    def identity(cls, n_modes=N_CHANNELS):
        return cls((0.0,) * n_modes, (1.0,) * n_modes)

    def apply(self, X, MU, modality):
        mean = np.asarray(self.mean)[modality.labels]
        std = np.asarray(self.std)[modality.labels]
        return np.where(MU, (X - mean) / std, 0.0)


def rect_overlaps_image(rect: GraspRect, width: int, height: int) -> bool:
    box = np.array([[-0.5, -0.5], [width - 0.5, -0.5], [width - 0.5, height - 0.5], [-0.5, height - 0.5]])
    return intersection_area(rect.corners(), box) > 0.0


def _corner_valid(valid):
    """valid[y, x] & valid[y, x+1] & valid[y+1, x] & valid[y+1, x+1], edge-replicated."""
    v = np.pad(valid, ((0, 1), (0, 1)), mode="edge")
    return v[:-1, :-1] & v[:-1, 1:] & v[1:, :-1] & v[1:, 1:]


def _sample_grid(rects, side):
    p = np.array([r.as_tuple() for r in rects])
    cx, cy, ang, ln, wd = (p[:, k:k + 1] for k in range(5))
    scale = side / np.maximum(ln, wd)
    n_cols = np.clip(np.round(ln * scale), 1, side)
    n_rows = np.clip(np.round(wd * scale), 1, side)
    r0 = (side - n_rows) // 2
    c0 = (side - n_cols) // 2
    rr = np.repeat(np.arange(side), side)[None, :].astype(float)
    cc = np.tile(np.arange(side), side)[None, :].astype(float)
    used = (rr >= r0) & (rr < r0 + n_rows) & (cc >= c0) & (cc < c0 + n_cols)
    a = (cc - c0 + 0.5) / n_cols * ln - 0.5 * ln
    b = (rr - r0 + 0.5) / n_rows * wd - 0.5 * wd
    c, s = np.cos(ang), np.sin(ang)
    xs = cx + a * c - b * s
    ys = cy + a * s + b * c
    return xs, ys, used


def sample_points(rect: GraspRect, side=DEFAULT_SIDE):
    """Image (x, y) sample positions of each receptive-field cell, plus the used-cell mask."""
    xs, ys, used = _sample_grid([rect], side)
    return xs[0].reshape(side, side), ys[0].reshape(side, side), used[0].reshape(side, side)


def extract_patches(image: RgbdImage, rects, side=DEFAULT_SIDE):
    """Batch version of :func:`extract_patch` returning (X, MU) arrays of shape (B, 7*side*side).

    Rectangles are not checked against the image bounds here; cells sampling
    outside the image are simply masked out.
    """
    if side <= 0:
        raise ValueError(f"side must be positive, got {side}")
    rects = list(rects)
    B = len(rects)
    n_cells = side * side
    if B == 0:
        return np.zeros((0, N_CHANNELS * n_cells)), np.zeros((0, N_CHANNELS * n_cells), dtype=bool)
    H, W = image.height, image.width
    xs, ys, used = _sample_grid(rects, side)
    tol = 1e-9  # samples on the border within round-off count as inside
    inb = (xs >= -tol) & (xs <= W - 1 + tol) & (ys >= -tol) & (ys <= H - 1 + tol)
    x0 = np.clip(np.floor(xs), 0, max(W - 2, 0)).astype(np.int64)
    y0 = np.clip(np.floor(ys), 0, max(H - 2, 0)).astype(np.int64)
    mu = used & inb & _corner_valid(image.valid)[y0, x0]

    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)
    dx = (x0 + 1 < W).astype(np.int64)
    dy = np.where(y0 + 1 < H, W, 0)
    i00 = y0 * W + x0
    i01, i10 = i00 + dx, i00 + dy
    i11 = i10 + dx
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy
    X = np.empty((B, N_CHANNELS, n_cells))
    for ch in range(N_CHANNELS):
        plane = image.channels[ch].ravel()
        X[:, ch, :] = w00 * plane[i00] + w01 * plane[i01] + w10 * plane[i10] + w11 * plane[i11]
    X *= mu[:, None, :]
    X = X.reshape(B, N_CHANNELS * n_cells)
    MU = np.tile(mu, (1, N_CHANNELS))
    return X, MU


def extract_patch(image: RgbdImage, rect: GraspRect, side=DEFAULT_SIDE) -> PatchInput:
    """Resample the rectangle interior into a side x side receptive field per channel.

    The longer rectangle side maps to ``side`` cells and the aspect ratio is
    preserved; unused cells are zero with mu = 0.  The returned patch is
    unscaled (psi = 1).
    """
    if side <= 0:
        raise ValueError(f"side must be positive, got {side}")
    if not rect_overlaps_image(rect, image.width, image.height):
        raise ValueError(f"rectangle {rect} lies entirely outside the {image.width}x{image.height} image")
    X, MU = extract_patches(image, [rect], side)
    return PatchInput(X[0], MU[0], np.ones(N_CHANNELS), rect)


def mode_scales(MU, modality: ModalityMask, cap=DEFAULT_CAP):
    """Capped per-mode compensation factors, shape (B, R).

    A mode with every coordinate masked out gets factor 0.
    """
    MU = np.atleast_2d(np.asarray(MU, dtype=float))
    kept = MU @ modality.matrix.T.astype(float)  # (B, R)
    total = modality.counts.astype(float)
    with np.errstate(divide="ignore"):
        psi = np.where(kept > 0, total / np.where(kept > 0, kept, 1.0), 0.0)
    if cap is not None:
        psi = np.minimum(psi, cap)
    return psi


def mask_scale(patch: PatchInput, modality: ModalityMask, c=DEFAULT_CAP) -> PatchInput:
    """Multiply each mode's masked-in inputs by min(total / kept, c)."""
    if c is not None and c <= 0:
        raise ValueError("cap must be positive")
    psi = mode_scales(patch.mu, modality, c)[0]
    x = np.where(patch.mu, patch.x * psi[modality.labels], 0.0)
    return PatchInput(x, patch.mu, psi, patch.source)


def flatten(planes):
    """(..., R, side, side) -> (..., R*side*side) in the model flattening order."""
    planes = np.asarray(planes)
    return planes.reshape(planes.shape[:-3] + (-1,))


def unflatten(x, n_modes=N_CHANNELS):
    x = np.asarray(x)
    side = math.isqrt(x.shape[-1] // n_modes)
    if n_modes * side * side != x.shape[-1]:
        raise ValueError(f"length {x.shape[-1]} is not {n_modes} square planes")
    return x.reshape(x.shape[:-1] + (n_modes, side, side))


@dataclass(frozen=True, eq=False)
class Featurizer:
    """The full rectangle -> network input map used for training and detection."""

    side: int = DEFAULT_SIDE
    cap: float = DEFAULT_CAP
    norm: NormStats | None = None
    modality: ModalityMask | None = None

    def __post_init__(self):
        if self.modality is None:
            object.__setattr__(self, "modality", ModalityMask.for_patch(self.side))

    def raw(self, image, rects):
        X, MU = extract_patches(image, rects, self.side)
        if self.norm is not None:
            X = self.norm.apply(X, MU, self.modality)
        return X, MU

    def __call__(self, image, rects):
        """Return (unscaled inputs, mask, per-mode scales) for a batch of rectangles."""
        X, MU = self.raw(image, rects)
        psi = mode_scales(MU, self.modality, self.cap)
        return X, MU, psi

    def scaled(self, image, rects):
        X, MU, psi = self(image, rects)
        return X * psi[:, self.modality.labels]
