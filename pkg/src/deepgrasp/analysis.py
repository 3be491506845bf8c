"""Mode-usage statistics of first-layer weights."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .patch import ModalityMask
from .regularization import RegConfig, smooth_group_max
from .training import pretrain_layer, sae_terms


def group_max(W, modality: ModalityMask, alpha=None):
    """(R, K) per-group maximum |W|; with ``alpha`` the log-sum-exp smooth max is used instead."""
    W = np.abs(np.asarray(W, dtype=float))
    if alpha is not None:
        return smooth_group_max(W, modality, alpha)
    out = np.zeros((modality.n_modes, W.shape[1]))
    for r in range(modality.n_modes):
        rows = modality.labels == r
        if rows.any():
            out[r] = W[rows].max(axis=0)
    return out


@dataclass
class ModeSparsity:
    active: np.ndarray  # (R, K) bool
    active_fraction: float  # over the selected modes
    modes_per_feature: float
    threshold: float

    def as_dict(self):
        return {"active_fraction": self.active_fraction, "modes_per_feature": self.modes_per_feature,
                "threshold": self.threshold, "active_per_mode": self.active.mean(axis=1).tolist()}


def mode_sparsity(W, modality: ModalityMask, modes=None, rel_thresh=0.1, alpha=None) -> ModeSparsity:
    """Which (mode, feature) groups carry weight above ``rel_thresh`` times the largest group max.

    ``active_fraction`` is computed over ``modes`` (default: all modes), so
    passing the irrelevant modes gives the fraction of features that still use
    them.
    """
    gm = group_max(W, modality, alpha)
    thresh = rel_thresh * gm.max()
    active = gm > thresh
    sel = np.arange(modality.n_modes) if modes is None else np.asarray(list(modes))
    return ModeSparsity(active, float(active[sel].mean()), float(active.sum(axis=0).mean()), float(thresh))


@dataclass
class CalibratedFit:
    beta: float
    recon: float
    W: np.ndarray
    b: np.ndarray


def reconstruction_error(W, b, data):
    return sae_terms(W, b, data, 0.0, RegConfig(beta=0.0), ModalityMask.single(W.shape[0]))["recon"]


def calibrate_beta(data, K, config, modality: ModalityMask, target, lo=1e-3, hi=1e4, steps=12):
    """Log-bisect the layer-1 regularization weight until reconstruction error meets ``target``.

    Reconstruction error grows with beta, so each step keeps the half that
    brackets the target.  Returns the fit whose error was closest to it.
    """
    best = None
    for _ in range(steps):
        beta = float(np.sqrt(lo * hi))
        cfg = replace(config, reg1=replace(config.reg1, beta=beta))
        fit = pretrain_layer(data, K, cfg, layer=1, modality=modality)
        recon = reconstruction_error(fit.W, fit.b, data)
        if best is None or abs(recon - target) < abs(best.recon - target):
            best = CalibratedFit(beta, recon, fit.W, fit.b)
        if recon > target:
            hi = beta
        else:
            lo = beta
    return best
