"""Weight regularizers f(W) and the activation sparsity penalty g(h).

Every function returns ``(value, gradient)`` with the gradient shaped like
its argument.  Weight matrices are (n_inputs, n_features); a group is the set
of weights from one mode into one feature.  Group forms use the smoothed
magnitude ``s(w) = sqrt(w**2 + eps)`` so they stay differentiable at zero;
``eps = 0`` gives the exact, non-smooth definitions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .patch import ModalityMask

KINDS = ("l1", "l2", "group_pnorm", "group_max_lse", "group_l0_max")


@dataclass(frozen=True)
class RegConfig:
    kind: str = "l1"
    beta: float = 3e-3
    p: float = 2.0
    alpha: float = 20.0
    eps_g: float = 1e-6

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown regularizer {self.kind!r}; choose from {KINDS}")
        if self.p < 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.eps_g <= 0:
            raise ValueError("eps_g must be positive")

    @classmethod
    def default_for(cls, kind, **overrides):
        beta = 3e-3 if kind in ("l1", "l2") else 5e-3
        return cls(kind=kind, beta=overrides.pop("beta", beta), **overrides)


def _smooth_abs(W, eps):
    if eps == 0:
        return np.abs(W), np.sign(W)
    s = np.sqrt(W * W + eps)
    return s, W / s


def sparsity_g(h, eps_g=1e-6):
    """Smoothed L1 activation penalty: sum_j sqrt(h_j**2 + eps_g)."""
    h = np.asarray(h, dtype=float)
    s = np.sqrt(h * h + eps_g)
    return float(s.sum()), h / s


def reg_l1(W, eps_g=1e-6):
    s, ds = _smooth_abs(np.asarray(W, dtype=float), eps_g)
    return float(s.sum()), ds


def reg_l2(W):
    W = np.asarray(W, dtype=float)
    return float(np.sum(W * W)), 2.0 * W


def _group_sums(A, modality):
    """(R, K) sums of A over the rows in each mode."""
    return modality.matrix.astype(float) @ A


def group_pnorm(W, modality: ModalityMask, p, eps_g=0.0):
    """sum_j sum_r (sum_{i in r} |W_ij|^p)^(1/p)."""
    if p < 1:
        raise ValueError(f"group p-norm needs p >= 1, got {p}")
    W = np.asarray(W, dtype=float)
    s, ds = _smooth_abs(W, eps_g)
    sp = s ** p
    tot = _group_sums(sp, modality)  # (R, K)
    norms = tot ** (1.0 / p)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(tot > 0, norms / np.where(tot > 0, tot, 1.0), 0.0)  # tot^(1/p - 1)
    grad = coef[modality.labels] * s ** (p - 1) * ds
    return float(norms.sum()), grad


def _smooth_max(s, modality, alpha):
    """Per-group log-sum-exp of alpha*s over each mode: (R, K) values and (n, K) softmax weights."""
    R, K = modality.n_modes, s.shape[1]
    peak = np.full((R, K), -np.inf)
    for r in range(R):
        rows = modality.labels == r
        if rows.any():
            peak[r] = s[rows].max(axis=0)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    e = np.exp(alpha * (s - peak[modality.labels]))
    tot = _group_sums(e, modality)
    value = peak + np.log(np.where(tot > 0, tot, 1.0)) / alpha
    weights = e / np.where(tot > 0, tot, 1.0)[modality.labels]
    return value, weights


def group_max_lse(W, modality: ModalityMask, alpha, eps_g=1e-6):
    """Log-sum-exp smooth version of sum_j sum_r max_{i in r} |W_ij|."""
    W = np.asarray(W, dtype=float)
    s, ds = _smooth_abs(W, eps_g)
    m, soft = _smooth_max(s, modality, alpha)
    return float(m.sum()), soft * ds


def group_l0_max(W, modality: ModalityMask, alpha, eps_g=1e-6):
    """Smoothed count of modes used per feature: sum_j sum_r log(1 + m_rj**2), m the smooth group max."""
    W = np.asarray(W, dtype=float)
    s, ds = _smooth_abs(W, eps_g)
    m, soft = _smooth_max(s, modality, alpha)
    outer = 2.0 * m / (1.0 + m * m)
    return float(np.log1p(m * m).sum()), outer[modality.labels] * soft * ds


def smooth_group_max(W, modality: ModalityMask, alpha=20.0, eps_g=1e-6):
    """(R, K) smooth max of |W| per (mode, feature) group."""
    s, _ = _smooth_abs(np.asarray(W, dtype=float), eps_g)
    return _smooth_max(s, modality, alpha)[0]


def penalty(W, modality: ModalityMask, cfg: RegConfig):
    """Unweighted f(W) and its gradient for the configured kind."""
    if cfg.kind == "l1":
        return reg_l1(W, cfg.eps_g)
    if cfg.kind == "l2":
        return reg_l2(W)
    if cfg.kind == "group_pnorm":
        return group_pnorm(W, modality, cfg.p, cfg.eps_g)
    if cfg.kind == "group_max_lse":
        return group_max_lse(W, modality, cfg.alpha, cfg.eps_g)
    return group_l0_max(W, modality, cfg.alpha, cfg.eps_g)
