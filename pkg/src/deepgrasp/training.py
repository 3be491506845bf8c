"""Layerwise sparse-autoencoder pretraining and supervised fine-tuning.

Pretraining a layer minimizes

    sum_t sum_i q_ti (x_hat_ti - target_ti)**2 + lam * sum_t sum_j g(h_tj) + beta * f(W)

with ``h = sigmoid(inputs @ W + b)`` and ``x_hat = h @ W.T``.  For the first
layer the encoder sees the mode-scaled input, the per-coordinate penalty
weight ``q`` is ``mu * psi`` and the target is the unscaled patch, so masked
out cells cost nothing.  The second layer reconstructs first-layer
activations with unit weights.

Fine-tuning minimizes the negative log-likelihood of the labels plus
``beta1 * f(W1) + beta2 * f(W2)``; the sparsity term is not used there.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .network import CascadeParams, NetworkParams, forward, glorot, sigmoid
from .optim import minimize
from .patch import DEFAULT_CAP, DEFAULT_SIDE, Featurizer, ModalityMask, NormStats, mode_scales
from .regularization import RegConfig, penalty, sparsity_g

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    reg1: RegConfig = RegConfig("l1", beta=3e-3)
    reg2: RegConfig = RegConfig("l1", beta=3e-3)
    lam: float = 3.0
    optimizer: str = "lbfgs"
    max_iters: int = 400
    finetune_iters: int | None = None
    tol: float = 1e-6
    seed: int = 0
    minibatch: int | None = None
    cap: float = DEFAULT_CAP

    def __post_init__(self):
        if self.max_iters <= 0 or self.tol <= 0:
            raise ValueError("max_iters and tol must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")


@dataclass(eq=False)
class LabeledDataset:
    """Unscaled (normalized) inputs with masks, per-mode scales and binary labels."""

    X: np.ndarray
    MU: np.ndarray
    PSI: np.ndarray
    y: np.ndarray
    modality: ModalityMask

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.MU = np.asarray(self.MU, dtype=bool)
        self.PSI = np.asarray(self.PSI, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        M = self.X.shape[0]
        if M == 0:
            raise ValueError("dataset is empty")
        if self.MU.shape != self.X.shape or self.PSI.shape != (M, self.modality.n_modes) or self.y.shape != (M,):
            raise ValueError("dataset arrays have inconsistent shapes")
        if not np.isin(self.y, (0.0, 1.0)).all():
            raise ValueError("labels must be 0 or 1")

    def __len__(self):
        return self.X.shape[0]

    @property
    def coord_scale(self):
        return self.PSI[:, self.modality.labels]

    @property
    def scaled(self):
        return self.X * self.coord_scale

    def subset(self, idx):
        idx = np.asarray(idx)
        return LabeledDataset(self.X[idx], self.MU[idx], self.PSI[idx], self.y[idx], self.modality)

    def repeated(self, times=2):
        idx = np.tile(np.arange(len(self)), times)
        return self.subset(idx)


@dataclass(eq=False)
class SaeData:
    inputs: np.ndarray  # what the encoder sees
    targets: np.ndarray  # what the decoder must reproduce
    weights: np.ndarray  # per-coordinate reconstruction penalty weight

    @classmethod
    def from_patches(cls, ds: LabeledDataset):
        scale = ds.coord_scale
        return cls(ds.X * scale, ds.X, ds.MU * scale)

    @classmethod
    def plain(cls, H):
        H = np.asarray(H, dtype=float)
        return cls(H, H, np.ones_like(H))


@dataclass
class LayerFit:
    W: np.ndarray
    b: np.ndarray
    trace: list
    records: list = field(default_factory=list)
    converged: bool = False


@dataclass
class TrainReport:
    sizes: tuple
    traces: dict
    records: dict
    train_accuracy: float
    flops_per_iter: int
    n_examples: int


# ---------------------------------------------------------------------------
# Autoencoder objective
# ---------------------------------------------------------------------------

def sae_terms(W, b, data: SaeData, lam, reg: RegConfig, modality: ModalityMask):
    """Evaluate the pretraining objective term by term, with gradients.

    Returns a dict with the scalar terms ``recon``, ``sparsity``, ``reg`` and
    ``total`` plus ``grad_W``, ``grad_b`` and the intermediate arrays
    (``encoder_input``, ``target``, ``penalty_weight``, ``hidden``,
    ``reconstruction``) so callers can inspect what was penalized.
    """
    X, T, Q = data.inputs, data.targets, data.weights
    H = sigmoid(X @ W + b)
    Xh = H @ W.T
    E = Xh - T
    recon = float(np.sum(Q * E * E))
    gs, dgs = sparsity_g(H) if lam else (0.0, 0.0)
    fval, fgrad = penalty(W, modality, reg) if reg.beta else (0.0, 0.0)

    dXh = 2.0 * Q * E
    dH = dXh @ W + lam * dgs
    dA = dH * H * (1.0 - H)
    gW = dXh.T @ H + X.T @ dA + reg.beta * fgrad
    gb = dA.sum(axis=0)
    total = recon + lam * gs + reg.beta * fval
    return {
        "total": total, "recon": recon, "sparsity": lam * gs, "reg": reg.beta * fval,
        "grad_W": gW, "grad_b": gb,
        "encoder_input": X, "target": T, "penalty_weight": Q, "hidden": H, "reconstruction": Xh,
    }


def sae_objective(W, b, data, lam, reg, modality):
    t = sae_terms(W, b, data, lam, reg, modality)
    return t["total"], t["grad_W"], t["grad_b"]


def pretrain_layer(data: SaeData, K, config: TrainConfig, layer=1, modality=None, seed=None, log_stream=None):
    """Fit one tied-weight sparse autoencoder layer and return its encoder weights."""
    n = data.inputs.shape[1]
    if modality is None:
        modality = ModalityMask.single(n)
    reg = config.reg1 if layer == 1 else config.reg2
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng([seed, layer])
    if config.minibatch and config.minibatch < data.inputs.shape[0]:
        idx = np.sort(rng.choice(data.inputs.shape[0], config.minibatch, replace=False))
        data = SaeData(data.inputs[idx], data.targets[idx], data.weights[idx])
    W0 = glorot(rng, n, K)
    theta0 = np.concatenate([W0.ravel(), np.zeros(K)])

    def fun(theta):
        W = theta[: n * K].reshape(n, K)
        b = theta[n * K:]
        f, gW, gb = sae_objective(W, b, data, config.lam, reg, modality)
        return f, np.concatenate([gW.ravel(), gb])

    res = minimize(fun, theta0, config.optimizer, config.max_iters, config.tol, log=log_stream)
    log.info("layer %d pretrain: %d iterations, objective %.6g -> %.6g", layer, res.n_iter, res.trace[0], res.fun)
    return LayerFit(res.x[: n * K].reshape(n, K).copy(), res.x[n * K:].copy(), res.trace, res.records, res.converged)


# ---------------------------------------------------------------------------
# Supervised objective
# ---------------------------------------------------------------------------

_PARTS = ("W1", "b1", "W2", "b2", "w3", "b3")


def pack(params: NetworkParams) -> np.ndarray:
    return np.concatenate([np.ravel(getattr(params, k)) for k in _PARTS])


def unpack(theta, like: NetworkParams) -> NetworkParams:
    out, pos = {}, 0
    for k in _PARTS:
        ref = np.asarray(getattr(like, k))
        size = ref.size
        chunk = theta[pos:pos + size]
        out[k] = float(chunk[0]) if k == "b3" else chunk.reshape(ref.shape).copy()
        pos += size
    return like.copy(**out)


def negative_log_likelihood(a, y):
    """sum_t -log P(y_t | a_t) for logits a, computed without forming log(p)."""
    return float(np.sum(np.logaddexp(0.0, a) - y * a))


def full_objective(params: NetworkParams, data: LabeledDataset, config: TrainConfig):
    """Negated fine-tuning objective and its gradient for every parameter.

    Returns ``(value, grads)`` where ``grads`` maps W1, b1, W2, b2, w3, b3 to
    arrays shaped like the parameters.
    """
    Xs = data.scaled
    H1 = sigmoid(Xs @ params.W1 + params.b1)
    H2 = sigmoid(H1 @ params.W2 + params.b2)
    a = H2 @ params.w3 + params.b3
    value = negative_log_likelihood(a, data.y)

    da = expit(a) - data.y
    dH2 = np.outer(da, params.w3)
    dA2 = dH2 * H2 * (1.0 - H2)
    dH1 = dA2 @ params.W2.T
    dA1 = dH1 * H1 * (1.0 - H1)
    grads = {
        "W1": Xs.T @ dA1, "b1": dA1.sum(axis=0),
        "W2": H1.T @ dA2, "b2": dA2.sum(axis=0),
        "w3": H2.T @ da, "b3": np.array(da.sum()),
    }
    layer2_groups = ModalityMask.single(params.W2.shape[0])
    for key, reg, groups in (("W1", config.reg1, params.modality), ("W2", config.reg2, layer2_groups)):
        if reg.beta:
            f, g = penalty(getattr(params, key), groups, reg)
            value += reg.beta * f
            grads[key] = grads[key] + reg.beta * g
    return value, grads


def full_objective_flat(theta, like: NetworkParams, data, config):
    params = unpack(theta, like)
    value, grads = full_objective(params, data, config)
    return value, np.concatenate([np.ravel(grads[k]) for k in _PARTS])


def finetune(params: NetworkParams, data: LabeledDataset, config: TrainConfig, log_stream=None):
    """Jointly fit all three layers on labeled data; returns (params, OptResult)."""
    iters = config.finetune_iters or config.max_iters
    res = minimize(lambda th: full_objective_flat(th, params, data, config), pack(params),
                   config.optimizer, iters, config.tol, log=log_stream)
    log.info("finetune: %d iterations, objective %.6g -> %.6g", res.n_iter, res.trace[0], res.fun)
    return unpack(res.x, params), res


def accuracy(params: NetworkParams, data: LabeledDataset) -> float:
    p = forward(params, data.scaled).p
    return float(np.mean((p > 0.5) == (data.y > 0.5)))


# ---------------------------------------------------------------------------
# Whole-network and cascade training
# ---------------------------------------------------------------------------

def build_dataset(scenes, side=DEFAULT_SIDE, cap=DEFAULT_CAP, norm: NormStats | None = None):
    """Extract every annotated rectangle into a LabeledDataset.

    Normalization statistics are fitted on these patches unless ``norm`` is
    given.  Returns ``(dataset, norm)``.
    """
    raw = Featurizer(side, cap, None)
    Xs, MUs, ys = [], [], []
    for sc in scenes:
        rects = list(sc.positives) + list(sc.negatives)
        if not rects:
            continue
        X, MU = raw.raw(sc.image, rects)
        Xs.append(X)
        MUs.append(MU)
        ys.append(np.r_[np.ones(len(sc.positives)), np.zeros(len(sc.negatives))])
    if not Xs:
        raise ValueError("no annotated rectangles in the given scenes")
    X, MU, y = np.vstack(Xs), np.vstack(MUs), np.concatenate(ys)
    if norm is None:
        norm = NormStats.fit(X, MU, raw.modality)
    feat = Featurizer(side, cap, norm)
    Xn = norm.apply(X, MU, feat.modality)
    psi = mode_scales(MU, feat.modality, cap)
    return LabeledDataset(Xn, MU, psi, y, feat.modality), norm


def train_network(data: LabeledDataset, sizes, config: TrainConfig, norm=None, side=DEFAULT_SIDE, log_stream=None,
                  finetune_net=True):
    """Pretrain both hidden layers, then fine-tune; returns (NetworkParams, TrainReport).

    With ``finetune_net=False`` the pretrained layers are returned as-is with
    the output weights at their initial values.
    """
    K1, K2 = sizes
    N = data.X.shape[1]
    fit1 = pretrain_layer(SaeData.from_patches(data), K1, config, 1, data.modality, log_stream=log_stream)
    H1 = sigmoid(data.scaled @ fit1.W + fit1.b)
    fit2 = pretrain_layer(SaeData.plain(H1), K2, config, 2, log_stream=log_stream)
    rng = np.random.default_rng([config.seed, 3])
    params = NetworkParams(fit1.W, fit1.b, fit2.W, fit2.b, glorot(rng, K2, 1, (K2,)), 0.0,
                           data.modality, norm, side, config.cap)
    ft_trace, ft_records = [], []
    if finetune_net:
        params, res = finetune(params, data, config, log_stream=log_stream)
        ft_trace, ft_records = res.trace, res.records
    flops = 3 * len(data) * params.flops_per_example()
    params.info.update(sizes=(N, K1, K2))
    report = TrainReport(
        sizes=(N, K1, K2),
        traces={"pretrain1": fit1.trace, "pretrain2": fit2.trace, "finetune": ft_trace},
        records={"pretrain1": fit1.records, "pretrain2": fit2.records, "finetune": ft_records},
        train_accuracy=accuracy(params, data),
        flops_per_iter=flops,
        n_examples=len(data),
    )
    return params, report


def train_cascade(scenes, small=(50, 50), large=(200, 200), config: TrainConfig = TrainConfig(),
                  side=DEFAULT_SIDE, data=None, norm=None, log_stream=None, finetune_net=True):
    """Train the small (first-pass) and large (re-ranking) networks independently on the same data.

    Returns ``(CascadeParams, {"small": TrainReport, "large": TrainReport})``.
    """
    if data is None:
        data, norm = build_dataset(scenes, side, config.cap, norm)
    small_net, small_rep = train_network(data, small, config, norm, side, log_stream, finetune_net)
    large_net, large_rep = train_network(data, large, config, norm, side, log_stream, finetune_net)
    return CascadeParams(small_net, large_net), {"small": small_rep, "large": large_rep}
