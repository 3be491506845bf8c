"""Two-hidden-layer sigmoid network with a logistic output unit.

Biases are added before every sigmoid.  The autoencoder decoder is tied to the
encoder (``x_hat = h @ W.T``) and has no bias or output nonlinearity.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ModelFormatError
from .patch import DEFAULT_CAP, DEFAULT_SIDE, FLATTEN_ORDER, Featurizer, ModalityMask, NormStats

EPS_P = 1e-12


def sigmoid(a):
    """Logistic function, clamped to [EPS_P, 1 - EPS_P] so results stay strictly inside (0, 1)."""
    return np.clip(expit(a), EPS_P, 1.0 - EPS_P)


@dataclass(eq=False)
class NetworkParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: float
    modality: ModalityMask
    norm: NormStats | None = None
    side: int = DEFAULT_SIDE
    cap: float = DEFAULT_CAP
    flatten_order: str = FLATTEN_ORDER
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64).reshape(-1)
        self.W2 = np.asarray(self.W2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64).reshape(-1)
        self.w3 = np.asarray(self.w3, dtype=np.float64).reshape(-1)
        self.b3 = float(self.b3)
        N, K1 = self.W1.shape
        if self.W2.shape[0] != K1 or self.b1.shape != (K1,):
            raise ValueError(f"layer 1/2 shapes disagree: W1 {self.W1.shape}, b1 {self.b1.shape}, W2 {self.W2.shape}")
        K2 = self.W2.shape[1]
        if self.b2.shape != (K2,) or self.w3.shape != (K2,):
            raise ValueError(f"layer 2/3 shapes disagree: W2 {self.W2.shape}, b2 {self.b2.shape}, w3 {self.w3.shape}")
        if not all(np.all(np.isfinite(a)) for a in (self.W1, self.b1, self.W2, self.b2, self.w3, self.b3)):
            raise ValueError("network weights must be finite")
        if self.modality.n_inputs != N:
            raise ValueError(f"modality mask covers {self.modality.n_inputs} inputs, W1 expects {N}")

    @property
    def sizes(self) -> tuple[int, int, int]:
        return (self.W1.shape[0], self.W1.shape[1], self.W2.shape[1])

    def copy(self, **changes) -> NetworkParams:
        fields = dict(W1=self.W1.copy(), b1=self.b1.copy(), W2=self.W2.copy(), b2=self.b2.copy(),
                      w3=self.w3.copy(), info=dict(self.info))
        fields.update(changes)
        return replace(self, **fields)

    def featurizer(self):
        return Featurizer(self.side, self.cap, self.norm, self.modality)

    def flops_per_example(self) -> int:
        """Multiply-adds of one forward pass (times two for flops)."""
        N, K1, K2 = self.sizes
        return 2 * (N * K1 + K1 * K2 + K2)


@dataclass(frozen=True, eq=False)
class ForwardActivations:
    h1: np.ndarray
    h2: np.ndarray
    p: np.ndarray


@dataclass(frozen=True, eq=False)
class CascadeParams:
    small: NetworkParams
    large: NetworkParams

    def __post_init__(self):
        a, b = self.small, self.large
        if a.sizes[0] != b.sizes[0]:
            raise ValueError(f"cascade input sizes differ: {a.sizes[0]} vs {b.sizes[0]}")
        if a.modality != b.modality or a.flatten_order != b.flatten_order:
            raise ValueError("cascade networks disagree on modality mask or flattening order")
        if a.norm != b.norm or a.side != b.side or a.cap != b.cap:
            raise ValueError("cascade networks disagree on input normalization")


def forward(params: NetworkParams, x) -> ForwardActivations:
    """Hidden activations and P(y=1 | x) for one input (N,) or a batch (M, N) of scaled inputs."""
    x = np.asarray(x, dtype=np.float64)
    N = params.W1.shape[0]
    if x.shape[-1] != N or x.ndim not in (1, 2):
        raise ValueError(f"input has shape {x.shape}, network expects (..., {N})")
    h1 = sigmoid(x @ params.W1 + params.b1)
    h2 = sigmoid(h1 @ params.W2 + params.b2)
    p = sigmoid(h2 @ params.w3 + params.b3)
    return ForwardActivations(h1, h2, p)


def reconstruct(W, h):
    """Tied-weight linear decode: x_hat_i = sum_j h_j W_ij."""
    W = np.asarray(W, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if W.ndim != 2 or h.shape[-1] != W.shape[1]:
        raise ValueError(f"cannot decode hidden vector {h.shape} with weights {W.shape}")
    return h @ W.T


def glorot(rng, fan_in, fan_out, shape=None):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


def init_params(seed, sizes, modality=None, **kwargs) -> NetworkParams:
    N, K1, K2 = sizes
    if min(N, K1, K2) <= 0:
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    rng = np.random.default_rng(seed)
    if modality is None:
        side = kwargs.get("side", DEFAULT_SIDE)
        modality = ModalityMask.for_patch(side) if N == 7 * side * side else ModalityMask.single(N)
    return NetworkParams(
        W1=glorot(rng, N, K1), b1=np.zeros(K1),
        W2=glorot(rng, K1, K2), b2=np.zeros(K2),
        w3=glorot(rng, K2, 1, (K2,)), b3=0.0,
        modality=modality, **kwargs,
    )


# ---------------------------------------------------------------------------
# Model file
#
#   magic  b"DGNET\x00"            6 bytes
#   version                         u32
#   N, K1, K2, R, side              5 x u32
#   cap, b3                         2 x f64
#   flatten order                   u32 length + utf-8 bytes
#   has_norm                        u8
#   W1 (N x K1), b1, W2 (K1 x K2), b2, w3   f64, row-major
#   modality labels as a packed bitset (R x N, row-major, np.packbits)
#   norm mean (R), norm std (R)     f64, only if has_norm
#   crc32 of everything above       u32
#
# All integers and reals little-endian.
# ---------------------------------------------------------------------------

MAGIC = b"DGNET\x00"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<6sI5I2d")


def dumps_model(params: NetworkParams) -> bytes:
    N, K1, K2 = params.sizes
    R = params.modality.n_modes
    order = params.flatten_order.encode()
    parts = [
        _HEAD.pack(MAGIC, FORMAT_VERSION, N, K1, K2, R, params.side, params.cap, params.b3),
        struct.pack("<I", len(order)), order,
        struct.pack("<B", params.norm is not None),
    ]
    for arr in (params.W1, params.b1, params.W2, params.b2, params.w3):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    parts.append(np.packbits(params.modality.matrix.astype(bool).ravel()).tobytes())
    if params.norm is not None:
        parts.append(np.asarray(params.norm.mean, dtype="<f8").tobytes())
        parts.append(np.asarray(params.norm.std, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads_model(data: bytes, expected_inputs=None, source="<bytes>") -> NetworkParams:
    if len(data) < _HEAD.size + 4:
        raise ModelFormatError(f"{source}: file too short to be a model ({len(data)} bytes)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    magic, version, N, K1, K2, R, side, cap, b3 = _HEAD.unpack_from(body, 0)
    if magic != MAGIC:
        raise ModelFormatError(f"{source}: not a model file (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{source}: unsupported format version {version}, expected {FORMAT_VERSION}")
    if zlib.crc32(body) != crc:
        raise ModelFormatError(f"{source}: checksum mismatch; file is truncated or corrupt")
    if expected_inputs is not None and N != expected_inputs:
        raise ModelFormatError(f"{source}: model expects {N} inputs but the patch size gives {expected_inputs}")
    pos = _HEAD.size
    (n_order,) = struct.unpack_from("<I", body, pos)
    pos += 4
    order = body[pos:pos + n_order].decode()
    pos += n_order
    (has_norm,) = struct.unpack_from("<B", body, pos)
    pos += 1

    def take(count):
        nonlocal pos
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += 8 * count
        return arr

    try:
        W1 = take(N * K1).reshape(N, K1)
        b1 = take(K1)
        W2 = take(K1 * K2).reshape(K1, K2)
        b2 = take(K2)
        w3 = take(K2)
        n_bytes = (R * N + 7) // 8
        bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8, count=n_bytes, offset=pos))[: R * N]
        pos += n_bytes
        modality = ModalityMask.from_matrix(bits.reshape(R, N))
        norm = NormStats(tuple(take(R)), tuple(take(R))) if has_norm else None
    except ValueError as exc:
        raise ModelFormatError(f"{source}: inconsistent model body ({exc})") from None
    if pos != len(body):
        raise ModelFormatError(f"{source}: {len(body) - pos} unexpected trailing bytes")
    return NetworkParams(W1, b1, W2, b2, w3, b3, modality, norm, side, cap, order)


def save_model(params: NetworkParams, path) -> None:
    Path(path).write_bytes(dumps_model(params))


def load_model(path, expected_inputs=None) -> NetworkParams:
    path = Path(path)
    return loads_model(path.read_bytes(), expected_inputs, str(path))
