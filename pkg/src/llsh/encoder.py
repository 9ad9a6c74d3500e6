"""Hash encoder: parallel bias-free linear layers with sigmoid activation.

The encoder maps a d-dimensional feature vector through `num_tables`
independent projection layers, each producing a `code_len`-dimensional code
in (0,1). Thresholding a code at 0.5 yields the binary bucket key, which at
random initialization makes the whole pipeline an exact random-hyperplane
LSH (the sign of the pre-activation decides each bit).

Weights and codes are stored as float32; dot products accumulate in float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from hashlib import blake2b

import numpy as np

from .errors import DataFormatError

_MAGIC = b"LLSHENC1"
_HEADER = struct.Struct("<8sIIIBQ")


@dataclass(frozen=True)
class EncoderConfig:
    feature_dim: int
    code_len: int
    num_tables: int
    normalize_input: bool = True
    seed: int = 0

    def __post_init__(self):
        if min(self.feature_dim, self.code_len, self.num_tables) < 1:
            raise ValueError("feature_dim, code_len and num_tables must all be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


class HashEncoder:
    """Immutable-by-convention container for the layer weights.

    `weights` has shape (num_tables, code_len, feature_dim); row i of layer j
    is the i-th projection direction of that layer. There are no bias terms.
    """

    def __init__(self, config: EncoderConfig, weights: np.ndarray):
        weights = np.asarray(weights, dtype=np.float32)
        expected = (config.num_tables, config.code_len, config.feature_dim)
        if weights.shape != expected:
            raise ValueError(f"weights shape {weights.shape} != {expected}")
        self.config = config
        self.weights = np.ascontiguousarray(weights)

    @property
    def feature_dim(self) -> int:
        return self.config.feature_dim

    @property
    def code_len(self) -> int:
        return self.config.code_len

    @property
    def num_tables(self) -> int:
        return self.config.num_tables


def gaussian_unit_rows(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Draw i.i.d. standard-normal rows and rescale each last-axis row to unit norm.

    Shared by `init_random` and the Monte-Carlo collision estimator so both
    sample projection directions identically.
    """
    raw = rng.standard_normal(shape)
    norms = np.linalg.norm(raw, axis=-1, keepdims=True)
    return (raw / norms).astype(np.float32)


def init_random(config: EncoderConfig) -> HashEncoder:
    """Build an encoder with seeded Gaussian unit-norm projection rows."""
    rng = np.random.default_rng(config.seed)
    shape = (config.num_tables, config.code_len, config.feature_dim)
    return HashEncoder(config, gaussian_unit_rows(rng, shape))


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def prepare_input(encoder: HashEncoder, x: np.ndarray) -> np.ndarray:
    """Validate dimensionality and apply input normalization when configured.

    Returns a float64 vector (or batch of row vectors).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != encoder.feature_dim:
        raise ValueError(
            f"feature dimension {x.shape[-1]} != encoder feature_dim {encoder.feature_dim}"
        )
    if encoder.config.normalize_input:
        norms = np.linalg.norm(x, axis=-1, keepdims=True)
        if np.any(norms == 0.0):
            raise ValueError("zero feature vector cannot be normalized")
        x = x / norms
    return x


def forward_layer(encoder: HashEncoder, layer: int, x: np.ndarray) -> np.ndarray:
    """Code of `x` under a single layer (0-based index): sigmoid(W_layer @ x)."""
    if not 0 <= layer < encoder.num_tables:
        raise ValueError(f"layer {layer} out of range [0, {encoder.num_tables})")
    xn = prepare_input(encoder, x)
    a = encoder.weights[layer].astype(np.float64) @ xn
    return _sigmoid(a).astype(np.float32)


def encode(encoder: HashEncoder, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All per-layer codes plus their concatenation in layer order.

    Returns (codes, concat) with shapes (num_tables, code_len) and
    (num_tables * code_len,).
    """
    xn = prepare_input(encoder, x)
    a = encoder.weights.astype(np.float64) @ xn
    codes = _sigmoid(a).astype(np.float32)
    return codes, codes.reshape(-1)


def encode_batch(encoder: HashEncoder, xs: np.ndarray) -> np.ndarray:
    """Codes for a batch of features; shape (batch, num_tables, code_len)."""
    xn = prepare_input(encoder, np.atleast_2d(xs))
    a = np.einsum("trd,nd->ntr", encoder.weights.astype(np.float64), xn)
    return _sigmoid(a).astype(np.float32)


def binarize(code: np.ndarray) -> np.ndarray:
    """Binary key bits: bit i is 1 iff code entry i >= 0.5 (boundary maps to 1)."""
    return np.asarray(code) >= 0.5


def pack_key(bits: np.ndarray) -> bytes:
    """Pack bits canonically: bit i lands in byte i//8, little-endian within byte."""
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def unpack_key(key: bytes, code_len: int) -> np.ndarray:
    buf = np.frombuffer(key, dtype=np.uint8)
    return np.unpackbits(buf, count=code_len, bitorder="little").astype(bool)


def encoder_to_bytes(encoder: HashEncoder) -> bytes:
    cfg = encoder.config
    header = _HEADER.pack(
        _MAGIC,
        cfg.feature_dim,
        cfg.code_len,
        cfg.num_tables,
        int(cfg.normalize_input),
        cfg.seed,
    )
    return header + encoder.weights.astype("<f4", copy=False).tobytes(order="C")


def encoder_from_bytes(data: bytes) -> HashEncoder:
    if len(data) < _HEADER.size:
        raise DataFormatError(f"encoder data truncated: {len(data)} bytes < header size {_HEADER.size}")
    magic, d, r, b, norm, seed = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise DataFormatError(f"bad encoder magic {magic!r}, expected {_MAGIC!r}")
    expected = _HEADER.size + 4 * d * r * b
    if len(data) != expected:
        raise DataFormatError(
            f"encoder payload length mismatch: file has {len(data)} bytes, header implies {expected}"
        )
    config = EncoderConfig(d, r, b, bool(norm), seed)
    weights = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(b, r, d)
    return HashEncoder(config, weights.copy())


def save_encoder(encoder: HashEncoder, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encoder_to_bytes(encoder))


def load_encoder(path) -> HashEncoder:
    with open(path, "rb") as fh:
        return encoder_from_bytes(fh.read())


def fingerprint(encoder: HashEncoder) -> int:
    """Stable 64-bit digest of the serialized encoder, for index/encoder pairing."""
    digest = blake2b(encoder_to_bytes(encoder), digest_size=8).digest()
    return int.from_bytes(digest, "little")
