"""Momentum-contrastive tuning of the query encoder.

Two encoders start from identical weights. Per step, a batch of feature
pairs goes through the query side (with gradient) and the key side (without);
the InfoNCE loss contrasts each query code against its own key code plus a
FIFO queue of previous key codes. Only the query encoder takes the SGD step;
the key encoder follows as an exponential moving average.

Concatenated codes are L2-normalized on the loss side only (raw sigmoid
outputs at temperature 0.2 would overflow the softmax) and the queue stores
normalized codes. Indexing and querying keep using un-normalized codes.

All loss/gradient math runs in float64; encoder weights stay float32.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from .errors import NumericError


@dataclass(frozen=True)
class TrainConfig:
    queue_len: int
    batch_size: int
    iterations: int
    temperature: float = 0.2
    momentum: float = 0.999
    learning_rate: float = 0.001
    pair_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.queue_len < 1:
            raise ValueError("queue_len must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


class CodeQueue:
    """FIFO queue of L2-normalized concatenated codes."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._entries: deque[np.ndarray] = deque()

    def __len__(self) -> int:
        return len(self._entries)

    def push(self, code: np.ndarray) -> None:
        code = np.asarray(code, dtype=np.float64)
        self._entries.append(code / np.linalg.norm(code))
        while len(self._entries) > self.capacity:
            self._entries.popleft()

    def push_batch(self, codes: np.ndarray) -> None:
        for row in np.atleast_2d(codes):
            self.push(row)

    def as_matrix(self) -> np.ndarray:
        """(size, code_dim) float64 matrix of queue entries, oldest first."""
        if not self._entries:
            return np.empty((0, 0))
        return np.stack(self._entries)


class PairSampler:
    """Emits (query, key) feature pairs.

    With start frames available, the key is the feature whose start frame is
    nearest a random temporal offset of the query's (offset uniform over
    `offset_range`, clamped at the sequence ends). Otherwise the key is the
    query plus Gaussian jitter.
    """

    def __init__(self, features, start_frames=None, jitter: float = 0.0,
                 offset_range: tuple[int, int] = (-150, 150)):
        self.features = np.asarray(features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ValueError("features must be a non-empty (count, dim) array")
        self.jitter = float(jitter)
        self.offset_range = offset_range
        if start_frames is not None:
            start_frames = np.asarray(start_frames, dtype=np.int64)
            if start_frames.shape[0] != self.features.shape[0]:
                raise ValueError("start_frames length must match features")
            self._starts = start_frames
            self._order = np.argsort(start_frames, kind="stable")
            self._sorted_starts = start_frames[self._order]
        else:
            self._starts = None

    @property
    def timestamped(self) -> bool:
        return self._starts is not None

    def sample(self, rng: np.random.Generator):
        xq, xk = self.sample_batch(rng, 1)
        return xq[0], xk[0]

    def sample_batch(self, rng: np.random.Generator, n: int):
        idx = rng.integers(0, self.features.shape[0], size=n)
        xq = self.features[idx]
        if self._starts is None:
            return xq, xq + self.jitter * rng.standard_normal(xq.shape)
        lo, hi = self.offset_range
        offsets = rng.integers(lo, hi + 1, size=n)
        targets = self._starts[idx] + offsets
        pos = np.searchsorted(self._sorted_starts, targets)
        left = np.clip(pos - 1, 0, self._sorted_starts.size - 1)
        right = np.clip(pos, 0, self._sorted_starts.size - 1)
        near = np.where(
            np.abs(targets - self._sorted_starts[left])
            <= np.abs(self._sorted_starts[right] - targets),
            left,
            right,
        )
        return xq, self.features[self._order[near]]


def normalize_code(code: np.ndarray) -> np.ndarray:
    code = np.asarray(code, dtype=np.float64)
    n = np.linalg.norm(code, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise NumericError("cannot normalize a zero code")
    return code / n


def _logsumexp(x: np.ndarray, axis=-1) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def infonce(z_q, z_pos, queue: CodeQueue, temperature: float) -> float:
    """Contrastive loss of one query code against its positive and the queue.

    Codes are L2-normalized here before the dot products; the denominator has
    (queue size + 1) terms.
    """
    zq = normalize_code(z_q)
    zp = normalize_code(z_pos)
    if not (np.isfinite(zq).all() and np.isfinite(zp).all()):
        raise NumericError("non-finite code passed to infonce")
    negs = queue.as_matrix()
    logits = [float(zq @ zp)]
    if len(queue):
        logits.extend(negs @ zq)
    logits = np.asarray(logits) / temperature
    return float(_logsumexp(logits) - logits[0])


def _batch_loss_and_grads(weights64, xq_norm, pos_norm, negs, temperature):
    """Mean InfoNCE over a batch plus its gradient w.r.t. the weights.

    weights64: (b, r, d) float64; xq_norm: (n, d) prepared inputs;
    pos_norm: (n, b*r) normalized positive codes; negs: (l, b*r) normalized
    queue entries. Returns (loss, grads (b, r, d) float64).
    """
    nb, (b, r, d) = xq_norm.shape[0], weights64.shape
    a = np.einsum("brd,nd->nbr", weights64, xq_norm)
    z = enc._sigmoid(a)
    u = z.reshape(nb, b * r)
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    uh = u / norms

    pos_logit = (uh * pos_norm).sum(axis=1) / temperature
    if negs.size:
        neg_logits = uh @ negs.T / temperature
        logits = np.concatenate([pos_logit[:, None], neg_logits], axis=1)
    else:
        logits = pos_logit[:, None]
    lse = _logsumexp(logits, axis=1)
    losses = lse - logits[:, 0]

    probs = np.exp(logits - lse[:, None])
    coeff = probs.copy()
    coeff[:, 0] -= 1.0
    g_uh = coeff[:, :1] * pos_norm
    if negs.size:
        g_uh = g_uh + coeff[:, 1:] @ negs
    g_uh /= temperature
    radial = (uh * g_uh).sum(axis=1, keepdims=True)
    g_u = (g_uh - radial * uh) / norms
    g_a = (g_u * u * (1.0 - u)).reshape(nb, b, r)
    grads = np.einsum("nbr,nd->brd", g_a, xq_norm) / nb

    loss = float(losses.mean())
    if not (np.isfinite(loss) and np.isfinite(grads).all()):
        raise NumericError("non-finite loss or gradient in contrastive step")
    return loss, grads


def backward(encoder: enc.HashEncoder, x_q, z_pos, queue: CodeQueue, temperature: float) -> np.ndarray:
    """Analytic gradient of infonce w.r.t. every layer's weights.

    Differentiates through linear layers, sigmoid, concatenation, L2
    normalization and the softmax; float64 throughout.
    """
    xn = enc.prepare_input(encoder, np.asarray(x_q, dtype=np.float64))
    pos = normalize_code(z_pos)[None, :]
    _, grads = _batch_loss_and_grads(
        encoder.weights.astype(np.float64), xn[None, :], pos, queue.as_matrix(), temperature
    )
    return grads


def sgd_step(encoder: enc.HashEncoder, grads: np.ndarray, learning_rate: float) -> enc.HashEncoder:
    """Plain SGD: W <- W - lr * grad, computed in float64, stored at float32."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != encoder.weights.shape:
        raise ValueError(f"gradient shape {grads.shape} != weights {encoder.weights.shape}")
    updated = encoder.weights.astype(np.float64) - learning_rate * grads
    return enc.HashEncoder(encoder.config, updated.astype(np.float32))


def momentum_update(theta_k: enc.HashEncoder, theta_q: enc.HashEncoder, momentum: float) -> enc.HashEncoder:
    """Key-encoder EMA: w_k <- m * w_k + (1 - m) * w_q, element-wise."""
    if theta_k.weights.shape != theta_q.weights.shape:
        raise ValueError("encoder shapes differ")
    mixed = momentum * theta_k.weights.astype(np.float64) + (1.0 - momentum) * theta_q.weights.astype(np.float64)
    return enc.HashEncoder(theta_k.config, mixed.astype(np.float32))


@dataclass
class TrainResult:
    query_encoder: enc.HashEncoder
    key_encoder: enc.HashEncoder
    losses: list[float]
    q_trajectory: list[np.ndarray] | None = None


def train(
    sampler: PairSampler,
    config: TrainConfig,
    encoder_config: enc.EncoderConfig,
    record_trajectory: bool = False,
) -> TrainResult:
    """Run the momentum-contrastive loop and return the tuned query encoder.

    Per step: sample pairs, encode through both sides, mean InfoNCE against
    the current queue, SGD step on the query side, momentum update of the key
    side, then enqueue the batch's key codes (FIFO eviction past queue_len).
    Fully deterministic for a fixed seed.
    """
    rng = np.random.default_rng(config.seed)
    e_q = enc.init_random(encoder_config)
    e_k = enc.HashEncoder(encoder_config, e_q.weights.copy())
    queue = CodeQueue(config.queue_len)
    losses: list[float] = []
    trajectory: list[np.ndarray] | None = [] if record_trajectory else None

    for _ in range(config.iterations):
        xq, xk = sampler.sample_batch(rng, config.batch_size)
        xq_norm = enc.prepare_input(e_q, xq)
        key_codes = enc.encode_batch(e_k, xk).reshape(config.batch_size, -1)
        pos_norm = normalize_code(key_codes)
        loss, grads = _batch_loss_and_grads(
            e_q.weights.astype(np.float64), xq_norm, pos_norm,
            queue.as_matrix(), config.temperature,
        )
        e_q = sgd_step(e_q, grads, config.learning_rate)
        e_k = momentum_update(e_k, e_q, config.momentum)
        queue.push_batch(pos_norm)
        losses.append(loss)
        if trajectory is not None:
            trajectory.append(e_q.weights.copy())

    return TrainResult(e_q, e_k, losses, trajectory)


def positive_pair_similarity(
    encoder: enc.HashEncoder, sampler: PairSampler, n_pairs: int, seed: int = 0
) -> float:
    """Mean cosine similarity of normalized concat codes over sampled pairs."""
    rng = np.random.default_rng(seed)
    xq, xk = sampler.sample_batch(rng, n_pairs)
    zq = normalize_code(enc.encode_batch(encoder, xq).reshape(n_pairs, -1))
    zk = normalize_code(enc.encode_batch(encoder, xk).reshape(n_pairs, -1))
    return float((zq * zk).sum(axis=1).mean())
