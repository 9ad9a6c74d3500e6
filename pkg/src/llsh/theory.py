"""Closed-form collision mathematics for random-hyperplane hashing.

For two vectors at angle a, a single random-hyperplane bit agrees with
probability (pi - a)/pi; an r-bit key matches with that probability to the
r-th power; with b independent tables, at least one key matches with
probability 1 - (1 - ((pi - a)/pi)^r)^b. The similarity s = (pi - a)/pi
puts all of these on [0, 1], and the steepest rise of the multi-table curve
sits near the design threshold s_hat = (1/b)^(1/r).

`monte_carlo_collision` validates the formulas against the real encoder
pipeline at random initialization.
"""

from __future__ import annotations

import math

import numpy as np

from . import encoder as enc

REFERENCE_CONFIGS = ((1, 1), (16, 1), (1, 8), (16, 8))


def angle(y: np.ndarray, x: np.ndarray) -> float:
    """Angle between two vectors in [0, pi]; cosine clamped before arccos."""
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    ny, nx = np.linalg.norm(y), np.linalg.norm(x)
    if ny == 0.0 or nx == 0.0:
        raise ValueError("angle undefined for zero vectors")
    c = float(np.dot(y, x) / (ny * nx))
    return math.acos(min(1.0, max(-1.0, c)))


def _check_angle(alpha: float) -> None:
    if not 0.0 <= alpha <= math.pi:
        raise ValueError(f"angle {alpha} outside [0, pi]")


def per_bit_prob(alpha: float) -> float:
    """Probability that one hash bit agrees for vectors at angle alpha."""
    _check_angle(alpha)
    return (math.pi - alpha) / math.pi


def table_prob(alpha: float, code_len: int) -> float:
    """Probability that one full r-bit key matches."""
    return per_bit_prob(alpha) ** code_len


def multi_table_prob(alpha: float, code_len: int, num_tables: int) -> float:
    """Probability that at least one of b independent tables matches."""
    return 1.0 - (1.0 - table_prob(alpha, code_len)) ** num_tables


def multi_table_prob_s(s, code_len: int, num_tables: int):
    """Same curve parameterized by similarity s = (pi - alpha)/pi; accepts arrays."""
    s = np.asarray(s, dtype=np.float64)
    return 1.0 - (1.0 - s**code_len) ** num_tables


def similarity_threshold(code_len: int, num_tables: int) -> float:
    """Approximate similarity at the curve's steepest rise: (1/b)^(1/r)."""
    if code_len < 1 or num_tables < 1:
        raise ValueError("code_len and num_tables must be >= 1")
    return (1.0 / num_tables) ** (1.0 / code_len)


def curve_points(code_len: int, num_tables: int, num_points: int = 101) -> np.ndarray:
    """(s, P) pairs on a uniform similarity grid over [0, 1]."""
    if num_points < 2:
        raise ValueError("num_points must be >= 2")
    s = np.linspace(0.0, 1.0, num_points)
    return np.column_stack([s, multi_table_prob_s(s, code_len, num_tables)])


def angled_pair(rng: np.random.Generator, dim: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Random unit vector pair with exact angle alpha, via orthonormal completion."""
    if dim < 2:
        raise ValueError("need dim >= 2 to realize an arbitrary angle")
    _check_angle(alpha)
    y = rng.standard_normal(dim)
    y /= np.linalg.norm(y)
    while True:
        v = rng.standard_normal(dim)
        v -= np.dot(v, y) * y
        n = np.linalg.norm(v)
        if n > 1e-12:
            break
    perp = v / n
    x = math.cos(alpha) * y + math.sin(alpha) * perp
    return y, x


def monte_carlo_collision(
    alpha: float,
    code_len: int,
    num_tables: int,
    dim: int,
    trials: int,
    seed: int = 0,
    chunk: int = 1024,
) -> float:
    """Empirical collision probability over fresh random hash layers.

    Each trial draws a new pair at exact angle `alpha` and a new set of
    Gaussian unit-norm projection rows (the distribution `init_random`
    uses), runs both vectors through the encoder's sigmoid + binarize path,
    and counts a hit when any table's keys agree. Trials are processed in
    chunks for speed; every trial still gets its own independent weights.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    _check_angle(alpha)
    rng = np.random.default_rng(seed)
    rows = code_len * num_tables
    hits = 0
    done = 0
    while done < trials:
        t = min(chunk, trials - done)
        # per-trial Gaussian rows; normalization is folded into the
        # pre-activation divide (sign((w/|w|) . x) == sign((w . x)/|w|)),
        # which keeps the 1e5-trial budget inside the runtime cap
        raw = rng.standard_normal((t, rows, dim), dtype=np.float32)
        norms = np.sqrt(np.einsum("tkd,tkd->tk", raw, raw))
        ys = np.empty((t, dim), dtype=np.float32)
        xs = np.empty((t, dim), dtype=np.float32)
        for i in range(t):
            ys[i], xs[i] = angled_pair(rng, dim, alpha)
        key_y = enc.binarize(enc._sigmoid(np.einsum("tkd,td->tk", raw, ys) / norms))
        key_x = enc.binarize(enc._sigmoid(np.einsum("tkd,td->tk", raw, xs) / norms))
        same = (key_y == key_x).reshape(t, num_tables, code_len)
        hit = same.all(axis=2).any(axis=1)
        hits += int(hit.sum())
        done += t
    return hits / trials
