"""Query stage: bucket distances, min-over-tables scores, frame assembly.

A query feature is encoded once; each table's key selects a bucket and the
score is the minimum over tables of the average distance between the query
code and the bucket's stored codes (light variant: distance to the bucket
mean). A key that misses every table scores the sentinel, by default
sqrt(code_len), the diameter of the unit code cube, so misses always rank
above hits.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from .index import HashIndex, MeanBucket

_METRICS = ("euclidean", "cosine")


@dataclass(frozen=True)
class QueryConfig:
    sentinel: float | None = None  # None -> sqrt(code_len) of the queried index
    distance: str = "euclidean"
    smooth_sigma: float = 10.0
    per_video_minmax: bool = False

    def __post_init__(self):
        if self.sentinel is not None and not self.sentinel > 0:
            raise ValueError("sentinel must be positive")
        if self.distance not in _METRICS:
            raise ValueError(f"distance must be one of {_METRICS}")
        if self.smooth_sigma < 0:
            raise ValueError("smooth_sigma must be >= 0")


@dataclass
class ScoreSeries:
    video_id: str
    scores: np.ndarray  # one score per frame


def resolve_sentinel(config: QueryConfig, code_len: int) -> float:
    return math.sqrt(code_len) if config.sentinel is None else config.sentinel


def _distances(code: np.ndarray, stored: np.ndarray, metric: str) -> np.ndarray:
    code = code.astype(np.float64)
    stored = stored.astype(np.float64)
    if metric == "euclidean":
        return np.sqrt(((stored - code) ** 2).sum(axis=-1))
    sims = stored @ code / (np.linalg.norm(stored, axis=-1) * np.linalg.norm(code))
    return 1.0 - sims


def bucket_distance(
    index: HashIndex, table_idx: int, code: np.ndarray, config: QueryConfig | None = None
) -> float:
    """Average distance from `code` to its bucket in one table; sentinel on a miss."""
    config = config or QueryConfig()
    code = np.asarray(code, dtype=np.float32)
    if code.shape != (index.code_len,):
        raise ValueError(f"code length {code.shape} != index code_len {index.code_len}")
    key = enc.pack_key(enc.binarize(code))
    bucket = index.tables[table_idx].get(key)
    if bucket is None:
        return resolve_sentinel(config, index.code_len)
    if isinstance(bucket, MeanBucket):
        return float(_distances(code, bucket.mean, config.distance))
    return float(_distances(code, bucket, config.distance).mean())


def anomaly_score(
    index: HashIndex,
    encoder: enc.HashEncoder,
    y: np.ndarray,
    config: QueryConfig | None = None,
) -> float:
    """Minimum over tables of the bucket-average distance for query `y`."""
    config = config or QueryConfig()
    codes, _ = enc.encode(encoder, y)
    return min(
        bucket_distance(index, j, codes[j], config) for j in range(index.num_tables)
    )


def score_features(
    index: HashIndex,
    encoder: enc.HashEncoder,
    ys: np.ndarray,
    config: QueryConfig | None = None,
    workers: int = 1,
) -> np.ndarray:
    """Anomaly scores for a batch of query features."""
    config = config or QueryConfig()
    ys = np.atleast_2d(np.asarray(ys))
    n = ys.shape[0]
    workers = max(1, min(workers, n))
    bounds = np.linspace(0, n, workers + 1).astype(int)

    def run_chunk(chunk):
        codes = enc.encode_batch(encoder, chunk)
        out = np.empty(chunk.shape[0])
        for i in range(chunk.shape[0]):
            out[i] = min(
                bucket_distance(index, j, codes[i, j], config)
                for j in range(index.num_tables)
            )
        return out

    if workers == 1:
        return run_chunk(ys)
    chunks = [ys[bounds[i] : bounds[i + 1]] for i in range(workers)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(run_chunk, chunks)))


def assemble_frame_scores(
    feature_scores: np.ndarray, spans: np.ndarray, frame_count: int
) -> np.ndarray:
    """Per-frame raw scores: mean over covering features, nearest-covered fill elsewhere.

    `spans` rows are (start_frame, length). Ties in the nearest-covered fill
    resolve to the earlier frame.
    """
    feature_scores = np.asarray(feature_scores, dtype=np.float64)
    spans = np.asarray(spans, dtype=np.int64)
    sums = np.zeros(frame_count)
    counts = np.zeros(frame_count, dtype=np.int64)
    for score, (start, length) in zip(feature_scores, spans):
        if length < 1 or start < 0 or start + length > frame_count:
            raise ValueError(f"feature span ({start}, {length}) out of range for {frame_count} frames")
        sums[start : start + length] += score
        counts[start : start + length] += 1
    covered = counts > 0
    if not covered.any():
        raise ValueError("no frame of the video is covered by any feature")
    raw = np.zeros(frame_count)
    raw[covered] = sums[covered] / counts[covered]
    if covered.all():
        return raw
    idx = np.flatnonzero(covered)
    frames = np.arange(frame_count)
    pos = np.searchsorted(idx, frames)
    left = idx[np.clip(pos - 1, 0, idx.size - 1)]
    right = idx[np.clip(pos, 0, idx.size - 1)]
    nearest = np.where(frames - left <= right - frames, left, right)
    return raw[nearest]


def smooth(series: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian smoothing: kernel radius ceil(3*sigma), normalized, reflect padding."""
    series = np.asarray(series, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0 or series.size == 0:
        return series.copy()
    radius = math.ceil(3 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()
    padded = np.pad(series, radius, mode="symmetric")
    return np.convolve(padded, kernel, mode="valid")


def minmax_normalize(series: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; a constant series maps to all zeros."""
    series = np.asarray(series, dtype=np.float64)
    lo, hi = series.min(), series.max()
    if hi == lo:
        return np.zeros_like(series)
    return (series - lo) / (hi - lo)


def score_video(
    index: HashIndex,
    encoder: enc.HashEncoder,
    features: np.ndarray,
    spans: np.ndarray,
    frame_count: int,
    config: QueryConfig | None = None,
    video_id: str = "",
    workers: int = 1,
) -> ScoreSeries:
    """Full per-video pipeline: feature scores -> frame assembly -> smoothing -> optional min-max."""
    config = config or QueryConfig()
    per_feature = score_features(index, encoder, features, config, workers=workers)
    frames = assemble_frame_scores(per_feature, spans, frame_count)
    frames = smooth(frames, config.smooth_sigma)
    if config.per_video_minmax:
        frames = minmax_normalize(frames)
    return ScoreSeries(video_id, frames)
