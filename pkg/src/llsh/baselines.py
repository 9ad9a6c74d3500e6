"""Exact-KNN and K-means anomaly scorers, plus the multiplication-count cost model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from .index import HashIndex, MeanBucket

TERA = 10**12
GIGA = 10**9


@dataclass(frozen=True)
class CostInputs:
    """Parameters of the analytic cost model, all exact non-negative integers.

    compared_codes is the number of stored training codes met across query
    bucket hits; averaged_codes the number folded into bucket means while
    building a light index.
    """

    feature_dim: int = 0
    train_count: int = 0
    test_count: int = 0
    num_clusters: int = 0
    max_iters: int = 0
    code_len: int = 0
    num_tables: int = 0
    compared_codes: int = 0
    averaged_codes: int = 0

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"{name} must be non-negative")


def _require(inputs: CostInputs, method: str, *fields: str) -> None:
    missing = [f for f in fields if getattr(inputs, f) == 0]
    if missing:
        raise ValueError(f"cost({method!r}) requires non-zero {', '.join(missing)}")


def cost(method: str, inputs: CostInputs) -> int:
    """Exact multiplication count of the query phase (plus fitting, for k-means)."""
    d, n_train, n_test = inputs.feature_dim, inputs.train_count, inputs.test_count
    if method == "knn":
        _require(inputs, method, "feature_dim", "train_count", "test_count")
        return d * n_train * n_test
    if method == "kmeans":
        _require(inputs, method, "feature_dim", "train_count", "test_count",
                 "num_clusters", "max_iters")
        k, t = inputs.num_clusters, inputs.max_iters
        return d * k * n_train * t + d * k * n_test
    if method in ("lsh", "llsh"):
        _require(inputs, method, "feature_dim", "train_count", "test_count",
                 "code_len", "num_tables")
        r, b = inputs.code_len, inputs.num_tables
        return d * r * b * (n_test + n_train) + r * inputs.compared_codes
    if method == "light":
        _require(inputs, method, "feature_dim", "train_count", "test_count",
                 "code_len", "num_tables")
        r, b = inputs.code_len, inputs.num_tables
        return (
            d * r * b * (n_test + n_train)
            + 2 * r * inputs.averaged_codes
            + r * inputs.compared_codes
        )
    raise ValueError(f"unknown cost method {method!r}")


def format_magnitude(count: int, unit: str | None = None) -> str:
    """One-decimal human-readable multiplication count ("821.5 Tera", "5.5 Giga")."""
    if unit is None:
        unit = "Tera" if abs(count) >= TERA else "Giga" if abs(count) >= GIGA else "Mega"
    scale = {"Tera": TERA, "Giga": GIGA, "Mega": 10**6}[unit]
    return f"{count / scale:.1f} {unit}"


# Parameter columns of the reference comparison on the large benchmark:
# d=9216, N=792855, M=112422; the n/m counts are dataset-measured inputs.
PAPER_TABLE = {
    "knn": CostInputs(feature_dim=9216, train_count=792855, test_count=112422),
    "kmeans_1024": CostInputs(feature_dim=9216, train_count=792855, test_count=112422,
                              num_clusters=1024, max_iters=300),
    "kmeans_32": CostInputs(feature_dim=9216, train_count=792855, test_count=112422,
                            num_clusters=32, max_iters=300),
    "lsh": CostInputs(feature_dim=9216, train_count=792855, test_count=112422,
                      code_len=32, num_tables=8, compared_codes=38150830),
    "llsh": CostInputs(feature_dim=9216, train_count=792855, test_count=112422,
                       code_len=32, num_tables=8, compared_codes=209872075),
    "light": CostInputs(feature_dim=9216, train_count=792855, test_count=112422,
                        code_len=32, num_tables=8, compared_codes=490433,
                        averaged_codes=5650569),
}


def paper_table_lines() -> list[str]:
    """Reference cost comparison, formatted the way the source table prints it."""
    lsh = cost("lsh", PAPER_TABLE["lsh"])
    llsh_delta = cost("llsh", PAPER_TABLE["llsh"]) - lsh
    light_delta = cost("light", PAPER_TABLE["light"]) - lsh
    return [
        f"KNN (K=1024): {format_magnitude(cost('knn', PAPER_TABLE['knn']), 'Tera')}",
        f"K-means (K=1024, t=300): {format_magnitude(cost('kmeans', PAPER_TABLE['kmeans_1024']), 'Tera')}",
        f"K-means (K=32, t=300): {format_magnitude(cost('kmeans', PAPER_TABLE['kmeans_32']), 'Tera')}",
        f"LSH (b=8, r=32): {format_magnitude(cost('lsh', PAPER_TABLE['lsh']), 'Tera')}",
        f"LLSH: {format_magnitude(llsh_delta, 'Giga')} more than LSH",
        f"light-LLSH: {format_magnitude(-light_delta, 'Giga')} less than LSH",
    ]


def _pairwise_distances(xs: np.ndarray, ys: np.ndarray, metric: str) -> np.ndarray:
    """(len(ys), len(xs)) distance matrix, float64."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    if metric == "euclidean":
        sq = (ys**2).sum(1)[:, None] + (xs**2).sum(1)[None, :] - 2.0 * ys @ xs.T
        return np.sqrt(np.maximum(sq, 0.0))
    if metric == "cosine":
        sims = ys @ xs.T / (
            np.linalg.norm(ys, axis=1)[:, None] * np.linalg.norm(xs, axis=1)[None, :]
        )
        return 1.0 - sims
    raise ValueError(f"unknown metric {metric!r}")


def knn_score(train: np.ndarray, y: np.ndarray, k: int, metric: str = "euclidean") -> float:
    """Mean distance to the k nearest training features, by exhaustive scan."""
    train = np.asarray(train)
    if not 1 <= k <= train.shape[0]:
        raise ValueError(f"k={k} outside [1, {train.shape[0]}]")
    dists = _pairwise_distances(train, y, metric)[0]
    return float(np.partition(dists, k - 1)[:k].mean())


def knn_score_batch(train, ys, k, metric="euclidean") -> np.ndarray:
    train = np.asarray(train)
    if not 1 <= k <= train.shape[0]:
        raise ValueError(f"k={k} outside [1, {train.shape[0]}]")
    dists = _pairwise_distances(train, ys, metric)
    return np.partition(dists, k - 1, axis=1)[:, :k].mean(axis=1)


def kmeans_fit(train: np.ndarray, k: int, max_iters: int, seed: int = 0) -> np.ndarray:
    """Lloyd's iterations from seeded random-point init; empty clusters re-seed
    from the point farthest from its assigned center."""
    train = np.asarray(train, dtype=np.float64)
    n = train.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    rng = np.random.default_rng(seed)
    centers = train[rng.choice(n, size=k, replace=False)].copy()
    assign = None
    for _ in range(max_iters):
        dists = _pairwise_distances(centers, train, "euclidean")
        new_assign = dists.argmin(axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        nearest = dists[np.arange(n), assign]
        used = set()
        for j in range(k):
            members = train[assign == j]
            if members.shape[0] > 0:
                centers[j] = members.mean(axis=0)
            else:
                order = np.argsort(nearest)[::-1]
                pick = next(int(i) for i in order if int(i) not in used)
                used.add(pick)
                centers[j] = train[pick]
    return centers


def kmeans_score(centers: np.ndarray, y: np.ndarray, metric: str = "euclidean") -> float:
    """Distance to the nearest cluster center."""
    centers = np.asarray(centers)
    if centers.shape[0] == 0:
        raise ValueError("no centers")
    return float(_pairwise_distances(centers, y, metric)[0].min())


def kmeans_score_batch(centers, ys, metric="euclidean") -> np.ndarray:
    return _pairwise_distances(np.asarray(centers), ys, metric).min(axis=1)


def measure_n_m(index: HashIndex, encoder: enc.HashEncoder, queries: np.ndarray) -> tuple[int, int]:
    """Measured cost-model counters for a query workload.

    n: stored codes met across bucket hits, summed over tables and queries
    (a light-variant hit counts 1, its mean vector). m: codes folded into
    means while building a light index, i.e. total_count per table.
    """
    queries = np.atleast_2d(np.asarray(queries))
    codes = enc.encode_batch(encoder, queries)
    n = 0
    for i in range(codes.shape[0]):
        for j in range(index.num_tables):
            key = enc.pack_key(enc.binarize(codes[i, j]))
            bucket = index.tables[j].get(key)
            if bucket is None:
                continue
            n += 1 if isinstance(bucket, MeanBucket) else bucket.shape[0]
    m = index.total_count * index.num_tables if index.variant == "light" else 0
    return n, m
