"""Parallel hash tables over training features.

Each of the encoder's layers feeds one table mapping a packed binary key to
the bucket of codes that produced it. The full variant keeps every code per
bucket; the light variant keeps only the running mean and count. Build can
partition the input across worker threads; partial tables merge in chunk
order so the result does not depend on the worker count.
"""

from __future__ import annotations

import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple

import numpy as np

from . import encoder as enc
from .errors import DataFormatError, FingerprintMismatch

_MAGIC = b"LLSHIDX1"
_HEADER = struct.Struct("<8sBIIQQ")
_VARIANT_CODES = {"full": 0, "light": 1}


class MeanBucket(NamedTuple):
    mean: np.ndarray  # (code_len,) float32
    count: int


class HashIndex:
    """b tables of key -> bucket. Immutable once built; safe to query concurrently.

    Full tables map packed keys to (count, code_len) float32 arrays; light
    tables map them to MeanBucket.
    """

    def __init__(self, variant, code_len, num_tables, total_count, encoder_fingerprint, tables):
        if variant not in _VARIANT_CODES:
            raise ValueError(f"unknown variant {variant!r}")
        if len(tables) != num_tables:
            raise ValueError("table list length does not match num_tables")
        self.variant = variant
        self.code_len = code_len
        self.num_tables = num_tables
        self.total_count = total_count
        self.encoder_fingerprint = encoder_fingerprint
        self.tables = tables

    @property
    def key_bytes(self) -> int:
        return (self.code_len + 7) // 8


def _keys_for_layer(codes_layer: np.ndarray) -> np.ndarray:
    # (n, code_len) codes -> (n, key_bytes) packed keys
    return np.packbits(enc.binarize(codes_layer).astype(np.uint8), axis=1, bitorder="little")


def _group_chunk(codes: np.ndarray, num_tables: int):
    """Per-table grouping of one chunk's codes: key -> list of row indices."""
    grouped = []
    for j in range(num_tables):
        packed = _keys_for_layer(codes[:, j, :])
        table: dict[bytes, list[int]] = {}
        for i in range(codes.shape[0]):
            table.setdefault(packed[i].tobytes(), []).append(i)
        grouped.append(table)
    return grouped


def build_index(
    encoder: enc.HashEncoder,
    features: np.ndarray,
    variant: str = "full",
    workers: int = 1,
) -> HashIndex:
    """Encode every feature and file its per-layer codes under their binary keys."""
    if variant not in _VARIANT_CODES:
        raise ValueError(f"unknown variant {variant!r}")
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("features must be a non-empty (count, feature_dim) array")
    n = features.shape[0]
    b, r = encoder.num_tables, encoder.code_len

    workers = max(1, min(workers, n))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    chunks = [features[bounds[i] : bounds[i + 1]] for i in range(workers)]

    def run_chunk(chunk):
        codes = enc.encode_batch(encoder, chunk)
        return codes, _group_chunk(codes, b)

    if workers == 1:
        parts = [run_chunk(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_chunk, chunks))

    tables: list[dict] = [{} for _ in range(b)]
    if variant == "full":
        # buckets keep their codes in canonical (lexicographic) order, so
        # results cannot depend on insertion order or worker count
        for j in range(b):
            pieces: dict[bytes, list[np.ndarray]] = {}
            for codes, grouped in parts:
                for key, rows in grouped[j].items():
                    pieces.setdefault(key, []).append(codes[rows, j, :])
            for key, arrs in pieces.items():
                merged = np.concatenate(arrs, axis=0)
                merged = merged[np.lexsort(merged.T[::-1])]
                tables[j][key] = np.ascontiguousarray(merged)
    else:
        for j in range(b):
            sums: dict[bytes, np.ndarray] = {}
            counts: dict[bytes, int] = {}
            for codes, grouped in parts:
                for key, rows in grouped[j].items():
                    part = codes[rows, j, :].astype(np.float64).sum(axis=0)
                    if key in sums:
                        sums[key] += part
                        counts[key] += len(rows)
                    else:
                        sums[key] = part
                        counts[key] = len(rows)
            for key, total in sums.items():
                c = counts[key]
                tables[j][key] = MeanBucket((total / c).astype(np.float32), c)

    return HashIndex(variant, r, b, n, enc.fingerprint(encoder), tables)


def lighten(index: HashIndex) -> HashIndex:
    """Collapse full buckets to per-bucket mean + count."""
    if index.variant != "full":
        raise ValueError("lighten expects a full-variant index")
    tables = []
    for table in index.tables:
        light = {}
        for key, codes in table.items():
            mean = codes.astype(np.float64).mean(axis=0).astype(np.float32)
            light[key] = MeanBucket(mean, codes.shape[0])
        tables.append(light)
    return HashIndex(
        "light", index.code_len, index.num_tables, index.total_count,
        index.encoder_fingerprint, tables,
    )


def bucket_count(index: HashIndex, table_idx: int, key: bytes) -> int:
    bucket = index.tables[table_idx].get(key)
    if bucket is None:
        return 0
    return bucket.count if index.variant == "light" else bucket.shape[0]


def index_stats(index: HashIndex) -> dict:
    per_table = []
    for table in index.tables:
        if index.variant == "light":
            sizes = np.array([b.count for b in table.values()], dtype=np.int64)
        else:
            sizes = np.array([b.shape[0] for b in table.values()], dtype=np.int64)
        per_table.append(
            {
                "buckets": len(table),
                "min_size": int(sizes.min()),
                "max_size": int(sizes.max()),
                "mean_size": float(sizes.mean()),
                "stored": int(sizes.sum()),
            }
        )
    return {
        "variant": index.variant,
        "code_len": index.code_len,
        "num_tables": index.num_tables,
        "total_count": index.total_count,
        "tables": per_table,
    }


def index_to_bytes(index: HashIndex) -> bytes:
    out = [
        _HEADER.pack(
            _MAGIC,
            _VARIANT_CODES[index.variant],
            index.code_len,
            index.num_tables,
            index.total_count,
            index.encoder_fingerprint,
        )
    ]
    for table in index.tables:
        out.append(struct.pack("<Q", len(table)))
        # canonical bucket order: file bytes depend only on index content
        for key, bucket in sorted(table.items()):
            if index.variant == "full":
                cnt, payload = bucket.shape[0], bucket
            else:
                cnt, payload = bucket.count, bucket.mean
            out.append(key)
            out.append(struct.pack("<Q", cnt))
            out.append(payload.astype("<f4", copy=False).tobytes(order="C"))
    return b"".join(out)


def index_from_bytes(data: bytes) -> HashIndex:
    if len(data) < _HEADER.size:
        raise DataFormatError(f"index data truncated: {len(data)} bytes < header size {_HEADER.size}")
    magic, vcode, r, b, n, fp = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise DataFormatError(f"bad index magic {magic!r}, expected {_MAGIC!r}")
    variants = {v: k for k, v in _VARIANT_CODES.items()}
    if vcode not in variants:
        raise DataFormatError(f"unknown index variant code {vcode}")
    variant = variants[vcode]
    key_bytes = (r + 7) // 8
    off = _HEADER.size
    tables = []

    def take(count, what):
        nonlocal off
        if off + count > len(data):
            raise DataFormatError(
                f"index truncated reading {what}: need byte {off + count}, file has {len(data)}"
            )
        piece = data[off : off + count]
        off += count
        return piece

    for _ in range(b):
        (nbuckets,) = struct.unpack("<Q", take(8, "bucket count"))
        table = {}
        for _ in range(nbuckets):
            key = take(key_bytes, "bucket key")
            (cnt,) = struct.unpack("<Q", take(8, "bucket size"))
            if variant == "full":
                payload = take(4 * cnt * r, "bucket codes")
                table[key] = np.frombuffer(payload, dtype="<f4").reshape(cnt, r).copy()
            else:
                payload = take(4 * r, "bucket mean")
                table[key] = MeanBucket(np.frombuffer(payload, dtype="<f4").copy(), cnt)
        tables.append(table)
    if off != len(data):
        raise DataFormatError(f"index has {len(data) - off} trailing bytes after offset {off}")
    return HashIndex(variant, r, b, n, fp, tables)


def save_index(index: HashIndex, path) -> None:
    with open(path, "wb") as fh:
        fh.write(index_to_bytes(index))


def load_index(path, encoder: enc.HashEncoder | None = None, strict: bool = False) -> HashIndex:
    """Load an index; when `encoder` is given, verify it is the one the index was built with."""
    with open(path, "rb") as fh:
        index = index_from_bytes(fh.read())
    if encoder is not None and enc.fingerprint(encoder) != index.encoder_fingerprint:
        msg = f"{path}: index encoder fingerprint does not match the supplied encoder"
        if strict:
            raise FingerprintMismatch(msg)
        warnings.warn(msg)
    return index
