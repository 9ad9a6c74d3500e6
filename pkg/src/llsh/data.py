"""Feature/label/manifest file formats and the synthetic desk-scale corpus.

Feature files are little-endian binary: magic "LLSHFVS1", u32 feature dim,
u64 record count, u8 flags (bit 0: records carry a u64 start_frame and u32
span after the f32 payload). Manifests are JSON; labels are dense
frame_index,label CSV.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError

_MAGIC = b"LLSHFVS1"
_HEADER = struct.Struct("<8sIQB")
_FLAG_TIMESTAMPS = 1


@dataclass
class FeatureSet:
    vectors: np.ndarray  # (count, dim) float32
    start_frames: np.ndarray | None = None  # (count,) uint64
    spans: np.ndarray | None = None  # (count,) uint32

    @property
    def timestamped(self) -> bool:
        return self.start_frames is not None

    def span_array(self) -> np.ndarray:
        """(count, 2) int array of (start_frame, span) rows."""
        if not self.timestamped:
            raise ValueError("feature set carries no frame spans")
        return np.column_stack([self.start_frames, self.spans]).astype(np.int64)


def save_features(path, vectors, start_frames=None, spans=None) -> None:
    vectors = np.ascontiguousarray(np.asarray(vectors, dtype="<f4"))
    if vectors.ndim != 2:
        raise ValueError("vectors must be 2-D (count, dim)")
    count, dim = vectors.shape
    flagged = start_frames is not None
    if flagged != (spans is not None):
        raise ValueError("start_frames and spans must be given together")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, dim, count, _FLAG_TIMESTAMPS if flagged else 0))
        if not flagged:
            fh.write(vectors.tobytes(order="C"))
            return
        rec = np.zeros(count, dtype=_record_dtype(dim))
        rec["vec"] = vectors
        rec["start"] = np.asarray(start_frames, dtype="<u8")
        rec["span"] = np.asarray(spans, dtype="<u4")
        fh.write(rec.tobytes())


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("vec", "<f4", (dim,)), ("start", "<u8"), ("span", "<u4")])


def load_features(path) -> FeatureSet:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header, {len(data)} bytes < {_HEADER.size}")
    magic, dim, count, flags = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
    flagged = bool(flags & _FLAG_TIMESTAMPS)
    rec_size = 4 * dim + (12 if flagged else 0)
    expected = _HEADER.size + count * rec_size
    if len(data) != expected:
        raise DataFormatError(
            f"{path}: payload length mismatch at byte {min(len(data), expected)}: "
            f"file has {len(data)} bytes, header (dim={dim}, count={count}, "
            f"timestamps={flagged}) implies {expected}"
        )
    if not flagged:
        vectors = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(count, dim)
        return FeatureSet(vectors.copy())
    rec = np.frombuffer(data, dtype=_record_dtype(dim), offset=_HEADER.size)
    return FeatureSet(
        np.ascontiguousarray(rec["vec"]),
        rec["start"].astype(np.uint64),
        rec["span"].astype(np.uint32),
    )


@dataclass
class VideoEntry:
    video_id: str
    feature_file: str
    frame_count: int
    label_file: str | None = None


@dataclass
class DatasetManifest:
    dataset: str
    split: str
    videos: list[VideoEntry] = field(default_factory=list)
    root: Path = Path(".")  # directory paths are relative to

    def feature_path(self, entry: VideoEntry) -> Path:
        return self.root / entry.feature_file

    def label_path(self, entry: VideoEntry) -> Path | None:
        return None if entry.label_file is None else self.root / entry.label_file


def save_manifest(manifest: DatasetManifest, path) -> None:
    payload = {
        "dataset": manifest.dataset,
        "split": manifest.split,
        "videos": [
            {
                "id": v.video_id,
                "feature_file": v.feature_file,
                "frame_count": v.frame_count,
                **({"label_file": v.label_file} if v.label_file else {}),
            }
            for v in manifest.videos
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: invalid JSON: {e}") from e
    for key in ("dataset", "split", "videos"):
        if key not in payload:
            raise DataFormatError(f"{path}: manifest missing key {key!r}")
    manifest = DatasetManifest(payload["dataset"], payload["split"], root=path.parent)
    for item in payload["videos"]:
        for key in ("id", "feature_file", "frame_count"):
            if key not in item:
                raise DataFormatError(f"{path}: video entry missing key {key!r}")
        entry = VideoEntry(item["id"], item["feature_file"], int(item["frame_count"]),
                           item.get("label_file"))
        if manifest.split == "test" and entry.label_file is None:
            raise DataFormatError(f"{path}: test video {entry.video_id!r} has no label file")
        if check_files:
            if not manifest.feature_path(entry).exists():
                raise DataFormatError(
                    f"{path}: feature file {entry.feature_file!r} for video "
                    f"{entry.video_id!r} does not exist"
                )
            lp = manifest.label_path(entry)
            if lp is not None and not lp.exists():
                raise DataFormatError(
                    f"{path}: label file {entry.label_file!r} for video "
                    f"{entry.video_id!r} does not exist"
                )
        manifest.videos.append(entry)
    return manifest


def save_labels(path, labels) -> None:
    labels = np.asarray(labels)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index", "label"])
        for i, lab in enumerate(labels):
            writer.writerow([i, int(lab)])


def load_labels(path, expected_len: int | None = None) -> np.ndarray:
    path = Path(path)
    labels = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame_index", "label"]:
            raise DataFormatError(f"{path}: expected header 'frame_index,label', got {header}")
        for row_no, row in enumerate(reader):
            if len(row) != 2:
                raise DataFormatError(f"{path}: row {row_no} has {len(row)} fields, expected 2")
            idx, lab = row
            if int(idx) != row_no:
                raise DataFormatError(f"{path}: frame_index {idx} at row {row_no}; indices must be dense from 0")
            if lab not in ("0", "1"):
                raise DataFormatError(f"{path}: label {lab!r} at row {row_no} is not binary")
            labels.append(int(lab))
    out = np.asarray(labels, dtype=np.int8)
    if expected_len is not None and out.size != expected_len:
        raise DataFormatError(f"{path}: {out.size} labels != declared frame count {expected_len}")
    return out


def save_scores_csv(path, scores) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index", "score"])
        for i, s in enumerate(np.asarray(scores, dtype=np.float64)):
            writer.writerow([i, repr(float(s))])


def load_scores_csv(path) -> np.ndarray:
    path = Path(path)
    scores = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame_index", "score"]:
            raise DataFormatError(f"{path}: expected header 'frame_index,score', got {header}")
        for row_no, row in enumerate(reader):
            if len(row) != 2 or int(row[0]) != row_no:
                raise DataFormatError(f"{path}: malformed score row {row_no}: {row}")
            scores.append(float(row[1]))
    return np.asarray(scores, dtype=np.float64)


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic corpus knobs. The defaults are the pinned 'default' preset."""

    feature_dim: int = 64
    num_modes: int = 5
    mode_spread: float = 0.10
    train_count: int = 4000
    videos: int = 6
    frames_per_video: int = 400
    anomaly_rate: float = 0.15
    anomaly_shift: float = 1.0
    temporal_correlation: float = 0.9
    seed: int = 11

    def __post_init__(self):
        if not 0.0 < self.anomaly_rate < 1.0:
            raise ValueError("anomaly_rate must lie in (0, 1)")
        if not self.anomaly_shift > self.mode_spread:
            raise ValueError("anomaly_shift must exceed mode_spread for separable anomalies")
        if not 0.0 <= self.temporal_correlation < 1.0:
            raise ValueError("temporal_correlation must lie in [0, 1)")


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def generate_synthetic(config: SynthConfig, out_dir) -> tuple[Path, Path]:
    """Write a seeded corpus; returns (train manifest path, test manifest path).

    Training features are drawn from an imbalanced mixture of Gaussian bumps
    on the unit sphere. Test videos walk through the modes with AR(1)
    temporally-correlated noise; anomalies are contiguous segments displaced
    off-manifold by anomaly_shift.
    """
    out = Path(out_dir)
    (out / "videos").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    d = config.feature_dim
    sqrt_d = np.sqrt(d)

    modes = _unit_rows(rng.standard_normal((config.num_modes, d)))
    weights = 1.0 / np.arange(1, config.num_modes + 1)
    weights /= weights.sum()
    rho = config.temporal_correlation
    fresh = np.sqrt(1.0 - rho * rho)

    def mode_runs(length: int) -> np.ndarray:
        track = np.empty(length, dtype=np.int64)
        t = 0
        while t < length:
            run = int(rng.integers(60, 121))
            track[t : t + run] = rng.choice(config.num_modes, p=weights)
            t += run
        return track

    def walk(track: np.ndarray) -> np.ndarray:
        # AR(1) noise around the mode centers; marginally a mixture of
        # Gaussian bumps on the unit sphere
        vecs = np.empty((track.size, d))
        eps = rng.standard_normal(d)
        for t in range(track.size):
            eps = rho * eps + fresh * rng.standard_normal(d)
            vecs[t] = modes[track[t]] + config.mode_spread * eps / sqrt_d
        return _unit_rows(vecs)

    # train split: one timestamped sequence, so pair sampling can use
    # temporal offsets
    train = walk(mode_runs(config.train_count)).astype(np.float32)
    save_features(
        out / "train_features.bin",
        train,
        start_frames=np.arange(config.train_count, dtype=np.uint64),
        spans=np.ones(config.train_count, dtype=np.uint32),
    )

    train_manifest = DatasetManifest("synthetic", "train", root=out)
    train_manifest.videos.append(VideoEntry("train_000", "train_features.bin", config.train_count))
    save_manifest(train_manifest, out / "train.json")

    test_manifest = DatasetManifest("synthetic", "test", root=out)
    for v in range(config.videos):
        vid = f"video_{v:03d}"
        frames = config.frames_per_video
        labels = np.zeros(frames, dtype=np.int8)

        # contiguous anomaly segments totalling ~anomaly_rate of the video
        target = int(round(config.anomaly_rate * frames))
        while target > 0:
            seg = int(min(target, rng.integers(40, 81)))
            start = int(rng.integers(0, frames - seg + 1))
            labels[start : start + seg] = 1
            target -= seg

        vecs = walk(mode_runs(frames))
        seg_dir = None
        for t in range(frames):
            if labels[t]:
                if seg_dir is None:
                    seg_dir = _unit_rows(rng.standard_normal(d))
                vecs[t] = vecs[t] + config.anomaly_shift * seg_dir
            else:
                seg_dir = None
        vecs = _unit_rows(vecs).astype(np.float32)

        save_features(
            out / "videos" / f"{vid}.bin",
            vecs,
            start_frames=np.arange(frames, dtype=np.uint64),
            spans=np.ones(frames, dtype=np.uint32),
        )
        save_labels(out / "labels" / f"{vid}.csv", labels)
        test_manifest.videos.append(
            VideoEntry(vid, f"videos/{vid}.bin", frames, f"labels/{vid}.csv")
        )
    save_manifest(test_manifest, out / "test.json")
    return out / "train.json", out / "test.json"


def load_run_features(manifest: DatasetManifest) -> dict[str, FeatureSet]:
    """Feature sets for every video in a manifest, keyed by video id."""
    return {v.video_id: load_features(manifest.feature_path(v)) for v in manifest.videos}


def stack_train_features(manifest: DatasetManifest) -> np.ndarray:
    """All feature vectors of a (train) manifest stacked into one array."""
    sets = [load_features(manifest.feature_path(v)) for v in manifest.videos]
    return np.concatenate([fs.vectors for fs in sets], axis=0)
