"""Feature files, dataset manifests, segment construction and a toy frame-feature extractor."""

import json
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

FEATURE_MAGIC = b"WSALFEAT"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<8sIII")

MANIFEST_VERSION = 1


class FeatureFileError(ValueError):
    pass


class ManifestError(ValueError):
    pass


def write_features(path, matrix):
    """Little-endian: magic, u32 version, u32 rows, u32 cols, then row-major float32."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise FeatureFileError(f"expected a 2-D matrix, got shape {matrix.shape}")
    rows, cols = matrix.shape
    if rows == 0 or cols == 0:
        raise FeatureFileError("refusing to write an empty feature matrix")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, rows, cols))
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def read_features(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _HEADER.size:
        raise FeatureFileError(f"{path}: truncated header ({len(buf)} bytes)")
    magic, version, rows, cols = _HEADER.unpack_from(buf)
    if magic != FEATURE_MAGIC:
        raise FeatureFileError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FeatureFileError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 4 * rows * cols
    if len(buf) != expected:
        raise FeatureFileError(
            f"{path}: shape {rows}x{cols} needs {expected} bytes, file has {len(buf)}"
        )
    return np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(rows, cols).astype(np.float32)


def segment_bounds(T, m):
    """Frame counts of ``m`` contiguous near-equal chunks; the remainder goes to the leading chunks."""
    if T < m:
        raise ValueError(f"cannot split {T} frames into {m} segments")
    base, extra = divmod(T, m)
    return np.array([base + 1] * extra + [base] * (m - extra), dtype=np.int64)


def segment_video(frame_feats, m=32):
    """Average per-frame features over ``m`` segments. Returns (m x d features, frame counts)."""
    frame_feats = np.asarray(frame_feats, dtype=np.float64)
    counts = segment_bounds(len(frame_feats), m)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    sums = np.add.reduceat(frame_feats, starts, axis=0)
    return sums / counts[:, None], counts


def toy_features(frames):
    """Per-frame 144-dim descriptor from a (T, H, W, 3) uint8 clip.

    For each cell of a 4x4 grid and each channel: mean intensity, standard
    deviation, and mean absolute difference from the previous frame (0 for the
    first frame). Layout is (row, col, statistic, channel) flattened.
    """
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[-1] != 3 or len(frames) == 0:
        raise ValueError(f"expected non-empty (T, H, W, 3) frames, got {frames.shape}")
    f = frames.astype(np.float64)
    diff = np.zeros_like(f)
    diff[1:] = np.abs(f[1:] - f[:-1])
    T, H, W, _ = f.shape
    rows = np.array_split(np.arange(H), 4)
    cols = np.array_split(np.arange(W), 4)
    out = np.empty((T, 4, 4, 3, 3))
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            patch = f[:, r[0] : r[-1] + 1, c[0] : c[-1] + 1]
            out[:, i, j, 0] = patch.mean(axis=(1, 2))
            out[:, i, j, 1] = patch.std(axis=(1, 2))
            out[:, i, j, 2] = diff[:, r[0] : r[-1] + 1, c[0] : c[-1] + 1].mean(axis=(1, 2))
    return out.reshape(T, -1)


@dataclass
class VideoRecord:
    id: str
    features: str
    label: int
    split: str
    frame_count: int
    intervals: list | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ManifestError(f"{self.id}: label must be 0 or 1")
        if self.split not in ("train", "test"):
            raise ManifestError(f"{self.id}: split must be train or test")
        if self.intervals is not None:
            self.intervals = [[int(s), int(e)] for s, e in self.intervals]
            prev_end = 0
            for s, e in self.intervals:
                if not (0 <= s < e <= self.frame_count) or s < prev_end:
                    raise ManifestError(f"{self.id}: intervals must be sorted, disjoint, within [0, T)")
                prev_end = e


@dataclass
class Manifest:
    """A dataset: video records plus the directory their feature paths are relative to."""

    videos: list
    feature_dim: int
    root: str = "."
    meta: dict = field(default_factory=dict)

    def split(self, name):
        return [v for v in self.videos if v.split == name]

    def path(self, record):
        return os.path.join(self.root, record.features)

    def load_segments(self, record, m=32):
        """Segment features (m x d, float64) and frame counts for one record."""
        feats = read_features(self.path(record))
        if len(feats) != record.frame_count:
            raise ManifestError(
                f"{record.id}: manifest says {record.frame_count} frames, file has {len(feats)}"
            )
        return segment_video(feats, m)

    def to_json(self):
        doc = {
            "version": MANIFEST_VERSION,
            "feature_dim": self.feature_dim,
            "meta": self.meta,
            "videos": [asdict(v) for v in self.videos],
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def from_json(cls, text, root="."):
        doc = json.loads(text)
        if doc.get("version") != MANIFEST_VERSION:
            raise ManifestError(f"unsupported manifest version {doc.get('version')}")
        videos = [VideoRecord(**v) for v in doc["videos"]]
        return cls(videos=videos, feature_dim=doc["feature_dim"], root=root, meta=doc.get("meta", {}))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read(), root=os.path.dirname(os.path.abspath(path)))


def frame_labels(record):
    """Binary per-frame ground truth from half-open anomaly intervals."""
    y = np.zeros(record.frame_count, dtype=np.int8)
    for s, e in record.intervals or ():
        y[s:e] = 1
    return y
