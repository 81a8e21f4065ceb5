"""Planted-anomaly benchmark generator.

Normal frames follow a smooth latent trajectory (an AR(1) velocity integrated
by a damped AR(1) position) mapped into ``d`` dims through a fixed random
orthonormal basis, plus a per-video scene offset and isotropic noise. Inside
anomaly intervals the trajectory is rotated towards an orthogonal subspace and
amplified, so anomalies differ in direction rather than just energy.
"""

import json
import os
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import lfilter

from .data import Manifest, VideoRecord, write_features


@dataclass
class SyntheticSpec:
    n_train: int = 100  # per class
    n_test: int = 25  # per class
    frames: int = 2048
    feature_dim: int = 32
    latent_dim: int = 6
    momentum: float = 0.95
    damping: float = 0.995
    scene_scale: float = 1.0
    noise: float = 0.5
    anomaly_magnitude: float = 1.0
    anomaly_gain: float = 0.5
    anomaly_min_len: int = 96
    anomaly_max_len: int = 320
    max_anomalies: int = 2
    seed: int = 7

    def __post_init__(self):
        for name in ("n_train", "n_test", "frames", "feature_dim", "latent_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.anomaly_magnitude < 0:
            raise ValueError("anomaly_magnitude must be non-negative")
        if 2 * self.latent_dim > self.feature_dim:
            raise ValueError("feature_dim must hold two disjoint latent subspaces")
        if not 0 < self.anomaly_min_len <= self.anomaly_max_len:
            raise ValueError("bad anomaly length range")
        if self.max_anomalies * (self.anomaly_max_len + 1) > self.frames:
            raise ValueError("frames too short for the requested anomalies")


def _trajectory(rng, T, r, momentum, damping):
    """Unit-variance smooth latent path, shape (T, r)."""
    eps = rng.standard_normal((T + 256, r))
    vel = lfilter([1.0], [1.0, -momentum], eps, axis=0)
    pos = lfilter([1.0], [1.0, -damping], vel, axis=0)[256:]
    pos -= pos.mean(axis=0)
    return pos / pos.std(axis=0)


def _intervals(rng, spec):
    """One or two disjoint, sorted half-open intervals."""
    count = int(rng.integers(1, spec.max_anomalies + 1))
    while True:
        lens = rng.integers(spec.anomaly_min_len, spec.anomaly_max_len + 1, size=count)
        starts = np.sort(rng.integers(0, spec.frames - spec.anomaly_max_len + 1, size=count))
        ivs = [(int(s), int(s + n)) for s, n in zip(starts, lens)]
        if all(ivs[i][1] < ivs[i + 1][0] for i in range(count - 1)):
            return ivs


def synth_video(rng, spec, basis_normal, basis_anom, anomalous):
    """Per-frame features (T, d) and the planted intervals (empty for normal videos)."""
    T, r, d = spec.frames, spec.latent_dim, spec.feature_dim
    scene = basis_normal @ rng.standard_normal(r) * spec.scene_scale
    z = _trajectory(rng, T, r, spec.momentum, spec.damping)
    signal = z @ basis_normal.T
    ivs = []
    if anomalous:
        ivs = _intervals(rng, spec)
        u = _trajectory(rng, T, r, spec.momentum, spec.damping)
        theta = min(spec.anomaly_magnitude, 1.0) * np.pi / 2
        gain = 1.0 + spec.anomaly_gain * spec.anomaly_magnitude
        for s, e in ivs:
            rotated = np.cos(theta) * z[s:e] @ basis_normal.T + np.sin(theta) * u[s:e] @ basis_anom.T
            signal[s:e] = gain * rotated
    feats = scene + signal + spec.noise * rng.standard_normal((T, d))
    return feats.astype(np.float32), ivs


def generate(spec, out_dir):
    """Write features, manifest.json, ground_truth.json and spec.json under ``out_dir``.

    Output is a pure function of ``spec`` (including its seed).
    """
    os.makedirs(os.path.join(out_dir, "features"), exist_ok=True)
    root = np.random.SeedSequence(spec.seed)
    basis_seq, *video_seqs = root.spawn(1 + 2 * (spec.n_train + spec.n_test))
    q, _ = np.linalg.qr(np.random.default_rng(basis_seq).standard_normal((spec.feature_dim, 2 * spec.latent_dim)))
    basis_normal, basis_anom = q[:, : spec.latent_dim], q[:, spec.latent_dim :]

    plan = []
    for split, count in (("train", spec.n_train), ("test", spec.n_test)):
        for label, tag in ((1, "abn"), (0, "nrm")):
            plan += [(split, label, f"{split}_{tag}_{i:03d}") for i in range(count)]

    videos, truth = [], {}
    for (split, label, vid), seq in zip(plan, video_seqs):
        feats, ivs = synth_video(np.random.default_rng(seq), spec, basis_normal, basis_anom, label == 1)
        rel = os.path.join("features", f"{vid}.feat")
        write_features(os.path.join(out_dir, rel), feats)
        truth[vid] = [list(iv) for iv in ivs]
        videos.append(
            VideoRecord(
                id=vid,
                features=rel,
                label=label,
                split=split,
                frame_count=spec.frames,
                intervals=truth[vid] if split == "test" else None,
            )
        )
    manifest = Manifest(videos=videos, feature_dim=spec.feature_dim, root=out_dir, meta={"generator": "synthetic"})
    manifest.save(os.path.join(out_dir, "manifest.json"))
    with open(os.path.join(out_dir, "ground_truth.json"), "w") as fh:
        json.dump(truth, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "spec.json"), "w") as fh:
        json.dump(asdict(spec), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest
