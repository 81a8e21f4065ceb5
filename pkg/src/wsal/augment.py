"""Weak-supervision enhancement: simulated video noise and hand-crafted anomalies.

Frame operations act on (H, W, 3) uint8 RGB frames. Noise simulation runs on
raw frames when they exist and falls back to a feature-space perturbation
otherwise; every sample carries a provenance dict with its own seed so it can
be replayed exactly.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .data import segment_bounds, segment_video, toy_features

BLOCK_COLORS = {
    "black": (0, 0, 0),
    "blue": (0, 0, 255),
    "purple": (128, 0, 128),
}
FRAME_OPS = ("motion_blur", "occlusion_block", "random_scale")


@dataclass
class NoiseConfig:
    min_segments: int = 1
    max_segments: int | None = None  # None -> m // 4
    feature_sigma: float = 0.5
    channel_drop: float = 0.2
    blur_kernel: int = 5
    max_angle: float = 45.0
    min_block: float = 0.25
    max_scale: float = 0.2


@dataclass
class PseudoConfig:
    min_len: int = 1
    max_len: int = 8
    min_alpha: float = 0.2
    max_alpha: float = 0.5


@dataclass
class PseudoSample:
    features: np.ndarray
    index: np.ndarray
    alpha: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def mask(self):
        mask = np.zeros(len(self.features), dtype=bool)
        mask[self.index] = True
        return mask


def motion_blur_kernel(angle, size=5):
    """Anti-aliased line through the kernel centre at ``angle`` degrees, unit sum.

    Each cell is weighted by max(0, 1 - distance from the cell centre to the
    line segment), so angle 0 is a plain horizontal box filter.
    """
    half = (size - 1) / 2
    yy, xx = np.mgrid[-half : half + 1, -half : half + 1]
    theta = np.deg2rad(angle)
    dx, dy = np.cos(theta), -np.sin(theta)
    along = np.clip(xx * dx + yy * dy, -half, half)
    dist = np.hypot(xx - along * dx, yy - along * dy)
    k = np.maximum(0.0, 1.0 - dist)
    return k / k.sum()


def _to_uint8(x):
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def motion_blur(frame, angle, size=5):
    if not -45 <= angle <= 45:
        raise ValueError("angle must be within [-45, 45] degrees")
    k = motion_blur_kernel(angle, size)
    f = frame.astype(np.float64)
    out = np.stack([ndimage.convolve(f[..., c], k, mode="nearest") for c in range(f.shape[-1])], axis=-1)
    return _to_uint8(out)


def block_rect(shape, area_fraction, rng):
    """(top, left, height, width) of a randomly placed block covering ``area_fraction``."""
    H, W = shape[:2]
    side = np.sqrt(area_fraction)
    h = min(H, max(1, int(round(H * side))))
    w = min(W, max(1, int(round(W * side))))
    top = int(rng.integers(0, H - h + 1))
    left = int(rng.integers(0, W - w + 1))
    return top, left, h, w


def occlusion_block(frame, color, area_fraction, rng):
    if color not in BLOCK_COLORS:
        raise ValueError(f"color must be one of {sorted(BLOCK_COLORS)}")
    if not 0.25 <= area_fraction <= 1.0:
        raise ValueError("area_fraction must be within [0.25, 1]")
    top, left, h, w = block_rect(frame.shape, area_fraction, rng)
    out = frame.copy()
    out[top : top + h, left : left + w] = BLOCK_COLORS[color]
    return out


def scaled_size(shape, sx, sy):
    H, W = shape[:2]
    return max(1, int(round(H * (1 + sy)))), max(1, int(round(W * (1 + sx))))


def resize_bilinear(img, out_h, out_w):
    """Bilinear resample with pixel-centre alignment and edge clamping."""
    H, W = img.shape[:2]
    ys = np.clip((np.arange(out_h) + 0.5) * H / out_h - 0.5, 0, H - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * W / out_w - 0.5, 0, W - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    f = img.astype(np.float64)
    if f.ndim == 2:
        f = f[..., None]
    top = f[y0][:, x0] * (1 - wx) + f[y0][:, x1] * wx
    bot = f[y1][:, x0] * (1 - wx) + f[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return out if img.ndim == 3 else out[..., 0]


def _fit(arr, size, axis):
    """Centre-crop or replicate-pad ``arr`` to ``size`` along ``axis``."""
    n = arr.shape[axis]
    if n > size:
        start = (n - size) // 2
        return np.take(arr, np.arange(start, start + size), axis=axis)
    if n < size:
        before = (size - n) // 2
        pad = [(0, 0)] * arr.ndim
        pad[axis] = (before, size - n - before)
        return np.pad(arr, pad, mode="edge")
    return arr


def random_scale(frame, sx, sy):
    if not (-0.2 <= sx <= 0.2 and -0.2 <= sy <= 0.2):
        raise ValueError("scale factors must be within [-0.2, 0.2]")
    if sx == 0 and sy == 0:
        return frame.copy()
    H, W = frame.shape[:2]
    h, w = scaled_size(frame.shape, sx, sy)
    out = resize_bilinear(frame, h, w)
    out = _fit(_fit(out, H, 0), W, 1)
    return _to_uint8(out)


def random_frame_op(rng, cfg):
    """Draw one noise operation and its parameters; returns a provenance dict."""
    op = FRAME_OPS[int(rng.integers(len(FRAME_OPS)))]
    if op == "motion_blur":
        return {"op": op, "angle": float(rng.uniform(-cfg.max_angle, cfg.max_angle))}
    if op == "occlusion_block":
        colors = sorted(BLOCK_COLORS)
        return {
            "op": op,
            "color": colors[int(rng.integers(len(colors)))],
            "area": float(rng.uniform(cfg.min_block, 1.0)),
            "seed": int(rng.integers(2**31)),
        }
    return {
        "op": op,
        "sx": float(rng.uniform(-cfg.max_scale, cfg.max_scale)),
        "sy": float(rng.uniform(-cfg.max_scale, cfg.max_scale)),
    }


def apply_frame_op(frame, spec, cfg=None):
    cfg = cfg or NoiseConfig()
    if spec["op"] == "motion_blur":
        return motion_blur(frame, spec["angle"], cfg.blur_kernel)
    if spec["op"] == "occlusion_block":
        return occlusion_block(frame, spec["color"], spec["area"], np.random.default_rng(spec["seed"]))
    return random_scale(frame, spec["sx"], spec["sy"])


def choose_segments(m, rng, cfg, count=None):
    hi = cfg.max_segments if cfg.max_segments is not None else max(1, m // 4)
    if count is None:
        count = int(rng.integers(cfg.min_segments, hi + 1))
    return np.sort(rng.choice(m, size=count, replace=False))


def noise_features(feats, rng, cfg=None, count=None):
    """Feature-space fallback: perturb a random subset of segment rows.

    Chosen rows get isotropic Gaussian noise scaled to the row's RMS value
    and a random subset of channels zeroed. Returns (features, provenance).
    """
    cfg = cfg or NoiseConfig()
    return _noise_features(feats, int(rng.integers(2**63)), cfg, count)


def _noise_features(feats, seed, cfg, count):
    rng = np.random.default_rng(seed)
    feats = np.array(feats, copy=True)
    chosen = choose_segments(len(feats), rng, cfg, count)
    rows = feats[chosen]
    rms = np.sqrt(np.mean(rows**2, axis=1, keepdims=True))
    rows = rows + cfg.feature_sigma * rms * rng.standard_normal(rows.shape)
    rows = rows * (rng.random(rows.shape) >= cfg.channel_drop)
    feats[chosen] = rows
    prov = {"mode": "feature", "seed": seed, "count": count, "segments": chosen.tolist()}
    return feats, prov


def noise_frames(frames, m, rng, cfg=None, count=None):
    """Corrupt every frame of randomly chosen segments, then extract and segment features.

    Returns (m x 144 segment features, frame counts, provenance).
    """
    cfg = cfg or NoiseConfig()
    frames = np.array(frames, copy=True)
    counts = segment_bounds(len(frames), m)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    chosen = choose_segments(m, rng, cfg, count)
    ops = []
    for s in chosen:
        spec = random_frame_op(rng, cfg)
        for t in range(starts[s], starts[s] + counts[s]):
            frames[t] = apply_frame_op(frames[t], spec, cfg)
        ops.append({"segment": int(s), **spec})
    feats, counts = segment_video(toy_features(frames), m)
    return feats, counts, {"mode": "frame", "segments": chosen.tolist(), "ops": ops}


def simulate_noise_video(source, label, rng, cfg=None, m=32, count=None):
    """Noise-augmented copy of a normal video; the label stays 0.

    ``source`` is either raw frames (T, H, W, 3) or segment features (m, d).
    Returns (features, 0, provenance).
    """
    if label != 0:
        raise ValueError("noise simulation only applies to normal videos")
    source = np.asarray(source)
    if source.ndim == 4:
        feats, _, prov = noise_frames(source, m, rng, cfg, count)
    else:
        feats, prov = noise_features(source, rng, cfg, count)
    return feats, 0, prov


def replay_noise(source, provenance, cfg=None):
    """Rebuild a feature-mode noise sample from its provenance."""
    cfg = cfg or NoiseConfig()
    feats, _ = _noise_features(source, provenance["seed"], cfg, provenance["count"])
    return feats


def craft_anomaly(normal, abnormal, rng, cfg=None, alpha=None):
    """Fuse a contiguous run of normal segments with randomly aligned abnormal ones.

    Fused row t = (1 - a_t) * normal_t + a_t * abnormal_{pi(t)}, a_t ~ U[0.2, 0.5].
    """
    cfg = cfg or PseudoConfig()
    normal = np.asarray(normal)
    abnormal = np.asarray(abnormal)
    if normal.shape != abnormal.shape:
        raise ValueError(f"shape mismatch {normal.shape} vs {abnormal.shape}")
    m = len(normal)
    max_len = min(cfg.max_len, m - 1)
    length = int(rng.integers(cfg.min_len, max_len + 1))
    start = int(rng.integers(0, m - length + 1))
    index = np.arange(start, start + length)
    source = rng.integers(0, m, size=length)
    if alpha is None:
        a = rng.uniform(cfg.min_alpha, cfg.max_alpha, size=length)
    else:
        a = np.full(length, float(alpha))
    fused = normal.copy()
    fused[index] = (1 - a)[:, None] * normal[index] + a[:, None] * abnormal[source]
    prov = {"index": index.tolist(), "alpha": a.tolist(), "source": source.tolist()}
    return PseudoSample(features=fused, index=index, alpha=a, provenance=prov)
