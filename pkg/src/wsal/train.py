"""Mini-batch training: batch composition, the optimisation loop, logs and checkpoints."""

import csv
import io
import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import augment
from .losses import BatchLayout, NonFiniteLossError, objective
from .model import PARAM_ORDER, backward, checkpoint_bytes, forward, init_params
from .numeric import Adagrad

log = logging.getLogger(__name__)

LOG_FIELDS = ("iteration", "zeta_sem", "zeta_var", "sparsity", "zeta_nse", "zeta_loc", "total", "lr")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    k: int = 2
    m: int = 32
    beta: float = 0.00008
    lam: float = 1.0
    margin_weight: float = 1.0
    lr: float = 0.001
    milestones: tuple = (1200, 2400)
    iterations: int = 3000
    n_pos: int = 30
    n_neg: int = 30
    n_noise: int = 8
    n_pseudo: int = 8
    # augmented samples join the batch from this iteration on
    augment_start: int = 600
    dropout: float = 0.6
    hce_dropout: bool = False
    hidden: tuple = (512, 128)
    init: str = "uniform"
    adagrad_eps: float = 1e-10
    literal_loc: bool = False
    dtype: str = "float32"
    seed: int = 0
    noise: augment.NoiseConfig = field(default_factory=augment.NoiseConfig)
    pseudo: augment.PseudoConfig = field(default_factory=augment.PseudoConfig)

    def __post_init__(self):
        self.milestones = tuple(int(x) for x in self.milestones)
        self.hidden = tuple(int(x) for x in self.hidden)
        if isinstance(self.noise, dict):
            self.noise = augment.NoiseConfig(**self.noise)
        if isinstance(self.pseudo, dict):
            self.pseudo = augment.PseudoConfig(**self.pseudo)
        if self.k < 0 or self.m < 2:
            raise ValueError("need k >= 0 and m >= 2")
        if self.n_pos < 1 or self.n_neg < 1:
            raise ValueError("batches need at least one video of each class")
        if min(self.n_noise, self.n_pseudo, self.augment_start, self.iterations) < 0:
            raise ValueError("counts must be non-negative")
        if any(ms >= self.iterations for ms in self.milestones) and self.iterations:
            raise ValueError("learning-rate milestones must precede the last iteration")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")

    def to_dict(self):
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def learning_rate(cfg, iteration):
    """Base rate halved at every milestone already reached."""
    passed = sum(1 for ms in cfg.milestones if iteration >= ms)
    return cfg.lr * 0.5**passed


def load_split(manifest, split, m):
    """Stack segment features of one split: (N, m, d) array, labels, ids."""
    records = manifest.split(split)
    if not records:
        raise TrainingError(f"manifest has no {split} videos")
    feats = np.stack([manifest.load_segments(r, m)[0] for r in records])
    labels = np.array([r.label for r in records], dtype=np.int64)
    return feats, labels, [r.id for r in records]


@dataclass
class Batch:
    features: np.ndarray
    layout: BatchLayout
    provenance: list


def compose_batch(feats, labels, rng, cfg, ids=None, augmented=True):
    """Sample originals without replacement, then append noise and pseudo-location samples.

    Noise samples start from the sampled normals; pseudo samples pair a sampled
    normal with a sampled anomalous video. ``augmented=False`` returns originals only.
    """
    n_noise = cfg.n_noise if augmented else 0
    n_pseudo = cfg.n_pseudo if augmented else 0
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if len(pos) < cfg.n_pos or len(neg) < cfg.n_neg:
        raise TrainingError(
            f"need {cfg.n_pos} anomalous and {cfg.n_neg} normal videos, have {len(pos)} and {len(neg)}"
        )
    ids = ids if ids is not None else [str(i) for i in range(len(labels))]
    p_sel = rng.choice(pos, size=cfg.n_pos, replace=False)
    n_sel = rng.choice(neg, size=cfg.n_neg, replace=False)
    originals = np.concatenate([p_sel, n_sel])
    rows = [feats[originals]]
    prov = [{"tag": "original", "id": ids[i]} for i in originals]

    if n_noise:
        srcs = rng.choice(n_sel, size=n_noise, replace=n_noise > len(n_sel))
        noisy = []
        for i in srcs:
            x, _, p = augment.simulate_noise_video(feats[i], 0, rng, cfg.noise, cfg.m)
            noisy.append(x)
            prov.append({"tag": "noise", "id": ids[i], **p})
        rows.append(np.stack(noisy))

    masks = None
    if n_pseudo:
        normals = rng.choice(n_sel, size=n_pseudo, replace=n_pseudo > len(n_sel))
        abnormals = rng.choice(p_sel, size=n_pseudo, replace=n_pseudo > len(p_sel))
        crafted = [augment.craft_anomaly(feats[a], feats[b], rng, cfg.pseudo) for a, b in zip(normals, abnormals)]
        rows.append(np.stack([c.features for c in crafted]))
        masks = np.stack([c.mask for c in crafted])
        for a, b, c in zip(normals, abnormals, crafted):
            prov.append({"tag": "pseudo", "normal": ids[a], "abnormal": ids[b], **c.provenance})

    layout = BatchLayout(labels=labels[originals], n_noise=n_noise, pseudo_masks=masks)
    return Batch(np.concatenate(rows).astype(cfg.dtype), layout, prov)


def _format_row(iteration, report, lr):
    vals = report.as_dict()
    return [iteration] + [repr(float(vals[k])) for k in LOG_FIELDS[1:-1]] + [repr(float(lr))]


@dataclass
class TrainResult:
    params: dict
    log_rows: list
    checkpoints: dict = field(default_factory=dict)

    def log_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LOG_FIELDS)
        writer.writerows(self.log_rows)
        return buf.getvalue()

    def totals(self):
        return np.array([float(r[6]) for r in self.log_rows])


def train(feats, labels, cfg, ids=None, out_dir=None, callback=None, augment_log=None):
    """Optimise a fresh model on stacked training features.

    ``feats`` is (N, m, d). Checkpoints are kept in memory at each milestone and
    at the end, and written under ``out_dir`` when given. A non-finite loss or
    gradient aborts the run after saving the last good parameters.
    """
    rng = np.random.default_rng(cfg.seed)
    d = feats.shape[-1]
    params = init_params(d, cfg.k, rng, cfg.hidden, cfg.init, dtype=np.dtype(cfg.dtype))
    opt = Adagrad(params, eps=cfg.adagrad_eps)
    feats = feats.astype(cfg.dtype)
    result = TrainResult(params=params, log_rows=[])
    meta = {"training": cfg.to_dict(), "feature_dim": int(d)}

    # parameters of the latest iteration whose loss was finite
    good = {n: p.copy() for n, p in params.items()}

    def save(name, which=None):
        blob = checkpoint_bytes(which or params, meta)
        result.checkpoints[name] = blob
        if out_dir:
            with open(os.path.join(out_dir, name), "wb") as fh:
                fh.write(blob)

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)
            fh.write("\n")

    for it in range(cfg.iterations):
        lr = learning_rate(cfg, it)
        batch = compose_batch(feats, labels, rng, cfg, ids, augmented=it >= cfg.augment_start)
        if augment_log is not None:
            for p in batch.provenance[len(batch.layout.labels) :]:
                augment_log.write(json.dumps({"iteration": it, **p}, sort_keys=True) + "\n")
        scores, cache = forward(batch.features, params, train=True, rng=rng, rate=cfg.dropout, hce_dropout=cfg.hce_dropout)
        try:
            report, dsem, dvar = objective(
                scores, batch.layout, cfg.beta, cfg.lam, cfg.literal_loc, cfg.margin_weight
            )
        except NonFiniteLossError as exc:
            save("last_good.bin", good)
            raise TrainingError(f"iteration {it}: {exc}") from exc
        for n in PARAM_ORDER:
            np.copyto(good[n], params[n])
        grads = backward(dsem, dvar, cache, params)
        if not all(np.all(np.isfinite(grads[n])) for n in PARAM_ORDER):
            save("last_good.bin", good)
            raise TrainingError(f"iteration {it}: non-finite gradient")
        opt.step(params, grads, lr)
        result.log_rows.append(_format_row(it, report, lr))
        if callback is not None:
            callback(it, report, params)
        if it + 1 in cfg.milestones:
            save(f"ckpt_{it + 1:05d}.bin")
        if it % 500 == 0:
            log.info("iter %d total %.4f lr %g", it, report.total, lr)

    save("model.bin")
    if out_dir:
        with open(os.path.join(out_dir, "train_log.csv"), "w") as fh:
            fh.write(result.log_csv())
    return result


def train_manifest(manifest, cfg, out_dir=None, **kwargs):
    feats, labels, ids = load_split(manifest, "train", cfg.m)
    return train(feats, labels, cfg, ids=ids, out_dir=out_dir, **kwargs)
