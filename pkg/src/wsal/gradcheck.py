"""End-to-end finite-difference check of the full training objective on a tiny model."""

from dataclasses import dataclass

import numpy as np

from .augment import NoiseConfig, PseudoConfig
from .losses import objective
from .model import PARAM_ORDER, backward, forward, init_params
from .numeric import numerical_gradient
from .train import TrainingConfig, compose_batch

TINY = dict(k=1, m=5, hidden=(8, 4), n_pos=2, n_neg=2, n_noise=1, n_pseudo=1, augment_start=0, dtype="float64")


@dataclass
class GradCheckResult:
    seed: int
    max_rel_error: float
    worst_param: str


def _flatten(params):
    return np.concatenate([params[n].ravel() for n in PARAM_ORDER])


def _unflatten(vec, like):
    out, pos = {}, 0
    for n in PARAM_ORDER:
        size = like[n].size
        out[n] = vec[pos : pos + size].reshape(like[n].shape).copy()
        pos += size
    return out


def check_objective(seed, d=6, eps=1e-5, floor=1e-6, train_mode=True, **overrides):
    """Compare analytic and central-difference gradients of the total loss w.r.t. every parameter.

    Dropout masks are held fixed by replaying the same rng for every evaluation.
    """
    cfg = TrainingConfig(**{**TINY, "iterations": 1, "milestones": (), **overrides})
    cfg.noise = NoiseConfig(max_segments=max(1, cfg.m // 4))
    cfg.pseudo = PseudoConfig(max_len=min(8, cfg.m - 1))
    rng = np.random.default_rng(seed)
    n_videos = cfg.n_pos + cfg.n_neg
    feats = rng.standard_normal((n_videos, cfg.m, d))
    labels = np.array([1] * cfg.n_pos + [0] * cfg.n_neg)
    batch = compose_batch(feats, labels, rng, cfg)
    params = init_params(d, cfg.k, rng, cfg.hidden)
    # scale up so hinge terms stay active and scores spread away from 0.5
    params = {n: 3.0 * p for n, p in params.items()}
    drop_seed = int(rng.integers(2**31))

    def run(p):
        scores, cache = forward(
            batch.features, p, train=train_mode, rng=np.random.default_rng(drop_seed), rate=cfg.dropout
        )
        report, dsem, dvar = objective(scores, batch.layout, cfg.beta, cfg.lam, cfg.literal_loc, cfg.margin_weight)
        return report, dsem, dvar, cache

    report, dsem, dvar, cache = run(params)
    grads = backward(dsem, dvar, cache, params)
    analytic = _flatten(grads)

    def fn(vec):
        return run(_unflatten(vec, params))[0].total

    numeric = numerical_gradient(fn, _flatten(params), eps)
    err = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), floor)
    worst = int(np.argmax(err))
    bounds = np.cumsum([params[n].size for n in PARAM_ORDER])
    name = PARAM_ORDER[int(np.searchsorted(bounds, worst, side="right"))]
    return GradCheckResult(seed=seed, max_rel_error=float(err[worst]), worst_param=name)
