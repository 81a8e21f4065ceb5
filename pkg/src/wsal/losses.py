"""Training objectives over segment scores.

Each loss returns ``(value, grad)`` where ``grad`` is the derivative of the
value with respect to its score input (same shape). ``objective`` combines
them for a whole batch laid out as originals, then noise samples, then
pseudo-location samples.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .model import video_score, video_score_backward


class LossError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class LossReport:
    zeta_sem: float
    zeta_var: float
    sparsity: float
    zeta_nse: float
    zeta_loc: float
    total: float

    def as_dict(self):
        return asdict(self)


@dataclass
class BatchLayout:
    """Which rows of a stacked batch are originals, noise samples and pseudo samples.

    ``pseudo_masks`` is (n_pseudo, m) boolean, True on the fused positions.
    """

    labels: np.ndarray
    n_noise: int = 0
    pseudo_masks: np.ndarray | None = None

    @property
    def n_orig(self):
        return len(self.labels)

    @property
    def n_pseudo(self):
        return 0 if self.pseudo_masks is None else len(self.pseudo_masks)

    @property
    def size(self):
        return self.n_orig + self.n_noise + self.n_pseudo


def margin_loss(S, labels):
    """max(0, 1 - mean(S | y=1) + mean(S | y=0)) over per-video scores."""
    S = np.asarray(S, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    neg = labels == 0
    n1, n0 = int(pos.sum()), int(neg.sum())
    if n1 == 0 or n0 == 0:
        raise LossError(f"margin loss needs both classes, got {n1} positive / {n0} negative")
    hinge = 1.0 - S[pos].mean() + S[neg].mean()
    grad = np.zeros_like(S)
    if hinge > 0:
        grad[pos] = -1.0 / n1
        grad[neg] = 1.0 / n0
    return max(0.0, float(hinge)), grad


def sparsity_penalty(sem, var, beta):
    """(beta / n) * sum of all semantic and variation scores of n videos."""
    sem = np.asarray(sem)
    var = np.asarray(var)
    n = sem.shape[0]
    value = beta / n * float(np.abs(sem).sum() + np.abs(var).sum())
    return value, beta / n * np.sign(sem), beta / n * np.sign(var)


def noise_loss(fused, target=0.0):
    """(1 / n) * sum over videos and segments of (fused - target)^2."""
    fused = np.asarray(fused)
    n = fused.shape[0]
    diff = fused - target
    return float((diff**2).sum()) / n, 2.0 * diff / n


def pseudo_location_loss(fused, masks, literal=False):
    """Hinge pushing fused positions above the best non-fused position.

    Default: (1/n) sum_{t in I} max(0, max_{j not in I} s_j - s_t).
    ``literal=True`` flips the hinge sign,
    max(0, s_t - max_{j not in I} s_j).
    """
    fused = np.asarray(fused)
    masks = np.asarray(masks, dtype=bool)
    if fused.ndim == 1:
        fused, masks = fused[None], masks[None]
    n, m = fused.shape
    counts = masks.sum(axis=1)
    if np.any(counts == 0) or np.any(counts == m):
        raise LossError("pseudo index set must be a non-empty strict subset of the segments")
    others = np.where(masks, -np.inf, fused)
    j_best = np.argmax(others, axis=1)
    best = others[np.arange(n), j_best]
    margin = fused - best[:, None] if literal else best[:, None] - fused
    active = masks & (margin > 0)
    value = float(np.where(active, margin, 0.0).sum()) / n
    sign = 1.0 if literal else -1.0
    grad = np.where(active, sign / n, 0.0)
    grad[np.arange(n), j_best] -= sign * active.sum(axis=1) / n
    return value, grad


def total_objective(zeta_sem, zeta_var, sparsity, zeta_nse, zeta_loc, lam, margin_weight=1.0):
    """zeta^O + lam * zeta^A, with zeta^O = margin terms + sparsity and zeta^A = noise + location.

    ``margin_weight`` scales the two margin terms (1 in normal training).
    """
    total = margin_weight * (zeta_sem + zeta_var) + sparsity + lam * (zeta_nse + zeta_loc)
    report = LossReport(zeta_sem, zeta_var, sparsity, zeta_nse, zeta_loc, total)
    bad = [k for k, v in report.as_dict().items() if not math.isfinite(v)]
    if bad:
        raise NonFiniteLossError(f"non-finite loss terms: {', '.join(bad)}")
    return report


def objective(scores, layout, beta, lam, literal_loc=False, margin_weight=1.0):
    """Loss report plus gradients w.r.t. the (B, m) semantic and variation scores."""
    sem, var, fused = scores.sem, scores.var, scores.fused
    n = layout.n_orig
    dsem = np.zeros_like(sem)
    dvar = np.zeros_like(var)

    z_sem, dS = margin_loss(video_score(sem[:n]), layout.labels)
    dsem[:n] += video_score_backward(margin_weight * dS.astype(sem.dtype), sem[:n])
    z_var, dS = margin_loss(video_score(var[:n]), layout.labels)
    dvar[:n] += video_score_backward(margin_weight * dS.astype(var.dtype), var[:n])

    sp, dsp_sem, dsp_var = sparsity_penalty(sem[:n], var[:n], beta)
    dsem[:n] += dsp_sem
    dvar[:n] += dsp_var

    z_nse = z_loc = 0.0
    if layout.n_noise:
        sl = slice(n, n + layout.n_noise)
        z_nse, dfused = noise_loss(fused[sl])
        dsem[sl] += 0.5 * lam * dfused
        dvar[sl] += 0.5 * lam * dfused
    if layout.n_pseudo:
        sl = slice(n + layout.n_noise, layout.size)
        z_loc, dfused = pseudo_location_loss(fused[sl], layout.pseudo_masks, literal_loc)
        dsem[sl] += 0.5 * lam * dfused
        dvar[sl] += 0.5 * lam * dfused

    report = total_objective(z_sem, z_var, sp, z_nse, z_loc, lam, margin_weight)
    return report, dsem, dvar
