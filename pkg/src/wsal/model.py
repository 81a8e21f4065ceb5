"""The localization network: embedding stack, high-order context encoding, dual score heads.

Parameters live in a plain dict of numpy arrays keyed in ``PARAM_ORDER``.
Inputs are segment-feature tensors of shape (m, d) or (B, m, d); all score
outputs keep the leading batch axes and end in the segment axis.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .numeric import (
    NORM_EPS,
    ShapeError,
    cosine_backward,
    dropout,
    linear_backward,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
)

PARAM_ORDER = (
    "embed1.W",
    "embed1.b",
    "embed2.W",
    "embed2.b",
    "hce.W",
    "hce.b",
    "sem.w",
    "sem.b",
)

CHECKPOINT_MAGIC = b"WSALCKPT"
CHECKPOINT_VERSION = 1


class StaleCacheError(RuntimeError):
    """Backward was called with a cache that was already consumed or belongs to other params."""


class CheckpointError(ValueError):
    pass


@dataclass
class ScoreTriple:
    sem: np.ndarray
    var: np.ndarray
    fused: np.ndarray


def init_params(d, k, rng, hidden=(512, 128), scheme="uniform", dtype=np.float64):
    """Fresh parameters for input dim ``d`` and window radius ``k``.

    ``scheme="uniform"`` draws every weight and bias from U(-1/sqrt(fan_in), 1/sqrt(fan_in));
    ``scheme="zero"`` gives an all-zero model.
    """
    h1, h2 = hidden
    shapes = {
        "embed1.W": ((d, h1), d),
        "embed1.b": ((h1,), d),
        "embed2.W": ((h1, h2), h1),
        "embed2.b": ((h2,), h1),
        "hce.W": ((2 * k + 1, h2, h2), (2 * k + 1) * h2),
        "hce.b": ((h2,), (2 * k + 1) * h2),
        "sem.w": ((h2,), h2),
        "sem.b": ((1,), h2),
    }
    params = {}
    for name in PARAM_ORDER:
        shape, fan_in = shapes[name]
        if scheme == "zero":
            params[name] = np.zeros(shape, dtype=dtype)
        elif scheme == "uniform":
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        else:
            raise ValueError(f"unknown init scheme {scheme!r}")
    return params


def window_radius(params):
    return (params["hce.W"].shape[0] - 1) // 2


def zeros_like_params(params):
    return {name: np.zeros_like(p) for name, p in params.items()}


def embed(x, params, train=False, rng=None, rate=0.6):
    """Two fully connected layers, each followed by ReLU and dropout."""
    out, _ = _embed(x, params, train, rng, rate)
    return out


def _embed(x, params, train, rng, rate):
    if x.shape[-1] != params["embed1.W"].shape[0]:
        raise ShapeError(
            f"features have {x.shape[-1]} dims, model expects {params['embed1.W'].shape[0]}"
        )
    z1 = x @ params["embed1.W"] + params["embed1.b"]
    h1, mask1 = dropout(relu(z1), rate, train, rng)
    z2 = h1 @ params["embed2.W"] + params["embed2.b"]
    h2, mask2 = dropout(relu(z2), rate, train, rng)
    return h2, (z1, mask1, h1, z2, mask2)


def _windows(H, k):
    """Stack replicate-padded temporal neighbours: (..., m, c) -> (..., m, (2k+1)c)."""
    if k == 0:
        return H
    m = H.shape[-2]
    left = np.repeat(H[..., :1, :], k, axis=-2)
    right = np.repeat(H[..., -1:, :], k, axis=-2)
    Hpad = np.concatenate([left, H, right], axis=-2)
    return np.concatenate([Hpad[..., i : i + m, :] for i in range(2 * k + 1)], axis=-1)


def _windows_backward(dU, k, c):
    if k == 0:
        return dU
    m = dU.shape[-2]
    dpad = np.zeros(dU.shape[:-2] + (m + 2 * k, c), dtype=dU.dtype)
    for i in range(2 * k + 1):
        dpad[..., i : i + m, :] += dU[..., i * c : (i + 1) * c]
    dH = dpad[..., k : k + m, :].copy()
    dH[..., 0, :] += dpad[..., :k, :].sum(axis=-2)
    dH[..., -1, :] += dpad[..., k + m :, :].sum(axis=-2)
    return dH


def hce_forward(H, params):
    """Context regression: x~_t = sum_j W_j x_{t+j} + b over j in [-k, k].

    The kernel is shared across positions; out-of-range neighbours repeat the
    edge segment.
    """
    W = params["hce.W"]
    k = (W.shape[0] - 1) // 2
    c = W.shape[1]
    return _windows(H, k) @ W.reshape(-1, c) + params["hce.b"]


def semantic_scores(Xt, params):
    return sigmoid(Xt @ params["sem.w"] + params["sem.b"][0])


def _adjacent_cos(Xt):
    """Cosine between consecutive rows, shape (..., m-1).

    Two exactly-zero rows count as identical (cos 1); a single zero-norm row gives 0.
    """
    u = Xt[..., :-1, :]
    v = Xt[..., 1:, :]
    uu = np.sum(u * u, axis=-1)
    vv = np.sum(v * v, axis=-1)
    nn = np.sqrt(uu * vv)
    degenerate = nn <= NORM_EPS
    c = np.sum(u * v, axis=-1) / np.where(degenerate, 1.0, nn)
    both_zero = (uu == 0) & (vv == 0)
    c = np.where(degenerate, np.where(both_zero, 1.0, 0.0), c)
    return np.clip(c, -1.0, 1.0)


def variation_scores(Xt):
    """(2 - cos(x_{t-1}, x_t) - cos(x_t, x_{t+1})) / 4, edges compared with themselves."""
    m = Xt.shape[-2]
    lead = Xt.shape[:-2]
    if m == 1:
        return np.zeros(lead + (1,), dtype=Xt.dtype)
    c = _adjacent_cos(Xt)
    ones = np.ones(lead + (1,), dtype=c.dtype)
    left = np.concatenate([ones, c], axis=-1)
    right = np.concatenate([c, ones], axis=-1)
    return (2.0 - left - right) / 4.0


def _variation_backward(dvar, Xt):
    if Xt.shape[-2] == 1:
        return np.zeros_like(Xt)
    # d var_t / d cos(t, t+1) = -1/4 from position t and again from position t+1
    dc = -(dvar[..., :-1] + dvar[..., 1:]) / 4.0
    du, dv = cosine_backward(dc, Xt[..., :-1, :], Xt[..., 1:, :])
    dX = np.zeros_like(Xt)
    dX[..., :-1, :] += du
    dX[..., 1:, :] += dv
    return dX


def video_score(scores):
    """Largest pairwise |s_i - s_j| along the segment axis, i.e. max - min."""
    scores = np.asarray(scores)
    return scores.max(axis=-1) - scores.min(axis=-1)


def video_score_backward(dS, scores):
    """Subgradient of max - min: +dS at the argmax, -dS at the argmin (lowest index on ties)."""
    scores = np.asarray(scores)
    g = np.zeros_like(scores)
    hi = np.argmax(scores, axis=-1)[..., None]
    lo = np.argmin(scores, axis=-1)[..., None]
    dS = np.asarray(dS, dtype=scores.dtype)[..., None]
    np.put_along_axis(g, hi, np.take_along_axis(g, hi, -1) + dS, axis=-1)
    np.put_along_axis(g, lo, np.take_along_axis(g, lo, -1) - dS, axis=-1)
    return g


@dataclass
class ForwardCache:
    params: dict
    x: np.ndarray
    embed_acts: tuple
    H: np.ndarray
    U: np.ndarray
    Xt: np.ndarray
    hce_mask: np.ndarray
    Xd: np.ndarray
    sem: np.ndarray
    consumed: bool = field(default=False)


def forward(x, params, train=False, rng=None, rate=0.6, hce_dropout=False):
    """Score every segment. Returns (ScoreTriple, ForwardCache)."""
    x = np.asarray(x)
    if x.ndim < 2:
        raise ShapeError("features must be (m, d) or (B, m, d)")
    if train and rate > 0 and rng is None:
        raise ValueError("training-mode forward needs an rng for dropout")
    H, acts = _embed(x, params, train, rng, rate)
    k = window_radius(params)
    c = params["hce.W"].shape[1]
    U = _windows(H, k)
    Xt = U @ params["hce.W"].reshape(-1, c) + params["hce.b"]
    if hce_dropout:
        Xd, hmask = dropout(Xt, rate, train, rng)
    else:
        Xd, hmask = Xt, None
    sem = semantic_scores(Xd, params)
    var = variation_scores(Xd)
    scores = ScoreTriple(sem=sem, var=var, fused=0.5 * (sem + var))
    cache = ForwardCache(params, x, acts, H, U, Xt, hmask, Xd, sem)
    return scores, cache


def backward(dsem, dvar, cache, params):
    """Parameter gradients given upstream gradients at the semantic and variation scores.

    Callers holding a gradient at the fused score split it as half to each cue.
    """
    if cache.consumed or cache.params is not params:
        raise StaleCacheError("forward cache does not belong to this call")
    cache.consumed = True
    grads = {}
    Xd = cache.Xd
    dsem = np.asarray(dsem, dtype=Xd.dtype)
    dvar = np.asarray(dvar, dtype=Xd.dtype)
    dlogit = sigmoid_backward(dsem, cache.sem)
    grads["sem.w"] = np.tensordot(dlogit, Xd, axes=(tuple(range(dlogit.ndim)),) * 2)
    grads["sem.b"] = np.array([dlogit.sum()], dtype=Xd.dtype)
    dX = dlogit[..., None] * params["sem.w"] + _variation_backward(dvar, Xd)
    if cache.hce_mask is not None:
        dX = dX * cache.hce_mask

    c = params["hce.W"].shape[1]
    k = window_radius(params)
    dU, dWst, grads["hce.b"] = linear_backward(dX, cache.U, params["hce.W"].reshape(-1, c))
    grads["hce.W"] = dWst.reshape(params["hce.W"].shape)
    dH = _windows_backward(dU, k, c)

    z1, mask1, h1, z2, mask2 = cache.embed_acts
    dz2 = relu_backward(dH * mask2, z2)
    dh1, grads["embed2.W"], grads["embed2.b"] = linear_backward(dz2, h1, params["embed2.W"])
    dz1 = relu_backward(dh1 * mask1, z1)
    _, grads["embed1.W"], grads["embed1.b"] = linear_backward(dz1, cache.x, params["embed1.W"], input_grad=False)
    return {name: grads[name] for name in PARAM_ORDER}


def score(x, params):
    """Eval-mode scores for one or many sequences."""
    scores, _ = forward(x, params, train=False)
    return scores


def save_checkpoint(path, params, config=None):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params, config))


def checkpoint_bytes(params, config=None):
    """Serialize parameters in ``PARAM_ORDER`` after a JSON config echo, little-endian."""
    meta = json.dumps(config or {}, sort_keys=True, separators=(",", ":")).encode()
    out = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(meta)), meta]
    out.append(struct.pack("<I", len(PARAM_ORDER)))
    for name in PARAM_ORDER:
        arr = np.asarray(params[name])
        if arr.dtype not in (np.float32, np.float64):
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        enc = name.encode()
        out.append(struct.pack("<H", len(enc)) + enc)
        out.append(struct.pack("<BI", arr.dtype.itemsize, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C"))
    return b"".join(out)


def load_checkpoint(path):
    """Returns (params, config)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    return parse_checkpoint(buf)


def parse_checkpoint(buf):
    view = memoryview(buf)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(8)) != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, meta_len = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config = json.loads(bytes(take(meta_len)).decode())
    (count,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode()
        itemsize, ndim = struct.unpack("<BI", take(5))
        if itemsize not in (4, 8):
            raise CheckpointError(f"bad dtype size {itemsize} for {name}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dtype = np.dtype(f"<f{itemsize}")
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(take(n * itemsize), dtype=dtype).reshape(shape)
        params[name] = arr.astype(dtype.newbyteorder("="))
    if pos != len(view):
        raise CheckpointError("trailing bytes after checkpoint payload")
    missing = set(PARAM_ORDER) - set(params)
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters {sorted(missing)}")
    return {name: params[name] for name in PARAM_ORDER}, config
