"""Dense numeric kernel: forward/backward primitives, Adagrad and a gradient checker.

Matrices are plain numpy arrays. Every primitive that the model differentiates
through has an explicit backward function here, so the finite-difference suite
can cover each one in isolation.
"""

import numpy as np

# Norm products at or below this are treated as zero-norm operands.
NORM_EPS = 1e-12


class ShapeError(ValueError):
    """Raised on dimension mismatch between operands."""


def linear_forward(x, W, b):
    """y = x W + b applied over the last axis of ``x``."""
    x = np.asarray(x)
    W = np.asarray(W)
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"input has {x.shape[-1]} columns, weight expects {W.shape[0]}")
    if np.shape(b) != (W.shape[1],):
        raise ShapeError(f"bias shape {np.shape(b)} does not match output dim {W.shape[1]}")
    return x @ W + b


def linear_backward(dy, x, W, input_grad=True):
    """Return (dx, dW, db) for y = x W + b; leading axes of x are batch axes.

    ``dx`` is None when ``input_grad`` is false.
    """
    dx = dy @ W.T if input_grad else None
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dx, x2.T @ dy2, dy2.sum(axis=0)


def relu(x):
    return np.maximum(x, 0)


def relu_backward(dy, x):
    return dy * (x > 0)


def sigmoid(x):
    """Logistic function, evaluated without overflow for large |x|."""
    return np.exp(-np.logaddexp(0, -x))


def sigmoid_backward(dy, s):
    """Backward through the sigmoid given its output ``s``."""
    return dy * s * (1.0 - s)


def cosine_similarity(u, v, return_flag=False):
    """Row-wise cosine similarity over the last axis.

    A zero-norm operand yields 0 instead of a division by zero; with
    ``return_flag`` the boolean degenerate mask is returned as well.
    """
    u = np.asarray(u)
    v = np.asarray(v)
    dot = np.sum(u * v, axis=-1)
    nn = np.sqrt(np.sum(u * u, axis=-1) * np.sum(v * v, axis=-1))
    degenerate = nn <= NORM_EPS
    c = np.where(degenerate, 0.0, dot / np.where(degenerate, 1.0, nn))
    c = np.clip(c, -1.0, 1.0)
    if c.ndim == 0:
        c = c[()]
    if return_flag:
        return c, degenerate
    return c


def cosine_backward(dc, u, v):
    """Gradients (du, dv) of c = cos(u, v) scaled by upstream ``dc``.

    Degenerate (zero-norm) pairs receive zero gradient.
    """
    uu = np.sum(u * u, axis=-1, keepdims=True)
    vv = np.sum(v * v, axis=-1, keepdims=True)
    nn = np.sqrt(uu * vv)
    ok = nn > NORM_EPS
    safe_nn = np.where(ok, nn, 1.0)
    c = np.sum(u * v, axis=-1, keepdims=True) / safe_nn
    dc = np.asarray(dc)[..., None] * ok
    du = dc * (v / safe_nn - c * u / np.where(ok, uu, 1.0))
    dv = dc * (u / safe_nn - c * v / np.where(ok, vv, 1.0))
    return du, dv


def dropout(x, rate, train, rng):
    """Inverted dropout. Returns (output, mask); the mask already carries the 1/(1-rate) scale."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0:
        return x, np.ones_like(x)
    draw = x.dtype if x.dtype in (np.float32, np.float64) else np.float64
    keep = rng.random(x.shape, dtype=draw) >= rate
    mask = keep.astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


class Adagrad:
    """Adagrad over a dict of named parameter arrays, updated in place."""

    def __init__(self, params, eps=1e-10):
        self.eps = eps
        self.state = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, params, grads, lr):
        adagrad_step(params, grads, self.state, lr, self.eps)


def adagrad_step(params, grads, state, lr, eps=1e-10):
    """state += g^2; param -= lr * g / (sqrt(state) + eps), in place per entry."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state[name].shape != p.shape:
            raise ShapeError(f"shape mismatch for parameter {name!r}")
        acc = state[name]
        acc += g * g
        denom = np.sqrt(acc) + eps
        # entries that have never seen a gradient stay untouched (0/0 when eps=0)
        np.subtract(p, lr * g / np.where(denom > 0, denom, 1.0), out=p)


def grad_check(fn, grad, x, eps=1e-5, floor=1e-6):
    """Worst relative error between an analytic gradient and central differences.

    ``fn`` maps a float array shaped like ``x`` to a scalar; ``grad`` is the
    analytic gradient at ``x``. Relative error per component is
    ``|analytic - numeric| / max(|numeric|, floor)``.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64).reshape(x.shape)
    numeric = numerical_gradient(fn, x, eps)
    err = np.abs(grad - numeric) / np.maximum(np.abs(numeric), floor)
    return float(err.max()) if err.size else 0.0


def numerical_gradient(fn, x, eps=1e-5):
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    g = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = fn(x)
        flat[i] = orig - eps
        fm = fn(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite evaluation at component {i}")
        g[i] = (fp - fm) / (2 * eps)
    return out
