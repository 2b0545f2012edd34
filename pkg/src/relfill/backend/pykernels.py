"""Pure numpy implementations of the numerical hot-path kernels.

Fallback used when the compiled extension is unavailable (and the reference
the extension is tested against). All kernels take and return C-contiguous
float64 arrays.
"""

from __future__ import annotations

import numpy as np

NAME = "python"

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_bwd(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    inner = (dp * p).sum(axis=1, keepdims=True)
    return p * (dp - inner)


def layernorm_fwd(
    x: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mu = x.mean(axis=1)
    var = ((x - mu[:, None]) ** 2).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mu[:, None]) * rstd[:, None] * g[None, :] + b[None, :]
    return y, mu, rstd


def layernorm_bwd(
    x: np.ndarray,
    g: np.ndarray,
    mu: np.ndarray,
    rstd: np.ndarray,
    dy: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat = (x - mu[:, None]) * rstd[:, None]
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g[None, :]
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def gelu_fwd(x: np.ndarray) -> np.ndarray:
    u = _GELU_C * (x + _GELU_A * x**3)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_bwd(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    u = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du)


def scatter_add_rows(out: np.ndarray, idx: np.ndarray, src: np.ndarray) -> None:
    """out[idx[i], :] += src[i, :], accumulating over repeated indices."""
    np.add.at(out, idx, src)


def adamw_update(
    p: np.ndarray,
    g: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    step: int,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    weight_decay: float,
) -> None:
    """One decoupled-weight-decay Adam update, in place on p, m, and v."""
    if weight_decay != 0.0:
        p *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1**step)
    vhat = v / (1.0 - beta2**step)
    p -= lr * mhat / (np.sqrt(vhat) + eps)


def cross_entropy_fwd(
    logits: np.ndarray, targets: np.ndarray, weights: np.ndarray
) -> tuple[float, np.ndarray]:
    """Weighted sum of -log softmax(logits)[target] per row; returns probs too."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=1)
    probs = e / z[:, None]
    rows = np.arange(logits.shape[0])
    nll = np.log(z) - shifted[rows, targets]
    return float((weights * nll).sum()), probs


def cross_entropy_bwd(
    probs: np.ndarray, targets: np.ndarray, weights: np.ndarray, upstream: float
) -> np.ndarray:
    d = probs * weights[:, None]
    rows = np.arange(probs.shape[0])
    d[rows, targets] -= weights
    d *= upstream
    return d
