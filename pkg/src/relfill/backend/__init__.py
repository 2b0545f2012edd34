"""Kernel backend selection: compiled Cython extension or numpy fallback.

The compiled backend is preferred when importable; set RELFILL_BACKEND to
"python" or "c" to force one, or call set_backend() at runtime (the benchmark
and the test suite switch backends this way). Both implement the same API and
the same arithmetic, so results agree to floating-point reordering error.
"""

from __future__ import annotations

import os

from . import pykernels

_IMPLS = {"python": pykernels}

try:  # pragma: no cover - exercised only when the extension is built
    from . import _ckernels

    _IMPLS["c"] = _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None

_FORCED = os.environ.get("RELFILL_BACKEND")
if _FORCED is not None and _FORCED not in _IMPLS:
    raise ImportError(
        f"RELFILL_BACKEND={_FORCED!r} requested but only {sorted(_IMPLS)} available"
    )
_current = _IMPLS[_FORCED] if _FORCED else _IMPLS.get("c", pykernels)


def available_backends() -> list[str]:
    return sorted(_IMPLS)


def backend_name() -> str:
    return _current.NAME


def set_backend(name: str) -> None:
    global _current
    if name not in _IMPLS:
        raise ValueError(f"unknown backend {name!r}; available: {sorted(_IMPLS)}")
    _current = _IMPLS[name]


def softmax_rows(x):
    return _current.softmax_rows(x)


def softmax_rows_bwd(p, dp):
    return _current.softmax_rows_bwd(p, dp)


def layernorm_fwd(x, g, b, eps):
    return _current.layernorm_fwd(x, g, b, eps)


def layernorm_bwd(x, g, mu, rstd, dy):
    return _current.layernorm_bwd(x, g, mu, rstd, dy)


def gelu_fwd(x):
    return _current.gelu_fwd(x)


def gelu_bwd(x, dy):
    return _current.gelu_bwd(x, dy)


def scatter_add_rows(out, idx, src):
    return _current.scatter_add_rows(out, idx, src)


def adamw_update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    return _current.adamw_update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay)


def cross_entropy_fwd(logits, targets, weights):
    return _current.cross_entropy_fwd(logits, targets, weights)


def cross_entropy_bwd(probs, targets, weights, upstream):
    return _current.cross_entropy_bwd(probs, targets, weights, upstream)
