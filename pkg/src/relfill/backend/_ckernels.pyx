# cython: language_level=3
"""Compiled kernels for the numerical hot paths.

Same API and arithmetic as pykernels; fused C loops avoid the temporary
arrays and per-call overhead that dominate at desk-scale tensor sizes.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, pow, sqrt, tanh

cnp.import_array()

NAME = "c"

cdef double GELU_C = sqrt(2.0 / 3.14159265358979323846)
cdef double GELU_A = 0.044715


def softmax_rows(double[:, ::1] x):
    # hybrid: fused C reductions around numpy's SIMD exp, which beats libm's
    # scalar exp by a wide margin on row widths >~ 32
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1]
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    cdef double mx, s
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, k):
            if x[i, j] > mx:
                mx = x[i, j]
        for j in range(k):
            o[i, j] = x[i, j] - mx
    np.exp(out, out=out)
    for i in range(n):
        s = 0.0
        for j in range(k):
            s += o[i, j]
        s = 1.0 / s
        for j in range(k):
            o[i, j] *= s
    return out


def softmax_rows_bwd(double[:, ::1] p, double[:, ::1] dp):
    cdef Py_ssize_t n = p.shape[0], k = p.shape[1]
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] dx = out
    cdef Py_ssize_t i, j
    cdef double inner
    for i in range(n):
        inner = 0.0
        for j in range(k):
            inner += dp[i, j] * p[i, j]
        for j in range(k):
            dx[i, j] = p[i, j] * (dp[i, j] - inner)
    return out


def layernorm_fwd(double[:, ::1] x, double[::1] g, double[::1] b, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    y_arr = np.empty((n, d), dtype=np.float64)
    mu_arr = np.empty(n, dtype=np.float64)
    rstd_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double[::1] mu = mu_arr
    cdef double[::1] rstd = rstd_arr
    cdef Py_ssize_t i, j
    cdef double m, var, diff, r
    for i in range(n):
        m = 0.0
        for j in range(d):
            m += x[i, j]
        m /= d
        var = 0.0
        for j in range(d):
            diff = x[i, j] - m
            var += diff * diff
        var /= d
        r = 1.0 / sqrt(var + eps)
        mu[i] = m
        rstd[i] = r
        for j in range(d):
            y[i, j] = (x[i, j] - m) * r * g[j] + b[j]
    return y_arr, mu_arr, rstd_arr


def layernorm_bwd(double[:, ::1] x, double[::1] g, double[::1] mu,
                  double[::1] rstd, double[:, ::1] dy):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    dx_arr = np.empty((n, d), dtype=np.float64)
    dg_arr = np.zeros(d, dtype=np.float64)
    db_arr = np.zeros(d, dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] dg = dg_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t i, j
    cdef double xhat, dxhat, m1, m2
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xhat = (x[i, j] - mu[i]) * rstd[i]
            dxhat = dy[i, j] * g[j]
            dg[j] += dy[i, j] * xhat
            db[j] += dy[i, j]
            m1 += dxhat
            m2 += dxhat * xhat
        m1 /= d
        m2 /= d
        for j in range(d):
            xhat = (x[i, j] - mu[i]) * rstd[i]
            dxhat = dy[i, j] * g[j]
            dx[i, j] = rstd[i] * (dxhat - m1 - xhat * m2)
    return dx_arr, dg_arr, db_arr


def gelu_fwd(x):
    flat = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    out = np.empty_like(flat)
    cdef double[::1] xi = flat
    cdef double[::1] yo = out
    cdef Py_ssize_t i, n = flat.shape[0]
    cdef double u
    for i in range(n):
        u = GELU_C * (xi[i] + GELU_A * xi[i] * xi[i] * xi[i])
        yo[i] = 0.5 * xi[i] * (1.0 + tanh(u))
    return out.reshape(np.shape(x))


def gelu_bwd(x, dy):
    xf = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    df = np.ascontiguousarray(dy, dtype=np.float64).reshape(-1)
    out = np.empty_like(xf)
    cdef double[::1] xi = xf
    cdef double[::1] dyi = df
    cdef double[::1] dxo = out
    cdef Py_ssize_t i, n = xf.shape[0]
    cdef double u, t, du
    for i in range(n):
        u = GELU_C * (xi[i] + GELU_A * xi[i] * xi[i] * xi[i])
        t = tanh(u)
        du = GELU_C * (1.0 + 3.0 * GELU_A * xi[i] * xi[i])
        dxo[i] = dyi[i] * (0.5 * (1.0 + t) + 0.5 * xi[i] * (1.0 - t * t) * du)
    return out.reshape(np.shape(x))


def scatter_add_rows(double[:, ::1] out, cnp.int64_t[::1] idx, double[:, ::1] src):
    cdef Py_ssize_t n = src.shape[0], d = src.shape[1]
    cdef Py_ssize_t i, j, row
    for i in range(n):
        row = idx[i]
        for j in range(d):
            out[row, j] += src[i, j]
    return None


def adamw_update(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
                 long step, double lr, double beta1, double beta2,
                 double eps, double weight_decay):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double bc1 = 1.0 - pow(beta1, step)
    cdef double bc2 = 1.0 - pow(beta2, step)
    cdef double decay = 1.0 - lr * weight_decay
    for i in range(n):
        if weight_decay != 0.0:
            p[i] *= decay
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        p[i] -= lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps)
    return None


def cross_entropy_fwd(double[:, ::1] logits, cnp.int64_t[::1] targets, double[::1] weights):
    # same hybrid layout as softmax_rows: numpy SIMD exp between C reductions
    cdef Py_ssize_t n = logits.shape[0], k = logits.shape[1]
    probs_arr = np.empty((n, k), dtype=np.float64)
    maxes_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] probs = probs_arr
    cdef double[::1] maxes = maxes_arr
    cdef Py_ssize_t i, j
    cdef double mx, s, inv, loss = 0.0
    for i in range(n):
        mx = logits[i, 0]
        for j in range(1, k):
            if logits[i, j] > mx:
                mx = logits[i, j]
        maxes[i] = mx
        for j in range(k):
            probs[i, j] = logits[i, j] - mx
    np.exp(probs_arr, out=probs_arr)
    for i in range(n):
        s = 0.0
        for j in range(k):
            s += probs[i, j]
        loss += weights[i] * (log(s) - (logits[i, targets[i]] - maxes[i]))
        inv = 1.0 / s
        for j in range(k):
            probs[i, j] *= inv
    return loss, probs_arr


def cross_entropy_bwd(double[:, ::1] probs, cnp.int64_t[::1] targets,
                      double[::1] weights, double upstream):
    cdef Py_ssize_t n = probs.shape[0], k = probs.shape[1]
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] d = out
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(k):
            d[i, j] = upstream * probs[i, j] * weights[i]
        d[i, targets[i]] -= upstream * weights[i]
    return out
