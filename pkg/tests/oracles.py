"""Scalar-loop reference computations used as independent test oracles.

Deliberately slow and literal: plain Python loops over every index, no
numpy reductions, no shared code with the package.
"""

import math

import numpy as np


def mean_loop(x):
    b_, c_, h_, w_ = x.shape
    out = np.zeros((b_, c_))
    for b in range(b_):
        for c in range(c_):
            s = 0.0
            for h in range(h_):
                for w in range(w_):
                    s += float(x[b, c, h, w])
            out[b, c] = s / (h_ * w_)
    return out


def std_loop(x, eps):
    b_, c_, h_, w_ = x.shape
    mu = mean_loop(x)
    out = np.zeros((b_, c_))
    for b in range(b_):
        for c in range(c_):
            s = 0.0
            for h in range(h_):
                for w in range(w_):
                    d = float(x[b, c, h, w]) - mu[b, c]
                    s += d * d
            out[b, c] = math.sqrt(s / (h_ * w_) + eps)
    return out


def restyle_loop(x, scale, shift, eps):
    """out[b,c,h,w] = scale[b,c] * (x - mu) / sigma + shift[b,c], elementwise."""
    mu = mean_loop(x)
    sd = std_loop(x, eps)
    out = np.zeros(x.shape)
    b_, c_, h_, w_ = x.shape
    for b in range(b_):
        for c in range(c_):
            for h in range(h_):
                for w in range(w_):
                    out[b, c, h, w] = scale[b][c] * ((float(x[b, c, h, w]) - mu[b, c]) / sd[b, c]) + shift[b][c]
    return out


def central_difference(f, x, h=1e-6):
    """Gradient of scalar ``f`` at ``x`` by central finite differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def conv_loop(x, w, b, stride, pad):
    """Direct 2-D cross-correlation, the definition written out."""
    n, cin, hh, ww = x.shape
    cout, _, k, _ = w.shape
    ho = (hh + 2 * pad - k) // stride + 1
    wo = (ww + 2 * pad - k) // stride + 1
    xp = np.zeros((n, cin, hh + 2 * pad, ww + 2 * pad))
    xp[:, :, pad : pad + hh, pad : pad + ww] = x
    out = np.zeros((n, cout, ho, wo))
    for i in range(n):
        for o in range(cout):
            for r in range(ho):
                for c in range(wo):
                    s = b[o]
                    for ci in range(cin):
                        for a in range(k):
                            for d in range(k):
                                s += w[o, ci, a, d] * xp[i, ci, r * stride + a, c * stride + d]
                    out[i, o, r, c] = s
    return out
