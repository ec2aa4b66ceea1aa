"""Minimal conv-net layers with explicit forward/backward passes.

Convolutions go through im2col + a BLAS matmul. The patch gather/scatter
loops are the hot part and have numba kernels; the numpy versions loop
over kernel offsets instead of pixels.
"""

from __future__ import annotations

import numpy as np

from ._accel import NUMBA_ENABLED, njit


@njit(cache=True)
def _im2col_nb(x, k, stride, pad, ho, wo, cols):
    b_, c_, h, w = x.shape
    for c in range(c_):
        for ki in range(k):
            for kj in range(k):
                r = (c * k + ki) * k + kj
                for b in range(b_):
                    base = b * ho * wo
                    for i in range(ho):
                        row = i * stride + ki - pad
                        off = base + i * wo
                        if row < 0 or row >= h:
                            for j in range(wo):
                                cols[r, off + j] = 0.0
                            continue
                        for j in range(wo):
                            col = j * stride + kj - pad
                            if col < 0 or col >= w:
                                cols[r, off + j] = 0.0
                            else:
                                cols[r, off + j] = x[b, c, row, col]


@njit(cache=True)
def _col2im_nb(dcols, k, stride, pad, ho, wo, dx):
    b_, c_, h, w = dx.shape
    for c in range(c_):
        for ki in range(k):
            for kj in range(k):
                r = (c * k + ki) * k + kj
                for b in range(b_):
                    base = b * ho * wo
                    for i in range(ho):
                        row = i * stride + ki - pad
                        if row < 0 or row >= h:
                            continue
                        off = base + i * wo
                        for j in range(wo):
                            col = j * stride + kj - pad
                            if col >= 0 and col < w:
                                dx[b, c, row, col] += dcols[r, off + j]


def _im2col_np(x, k, stride, pad, ho, wo, cols):
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    cols[...] = win.transpose(1, 4, 5, 0, 2, 3).reshape(cols.shape)


def _col2im_np(dcols, k, stride, pad, ho, wo, dx):
    b_, c_, h, w = dx.shape
    dxp = np.zeros((b_, c_, h + 2 * pad, w + 2 * pad), dtype=dx.dtype)
    d = dcols.reshape(c_, k, k, b_, ho, wo)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += d[
                :, ki, kj
            ].transpose(1, 0, 2, 3)
    dx += dxp[:, :, pad : pad + h, pad : pad + w]


if NUMBA_ENABLED:
    _im2col, _col2im = _im2col_nb, _col2im_nb
else:
    _im2col, _col2im = _im2col_np, _col2im_np


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """Patch matrix shaped ``(C*k*k, B*Ho*Wo)``."""
    b, c, h, w = x.shape
    ho, wo = conv_out_size(h, k, stride, pad), conv_out_size(w, k, stride, pad)
    cols = np.empty((c * k * k, b * ho * wo), dtype=x.dtype)
    _im2col(np.ascontiguousarray(x), k, stride, pad, ho, wo, cols)
    return cols


def col2im(dcols: np.ndarray, x_shape, k: int, stride: int, pad: int) -> np.ndarray:
    b, c, h, w = x_shape
    ho, wo = conv_out_size(h, k, stride, pad), conv_out_size(w, k, stride, pad)
    dx = np.zeros((b, c, h, w), dtype=dcols.dtype)
    _col2im(np.ascontiguousarray(dcols), k, stride, pad, ho, wo, dx)
    return dx


class Conv2d:
    """3x3-style convolution with bias; weights shaped (out, in, k, k)."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray, stride: int = 1, pad: int = 1):
        self.weight = weight
        self.bias = bias
        self.stride = stride
        self.pad = pad

    @property
    def k(self) -> int:
        return self.weight.shape[-1]

    def forward(self, x: np.ndarray, need_cache: bool = False):
        b, _, h, w = x.shape
        cout = self.weight.shape[0]
        ho = conv_out_size(h, self.k, self.stride, self.pad)
        wo = conv_out_size(w, self.k, self.stride, self.pad)
        cols = im2col(x, self.k, self.stride, self.pad)
        out = self.weight.reshape(cout, -1) @ cols
        out += self.bias[:, None]
        out = np.ascontiguousarray(out.reshape(cout, b, ho, wo).transpose(1, 0, 2, 3))
        return (out, (cols, x.shape)) if need_cache else out

    def backward(self, dout: np.ndarray, cache, need_dx: bool = True):
        cols, x_shape = cache
        cout = self.weight.shape[0]
        d2 = dout.transpose(1, 0, 2, 3).reshape(cout, -1)
        dw = (d2 @ cols.T).reshape(self.weight.shape)
        db = d2.sum(axis=1)
        dx = None
        if need_dx:
            dcols = self.weight.reshape(cout, -1).T @ d2
            dx = col2im(dcols, x_shape, self.k, self.stride, self.pad)
        return dx, dw, db


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. ``logits``."""
    z = logits.astype(np.float64) - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), (grad / n).astype(logits.dtype)
