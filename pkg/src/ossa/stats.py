"""Per-instance, per-channel spatial statistics and instance normalization.

Every kernel views a feature map ``x`` of shape ``(B, C, H, W)`` as
``(B, C, H*W)`` and reduces over the last axis. Statistics are always
returned in float64; normalized maps keep the dtype of the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accel import NUMBA_ENABLED, njit

DEFAULT_EPS = 1e-5


class InvalidInputError(ValueError):
    """Raised for malformed or non-finite feature maps."""


@dataclass(frozen=True)
class ChannelStats:
    """Channel means and standard deviations, both shaped ``(B, C)``."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if mu.ndim == 1:
            mu = mu[None, :]
        if sigma.ndim == 1:
            sigma = sigma[None, :]
        if mu.ndim != 2 or mu.shape != sigma.shape:
            raise InvalidInputError(
                f"mu and sigma must share a (B, C) shape, got {mu.shape} and {sigma.shape}"
            )
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise InvalidInputError("channel statistics must be finite")
        if np.any(sigma < 0):
            raise InvalidInputError("sigma entries must be non-negative")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mu.shape


def check_feature_map(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise InvalidInputError(f"feature map must be rank 4 (B, C, H, W), got shape {x.shape}")
    if min(x.shape) < 1:
        raise InvalidInputError(f"feature map has an empty dimension: {x.shape}")
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("feature map contains NaN or Inf")
    return x


def _check_eps(eps: float) -> float:
    if not eps > 0:
        raise InvalidInputError(f"eps must be positive, got {eps}")
    return float(eps)


def _flat(x: np.ndarray) -> np.ndarray:
    b, c, h, w = x.shape
    return np.ascontiguousarray(x).reshape(b, c, h * w)


# --- numba kernels -----------------------------------------------------------


@njit(cache=True)
def _moments_nb(x3):
    b_, c_, n = x3.shape
    mu = np.empty((b_, c_), dtype=np.float64)
    var = np.empty((b_, c_), dtype=np.float64)
    for b in range(b_):
        for c in range(c_):
            s = 0.0
            for i in range(n):
                s += x3[b, c, i]
            m = s / n
            ss = 0.0
            for i in range(n):
                d = x3[b, c, i] - m
                ss += d * d
            mu[b, c] = m
            var[b, c] = ss / n
    return mu, var


@njit(cache=True)
def _affine_normalize_nb(x3, mu, sigma, scale, shift, out):
    b_, c_, n = x3.shape
    for b in range(b_):
        for c in range(c_):
            m = mu[b, c]
            inv = 1.0 / sigma[b, c]
            s = scale[b, c]
            t = shift[b, c]
            for i in range(n):
                out[b, c, i] = s * ((x3[b, c, i] - m) * inv) + t


@njit(cache=True)
def _normalize_nb(x3, mu, sigma, out):
    b_, c_, n = x3.shape
    for b in range(b_):
        for c in range(c_):
            m = mu[b, c]
            inv = 1.0 / sigma[b, c]
            for i in range(n):
                out[b, c, i] = (x3[b, c, i] - m) * inv


@njit(cache=True)
def _affine_normalize_backward_nb(x3, mu, sigma, scale, g3, dx):
    b_, c_, n = x3.shape
    for b in range(b_):
        for c in range(c_):
            m = mu[b, c]
            inv = 1.0 / sigma[b, c]
            sg = 0.0
            sgx = 0.0
            for i in range(n):
                g = g3[b, c, i]
                sg += g
                sgx += g * (x3[b, c, i] - m) * inv
            mg = sg / n
            mgx = sgx / n
            k = scale[b, c] * inv
            for i in range(n):
                xh = (x3[b, c, i] - m) * inv
                dx[b, c, i] = k * (g3[b, c, i] - mg - xh * mgx)


# --- numpy fallbacks ---------------------------------------------------------


def _moments_np(x3):
    x64 = x3.astype(np.float64, copy=False)
    mu = x64.mean(axis=-1)
    var = np.square(x64 - mu[..., None]).mean(axis=-1)
    return mu, var


def _affine_normalize_np(x3, mu, sigma, scale, shift, out):
    xh = (x3.astype(np.float64, copy=False) - mu[..., None]) * (1.0 / sigma)[..., None]
    out[...] = scale[..., None] * xh + shift[..., None]


def _normalize_np(x3, mu, sigma, out):
    out[...] = (x3.astype(np.float64, copy=False) - mu[..., None]) * (1.0 / sigma)[..., None]


def _affine_normalize_backward_np(x3, mu, sigma, scale, g3, dx):
    inv = (1.0 / sigma)[..., None]
    xh = (x3.astype(np.float64, copy=False) - mu[..., None]) * inv
    g = g3.astype(np.float64, copy=False)
    mg = g.mean(axis=-1, keepdims=True)
    mgx = (g * xh).mean(axis=-1, keepdims=True)
    dx[...] = scale[..., None] * inv * (g - mg - xh * mgx)


if NUMBA_ENABLED:
    _moments = _moments_nb
    _affine_normalize = _affine_normalize_nb
    _normalize = _normalize_nb
    _affine_normalize_backward = _affine_normalize_backward_nb
else:
    _moments = _moments_np
    _affine_normalize = _affine_normalize_np
    _normalize = _normalize_np
    _affine_normalize_backward = _affine_normalize_backward_np


# --- public API --------------------------------------------------------------


def moments(x, validate: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Return channel mean and population variance, each ``(B, C)`` float64."""
    if validate:
        x = check_feature_map(x)
    return _moments(_flat(x))


def channel_mean(x) -> np.ndarray:
    return moments(x)[0]


def channel_std(x, eps: float = DEFAULT_EPS) -> np.ndarray:
    """sqrt(population variance + eps) per instance and channel."""
    eps = _check_eps(eps)
    return np.sqrt(moments(x)[1] + eps)


def channel_stats(x, eps: float = DEFAULT_EPS) -> ChannelStats:
    eps = _check_eps(eps)
    mu, var = moments(x)
    return ChannelStats(mu, np.sqrt(var + eps))


def instance_normalize(x, eps: float = DEFAULT_EPS) -> np.ndarray:
    eps = _check_eps(eps)
    x = check_feature_map(x)
    x3 = _flat(x)
    mu, var = _moments(x3)
    out = np.empty_like(x3)
    _normalize(x3, mu, np.sqrt(var + eps), out)
    return out.reshape(x.shape)


def affine_normalize(x, mu, sigma, scale, shift) -> np.ndarray:
    """``scale * (x - mu) / sigma + shift`` with all four terms shaped ``(B, C)``.

    Shared forward kernel of AdaIN and OSSA; ``x`` is assumed validated.
    """
    x3 = _flat(x)
    out = np.empty_like(x3)
    _affine_normalize(
        x3,
        np.ascontiguousarray(mu, dtype=np.float64),
        np.ascontiguousarray(sigma, dtype=np.float64),
        np.ascontiguousarray(scale, dtype=np.float64),
        np.ascontiguousarray(shift, dtype=np.float64),
        out,
    )
    return out.reshape(x.shape)


def affine_normalize_backward(grad_out, x, mu, sigma, scale) -> np.ndarray:
    """Gradient of ``affine_normalize`` w.r.t. ``x``.

    ``mu`` and ``sigma`` are the statistics of ``x`` itself, so the
    dependence of both on ``x`` is included. ``scale`` and ``shift`` are
    treated as constants.
    """
    x3 = _flat(x)
    g3 = _flat(np.asarray(grad_out, dtype=x.dtype))
    dx = np.empty_like(x3)
    _affine_normalize_backward(
        x3,
        np.ascontiguousarray(mu, dtype=np.float64),
        np.ascontiguousarray(sigma, dtype=np.float64),
        np.ascontiguousarray(scale, dtype=np.float64),
        g3,
        dx,
    )
    return dx.reshape(x.shape)


def instance_normalize_backward(grad_out, x, eps: float = DEFAULT_EPS) -> np.ndarray:
    x = check_feature_map(x)
    mu, var = _moments(_flat(x))
    return affine_normalize_backward(grad_out, x, mu, np.sqrt(var + eps), np.ones_like(mu))
