"""AdaIN and its noise-perturbed variant (OSSA).

``adain`` re-styles a feature map with given channel statistics.
``ossa`` does the same after scaling the target sigma by ``alpha`` and the
target mu by ``beta``, both drawn from Normal(1, std^2) independently per
instance and channel on every call.

Random streams are ``numpy.random.Generator`` objects on PCG64, which gives
the same sequence for a given seed on every platform numpy supports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stats import (
    DEFAULT_EPS,
    ChannelStats,
    InvalidInputError,
    affine_normalize,
    affine_normalize_backward,
    check_feature_map,
    moments,
)

DEFAULT_NOISE_STD = 0.75
GRANULARITIES = ("per_channel_per_instance",)


class ShapeMismatchError(InvalidInputError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True)
class NoiseSpec:
    std: float = DEFAULT_NOISE_STD
    mean: float = 1.0
    granularity: str = "per_channel_per_instance"

    def __post_init__(self):
        if not np.isfinite(self.std) or self.std < 0:
            raise InvalidInputError(f"noise std must be finite and >= 0, got {self.std}")
        if self.mean != 1.0:
            raise InvalidInputError("multiplicative noise must be centred at 1.0")
        if self.granularity not in GRANULARITIES:
            raise InvalidInputError(f"unknown noise granularity {self.granularity!r}")


def sample_perturbation(
    rng: np.random.Generator, spec: NoiseSpec, shape: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(alpha, beta)``, each of ``shape``, from Normal(1, spec.std^2).

    No clamping: negative factors are kept.
    """
    alpha = rng.normal(spec.mean, spec.std, size=shape)
    beta = rng.normal(spec.mean, spec.std, size=shape)
    return alpha, beta


def broadcast_stats(target: ChannelStats, batch: int, channels: int) -> tuple[np.ndarray, np.ndarray]:
    tb, tc = target.shape
    if tc != channels or tb not in (1, batch):
        raise ShapeMismatchError(
            f"target stats shaped {target.shape} cannot broadcast to (B={batch}, C={channels})"
        )
    shape = (batch, channels)
    return np.broadcast_to(target.mu, shape), np.broadcast_to(target.sigma, shape)


def _source_moments(x, eps):
    mu, var = moments(x, validate=False)
    return mu, np.sqrt(var + eps)


def adain(x, target: ChannelStats, eps: float = DEFAULT_EPS) -> np.ndarray:
    x = check_feature_map(x)
    t_mu, t_sigma = broadcast_stats(target, *x.shape[:2])
    mu, sigma = _source_moments(x, eps)
    return affine_normalize(x, mu, sigma, t_sigma, t_mu)


def ossa(
    x,
    target: ChannelStats,
    rng: np.random.Generator | None = None,
    spec: NoiseSpec = NoiseSpec(),
    eps: float = DEFAULT_EPS,
    *,
    alpha=None,
    beta=None,
    return_noise: bool = False,
):
    """AdaIN towards ``(alpha * target.sigma, beta * target.mu)``.

    ``alpha``/``beta`` may be injected; otherwise a fresh pair is drawn from
    ``rng``. With ``return_noise`` the pair is returned alongside the output.
    """
    x = check_feature_map(x)
    b, c = x.shape[:2]
    t_mu, t_sigma = broadcast_stats(target, b, c)
    if alpha is None or beta is None:
        if rng is None:
            raise InvalidInputError("ossa needs an rng unless alpha and beta are given")
        alpha, beta = sample_perturbation(rng, spec, (b, c))
    alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (b, c))
    beta = np.broadcast_to(np.asarray(beta, dtype=np.float64), (b, c))
    mu, sigma = _source_moments(x, eps)
    out = affine_normalize(x, mu, sigma, alpha * t_sigma, beta * t_mu)
    if return_noise:
        return out, alpha, beta
    return out


def style_backward(grad_out, x, scale, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Gradient w.r.t. ``x`` of ``scale * instance_normalize(x) + shift``.

    ``scale`` is ``target.sigma`` for AdaIN and ``alpha * target.sigma`` for
    OSSA; target statistics and noise are constants.
    """
    x = check_feature_map(x)
    mu, sigma = _source_moments(x, eps)
    scale = np.broadcast_to(np.asarray(scale, dtype=np.float64), x.shape[:2])
    return affine_normalize_backward(grad_out, x, mu, sigma, scale)
