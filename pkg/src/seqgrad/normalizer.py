"""Logit normalization with learnable per-channel scale and offset.

Instance mode normalizes each channel independently across positions; layer
mode normalizes all N*M entries jointly with a single shared scale/offset
(the stabler choice for wide alphabets such as proteins). The forward pass is

    l_norm   = (l - mean) / denom            denom: sqrt(var + 1e-6) or (var + 1e-6)
    l_scaled = l_norm * gamma + beta

Three backward variants are provided, because frameworks differ on how much
of the chain rule to apply to the normalization statistics:

* ``PAPER_LITERAL``   -- grad_l = upstream * gamma (statistics and the
  denominator treated as constants),
* ``STOP_GRAD_STATS`` -- grad_l = upstream * gamma / denom,
* ``FULL_CHAIN``      -- exact derivative including the mean/variance terms,
  which makes grad_l orthogonal to constant shifts per group.

All variants share grad_beta = sum(upstream) and
grad_gamma = sum(upstream * l_norm), pooled over all channels in layer mode.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegenerateInput, DimensionMismatch

__all__ = [
    "NormMode",
    "DenomKind",
    "GradMode",
    "ScaleOffset",
    "NormCache",
    "normalize",
    "backprop_normalize",
]

_VAR_EPS = 1e-6


class NormMode(Enum):
    INSTANCE = "instance"
    LAYER = "layer"


class DenomKind(Enum):
    STD = "std"
    VARIANCE = "variance"


class GradMode(Enum):
    PAPER_LITERAL = "paper_literal"
    STOP_GRAD_STATS = "stop_grad_stats"
    FULL_CHAIN = "full_chain"


@dataclass
class ScaleOffset:
    """Learnable scale gamma and offset beta.

    gamma/beta have length M in instance mode and length 1 in layer mode.
    """

    gamma: np.ndarray
    beta: np.ndarray

    @staticmethod
    def initial(
        mode: NormMode, m: int, gamma0: float = 1.0, beta0: float = 0.0
    ) -> "ScaleOffset":
        width = m if mode is NormMode.INSTANCE else 1
        return ScaleOffset(np.full(width, float(gamma0)), np.full(width, float(beta0)))

    def copy(self) -> "ScaleOffset":
        return ScaleOffset(self.gamma.copy(), self.beta.copy())


@dataclass
class NormCache:
    """Forward-pass byproducts needed by :func:`backprop_normalize`."""

    l_norm: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    denom: np.ndarray
    mode: NormMode
    denom_kind: DenomKind
    grad_mode: GradMode


def _check_shapes(l: np.ndarray, so: ScaleOffset, mode: NormMode):
    width = l.shape[1] if mode is NormMode.INSTANCE else 1
    if so.gamma.shape != (width,) or so.beta.shape != (width,):
        raise DimensionMismatch(
            f"{mode.value} mode wants gamma/beta of shape ({width},), "
            f"got {so.gamma.shape}/{so.beta.shape}"
        )


def normalize(
    l: np.ndarray,
    so: ScaleOffset,
    mode: NormMode = NormMode.INSTANCE,
    denom: DenomKind = DenomKind.STD,
    grad_mode: GradMode = GradMode.PAPER_LITERAL,
) -> tuple[np.ndarray, NormCache]:
    """Normalize logits and apply the learnable affine map.

    Uses population (1/N) variance. Requires N >= 2 so the statistics are
    defined; the 1e-6 stabilizer keeps the all-equal case finite.
    """
    l = np.asarray(l, dtype=float)
    if l.ndim != 2 or l.shape[0] < 2:
        raise DegenerateInput("need an (N, M) matrix with N >= 2")
    _check_shapes(l, so, mode)

    if mode is NormMode.INSTANCE:
        mean = l.mean(axis=0, keepdims=True)
        var = l.var(axis=0, keepdims=True)
    else:
        mean = np.full((1, 1), l.mean())
        var = np.full((1, 1), l.var())
    std = np.sqrt(var + _VAR_EPS)
    d = std if denom is DenomKind.STD else var + _VAR_EPS
    l_norm = (l - mean) / d
    l_scaled = l_norm * so.gamma + so.beta
    cache = NormCache(l_norm, mean, std, d, mode, denom, grad_mode)
    return l_scaled, cache


def backprop_normalize(
    upstream: np.ndarray, cache: NormCache, so: ScaleOffset
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distribute a gradient w.r.t. l_scaled onto (l, gamma, beta).

    ``upstream`` must already include everything downstream of the scaled
    logits (the predictor and straight-through softmax chain).
    """
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != cache.l_norm.shape:
        raise DimensionMismatch(
            f"upstream {upstream.shape} vs cached {cache.l_norm.shape}"
        )
    if cache.mode is NormMode.INSTANCE:
        grad_beta = upstream.sum(axis=0)
        grad_gamma = (upstream * cache.l_norm).sum(axis=0)
    else:
        grad_beta = np.array([upstream.sum()])
        grad_gamma = np.array([(upstream * cache.l_norm).sum()])

    if cache.grad_mode is GradMode.PAPER_LITERAL:
        grad_l = upstream * so.gamma
    elif cache.grad_mode is GradMode.STOP_GRAD_STATS:
        grad_l = upstream * so.gamma / cache.denom
    else:
        grad_l = _full_chain_grad(upstream * so.gamma, cache)
    return grad_l, grad_gamma, grad_beta


def _full_chain_grad(g: np.ndarray, cache: NormCache) -> np.ndarray:
    """Exact gradient of the normalization map given g = dL/d l_norm."""
    axis = 0 if cache.mode is NormMode.INSTANCE else None
    x_hat = cache.l_norm
    g_mean = g.mean(axis=axis, keepdims=True)
    gx_mean = (g * x_hat).mean(axis=axis, keepdims=True)
    if cache.denom_kind is DenomKind.STD:
        return (g - g_mean - x_hat * gx_mean) / cache.denom
    return (g - g_mean) / cache.denom - 2.0 * x_hat * gx_mean
