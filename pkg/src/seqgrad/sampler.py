"""Softmax relaxation, categorical/Gumbel sampling, and straight-through gradients.

The softmax turns an (N, M) logit matrix into N categorical distributions;
sampling one symbol per row gives a discrete one-hot sequence. Because the
sampling step has no derivative, gradients are routed back to the logits by a
straight-through estimator: either the softmax Jacobian

    d sigma_ij / d l_ik = sigma_ik * (1_{j=k} - sigma_ij)

substituted for the sampler's Jacobian (``SOFTMAX_ST``), or the identity map
(``IDENTITY_ST``).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import RngState
from .errors import DimensionMismatch, InvalidDistribution, NonFiniteInput

__all__ = [
    "StEstimator",
    "GumbelConfig",
    "softmax_rows",
    "softmax_jacobian_row",
    "softmax_backprop",
    "sample_categorical",
    "sample_gumbel",
    "backprop_st",
]


class StEstimator(Enum):
    SOFTMAX_ST = "softmax"
    IDENTITY_ST = "identity"


@dataclass(frozen=True)
class GumbelConfig:
    """Temperature of the Gumbel-softmax relaxation (tau > 0)."""

    temperature: float = 0.1

    def __post_init__(self):
        if not (self.temperature > 0):
            raise InvalidDistribution("gumbel temperature must be > 0")


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction for overflow safety."""
    logits = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(logits)):
        raise NonFiniteInput("logits contain NaN or Inf")
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_prob_rows(p: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise InvalidDistribution("negative probability entries")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > tol):
        raise InvalidDistribution("row sums deviate from 1")
    return p


def softmax_jacobian_row(p: np.ndarray) -> np.ndarray:
    """Jacobian J[j, k] = d sigma_j / d l_k = p_k * (1_{j=k} - p_j).

    Each row of J sums to zero, and the whole matrix vanishes as the
    distribution saturates toward a vertex of the simplex.
    """
    p = _check_prob_rows(np.atleast_1d(p))
    if p.ndim != 1:
        raise DimensionMismatch("expected a single probability row")
    return p[None, :] * (np.eye(p.size) - p[:, None])


def softmax_backprop(upstream: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Contract an upstream (N, M) gradient against each row's softmax Jacobian.

    out_ik = sum_j upstream_ij * p_ik * (1_{j=k} - p_ij)
           = p_ik * (upstream_ik - <upstream_i, p_i>)
    """
    upstream = np.asarray(upstream, dtype=float)
    p = np.asarray(p, dtype=float)
    if upstream.shape != p.shape:
        raise DimensionMismatch(f"upstream {upstream.shape} vs probs {p.shape}")
    inner = (upstream * p).sum(axis=-1, keepdims=True)
    return p * (upstream - inner)


def sample_categorical(p: np.ndarray, rng: RngState) -> np.ndarray:
    """Draw one symbol per row by inverse CDF on a single uniform per row.

    Columns are scanned in index order, so the mapping from uniforms to
    symbols is part of the determinism contract.
    """
    p = _check_prob_rows(p)
    n, m = p.shape
    u = np.atleast_1d(rng.uniform(n))
    cum = np.cumsum(p, axis=1)
    idx = np.minimum((u[:, None] >= cum).sum(axis=1), m - 1)
    out = np.zeros_like(p)
    out[np.arange(n), idx] = 1.0
    return out


def sample_gumbel(
    logits: np.ndarray,
    cfg: GumbelConfig,
    rng: RngState,
    noise: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Gumbel-softmax sample: (relaxed probabilities, hard one-hot).

    relaxed = softmax((l + g) / tau) with g = -log(-log u); hard is the
    per-row argmax of relaxed. Gradients flow through ``relaxed`` and are
    passed straight through the argmax. ``noise`` overrides g for tests.
    """
    logits = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(logits)):
        raise NonFiniteInput("logits contain NaN or Inf")
    if noise is None:
        u = np.clip(rng.uniform(logits.shape), 1e-12, 1.0 - 1e-12)
        noise = -np.log(-np.log(u))
    relaxed = softmax_rows((logits + noise) / cfg.temperature)
    hard = np.zeros_like(relaxed)
    hard[np.arange(relaxed.shape[0]), np.argmax(relaxed, axis=1)] = 1.0
    return relaxed, hard


def backprop_st(
    upstream: np.ndarray, p: np.ndarray, est: StEstimator
) -> np.ndarray:
    """Route a gradient w.r.t. a sampled one-hot back to the logits.

    SOFTMAX_ST contracts against the softmax Jacobian of ``p``; IDENTITY_ST
    returns the upstream gradient unchanged.
    """
    upstream = np.asarray(upstream, dtype=float)
    p = np.asarray(p, dtype=float)
    if upstream.shape != p.shape:
        raise DimensionMismatch(f"upstream {upstream.shape} vs probs {p.shape}")
    if est is StEstimator.IDENTITY_ST:
        return upstream.copy()
    return softmax_backprop(upstream, p)
