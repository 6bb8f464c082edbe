"""Objective components: train/test losses, penalties, and structure losses.

The optimization ("train") loss is always the negated oracle score of
whatever representation a design method feeds the oracle; the reported
("test") loss is always measured on discrete samples drawn from the softmax
representation. Regularizers compose additively on top:

* entropy penalty        -- lambda * (1/N) * sum -p log2 p (bits per position),
* likelihood margin      -- lambda * max(p_ref - log10 p(x) - rho, 0), with a
  k-mer Markov model standing in for a learned sequence-likelihood model,
* survival objective     -- -log10 P(Y > q) under a Normal(mean, std) fitness
  belief from an uncertainty-capable oracle (replaces the plain score term),
* activity penalty       -- sum_k eta_k * max(C_k - cap_k, 0) over tracked
  internal layer activation sums.

For structure design, losses compare stacks of per-residue-pair categorical
distributions (:class:`StructureTensors`). ``structure_kl`` is the plain
binned KL; ``smooth_structure_kl`` first collapses each binned distribution
to scalar summaries (a linear ramp for distances, a wrap-around sin/cos ramp
for dihedral-like heads, with bin 0 reserved for "no contact") so that
near-miss predictions one bin away are not maximally penalized.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import cosdg, log_ndtr, sindg

from .core import Alphabet, RngState
from .errors import (
    DimensionMismatch,
    InvalidDistribution,
    NumericUnderflow,
    UnknownLayer,
)
from .io import read_fasta, read_json, write_json17
from .oracles import OracleEval
from .sampler import sample_categorical, softmax_rows

__all__ = [
    "train_loss",
    "test_loss",
    "entropy_penalty",
    "mean_entropy_bits",
    "MarkovModel",
    "MarginPenaltyConfig",
    "likelihood_margin_loss",
    "SurvivalConfig",
    "survival_objective",
    "ActivityTerm",
    "ActivityConfig",
    "activity_penalty",
    "StructureTensors",
    "HEAD_LAYOUT",
    "structure_kl",
    "structure_kl_grad",
    "smooth_structure_kl",
    "smooth_structure_kl_grad",
]

_PROB_FLOOR = 1e-8
_LN10 = np.log(10.0)


# ---------------------------------------------------------------------------
# Train / test losses
# ---------------------------------------------------------------------------


def train_loss(oracle, x) -> float:
    """Negated oracle score of the pattern a design method optimizes."""
    return -oracle.evaluate(x).score


def test_loss(oracle, scaled_logits: Sequence[np.ndarray], s: int, rng: RngState) -> float:
    """Mean negated score of s discrete samples from each logit state.

    Averages over all len(scaled_logits) * s sampled sequences; deterministic
    given the RNG state.
    """
    if s < 1 or not len(scaled_logits):
        raise DimensionMismatch("need at least one state and one sample")
    total = 0.0
    for logits in scaled_logits:
        p = softmax_rows(logits)
        for _ in range(s):
            total += oracle.evaluate(sample_categorical(p, rng)).score
    return -total / (len(scaled_logits) * s)


# ---------------------------------------------------------------------------
# Entropy penalty
# ---------------------------------------------------------------------------


def mean_entropy_bits(p: np.ndarray) -> float:
    """Mean per-position entropy of a probability matrix, in bits."""
    p = np.asarray(p, dtype=float)
    terms = np.where(p > 0, -p * np.log2(np.maximum(p, 1e-300)), 0.0)
    return float(terms.sum() / p.shape[0])


def entropy_penalty(p: np.ndarray, lam: float) -> tuple[float, np.ndarray]:
    """Penalty lambda * mean-entropy-bits and its gradient w.r.t. p."""
    p = np.asarray(p, dtype=float)
    n = p.shape[0]
    value = lam * mean_entropy_bits(p)
    grad = -(lam / n) * (np.log2(np.maximum(p, 1e-12)) + 1.0 / np.log(2.0))
    return value, grad


# ---------------------------------------------------------------------------
# Markov sequence-likelihood model and margin penalty
# ---------------------------------------------------------------------------


@dataclass
class MarkovModel:
    """Order-k Markov model over an alphabet, stored as log10 tables.

    ``log10_tables[j]`` has shape (M**j, M) and conditions on the j previous
    symbols (immediately preceding symbol = least significant digit of the
    context index). Positions 0..k-1 of a sequence are scored with the
    matching shorter-context table, so every position contributes a term.
    All probabilities are floored at 1e-8 and renormalized.
    """

    order: int
    alphabet: Alphabet
    log10_tables: list[np.ndarray]
    p_ref_log10: float = 0.0

    @staticmethod
    def _floor_rows(rows: np.ndarray) -> np.ndarray:
        rows = np.maximum(np.asarray(rows, dtype=float), _PROB_FLOOR)
        return rows / rows.sum(axis=-1, keepdims=True)

    @classmethod
    def from_tables(
        cls,
        alphabet: Alphabet,
        order: int,
        tables: dict[str, Sequence[float]],
        p_ref_log10: float = 0.0,
    ) -> "MarkovModel":
        """Build from {context string -> probability row}; missing contexts
        default to uniform. Context keys run over lengths 0..order."""
        m = alphabet.size
        dense = [np.full((m**j, m), 1.0 / m) for j in range(order + 1)]
        for ctx, row in tables.items():
            j = len(ctx)
            if j > order:
                raise DimensionMismatch(f"context {ctx!r} longer than order {order}")
            row = np.asarray(row, dtype=float)
            if row.shape != (m,):
                raise DimensionMismatch(f"context {ctx!r}: want {m} probabilities")
            dense[j][cls._context_index_static(ctx, alphabet)] = row
        logs = [np.log10(cls._floor_rows(t)) for t in dense]
        return cls(order, alphabet, logs, p_ref_log10)

    @classmethod
    def fit_fasta(cls, path, order: int, alphabet: Alphabet) -> "MarkovModel":
        """Fit by add-one-smoothed counting on a FASTA corpus.

        The reference likelihood ``p_ref_log10`` is the mean total
        log10-likelihood of the corpus sequences under the fitted model.
        """
        records = read_fasta(path)
        if not records:
            raise InvalidDistribution(f"no sequences in {path}")
        m = alphabet.size
        counts = [np.ones((m**j, m)) for j in range(order + 1)]
        encoded = []
        for _, seq in records:
            sym = np.array([alphabet.index(c, i) for i, c in enumerate(seq)])
            encoded.append(sym)
            for i in range(len(sym)):
                j = min(i, order)
                ctx = cls._context_index_array(sym, i, j, m)
                counts[j][ctx, sym[i]] += 1.0
        logs = [np.log10(cls._floor_rows(c / c.sum(axis=-1, keepdims=True))) for c in counts]
        model = cls(order, alphabet, logs, 0.0)
        onehots = [np.eye(m)[sym] for sym in encoded]
        model.p_ref_log10 = float(
            np.mean([model.log10_likelihood(x)[0] for x in onehots])
        )
        return model

    @staticmethod
    def _context_index_static(ctx: str, alphabet: Alphabet) -> int:
        idx = 0
        for t, ch in enumerate(reversed(ctx)):
            idx += alphabet.index(ch) * alphabet.size**t
        return idx

    @staticmethod
    def _context_index_array(sym: np.ndarray, i: int, j: int, m: int) -> int:
        idx = 0
        for t in range(1, j + 1):
            idx += int(sym[i - t]) * m ** (t - 1)
        return idx

    def log10_likelihood(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        """log10 p(x) and its gradient w.r.t. the (relaxed) one-hot input.

        Contexts are read off the per-row argmax and treated as constants, so
        the likelihood is locally linear in x and the gradient is exactly the
        table row at each position.
        """
        x = np.asarray(x, dtype=float)
        m = self.alphabet.size
        if x.ndim != 2 or x.shape[1] != m:
            raise DimensionMismatch(f"want (N, {m}) input, got {x.shape}")
        if x.shape[0] <= self.order:
            raise DimensionMismatch(
                f"sequence length {x.shape[0]} must exceed order {self.order}"
            )
        sym = np.argmax(x, axis=1)
        grad = np.zeros_like(x)
        for i in range(x.shape[0]):
            j = min(i, self.order)
            ctx = self._context_index_array(sym, i, j, m)
            grad[i] = self.log10_tables[j][ctx]
        return float((grad * x).sum()), grad

    def save(self, path) -> None:
        tables = {}
        for j, table in enumerate(self.log10_tables):
            for idx in range(table.shape[0]):
                ctx = self._context_string(idx, j)
                tables[ctx] = table[idx]
        write_json17(
            {
                "kind": "markov",
                "alphabet": {"kind": self.alphabet.kind,
                             "symbols": "".join(self.alphabet.symbols)},
                "order": self.order,
                "p_ref_log10": self.p_ref_log10,
                "log10_tables": tables,
            },
            path,
        )

    def _context_string(self, idx: int, j: int) -> str:
        chars = []
        for _ in range(j):
            chars.append(self.alphabet.symbols[idx % self.alphabet.size])
            idx //= self.alphabet.size
        return "".join(chars)

    @classmethod
    def load(cls, path) -> "MarkovModel":
        from .errors import ParseError

        doc = read_json(path)
        if not isinstance(doc, dict) or doc.get("kind") != "markov":
            raise ParseError(str(path), "not a markov model file")
        alphabet = Alphabet(doc["alphabet"]["kind"], tuple(doc["alphabet"]["symbols"]))
        order = int(doc["order"])
        m = alphabet.size
        logs = [np.full((m**j, m), np.log10(1.0 / m)) for j in range(order + 1)]
        for ctx, row in doc["log10_tables"].items():
            logs[len(ctx)][cls._context_index_static(ctx, alphabet)] = np.asarray(row)
        return cls(order, alphabet, logs, float(doc["p_ref_log10"]))


@dataclass(frozen=True)
class MarginPenaltyConfig:
    """Weight and slack of the likelihood margin penalty."""

    lam: float = 1.0
    rho: float = 0.0

    def __post_init__(self):
        if self.lam < 0 or self.rho < 0:
            raise InvalidDistribution("margin penalty wants lam >= 0 and rho >= 0")


def likelihood_margin_loss(
    log10_p: float, model: MarkovModel, cfg: MarginPenaltyConfig
) -> float:
    """Hinge lambda * max(p_ref - log10_p - rho, 0): zero once designs are at
    least as likely as the reference corpus, up to the slack rho."""
    return cfg.lam * max(model.p_ref_log10 - log10_p - cfg.rho, 0.0)


# ---------------------------------------------------------------------------
# Survival objective (uncertainty-aware fitness)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SurvivalConfig:
    """Fitness threshold (the value at training quantile q) to exceed."""

    q_threshold: float
    q: float = 0.95

    def __post_init__(self):
        if not (0.0 < self.q < 1.0):
            raise InvalidDistribution("quantile q must lie in (0, 1)")


_SF_CAP = 300.0  # -log10 of the 1e-300 underflow floor


def survival_objective(
    mean_std: tuple[float, float], cfg: SurvivalConfig
) -> tuple[float, float, float]:
    """-log10 P(Y > q_threshold) for Y ~ Normal(mean, std), with partials.

    Evaluated through the log-domain complementary error function, so the
    gradient stays usable far into the tail; if the survival probability
    underflows 1e-300 the value is capped and :class:`NumericUnderflow`
    is signaled.
    """
    mu, eps = mean_std
    if not eps > 0:
        raise InvalidDistribution("std must be > 0")
    z = (cfg.q_threshold - mu) / eps
    log_sf = float(log_ndtr(-z))
    value = -log_sf / _LN10
    # hazard = pdf(z) / SF(z), computed entirely in log space.
    log_pdf = -0.5 * z * z - 0.5 * np.log(2.0 * np.pi)
    hazard = float(np.exp(log_pdf - log_sf))
    d_mu = -hazard / (eps * _LN10)
    d_eps = -z * hazard / (eps * _LN10)
    if value > _SF_CAP:
        warnings.warn(
            f"survival probability underflowed (value {value:.3g} capped at {_SF_CAP})",
            NumericUnderflow,
        )
        value = _SF_CAP
    return value, d_mu, d_eps


# ---------------------------------------------------------------------------
# Activity penalty on tracked internal layers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ActivityTerm:
    layer: str
    cap: float
    weight: float

    def __post_init__(self):
        if self.weight < 0:
            raise InvalidDistribution("activity weight must be >= 0")


@dataclass(frozen=True)
class ActivityConfig:
    terms: tuple[ActivityTerm, ...]


def activity_penalty(activations: dict[str, float], cfg: ActivityConfig) -> float:
    """sum_k weight_k * max(activation_k - cap_k, 0) over configured layers."""
    total = 0.0
    for term in cfg.terms:
        if term.layer not in activations:
            raise UnknownLayer(term.layer)
        total += term.weight * max(activations[term.layer] - term.cap, 0.0)
    return total


# ---------------------------------------------------------------------------
# Structure tensors and KL losses
# ---------------------------------------------------------------------------

# Head name -> (stored bin count, summary kind). Each head stores K+1 bins:
# index 0 means "no contact", indices 1..K are the binned values the ramp
# weights run over (K = 37 distance bins, 24 per dihedral head, 12 planar).
HEAD_LAYOUT: tuple[tuple[str, int, str], ...] = (
    ("dist", 38, "smooth"),
    ("theta", 25, "circular"),
    ("omega", 25, "circular"),
    ("phi", 13, "smooth"),
)


def smooth_weights(bins: int) -> np.ndarray:
    """Linear ramp (k-1)/(K-1) over bins 1..K; bin 0 carries weight 0."""
    k = bins - 1
    w = np.zeros(bins)
    w[1:] = (np.arange(1, k + 1) - 1.0) / (k - 1.0)
    return w


def circular_weights(bins: int) -> np.ndarray:
    """Wrap-around ramp 0.5 + 0.25*(sin + cos) over bins 1..K.

    Angles are evaluated in degrees so the endpoints sit at exactly +/-180
    and the first and last bin weights are exactly equal (0.25).
    """
    k = bins - 1
    deg = (np.arange(1, k + 1) - 1.0) / (k - 1.0) * 360.0 - 180.0
    w = np.zeros(bins)
    w[1:] = 0.5 + 0.25 * (sindg(deg) + cosdg(deg))
    return w


@dataclass
class StructureTensors:
    """Distance and angle bin distributions for every residue pair (i, j).

    Each head's last axis is a probability distribution (sums to 1); bin 0
    means "no contact".
    """

    dist: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        n = None
        for name, bins, _ in HEAD_LAYOUT:
            arr = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, arr)
            if arr.ndim != 3 or arr.shape[0] != arr.shape[1] or arr.shape[2] != bins:
                raise DimensionMismatch(
                    f"head {name}: want (N, N, {bins}), got {arr.shape}"
                )
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise DimensionMismatch("heads disagree on N")
            if np.any(arr < 0):
                raise InvalidDistribution(f"head {name} has negative entries")
            if np.max(np.abs(arr.sum(axis=-1) - 1.0)) > 1e-6:
                raise InvalidDistribution(f"head {name} rows do not sum to 1")

    @property
    def n(self) -> int:
        return self.dist.shape[0]

    def heads(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name, _, _ in HEAD_LAYOUT}


def _check_pair(pred: StructureTensors, target: StructureTensors):
    if pred.n != target.n:
        raise DimensionMismatch(f"pred N={pred.n} vs target N={target.n}")


def structure_kl(pred: StructureTensors, target: StructureTensors) -> float:
    """Mean binned KL sum_heads (1/N^2) sum_ijk target * log(target / pred),
    with pred clamped to >= 1e-8 before the log."""
    _check_pair(pred, target)
    total = 0.0
    inv = 1.0 / pred.n**2
    for name, _, _ in HEAD_LAYOUT:
        x = np.maximum(getattr(pred, name), _PROB_FLOOR)
        y = getattr(target, name)
        terms = np.where(y > 0, y * np.log(np.maximum(y, 1e-300) / x), 0.0)
        total += inv * terms.sum()
    return float(total)


def structure_kl_grad(
    pred: StructureTensors, target: StructureTensors
) -> dict[str, np.ndarray]:
    """d structure_kl / d pred, per head (zero where the clamp is active)."""
    _check_pair(pred, target)
    inv = 1.0 / pred.n**2
    grads = {}
    for name, _, _ in HEAD_LAYOUT:
        x = getattr(pred, name)
        y = getattr(target, name)
        live = x > _PROB_FLOOR
        grads[name] = np.where(live, -inv * y / np.maximum(x, _PROB_FLOOR), 0.0)
    return grads


def _summaries(arr: np.ndarray, w: np.ndarray):
    """(ramp summary, bin-0 mass, leftover) triple for one head."""
    s = arr @ w
    b0 = arr[..., 0]
    eps = 1.0 - s - b0
    return s, b0, eps


def _ratio_term(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """num * log(clamped num / clamped den); exactly zero when num == den."""
    r = np.maximum(num, _PROB_FLOOR) / np.maximum(den, _PROB_FLOOR)
    return num * np.log(r)


def smooth_structure_kl(pred: StructureTensors, target: StructureTensors) -> float:
    """KL over (ramp summary, no-contact, leftover) triples per residue pair.

    Distance-like heads use the linear ramp, dihedral heads the circular
    sin/cos ramp whose first and last bins coincide. Derived probabilities
    below -1e-6 indicate an invalid input distribution; mild negative
    round-off is clamped away inside the logs.
    """
    _check_pair(pred, target)
    total = 0.0
    inv = 1.0 / pred.n**2
    for name, bins, kind in HEAD_LAYOUT:
        w = smooth_weights(bins) if kind == "smooth" else circular_weights(bins)
        for tensors in (pred, target):
            s, b0, eps = _summaries(getattr(tensors, name), w)
            if min(s.min(), eps.min()) < -1e-6:
                raise InvalidDistribution(
                    f"head {name}: derived probability below -1e-6"
                )
        s_x, b0_x, eps_x = _summaries(getattr(pred, name), w)
        s_y, b0_y, eps_y = _summaries(getattr(target, name), w)
        total += inv * (
            _ratio_term(s_y, s_x) + _ratio_term(b0_y, b0_x) + _ratio_term(eps_y, eps_x)
        ).sum()
    return float(total)


def smooth_structure_kl_grad(
    pred: StructureTensors, target: StructureTensors
) -> dict[str, np.ndarray]:
    """d smooth_structure_kl / d pred, per head."""
    _check_pair(pred, target)
    inv = 1.0 / pred.n**2
    grads = {}
    for name, bins, kind in HEAD_LAYOUT:
        w = smooth_weights(bins) if kind == "smooth" else circular_weights(bins)
        s_x, b0_x, eps_x = _summaries(getattr(pred, name), w)
        s_y, b0_y, eps_y = _summaries(getattr(target, name), w)

        def dlog(num, den):
            # d/d den of num*log(num/clamp(den)); zero where clamped.
            return np.where(den > _PROB_FLOOR, -num / np.maximum(den, _PROB_FLOOR), 0.0)

        g_s = dlog(s_y, s_x)
        g_b0 = dlog(b0_y, b0_x)
        g_eps = dlog(eps_y, eps_x)
        g = (
            g_s[..., None] * w[None, None, :]
            + g_eps[..., None] * (-w[None, None, :])
        )
        g[..., 0] += g_b0 - g_eps
        grads[name] = inv * g
    return grads
