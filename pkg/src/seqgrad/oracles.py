"""Differentiable fitness oracles with exact analytic gradients.

Every oracle maps an (N, M) one-hot or probability matrix to a scalar score
plus the exact input gradient, packaged as :class:`OracleEval`. Three
analytic families are built in:

* :class:`MotifOracle`     -- sliding motif match with log-sum-exp pooling,
* :class:`QuadraticOracle` -- x^T W x + b^T x over the flattened input, whose
  global optimum over all discrete sequences is computable by enumeration,
* :class:`MlpOracle`       -- a small tanh MLP with per-layer activation
  tracking and an optional (mean, std) uncertainty head.

Probability matrices are legal inputs everywhere: that is the continuous
relaxation path. :func:`brute_force_optimum` enumerates every sequence and is
the verification oracle the optimization tests are checked against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Alphabet, RngState, decode
from .errors import DimensionMismatch, ParseError, ShapeError, TooLarge
from .io import read_json, write_json17

__all__ = [
    "OracleEval",
    "MotifOracle",
    "QuadraticOracle",
    "MlpOracle",
    "evaluate",
    "brute_force_optimum",
    "load_oracle",
    "save_oracle",
]

_ENUM_CAP = 10**7
_CHUNK = 1 << 16


@dataclass
class OracleEval:
    """Everything an oracle reports for one input.

    ``activations`` and ``activation_grads`` are present only for oracles
    that track internal layers; ``mean_std``/``grad_std`` only for
    uncertainty-capable oracles (std is strictly positive by construction).
    """

    score: float
    grad: np.ndarray
    activations: dict[str, float] | None = None
    activation_grads: dict[str, np.ndarray] | None = None
    mean_std: tuple[float, float] | None = None
    grad_std: np.ndarray | None = None


def _as_input(x, n: int, m: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (n, m):
        raise DimensionMismatch(f"oracle expects ({n}, {m}) input, got {x.shape}")
    return x


@dataclass
class MotifOracle:
    """Scores how strongly a weight motif occurs anywhere in the sequence.

    Window sums m_i = sum_{u,j} W[u, j] * x[i+u, j] are pooled with
    log-sum-exp, so the score is a smooth upper-ish envelope of the best
    match: max_i m_i <= score <= max_i m_i + log(#windows). ``clip``
    saturates inputs at min(x, clip) before scoring, which makes continuous
    relaxations score differently from the discrete sequences they stand for.
    """

    weights: np.ndarray
    n: int
    alphabet: Alphabet
    clip: float | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 2 or self.weights.shape[0] > self.n:
            raise DimensionMismatch("motif longer than the sequence")

    @property
    def m(self) -> int:
        return self.weights.shape[1]

    @staticmethod
    def random(
        rng: RngState, n: int, length: int, alphabet: Alphabet, scale: float = 1.0
    ) -> "MotifOracle":
        w = rng.uniform_in(-1.0, 1.0, (length, alphabet.size)) * scale
        return MotifOracle(w, n, alphabet)

    def evaluate(self, x) -> OracleEval:
        x = _as_input(x, self.n, self.m)
        mask = None
        if self.clip is not None:
            mask = (x < self.clip).astype(float)
            x = np.minimum(x, self.clip)
        length = self.weights.shape[0]
        nw = self.n - length + 1
        windows = np.zeros(nw)
        for u in range(length):
            windows += x[u : u + nw] @ self.weights[u]
        peak = windows.max()
        z = np.exp(windows - peak)
        score = peak + np.log(z.sum())
        soft = z / z.sum()
        grad = np.zeros_like(x)
        for u in range(length):
            grad[u : u + nw] += soft[:, None] * self.weights[u][None, :]
        if mask is not None:
            grad *= mask
        return OracleEval(float(score), grad)


@dataclass
class QuadraticOracle:
    """score = x^T W x + b^T x over the row-major flattened input."""

    quad: np.ndarray
    linear: np.ndarray
    n: int
    alphabet: Alphabet

    def __post_init__(self):
        self.quad = np.asarray(self.quad, dtype=float)
        self.linear = np.asarray(self.linear, dtype=float)
        d = self.n * self.alphabet.size
        if self.quad.shape != (d, d) or self.linear.shape != (d,):
            raise DimensionMismatch(
                f"want quad ({d}, {d}) and linear ({d},), "
                f"got {self.quad.shape} and {self.linear.shape}"
            )
        if np.max(np.abs(self.quad - self.quad.T)) > 1e-12:
            raise DimensionMismatch("quadratic weight matrix must be symmetric")

    @property
    def m(self) -> int:
        return self.alphabet.size

    @staticmethod
    def random(
        rng: RngState,
        n: int,
        alphabet: Alphabet,
        quad_scale: float = 1.0,
        linear_scale: float = 1.0,
    ) -> "QuadraticOracle":
        d = n * alphabet.size
        a = rng.uniform_in(-1.0, 1.0, (d, d))
        w = 0.5 * (a + a.T) * quad_scale
        b = rng.uniform_in(-1.0, 1.0, d) * linear_scale
        return QuadraticOracle(w, b, n, alphabet)

    def evaluate(self, x) -> OracleEval:
        x = _as_input(x, self.n, self.m)
        flat = x.reshape(-1)
        wx = self.quad @ flat
        score = flat @ wx + self.linear @ flat
        grad = (2.0 * wx + self.linear).reshape(x.shape)
        return OracleEval(float(score), grad)


@dataclass
class MlpOracle:
    """flatten -> tanh -> tanh -> linear head, with manual backprop.

    Tracks the summed absolute post-activation of each hidden layer under the
    names ``hidden1``/``hidden2`` (with gradients, so activity penalties can
    backpropagate). With ``uncertainty=True`` the head has two outputs,
    (mean, log_std); the reported std is exp(log_std) > 0 and ``grad_std``
    carries its input gradient.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    n: int
    alphabet: Alphabet
    uncertainty: bool = False

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        d = self.n * self.alphabet.size
        h1, h2 = self.w1.shape[0], self.w2.shape[0]
        out = 2 if self.uncertainty else 1
        want = {
            "w1": (h1, d), "b1": (h1,),
            "w2": (h2, h1), "b2": (h2,),
            "w3": (out, h2), "b3": (out,),
        }
        for name, shape in want.items():
            got = getattr(self, name).shape
            if got != shape:
                raise DimensionMismatch(f"{name}: want {shape}, got {got}")

    @property
    def m(self) -> int:
        return self.alphabet.size

    @staticmethod
    def random(
        rng: RngState,
        n: int,
        alphabet: Alphabet,
        hidden: tuple[int, int] = (16, 8),
        scale: float = 1.0,
        uncertainty: bool = False,
    ) -> "MlpOracle":
        d = n * alphabet.size
        h1, h2 = hidden
        out = 2 if uncertainty else 1

        def u(*shape):
            return rng.uniform_in(-1.0, 1.0, shape) * scale / np.sqrt(shape[-1])

        return MlpOracle(
            u(h1, d), u(h1), u(h2, h1), u(h2), u(out, h2), u(out),
            n, alphabet, uncertainty,
        )

    def evaluate(self, x) -> OracleEval:
        x = _as_input(x, self.n, self.m)
        flat = x.reshape(-1)
        a1 = np.tanh(self.w1 @ flat + self.b1)
        a2 = np.tanh(self.w2 @ a1 + self.b2)
        out = self.w3 @ a2 + self.b3

        def back_from_a2(da2):
            dz2 = da2 * (1.0 - a2 * a2)
            dz1 = (self.w2.T @ dz2) * (1.0 - a1 * a1)
            return (self.w1.T @ dz1).reshape(x.shape)

        grad = back_from_a2(self.w3[0])
        acts = {"hidden1": float(np.abs(a1).sum()), "hidden2": float(np.abs(a2).sum())}
        dz1_abs = np.sign(a1) * (1.0 - a1 * a1)
        act_grads = {
            "hidden1": (self.w1.T @ dz1_abs).reshape(x.shape),
            "hidden2": back_from_a2(np.sign(a2)),
        }
        ev = OracleEval(float(out[0]), grad, acts, act_grads)
        if self.uncertainty:
            std = float(np.exp(out[1]))
            ev.mean_std = (float(out[0]), std)
            ev.grad_std = std * back_from_a2(self.w3[1])
        return ev


def evaluate(oracle, x) -> OracleEval:
    """Score an input with any oracle; shape mismatches raise eagerly."""
    return oracle.evaluate(x)


def _digit_matrix(ids: np.ndarray, n: int, m: int) -> np.ndarray:
    powers = m ** np.arange(n - 1, -1, -1, dtype=np.int64)
    return (ids[:, None] // powers) % m


def _score_block(oracle, block: np.ndarray) -> np.ndarray:
    """Vectorized scores for a (count, N, M) stack of one-hot inputs."""
    if isinstance(oracle, QuadraticOracle):
        flat = block.reshape(block.shape[0], -1)
        return np.einsum("ij,ij->i", flat @ oracle.quad, flat) + flat @ oracle.linear
    if isinstance(oracle, MotifOracle):
        x = block if oracle.clip is None else np.minimum(block, oracle.clip)
        length = oracle.weights.shape[0]
        nw = oracle.n - length + 1
        windows = np.zeros((block.shape[0], nw))
        for u in range(length):
            windows += x[:, u : u + nw, :] @ oracle.weights[u]
        peak = windows.max(axis=1, keepdims=True)
        return (peak + np.log(np.exp(windows - peak).sum(axis=1, keepdims=True)))[:, 0]
    raise TypeError("brute force supports MotifOracle and QuadraticOracle only")


def brute_force_optimum(
    oracle, alphabet: Alphabet | None = None, n: int | None = None
) -> tuple[float, str]:
    """Exact global maximum over all M^N sequences by exhaustive enumeration.

    Returns the maximum score and the lexicographically smallest argmax
    (sequences enumerated in alphabet order, first maximum kept). Refuses
    search spaces beyond 10^7 sequences.
    """
    alphabet = alphabet or oracle.alphabet
    n = n if n is not None else oracle.n
    m = alphabet.size
    total = m**n
    if total > _ENUM_CAP:
        raise TooLarge(f"{m}^{n} = {total} sequences exceeds the {_ENUM_CAP} cap")
    eye = np.eye(m)
    best_score, best_id = -np.inf, -1
    for start in range(0, total, _CHUNK):
        ids = np.arange(start, min(start + _CHUNK, total), dtype=np.int64)
        block = eye[_digit_matrix(ids, n, m)]
        scores = _score_block(oracle, block)
        k = int(np.argmax(scores))
        if scores[k] > best_score:
            best_score, best_id = float(scores[k]), int(ids[k])
    digits = _digit_matrix(np.array([best_id], dtype=np.int64), n, m)[0]
    return best_score, decode(eye[digits], alphabet)


_KINDS = {"motif": MotifOracle, "quadratic": QuadraticOracle, "mlp": MlpOracle}


def _alphabet_to_json(alphabet: Alphabet) -> dict:
    return {"kind": alphabet.kind, "symbols": "".join(alphabet.symbols)}


def _alphabet_from_json(doc, path) -> Alphabet:
    try:
        return Alphabet(doc["kind"], tuple(doc["symbols"]))
    except (KeyError, TypeError) as exc:
        raise ParseError(str(path), f"bad alphabet block: {exc}") from exc


def save_oracle(oracle, path) -> None:
    """Write an oracle as a self-describing JSON weight file (%.17g floats)."""
    doc = {
        "kind": next(k for k, cls in _KINDS.items() if isinstance(oracle, cls)),
        "alphabet": _alphabet_to_json(oracle.alphabet),
        "n": oracle.n,
    }
    if isinstance(oracle, MotifOracle):
        doc["weights"] = {"W": oracle.weights}
        doc["clip"] = oracle.clip
    elif isinstance(oracle, QuadraticOracle):
        doc["weights"] = {"W": oracle.quad, "b": oracle.linear}
    else:
        doc["weights"] = {
            name.upper(): getattr(oracle, name)
            for name in ("w1", "b1", "w2", "b2", "w3", "b3")
        }
        doc["uncertainty"] = oracle.uncertainty
    write_json17(doc, path)


def _array_field(weights: dict, key: str, expected_shape, path) -> np.ndarray:
    if key not in weights:
        raise ParseError(str(path), f"missing weight field {key!r}")
    arr = np.asarray(weights[key], dtype=float)
    if expected_shape is not None and arr.shape != expected_shape:
        raise ShapeError(expected_shape, arr.shape)
    return arr


def load_oracle(path):
    """Load a weight file written by :func:`save_oracle`."""
    doc = read_json(path)
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ParseError(str(path), "missing 'kind' field")
    kind = doc["kind"]
    if kind not in _KINDS:
        raise ParseError(str(path), f"unknown oracle kind {kind!r}")
    alphabet = _alphabet_from_json(doc.get("alphabet", {}), path)
    try:
        n = int(doc["n"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(str(path), "missing or bad 'n' field") from exc
    weights = doc.get("weights")
    if not isinstance(weights, dict):
        raise ParseError(str(path), "missing 'weights' object")
    m = alphabet.size
    try:
        if kind == "motif":
            w = np.asarray(weights.get("W", []), dtype=float)
            if w.ndim != 2 or w.shape[1] != m:
                raise ShapeError((w.shape[0] if w.ndim == 2 else "?", m), w.shape)
            return MotifOracle(w, n, alphabet, doc.get("clip"))
        if kind == "quadratic":
            d = n * m
            return QuadraticOracle(
                _array_field(weights, "W", (d, d), path),
                _array_field(weights, "b", (d,), path),
                n, alphabet,
            )
        uncertainty = bool(doc.get("uncertainty", False))
        w1 = _array_field(weights, "W1", None, path)
        w2 = _array_field(weights, "W2", None, path)
        h1, h2 = w1.shape[0], w2.shape[0]
        out = 2 if uncertainty else 1
        return MlpOracle(
            _array_field(weights, "W1", (h1, n * m), path),
            _array_field(weights, "B1", (h1,), path),
            _array_field(weights, "W2", (h2, h1), path),
            _array_field(weights, "B2", (h2,), path),
            _array_field(weights, "W3", (out, h2), path),
            _array_field(weights, "B3", (out,), path),
            n, alphabet, uncertainty,
        )
    except ValueError as exc:
        raise ShapeError("rectangular weight arrays", str(exc)) from exc
