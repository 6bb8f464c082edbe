"""Desk-scale structure design: a toy predictor with exact gradients.

:class:`ToyStructurePredictor` maps a one-hot sequence through a seeded
random linear layer to logits for every (i, j, bin) cell, then softmaxes over
bins, yielding a valid :class:`~seqgrad.objectives.StructureTensors`. Weights
are tied so predictions are symmetric in (i, j), like real contact maps.

Design experiments plant a solution: generating the target from a known
sequence guarantees a global optimum with exactly zero loss, which makes
convergence claims testable without an external structure predictor.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Alphabet, RngState, decode, one_hot_encode
from .engine import (
    DesignMethod,
    ObjectiveStack,
    TrajectoryRecord,
    design_step,
    init_design_state,
    scaled_logits,
)
from .errors import DimensionMismatch, IoError, ParseError, ShapeError
from .objectives import (
    HEAD_LAYOUT,
    StructureTensors,
    smooth_structure_kl,
    structure_kl,
    structure_kl_grad,
    test_loss,
)
from .oracles import OracleEval
from .sampler import softmax_backprop, softmax_rows

__all__ = [
    "ToyStructurePredictor",
    "predict_structure",
    "StructureOracle",
    "StructureMetric",
    "design_to_structure",
    "save_structure_target",
    "load_structure_target",
]


@dataclass
class ToyStructurePredictor:
    """Seeded random linear map from one-hot input to per-pair bin logits."""

    n: int
    alphabet: Alphabet
    seed: int
    scale: float = 2.0
    weights: dict[str, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        rng = RngState(self.seed)
        d = self.n * self.alphabet.size
        self.weights = {}
        for name, bins, _ in HEAD_LAYOUT:
            w = rng.uniform_in(-1.0, 1.0, (self.n, self.n, bins, d))
            w = 0.5 * (w + w.transpose(1, 0, 2, 3))  # tie w(i,j) = w(j,i)
            w *= self.scale / np.sqrt(d)
            self.weights[name] = w.reshape(self.n * self.n * bins, d)

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n, self.alphabet.size):
            raise DimensionMismatch(
                f"predictor expects ({self.n}, {self.alphabet.size}), got {x.shape}"
            )
        return x


def predict_structure(
    pred: ToyStructurePredictor, x: np.ndarray
) -> tuple[StructureTensors, dict[str, np.ndarray]]:
    """Predicted bin distributions for every residue pair, plus the softmax
    cache needed by :func:`backprop_structure`."""
    x = pred._check(x)
    flat = x.reshape(-1)
    probs = {}
    for name, bins, _ in HEAD_LAYOUT:
        logits = (pred.weights[name] @ flat).reshape(pred.n, pred.n, bins)
        probs[name] = softmax_rows(logits)
    return StructureTensors(**probs), probs


def backprop_structure(
    pred: ToyStructurePredictor,
    cache: dict[str, np.ndarray],
    grad_heads: dict[str, np.ndarray],
) -> np.ndarray:
    """Chain per-head probability gradients back to the one-hot input."""
    grad_flat = np.zeros(pred.n * pred.alphabet.size)
    for name, _, _ in HEAD_LAYOUT:
        g_logits = softmax_backprop(grad_heads[name], cache[name])
        grad_flat += pred.weights[name].T @ g_logits.reshape(-1)
    return grad_flat.reshape(pred.n, pred.alphabet.size)


@dataclass
class StructureOracle:
    """Engine adapter: score = -structure_kl(predict(x), target)."""

    predictor: ToyStructurePredictor
    target: StructureTensors

    @property
    def n(self) -> int:
        return self.predictor.n

    @property
    def alphabet(self) -> Alphabet:
        return self.predictor.alphabet

    def evaluate(self, x) -> OracleEval:
        tensors, cache = predict_structure(self.predictor, x)
        kl = structure_kl(tensors, self.target)
        grads = structure_kl_grad(tensors, self.target)
        grad_x = backprop_structure(self.predictor, cache, grads)
        return OracleEval(-kl, -grad_x)

    def metrics(self, x) -> tuple[float, float]:
        """(structure_kl, smooth_structure_kl) of one discrete sequence."""
        tensors, _ = predict_structure(self.predictor, x)
        return (
            structure_kl(tensors, self.target),
            smooth_structure_kl(tensors, self.target),
        )


@dataclass
class StructureMetric:
    """Validation row: binned and smooth KL of the current argmax decode."""

    iteration: int
    restart: int
    structure_kl: float
    smooth_kl: float


def design_to_structure(
    predictor: ToyStructurePredictor, target: StructureTensors, config
):
    """Run a gradient design method against a target structure.

    Optimizes the binned KL; the smooth KL of the argmax-decoded sequence is
    tracked alongside as a validation metric. Returns (records, metrics,
    finals, logos) with one final (sequence, structure_kl) per restart.
    """
    if predictor.n != target.n:
        raise DimensionMismatch(f"predictor N={predictor.n} vs target N={target.n}")
    oracle = StructureOracle(predictor, target)
    method = DesignMethod(config.method)
    settings = config.step_settings()
    records: list[TrajectoryRecord] = []
    metrics: list[StructureMetric] = []
    finals: list[tuple[str, float]] = []
    logos: list[np.ndarray] = []
    for restart in range(config.k):
        rng = RngState(config.seed).substream(restart)
        state = init_design_state(
            predictor.n, predictor.alphabet, rng, config.make_optimizer(),
            settings.norm_mode, config.gamma_init, config.beta_init,
        )

        def log_row(info):
            tl = test_loss(oracle, [info["scaled_logits"]], config.s, state.rng)
            state.oracle_calls += config.s
            records.append(
                TrajectoryRecord(
                    iteration=state.iteration,
                    restart=restart,
                    train_loss=info["train_loss"],
                    test_loss=tl,
                    entropy_bits=info["entropy_bits"],
                    penalties=info["penalties"],
                    oracle_calls=state.oracle_calls,
                    elapsed_ms=0.0,
                )
            )
            seq_onehot = one_hot_encode(
                decode(softmax_rows(info["scaled_logits"]), predictor.alphabet),
                predictor.alphabet,
            )
            kl, smooth = oracle.metrics(seq_onehot)
            metrics.append(StructureMetric(state.iteration, restart, kl, smooth))

        _, info = design_step(
            state, method, oracle, ObjectiveStack(), config.s_avg, settings,
            update=False,
        )
        log_row(info)
        for t in range(1, config.iterations + 1):
            _, info = design_step(
                state, method, oracle, ObjectiveStack(), config.s_avg, settings
            )
            if t % config.eval_every == 0 or t == config.iterations:
                log_row(info)

        logo = softmax_rows(scaled_logits(state, method, settings))
        seq = decode(logo, predictor.alphabet)
        kl, _ = oracle.metrics(one_hot_encode(seq, predictor.alphabet))
        finals.append((seq, float(kl)))
        logos.append(logo)
    return records, metrics, finals, logos


# ---------------------------------------------------------------------------
# Target tensor file format
# ---------------------------------------------------------------------------

_MAGIC = b"STRT"
_VERSION = 1


def save_structure_target(tensors: StructureTensors, path) -> None:
    """Write tensors as: magic "STRT", version u32, N u32, four u32 bin
    counts, then float64 head data in order dist, theta, omega, phi
    (row-major, little-endian)."""
    bins = [bins for _, bins, _ in HEAD_LAYOUT]
    header = _MAGIC + struct.pack("<6I", _VERSION, tensors.n, *bins)
    payload = b"".join(
        np.ascontiguousarray(getattr(tensors, name), dtype="<f8").tobytes()
        for name, _, _ in HEAD_LAYOUT
    )
    try:
        Path(path).write_bytes(header + payload)
    except OSError as exc:
        raise IoError(path, str(exc)) from exc


def load_structure_target(path) -> StructureTensors:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(path, str(exc)) from exc
    if raw[:4] != _MAGIC:
        raise ParseError(str(path), "bad magic (not a structure target file)")
    version, n, *bins = struct.unpack_from("<6I", raw, 4)
    if version != _VERSION:
        raise ParseError(str(path), f"unsupported version {version}")
    expected_bins = [b for _, b, _ in HEAD_LAYOUT]
    if bins != expected_bins:
        raise ShapeError(expected_bins, bins)
    offset = 4 + struct.calcsize("<6I")
    heads = {}
    for (name, b, _) in HEAD_LAYOUT:
        count = n * n * b
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        heads[name] = arr.reshape(n, n, b).copy()
    if offset != len(raw):
        raise ShapeError(f"{offset} payload bytes", f"{len(raw)} bytes")
    return StructureTensors(**heads)
