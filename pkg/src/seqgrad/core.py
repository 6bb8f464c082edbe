"""Alphabets, one-hot sequence encodings, and the deterministic RNG contract.

All numeric state in this package is plain float64 ``numpy`` arrays:

* logit matrices    -- real (N, M) arrays,
* probability rows  -- row-stochastic (N, M) arrays,
* one-hot sequences -- (N, M) arrays with exactly one 1 per row.

Randomness flows exclusively through :class:`RngState`, a thin wrapper over
the counter-based Philox generator, so that a (seed, call sequence) pair
produces identical results on every platform. Concurrent work must use
independent substreams obtained via :meth:`RngState.substream`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, UnknownSymbol, ValidationError

__all__ = [
    "Alphabet",
    "DNA",
    "PROTEIN",
    "RngState",
    "one_hot_encode",
    "decode",
]

_PROTEIN_SYMBOLS = "ACDEFGHIKLMNPQRSTVWY"


@dataclass(frozen=True)
class Alphabet:
    """An ordered set of single-character symbols defining the channels."""

    kind: str
    symbols: tuple[str, ...]

    def __post_init__(self):
        if self.kind not in ("dna", "protein", "custom"):
            raise ValidationError("alphabet.kind", f"unsupported kind {self.kind!r}")
        if len(self.symbols) < 2:
            raise ValidationError("alphabet.symbols", "need at least 2 symbols")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValidationError("alphabet.symbols", "symbols must be unique")
        if any(len(s) != 1 for s in self.symbols):
            raise ValidationError("alphabet.symbols", "symbols must be single characters")

    @property
    def size(self) -> int:
        """Number of channels M."""
        return len(self.symbols)

    def index(self, char: str, position: int = -1) -> int:
        try:
            return self.symbols.index(char)
        except ValueError:
            raise UnknownSymbol(position, char) from None

    @staticmethod
    def custom(symbols: str) -> "Alphabet":
        return Alphabet("custom", tuple(symbols))

    @staticmethod
    def from_name(name: str) -> "Alphabet":
        if name == "dna":
            return DNA
        if name == "protein":
            return PROTEIN
        raise ValidationError("alphabet", f"unknown alphabet name {name!r}")


DNA = Alphabet("dna", tuple("ACGT"))
PROTEIN = Alphabet("protein", tuple(_PROTEIN_SYMBOLS))


def one_hot_encode(seq: str, alphabet: Alphabet) -> np.ndarray:
    """Encode a character string as an (N, M) one-hot matrix."""
    n, m = len(seq), alphabet.size
    x = np.zeros((n, m))
    for i, ch in enumerate(seq):
        x[i, alphabet.index(ch, i)] = 1.0
    return x


def decode(x: np.ndarray, alphabet: Alphabet) -> str:
    """Decode a one-hot or probability matrix to a string by per-row argmax.

    Ties break toward the lowest column index, so decoding is fully
    deterministic.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != alphabet.size:
        raise DimensionMismatch(
            f"expected (N, {alphabet.size}) matrix, got shape {x.shape}"
        )
    idx = np.argmax(x, axis=1)
    return "".join(alphabet.symbols[j] for j in idx)


@dataclass
class RngState:
    """Deterministic random stream keyed by a 64-bit seed.

    Wraps the counter-based Philox bit generator; every random decision in
    this package is derived from the uniform doubles it emits, so identical
    seeds yield byte-identical sample streams across platforms. A state is
    single-owner: share by deriving substreams, never by aliasing.
    """

    seed: int
    counter: int = 0
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2**64):
            raise ValidationError("seed", "must be an unsigned 64-bit integer")
        self.seed = int(self.seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))
        if self.counter:
            # Replay to restore a mid-stream position.
            skip, self.counter = self.counter, 0
            self.uniform(skip)

    def uniform(self, size=None) -> np.ndarray | float:
        """Uniform(0, 1) doubles; advances the stream counter."""
        out = self._gen.random(size)
        self.counter += 1 if size is None else int(np.prod(size))
        return out

    def uniform_in(self, low: float, high: float, size=None):
        return low + (high - low) * self.uniform(size)

    def integer(self, n: int) -> int:
        """One integer uniform on {0, ..., n-1} from a single double draw."""
        return min(int(self.uniform() * n), n - 1)

    def choice_excluding(self, n: int, exclude: int) -> int:
        """Uniform draw from {0..n-1} \\ {exclude} using one double."""
        j = self.integer(n - 1)
        return j + 1 if j >= exclude else j

    def substream(self, index: int) -> "RngState":
        """Independent stream number ``index`` derived from this seed."""
        return RngState((self.seed + int(index)) % 2**64)
