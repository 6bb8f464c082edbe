"""Serialization helpers: full-precision JSON and minimal FASTA reading.

Weight files and config echoes are JSON documents whose floats are printed
with ``%.17g`` so that a parse -> serialize round trip reproduces every
double bit-exactly.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import IoError, ParseError

__all__ = ["dumps_json17", "write_json17", "read_json", "read_fasta"]


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError("non-finite floats are not serializable")
    if x == int(x) and abs(x) < 1e16:
        return f"{x:.1f}"
    return f"{x:.17g}"


def _encode(obj, indent: int) -> str:
    pad = " " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = ",\n".join(
            f'{pad}  {json.dumps(str(k))}: {_encode(v, indent + 2)}'
            for k, v in obj.items()
        )
        return "{\n" + items + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else list(obj)
        if not seq:
            return "[]"
        flat = all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq)
        if flat:
            return "[" + ", ".join(_encode(v, indent) for v in seq) + "]"
        items = ",\n".join(f"{pad}  {_encode(v, indent + 2)}" for v in seq)
        return "[\n" + items + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json17(obj) -> str:
    """Serialize to JSON text with %.17g floats (lossless round trip)."""
    return _encode(obj, 0) + "\n"


def write_json17(obj, path) -> None:
    try:
        Path(path).write_text(dumps_json17(obj))
    except OSError as exc:
        raise IoError(path, str(exc)) from exc


def read_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(path, str(exc)) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(str(path), f"line {exc.lineno}: {exc.msg}") from exc


def read_fasta(path) -> list[tuple[str, str]]:
    """Read '>'-header FASTA records as (header, upper-cased sequence) pairs."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(path, str(exc)) from exc
    records: list[tuple[str, str]] = []
    header = None
    chunks: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith(">"):
            if header is not None:
                records.append((header, "".join(chunks).upper()))
            header = line[1:].strip()
            chunks = []
        else:
            if header is None:
                raise ParseError(str(path), f"line {lineno}: sequence before header")
            chunks.append(line)
    if header is not None:
        records.append((header, "".join(chunks).upper()))
    return records
