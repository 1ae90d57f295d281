"""Reading and writing feature streams in the ``memstream-v1`` text format.

The first line is ``#memstream-v1 d=<int> C=<int>`` (an optional
``batch_size=<int>`` token is accepted on read); each following line is
``label,f0,...,f{d-1}``.  Floats are written with 9 significant digits,
enough to round-trip float32 exactly.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .stream import StreamBatch

MAGIC = "#memstream-v1"
_TOKEN = re.compile(r"^(d|C|batch_size)=(\d+)$")


class StreamFormatError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


@dataclass
class FeatureStreamFile:
    dim: int
    num_classes: int
    labels: np.ndarray
    features: np.ndarray
    batch_size: int | None = None

    def batches(self, batch_size: int | None = None) -> Iterator[StreamBatch]:
        bs = batch_size or self.batch_size
        if not bs or bs < 1:
            raise ValueError("batch_size must be given and >= 1")
        for t, start in enumerate(range(0, len(self.labels), bs)):
            stop = min(start + bs, len(self.labels))
            ids = np.arange(start, stop, dtype=np.int64)
            yield StreamBatch(t, self.features[start:stop], self.labels[start:stop],
                              ids, ids.copy(), 0)


def _parse_header(line: str, path) -> dict[str, int]:
    parts = line.split(" ")
    if not parts or parts[0] != MAGIC:
        raise StreamFormatError(path, 1, f"expected header starting with {MAGIC!r}")
    fields: dict[str, int] = {}
    for tok in parts[1:]:
        m = _TOKEN.match(tok)
        if not m or m.group(1) in fields:
            raise StreamFormatError(path, 1, f"bad header token {tok!r}")
        fields[m.group(1)] = int(m.group(2))
    if "d" not in fields or "C" not in fields:
        raise StreamFormatError(path, 1, "header must define d and C")
    if fields["d"] < 1 or fields["C"] < 2:
        raise StreamFormatError(path, 1, "header needs d >= 1 and C >= 2")
    return fields


def read_stream(path) -> FeatureStreamFile:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise StreamFormatError(path, 1, "empty file")
    hdr = _parse_header(lines[0], path)
    d, c = hdr["d"], hdr["C"]
    labels = np.empty(len(lines) - 1, dtype=np.int64)
    feats = np.empty((len(lines) - 1, d), dtype=np.float32)
    for i, line in enumerate(lines[1:]):
        lineno = i + 2
        fields = line.split(",")
        if len(fields) != d + 1:
            raise StreamFormatError(path, lineno, f"expected {d + 1} fields, found {len(fields)}")
        try:
            label = int(fields[0])
            row = [float(f) for f in fields[1:]]
        except ValueError as exc:
            raise StreamFormatError(path, lineno, str(exc)) from None
        if not 0 <= label < c:
            raise StreamFormatError(path, lineno, f"label {label} outside [0, {c})")
        labels[i] = label
        feats[i] = row
    return FeatureStreamFile(d, c, labels, feats, hdr.get("batch_size"))


def load_stream(path, batch_size: int) -> Iterator[StreamBatch]:
    """Batches of ``batch_size`` rows in file order (the last may be short)."""
    return read_stream(path).batches(batch_size)


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_stream(path, batches: Iterable[StreamBatch], dim: int, num_classes: int) -> int:
    """Serialize ``batches``; returns the number of rows written.  Atomic."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    rows = 0
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{MAGIC} d={dim} C={num_classes}\n")
        for b in batches:
            for label, row in zip(b.labels, b.features):
                fh.write(",".join([str(int(label))] + [_fmt(v) for v in row.tolist()]))
                fh.write("\n")
                rows += 1
    os.replace(tmp, path)
    return rows
