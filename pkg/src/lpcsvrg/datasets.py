"""Dense datasets and a LIBSVM text reader."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyDataset, ParseError


@dataclass
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    provenance: dict = field(default_factory=dict)
    x_star: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != self.targets.size:
            raise ValueError("features must be n x d with one target per row")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.targets).tobytes())
        return h.hexdigest()


def load_libsvm(path, d=None) -> Dataset:
    """Read ``label idx:val ...`` lines (1-based indices, any order).

    Blank lines and ``#`` comments are skipped. ``d`` pads the feature
    dimension beyond the largest index seen.
    """
    path = Path(path)
    labels, rows = [], []
    max_idx = 0
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                label = float(tokens[0])
            except ValueError:
                raise ParseError(lineno, f"bad label {tokens[0]!r}") from None
            entries = {}
            for tok in tokens[1:]:
                idx, sep, val = tok.partition(":")
                try:
                    if not sep:
                        raise ValueError
                    i, v = int(idx), float(val)
                except ValueError:
                    raise ParseError(lineno, f"bad feature token {tok!r}") from None
                if i < 1:
                    raise ParseError(lineno, f"feature index must be >= 1, got {i}")
                if i in entries:
                    raise ParseError(lineno, f"duplicate feature index {i}")
                entries[i] = v
                max_idx = max(max_idx, i)
            labels.append(label)
            rows.append(entries)
    if not rows:
        raise EmptyDataset(f"{path} contains no rows")
    dim = max(max_idx, d or 0)
    X = np.zeros((len(rows), dim))
    for r, entries in enumerate(rows):
        for i, v in entries.items():
            X[r, i - 1] = v
    return Dataset(X, np.array(labels), {"kind": "libsvm", "path": str(path)})


def write_libsvm(data: Dataset, path) -> None:
    """Write ``data`` in LIBSVM text form; floats use their exact repr, zeros are omitted."""
    with Path(path).open("w") as fh:
        for row, target in zip(data.features, data.targets):
            nz = np.flatnonzero(row)
            feats = " ".join(f"{i + 1}:{float(row[i])!r}" for i in nz)
            fh.write(f"{float(target)!r} {feats}".rstrip() + "\n")
