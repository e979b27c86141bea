"""LIBSVM parsing and horizontal/vertical partitioning of a sparse dataset."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.sparse as sp


class ParseError(ValueError):
    """Malformed LIBSVM input. ``line`` is 1-based, or 0 for whole-input errors."""

    def __init__(self, message: str, line: int = 0):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass
class Dataset:
    """Sparse design matrix ``A`` (s x d, CSR) with a label/target vector ``b``."""

    A: sp.csr_matrix
    b: np.ndarray

    def __post_init__(self):
        self.A = sp.csr_matrix(self.A, dtype=np.float64)
        self.A.sum_duplicates()
        self.A.sort_indices()
        self.b = np.asarray(self.b, dtype=np.float64).ravel()
        if self.b.shape[0] != self.A.shape[0]:
            raise ValueError(f"{self.b.shape[0]} labels for {self.A.shape[0]} rows")

    @property
    def rows(self) -> int:
        return self.A.shape[0]

    @property
    def cols(self) -> int:
        return self.A.shape[1]

    @classmethod
    def from_dense(cls, A, b) -> "Dataset":
        return cls(sp.csr_matrix(np.asarray(A, dtype=np.float64)), b)

    def dense(self) -> np.ndarray:
        return self.A.toarray()

    def subset_rows(self, rows: np.ndarray) -> "Dataset":
        return Dataset(self.A[rows], self.b[rows])

    def is_binary(self) -> bool:
        return bool(np.all(np.isin(self.b, (-1.0, 1.0))))

    def identical(self, other: "Dataset") -> bool:
        a, o = self.A, other.A
        return (
            a.shape == o.shape
            and np.array_equal(a.indptr, o.indptr)
            and np.array_equal(a.indices, o.indices)
            and np.array_equal(a.data, o.data)
            and np.array_equal(self.b, other.b)
        )


@dataclass
class FeatureShard:
    """Horizontal partition: a worker's subset of samples (all features)."""

    owner: int
    rows: np.ndarray
    data: Dataset


@dataclass
class FeatureBlock:
    """Vertical partition: a worker's subset of feature columns (all samples)."""

    owner: int
    cols: np.ndarray
    data: sp.csr_matrix

    @property
    def dim(self) -> int:
        return len(self.cols)


def _lines(text: bytes | str | Iterable[str]) -> Iterable[str]:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    if isinstance(text, str):
        return text.splitlines()
    return text


def parse_libsvm(text: bytes | str | Iterable[str], n_features: int | None = None) -> Dataset:
    """Parse ``<label> <idx>:<val> ...`` lines (1-based, strictly increasing indices).

    Labels are mapped to {-1, +1} when exactly two distinct values occur
    (smaller -> -1). ``n_features`` may exceed the largest index seen.
    """
    labels: list[float] = []
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    max_idx = 0
    for lineno, raw in enumerate(_lines(text), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            labels.append(float(tokens[0]))
        except ValueError:
            raise ParseError(f"bad label {tokens[0]!r}", lineno) from None
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(f"malformed token {tok!r}", lineno)
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(f"malformed token {tok!r}", lineno) from None
            if idx < 1:
                raise ParseError(f"index {idx} is not 1-based", lineno)
            if idx <= prev:
                raise ParseError(f"index {idx} does not increase (previous {prev})", lineno)
            prev = idx
            indices.append(idx - 1)
            values.append(val)
        max_idx = max(max_idx, prev)
        indptr.append(len(indices))
    if not labels:
        raise ParseError("empty input")

    d = max_idx if n_features is None else n_features
    if d < max_idx:
        raise ParseError(f"n_features={n_features} is smaller than max index {max_idx}")

    b = np.asarray(labels)
    classes = np.unique(b)
    if len(classes) == 2:
        b = np.where(b == classes[1], 1.0, -1.0)
    A = sp.csr_matrix(
        (np.asarray(values, dtype=np.float64), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
        shape=(len(labels), d),
    )
    return Dataset(A, b)


def load_libsvm(path, n_features: int | None = None) -> Dataset:
    with open(path, "rb") as fh:
        return parse_libsvm(fh.read(), n_features=n_features)


def _fmt_label(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def to_libsvm(ds: Dataset) -> str:
    """Serialize back to LIBSVM text; values use ``repr`` so reparsing is exact."""
    A = ds.A
    out = []
    for i in range(ds.rows):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        feats = " ".join(f"{j + 1}:{v!r}" for j, v in zip(A.indices[lo:hi], A.data[lo:hi].tolist()))
        out.append(f"{_fmt_label(ds.b[i])} {feats}".rstrip())
    return "\n".join(out) + "\n"


def _order(count: int, shuffle: bool, seed: int | None) -> np.ndarray:
    if not shuffle:
        return np.arange(count)
    return np.random.default_rng(seed).permutation(count)


def split_horizontal(ds: Dataset, n: int, shuffle: bool = False, seed: int | None = None) -> list[FeatureShard]:
    """Split samples into ``n`` contiguous shards whose sizes differ by at most one."""
    if n < 1:
        raise ValueError("worker count must be positive")
    if n > ds.rows:
        raise ValueError(f"cannot split {ds.rows} samples across {n} workers")
    parts = np.array_split(_order(ds.rows, shuffle, seed), n)
    return [FeatureShard(i, np.sort(rows), ds.subset_rows(np.sort(rows))) for i, rows in enumerate(parts)]


def split_vertical(ds: Dataset, n: int, shuffle: bool = False, seed: int | None = None) -> list[FeatureBlock]:
    """Split feature columns into ``n`` contiguous blocks whose sizes differ by at most one."""
    if n < 1:
        raise ValueError("worker count must be positive")
    if n > ds.cols:
        raise ValueError(f"cannot split {ds.cols} features across {n} workers")
    parts = np.array_split(_order(ds.cols, shuffle, seed), n)
    blocks = []
    for i, cols in enumerate(parts):
        cols = np.sort(cols)
        blocks.append(FeatureBlock(i, cols, ds.A[:, cols].tocsr()))
    return blocks
