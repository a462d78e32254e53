"""
Dataset Module

This module reads, writes, normalizes and characterizes sparse binary
classification datasets. Samples are stored row-compressed (CSR arrays) with
labels in {-1, +1}; the support T_i of sample i is the index set of its row.

It also computes the support statistics used by the sparse estimators
(per-coordinate counts c_v, the diagonal D_vv = n / c_v and the sparsity
measure Delta = max_v c_v / n) and generates the synthetic datasets used by the
benchmarks.

@version 0.1.0
@date October 2026
"""

import hashlib
import io
import logging
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, List, Optional, TextIO, Tuple, Union

import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)

CACHE_FORMAT_VERSION = 1
DIMENSION_HEADER = "# dimension:"


class DatasetFormatError(ValueError):
    """Raised when a dataset file or array set is malformed."""

    def __init__(self, message: str, line_number: Optional[int] = None,
                 sample_index: Optional[int] = None):
        super().__init__(message)
        self.line_number = line_number
        self.sample_index = sample_index


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class SparseDataset:
    """Row-compressed design matrix with +/-1 labels. Immutable after construction."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    labels: np.ndarray
    n: int
    d: int

    def __post_init__(self):
        indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.float64)

        if self.n < 1:
            raise DatasetFormatError("Dataset is empty")
        if indptr.shape != (self.n + 1,) or indptr[0] != 0 or indptr[-1] != indices.size:
            raise DatasetFormatError("indptr does not describe n rows of the stored entries")
        if indices.size != data.size:
            raise DatasetFormatError("indices and data have different lengths")
        if labels.shape != (self.n,):
            raise DatasetFormatError(f"Expected {self.n} labels, got {labels.size}")
        if np.any(np.diff(indptr) < 0):
            raise DatasetFormatError("indptr must be nondecreasing")
        if indices.size and (indices.min() < 0 or indices.max() >= self.d):
            raise DatasetFormatError(f"Coordinate index outside [0, {self.d})")
        if np.any(data == 0.0):
            raise DatasetFormatError("Explicitly stored zero values are not allowed")
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise DatasetFormatError("Labels must be -1 or +1")

        # strictly increasing within each row: every step inside a row is positive
        steps = np.diff(indices)
        row_starts = indptr[1:-1]
        inside = np.ones(steps.size, dtype=bool)
        inside[row_starts[(row_starts > 0) & (row_starts < indices.size)] - 1] = False
        if np.any(steps[inside] <= 0):
            bad = int(np.searchsorted(indptr, np.flatnonzero(inside & (steps <= 0))[0] + 1, side="right") - 1)
            raise DatasetFormatError(f"Indices of sample {bad} are not strictly increasing",
                                     sample_index=bad)

        object.__setattr__(self, "indptr", _readonly(indptr))
        object.__setattr__(self, "indices", _readonly(indices))
        object.__setattr__(self, "data", _readonly(data))
        object.__setattr__(self, "labels", _readonly(labels))

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    @property
    def density(self) -> float:
        return self.nnz / float(self.n * self.d) if self.d else 0.0

    @property
    def max_row_nnz(self) -> int:
        return int(np.diff(self.indptr).max())

    def row(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        """Return (coordinate indices, values) of sample i."""
        if not 0 <= i < self.n:
            raise IndexError(f"Sample index {i} out of range [0, {self.n})")
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def row_ids(self) -> np.ndarray:
        """Sample index of every stored entry."""
        return np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.indptr))

    def row_norms(self) -> np.ndarray:
        return np.sqrt(np.bincount(self.row_ids(), weights=self.data ** 2, minlength=self.n))

    @cached_property
    def _csr(self) -> sparse.csr_matrix:
        return sparse.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.d))

    def to_csr(self) -> sparse.csr_matrix:
        return self._csr

    def to_dense(self) -> np.ndarray:
        return self.to_csr().toarray()


@dataclass(frozen=True)
class SupportProfile:
    """Per-coordinate support counts, the diagonal D and the sparsity measure Delta."""

    counts: np.ndarray
    d_diag: np.ndarray
    delta: float
    remap: Optional[np.ndarray] = None

    @property
    def min_d(self) -> float:
        return float(self.d_diag.min()) if self.d_diag.size else float('nan')

    @property
    def max_d(self) -> float:
        return float(self.d_diag.max()) if self.d_diag.size else float('nan')


def _tokens(line: str) -> List[str]:
    return line.split("#", 1)[0].split()


def parse_libsvm(stream: Union[TextIO, Iterable[str], str], d: Optional[int] = None) -> SparseDataset:
    """
    Parse LIBSVM text (`label idx:val idx:val ...`, 1-based ascending indices).

    Labels <= 0 map to -1 and labels > 0 to +1; more than two distinct raw labels
    is an error. Explicit zeros are dropped. A `# dimension: N` header line (as
    written by serialize_libsvm) or the `d` argument fixes the coordinate count;
    otherwise d is the largest index seen.

    Args:
        stream: text stream, iterable of lines, or the whole text as a string
        d (Optional[int]): coordinate count override

    Returns:
        SparseDataset: parsed dataset

    Raises:
        DatasetFormatError: malformed line (with line number), non-ascending
            indices, more than two labels, or an empty dataset
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)

    indptr = [0]
    indices: List[int] = []
    values: List[float] = []
    raw_labels: List[float] = []
    header_d: Optional[int] = None

    for line_number, line in enumerate(stream, start=1):
        stripped = line.strip()
        if stripped.startswith(DIMENSION_HEADER):
            try:
                header_d = int(stripped[len(DIMENSION_HEADER):])
            except ValueError:
                raise DatasetFormatError(f"Line {line_number}: bad dimension header", line_number)
            continue
        parts = _tokens(line)
        if not parts:
            continue

        try:
            raw_labels.append(float(parts[0]))
        except ValueError:
            raise DatasetFormatError(f"Line {line_number}: label '{parts[0]}' is not a number",
                                     line_number)

        previous = 0
        for token in parts[1:]:
            index_text, sep, value_text = token.partition(":")
            try:
                if not sep:
                    raise ValueError(token)
                index = int(index_text)
                value = float(value_text)
            except ValueError:
                raise DatasetFormatError(f"Line {line_number}: malformed entry '{token}'",
                                         line_number)
            if index < 1:
                raise DatasetFormatError(f"Line {line_number}: index {index} is not 1-based",
                                         line_number)
            if index <= previous:
                raise DatasetFormatError(
                    f"Line {line_number}: non-ascending indices ({previous} then {index})",
                    line_number)
            previous = index
            if value != 0.0:
                indices.append(index - 1)
                values.append(value)
        indptr.append(len(indices))

    if not raw_labels:
        raise DatasetFormatError("Dataset is empty")

    distinct = set(raw_labels)
    if len(distinct) > 2:
        raise DatasetFormatError(f"Found {len(distinct)} distinct labels; only binary data is supported")

    observed_d = (max(indices) + 1) if indices else 0
    if d is None:
        d = header_d if header_d is not None else observed_d
    if d < observed_d:
        raise DatasetFormatError(f"Dimension override {d} is smaller than the largest index {observed_d}")

    labels = np.where(np.asarray(raw_labels) <= 0.0, -1.0, 1.0)
    dataset = SparseDataset(indptr=np.asarray(indptr), indices=np.asarray(indices, dtype=np.int64),
                            data=np.asarray(values, dtype=np.float64), labels=labels,
                            n=len(raw_labels), d=int(d))
    logger.info(f"Parsed LIBSVM data: n={dataset.n}, d={dataset.d}, nnz={dataset.nnz}")
    return dataset


def serialize_libsvm(ds: SparseDataset) -> str:
    """Write a dataset as LIBSVM text; parse_libsvm(serialize_libsvm(ds)) == ds."""
    lines = [f"{DIMENSION_HEADER} {ds.d}"]
    for i in range(ds.n):
        idx, vals = ds.row(i)
        label = "+1" if ds.labels[i] > 0 else "-1"
        entries = " ".join(f"{v + 1}:{val!r}" for v, val in zip(idx.tolist(), vals.tolist()))
        lines.append(f"{label} {entries}".rstrip())
    return "\n".join(lines) + "\n"


def normalize_rows(ds: SparseDataset) -> SparseDataset:
    """Scale every row to unit Euclidean norm; the sparsity pattern is unchanged."""
    norms = ds.row_norms()
    zero_rows = np.flatnonzero(norms == 0.0)
    if zero_rows.size:
        bad = int(zero_rows[0])
        raise DatasetFormatError(f"Sample {bad} is an all-zero row and cannot be normalized",
                                 sample_index=bad)
    data = ds.data / norms[ds.row_ids()]
    return SparseDataset(indptr=ds.indptr, indices=ds.indices, data=data,
                         labels=ds.labels, n=ds.n, d=ds.d)


def compute_support_profile(ds: SparseDataset) -> Tuple[SparseDataset, SupportProfile]:
    """
    Count coordinate supports, drop coordinates no sample touches, and build D and Delta.

    Returns:
        Tuple[SparseDataset, SupportProfile]: the (possibly compacted) dataset and
            its profile; profile.remap maps original to compacted indices (-1 for
            removed coordinates) or is None when nothing was removed
    """
    counts = np.bincount(ds.indices, minlength=ds.d).astype(np.int64)
    keep = counts > 0
    if not np.any(keep):
        logger.warning(f"Dataset has no nonzero entries; all {ds.d} coordinates removed")
        remap = _readonly(np.full(ds.d, -1, dtype=np.int64)) if ds.d else None
        empty = SparseDataset(indptr=np.zeros(ds.n + 1, dtype=np.int64), indices=np.empty(0, dtype=np.int64),
                              data=np.empty(0), labels=ds.labels, n=ds.n, d=0)
        return empty, SupportProfile(counts=_readonly(np.empty(0, dtype=np.int64)),
                                     d_diag=_readonly(np.empty(0)), delta=0.0, remap=remap)

    remap = None
    if not np.all(keep):
        remap = np.full(ds.d, -1, dtype=np.int64)
        remap[keep] = np.arange(int(keep.sum()), dtype=np.int64)
        removed = ds.d - int(keep.sum())
        logger.info(f"Compacted {removed} coordinates with empty support")
        ds = SparseDataset(indptr=ds.indptr, indices=remap[ds.indices], data=ds.data,
                           labels=ds.labels, n=ds.n, d=int(keep.sum()))
        counts = counts[keep]
        _readonly(remap)

    d_diag = ds.n / counts.astype(np.float64)
    profile = SupportProfile(counts=_readonly(counts), d_diag=_readonly(d_diag),
                             delta=float(counts.max()) / ds.n, remap=remap)
    return ds, profile


def dataset_stats(ds: SparseDataset, profile: SupportProfile) -> dict:
    """Summary statistics printed by the prep command."""
    return {
        'n': ds.n,
        'd': ds.d,
        'nnz': ds.nnz,
        'density': ds.density,
        'delta': profile.delta,
        'min_d': profile.min_d,
        'max_d': profile.max_d,
    }


def gen_synthetic(n: int, seed: int) -> SparseDataset:
    """Identity design matrix (d = n, row i = e_i) with uniform random labels."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n) * 2.0 - 1.0
    return SparseDataset(indptr=np.arange(n + 1), indices=np.arange(n), data=np.ones(n),
                         labels=labels, n=n, d=n)


def gen_random_sparse(n: int, d: int, density: float, seed: int) -> SparseDataset:
    """Bernoulli(density) sparsity pattern with Gaussian values; every row has an entry."""
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must be in (0, 1], got {density}")
    rng = np.random.default_rng(seed)
    row_nnz = np.maximum(rng.binomial(d, density, size=n), 1)
    indptr = np.concatenate(([0], np.cumsum(row_nnz)))
    indices = np.empty(indptr[-1], dtype=np.int64)
    for i in range(n):
        indices[indptr[i]:indptr[i + 1]] = np.sort(rng.choice(d, size=row_nnz[i], replace=False))
    data = rng.standard_normal(indptr[-1])
    data[data == 0.0] = 1.0
    labels = rng.integers(0, 2, size=n) * 2.0 - 1.0
    return SparseDataset(indptr=indptr, indices=indices, data=data, labels=labels, n=n, d=d)


def gen_dense_toy(n: int, d: int, seed: int, base_density: float = 0.1,
                  shift: float = 1e-3) -> SparseDataset:
    """Fully dense data: a sparse binary matrix with a small positive number added to every entry."""
    rng = np.random.default_rng(seed)
    values = (rng.random((n, d)) < base_density).astype(np.float64) + shift
    labels = rng.integers(0, 2, size=n) * 2.0 - 1.0
    indptr = np.arange(n + 1, dtype=np.int64) * d
    indices = np.tile(np.arange(d, dtype=np.int64), n)
    return SparseDataset(indptr=indptr, indices=indices, data=values.ravel(), labels=labels, n=n, d=d)


def dataset_hash(ds: SparseDataset) -> str:
    """Content hash keying the f* cache."""
    digest = hashlib.sha256()
    for array in (ds.indptr, ds.indices, ds.data, ds.labels):
        digest.update(array.tobytes())
    digest.update(str(ds.d).encode("ascii"))
    return digest.hexdigest()[:16]


def save_cache(ds: SparseDataset, path: str) -> None:
    """Write the binary cache (numpy npz with a format_version header)."""
    np.savez(path, format_version=np.array(CACHE_FORMAT_VERSION), indptr=ds.indptr,
             indices=ds.indices, data=ds.data, label=ds.labels, shape=np.array([ds.n, ds.d]))
    logger.info(f"Wrote dataset cache {path}")


def load_cache(path: str) -> SparseDataset:
    with np.load(path) as loader:
        version = int(loader['format_version']) if 'format_version' in loader.files else None
        if version != CACHE_FORMAT_VERSION:
            raise DatasetFormatError(f"Unsupported cache format version {version} in {path}")
        n, d = (int(v) for v in loader['shape'])
        return SparseDataset(indptr=loader['indptr'], indices=loader['indices'], data=loader['data'],
                             labels=loader['label'], n=n, d=d)


def load_dataset(path: str, d: Optional[int] = None) -> SparseDataset:
    """Load a LIBSVM text file or an npz cache, chosen by extension."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Dataset file not found: {path}")
    if path.endswith(".npz"):
        return load_cache(path)
    with open(path, 'r', encoding='utf-8') as handle:
        return parse_libsvm(handle, d=d)
