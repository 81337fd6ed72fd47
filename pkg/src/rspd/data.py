"""libsvm-format datasets, class statistics and reproducible index sampling."""

import gzip
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ContractViolation, ParseError

# {0, 2} -> -1 covers public covtype copies labelled {1, 2}.
DEFAULT_LABEL_MAP = {-1: -1, 1: 1, 0: -1, 2: -1}


@dataclass(frozen=True, eq=False)
class SparseDataset:
    """Row-sparse design matrix with +-1 labels.

    ``X`` is a CSR matrix with sorted column indices per row. Class
    fractions and per-class means are derived on construction.
    """

    X: sp.csr_matrix
    labels: np.ndarray
    pos_fraction: float = field(init=False)
    mu_pos: np.ndarray = field(init=False, repr=False)
    mu_neg: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = self.X
        if not sp.isspmatrix_csr(X):
            X = sp.csr_matrix(X, dtype=np.float64)
            object.__setattr__(self, "X", X)
        labels = np.asarray(self.labels, dtype=np.int8)
        if labels.shape != (X.shape[0],):
            raise ContractViolation("one label per row is required")
        if not np.all(np.abs(labels) == 1):
            raise ContractViolation("labels must be -1 or +1")
        object.__setattr__(self, "labels", labels)
        pos = labels == 1
        n_pos = int(pos.sum())
        n_neg = labels.size - n_pos
        object.__setattr__(self, "pos_fraction", n_pos / labels.size if labels.size else 0.0)
        sums_pos = np.asarray(X[pos].sum(axis=0)).ravel()
        sums_neg = np.asarray(X[~pos].sum(axis=0)).ravel()
        object.__setattr__(self, "mu_pos", sums_pos / n_pos if n_pos else np.zeros(X.shape[1]))
        object.__setattr__(self, "mu_neg", sums_neg / n_neg if n_neg else np.zeros(X.shape[1]))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def n_pos(self):
        return int((self.labels == 1).sum())

    @property
    def n_neg(self):
        return self.n - self.n_pos

    def row(self, i):
        lo, hi = self.X.indptr[i], self.X.indptr[i + 1]
        return self.X.indices[lo:hi], self.X.data[lo:hi]

    def subset(self, rows):
        rows = np.asarray(rows)
        return SparseDataset(self.X[rows], self.labels[rows])

    def with_dimension(self, d):
        if d < self.d:
            raise ContractViolation(f"cannot shrink feature dimension {self.d} to {d}")
        X = sp.csr_matrix((self.X.data, self.X.indices, self.X.indptr), shape=(self.n, d))
        return SparseDataset(X, self.labels)

    def same_as(self, other):
        return (
            self.X.shape == other.X.shape
            and np.array_equal(self.X.indptr, other.X.indptr)
            and np.array_equal(self.X.indices, other.X.indices)
            and np.array_equal(self.X.data, other.X.data)
            and np.array_equal(self.labels, other.labels)
        )


def parse_libsvm(stream, n_features=None, label_map=None):
    """Parse ``<label> <idx>:<val> ...`` lines into a :class:`SparseDataset`.

    Indices are 1-based and must increase strictly within a line. Labels are
    mapped through ``label_map`` (default: -1/0/2 -> -1, 1 -> +1). The
    feature dimension is the largest index seen unless ``n_features`` is
    given.
    """
    label_map = DEFAULT_LABEL_MAP if label_map is None else label_map
    indptr = [0]
    indices = []
    values = []
    labels = []
    max_index = 0
    for lineno, line in enumerate(stream, start=1):
        if isinstance(line, bytes):
            line = line.decode()
        tokens = line.split()
        if not tokens:
            continue
        try:
            raw = float(tokens[0])
        except ValueError:
            raise ParseError(f"bad label {tokens[0]!r}", lineno) from None
        if raw != int(raw) or int(raw) not in label_map:
            raise ParseError(f"label {tokens[0]!r} cannot be mapped to +-1", lineno)
        labels.append(label_map[int(raw)])
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            try:
                if not sep:
                    raise ValueError
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(f"malformed feature token {tok!r}", lineno) from None
            if idx < 1:
                raise ParseError(f"feature index {idx} is not 1-based", lineno)
            if idx <= prev:
                raise ParseError(f"feature indices not strictly increasing at {idx}", lineno)
            prev = idx
            indices.append(idx - 1)
            values.append(val)
        max_index = max(max_index, prev)
        indptr.append(len(indices))
    if not labels:
        raise ParseError("no examples found")
    d = max_index if n_features is None else int(n_features)
    if d < max_index:
        raise ParseError(f"feature index {max_index} exceeds n_features={d}")
    X = sp.csr_matrix(
        (np.array(values, dtype=np.float64), np.array(indices, dtype=np.int32), np.array(indptr)),
        shape=(len(labels), d),
    )
    return SparseDataset(X, np.array(labels, dtype=np.int8))


def load_libsvm(path, n_features=None, label_map=None):
    """Read a libsvm file, transparently handling ``.gz`` compression."""
    path = str(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rt") as fh:
        return parse_libsvm(fh, n_features=n_features, label_map=label_map)


def serialize_libsvm(dataset, stream=None):
    """Write ``dataset`` in libsvm format; values use 17 significant digits.

    Returns the text when ``stream`` is None.
    """
    out = io.StringIO() if stream is None else stream
    for i in range(dataset.n):
        idx, val = dataset.row(i)
        parts = ["+1" if dataset.labels[i] == 1 else "-1"]
        parts.extend(f"{j + 1}:{v:.17g}" for j, v in zip(idx, val))
        out.write(" ".join(parts) + "\n")
    if stream is None:
        return out.getvalue()
    return None


def normalize_rows(dataset, mode="none"):
    """Return a copy whose nonzero rows have unit Euclidean norm (``unit_l2``)."""
    if mode == "none":
        return SparseDataset(dataset.X.copy(), dataset.labels.copy())
    if mode != "unit_l2":
        raise ContractViolation(f"unknown normalization mode {mode!r}")
    X = dataset.X.copy()
    norms = np.sqrt(np.asarray(X.multiply(X).sum(axis=1)).ravel())
    scale = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 1.0)
    X.data *= np.repeat(scale, np.diff(X.indptr))
    return SparseDataset(X, dataset.labels.copy())


def train_test_split(dataset, test_fraction=0.2, seed=0):
    """Random ratio split; returns ``(train, test)``."""
    if not 0.0 < test_fraction < 1.0:
        raise ContractViolation(f"test_fraction must lie in (0, 1), got {test_fraction}")
    perm = np.random.default_rng(seed).permutation(dataset.n)
    n_test = max(1, int(round(test_fraction * dataset.n)))
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))


class UniformSampler:
    """Reproducible stream of uniform indices in ``{0, ..., n-1}``.

    Backed by numpy's counter-based Philox generator. Draws are served from
    fixed-size internal blocks, so the stream does not depend on how callers
    chunk their requests.
    """

    BLOCK = 8192

    def __init__(self, n, seed):
        if n < 1:
            raise ContractViolation(f"need n >= 1, got {n}")
        self.n = int(n)
        self._gen = np.random.Generator(np.random.Philox(seed))
        self._buf = np.empty(0, dtype=np.int64)
        self._pos = 0

    def draw(self, k):
        out = np.empty(k, dtype=np.int64)
        filled = 0
        while filled < k:
            if self._pos == self._buf.size:
                self._buf = self._gen.integers(0, self.n, size=self.BLOCK, dtype=np.int64)
                self._pos = 0
            take = min(k - filled, self._buf.size - self._pos)
            out[filled : filled + take] = self._buf[self._pos : self._pos + take]
            filled += take
            self._pos += take
        return out

    def __iter__(self):
        while True:
            yield from self.draw(self.BLOCK)


def uniform_sampler(n, seed):
    return UniformSampler(n, seed)


def synthetic_binary_dataset(n, d, density=0.1, noise=0.5, pos_fraction=0.3, seed=0):
    """Random sparse binary-feature classification data in the style of a9a.

    Labels come from a noisy linear score thresholded so roughly
    ``pos_fraction`` of examples are positive.
    """
    rng = np.random.default_rng(seed)
    mask = rng.random((n, d)) < density
    X = mask.astype(np.float64)
    w = rng.standard_normal(d)
    score = X @ w + noise * np.sqrt(density * d) * rng.standard_normal(n)
    cut = np.quantile(score, 1.0 - pos_fraction)
    labels = np.where(score > cut, 1, -1).astype(np.int8)
    return SparseDataset(sp.csr_matrix(X), labels)
