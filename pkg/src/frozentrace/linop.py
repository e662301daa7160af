"""Matrix-free linear operators, synthetic spectra and Matrix Market input."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ContractError, MatrixMarketError
from .probes import draw_from, probe_generator, GAUSSIAN

__all__ = [
    "LinearOperator",
    "DenseOperator",
    "SpectrumSpec",
    "make_dense",
    "make_spectral",
    "exact_trace",
    "load_matrix_market",
    "random_symmetric",
    "random_orthogonal",
    "write_matrix_market",
]

# Distinct stream ids keep operator construction independent of probe draws
# sharing the same integer seed.
_ROTATION_STREAM = 0x5EED_0001
_SYMMETRIC_STREAM = 0x5EED_0002


class LinearOperator:
    """Square operator of dimension ``dim`` known only through its action.

    ``apply`` maps a length-``dim`` vector to a length-``dim`` vector.  If no
    ``apply_block`` is supplied, blocks are applied column by column.
    """

    def __init__(
        self,
        dim: int,
        apply: Callable[[np.ndarray], np.ndarray],
        apply_block: Callable[[np.ndarray], np.ndarray] | None = None,
        is_symmetric: bool = False,
        is_psd_claimed: bool = False,
    ):
        if int(dim) < 1:
            raise ContractError(f"operator dimension must be positive, got {dim}")
        self.dim = int(dim)
        self._apply = apply
        self._apply_block = apply_block
        self.is_symmetric = bool(is_symmetric)
        self.is_psd_claimed = bool(is_psd_claimed)

    @property
    def shape(self):
        return (self.dim, self.dim)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ContractError(f"expected a vector of length {self.dim}, got shape {x.shape}")
        return np.asarray(self._apply(x), dtype=np.float64)

    def apply_block(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.dim:
            raise ContractError(f"expected a {self.dim} x k block, got shape {x.shape}")
        if self._apply_block is not None:
            return np.asarray(self._apply_block(x), dtype=np.float64)
        if x.shape[1] == 0:
            return np.zeros_like(x)
        return np.column_stack([self.apply(x[:, j]) for j in range(x.shape[1])])

    def __matmul__(self, x):
        x = np.asarray(x)
        return self.apply(x) if x.ndim == 1 else self.apply_block(x)

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"


class DenseOperator(LinearOperator):
    """Operator backed by an explicit ``dim x dim`` array.

    The stored array is a private read-only copy, so instances are safe to
    share between threads.
    """

    def __init__(self, entries, is_symmetric: bool | None = None, is_psd_claimed: bool = False):
        a = np.array(entries, dtype=np.float64, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ContractError(f"dense operator needs a square matrix, got shape {a.shape}")
        if a.shape[0] == 0:
            raise ContractError("dense operator needs a non-empty matrix")
        if not np.all(np.isfinite(a)):
            raise ContractError("dense operator entries must be finite")
        a.setflags(write=False)
        if is_symmetric is None:
            is_symmetric = bool(np.array_equal(a, a.T))
        self.matrix = a
        super().__init__(
            a.shape[0],
            apply=a.dot,
            apply_block=a.dot,
            is_symmetric=is_symmetric,
            is_psd_claimed=is_psd_claimed,
        )

    @property
    def exact_trace(self) -> float:
        return float(np.sum(np.diagonal(self.matrix)))

    @property
    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.matrix, "fro"))

    def eigenvalues(self) -> np.ndarray:
        """Ascending eigenvalues (symmetric part for non-symmetric operators)."""
        a = self.matrix
        if not self.is_symmetric:
            a = 0.5 * (a + a.T)
        return np.linalg.eigvalsh(a)

    def __add__(self, other):
        if not isinstance(other, DenseOperator):
            return NotImplemented
        if other.dim != self.dim:
            raise ContractError(f"dimension mismatch: {self.dim} vs {other.dim}")
        return DenseOperator(self.matrix + other.matrix)

    def scaled(self, alpha: float) -> "DenseOperator":
        return DenseOperator(alpha * self.matrix, is_psd_claimed=self.is_psd_claimed and alpha >= 0)


def make_dense(entries, is_psd_claimed: bool = False) -> DenseOperator:
    return DenseOperator(entries, is_psd_claimed=is_psd_claimed)


def exact_trace(op: LinearOperator) -> float:
    """Exact trace.  Dense operators sum their diagonal; others pay ``dim`` matvecs."""
    if isinstance(op, DenseOperator):
        return op.exact_trace
    eye = np.eye(op.dim)
    return float(math.fsum(op.apply(eye[:, i])[i] for i in range(op.dim)))


# -- synthetic spectra -----------------------------------------------------------

_KINDS = ("flat", "power_law", "low_rank", "stretched")


@dataclass(frozen=True)
class SpectrumSpec:
    """Eigenvalue recipe for a rotated diagonal operator ``O^T diag(lam) O``.

    ``stretched`` multiplies the leading (largest) eigenvalues of ``base`` by
    ``axis_scales`` element-wise, keeping the base rotation.
    """

    kind: str
    dim: int
    exponent: float = 1.0
    value: float = 1.0
    head_values: tuple = ()
    tail_value: float = 0.0
    base: "SpectrumSpec | None" = None
    axis_scales: tuple = ()
    rotation_seed: int = 0
    psd: bool = True

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ContractError(f"unknown spectrum kind {self.kind!r}; expected one of {_KINDS}")
        if int(self.dim) < 1:
            raise ContractError(f"spectrum dimension must be positive, got {self.dim}")
        if self.kind == "low_rank" and len(self.head_values) > self.dim:
            raise ContractError("low_rank head longer than dimension")
        if self.kind == "stretched":
            if self.base is None:
                raise ContractError("stretched spectrum needs a base spectrum")
            if len(self.axis_scales) > self.dim:
                raise ContractError("more axis scales than dimensions")

    @classmethod
    def flat(cls, dim, value=1.0, rotation_seed=0, psd=True):
        return cls("flat", dim, value=float(value), rotation_seed=rotation_seed, psd=psd)

    @classmethod
    def power_law(cls, dim, exponent=1.0, rotation_seed=0):
        return cls("power_law", dim, exponent=float(exponent), rotation_seed=rotation_seed)

    @classmethod
    def low_rank(cls, dim, head_values, tail_value=0.0, rotation_seed=0, psd=True):
        return cls(
            "low_rank",
            dim,
            head_values=tuple(float(v) for v in head_values),
            tail_value=float(tail_value),
            rotation_seed=rotation_seed,
            psd=psd,
        )

    @classmethod
    def stretched(cls, base: "SpectrumSpec", axis_scales):
        if np.isscalar(axis_scales):
            axis_scales = (axis_scales,)
        return cls(
            "stretched",
            base.dim,
            base=base,
            axis_scales=tuple(float(s) for s in axis_scales),
            rotation_seed=base.rotation_seed,
            psd=base.psd,
        )

    @property
    def rank(self) -> int:
        return len(self.head_values)

    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues in the order they are placed on the rotated diagonal."""
        d = self.dim
        if self.kind == "flat":
            lam = np.full(d, self.value)
        elif self.kind == "power_law":
            lam = np.arange(1, d + 1, dtype=np.float64) ** (-self.exponent)
        elif self.kind == "low_rank":
            lam = np.full(d, self.tail_value)
            lam[: self.rank] = self.head_values
        else:
            lam = np.sort(self.base.eigenvalues())[::-1].copy()
            lam[: len(self.axis_scales)] *= np.asarray(self.axis_scales)
        return lam


def random_orthogonal(dim: int, seed: int) -> np.ndarray:
    """Orthogonal matrix from the Householder QR of a seeded Gaussian matrix."""
    g = draw_from(probe_generator(seed, _ROTATION_STREAM), (dim, dim), GAUSSIAN)
    q, r = np.linalg.qr(g)
    # sign fix makes the factor unique given g
    return q * np.where(np.diagonal(r) < 0, -1.0, 1.0)


def make_spectral(spec: SpectrumSpec) -> DenseOperator:
    """Symmetric operator ``O^T diag(lam) O`` with the spectrum ``spec`` describes."""
    lam = spec.eigenvalues()
    if not np.all(np.isfinite(lam)):
        raise ContractError("spectrum contains non-finite eigenvalues")
    if spec.psd and np.any(lam < 0):
        raise ContractError("negative eigenvalue requested for a PSD-claimed spectrum")
    if np.all(lam == lam[0]):
        # O^T (c I) O = c I; skip the rotation so the matrix is exact
        return DenseOperator(lam[0] * np.eye(spec.dim), is_symmetric=True, is_psd_claimed=spec.psd)
    o = random_orthogonal(spec.dim, spec.rotation_seed)
    a = (o.T * lam) @ o
    a = 0.5 * (a + a.T)
    return DenseOperator(a, is_symmetric=True, is_psd_claimed=spec.psd)


def random_symmetric(dim: int, seed: int, frobenius: float | None = None) -> DenseOperator:
    """Seeded symmetric Gaussian matrix, optionally rescaled to a Frobenius norm."""
    g = draw_from(probe_generator(seed, _SYMMETRIC_STREAM), (dim, dim), GAUSSIAN)
    b = 0.5 * (g + g.T)
    if frobenius is not None:
        b *= frobenius / np.linalg.norm(b, "fro")
    return DenseOperator(b, is_symmetric=True)


# -- Matrix Market ---------------------------------------------------------------


def _parse_number(token: str, lineno: int, integer: bool = False):
    try:
        return int(token) if integer else float(token)
    except ValueError:
        kind = "integer" if integer else "number"
        raise MatrixMarketError(f"expected {kind}, got {token!r}", lineno) from None


def load_matrix_market(path) -> DenseOperator:
    """Read a square real matrix in Matrix Market ``array`` or ``coordinate`` format.

    Symmetric files are expanded to full storage; duplicate coordinate entries
    are summed.
    """
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise MatrixMarketError(f"cannot read {path}: {exc.strerror}") from None
    if not lines:
        raise MatrixMarketError("empty file", 1)
    header = lines[0].split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket":
        raise MatrixMarketError("missing '%%MatrixMarket' banner", 1)
    obj, fmt, fld, sym = (h.lower() for h in header[1:])
    if obj != "matrix":
        raise MatrixMarketError(f"unsupported object {obj!r}", 1)
    if fmt not in ("array", "coordinate"):
        raise MatrixMarketError(f"unsupported format {fmt!r}", 1)
    if fld not in ("real", "integer"):
        raise MatrixMarketError(f"unsupported field type {fld!r}", 1)
    if sym not in ("general", "symmetric"):
        raise MatrixMarketError(f"unsupported symmetry {sym!r}", 1)

    body = [
        (n, ln.split())
        for n, ln in enumerate(lines[1:], start=2)
        if ln.strip() and not ln.lstrip().startswith("%")
    ]
    if not body:
        raise MatrixMarketError("missing size line", len(lines))
    size_line, size = body[0]
    want = 3 if fmt == "coordinate" else 2
    if len(size) != want:
        raise MatrixMarketError(f"size line needs {want} integers", size_line)
    dims = [_parse_number(t, size_line, integer=True) for t in size]
    nrows, ncols = dims[0], dims[1]
    if nrows != ncols:
        raise MatrixMarketError(f"matrix is not square ({nrows} x {ncols})", size_line)
    if nrows < 1:
        raise MatrixMarketError("matrix dimension must be positive", size_line)
    n = nrows
    a = np.zeros((n, n))
    entries = body[1:]

    if fmt == "array":
        if sym == "general":
            cells = [(i, j) for j in range(n) for i in range(n)]
        else:
            cells = [(i, j) for j in range(n) for i in range(j, n)]
        if len(entries) != len(cells):
            last = entries[-1][0] if entries else size_line
            raise MatrixMarketError(f"expected {len(cells)} values, found {len(entries)}", last)
        for (lineno, toks), (i, j) in zip(entries, cells):
            if len(toks) != 1:
                raise MatrixMarketError("array entry must be a single value", lineno)
            a[i, j] = _parse_number(toks[0], lineno)
            if sym == "symmetric" and i != j:
                a[j, i] = a[i, j]
    else:
        nnz = dims[2]
        if len(entries) != nnz:
            last = entries[-1][0] if entries else size_line
            raise MatrixMarketError(f"expected {nnz} entries, found {len(entries)}", last)
        for lineno, toks in entries:
            if len(toks) != 3:
                raise MatrixMarketError("coordinate entry needs 'row col value'", lineno)
            i = _parse_number(toks[0], lineno, integer=True) - 1
            j = _parse_number(toks[1], lineno, integer=True) - 1
            if not (0 <= i < n and 0 <= j < n):
                raise MatrixMarketError(f"index ({i + 1}, {j + 1}) out of range", lineno)
            v = _parse_number(toks[2], lineno)
            if sym == "symmetric":
                if j > i:
                    raise MatrixMarketError("symmetric file stores an upper-triangle entry", lineno)
                a[i, j] += v
                if i != j:
                    a[j, i] += v
            else:
                a[i, j] += v
    if not np.all(np.isfinite(a)):
        raise MatrixMarketError("non-finite value in matrix")
    return DenseOperator(a, is_symmetric=(sym == "symmetric") or None)


def write_matrix_market(path, matrix, symmetric: bool = False) -> None:
    """Write a dense matrix in ``array`` format (values with 17 significant digits)."""
    a = np.asarray(matrix, dtype=np.float64)
    n = a.shape[0]
    sym = "symmetric" if symmetric else "general"
    lines = [f"%%MatrixMarket matrix array real {sym}", f"{n} {a.shape[1]}"]
    for j in range(a.shape[1]):
        start = j if symmetric else 0
        lines.extend(f"{a[i, j]:.17g}" for i in range(start, n))
    Path(path).write_text("\n".join(lines) + "\n")
