"""Nystrom approximation of a kernel's eigensystem on a set of anchor points.

The integral operator ``f -> int k(x, .) f(x) dx`` is discretised with equal
weights ``1/S`` on the anchors, giving the matrix problem
``(1/S) K u = lam u``. Eigenvectors are rescaled by ``sqrt(S)`` so that the
discrete inner product ``(1/S) sum_s e_m(x_s) e_n(x_s)`` is the identity.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .data import InputNormalization
from .errors import (
    InvalidConfigError,
    InvalidIndexError,
    InvalidInputError,
    NumericFailureError,
    ParseError,
)
from .kernels import KernelSpec, _as_points, assemble_gram, kernel_matrix

CLAMP_RATIO = 1e-12
DEGENERATE_RTOL = 1e-10
FORMAT = "spsgm-eigensystem"


@dataclass(frozen=True, eq=False)
class Eigensystem:
    eigenvalues: np.ndarray  # (M_max,), descending, all > 0
    anchor_points: np.ndarray  # (S, dim)
    eigvec_table: np.ndarray  # (S, M_max), column m holds e_m(x_s) = sqrt(S) u_m[s]
    kernel_spec: KernelSpec
    normalization: InputNormalization | None = None

    def __post_init__(self):
        # one memory layout, so BLAS reductions (and results) match after a reload
        for name in ("eigenvalues", "anchor_points", "eigvec_table"):
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))

    @property
    def S(self):
        return self.anchor_points.shape[0]

    @property
    def size(self):
        return self.eigenvalues.shape[0]

    @cached_property
    def _anchor_index(self):
        return {np.ascontiguousarray(row).tobytes(): s for s, row in enumerate(self.anchor_points)}

    @cached_property
    def _kernel_anchors(self):
        if self.normalization is None or self.kernel_spec.family == "EmpiricalCovariance":
            return self.anchor_points
        return self.normalization.apply(self.anchor_points)

    def anchor_position(self, x):
        return self._anchor_index.get(np.ascontiguousarray(x, dtype=np.float64).tobytes())

    def nystrom(self, X, count=None):
        """Out-of-sample extension ``(S lam_m)^-1 sum_s k(x, x_s) e_m(x_s)`` at each row of X."""
        X = _as_points(X)
        count = self.size if count is None else count
        out = np.empty((X.shape[0], count))
        lam = self.eigenvalues[:count]
        E = self.eigvec_table[:, :count]
        for i in range(X.shape[0]):
            out[i] = self._nystrom_row(X[i], E, lam)
        return out

    def _nystrom_row(self, x, E, lam):
        xq = x[None, :]
        if self.normalization is not None and self.kernel_spec.family != "EmpiricalCovariance":
            xq = self.normalization.apply(xq)
        krow = kernel_matrix(self.kernel_spec, xq, self._kernel_anchors)[0]
        return (krow @ E) / (self.S * lam)

    def basis(self, X, count=None):
        """Eigenfunction values at X: table entries at anchors, Nystrom elsewhere.

        Each row is computed on its own so a point's values never depend on
        which other points are queried alongside it.
        """
        X = _as_points(X)
        count = self.size if count is None else count
        if count > self.size:
            raise InvalidIndexError(f"requested {count} eigenfunctions, only {self.size} available")
        out = np.empty((X.shape[0], count))
        lam = self.eigenvalues[:count]
        E = self.eigvec_table[:, :count]
        for i in range(X.shape[0]):
            s = self.anchor_position(X[i])
            if s is not None:
                out[i] = E[s]
            else:
                out[i] = self._nystrom_row(X[i], E, lam)
        return out


def _fix_signs(U):
    """Flip columns so that the first non-negligible entry is positive."""
    U = U.copy()
    for m in range(U.shape[1]):
        col = U[:, m]
        tol = 1e-12 * np.max(np.abs(col))
        nz = np.flatnonzero(np.abs(col) > tol)
        if nz.size and col[nz[0]] < 0:
            U[:, m] = -col
    return U


def _order_degenerate(lam, U):
    """Within clusters of equal eigenvalues, order vectors lexicographically."""
    order = list(range(len(lam)))
    top = lam[0] if len(lam) else 0.0
    start = 0
    while start < len(lam):
        stop = start + 1
        while stop < len(lam) and abs(lam[stop] - lam[start]) <= DEGENERATE_RTOL * top:
            stop += 1
        if stop - start > 1:
            block = order[start:stop]
            block.sort(key=lambda j: tuple(-U[:, j]))
            order[start:stop] = block
        start = stop
    return lam[order], U[:, order]


def nystrom_eigensystem(gram, spec, normalization=None):
    """Eigendecomposition of ``(1/S) K`` at the Gram matrix's anchors.

    Eigenvalues below ``1e-12 * lam_0`` (including numerically negative ones)
    are dropped together with their eigenvectors.
    """
    K = gram.entries
    S = K.shape[0]
    if S < 1 or K.shape != (S, S):
        raise InvalidInputError("Gram matrix must be square and non-empty")
    if not np.array_equal(K, K.T):
        raise InvalidInputError("Gram matrix is not symmetric")
    try:
        lam, U = np.linalg.eigh(K / S)
    except np.linalg.LinAlgError as exc:
        raise NumericFailureError(f"symmetric eigensolver failed: {exc}") from exc
    lam, U = lam[::-1], U[:, ::-1]
    if lam[0] <= 0:
        raise NumericFailureError("kernel matrix has no positive eigenvalue")
    keep = lam > CLAMP_RATIO * lam[0]
    lam, U = lam[keep], U[:, keep]
    U = _fix_signs(U)
    lam, U = _order_degenerate(lam, U)
    return Eigensystem(lam.copy(), np.array(gram.anchor_points, dtype=np.float64), np.sqrt(S) * U, spec, normalization)


def build_eigensystem(spec, dataset, normalization="dataset"):
    """Anchors = distinct observation points of ``dataset``; Gram, then Nystrom."""
    if normalization == "dataset":
        normalization = dataset.normalization
    if spec.family == "EmpiricalCovariance":
        anchors = np.asarray(dataset.grid)
    else:
        anchors = dataset.union_points()
    gram = assemble_gram(spec, anchors, normalization)
    return nystrom_eigensystem(gram, spec, normalization)


def eval_eigenfunction(es, m, x):
    """Nystrom extension of eigenfunction ``m`` at a single point."""
    if not (0 <= m < es.size):
        raise InvalidIndexError(f"eigenfunction index {m} out of range [0, {es.size})")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("non-finite query point")
    return float(es.nystrom(x[None, :], count=m + 1)[0, m])


@dataclass(frozen=True)
class TruncationConfig:
    mode: str = "threshold"
    eta: float = 0.99
    M: int | None = None

    def __post_init__(self):
        if self.mode not in ("threshold", "fixed"):
            raise InvalidConfigError(f"unknown truncation mode {self.mode!r}")
        if self.mode == "threshold" and not (0.0 <= self.eta <= 1.0):
            raise InvalidConfigError("eta must lie in [0, 1]")
        if self.mode == "fixed" and (self.M is None or self.M < 0):
            raise InvalidConfigError("fixed truncation needs M >= 0")

    def to_dict(self):
        return {"mode": self.mode, "eta": self.eta, "M": self.M}

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("mode", "threshold"), float(d.get("eta", 0.99)), d.get("M"))


def select_truncation(eigenvalues, cfg):
    """Truncation order M (so that M + 1 components are kept).

    In threshold mode M is the smallest index whose cumulative eigenvalue
    share reaches ``eta``.
    """
    lam = eigenvalues.eigenvalues if isinstance(eigenvalues, Eigensystem) else np.asarray(eigenvalues)
    lam = lam[lam > 0]
    if lam.size == 0:
        raise InvalidConfigError("no positive eigenvalue")
    if cfg.mode == "fixed":
        if cfg.M >= lam.size:
            raise InvalidConfigError(f"M={cfg.M} but only {lam.size} eigenvalues are available")
        return int(cfg.M)
    cum = np.cumsum(lam)
    return int(np.argmax(cum >= cfg.eta * cum[-1]))


def cumulative_ratio(eigenvalues):
    cum = np.cumsum(eigenvalues)
    return cum / cum[-1]


# --------------------------------------------------------------------------
# Serialisation: JSON with header first, then eigenvalues, then the table.
# json writes floats with repr(), which round-trips float64 exactly.
# --------------------------------------------------------------------------


def eigensystem_to_dict(es):
    return {
        "format": FORMAT,
        "version": 1,
        "header": {
            "S": es.S,
            "M_max": es.size,
            "dim": es.anchor_points.shape[1],
            "kernel": es.kernel_spec.to_dict(),
            "normalization": None if es.normalization is None else es.normalization.to_dict(),
        },
        "anchor_points": es.anchor_points.tolist(),
        "eigenvalues": es.eigenvalues.tolist(),
        "eigvec_table": es.eigvec_table.tolist(),
    }


def eigensystem_from_dict(d, data=None):
    if d.get("format") != FORMAT:
        raise ParseError("not an eigensystem file")
    h = d["header"]
    anchors = np.array(d["anchor_points"], dtype=np.float64).reshape(h["S"], h["dim"])
    lam = np.array(d["eigenvalues"], dtype=np.float64)
    table = np.array(d["eigvec_table"], dtype=np.float64).reshape(h["S"], h["M_max"])
    norm = None if h["normalization"] is None else InputNormalization.from_dict(h["normalization"])
    return Eigensystem(lam, anchors, table, KernelSpec.from_dict(h["kernel"], data=data), norm)


def dumps_eigensystem(es):
    return json.dumps(eigensystem_to_dict(es), indent=1) + "\n"


def save_eigensystem(es, path):
    text = dumps_eigensystem(es)
    Path(path).write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def load_eigensystem(path, data=None):
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno) from exc
    return eigensystem_from_dict(d, data=data)
