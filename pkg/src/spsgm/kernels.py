"""Positive-definite kernels and Gram matrix assembly."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import FunctionalDataset
from .errors import InsufficientDataError, InvalidConfigError, InvalidInputError, UnsupportedLayoutError

ANALYTIC = ("RBF", "Matern12", "Matern32", "Constant")
FAMILIES = ANALYTIC + ("EmpiricalCovariance", "Custom")

SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus hyperparameters.

    ``EmpiricalCovariance`` is only defined at the grid points of ``data``
    (a shared-grid dataset), which must be attached before any evaluation.
    ``Custom`` wraps a vectorised callable ``func(X1, X2) -> (n1, n2)``; it
    is meant for tests and cannot be saved.
    """

    family: str = "RBF"
    lengthscale: float = 1.0
    variance: float = 1.0
    data: FunctionalDataset | None = None
    func: Callable | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidConfigError(f"unknown kernel family {self.family!r}")
        if self.family in ANALYTIC:
            if not (self.lengthscale > 0 and self.variance > 0):
                raise InvalidConfigError("lengthscale and variance must be positive")
        if self.family == "Custom" and self.func is None:
            raise InvalidConfigError("Custom kernel needs a callable")

    @property
    def analytic(self):
        return self.family in ANALYTIC

    def to_dict(self):
        if self.family == "Custom":
            raise InvalidConfigError("Custom kernels cannot be serialised")
        return {"family": self.family, "lengthscale": float(self.lengthscale), "variance": float(self.variance)}

    @classmethod
    def from_dict(cls, d, data=None):
        return cls(d["family"], float(d.get("lengthscale", 1.0)), float(d.get("variance", 1.0)), data=data)


def _sqdist(X1, X2):
    # explicit per-coordinate accumulation keeps k(a, b) == k(b, a) bitwise
    r2 = np.zeros((X1.shape[0], X2.shape[0]))
    for k in range(X1.shape[1]):
        d = X1[:, k][:, None] - X2[:, k][None, :]
        r2 += d * d
    return r2


def _as_points(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x[:, None]
    return x


def kernel_matrix(spec, X1, X2):
    """Cross-kernel matrix ``k(X1[i], X2[j])`` for analytic or custom kernels."""
    X1, X2 = _as_points(X1), _as_points(X2)
    if not (np.all(np.isfinite(X1)) and np.all(np.isfinite(X2))):
        raise InvalidInputError("non-finite input point")
    fam = spec.family
    if fam == "Custom":
        return np.asarray(spec.func(X1, X2), dtype=np.float64)
    if fam == "EmpiricalCovariance":
        return _empirical_lookup(spec.data, X1, X2)
    if fam == "Constant":
        return np.full((X1.shape[0], X2.shape[0]), float(spec.variance))
    r2 = _sqdist(X1, X2)
    ell = spec.lengthscale
    if fam == "RBF":
        return spec.variance * np.exp(-r2 / (2.0 * ell * ell))
    r = np.sqrt(r2)
    if fam == "Matern12":
        return spec.variance * np.exp(-r / ell)
    a = SQRT3 * r / ell
    return spec.variance * (1.0 + a) * np.exp(-a)


def kernel_eval(spec, x1, x2):
    """Scalar kernel value between two input points."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=np.float64))
    x2 = np.atleast_1d(np.asarray(x2, dtype=np.float64))
    return float(kernel_matrix(spec, x1[None, :], x2[None, :])[0, 0])


def _check_grid(data):
    if data.layout != "shared":
        raise UnsupportedLayoutError("empirical covariance needs all samples on a shared grid")
    if len(data) < 2:
        raise InsufficientDataError("empirical covariance needs at least two samples")


def empirical_covariance(data, x1, x2):
    """Unbiased sample covariance between the values at grid indices ``x1`` and ``x2``."""
    _check_grid(data)
    Y = data.values
    a = Y[:, x1] - Y[:, x1].mean()
    b = Y[:, x2] - Y[:, x2].mean()
    return float(np.dot(a, b) / (len(data) - 1))


def empirical_covariance_matrix(data):
    _check_grid(data)
    Y = data.values
    Yc = Y - Y.mean(axis=0)
    C = Yc.T @ Yc / (Y.shape[0] - 1)
    return np.triu(C) + np.triu(C, 1).T


def grid_index(data, X):
    """Map each row of ``X`` to its index in the dataset grid (exact match)."""
    lookup = {row.tobytes(): i for i, row in enumerate(np.asarray(data.grid, dtype=np.float64))}
    out = []
    for row in _as_points(X):
        i = lookup.get(np.ascontiguousarray(row).tobytes())
        if i is None:
            raise InvalidInputError(f"point {row.tolist()} is not on the empirical-covariance grid")
        out.append(i)
    return np.array(out, dtype=int)


def _empirical_lookup(data, X1, X2):
    if data is None:
        raise InvalidConfigError("EmpiricalCovariance needs an attached dataset")
    C = empirical_covariance_matrix(data)
    return C[np.ix_(grid_index(data, X1), grid_index(data, X2))]


@dataclass(frozen=True)
class GramMatrix:
    entries: np.ndarray
    anchor_points: np.ndarray

    @property
    def size(self):
        return self.entries.shape[0]


def assemble_gram(spec, anchors, normalization=None):
    """Symmetric Gram matrix at the anchor points.

    Analytic kernels see anchors after ``normalization`` (if given); the
    empirical covariance kernel works on raw grid coordinates.
    """
    anchors = _as_points(anchors)
    if anchors.shape[0] == 0:
        raise InvalidInputError("no anchor points")
    if not np.all(np.isfinite(anchors)):
        raise InvalidInputError("non-finite anchor point")
    pts = anchors
    if normalization is not None and spec.family not in ("EmpiricalCovariance",):
        pts = normalization.apply(anchors)
    K = kernel_matrix(spec, pts, pts)
    K = np.triu(K) + np.triu(K, 1).T
    return GramMatrix(K, anchors)
