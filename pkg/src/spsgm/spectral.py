"""Projection onto the eigenbasis and truncated reconstruction.

A function is represented by its mean ``mu`` plus ``sum_m sqrt(lam_m) Z_m e_m``
where ``Z_m`` are whitened coefficients. Projection is the discrete inverse:
``Z_m = (1/N) sum_n (y(x_n) - mu(x_n)) lam_m^{-1/2} e_m(x_n)``.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import fmt
from .errors import InvalidConfigError, InvalidInputError, ParseError
from .kernels import _as_points


class MeanFunction:
    """Process mean: stored at anchors, extended elsewhere through the eigenbasis.

    Off-anchor values use the Nystrom extension of the mean's discrete
    expansion in all available eigenfunctions.
    """

    def __init__(self, es, anchor_values=None):
        self.es = es
        self.zero = anchor_values is None
        if self.zero:
            anchor_values = np.zeros(es.S)
        self.anchor_values = np.asarray(anchor_values, dtype=np.float64)
        if self.anchor_values.shape != (es.S,):
            raise InvalidInputError("mean needs one value per anchor")
        self.coeffs = (es.eigvec_table.T @ self.anchor_values) / es.S

    def __call__(self, X):
        X = _as_points(X)
        out = np.empty(X.shape[0])
        for i in range(X.shape[0]):
            if self.zero:
                out[i] = 0.0
                continue
            s = self.es.anchor_position(X[i])
            if s is not None:
                out[i] = self.anchor_values[s]
            else:
                out[i] = self.es.basis(X[i : i + 1])[0] @ self.coeffs
        return out


def fit_mean(data, es, mode="sample"):
    """Average of the observations at each anchor, or the zero mean."""
    if mode == "zero":
        return MeanFunction(es)
    if mode != "sample":
        raise InvalidConfigError(f"unknown mean mode {mode!r}")
    if data.layout == "shared" and data.grid.shape[0] == es.S:
        idx = [es.anchor_position(row) for row in data.grid]
        if None not in idx:
            vals = np.empty(es.S)
            vals[idx] = data.values.mean(axis=0)
            return MeanFunction(es, vals)
    sums = np.zeros(es.S)
    counts = np.zeros(es.S)
    for p, v in zip(data.points, data.sample_values):
        for row, y in zip(p, v):
            s = es.anchor_position(row)
            if s is not None:
                sums[s] += y
                counts[s] += 1
    if np.any(counts == 0):
        raise InvalidInputError("some anchors carry no observation; cannot form the sample mean")
    return MeanFunction(es, sums / counts)


@dataclass
class SpectralDataset:
    coeffs: np.ndarray  # (L, M+1)
    mean: MeanFunction
    eigensystem: object
    M: int

    @property
    def eigenvalues(self):
        return self.eigensystem.eigenvalues[: self.M + 1]


def _check_order(es, M):
    if M < 0 or M >= es.size:
        raise InvalidConfigError(f"truncation M={M} needs M+1 <= {es.size} positive eigenvalues")


def project(data, es, M, mean=None):
    """Whitened spectral coefficients of every sample in ``data``."""
    _check_order(es, M)
    if mean is None:
        mean = fit_mean(data, es)
    lam = es.eigenvalues[: M + 1]
    scale = 1.0 / np.sqrt(lam)
    if data.layout == "shared" and len(data):
        B = es.basis(data.grid, M + 1)
        resid = data.values - mean(data.grid)[None, :]
        Z = (resid @ B) / B.shape[0] * scale
    else:
        Z = np.empty((len(data), M + 1))
        for i, (p, v) in enumerate(zip(data.points, data.sample_values)):
            B = es.basis(p, M + 1)
            Z[i] = ((v - mean(p)) @ B) / p.shape[0] * scale
    if not np.all(np.isfinite(Z)):
        raise InvalidInputError("non-finite spectral coefficients")
    return SpectralDataset(Z, mean, es, M)


def scaled_basis(es, query, count):
    return es.basis(query, count) * np.sqrt(es.eigenvalues[:count])


def reconstruct(Z, es, mean, query):
    """``mu(x) + sum_m sqrt(lam_m) Z_m e_m(x)`` at each query point.

    The sum is accumulated term by term with elementwise operations so each
    output depends only on its own query point.
    """
    Z = np.asarray(Z, dtype=np.float64).reshape(-1)
    count = Z.shape[0]
    _check_order(es, count - 1)
    query = _as_points(query)
    if query.shape[0] == 0:
        return np.empty(0)
    Phi = scaled_basis(es, query, count)
    out = mean(query)
    for m in range(count):
        out = out + Z[m] * Phi[:, m]
    return out


def reconstruct_many(Zs, es, mean, query):
    """Vectorised reconstruction of many coefficient vectors on one query list."""
    Zs = np.atleast_2d(np.asarray(Zs, dtype=np.float64))
    query = _as_points(query)
    Phi = scaled_basis(es, query, Zs.shape[1])
    return mean(query)[None, :] + Zs @ Phi.T


@dataclass(frozen=True, eq=False)
class FunctionSample:
    """A sampled function, evaluable at any finite list of points."""

    Z: np.ndarray
    eigensystem: object
    mean: MeanFunction

    def __call__(self, query):
        return marginal_eval(self, query)


def marginal_eval(sample, query):
    return reconstruct(sample.Z, sample.eigensystem, sample.mean, query)


# --------------------------------------------------------------------------
# Persistence: coefficient CSV (header z0..zM) plus a JSON sidecar
# --------------------------------------------------------------------------


def coeffs_csv_text(Z, comment=None):
    Z = np.atleast_2d(Z)
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    buf.write(",".join(f"z{m}" for m in range(Z.shape[1])) + "\n")
    for row in Z:
        buf.write(",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


def read_coeffs_csv(path):
    rows = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not rows or not rows[0].startswith("z0"):
        raise ParseError(f"{path}: expected a z0,z1,... header", 1)
    width = len(rows[0].split(","))
    out = []
    for n, ln in enumerate(rows[1:], start=2):
        cells = ln.split(",")
        if len(cells) != width:
            raise ParseError(f"{path}: expected {width} fields", n)
        try:
            out.append([float(c) for c in cells])
        except ValueError:
            raise ParseError(f"{path}: bad number", n) from None
    return np.array(out).reshape(-1, width)


def spectral_meta(sd, eigensystem_file, eigensystem_sha256):
    return {
        "eigensystem_file": str(eigensystem_file),
        "eigensystem_sha256": eigensystem_sha256,
        "M": sd.M,
        "mean_zero": sd.mean.zero,
        "mean_at_anchors": sd.mean.anchor_values.tolist(),
    }


def mean_from_meta(meta, es):
    if meta["mean_zero"]:
        return MeanFunction(es)
    return MeanFunction(es, np.array(meta["mean_at_anchors"], dtype=np.float64))


def dumps_meta(meta):
    return json.dumps(meta, indent=1) + "\n"
