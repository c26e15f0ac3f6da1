"""Gaussian-process baseline with a Matern-1/2 kernel.

Hyperparameters (lengthscale, signal variance, noise variance) maximise the
log marginal likelihood of the whole dataset, treating every sample as an
independent draw of the same zero-mean GP after removing the pointwise mean.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

from .data import FunctionalDataset
from .errors import InvalidConfigError, NumericFailureError, ParseError
from .kernels import _sqdist

JITTERS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
GP_FORMAT = "spsgm-gp"


@dataclass
class GPModel:
    lengthscale: float
    signal_variance: float
    noise_variance: float
    grid: np.ndarray
    mean: np.ndarray | None = None

    def __post_init__(self):
        if min(self.lengthscale, self.signal_variance, self.noise_variance) <= 0:
            raise InvalidConfigError("GP hyperparameters must be positive")
        self.grid = np.asarray(self.grid, dtype=np.float64).reshape(len(self.grid), -1)

    def covariance(self, grid=None):
        X = self.grid if grid is None else np.asarray(grid, dtype=np.float64).reshape(-1, self.grid.shape[1])
        K = self.signal_variance * np.exp(-np.sqrt(_sqdist(X, X)) / self.lengthscale)
        return K + self.noise_variance * np.eye(X.shape[0])

    def to_dict(self):
        return {
            "format": GP_FORMAT,
            "lengthscale": self.lengthscale,
            "signal_variance": self.signal_variance,
            "noise_variance": self.noise_variance,
            "grid": self.grid.tolist(),
            "mean": None if self.mean is None else self.mean.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != GP_FORMAT:
            raise ParseError("not a GP model file")
        mean = None if d["mean"] is None else np.array(d["mean"])
        return cls(d["lengthscale"], d["signal_variance"], d["noise_variance"], np.array(d["grid"]), mean)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _cholesky(C):
    scale = float(np.mean(np.diag(C)))
    for jitter in JITTERS:
        try:
            return cho_factor(C + jitter * scale * np.eye(C.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            continue
    raise NumericFailureError("Cholesky failed even with jitter 1e-4")


def _components(log_params, R):
    ell, sf2, sn2 = np.exp(log_params)
    E = np.exp(-R / ell)
    C = sf2 * E + sn2 * np.eye(R.shape[0])
    return ell, sf2, sn2, E, C


def log_marginal_likelihood(log_params, R, scatter, L):
    """Pooled log marginal likelihood and its gradient in log-parameters.

    ``R`` is the distance matrix of the grid, ``scatter = sum_i y_i y_i^T``.
    """
    ell, sf2, sn2, E, C = _components(log_params, R)
    G = R.shape[0]
    cf = _cholesky(C)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    Cinv = cho_solve(cf, np.eye(G))
    CinvS = cho_solve(cf, scatter)
    lml = -0.5 * (L * logdet + np.trace(CinvS) + L * G * np.log(2.0 * np.pi))
    A = CinvS @ Cinv - L * Cinv
    dC = (sf2 * E * R / ell, sf2 * E, sn2 * np.eye(G))
    grad = np.array([0.5 * np.sum(A * d) for d in dC])
    return lml, grad


def gp_fit(data, init=(1.0, 1.0, 0.1), starts=3, maxiter=500, gtol=1e-5):
    """Fit lengthscale, signal and noise variance by maximising the marginal likelihood.

    Gradient-based (L-BFGS) ascent in log-space from ``starts`` fixed
    initialisations; the first is ``init``, the others rescale the
    lengthscale to the grid span and the variance to the data variance.
    """
    grid = np.asarray(data.grid, dtype=np.float64)
    Y = data.values
    mean = Y.mean(axis=0)
    Yc = Y - mean
    L = Y.shape[0]
    R = np.sqrt(_sqdist(grid, grid))
    scatter = Yc.T @ Yc
    norm = L * grid.shape[0]

    span = float(R.max()) or 1.0
    var = float(Yc.var()) or 1.0
    inits = [tuple(init), (0.1 * span, var, 0.1 * var), (span, var, 0.01 * var)][: max(1, starts)]

    def objective(p):
        lml, g = log_marginal_likelihood(p, R, scatter, L)
        return -lml / norm, -g / norm

    best = None
    for x0 in inits:
        res = minimize(objective, np.log(x0), jac=True, method="L-BFGS-B", options={"maxiter": maxiter, "gtol": gtol})
        if best is None or res.fun < best.fun:
            best = res
    ell, sf2, sn2 = np.exp(best.x)
    return GPModel(float(ell), float(sf2), float(sn2), grid, mean)


def gp_sample(model, grid=None, count=1, seed=0):
    """Exact draws from ``N(mean, K + noise I)`` on ``grid`` (default: training grid).

    The fitted mean is added back only when sampling on the training grid.
    """
    X = model.grid if grid is None else np.asarray(grid, dtype=np.float64).reshape(-1, model.grid.shape[1])
    same = np.array_equal(X, model.grid)
    if count == 0:
        return FunctionalDataset.from_grid(X, np.zeros((0, X.shape[0])))
    cf = _cholesky(model.covariance(X))
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((count, X.shape[0]))
    draws = G @ np.tril(cf[0]).T
    if same and model.mean is not None:
        draws = draws + model.mean
    return FunctionalDataset.from_grid(X, draws)
