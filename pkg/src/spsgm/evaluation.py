"""Functional MMD and the power of a permutation two-sample test.

Functions are compared through the squared-exponential kernel on the
discrete L2 distance ``||f - g||^2 = mean_k (f(x_k) - g(x_k))^2`` over a
shared grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, InvalidConfigError, InvalidInputError
from .seeding import make_rng


def _check_pair(X, Y):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise InvalidInputError("function sets are evaluated on different grids")
    return X, Y


def l2_sqdist(X, Y):
    """Pairwise discrete squared L2 distances; entry (i, j) uses only X[i], Y[j]."""
    d = X[:, None, :] - Y[None, :, :]
    return np.mean(d * d, axis=2)


def median_bandwidth(X, Y=None):
    """Median of the positive pairwise L2 distances within the pooled sample."""
    P = X if Y is None else np.vstack([X, Y])
    D = np.sqrt(l2_sqdist(P, P))
    iu = np.triu_indices(P.shape[0], 1)
    d = D[iu]
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


def functional_mmd(X, Y, bandwidth=None):
    """Biased (V-statistic) squared MMD between two sets of functions.

    Sums are exactly rounded, so the value is symmetric in its arguments and
    vanishes whenever X and Y are equal as multisets.
    """
    X, Y = _check_pair(X, Y)
    if X.shape[0] < 2 or Y.shape[0] < 2:
        raise InvalidInputError("need at least two functions per side")
    sigma = median_bandwidth(X, Y) if bandwidth is None else float(bandwidth)
    k = lambda A, B: np.exp(-l2_sqdist(A, B) / (2.0 * sigma * sigma))
    n, m = X.shape[0], Y.shape[0]
    xx = math.fsum(k(X, X).ravel()) / (n * n)
    yy = math.fsum(k(Y, Y).ravel()) / (m * m)
    xy = math.fsum(k(X, Y).ravel()) / (n * m)
    return max(xx + yy - 2.0 * xy, 0.0)


@dataclass
class TwoSampleTestConfig:
    samples_per_side: int = 10
    num_tests: int = 1000
    permutations: int = 200
    level: float = 0.05
    bandwidth: object = "median"  # "median" or a fixed positive float
    seed: int = 0

    def __post_init__(self):
        if self.samples_per_side < 2:
            raise InvalidConfigError("samples_per_side must be >= 2")
        if not (0.0 < self.level < 1.0):
            raise InvalidConfigError("level must lie in (0, 1)")
        if self.bandwidth != "median" and not float(self.bandwidth) > 0:
            raise InvalidConfigError("bandwidth must be 'median' or a positive number")

    def to_dict(self):
        return {
            "samples_per_side": self.samples_per_side,
            "num_tests": self.num_tests,
            "permutations": self.permutations,
            "level": self.level,
            "bandwidth": self.bandwidth,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfigError(f"unknown evaluation keys: {sorted(unknown)}")
        return cls(**d)


class SamplePool:
    """Hands out pre-drawn functions in order, never reusing one."""

    def __init__(self, values):
        self.values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        self.pos = 0

    def __call__(self, n):
        if self.pos + n > self.values.shape[0]:
            raise InsufficientDataError(
                f"sample pool exhausted: {self.values.shape[0] - self.pos} left, {n} requested"
            )
        out = self.values[self.pos : self.pos + n]
        self.pos += n
        return out


class SubsetSampler:
    """Random subsets (without replacement within a draw) of a finite set."""

    def __init__(self, values, seed):
        self.values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        self.rng = make_rng(seed, "subset")

    def __call__(self, n):
        if n > self.values.shape[0]:
            raise InsufficientDataError(f"only {self.values.shape[0]} functions available, {n} requested")
        return self.values[self.rng.choice(self.values.shape[0], n, replace=False)]


def _mmd_stats(K, idx, n):
    """V-statistic MMD^2 for each row of ``idx`` (first n = X, rest = Y)."""
    a, b = idx[:, :n], idx[:, n:]
    kxx = K[a[:, :, None], a[:, None, :]].mean(axis=(1, 2))
    kyy = K[b[:, :, None], b[:, None, :]].mean(axis=(1, 2))
    kxy = K[a[:, :, None], b[:, None, :]].mean(axis=(1, 2))
    return kxx + kyy - 2.0 * kxy


def permutation_test(X, Y, sigma, permutations, rng):
    """MMD statistic and permutation p-value ``(1 + #{perm >= obs}) / (1 + P)``."""
    n = X.shape[0]
    pooled = np.vstack([X, Y])
    K = np.exp(-l2_sqdist(pooled, pooled) / (2.0 * sigma * sigma))
    base = np.arange(pooled.shape[0])
    idx = np.vstack([base, rng.permuted(np.tile(base, (permutations, 1)), axis=1)])
    stats = _mmd_stats(K, idx, n)
    obs = stats[0]
    p = (1.0 + np.sum(stats[1:] >= obs)) / (1.0 + permutations)
    return float(obs), float(p)


@dataclass
class PowerResult:
    power: float
    stderr: float
    bandwidth: float
    statistics: list = field(default_factory=list)
    pvalues: list = field(default_factory=list)


def test_power(model_sampler, data_sampler, cfg):
    """Fraction of ``cfg.num_tests`` independent permutation tests that reject.

    Each sampler is called as ``sampler(n)`` and must return ``n`` fresh
    functions on the shared grid. A median-heuristic bandwidth is fixed from
    the first test's pooled sample and reused for all tests.
    """
    n = cfg.samples_per_side
    sigma = None if cfg.bandwidth == "median" else float(cfg.bandwidth)
    rejections = 0
    stats, pvals = [], []
    for k in range(cfg.num_tests):
        X, Y = _check_pair(model_sampler(n), data_sampler(n))
        if sigma is None:
            sigma = median_bandwidth(X, Y)
        obs, p = permutation_test(X, Y, sigma, cfg.permutations, make_rng(cfg.seed, "permutation", k))
        stats.append(obs)
        pvals.append(p)
        rejections += p <= cfg.level
    power = rejections / cfg.num_tests if cfg.num_tests else float("nan")
    stderr = math.sqrt(power * (1.0 - power) / cfg.num_tests) if cfg.num_tests else float("nan")
    return PowerResult(power, stderr, sigma if sigma is not None else float("nan"), stats, pvals)


test_power.__test__ = False  # not a pytest test despite the name
