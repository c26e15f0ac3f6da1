"""Forward Ornstein-Uhlenbeck noising of coefficient vectors and the
reverse-time Euler-Maruyama sampler.

The default schedule is the unit OU process ``dZ = -Z dt + sqrt(2) dB``,
whose transition is ``Z_t = e^{-t} Z_0 + sqrt(1 - e^{-2t}) G``. A
variance-preserving schedule driven by ``beta(t)`` is available as well:
``dZ = -beta/2 Z dt + sqrt(beta) dB``, i.e. the unit OU process is the
constant ``beta = 2`` case.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfigError, InvalidInputError, NumericFailureError


@dataclass(frozen=True)
class BetaSchedule:
    """Piecewise-linear ``beta(t)`` given by knots; integrated exactly (trapezoid)."""

    times: tuple
    betas: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        b = np.asarray(self.betas, dtype=float)
        if t.ndim != 1 or t.shape != b.shape or t.size < 2:
            raise InvalidConfigError("beta schedule needs matching 1D knot arrays (>= 2 knots)")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise InvalidConfigError("beta knots must start at 0 and increase")
        if np.any(b <= 0):
            raise InvalidConfigError("beta must be positive")

    @classmethod
    def linear(cls, beta_min, beta_max, T):
        return cls((0.0, float(T)), (float(beta_min), float(beta_max)))

    @property
    def _knots(self):
        t = np.asarray(self.times, dtype=float)
        b = np.asarray(self.betas, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (b[1:] + b[:-1]) * np.diff(t))])
        return t, b, cum

    def beta(self, t):
        t_k, b_k, _ = self._knots
        return np.interp(t, t_k, b_k)

    def integral(self, t):
        """``int_0^t beta(s) ds``; constant extrapolation beyond the last knot."""
        t_k, b_k, cum = self._knots
        t = np.asarray(t, dtype=float)
        i = np.clip(np.searchsorted(t_k, t, side="right") - 1, 0, len(t_k) - 2)
        dt = t - t_k[i]
        bt = self.beta(t)
        inside = cum[i] + 0.5 * (b_k[i] + bt) * np.minimum(dt, t_k[i + 1] - t_k[i])
        beyond = np.maximum(t - t_k[-1], 0.0) * b_k[-1]
        return inside + beyond

    def to_dict(self):
        return {"times": list(self.times), "betas": list(self.betas)}


@dataclass(frozen=True)
class DiffusionConfig:
    T: float = 5.0
    eps: float = 1e-3
    steps: int = 500
    schedule: BetaSchedule | None = field(default=None)  # None -> unit OU

    def __post_init__(self):
        if not (0.0 < self.eps < self.T):
            raise InvalidConfigError("need 0 < eps < T")
        if self.steps < 1:
            raise InvalidConfigError("need at least one step")

    @property
    def unit_ou(self):
        return self.schedule is None

    def beta(self, t):
        if self.unit_ou:
            return np.full(np.shape(t), 2.0) if np.ndim(t) else 2.0
        return self.schedule.beta(t)

    def transition(self, t):
        """Mean factor and variance of ``Z_t | Z_0``."""
        if self.unit_ou:
            return np.exp(-t), -np.expm1(-2.0 * np.asarray(t, dtype=float))
        B = self.schedule.integral(t)
        return np.exp(-0.5 * B), -np.expm1(-B)

    @property
    def step_size(self):
        return (self.T - self.eps) / self.steps

    def to_dict(self):
        return {
            "T": self.T,
            "eps": self.eps,
            "steps": self.steps,
            "schedule": None if self.schedule is None else self.schedule.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        sched = d.get("schedule")
        if sched is not None:
            sched = BetaSchedule(tuple(sched["times"]), tuple(sched["betas"]))
        return cls(float(d.get("T", 5.0)), float(d.get("eps", 1e-3)), int(d.get("steps", 500)), sched)


def forward_perturb(z0, t, rng=None, cfg=None, g=None):
    """Noise ``z0`` to time ``t``; return ``(z_t, grad log p(z_t | z0))``.

    ``t`` may be a scalar or one time per row of ``z0``. Pass ``g`` to fix
    the Gaussian draw, otherwise it comes from ``rng``.
    """
    cfg = cfg or DiffusionConfig()
    z0 = np.asarray(z0, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(t)) or np.any(t <= 0):
        raise InvalidInputError("diffusion time must be positive")
    if g is None:
        g = rng.standard_normal(z0.shape)
    if t.ndim == 1 and z0.ndim == 2:
        t = t[:, None]
    a, var = cfg.transition(t)
    mean = a * z0
    zt = mean + np.sqrt(var) * g
    target = -(zt - mean) / var
    return zt, target


def euler_maruyama_step(y, score, gamma, g, beta=2.0):
    """One reverse step. With ``beta = 2`` this is
    ``y + gamma (y + 2 s) + sqrt(2 gamma) g``."""
    if beta == 2.0:
        return y + gamma * (y + 2.0 * score) + np.sqrt(2.0 * gamma) * g
    return y + gamma * beta * (0.5 * y + score) + np.sqrt(gamma * beta) * g


def reverse_sample(score, cfg, rng, count, dim):
    """Draw ``count`` coefficient vectors by simulating the reverse SDE.

    Starts from ``N(0, I)`` at time ``T`` and takes ``cfg.steps`` steps of size
    ``(T - eps) / steps``; the score is queried at ``max(T - n gamma, eps)``.
    All chains advance together and share one noise stream.
    """
    if count == 0:
        return np.empty((0, dim))
    gamma = cfg.step_size
    y = rng.standard_normal((count, dim))
    for n in range(cfg.steps):
        tau = max(cfg.T - n * gamma, cfg.eps)
        s = np.asarray(score(tau, y), dtype=np.float64)
        if not np.all(np.isfinite(s)):
            raise NumericFailureError(f"non-finite score at step {n} (t={tau:g})", step=n, time=tau)
        g = rng.standard_normal((count, dim))
        y = euler_maruyama_step(y, s, gamma, g, float(cfg.beta(tau)))
    return y
