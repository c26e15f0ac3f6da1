"""Fully-connected score network ``s(t, z)`` with exact backpropagation,
Adam, and the eigenvalue-weighted denoising score matching loop.

Everything runs in float64 numpy.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import DiffusionConfig, forward_perturb
from .errors import InvalidConfigError, InvalidInputError, ParseError, TrainingFailureError
from .seeding import make_rng

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "spsgm-checkpoint"


def _silu(x):
    return x / (1.0 + np.exp(-x))


def _silu_grad(x):
    sig = 1.0 / (1.0 + np.exp(-x))
    return sig * (1.0 + x * (1.0 - sig))


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(x):
    return (x > 0).astype(np.float64)


ACTIVATIONS = {"silu": (_silu, _silu_grad), "relu": (_relu, _relu_grad)}


def time_frequencies(embed_dim):
    return np.logspace(0.0, 3.0, embed_dim // 2)


def time_embedding(t, n, freqs):
    """``[sin(w t), cos(w t)]`` rows for a scalar ``t`` or one ``t`` per row."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        t = np.full(n, float(t))
    arg = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


class ScoreNetwork:
    """MLP on ``concat(z, time_embedding(t))`` returning a vector like ``z``."""

    def __init__(self, dim, hidden=(128, 128, 128), activation="silu", time_embed_dim=32, rng=None, zero_last=False):
        if time_embed_dim < 2 or time_embed_dim % 2:
            raise InvalidConfigError("time_embed_dim must be a positive even integer")
        if activation not in ACTIVATIONS:
            raise InvalidConfigError(f"unknown activation {activation!r}")
        self.dim = int(dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.activation = activation
        self.time_embed_dim = int(time_embed_dim)
        self.freqs = time_frequencies(time_embed_dim)
        widths = [self.dim + self.time_embed_dim, *self.hidden, self.dim]
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = []
        for k, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            last = k == len(widths) - 2
            if last and zero_last:
                W = np.zeros((a, b))
            else:
                W = rng.standard_normal((a, b)) * np.sqrt(2.0 / (a + b))
            self.params.append([W, np.zeros(b)])

    @property
    def widths(self):
        return [self.params[0][0].shape[0]] + [W.shape[1] for W, _ in self.params]

    def flat(self):
        return np.concatenate([p.ravel() for layer in self.params for p in layer])

    def set_flat(self, theta):
        k = 0
        for layer in self.params:
            for i, p in enumerate(layer):
                layer[i] = theta[k : k + p.size].reshape(p.shape).copy()
                k += p.size

    def forward(self, t, z):
        """Return the output and the cache needed by :meth:`backward`."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self.dim:
            raise InvalidInputError(f"expected vectors of length {self.dim}, got {z.shape[1]}")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(t))):
            raise InvalidInputError("non-finite network input")
        act, _ = ACTIVATIONS[self.activation]
        h = np.concatenate([z, time_embedding(t, z.shape[0], self.freqs)], axis=1)
        inputs, pre = [h], []
        for k, (W, b) in enumerate(self.params):
            a = h @ W + b
            if k == len(self.params) - 1:
                return a, (inputs, pre)
            pre.append(a)
            h = act(a)
            inputs.append(h)

    def __call__(self, t, z):
        return self.forward(t, z)[0]

    def backward(self, cache, dout):
        """Parameter gradients given ``dL/d(output)``."""
        inputs, pre = cache
        _, dact = ACTIVATIONS[self.activation]
        grads = [None] * len(self.params)
        delta = dout
        for k in range(len(self.params) - 1, -1, -1):
            W, _ = self.params[k]
            grads[k] = [inputs[k].T @ delta, delta.sum(axis=0)]
            if k:
                delta = (delta @ W.T) * dact(pre[k - 1])
        return grads


def score_forward(net, t, z):
    return net(t, z)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [[np.zeros_like(p) for p in layer] for layer in params]
        self.v = [[np.zeros_like(p) for p in layer] for layer in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for layer, glayer, mlayer, vlayer in zip(params, grads, self.m, self.v):
            for i, g in enumerate(glayer):
                mlayer[i] = self.beta1 * mlayer[i] + (1.0 - self.beta1) * g
                vlayer[i] = self.beta2 * vlayer[i] + (1.0 - self.beta2) * g * g
                layer[i] = layer[i] - self.lr * (mlayer[i] / c1) / (np.sqrt(vlayer[i] / c2) + self.eps)


def loss_weights(eigenvalues, alpha):
    """``(lam / sum(lam)) ** alpha``, applied inside the squared norm."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if alpha < 0:
        raise InvalidConfigError("alpha must be >= 0")
    return (lam / lam.sum()) ** alpha


def weighted_dsm_loss(net, z0, t, weights, dcfg=None, rng=None, g=None):
    """Weighted denoising score matching loss and its parameter gradients.

    ``mean_b || w * (s(t, z_t) - grad log p(z_t | z0)) ||^2`` with ``z_t``
    drawn by the forward transition (``g`` fixes the Gaussian draws).
    """
    dcfg = dcfg or DiffusionConfig()
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < dcfg.eps) or np.any(t_arr > dcfg.T):
        raise InvalidInputError(f"t must lie in [{dcfg.eps}, {dcfg.T}]")
    zt, target = forward_perturb(z0, t, rng=rng, cfg=dcfg, g=g)
    out, cache = net.forward(t, zt)
    w2 = np.asarray(weights, dtype=np.float64) ** 2
    r = out - target
    n = r.shape[0]
    loss = float(np.sum(w2 * r * r) / n)
    grads = net.backward(cache, 2.0 * w2 * r / n)
    return loss, grads


@dataclass
class TrainConfig:
    iterations: int = 20000
    batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    alpha: float = 0.0
    seed: int = 0
    val_fraction: float = 0.1
    eval_every: int = 500
    hidden: tuple = (128, 128, 128)
    activation: str = "silu"
    time_embed_dim: int = 32
    per_sample_t: bool = True

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.alpha < 0:
            raise InvalidConfigError("alpha must be >= 0")
        if self.iterations < 0 or self.batch_size < 1:
            raise InvalidConfigError("iterations must be >= 0 and batch_size >= 1")
        if not (0.0 <= self.val_fraction < 1.0):
            raise InvalidConfigError("val_fraction must lie in [0, 1)")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)  # (iteration, loss)


def _params_finite(net):
    return all(np.all(np.isfinite(p)) for layer in net.params for p in layer)


def train(coeffs, eigenvalues, cfg, dcfg=None):
    """Fit a ScoreNetwork to spectral coefficients. Returns ``(net, history)``.

    Each batch element draws its own diffusion time; ``per_sample_t=False``
    shares one time across the minibatch instead.
    Validation loss is evaluated on held-out rows with frozen noise draws.
    """
    dcfg = dcfg or DiffusionConfig()
    Z = np.asarray(coeffs, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise InvalidInputError("need a non-empty (L, M+1) coefficient matrix")
    dim = Z.shape[1]
    weights = loss_weights(eigenvalues[:dim], cfg.alpha)

    rng = make_rng(cfg.seed, "train")
    perm = make_rng(cfg.seed, "split").permutation(Z.shape[0])
    n_val = int(np.floor(cfg.val_fraction * Z.shape[0])) if Z.shape[0] > 1 else 0
    Zval, Ztr = Z[perm[:n_val]], Z[perm[n_val:]]

    net = ScoreNetwork(dim, cfg.hidden, cfg.activation, cfg.time_embed_dim, rng=make_rng(cfg.seed, "init"))
    opt = Adam(net.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    history = TrainHistory()

    vrng = make_rng(cfg.seed, "validation")
    t_val = vrng.uniform(dcfg.eps, dcfg.T, n_val)
    g_val = vrng.standard_normal(Zval.shape)

    def validate(it):
        if n_val:
            loss, _ = weighted_dsm_loss(net, Zval, t_val, weights, dcfg, g=g_val)
            history.val_loss.append((it, loss))

    validate(0)
    for it in range(cfg.iterations):
        idx = rng.integers(0, Ztr.shape[0], cfg.batch_size)
        t = rng.uniform(dcfg.eps, dcfg.T, cfg.batch_size if cfg.per_sample_t else None)
        loss, grads = weighted_dsm_loss(net, Ztr[idx], t, weights, dcfg, rng=rng)
        if not np.isfinite(loss):
            raise TrainingFailureError(f"loss diverged at iteration {it}", iteration=it)
        opt.step(net.params, grads)
        if not _params_finite(net):
            raise TrainingFailureError(f"non-finite parameters after iteration {it}", iteration=it)
        history.train_loss.append(loss)
        if (it + 1) % cfg.eval_every == 0 or it + 1 == cfg.iterations:
            validate(it + 1)
            log.debug("iteration %d train %.4f val %s", it + 1, loss, history.val_loss[-1:])
    return net, history


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def checkpoint_dict(net, train_cfg=None, diffusion_cfg=None, eigensystem_sha256=None, M=None):
    return {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "dim": net.dim,
        "hidden": list(net.hidden),
        "activation": net.activation,
        "time_embed_dim": net.time_embed_dim,
        "layer_shapes": [list(W.shape) for W, _ in net.params],
        "train_config": None if train_cfg is None else train_cfg.to_dict(),
        "diffusion_config": None if diffusion_cfg is None else diffusion_cfg.to_dict(),
        "eigensystem_sha256": eigensystem_sha256,
        "M": M,
        "params": [{"W": W.tolist(), "b": b.tolist()} for W, b in net.params],
    }


def net_from_checkpoint(d):
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ParseError("not a checkpoint file")
    net = ScoreNetwork(d["dim"], d["hidden"], d["activation"], d["time_embed_dim"])
    for layer, p, shape in zip(net.params, d["params"], d["layer_shapes"]):
        layer[0] = np.array(p["W"], dtype=np.float64).reshape(shape)
        layer[1] = np.array(p["b"], dtype=np.float64).reshape(shape[1])
    return net


def save_checkpoint(path, net, **meta):
    text = json.dumps(checkpoint_dict(net, **meta), indent=1) + "\n"
    Path(path).write_text(text)


def load_checkpoint(path):
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno) from exc
    return net_from_checkpoint(d), d
