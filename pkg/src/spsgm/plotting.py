"""Figures written next to the CSV outputs.

SVG output is made byte-reproducible by fixing the element-id salt and
dropping the creation date from the metadata.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SVG_SALT = "spsgm"


def _save(fig, path):
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_samples(path, grid, samples, data=None, max_panels=16, cols=4):
    """Small multiples of sampled curves, with a few data curves in grey behind."""
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    samples = np.atleast_2d(samples)[:max_panels]
    rows = max(1, math.ceil(samples.shape[0] / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 1.8 * rows), sharex=True, sharey=True, squeeze=False)
    for k, ax in enumerate(axes.flat):
        if k >= samples.shape[0]:
            ax.axis("off")
            continue
        if data is not None and len(data):
            ax.plot(grid, np.atleast_2d(data)[k % len(data)], color="0.75", lw=0.8)
        ax.plot(grid, samples[k], color="C0", lw=1.0)
    fig.tight_layout()
    _save(fig, path)


def plot_spectrum(path, eigenvalues, M=None):
    lam = np.asarray(eigenvalues, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.semilogy(np.arange(lam.size), lam, marker=".", lw=0.8)
    if M is not None:
        ax.axvline(M, color="C3", ls="--", lw=0.8)
    ax.set_xlabel("m")
    ax.set_ylabel("eigenvalue")
    fig.tight_layout()
    _save(fig, path)


def plot_loss(path, train_loss, val_loss=()):
    fig, ax = plt.subplots(figsize=(4, 3))
    train_loss = np.asarray(train_loss, dtype=np.float64)
    if train_loss.size:
        ax.plot(np.arange(1, train_loss.size + 1), train_loss, color="0.6", lw=0.5, label="train")
    if len(val_loss):
        it, v = zip(*val_loss)
        ax.plot(it, v, color="C3", marker=".", lw=1.0, label="validation")
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)
