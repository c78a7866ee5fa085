"""Matplotlib figures for training runs, written to files (Agg backend)."""

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_trace(trace, path, title=None):
    """Three stacked panels: ELBO and entropy terms, Gini mean +- SD, annealing weights."""
    ep = np.array([r.epoch for r in trace])
    fig, axes = plt.subplots(3, 1, figsize=(6.5, 8.0), sharex=True,
                             gridspec_kw={"height_ratios": [2.0, 1.0, 1.0]})
    ax = axes[0]
    ax.plot(ep, [r.total_elbo for r in trace], "k-o", ms=3, label="ELBO")
    ax.plot(ep, [r.q_entropy_avg for r in trace], "--", label="mean H[q]")
    ax.plot(ep, [-r.prior_entropy for r in trace], "--", label="-H[prior]")
    ax.plot(ep, [-r.likelihood_entropy for r in trace], "--", label="-H[likelihood]")
    ax.set_ylabel("nats")
    ax.legend(fontsize=8, loc="lower right")
    if title:
        ax.set_title(title)
    g = np.array([r.gini_mean for r in trace])
    sd = np.array([r.gini_sd for r in trace])
    axes[1].errorbar(ep, g, yerr=sd, fmt="-o", ms=3, capsize=2)
    axes[1].set_ylabel("Gini(nu)")
    axes[2].step(ep, [r.gamma for r in trace], where="mid", label="gamma")
    axes[2].step(ep, [r.delta for r in trace], where="mid", label="delta")
    axes[2].set_ylabel("weight")
    axes[2].set_xlabel("epoch")
    axes[2].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_fields(w, path, patch_shape=None, title=None):
    """Dictionary columns as a grid of images, each with a symmetric color range."""
    w = np.asarray(w, dtype=np.float64)
    d, h = w.shape
    if patch_shape is None:
        side = int(round(math.sqrt(d)))
        patch_shape = (side, side) if side * side == d else (1, d)
    n_cols = int(math.ceil(math.sqrt(h)))
    n_rows = int(math.ceil(h / n_cols))
    fig, axes = plt.subplots(n_rows, n_cols, figsize=(1.2 * n_cols, 1.2 * n_rows + (0.4 if title else 0)),
                             squeeze=False)
    for k, ax in enumerate(axes.ravel()):
        ax.set_axis_off()
        if k >= h:
            continue
        f = w[:, k].reshape(patch_shape)
        lim = float(np.max(np.abs(f))) or 1.0
        ax.imshow(f, cmap="gray", vmin=-lim, vmax=lim, interpolation="nearest")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_lambdas(lambdas, path):
    """Sorted Laplace scales; near-zero values flag collapsed latents."""
    lam = np.sort(np.asarray(lambdas, dtype=np.float64))[::-1]
    fig, ax = plt.subplots(figsize=(6.0, 3.0))
    ax.bar(np.arange(lam.size), lam)
    ax.set_xlabel("latent (sorted)")
    ax.set_ylabel("lambda_opt")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
