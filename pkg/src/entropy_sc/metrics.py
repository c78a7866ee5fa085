"""Sparsity and dictionary diagnostics."""

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


def _gini_rows(codes):
    c = np.sort(np.abs(np.atleast_2d(np.asarray(codes, dtype=np.float64))), axis=1)
    h = c.shape[1]
    total = c.sum(axis=1)
    zero = total == 0.0
    weights = (h - np.arange(1, h + 1) + 0.5) / h
    g = 1.0 - 2.0 * (c @ weights) / np.where(zero, 1.0, total)
    g[zero] = 0.0
    return g, zero


def gini(code):
    """Hurley-Rickard Gini index of |code|: 0 for a flat vector, 1 - 1/H for one-hot.

    With c sorted ascending, G = 1 - 2 sum_k (c_k / ||c||_1) (H - k + 1/2) / H.
    An all-zero vector is assigned 0.
    """
    g, zero = _gini_rows(np.ravel(code))
    if zero[0]:
        log.warning("gini of an all-zero vector is undefined; returning 0")
    return float(g[0])


@dataclass(frozen=True)
class GiniReport:
    mean: float
    sd: float
    per_sample: np.ndarray


def gini_report(posteriors):
    """Gini index of every posterior mean, with mean and population SD.

    Accepts a ``PosteriorSet`` or an N x H array of codes.
    """
    codes = getattr(posteriors, "nu", posteriors)
    g, zero = _gini_rows(codes)
    if zero.any():
        log.warning("%d all-zero codes assigned Gini 0", int(zero.sum()))
    return GiniReport(float(g.mean()), float(g.std()), g)


def dictionary_coherence(w):
    """Largest absolute inner product between two distinct (unit-norm) columns."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape[1] < 2:
        return 0.0
    g = np.abs(w.T @ w)
    np.fill_diagonal(g, 0.0)
    return float(g.max())


@dataclass(frozen=True)
class BarMatch:
    assignment: np.ndarray  # best ground-truth column for every learned column
    correlation: np.ndarray  # |Pearson correlation| with that column
    recovered: bool


def match_bars(learned, ground_truth, threshold=0.9):
    """Bar recovery: every ground-truth field is the best match (by absolute
    Pearson correlation) of exactly one learned field, with correlation above
    ``threshold``. Sign and scale of the learned fields do not matter.
    """
    a = np.asarray(learned, dtype=np.float64)
    b = np.asarray(ground_truth, dtype=np.float64)
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    corr = np.abs(a.T @ b) / np.outer(np.where(na > 0, na, 1.0), np.where(nb > 0, nb, 1.0))
    best = corr.argmax(axis=1)
    best_corr = corr[np.arange(corr.shape[0]), best]
    distinct = np.unique(best).size == b.shape[1] and a.shape[1] == b.shape[1]
    return BarMatch(best, best_corr, bool(distinct and np.all(best_corr > threshold)))
