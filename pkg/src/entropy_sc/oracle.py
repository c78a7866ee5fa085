"""Brute-force reference computations used to check the analytic code paths.

Nothing in here shares code with :mod:`entropy_sc.objectives` beyond the
posterior container: the ELBO is estimated by sampling, the absolute moment by
quadrature, and gradients by central differences.
"""

import math
from dataclasses import dataclass

import numpy as np

from .model import make_rng


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_samples: int

    def contains(self, value, n_sigma=3.0):
        return abs(value - self.mean) <= n_sigma * self.std_error


def mc_elbo(posteriors, theta, data, n_samples, seed):
    """Monte-Carlo ELBO with reparameterized samples z = nu + L eps.

    Every datapoint draws from its own Philox stream keyed by (seed, n), so the
    estimate does not depend on evaluation order. ``std_error`` is the standard
    error of the datapoint-averaged sample mean.
    """
    if n_samples < 100:
        raise ValueError("mc_elbo needs n_samples >= 100")
    x = np.asarray(getattr(data, "x", data), dtype=np.float64)
    w = theta.w_tilde
    lam = theta.lambdas
    s2 = theta.sigma2
    d = w.shape[0]
    h = posteriors.h
    chols = posteriors.cholesky_factors()
    log_norm_lik = -0.5 * d * math.log(2.0 * math.pi * s2)
    log_norm_prior = -float(np.sum(np.log(2.0 * lam)))
    means = np.empty(posteriors.n)
    variances = np.empty(posteriors.n)
    for i in range(posteriors.n):
        rng = make_rng(seed, i)
        eps = rng.standard_normal((n_samples, h))
        l = chols[i]
        z = posteriors.nu[i] + eps @ l.T
        r = x[i] - z @ w.T
        log_lik = log_norm_lik - np.einsum("sd,sd->s", r, r) / (2.0 * s2)
        log_prior = log_norm_prior - np.abs(z) @ (1.0 / lam)
        log_q = (-0.5 * h * math.log(2.0 * math.pi) - float(np.sum(np.log(np.diag(l))))
                 - 0.5 * np.einsum("sh,sh->s", eps, eps))
        y = log_lik + log_prior - log_q
        means[i] = y.mean()
        variances[i] = y.var(ddof=1)
    n = posteriors.n
    se = math.sqrt(variances.sum() / n_samples) / n
    return McEstimate(float(means.mean()), se, n_samples)


def _gauss_abs(z, nu, tau):
    return np.abs(z) * np.exp(-0.5 * ((z - nu) / tau) ** 2) / (tau * math.sqrt(2.0 * math.pi))


def quad_abs_moment(nu, tau, tolerance=1e-12, max_depth=60):
    """E|z| for z ~ N(nu, tau^2) by adaptive Simpson on [nu - 12 tau, nu + 12 tau].

    The interval is split at z = 0, the kink of |z|, and each piece starts as
    16 equal panels: with only one panel per side the Simpson error estimate
    can vanish by accident and accept a wrong value. All pending subintervals
    are refined together, one numpy pass per level.
    """
    if not tau > 0 or not tolerance > 0:
        raise ValueError("quad_abs_moment needs tau > 0 and tolerance > 0")
    lo, hi = nu - 12.0 * tau, nu + 12.0 * tau
    edges = [lo, 0.0, hi] if lo < 0.0 < hi else [lo, hi]
    grid = np.concatenate([np.linspace(l, r, 17)[:-1] for l, r in zip(edges[:-1], edges[1:])] + [[edges[-1]]])
    a = grid[:-1]
    b = grid[1:]
    tol = np.full(a.size, tolerance / a.size)
    f = lambda z: _gauss_abs(z, nu, tau)
    m = 0.5 * (a + b)
    fa, fm, fb = f(a), f(m), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    total = 0.0
    for _ in range(max_depth):
        m = 0.5 * (a + b)
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        delta = left + right - whole
        done = np.abs(delta) <= 15.0 * tol
        total += float(np.sum((left + right + delta / 15.0)[done]))
        keep = ~done
        if not keep.any():
            return total
        a = np.concatenate([a[keep], m[keep]])
        b = np.concatenate([m[keep], b[keep]])
        fa, fb, fm_new = (np.concatenate([fa[keep], fm[keep]]), np.concatenate([fm[keep], fb[keep]]),
                          np.concatenate([flm[keep], frm[keep]]))
        fm = fm_new
        whole = np.concatenate([left[keep], right[keep]])
        tol = np.concatenate([tol[keep], tol[keep]]) / 2.0
    raise QuadratureError(f"adaptive Simpson did not converge within depth {max_depth} (nu={nu}, tau={tau})")


def finite_diff(objective, point, step=1e-5):
    """Central differences with per-coordinate step ``step * max(1, |x_i|)``."""
    x = np.array(point, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        old = x[i]
        x[i] = old + h
        fp = objective(x)
        x[i] = old - h
        fm = objective(x)
        x[i] = old
        grad[i] = (fp - fm) / (2.0 * h)
    return grad
