"""Analytic ELBOs for Laplace-prior sparse coding and their gradients.

Two objectives share most of their algebra:

* the entropy ELBO, a function of the posteriors and the dictionary only, with
  the Laplace scales and the noise variance replaced by their closed-form optima::

      F = mean_n H[q_n] - gamma * sum_h log(2 e lambda_opt_h) - delta * D/2 log(2 pi e sigma2_opt)

* the classical ELBO for arbitrary (lambda, W, sigma2), in closed form.

Per-datapoint quantities used throughout (tau_h = sqrt(T_hh), a = nu / tau)::

    s_nh = tau M(a)                          E|z_h| under q_n
    E_n  = tr(W^T W T_n) + ||W nu_n - x_n||^2  E||x_n - W z||^2 under q_n

Gradients are with respect to the unconstrained posterior coordinates listed in
:mod:`entropy_sc.model`, plus the normalized dictionary ``w_tilde`` and, for the
entropy ELBO, the dictionary preimage. The column normalization u = v / ||v||
is differentiated as g_v = (I - u u^T) g_u / ||v||.
"""

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelParams, normalize_columns
from .special import LOG_2E, LOG_2PIE, SQRT_2_OVER_PI, erf, m_function

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class AnnealingWeights:
    gamma: float = 1.0
    delta: float = 1.0

    def __post_init__(self):
        for name in ("gamma", "delta"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")
            object.__setattr__(self, name, v)

    @classmethod
    def beta_annealing(cls, beta):
        return cls(1.0, 1.0 / beta)

    @classmethod
    def energy_tempering(cls, c):
        return cls(c, c)

    @classmethod
    def prior_annealing(cls, gamma):
        return cls(gamma, 1.0)


UNANNEALED = AnnealingWeights(1.0, 1.0)


@dataclass(frozen=True)
class ElboBreakdown:
    q_entropy_avg: float
    prior_entropy: float
    likelihood_entropy: float
    lambda_opt: np.ndarray
    sigma2_opt: float
    total: float
    gamma: float = 1.0
    delta: float = 1.0

    def to_dict(self):
        return {
            "total": self.total,
            "q_entropy_avg": self.q_entropy_avg,
            "prior_entropy": self.prior_entropy,
            "likelihood_entropy": self.likelihood_entropy,
            "sigma2_opt": self.sigma2_opt,
            "lambda_opt": [float(v) for v in self.lambda_opt],
            "gamma": self.gamma,
            "delta": self.delta,
        }


def _data_matrix(data):
    return np.asarray(getattr(data, "x", data), dtype=np.float64)


def _check_shapes(posteriors, w, x):
    if w.shape[1] != posteriors.h:
        raise ValueError(f"dictionary has {w.shape[1]} columns but posteriors have H={posteriors.h}")
    if x.shape != (posteriors.n, w.shape[0]):
        raise ValueError(f"data shape {x.shape} does not match N={posteriors.n}, D={w.shape[0]}")


class _Terms:
    """Shared per-datapoint statistics of a posterior set under a dictionary."""

    def __init__(self, posteriors, w, x):
        _check_shapes(posteriors, w, x)
        self.post = posteriors
        self.w = w
        self.x = x
        self.n, self.d = x.shape
        self.gram = w.T @ w
        self.tau = posteriors.tau()
        self.a = posteriors.nu / self.tau
        self.soft = self.tau * m_function(self.a)
        self.resid = posteriors.nu @ w.T - x
        self.sq = np.einsum("nd,nd->n", self.resid, self.resid)
        self.trace = posteriors.trace_gram(self.gram)
        self.energy = self.trace + self.sq

    @property
    def lambda_opt(self):
        return self.soft.mean(axis=0)

    @property
    def sigma2_opt(self):
        return float(self.energy.sum() / (self.d * self.n))


def lambda_opt(posteriors):
    """Optimal Laplace scales: mean over datapoints of the softened magnitudes."""
    tau = posteriors.tau()
    return (tau * m_function(posteriors.nu / tau)).mean(axis=0)


def sigma2_opt(posteriors, w_tilde, data):
    """Optimal observation variance (1/(DN)) sum_n [tr(W^T W T_n) + ||W nu_n - x_n||^2]."""
    w = np.asarray(w_tilde, dtype=np.float64)
    return _Terms(posteriors, w, _data_matrix(data)).sigma2_opt


def _breakdown(terms, weights):
    q_ent = float(terms.post.entropies().mean())
    lam = terms.lambda_opt
    s2 = terms.sigma2_opt
    prior_ent = float(np.sum(LOG_2E + np.log(lam)))
    lik_ent = 0.5 * terms.d * (LOG_2PIE + math.log(s2))
    total = q_ent - weights.gamma * prior_ent - weights.delta * lik_ent
    return ElboBreakdown(q_ent, prior_ent, lik_ent, lam, s2, total, weights.gamma, weights.delta)


def entropy_elbo(posteriors, preimage, data, weights=UNANNEALED):
    """Entropy ELBO (annealed by ``weights``) with its three entropy terms."""
    w = normalize_columns(preimage)
    return _breakdown(_Terms(posteriors, w, _data_matrix(data)), weights)


def entropy_elbo_w(posteriors, w_tilde, data, weights=UNANNEALED):
    """Same as :func:`entropy_elbo` for an already normalized dictionary."""
    return _breakdown(_Terms(posteriors, np.asarray(w_tilde, dtype=np.float64), _data_matrix(data)), weights)


def classical_elbo(posteriors, theta, data):
    """Closed-form ELBO at arbitrary model parameters ``theta``."""
    terms = _Terms(posteriors, theta.w_tilde, _data_matrix(data))
    lam = theta.lambdas
    s2 = theta.sigma2
    lik = -0.5 * terms.d * (LOG_2PI + math.log(s2)) - terms.energy.mean() / (2.0 * s2)
    prior = -terms.post.h * math.log(2.0) - float(np.sum(np.log(lam))) - float((terms.soft / lam).sum(axis=1).mean())
    ent = float(terms.post.entropies().mean())
    return float(lik + prior + ent)


def l1_local_objective(posteriors, preimage, data, gamma=1.0):
    """(D/2) log sigma2_opt + gamma * sum_h log lambda_opt_h, to be minimized.

    Equals prior + likelihood entropy with the constants H log(2e) and
    (D/2) log(2 pi e) dropped (exactly, for gamma = 1).
    """
    if posteriors.variant != "diag":
        raise ValueError("l1_local_objective is defined for diagonal posteriors only")
    w = normalize_columns(preimage)
    terms = _Terms(posteriors, w, _data_matrix(data))
    return 0.5 * terms.d * math.log(terms.sigma2_opt) + gamma * float(np.sum(np.log(terms.lambda_opt)))


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


@dataclass
class EntropyGradients:
    posterior: dict
    w_tilde: np.ndarray
    preimage: np.ndarray
    breakdown: ElboBreakdown


@dataclass
class ClassicalGradients:
    posterior: dict
    w_tilde: np.ndarray
    lambdas: np.ndarray
    sigma2: float
    value: float


def _posterior_grads(terms, prior_coef, lik_coef, with_w=True):
    """Gradients of

        mean_n H[q_n] - sum_h prior_coef_h mean_n s_nh - lik_coef/2 mean_n E_n

    which is the first-order form shared by both objectives.
    """
    post = terms.post
    n = terms.n
    inv_n = 1.0 / n
    erf_a = erf(terms.a / math.sqrt(2.0))
    dens = SQRT_2_OVER_PI * np.exp(-0.5 * terms.a * terms.a)

    g_nu = -inv_n * (prior_coef * erf_a + lik_coef * (terms.resid @ terms.w))
    g_tau = -inv_n * prior_coef * dens
    shared = -0.5 * inv_n * lik_coef * terms.gram  # dF/dT from the energy term
    diag_extra = g_tau / (2.0 * terms.tau)         # dF/dT_hh from tau = sqrt(T_hh)

    grads = {"nu": g_nu}
    if post.variant == "diag":
        t2 = terms.tau ** 2
        grads["log_tau"] = (np.diagonal(shared)[None, :] + diag_extra) * 2.0 * t2 + inv_n
    elif post.variant == "full":
        chol = post.chol
        g_l = 2.0 * (np.einsum("ij,njk->nik", shared, chol) + diag_extra[:, :, None] * chol)
        g_l = np.tril(g_l)
        idx = np.arange(post.h)
        ldiag = chol[:, idx, idx]
        g_l[:, idx, idx] = g_l[:, idx, idx] * ldiag + inv_n
        grads["chol_raw"] = g_l
    else:
        v = post.v_factor
        s2 = np.exp(2.0 * post.log_s)
        try:
            t_inv = np.linalg.inv(post.covariances())
        except np.linalg.LinAlgError:
            # singular T: the entropy is -inf here, so line searches reject the point anyway
            t_inv = np.full((post.n, post.h, post.h), np.nan)
        g_v = 2.0 * (np.einsum("ij,njr->nir", shared, v) + diag_extra[:, :, None] * v)
        g_v += inv_n * (t_inv @ v)
        idx = np.arange(post.h)
        g_ls = 2.0 * s2 * (np.diagonal(shared)[None, :] + diag_extra) + inv_n * t_inv[:, idx, idx] * s2
        grads["v_factor"] = g_v
        grads["log_s"] = g_ls

    g_w = None
    if with_w:
        t_sum = post.covariances().sum(axis=0) if post.variant != "diag" else np.diag((terms.tau ** 2).sum(axis=0))
        g_w = -inv_n * lik_coef * (terms.w @ t_sum + terms.resid.T @ post.nu)
    return grads, g_w


def normalization_backward(preimage, g_w):
    """Pull a gradient w.r.t. normalized columns back to the preimage."""
    v = np.asarray(preimage, dtype=np.float64)
    norms = np.linalg.norm(v, axis=0)
    u = v / norms
    return (g_w - u * np.sum(u * g_w, axis=0)) / norms


def entropy_elbo_gradients(posteriors, preimage, data, weights=UNANNEALED, with_w=True):
    """Value and analytic gradient of the (annealed) entropy ELBO."""
    w = normalize_columns(preimage)
    terms = _Terms(posteriors, w, _data_matrix(data))
    bd = _breakdown(terms, weights)
    grads, g_w = _posterior_grads(terms, weights.gamma / bd.lambda_opt, weights.delta / bd.sigma2_opt, with_w)
    g_v = normalization_backward(preimage, g_w) if with_w else None
    return EntropyGradients(grads, g_w, g_v, bd)


def classical_elbo_gradients(posteriors, theta, data):
    """Value and analytic gradient of the classical ELBO in (Phi, W, lambda, sigma2)."""
    terms = _Terms(posteriors, theta.w_tilde, _data_matrix(data))
    lam = theta.lambdas
    s2 = theta.sigma2
    grads, g_w = _posterior_grads(terms, 1.0 / lam, 1.0 / s2)
    g_lam = -1.0 / lam + terms.soft.mean(axis=0) / lam ** 2
    g_s2 = -0.5 * terms.d / s2 + terms.energy.mean() / (2.0 * s2 * s2)
    return ClassicalGradients(grads, g_w, g_lam, float(g_s2), classical_elbo(posteriors, theta, terms.x))


def optimal_model_params(posteriors, w_tilde, data):
    """Theta_opt = (lambda_opt, W, sigma2_opt) for the given posteriors and dictionary."""
    terms = _Terms(posteriors, np.asarray(w_tilde, dtype=np.float64), _data_matrix(data))
    return ModelParams(terms.w, terms.lambda_opt, terms.sigma2_opt)
