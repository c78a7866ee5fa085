"""Reparameterized sparse coding model and Gaussian variational posteriors.

Generative model (unit-norm dictionary columns, learnable Laplace scales)::

    p(z)   = prod_h 1/(2 lambda_h) exp(-|z_h| / lambda_h)
    p(x|z) = N(x | W z, sigma2 I),   ||W[:, h]|| = 1

Posteriors q_n(z) = N(nu_n, T_n) come in three families. ``PosteriorSet``
stores all N of them as stacked arrays, which is what the objectives and
optimizers consume; ``FullPosterior``/``DiagonalPosterior``/``LowRankPosterior``
are the per-datapoint views.

Positivity is handled by log-parameterization. The *unconstrained* coordinates
of each family, used by gradients and optimizers, are:

    diag     nu, log_tau                  T = diag(exp(2 log_tau))
    full     nu, chol_raw                 L = tril(chol_raw) with exp on the diagonal, T = L L^T
    lowrank  nu, v_factor, log_s          T = V V^T + diag(exp(2 log_s))
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .special import LOG_2PIE

VARIANTS = ("full", "diag", "lowrank")
DATA_SOURCES = ("bars", "patches", "imported")


def make_rng(seed, *key):
    """Counter-based Philox generator; extra ``key`` ints derive independent streams."""
    seq = np.random.SeedSequence([int(seed), *[int(k) for k in key]])
    return np.random.Generator(np.random.Philox(seq))


# ---------------------------------------------------------------------------
# model parameters
# ---------------------------------------------------------------------------


class ZeroColumnError(ValueError):
    def __init__(self, index):
        super().__init__(f"dictionary column {index} is the zero vector")
        self.index = index


def normalize_columns(preimage):
    """Scale every column of a D x H matrix to unit Euclidean norm."""
    v = np.asarray(preimage, dtype=np.float64)
    norms = np.linalg.norm(v, axis=0)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroColumnError(int(zero[0]))
    return v / norms


@dataclass(frozen=True)
class ModelParams:
    w_tilde: np.ndarray
    lambdas: np.ndarray
    sigma2: float

    def __post_init__(self):
        w = np.asarray(self.w_tilde, dtype=np.float64)
        lam = np.asarray(self.lambdas, dtype=np.float64)
        object.__setattr__(self, "w_tilde", w)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "sigma2", float(self.sigma2))
        if w.ndim != 2 or lam.shape != (w.shape[1],):
            raise ValueError(f"shape mismatch: w_tilde {w.shape}, lambdas {lam.shape}")
        if np.any(np.abs(np.linalg.norm(w, axis=0) - 1.0) > 1e-10):
            raise ValueError("w_tilde columns must have unit norm")
        if np.any(~(lam > 0)) or not self.sigma2 > 0:
            raise ValueError("lambdas and sigma2 must be strictly positive")

    @property
    def shape(self):
        return self.w_tilde.shape


# ---------------------------------------------------------------------------
# per-datapoint posteriors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FullPosterior:
    nu: np.ndarray
    chol: np.ndarray  # lower triangular, positive diagonal

    def covariance(self):
        return self.chol @ self.chol.T


@dataclass(frozen=True)
class DiagonalPosterior:
    nu: np.ndarray
    log_tau: np.ndarray

    def covariance(self):
        return np.diag(np.exp(2.0 * self.log_tau))


@dataclass(frozen=True)
class LowRankPosterior:
    nu: np.ndarray
    v_factor: np.ndarray
    log_s: np.ndarray

    def covariance(self):
        return self.v_factor @ self.v_factor.T + np.diag(np.exp(2.0 * self.log_s))


def covariance_of(p):
    """Dense covariance T of a single posterior."""
    return p.covariance()


# ---------------------------------------------------------------------------
# stacked posteriors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PosteriorSet:
    """N Gaussian posteriors of one family, stored as stacked arrays."""

    variant: str
    nu: np.ndarray
    log_tau: Optional[np.ndarray] = None
    chol: Optional[np.ndarray] = None
    v_factor: Optional[np.ndarray] = None
    log_s: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown posterior variant {self.variant!r}")
        nu = np.asarray(self.nu, dtype=np.float64)
        if nu.ndim != 2 or nu.shape[0] < 1:
            raise ValueError("nu must be an N x H array with N >= 1")
        object.__setattr__(self, "nu", nu)
        n, h = nu.shape
        required = {"diag": ("log_tau",), "full": ("chol",), "lowrank": ("v_factor", "log_s")}[self.variant]
        for name in required:
            arr = getattr(self, name)
            if arr is None:
                raise ValueError(f"{self.variant} posteriors need {name}")
            object.__setattr__(self, name, np.asarray(arr, dtype=np.float64))
        if self.variant == "diag" and self.log_tau.shape != (n, h):
            raise ValueError("log_tau must be N x H")
        if self.variant == "full":
            if self.chol.shape != (n, h, h):
                raise ValueError("chol must be N x H x H")
            if np.any(~(np.diagonal(self.chol, axis1=1, axis2=2) > 0)):
                raise ValueError("chol diagonal must be strictly positive")
        if self.variant == "lowrank":
            if self.v_factor.ndim != 3 or self.v_factor.shape[:2] != (n, h) or self.log_s.shape != (n, h):
                raise ValueError("lowrank posteriors need v_factor N x H x r and log_s N x H")

    # -- construction -----------------------------------------------------

    @classmethod
    def initial(cls, variant, n, h, rank=5):
        """nu = 0 and T = I (unit chol, zero low-rank factor)."""
        nu = np.zeros((n, h))
        if variant == "diag":
            return cls("diag", nu, log_tau=np.zeros((n, h)))
        if variant == "full":
            return cls("full", nu, chol=np.broadcast_to(np.eye(h), (n, h, h)).copy())
        if variant == "lowrank":
            return cls("lowrank", nu, v_factor=np.zeros((n, h, rank)), log_s=np.zeros((n, h)))
        raise ValueError(f"unknown posterior variant {variant!r}")

    @classmethod
    def from_entries(cls, entries):
        entries = list(entries)
        if not entries:
            raise ValueError("a PosteriorSet needs at least one entry")
        kind = type(entries[0])
        if any(type(e) is not kind for e in entries):
            raise ValueError("all posterior entries must be of the same variant")
        nu = np.stack([e.nu for e in entries])
        if kind is DiagonalPosterior:
            return cls("diag", nu, log_tau=np.stack([e.log_tau for e in entries]))
        if kind is FullPosterior:
            return cls("full", nu, chol=np.stack([e.chol for e in entries]))
        return cls("lowrank", nu, v_factor=np.stack([e.v_factor for e in entries]),
                   log_s=np.stack([e.log_s for e in entries]))

    def entries(self):
        out = []
        for i in range(self.n):
            if self.variant == "diag":
                out.append(DiagonalPosterior(self.nu[i], self.log_tau[i]))
            elif self.variant == "full":
                out.append(FullPosterior(self.nu[i], self.chol[i]))
            else:
                out.append(LowRankPosterior(self.nu[i], self.v_factor[i], self.log_s[i]))
        return out

    # -- shapes -----------------------------------------------------------

    @property
    def n(self):
        return self.nu.shape[0]

    @property
    def h(self):
        return self.nu.shape[1]

    @property
    def rank(self):
        return self.v_factor.shape[2] if self.variant == "lowrank" else None

    # -- moments ----------------------------------------------------------

    def tau(self):
        """Marginal standard deviations sqrt(T_hh), shape N x H."""
        if self.variant == "diag":
            return np.exp(self.log_tau)
        if self.variant == "full":
            return np.sqrt(np.einsum("nij,nij->ni", self.chol, self.chol))
        return np.sqrt(np.einsum("nir,nir->ni", self.v_factor, self.v_factor) + np.exp(2.0 * self.log_s))

    def covariances(self):
        if self.variant == "diag":
            t = np.zeros((self.n, self.h, self.h))
            idx = np.arange(self.h)
            t[:, idx, idx] = np.exp(2.0 * self.log_tau)
            return t
        if self.variant == "full":
            return self.chol @ np.swapaxes(self.chol, 1, 2)
        t = self.v_factor @ np.swapaxes(self.v_factor, 1, 2)
        idx = np.arange(self.h)
        t[:, idx, idx] += np.exp(2.0 * self.log_s)
        return t

    def cholesky_factors(self):
        if self.variant == "full":
            return self.chol
        if self.variant == "diag":
            l = np.zeros((self.n, self.h, self.h))
            idx = np.arange(self.h)
            l[:, idx, idx] = np.exp(self.log_tau)
            return l
        return np.linalg.cholesky(self.covariances())

    def log_det(self):
        """log |T_n| for every datapoint."""
        if self.variant == "diag":
            return 2.0 * self.log_tau.sum(axis=1)
        if self.variant == "full":
            return 2.0 * np.log(np.diagonal(self.chol, axis1=1, axis2=2)).sum(axis=1)
        sign, logdet = np.linalg.slogdet(self.covariances())
        return logdet

    def entropies(self):
        """Gaussian entropy 0.5 log|2 pi e T_n| for every datapoint."""
        return 0.5 * self.h * LOG_2PIE + 0.5 * self.log_det()

    def trace_gram(self, gram):
        """tr(G T_n) for a symmetric H x H matrix G, per datapoint."""
        if self.variant == "diag":
            return np.exp(2.0 * self.log_tau) @ np.diagonal(gram)
        if self.variant == "full":
            return np.einsum("nji,jk,nki->n", self.chol, gram, self.chol, optimize=True)
        low = np.einsum("nir,ij,njr->n", self.v_factor, gram, self.v_factor, optimize=True)
        return low + np.exp(2.0 * self.log_s) @ np.diagonal(gram)

    # -- unconstrained coordinates ----------------------------------------

    def param_names(self):
        return {"diag": ("nu", "log_tau"), "full": ("nu", "chol_raw"),
                "lowrank": ("nu", "v_factor", "log_s")}[self.variant]

    def unconstrained(self):
        if self.variant == "diag":
            return {"nu": self.nu, "log_tau": self.log_tau}
        if self.variant == "full":
            raw = np.tril(self.chol)
            idx = np.arange(self.h)
            raw[:, idx, idx] = np.log(self.chol[:, idx, idx])
            return {"nu": self.nu, "chol_raw": raw}
        return {"nu": self.nu, "v_factor": self.v_factor, "log_s": self.log_s}

    @classmethod
    def from_unconstrained(cls, variant, params):
        if variant == "diag":
            return cls("diag", params["nu"], log_tau=params["log_tau"])
        if variant == "full":
            raw = np.tril(np.asarray(params["chol_raw"], dtype=np.float64))
            h = raw.shape[-1]
            idx = np.arange(h)
            raw[:, idx, idx] = np.exp(raw[:, idx, idx])
            return cls("full", params["nu"], chol=raw)
        return cls("lowrank", params["nu"], v_factor=params["v_factor"], log_s=params["log_s"])

    def pack(self):
        """Flatten the unconstrained coordinates into one vector."""
        return pack_params(self.variant, self.unconstrained())

    def unpack(self, flat):
        """Inverse of :meth:`pack`, using this set's shapes."""
        return PosteriorSet.from_unconstrained(self.variant, unpack_params(self.variant, flat, self.n, self.h, self.rank))

    # -- batching ---------------------------------------------------------

    def subset(self, idx):
        return PosteriorSet(self.variant, self.nu[idx],
                            **{k: getattr(self, k)[idx] for k in _array_fields(self.variant)})

    def replace_subset(self, idx, part):
        kw = {}
        for k in ("nu",) + _array_fields(self.variant):
            arr = getattr(self, k).copy()
            arr[idx] = getattr(part, k)
            kw[k] = arr
        nu = kw.pop("nu")
        return PosteriorSet(self.variant, nu, **kw)

    def to_dict(self):
        out = {"variant": self.variant, "nu": self.nu.tolist()}
        for k in _array_fields(self.variant):
            out[k] = getattr(self, k).tolist()
        return out

    @classmethod
    def from_dict(cls, d):
        kw = {k: np.asarray(d[k]) for k in _array_fields(d["variant"])}
        return cls(d["variant"], np.asarray(d["nu"]), **kw)


def _array_fields(variant):
    return {"diag": ("log_tau",), "full": ("chol",), "lowrank": ("v_factor", "log_s")}[variant]


def pack_params(variant, params):
    parts = []
    for name, arr in params.items():
        if name == "chol_raw":
            h = arr.shape[-1]
            r, c = np.tril_indices(h)
            parts.append(arr[:, r, c].ravel())
        else:
            parts.append(np.asarray(arr).ravel())
    return np.concatenate(parts)


def unpack_params(variant, flat, n, h, rank=None):
    flat = np.asarray(flat, dtype=np.float64)
    out = {}
    pos = 0
    out["nu"] = flat[pos:pos + n * h].reshape(n, h)
    pos += n * h
    if variant == "diag":
        out["log_tau"] = flat[pos:pos + n * h].reshape(n, h)
        pos += n * h
    elif variant == "full":
        r, c = np.tril_indices(h)
        m = r.size
        raw = np.zeros((n, h, h))
        raw[:, r, c] = flat[pos:pos + n * m].reshape(n, m)
        out["chol_raw"] = raw
        pos += n * m
    else:
        out["v_factor"] = flat[pos:pos + n * h * rank].reshape(n, h, rank)
        pos += n * h * rank
        out["log_s"] = flat[pos:pos + n * h].reshape(n, h)
        pos += n * h
    if pos != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, expected {pos}")
    return out


# ---------------------------------------------------------------------------
# data and sampling
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    x: np.ndarray
    source: str = "imported"
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 2 or self.x.shape[0] < 1 or self.x.shape[1] < 1:
            raise ValueError(f"dataset must be a non-empty N x D matrix, got shape {self.x.shape}")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("dataset contains non-finite entries")
        if self.source not in DATA_SOURCES:
            raise ValueError(f"unknown dataset source {self.source!r}")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def d(self):
        return self.x.shape[1]

    def subset(self, idx):
        return Dataset(self.x[idx], self.source, self.seed, dict(self.meta))


def sample_laplace(rng, lambdas, n):
    """Inverse-CDF Laplace draws, shape n x H."""
    lam = np.asarray(lambdas, dtype=np.float64)
    u = rng.random((n, lam.size)) - 0.5
    # random() is in [0, 1) so |u| <= 0.5; clamp the measure-zero endpoint
    mag = -np.log1p(-np.minimum(2.0 * np.abs(u), 1.0 - 2.0 ** -53))
    return np.sign(u) * mag * lam


def sample_linear_laplace(w, lambdas, sigma2, n, seed, source="imported"):
    """x = W z + eps with Laplace z and N(0, sigma2 I) noise; W need not be normalized."""
    w = np.asarray(w, dtype=np.float64)
    rng = make_rng(seed)
    z = sample_laplace(rng, lambdas, n)
    noise = rng.standard_normal((n, w.shape[0])) * np.sqrt(sigma2)
    x = z @ w.T + noise
    return Dataset(x, source=source, seed=seed), z


def sample_generative(theta, n, seed, return_latents=False):
    """Draw n datapoints from the model; identical output for identical seeds."""
    data, z = sample_linear_laplace(theta.w_tilde, theta.lambdas, theta.sigma2, n, seed)
    return (data, z) if return_latents else data
