"""Residual MLP encoder mapping data to Gaussian posterior parameters.

Architecture (tanh throughout)::

    h0 = tanh(P x + p)
    h1 = h0 + tanh(A1 h0 + c1)
    h2 = h1 + tanh(A2 h1 + c2)
    nu = N h2 + n
    diag:     log_tau = C h2 + c
    lowrank:  V = reshape(Vw h2 + vb, H x r),  log_s = S h2 + s

The heads emit exactly the unconstrained posterior coordinates used by
:mod:`entropy_sc.objectives`, so ``encode_backward`` takes the objective's
posterior gradients unchanged.
"""

import math
from dataclasses import dataclass

import numpy as np

from .model import PosteriorSet, make_rng

ENCODER_KEY = "encoder_v1"

_TRUNK = ("proj_w", "proj_b", "res1_w", "res1_b", "res2_w", "res2_b", "nu_w", "nu_b")
_HEADS = {"diag": ("cov_w", "cov_b"), "lowrank": ("v_w", "v_b", "ls_w", "ls_b")}


@dataclass
class EncoderParams:
    variant: str
    arrays: dict
    rank: int = 5

    def __post_init__(self):
        if self.variant not in _HEADS:
            raise ValueError(f"amortized encoders support 'diag' and 'lowrank', not {self.variant!r}")
        if self.variant == "lowrank" and self.rank < 1:
            raise ValueError("low-rank encoders need rank >= 1")
        missing = [k for k in self.names() if k not in self.arrays]
        if missing:
            raise ValueError(f"encoder is missing arrays {missing}")
        self.arrays = {k: np.asarray(self.arrays[k], dtype=np.float64) for k in self.names()}

    def names(self):
        return _TRUNK + _HEADS[self.variant]

    @property
    def input_dim(self):
        return self.arrays["proj_w"].shape[1]

    @property
    def hidden(self):
        return self.arrays["proj_w"].shape[0]

    @property
    def latent_dim(self):
        return self.arrays["nu_w"].shape[0]

    def flatten(self):
        return np.concatenate([self.arrays[k].ravel() for k in self.names()])

    def with_flat(self, flat):
        size = sum(a.size for a in self.arrays.values())
        if len(flat) != size:
            raise ValueError(f"flat vector has {len(flat)} entries, encoder has {size}")
        out, pos = {}, 0
        for k in self.names():
            a = self.arrays[k]
            out[k] = np.asarray(flat[pos:pos + a.size], dtype=np.float64).reshape(a.shape)
            pos += a.size
        return EncoderParams(self.variant, out, self.rank)

    def flatten_grads(self, grads):
        return np.concatenate([np.asarray(grads[k]).ravel() for k in self.names()])

    def to_dict(self):
        return {"variant": self.variant, "rank": self.rank,
                "arrays": {k: v.tolist() for k, v in self.arrays.items()}}

    @classmethod
    def from_dict(cls, d):
        return cls(d["variant"], {k: np.asarray(v) for k, v in d["arrays"].items()}, int(d.get("rank", 5)))


def init_encoder(d, h, variant="diag", hidden=None, rank=5, seed=0):
    """Uniform(+-1/sqrt(fan_in)) weights and zero biases.

    The log-scale heads start at zero so the initial posterior is N(nu, I).
    The low-rank factor head gets a small random init instead of zeros:
    V = 0 is a stationary point of the objective in V.
    """
    hidden = 4 * d if hidden is None else int(hidden)
    rng = make_rng(seed, 7)

    def uni(rows, cols, scale=1.0):
        bound = scale / math.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    arrays = {
        "proj_w": uni(hidden, d), "proj_b": np.zeros(hidden),
        "res1_w": uni(hidden, hidden), "res1_b": np.zeros(hidden),
        "res2_w": uni(hidden, hidden), "res2_b": np.zeros(hidden),
        "nu_w": uni(h, hidden), "nu_b": np.zeros(h),
    }
    if variant == "diag":
        arrays.update(cov_w=np.zeros((h, hidden)), cov_b=np.zeros(h))
    elif variant == "lowrank":
        arrays.update(v_w=uni(h * rank, hidden, 0.1), v_b=np.zeros(h * rank),
                      ls_w=np.zeros((h, hidden)), ls_b=np.zeros(h))
    return EncoderParams(variant, arrays, rank)


def _forward(params, x):
    a = params.arrays
    h0 = np.tanh(x @ a["proj_w"].T + a["proj_b"])
    u1 = np.tanh(h0 @ a["res1_w"].T + a["res1_b"])
    h1 = h0 + u1
    u2 = np.tanh(h1 @ a["res2_w"].T + a["res2_b"])
    h2 = h1 + u2
    return h0, u1, h1, u2, h2


def encode(params, x):
    """Posteriors for a batch (N x D -> PosteriorSet) or one datapoint (D -> entry)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    a = params.arrays
    h2 = _forward(params, xb)[-1]
    nu = h2 @ a["nu_w"].T + a["nu_b"]
    if params.variant == "diag":
        post = PosteriorSet("diag", nu, log_tau=h2 @ a["cov_w"].T + a["cov_b"])
    else:
        n, h = nu.shape
        v = (h2 @ a["v_w"].T + a["v_b"]).reshape(n, h, params.rank)
        post = PosteriorSet("lowrank", nu, v_factor=v, log_s=h2 @ a["ls_w"].T + a["ls_b"])
    return post.entries()[0] if single else post


def encode_backward(params, x, upstream):
    """Reverse-mode gradients of the encoder given posterior-coordinate gradients.

    Args:
        params: the encoder.
        x: N x D batch that was encoded.
        upstream: dict of gradients w.r.t. ``nu`` and the covariance coordinates
            (``log_tau``, or ``v_factor`` and ``log_s``), shaped as the posteriors.

    Returns:
        dict of gradients with the same keys and shapes as ``params.arrays``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    a = params.arrays
    h0, u1, h1, u2, h2 = _forward(params, x)
    g = {}
    g_nu = np.atleast_2d(upstream["nu"])
    g["nu_w"] = g_nu.T @ h2
    g["nu_b"] = g_nu.sum(axis=0)
    g_h2 = g_nu @ a["nu_w"]
    if params.variant == "diag":
        g_lt = np.atleast_2d(upstream["log_tau"])
        g["cov_w"] = g_lt.T @ h2
        g["cov_b"] = g_lt.sum(axis=0)
        g_h2 = g_h2 + g_lt @ a["cov_w"]
    else:
        g_v = np.asarray(upstream["v_factor"]).reshape(x.shape[0], -1)
        g_ls = np.atleast_2d(upstream["log_s"])
        g["v_w"] = g_v.T @ h2
        g["v_b"] = g_v.sum(axis=0)
        g["ls_w"] = g_ls.T @ h2
        g["ls_b"] = g_ls.sum(axis=0)
        g_h2 = g_h2 + g_v @ a["v_w"] + g_ls @ a["ls_w"]
    # h2 = h1 + tanh(pre2)
    g_pre2 = g_h2 * (1.0 - u2 * u2)
    g["res2_w"] = g_pre2.T @ h1
    g["res2_b"] = g_pre2.sum(axis=0)
    g_h1 = g_h2 + g_pre2 @ a["res2_w"]
    g_pre1 = g_h1 * (1.0 - u1 * u1)
    g["res1_w"] = g_pre1.T @ h0
    g["res1_b"] = g_pre1.sum(axis=0)
    g_h0 = g_h1 + g_pre1 @ a["res1_w"]
    g_pre0 = g_h0 * (1.0 - h0 * h0)
    g["proj_w"] = g_pre0.T @ x
    g["proj_b"] = g_pre0.sum(axis=0)
    return g
