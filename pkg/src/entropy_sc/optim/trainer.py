"""Training loops: EM-like updates with stored posteriors, and amortized Adam.

EM-like (non-amortized) training keeps one posterior per datapoint. For every
minibatch it runs L-BFGS on that batch's posterior coordinates with the
dictionary fixed (E-step), then takes one gradient ascent step on the
dictionary preimage (M-step). Within a batch the optimal scales and variance
are computed from the batch alone.

After every epoch the full dataset is evaluated without annealing: the
posteriors are refined by a joint L-BFGS run with the dictionary fixed and the
breakdown, Gini statistics and the annealing weights of that epoch go into a
trace row.
"""

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .. import amortized as amz
from ..metrics import gini_report
from ..model import PosteriorSet, make_rng, normalize_columns, pack_params, unpack_params
from ..objectives import UNANNEALED, entropy_elbo_gradients, entropy_elbo_w
from .adam import AdamState, adam_step
from .lbfgs import LbfgsState, lbfgs_minimize
from .schedule import AnnealingSchedule

log = logging.getLogger(__name__)

TRACE_FIELDS = ("epoch", "total_elbo", "q_entropy_avg", "prior_entropy", "likelihood_entropy",
                "sigma2_opt", "gini_mean", "gini_sd", "gamma", "delta", "wallclock_seconds")
TRACE_HEADER = ",".join(TRACE_FIELDS)
CHECKPOINT_FORMAT = "entropy_sc.checkpoint"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    posterior_variant: str = "diag"
    rank: int = 5
    n_latents: int = 10
    batch_size: int = 512
    epochs: int = 10
    e_step_iters: int = 50
    e_step_tolerance: float = 1e-9
    f_tolerance: float = 1e-13
    posterior_init: str = "zero"  # "zero" (nu = 0) or "projection" (nu = W^T x)
    warm_start: bool = True  # False: every E-step restarts from the initialization
    eval_iters: int = 100
    lbfgs_memory: int = 10
    dictionary_optimizer: str = "sgd"  # "sgd", "adam" or "joint"
    dictionary_lr: float = 0.05
    encoder_lr: float = 1e-3
    amortized: bool = False
    hidden: Optional[int] = None
    seed: int = 0
    schedule: AnnealingSchedule = field(default_factory=AnnealingSchedule)

    def validate(self, n_data=None):
        errors = []
        if self.posterior_variant not in ("full", "diag", "lowrank"):
            errors.append(f"posterior_variant must be full, diag or lowrank (got {self.posterior_variant!r})")
        if self.amortized and self.posterior_variant == "full":
            errors.append("amortized training supports diag or lowrank posteriors only")
        if self.rank < 1:
            errors.append("rank must be >= 1")
        if self.n_latents < 1:
            errors.append("n_latents must be >= 1")
        if self.batch_size < 1:
            errors.append("batch_size must be >= 1")
        elif n_data is not None and self.batch_size > n_data:
            errors.append(f"batch_size {self.batch_size} exceeds dataset size {n_data}")
        if self.epochs < 0:
            errors.append("epochs must be >= 0")
        if self.e_step_iters < 1 or self.eval_iters < 0:
            errors.append("e_step_iters must be >= 1 and eval_iters >= 0")
        if self.posterior_init not in ("zero", "projection"):
            errors.append(f"posterior_init must be zero or projection (got {self.posterior_init!r})")
        if self.lbfgs_memory < 1:
            errors.append("lbfgs_memory must be >= 1")
        if self.dictionary_optimizer not in ("sgd", "adam", "joint"):
            errors.append(f"dictionary_optimizer must be sgd, adam or joint (got {self.dictionary_optimizer!r})")
        if self.dictionary_lr < 0 or self.encoder_lr < 0:
            errors.append("learning rates must be >= 0")
        return errors

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["schedule"] = {"mode": self.schedule.mode, "constant": self.schedule.constant}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        sched = d.pop("schedule", None)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        if isinstance(sched, dict):
            d["schedule"] = AnnealingSchedule(**sched)
        return cls(**d)


@dataclass
class TraceRow:
    epoch: int
    total_elbo: float
    q_entropy_avg: float
    prior_entropy: float
    likelihood_entropy: float
    sigma2_opt: float
    gini_mean: float
    gini_sd: float
    gamma: float
    delta: float
    wallclock_seconds: float

    def values(self):
        return [getattr(self, k) for k in TRACE_FIELDS]


@dataclass
class TrainResult:
    config: TrainConfig
    preimage: np.ndarray
    trace: list
    breakdown: object
    posteriors: Optional[PosteriorSet] = None
    encoder: Optional[amz.EncoderParams] = None
    diagnostics: list = field(default_factory=list)

    @property
    def w_tilde(self):
        return normalize_columns(self.preimage)

    @property
    def final_elbo(self):
        return self.trace[-1].total_elbo


# ---------------------------------------------------------------------------
# posterior optimization
# ---------------------------------------------------------------------------


def optimize_posteriors(posteriors, w_tilde, x, weights=UNANNEALED, max_iters=50, m=10, tolerance=1e-9,
                        f_tolerance=1e-13):
    """Joint L-BFGS ascent of the entropy ELBO over all given posteriors.

    Returns:
        (PosteriorSet, LbfgsInfo)
    """
    variant, n, h, rank = posteriors.variant, posteriors.n, posteriors.h, posteriors.rank
    names = posteriors.param_names()

    def neg(flat):
        post = PosteriorSet.from_unconstrained(variant, unpack_params(variant, flat, n, h, rank))
        with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
            # trial points with underflowing widths come back non-finite; the line search rejects them
            g = entropy_elbo_gradients(post, w_tilde, x, weights, with_w=False)
        return -g.breakdown.total, -pack_params(variant, {k: g.posterior[k] for k in names})

    flat, _, info = lbfgs_minimize(neg, posteriors.pack(), max_iters=max_iters, m=m, tolerance=tolerance,
                                   f_tolerance=f_tolerance)
    return posteriors.unpack(flat), info


def optimize_jointly(posteriors, preimage, x, weights=UNANNEALED, max_iters=50, m=10, tolerance=1e-9,
                     f_tolerance=1e-13, state=None):
    """L-BFGS on posteriors and dictionary preimage together.

    The preimage is returned as optimized, without renormalizing its columns:
    rescaling would invalidate curvature pairs kept in ``state``.

    Returns:
        (PosteriorSet, preimage, LbfgsInfo)
    """
    variant, n, h, rank = posteriors.variant, posteriors.n, posteriors.h, posteriors.rank
    names = posteriors.param_names()
    k = posteriors.pack().size
    shape = preimage.shape

    def neg(flat):
        post = PosteriorSet.from_unconstrained(variant, unpack_params(variant, flat[:k], n, h, rank))
        with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
            g = entropy_elbo_gradients(post, flat[k:].reshape(shape), x, weights)
        grad = np.concatenate([pack_params(variant, {q: g.posterior[q] for q in names}), g.preimage.ravel()])
        return -g.breakdown.total, -grad

    start = np.concatenate([posteriors.pack(), np.asarray(preimage, dtype=np.float64).ravel()])
    flat, _, info = lbfgs_minimize(neg, start, max_iters=max_iters, m=m, tolerance=tolerance,
                                   f_tolerance=f_tolerance, state=state)
    return posteriors.unpack(flat[:k]), flat[k:].reshape(shape).copy(), info


def _initial_posteriors(config, n, rng):
    post = PosteriorSet.initial(config.posterior_variant, n, config.n_latents, config.rank)
    if post.variant == "lowrank":
        # V = 0 is stationary for the objective; a small perturbation lets it move
        v = 1e-2 * rng.standard_normal(post.v_factor.shape)
        post = PosteriorSet("lowrank", post.nu, v_factor=v, log_s=post.log_s)
    return post


def _restart(config, part, xb, preimage, epoch, start):
    fresh = _initial_posteriors(config, part.n, make_rng(config.seed, 4, epoch, start))
    if config.posterior_init == "projection":
        fresh = dataclasses.replace(fresh, nu=xb @ normalize_columns(preimage))
    return fresh


def initial_preimage(d, h, seed):
    """i.i.d. N(0, 1) entries, columns normalized."""
    return normalize_columns(make_rng(seed, 1).standard_normal((d, h)))


def _row(epoch, bd, post, weights, t0):
    gr = gini_report(post)
    return TraceRow(epoch, bd.total, bd.q_entropy_avg, bd.prior_entropy, bd.likelihood_entropy,
                    bd.sigma2_opt, gr.mean, gr.sd, weights.gamma, weights.delta, time.perf_counter() - t0)


def _check_finite(value, where):
    if not np.isfinite(value):
        raise TrainingError(f"objective became non-finite during {where}")


class _DictionaryStep:
    """Ascent step on the preimage, followed by renormalizing its columns."""

    def __init__(self, config, shape):
        self.kind = config.dictionary_optimizer
        self.lr = config.dictionary_lr
        self.state = AdamState.zeros(int(np.prod(shape)), learning_rate=self.lr) if self.kind == "adam" else None

    def __call__(self, preimage, grad):
        if self.kind == "adam":
            self.state, flat = adam_step(self.state, preimage.ravel(), grad.ravel())
            new = flat.reshape(preimage.shape)
        else:
            new = preimage + self.lr * grad
        return normalize_columns(new)


def em_train(data, config, init=None, on_epoch: Optional[Callable] = None):
    """EM-like training with stored per-datapoint posteriors.

    With ``config.dictionary_optimizer == "joint"`` the alternation is replaced
    by one L-BFGS run per batch over posteriors and preimage together.

    Args:
        data: Dataset (or N x D array).
        config: TrainConfig.
        init: optional initial preimage (D x H) or an object with ``w_tilde``.
        on_epoch: optional callback ``on_epoch(epoch, w_tilde, row)``.

    Returns:
        TrainResult with a trace row for epoch 0 (initialization) and every epoch.
    """
    x = np.asarray(getattr(data, "x", data), dtype=np.float64)
    n, d = x.shape
    errors = config.validate(n)
    if errors:
        raise ValueError("; ".join(errors))
    if init is None:
        preimage = initial_preimage(d, config.n_latents, config.seed)
    else:
        preimage = normalize_columns(getattr(init, "w_tilde", init))
        if preimage.shape != (d, config.n_latents):
            raise ValueError(f"initial dictionary has shape {preimage.shape}, expected {(d, config.n_latents)}")
    post = _initial_posteriors(config, n, make_rng(config.seed, 3))
    if config.posterior_init == "projection":
        post = dataclasses.replace(post, nu=x @ preimage)
    t0 = time.perf_counter()
    diagnostics = []
    bd = entropy_elbo_w(post, normalize_columns(preimage), x)
    trace = [_row(0, bd, post, UNANNEALED, t0)]
    if on_epoch is not None:
        on_epoch(0, preimage, trace[-1])
    step = _DictionaryStep(config, preimage.shape)
    # a full-batch joint run sees the same objective every epoch (up to the
    # annealing weights), so its curvature history is carried over
    joint_state = LbfgsState(capacity=config.lbfgs_memory) if config.batch_size >= n else None
    for epoch in range(1, config.epochs + 1):
        weights = config.schedule.weights(epoch)
        order = make_rng(config.seed, 2, epoch).permutation(n)
        for start in range(0, n, config.batch_size):
            idx = np.sort(order[start:start + config.batch_size])
            xb = x[idx]
            if not config.warm_start:
                post = post.replace_subset(idx, _restart(config, post.subset(idx), xb, preimage, epoch, start))
            if config.dictionary_optimizer == "joint":
                part, preimage, info = optimize_jointly(post.subset(idx), preimage, xb, weights, config.e_step_iters,
                                                        config.lbfgs_memory, config.e_step_tolerance,
                                                        config.f_tolerance, joint_state)
                if info.line_search_failed:
                    diagnostics.append(f"epoch {epoch}: joint line search failed at batch offset {start}")
                post = post.replace_subset(idx, part)
                continue
            part, info = optimize_posteriors(post.subset(idx), preimage, xb, weights, config.e_step_iters,
                                             config.lbfgs_memory, config.e_step_tolerance, config.f_tolerance)
            if info.line_search_failed:
                diagnostics.append(f"epoch {epoch}: E-step line search failed at batch offset {start}")
            post = post.replace_subset(idx, part)
            g = entropy_elbo_gradients(part, preimage, xb, weights)
            _check_finite(g.breakdown.total, f"epoch {epoch} M-step")
            preimage = step(preimage, g.preimage)
        if config.eval_iters > 0:
            post, info = optimize_posteriors(post, preimage, x, UNANNEALED, config.eval_iters,
                                             config.lbfgs_memory, config.e_step_tolerance, config.f_tolerance)
        bd = entropy_elbo_w(post, normalize_columns(preimage), x)
        _check_finite(bd.total, f"epoch {epoch} evaluation")
        trace.append(_row(epoch, bd, post, weights, t0))
        log.info("epoch %d  elbo %.4f  sigma2 %.4g  gamma %.3g delta %.3g", epoch, bd.total, bd.sigma2_opt,
                 weights.gamma, weights.delta)
        if on_epoch is not None:
            on_epoch(epoch, normalize_columns(preimage), trace[-1])
    return TrainResult(config, preimage, trace, bd, posteriors=post, diagnostics=diagnostics)


def amortized_objective_gradients(encoder, preimage, x, weights=UNANNEALED):
    """Entropy ELBO of encoder posteriors and its gradients (encoder, preimage)."""
    post = amz.encode(encoder, x)
    g = entropy_elbo_gradients(post, preimage, x, weights)
    return g.breakdown, amz.encode_backward(encoder, x, g.posterior), g.preimage


def amortized_train(data, config, encoder=None, init=None, on_epoch: Optional[Callable] = None):
    """Joint Adam ascent on encoder weights and dictionary preimage.

    Both parameter groups use Adam with ``config.encoder_lr``. The trace
    records the full-dataset ELBO of the encoder's posteriors (no refinement),
    so it includes the amortization gap.
    """
    x = np.asarray(getattr(data, "x", data), dtype=np.float64)
    n, d = x.shape
    config = dataclasses.replace(config, amortized=True)
    errors = config.validate(n)
    if errors:
        raise ValueError("; ".join(errors))
    if encoder is None:
        encoder = amz.init_encoder(d, config.n_latents, config.posterior_variant, config.hidden,
                                   config.rank, config.seed)
    if encoder.variant != config.posterior_variant:
        raise ValueError(f"encoder variant {encoder.variant!r} does not match {config.posterior_variant!r}")
    preimage = initial_preimage(d, config.n_latents, config.seed) if init is None \
        else normalize_columns(getattr(init, "w_tilde", init))
    t0 = time.perf_counter()
    post = amz.encode(encoder, x)
    bd = entropy_elbo_w(post, normalize_columns(preimage), x)
    trace = [_row(0, bd, post, UNANNEALED, t0)]
    if on_epoch is not None:
        on_epoch(0, preimage, trace[-1])
    flat_enc = encoder.flatten()
    enc_state = AdamState.zeros(flat_enc.size, learning_rate=config.encoder_lr)
    dict_state = AdamState.zeros(preimage.size, learning_rate=config.encoder_lr)
    for epoch in range(1, config.epochs + 1):
        weights = config.schedule.weights(epoch)
        order = make_rng(config.seed, 2, epoch).permutation(n)
        for start in range(0, n, config.batch_size):
            idx = np.sort(order[start:start + config.batch_size])
            bdb, g_enc, g_v = amortized_objective_gradients(encoder, preimage, x[idx], weights)
            _check_finite(bdb.total, f"epoch {epoch} amortized step")
            enc_state, flat_enc = adam_step(enc_state, flat_enc, encoder.flatten_grads(g_enc))
            encoder = encoder.with_flat(flat_enc)
            dict_state, flat_v = adam_step(dict_state, preimage.ravel(), g_v.ravel())
            preimage = normalize_columns(flat_v.reshape(preimage.shape))
        post = amz.encode(encoder, x)
        bd = entropy_elbo_w(post, normalize_columns(preimage), x)
        _check_finite(bd.total, f"epoch {epoch} evaluation")
        trace.append(_row(epoch, bd, post, weights, t0))
        if on_epoch is not None:
            on_epoch(epoch, normalize_columns(preimage), trace[-1])
    return TrainResult(config, preimage, trace, bd, encoder=encoder)


@dataclass(frozen=True)
class EvalResult:
    breakdown: object
    gini: object
    posteriors: PosteriorSet
    converged: bool


def eval_external_dictionary(w, data, variant="diag", rank=5, max_iters=500, tolerance=1e-9, seed=0,
                             posteriors=None, m=10, f_tolerance=1e-13):
    """Normalize ``w``, optimize only the posteriors, and report the full-dataset breakdown."""
    x = np.asarray(getattr(data, "x", data), dtype=np.float64)
    w_tilde = normalize_columns(w)
    if w_tilde.shape[0] != x.shape[1]:
        raise ValueError(f"dictionary has D={w_tilde.shape[0]} rows but data has D={x.shape[1]}")
    if posteriors is None:
        cfg = TrainConfig(posterior_variant=variant, rank=rank, n_latents=w_tilde.shape[1])
        posteriors = _initial_posteriors(cfg, x.shape[0], make_rng(seed, 3))
    post, info = optimize_posteriors(posteriors, w_tilde, x, UNANNEALED, max_iters, m, tolerance, f_tolerance)
    bd = entropy_elbo_w(post, w_tilde, x)
    return EvalResult(bd, gini_report(post), post, info.converged)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        fh.write(TRACE_HEADER + "\r\n")
        wr = csv.writer(fh)
        for row in trace:
            wr.writerow([repr(float(v)) if isinstance(v, float) else v for v in row.values()])


def read_trace(path):
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != TRACE_FIELDS:
            raise ValueError(f"{path}: unexpected trace header {header}")
        return [TraceRow(int(r[0]), *[float(v) for v in r[1:]]) for r in rd if r]


def checkpoint_dict(result):
    bd = result.breakdown
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": result.config.to_dict(),
        "posterior_variant": result.config.posterior_variant,
        "preimage": result.preimage.tolist(),
        "lambdas": [float(v) for v in bd.lambda_opt],
        "sigma2": float(bd.sigma2_opt),
        "final_elbo": float(result.final_elbo),
    }
    if result.encoder is not None:
        doc[amz.ENCODER_KEY] = result.encoder.to_dict()
    elif result.posteriors is not None:
        doc["posteriors"] = result.posteriors.to_dict()
    return doc


def write_checkpoint(path, result):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_dict(result), fh)


def read_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    doc["preimage"] = np.asarray(doc["preimage"], dtype=np.float64)
    doc["config"] = TrainConfig.from_dict(doc["config"])
    if "posteriors" in doc:
        doc["posteriors"] = PosteriorSet.from_dict(doc["posteriors"])
    if amz.ENCODER_KEY in doc:
        doc[amz.ENCODER_KEY] = amz.EncoderParams.from_dict(doc[amz.ENCODER_KEY])
    return doc
