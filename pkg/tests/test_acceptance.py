"""The ten acceptance criteria, each at its stated tolerance and time budget.

Every test records one PASS/FAIL line (printed at the end of the pytest run by
the hook in conftest.py) before asserting, so a failing criterion still
reports its measured values. Run alone with ``python3 tests/test_acceptance.py``.
"""

import sys
import time

import numpy as np
import pytest
from scipy.special import erf as ref_erf
from scipy.stats import ortho_group

from entropy_sc import objectives as ob
from entropy_sc.amortized import encode, init_encoder
from entropy_sc.cli import main
from entropy_sc.data import BarsSpec, dead_leaves_patches, generate_bars
from entropy_sc.metrics import match_bars
from entropy_sc.model import ModelParams, make_rng, normalize_columns
from entropy_sc.optim import (AdamState, AnnealingSchedule, TrainConfig, adam_step, em_train,
                              eval_external_dictionary, lbfgs_minimize, read_trace)
from entropy_sc.optim.trainer import TRACE_FIELDS, amortized_objective_gradients
from entropy_sc.oracle import finite_diff, quad_abs_moment
from entropy_sc.special import (BURMANN_MAX_ABS_ERROR, SQRT_2_OVER_PI, erf_burmann, m_derivative, m_function,
                                softened_magnitude)
from entropy_sc.verify import gradient_errors, random_instance, run_suite

# bars training: full covariance, posteriors and preimage optimized jointly by L-BFGS on the whole set
BARS_CONFIG = dict(posterior_variant="full", n_latents=10, batch_size=1000, epochs=5, e_step_iters=500,
                   eval_iters=0, dictionary_optimizer="joint")
BARS_DATA_SEED = 100
BARS_TRAIN_SEEDS = range(10)

# desk-scale patches: diagonal posteriors re-initialized at zero for every batch, Adam on the dictionary
PATCH_CONFIG = dict(posterior_variant="diag", n_latents=36, batch_size=512, epochs=10, e_step_iters=20,
                    eval_iters=0, dictionary_optimizer="adam", dictionary_lr=0.01, posterior_init="zero",
                    warm_start=False, seed=0)


def _rel(a, b, floor=1e-6):
    a = np.ravel(a)
    b = np.ravel(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def test_criterion_01_entropy_sum_equality(acceptance_record):
    t0 = time.perf_counter()
    worst = 0.0
    variants = set()
    for s in range(50):
        post, v, x = random_instance(1000 + s)
        variants.add(post.variant)
        w = normalize_columns(v)
        theta = ob.optimal_model_params(post, w, x)
        worst = max(worst, abs(ob.classical_elbo(post, theta, x) - ob.entropy_elbo_w(post, w, x).total))
    secs = time.perf_counter() - t0
    ok = worst < 1e-9 and variants == {"diag", "full", "lowrank"} and secs < 5.0
    acceptance_record(1, "classical ELBO at optimal theta equals entropy sum", ok,
                      f"max gap {worst:.2e} (< 1e-9), variants {sorted(variants)}, {secs:.2f}s (< 5s)")
    assert ok


def test_criterion_02_lambda_opt_quadrature(acceptance_record):
    t0 = time.perf_counter()
    rng = make_rng(2, 1)
    nus = rng.normal(scale=3.0, size=200)
    taus = np.exp(rng.normal(size=200))
    pair_err = max(abs(softened_magnitude(n, t) - quad_abs_moment(n, t, 1e-12)) for n, t in zip(nus, taus))
    lam_err = 0.0
    for s, variant in enumerate(("diag", "full", "lowrank")):
        post, _, _ = random_instance(2000 + s, variant, d=4, h=4, n=12)
        tau = post.tau()
        quad = np.array([[quad_abs_moment(post.nu[i, k], tau[i, k], 1e-12) for k in range(post.h)]
                         for i in range(post.n)]).mean(axis=0)
        lam_err = max(lam_err, float(np.max(np.abs(quad - ob.lambda_opt(post)))))
    secs = time.perf_counter() - t0
    ok = pair_err < 1e-8 and lam_err < 1e-8 and secs < 5.0
    acceptance_record(2, "softened magnitude and lambda_opt vs quadrature", ok,
                      f"pairs {pair_err:.2e}, lambda_opt {lam_err:.2e} (< 1e-8), {secs:.2f}s (< 5s)")
    assert ok


def test_criterion_03_monte_carlo(acceptance_record):
    # each instance passes with probability ~0.997, so all 20 pass ~94% of the time for an arbitrary seed
    report = run_suite("mc", seed=3, trials=20)
    devs = [c["value"] for c in report["checks"]]
    ok = report["passed"] and report["seconds"] < 60.0
    acceptance_record(3, "analytic ELBO within 3 standard errors of Monte Carlo (1e5 samples)", ok,
                      f"{report['n_checks'] - report['n_failed']}/{report['n_checks']} inside, "
                      f"max |dev| {max(devs):.2f} se, {report['seconds']:.1f}s (< 60s)")
    assert ok


def test_criterion_04_gradients(acceptance_record):
    t0 = time.perf_counter()
    errs = {}
    for variant, d, h, n, rank in (("diag", 6, 4, 8, 2), ("full", 5, 3, 6, 2), ("lowrank", 6, 4, 6, 2)):
        post, v, x = random_instance(4000 + len(errs), variant, d, h, n, rank=rank)
        rng = make_rng(4, len(errs))
        weights = ob.AnnealingWeights(float(rng.uniform(0.5, 3.0)), float(rng.uniform(0.5, 2.0)))
        for key, err in gradient_errors(post, v, x, weights).items():
            errs[f"entropy/{variant}/{key}"] = err
        theta = ModelParams(normalize_columns(v), rng.uniform(0.3, 2.0, h), float(rng.uniform(0.3, 2.0)))
        for key, err in gradient_errors(post, v, x, theta=theta).items():
            errs[f"classical/{variant}/{key}"] = err
    enc_err = 0.0
    for variant in ("diag", "lowrank"):
        enc = init_encoder(6, 3, variant, hidden=8, rank=2, seed=4)
        enc = enc.with_flat(enc.flatten() + 0.3 * make_rng(4, 9).normal(size=enc.flatten().size))
        x = make_rng(4, 10).normal(size=(5, 6))
        preimage = make_rng(4, 11).normal(size=(6, 3))
        weights = ob.AnnealingWeights(1.7, 0.8)
        _, g_enc, _ = amortized_objective_gradients(enc, preimage, x, weights)
        fd = finite_diff(lambda f: ob.entropy_elbo(encode(enc.with_flat(f), x), preimage, x, weights).total,
                         enc.flatten())
        enc_err = max(enc_err, _rel(enc.flatten_grads(g_enc), fd))
    secs = time.perf_counter() - t0
    worst_key = max(errs, key=errs.get)
    ok = max(errs.values()) < 1e-5 and enc_err < 1e-4 and secs < 30.0
    acceptance_record(4, "analytic vs finite-difference gradients", ok,
                      f"objectives max rel {errs[worst_key]:.2e} ({worst_key}, < 1e-5), "
                      f"encoder {enc_err:.2e} (< 1e-4), {secs:.1f}s (< 30s)")
    assert ok


def test_criterion_05_gradient_equality_and_ratio(acceptance_record):
    eq = 0.0
    ratio = 0.0
    for s, variant in enumerate(("diag", "full", "lowrank") * 4):
        post, v, x = random_instance(5000 + s, variant)
        w = normalize_columns(v)
        theta = ob.optimal_model_params(post, w, x)
        eg = ob.entropy_elbo_gradients(post, v, x)
        cg = ob.classical_elbo_gradients(post, theta, x)
        for k in eg.posterior:
            eq = max(eq, float(np.max(np.abs(eg.posterior[k] - cg.posterior[k]))))
        eq = max(eq, float(np.max(np.abs(eg.w_tilde - cg.w_tilde))))
        for c in (0.5, 2.0, 10.0):
            g = ob.classical_elbo_gradients(post, ModelParams(w, theta.lambdas, c * theta.sigma2), x).w_tilde
            mask = np.abs(g) > 1e-12
            ratio = max(ratio, float(np.max(np.abs(eg.w_tilde[mask] / g[mask] - c))))
    ok = eq < 1e-9 and ratio < 1e-9
    acceptance_record(5, "gradient equality at optimal theta and sigma2 ratio law", ok,
                      f"max abs gradient difference {eq:.2e}, max ratio error {ratio:.2e} (< 1e-9)")
    assert ok


@pytest.mark.slow
def test_criterion_06_bars_recovery(acceptance_record):
    t0 = time.perf_counter()
    data, w_true = generate_bars(BarsSpec(seed=BARS_DATA_SEED))
    reference = eval_external_dictionary(w_true, data, variant="full", max_iters=1000).breakdown.total
    recovered = 0
    gaps = []
    for seed in BARS_TRAIN_SEEDS:
        result = em_train(data, TrainConfig(seed=seed, **BARS_CONFIG))
        recovered += match_bars(result.w_tilde, w_true).recovered
        gaps.append(abs(result.trace[-1].total_elbo - reference))
    secs = time.perf_counter() - t0
    ok = recovered >= 5 and max(gaps) <= 2.0 and secs < 600.0
    acceptance_record(6, "bars recovery", ok,
                      f"{recovered}/10 seeds recover all bars (>= 5), max |ELBO - ground truth| "
                      f"{max(gaps):.3f} nats (<= 2, reference {reference:.3f}), {secs:.0f}s (< 600s)")
    assert ok


@pytest.mark.slow
def test_criterion_07_prior_annealing(acceptance_record):
    t0 = time.perf_counter()
    data = dead_leaves_patches(20000, 8, seed=0)
    runs = {mode: em_train(data, TrainConfig(schedule=AnnealingSchedule(mode), **PATCH_CONFIG))
            for mode in ("none", "prior")}
    secs = time.perf_counter() - t0
    none, prior = runs["none"].trace, runs["prior"].trace
    annealing = [r.epoch for r in prior if r.epoch >= 1 and r.gamma > 1.0]
    gini_pairs = [(prior[e].gini_mean, none[e].gini_mean) for e in annealing]
    elbo_ok = prior[-1].total_elbo >= none[-1].total_elbo
    gini_ok = all(p > n for p, n in gini_pairs)
    ok = elbo_ok and gini_ok and secs < 1200.0
    acceptance_record(7, "prior annealing on 8x8 patches", ok,
                      f"final ELBO prior {prior[-1].total_elbo:.3f} vs none {none[-1].total_elbo:.3f}; "
                      "Gini in annealing epochs prior/none "
                      + ", ".join(f"{p:.3f}/{n:.3f}" for p, n in gini_pairs) + f"; {secs:.0f}s (< 1200s)")
    assert ok


def test_criterion_08_special_functions(acceptance_record):
    m0 = abs(m_function(0.0) - SQRT_2_OVER_PI)
    grid = np.linspace(-40.0, 40.0, 400001)
    gap = m_function(grid) - np.abs(grid)
    # beyond |a| ~ 7.75 the excess is below half an ulp of |a|, so only >= is representable there
    inner = np.abs(grid) <= 7.5
    strict = float(np.min(gap[inner]))
    a = np.linspace(-10.0, 10.0, 4001)
    h = 1e-5
    d_err = float(np.max(np.abs((m_function(a + h) - m_function(a - h)) / (2 * h) - m_derivative(a))))
    xs = np.linspace(-6.0, 6.0, 120001)
    b_err = float(np.max(np.abs(erf_burmann(xs) - ref_erf(xs))))
    ok = m0 < 1e-12 and strict > 0 and gap.min() >= 0 and d_err < 1e-7 and b_err <= BURMANN_MAX_ABS_ERROR
    acceptance_record(8, "special functions", ok,
                      f"|M(0) - sqrt(2/pi)| {m0:.1e}, min M(a)-|a| on |a|<=7.5 {strict:.2e}, "
                      f"M' error {d_err:.1e} (< 1e-7), Burmann error {b_err:.6f} (<= {BURMANN_MAX_ABS_ERROR})")
    assert ok


def test_criterion_09_optimizers(acceptance_record):
    q = ortho_group.rvs(10, random_state=0)
    a = q @ np.diag(np.linspace(1.0, 10.0, 10)) @ q.T
    b = np.random.default_rng(0).normal(size=10)
    _, _, quad = lbfgs_minimize(lambda x: (0.5 * x @ a @ x - b @ x, a @ x - b), np.zeros(10),
                                max_iters=30, tolerance=1e-8)

    def rosenbrock(x):
        f = (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
        g = np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])
        return f, g

    _, f_rosen, _ = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]), max_iters=500, tolerance=1e-10)

    def adam_path():
        rng = make_rng(9)
        state = AdamState.zeros(5, 0.05)
        p = rng.normal(size=5)
        out = []
        for _ in range(100):
            state, p = adam_step(state, p, -2 * p + rng.normal(size=5))
            out.append(p)
        return np.array(out)

    same = np.array_equal(adam_path(), adam_path())
    ok = quad.grad_norm < 1e-8 and quad.iterations <= 30 and f_rosen < 1e-8 and same
    acceptance_record(9, "optimizer sanity", ok,
                      f"quadratic |g| {quad.grad_norm:.1e} in {quad.iterations} iterations (<= 30), "
                      f"Rosenbrock f {f_rosen:.1e} (< 1e-8), Adam repeat identical {same}")
    assert ok


def test_criterion_10_reproducibility(acceptance_record, tmp_path):
    files = ("bars.scd", "ground_truth.json", "ground_truth_fields.pgm", "samples.pgm")
    traces = []
    bytes_equal = True
    codes = []
    for run in ("a", "b"):
        out = tmp_path / run
        codes.append(main(["--threads", "1", "generate-bars", "--n", "300", "--seed", "5", "--out", str(out)]))
        codes.append(main(["--threads", "1", "train", "--data", str(out / "bars.scd"), "--out", str(out / "run"),
                           "--epochs", "3", "--posterior", "full", "--anneal", "prior", "--seed", "2"]))
        traces.append(read_trace(out / "run" / "trace.csv"))
    for name in files:
        bytes_equal &= (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    fields = [f for f in TRACE_FIELDS if f != "wallclock_seconds"]
    diff = max(abs(getattr(r1, f) - getattr(r2, f)) for r1, r2 in zip(*traces) for f in fields)
    ok = all(c == 0 for c in codes) and bytes_equal and len(traces[0]) == len(traces[1]) and diff <= 1e-12
    acceptance_record(10, "reproducibility across two CLI runs", ok,
                      f"dataset files byte-identical {bytes_equal}, max trace difference {diff:.1e} (<= 1e-12)")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
