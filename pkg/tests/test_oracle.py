import math

import numpy as np
import pytest

from entropy_sc import objectives as ob
from entropy_sc.model import ModelParams, PosteriorSet, make_rng, normalize_columns
from entropy_sc.oracle import McEstimate, QuadratureError, finite_diff, mc_elbo, quad_abs_moment
from entropy_sc.special import softened_magnitude
from entropy_sc.verify import random_instance


def test_quadrature_half_normal():
    assert quad_abs_moment(0.0, 1.0) == pytest.approx(math.sqrt(2 / math.pi), abs=1e-12)


def test_quadrature_matches_closed_form():
    rng = make_rng(0)
    for _ in range(100):
        nu = rng.normal(scale=3)
        tau = math.exp(rng.normal())
        tol = 1e-11
        assert abs(quad_abs_moment(nu, tau, tol) - softened_magnitude(nu, tau)) < max(tol, 1e-10)


def test_quadrature_errors():
    with pytest.raises(ValueError):
        quad_abs_moment(0.0, 0.0)
    with pytest.raises(QuadratureError):
        quad_abs_moment(0.3, 1.0, tolerance=1e-300, max_depth=3)


def test_finite_diff_examples():
    x = np.array([0.5, -2.0, 3.0])
    np.testing.assert_allclose(finite_diff(lambda v: float(v @ v), x), 2 * x, atol=1e-8)
    c = np.array([1.5, -0.25, 4.0])
    np.testing.assert_allclose(finite_diff(lambda v: float(c @ v) + 7.0, x), c, rtol=1e-9)


def test_mc_elbo_determinism_and_band():
    post, v, x = random_instance(5, "lowrank", n=4)
    theta = ob.optimal_model_params(post, normalize_columns(v), x)
    a = mc_elbo(post, theta, x, 20_000, seed=1)
    b = mc_elbo(post, theta, x, 20_000, seed=1)
    assert a == b
    assert a.contains(ob.entropy_elbo(post, v, x).total)
    with pytest.raises(ValueError):
        mc_elbo(post, theta, x, 10, seed=1)


def test_mc_small_samples_band_widens():
    post, v, x = random_instance(6, "diag", n=3)
    theta = ob.optimal_model_params(post, normalize_columns(v), x)
    small = mc_elbo(post, theta, x, 200, seed=2)
    large = mc_elbo(post, theta, x, 50_000, seed=2)
    assert small.std_error > large.std_error
    analytic = ob.entropy_elbo(post, v, x).total
    assert small.contains(analytic) and large.contains(analytic)


def test_mc_near_delta_posterior():
    # T -> 0: every sample sits at nu, so the estimate equals the closed-form
    # log joint at nu plus the (large) Gaussian entropy
    rng = make_rng(7)
    h, d = 3, 4
    w = normalize_columns(rng.normal(size=(d, h)))
    nu = rng.normal(size=(1, h))
    x = rng.normal(size=(1, d))
    theta = ModelParams(w, np.array([0.7, 1.0, 1.3]), 0.5)
    post = PosteriorSet("diag", nu, log_tau=np.full((1, h), -9.0))
    est = mc_elbo(post, theta, x, 5000, seed=3)
    r = x[0] - w @ nu[0]
    log_joint = (-0.5 * d * math.log(2 * math.pi * 0.5) - r @ r / 1.0
                 - np.sum(np.log(2 * theta.lambdas)) - np.sum(np.abs(nu[0]) / theta.lambdas))
    entropy = 0.5 * h * math.log(2 * math.pi * math.e) - 9.0 * h
    assert est.contains(log_joint + entropy)


def test_mc_estimate_contains():
    e = McEstimate(1.0, 0.1, 100)
    assert e.contains(1.3) and not e.contains(1.31)
    assert e.contains(1.05, n_sigma=1) and not e.contains(1.2, n_sigma=1)
