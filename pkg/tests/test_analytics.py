"""Closed-form targets and statistical machinery."""

import numpy as np
import pytest

from wasep.analytics import (
    EnsembleAccumulator,
    LimitSpec,
    bg_second_moment,
    fbm_covariance,
    fit_power_law,
    heat_semigroup,
    ou_covariance,
    qv_prediction,
)
from wasep.engine import SimParams
from wasep.lattice import ssep
from wasep.observables import TestFunction, gaussian_bump


def _ssep_spec(rho=0.5, a=1.0):
    p = SimParams(ssep(), n=64, gamma=1.0, a=a, rho=rho, M=4)
    return LimitSpec.from_thermo(p.thermo(), a)


def test_limit_spec_ssep_coefficients():
    p = SimParams(ssep(), n=64, gamma=1.0, a=1.0, rho=0.3, M=4)
    spec = LimitSpec.from_thermo(p.thermo(), 1.0)
    assert spec.diffusivity == pytest.approx(1.0, abs=1e-12)
    assert spec.noise_strength == pytest.approx(0.21, abs=1e-12)
    assert spec.drift == pytest.approx(0.4, abs=1e-12)
    assert spec.kpz_coefficient == pytest.approx(-1.0, abs=1e-12)
    assert spec.chi == pytest.approx(0.21, abs=1e-12)


# ------------------------------------------------------------ heat semigroup

def test_heat_semigroup_identity_at_zero():
    H = gaussian_bump(0.3)
    assert heat_semigroup(H, 0.0, 1.0) is H
    with pytest.raises(ValueError):
        heat_semigroup(H, -0.1, 1.0)


def test_heat_semigroup_gaussian_closed_form():
    sigma, D, tau = 0.3, 1.0, 0.5
    H = gaussian_bump(sigma, cutoff=12.0)
    TH = heat_semigroup(H, tau, D)
    s2 = sigma ** 2 + D * tau
    x = np.linspace(-2.5, 2.5, 41)
    expected = np.exp(-0.5 * x * x / s2) / np.sqrt(2 * np.pi * s2)
    assert np.allclose(TH(x), expected, atol=1e-8)


def test_heat_semigroup_conserves_mass():
    H = gaussian_bump(0.3, cutoff=10.0)
    TH = heat_semigroup(H, 0.7, 1.0)
    x = np.linspace(-TH.support_radius, TH.support_radius, 40001)
    assert np.trapezoid(TH(x), x) == pytest.approx(1.0, abs=1e-8)


def test_heat_semigroup_composition_law():
    H = gaussian_bump(0.3, cutoff=10.0)
    one = heat_semigroup(H, 0.6, 1.0)
    two = heat_semigroup(heat_semigroup(H, 0.2, 1.0), 0.4, 1.0)
    x = np.linspace(-2.0, 2.0, 31)
    assert np.allclose(one(x), two(x), atol=1e-6)


# -------------------------------------------------------------- OU covariance

def test_ou_covariance_equal_times_is_l2_norm():
    spec = _ssep_spec(rho=0.5)
    H = gaussian_bump(0.3, cutoff=10.0)
    val = ou_covariance(H, H, 1.0, 1.0, spec)
    # chi * ||H||_2^2 = 0.25 / (2 sigma sqrt(pi))
    target = 0.25 / (2 * 0.3 * np.sqrt(np.pi))
    assert val == pytest.approx(target, abs=1e-8)


def test_ou_covariance_gaussian_pair_closed_form():
    # standard Gaussian pair, D=1, chi=0.25, t-s=1:
    # chi * N(0, sigma1^2 + sigma2^2 + D tau)(0) = 0.25 / sqrt(6 pi)
    spec = _ssep_spec(rho=0.5)
    H = gaussian_bump(1.0, cutoff=8.0)
    val = ou_covariance(H, H, 1.0, 0.0, spec)
    assert val == pytest.approx(0.25 / np.sqrt(6 * np.pi), abs=1e-6)


def test_ou_covariance_symmetry_and_swap():
    spec = _ssep_spec(rho=0.3)
    H = gaussian_bump(0.3, -0.2, cutoff=8.0)
    G = gaussian_bump(0.25, 0.4, cutoff=8.0)
    assert ou_covariance(H, G, 1.0, 0.5, spec) == pytest.approx(
        ou_covariance(G, H, 0.5, 1.0, spec), rel=1e-9)


def test_ou_covariance_disjoint_supports_vanish():
    spec = _ssep_spec(rho=0.5)
    H = gaussian_bump(0.05, 0.0, cutoff=6.0)
    G = gaussian_bump(0.05, 3.0, cutoff=6.0)
    assert abs(ou_covariance(H, G, 0.01, 0.0, spec)) < 1e-8


# ------------------------------------------------------------- fBm covariance

def test_fbm_covariance_basics():
    spec = _ssep_spec(rho=0.5)
    assert fbm_covariance(1.0, 0.0, spec) == 0.0
    # equal times: chi * sqrt(D / 2 pi) * 2 sqrt(t)
    assert fbm_covariance(1.0, 1.0, spec) == pytest.approx(
        0.5 / np.sqrt(2 * np.pi), abs=1e-12)
    # swap convention
    assert fbm_covariance(0.5, 1.0, spec) == fbm_covariance(1.0, 0.5, spec)
    with pytest.raises(ValueError):
        fbm_covariance(1.0, -0.5, spec)


def test_fbm_covariance_sqrt_homogeneity():
    spec = _ssep_spec(rho=0.5)
    for t, s in ((1.0, 0.25), (2.0, 1.0), (0.7, 0.7)):
        assert fbm_covariance(4 * t, 4 * s, spec) == pytest.approx(
            2 * fbm_covariance(t, s, spec), rel=1e-12)


def test_fbm_covariance_positive_semidefinite():
    spec = _ssep_spec(rho=0.5)
    grid = [0.1, 0.25, 0.5, 1.0, 2.0, 4.0]
    gram = np.array([[fbm_covariance(t, s, spec) for s in grid] for t in grid])
    assert np.min(np.linalg.eigvalsh(gram)) >= -1e-10


def test_fbm_covariance_consistent_with_heat_semigroup():
    """Each pairing chi*(<G,G> - <T_u G,G>) converges to the fBm prefactor.

    For G a narrow Gaussian the finite-width correction is O(sigma/sqrt(u)),
    so a small sigma pins the normalization of fbm_covariance.
    """
    spec = _ssep_spec(rho=0.5)
    u = 1.0
    sigma = 0.01
    G = gaussian_bump(sigma, cutoff=8.0)
    same = ou_covariance(G, G, 0.0, 0.0, spec)
    lagged = ou_covariance(G, G, u, 0.0, spec)
    # chi*(<G,G> - <T_u G, G>) ~ chi * sqrt(D u / 2 pi) * (1/u) ... exact:
    # <G,G> - <T_uG,G> = N(0,2s^2)(0) - N(0,2s^2+u)(0); the second term is
    # ~ 1/sqrt(2 pi u).  Compare increments instead:
    target = spec.chi / np.sqrt(2 * np.pi * u)
    assert lagged == pytest.approx(target, rel=1e-3)
    # and the same-time value matches the variance formula's t->0 pairing
    assert same == pytest.approx(spec.chi / (2 * sigma * np.sqrt(np.pi)),
                                 rel=1e-9)


# -------------------------------------------------------------- QV prediction

def test_qv_prediction_zero_function():
    p = SimParams(ssep(), n=64, gamma=1.0, a=1.0, rho=0.5, M=4)
    zero = TestFunction(lambda u: np.zeros_like(u), 0.5, "smooth", "0")
    assert qv_prediction(zero, 1.0, p, p.thermo()) == 0.0


def test_qv_prediction_correction_factor():
    p1 = SimParams(ssep(), n=64, gamma=1.0, a=1.0, rho=0.5, M=4)
    p0 = SimParams(ssep(), n=64, gamma=1.0, a=0.0, rho=0.5, M=4)
    H = gaussian_bump(0.3, cutoff=6.0)
    th = p1.thermo()
    ratio = qv_prediction(H, 1.0, p1, th) / qv_prediction(H, 1.0, p0, th)
    assert ratio == pytest.approx(1.0 + 1.0 / 64.0, rel=1e-12)


def test_qv_prediction_continuum_value():
    # t * beta * ||H'||_2^2 * (1 + a/n^gamma) up to O(n^-2) discretization
    p = SimParams(ssep(), n=256, gamma=1.0, a=1.0, rho=0.5, M=8)
    H = gaussian_bump(0.3, cutoff=6.0)
    th = p.thermo()
    # ||H'||^2 for a Gaussian density: 1/(4 sqrt(pi) sigma^3)
    target = 0.25 * (1 + 1 / 256) / (4 * np.sqrt(np.pi) * 0.3 ** 3)
    assert qv_prediction(H, 1.0, p, th) == pytest.approx(target, rel=1e-3)


# ----------------------------------------------------------------- accumulator

def test_accumulator_matches_numpy():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(500, 2))
    acc = EnsembleAccumulator(["x", "y"])
    for row in data:
        acc.add(row)
    assert acc.count == 500
    assert np.allclose(acc.mean(), data.mean(axis=0), atol=1e-12)
    assert np.allclose(acc.cov(), np.cov(data.T, ddof=1), atol=1e-12)
    m, se = acc.mean_with_se("x")
    assert se == pytest.approx(data[:, 0].std(ddof=1) / np.sqrt(500), rel=1e-10)


def test_accumulator_merge_invariance():
    rng = np.random.default_rng(1)
    data = rng.normal(size=(300, 3))
    whole = EnsembleAccumulator(["a", "b", "c"])
    for row in data:
        whole.add(row)
    # three shards merged in two different orders
    for order in ((0, 1, 2), (2, 0, 1)):
        shards = []
        for k in range(3):
            s = EnsembleAccumulator(["a", "b", "c"])
            for row in data[100 * k: 100 * (k + 1)]:
                s.add(row)
            shards.append(s)
        merged = EnsembleAccumulator(["a", "b", "c"])
        for k in order:
            merged.merge(shards[k])
        assert merged.count == whole.count
        assert np.allclose(merged.mean(), whole.mean(), rtol=1e-10)
        assert np.allclose(merged.cov(), whole.cov(), rtol=1e-10)


def test_accumulator_variance_with_se():
    rng = np.random.default_rng(2)
    x = rng.normal(loc=0.3, scale=1.2, size=4000)
    acc = EnsembleAccumulator(["x", "x2"])
    for xi in x:
        acc.add([xi, xi * xi])
    var, se = acc.variance_with_se("x", "x2")
    assert var == pytest.approx(x.var(), rel=1e-10)
    # normal theory: se(var) ~ var * sqrt(2/n)
    assert se == pytest.approx(x.var() * np.sqrt(2 / 4000), rel=0.15)


def test_accumulator_errors():
    acc = EnsembleAccumulator(["x"])
    with pytest.raises(ValueError):
        acc.add([1.0, 2.0])
    acc.add([1.0])
    with pytest.raises(ValueError):
        acc.cov()
    other = EnsembleAccumulator(["y"])
    with pytest.raises(ValueError):
        acc.merge(other)


# ------------------------------------------------------------------ power law

def test_fit_power_law_exact_sqrt():
    pts = [(s, 2.0 * np.sqrt(s), 0.1) for s in (1.0, 2.0, 4.0, 8.0)]
    fit = fit_power_law(pts)
    assert fit.exponent == pytest.approx(0.5, abs=1e-12)
    assert fit.prefactor == pytest.approx(2.0, rel=1e-12)


def test_fit_power_law_constant():
    pts = [(s, 3.0, 0.1) for s in (1.0, 2.0, 4.0)]
    fit = fit_power_law(pts)
    assert fit.exponent == pytest.approx(0.0, abs=1e-12)


def test_fit_power_law_errors():
    with pytest.raises(ValueError):
        fit_power_law([(1.0, 1.0, 0.1), (2.0, 2.0, 0.1)])
    with pytest.raises(ValueError):
        fit_power_law([(1.0, 1.0, 0.1), (2.0, -1.0, 0.1), (3.0, 1.0, 0.1)])


def test_fit_power_law_error_model_calibration():
    """The quoted exponent stderr must be honest on synthetic sqrt-law data."""
    rng = np.random.default_rng(3)
    scales = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    noise = 0.02
    hits = 0
    reps = 1000
    for _ in range(reps):
        vals = 2.0 * np.sqrt(scales) * (1.0 + noise * rng.normal(size=5))
        fit = fit_power_law(list(zip(scales, vals,
                                     noise * 2.0 * np.sqrt(scales))))
        if abs(fit.exponent - 0.5) <= 2.0 * fit.exponent_se:
            hits += 1
    assert hits / reps >= 0.90


# ------------------------------------------------------------- bg second moment

def test_bg_second_moment_refuses_moving_frame():
    p = SimParams(ssep(), n=8, gamma=1.0, a=1.0, rho=0.3, M=4)
    with pytest.raises(ValueError):
        bg_second_moment(p, gaussian_bump(0.3, cutoff=6.0), 0.1, 4)


def test_bg_second_moment_zero_at_a0():
    p = SimParams(ssep(), n=8, gamma=1.0, a=0.0, rho=0.5, M=4, seed=6)
    est, se = bg_second_moment(p, gaussian_bump(0.3, cutoff=6.0), 0.1, 4)
    assert est == 0.0
