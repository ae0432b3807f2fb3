"""Fluctuation fields, currents and series bookkeeping against hand values."""

import numpy as np
import pytest

from wasep.engine import SimParams, require_gradient
from wasep.lattice import Configuration, ssep
from wasep.observables import (
    CurrentTally,
    FrameShift,
    ObservableSeries,
    SeriesError,
    SupportError,
    a_term_increment,
    box_indicator,
    conservation_residual,
    density_field,
    gaussian_bump,
    grad_n,
    heaviside_ramp,
    i_term_increment,
    lap_n,
    lattice_values,
    martingale_residual,
    quadratic_field,
    read_series_csv,
    trapezoid_cumulative,
    wrapped_lattice_args,
    write_series_csv,
)


def _params(**kw):
    base = dict(model=ssep(), n=4, gamma=1.0, a=1.0, rho=0.5, M=2, seed=0)
    base.update(kw)
    return SimParams(**base)


# ------------------------------------------------------------ test functions

def test_gaussian_bump_normalized():
    H = gaussian_bump(0.3)
    x = np.linspace(-4, 4, 20001)
    assert np.trapezoid(H(x), x) == pytest.approx(1.0, abs=1e-8)


def test_heaviside_ramp_values():
    G = heaviside_ramp(2.0)
    assert G(np.array([-0.5]))[0] == 0.0
    assert G(np.array([1.0]))[0] == pytest.approx(0.5)
    assert G(np.array([2.5]))[0] == 0.0


def test_box_indicator_half_open():
    I = box_indicator(0.0, 0.5)
    # (x, x+eps]: left end excluded, right end included
    assert I(np.array([0.0]))[0] == 0.0
    assert I(np.array([0.25]))[0] == pytest.approx(2.0)
    assert I(np.array([0.5]))[0] == pytest.approx(2.0)
    assert I(np.array([0.51]))[0] == 0.0


def test_translate_scale_add():
    H = gaussian_bump(0.3)
    shifted = H.translate(0.7)
    assert shifted(np.array([0.7]))[0] == pytest.approx(H(np.array([0.0]))[0])
    doubled = H.scale(2.0)
    assert doubled(np.array([0.1]))[0] == pytest.approx(2 * H(np.array([0.1]))[0])
    both = H.add(shifted)
    assert both(np.array([0.2]))[0] == pytest.approx(
        H(np.array([0.2]))[0] + shifted(np.array([0.2]))[0])


def test_wrapped_lattice_args():
    u = wrapped_lattice_args(4, 8)  # M = 2, sites at 0, .25, ..., 1.75
    assert u[0] == 0.0
    assert u[4] == -1.0  # 1.0 wraps to -M/2
    assert u[7] == pytest.approx(-0.25)
    shifted = wrapped_lattice_args(4, 8, shift=0.25)
    assert shifted[1] == pytest.approx(0.0)


def test_support_check():
    p = _params(M=2)
    with pytest.raises(SupportError):
        lattice_values(gaussian_bump(0.5, cutoff=8.0), p)  # radius 4 > M/2


# ------------------------------------------------------ discrete derivatives

def test_grad_n_lap_n_exact_on_polynomials():
    n = 16
    x = np.arange(4 * n) / n
    lin = 3.0 * x
    g = grad_n(lin, n)
    assert np.allclose(g[:-1], 3.0)  # interior: exact on linear functions
    quad = x * x
    lp = lap_n(quad, n)
    assert np.allclose(lp[1:-1], 2.0)  # interior: exact on quadratics


# ------------------------------------------------------------ density field

def test_density_field_hand_value():
    # n=4, M=2, L=8; H = box over (0, 0.5] picks sites 1 and 2 with weight 2
    p = _params(n=4, rho=0.5)
    H = box_indicator(0.0, 0.5)
    occ = np.zeros(8, dtype=np.int8)
    occ[1] = 1
    conf = Configuration(8, occ)
    # Y = (1/sqrt(4)) * [2*(1-0.5) + 2*(0-0.5)] = 0
    assert density_field(conf, H, 0.0, p) == pytest.approx(0.0)
    occ[2] = 1
    conf = Configuration(8, occ)
    # Y = (1/2) * [2*0.5 + 2*0.5] = 1
    assert density_field(conf, H, 0.0, p) == pytest.approx(1.0)


def test_density_field_linearity():
    p = _params(n=16, M=4, seed=1)
    conf = Configuration(p.L, (np.arange(p.L) % 3 == 0).astype(np.int8))
    H = gaussian_bump(0.25, -0.4, cutoff=5.0)
    G = gaussian_bump(0.2, 0.5, cutoff=5.0)
    combo = H.scale(2.0).add(G.scale(-3.0))
    lhs = density_field(conf, combo, 0.0, p)
    rhs = (2.0 * density_field(conf, H, 0.0, p)
           - 3.0 * density_field(conf, G, 0.0, p))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_frame_consistency_bit_for_bit():
    """Field with a frame shift == field of the pre-shifted test function."""
    p = _params(n=16, M=4)
    th = p.thermo()
    frame = FrameShift.from_params(p, th)
    t = 0.3
    conf = Configuration(p.L, (np.arange(p.L) % 2).astype(np.int8))
    H = gaussian_bump(0.3, cutoff=6.0)
    with_frame = density_field(conf, H, t, p, frame)
    pre_shifted = H.translate(frame.d_mac(t))
    # same wrap rule, same evaluation points -> identical floats
    assert density_field(conf, pre_shifted, t, p) == with_frame


def test_frame_shift_scaling():
    fr = FrameShift(velocity=0.4, n=16, gamma=0.5)
    assert fr.d_lat(2.0) == pytest.approx(16 * fr.d_mac(2.0))
    assert FrameShift.static(_params()).d_mac(5.0) == 0.0


# ------------------------------------------------------ martingale integrands

def test_a_term_vanishes_at_zero_asymmetry():
    p = _params(a=0.0, n=8, M=4)
    th = p.thermo()
    conf = Configuration(p.L, (np.arange(p.L) % 2).astype(np.int8))
    H = gaussian_bump(0.3, cutoff=6.0)
    assert a_term_increment(conf, H, 0.0, p, th) == 0.0


def test_a_term_hand_computation():
    """4-site SSEP check of the summand n^(1-g)/sqrt(n) * sum grad_n H * V_f."""
    p = _params(n=2, gamma=1.0, a=1.0, rho=0.5, M=2)
    th = p.thermo()
    conf = Configuration(4, np.array([1, 0, 1, 0]))
    H = box_indicator(0.0, 0.5)  # weight 2 on site 1 (u=0.5), else 0
    vals = lattice_values(H, p)
    grads = grad_n(vals, p.n)
    # V_f(x) = a*(eta(x+1)-eta(x))^2/2 - a*beta - a*beta'*(eta(x)-rho)
    beta, beta_p = th.beta, th.beta_prime
    vf = np.array([(conf.occ[(x + 1) % 4] - conf.occ[x]) ** 2 / 2.0
                   - beta - beta_p * (conf.occ[x] - 0.5) for x in range(4)])
    expected = p.n ** (1 - p.gamma) / np.sqrt(p.n) * float(grads @ vf)
    assert a_term_increment(conf, H, 0.0, p, th) == pytest.approx(expected,
                                                                  rel=1e-12)


def test_i_term_hand_computation():
    p = _params(n=2, gamma=1.0, a=1.0, rho=0.5, M=2)
    h = require_gradient(p.model)
    th = p.thermo(h)
    conf = Configuration(4, np.array([1, 1, 0, 0]))
    H = box_indicator(0.0, 0.5)
    vals = lattice_values(H, p)
    laps = 0.5 * lap_n(vals, p.n)
    hv = conf.occ.astype(float) - th.phi_h  # SSEP: h = eta(0)
    expected = float(laps @ hv) / np.sqrt(p.n)
    assert i_term_increment(conf, H, 0.0, p, th, h) == pytest.approx(
        expected, rel=1e-12)


def test_i_term_stationary_mean_zero():
    p = _params(n=32, M=2, seed=3)
    h = require_gradient(p.model)
    th = p.thermo(h)
    H = gaussian_bump(0.2, cutoff=4.0)
    rng = np.random.default_rng(10)
    vals = np.array([
        i_term_increment(
            Configuration(p.L, (rng.random(p.L) < p.rho).astype(np.int8)),
            H, 0.0, p, th, h)
        for _ in range(400)])
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean()) <= 3 * se


# ------------------------------------------------------------ quadratic field

def test_quadratic_field_trivial_and_errors():
    p = _params(n=8, rho=0.0, M=2)
    conf = Configuration(p.L, np.zeros(p.L, dtype=np.int8))
    assert quadratic_field(conf, 0.0, 0.5, p) == 0.0
    with pytest.raises(ValueError):
        quadratic_field(conf, 0.0, 0.05, p)  # eps < 1/n


def test_quadratic_field_box_variance():
    # Var(Y(i_eps)) = chi / eps for i.i.d. Bernoulli sites
    p = _params(n=64, rho=0.5, M=2)
    eps = 0.25
    rng = np.random.default_rng(4)
    vals = np.array([
        quadratic_field(
            Configuration(p.L, (rng.random(p.L) < p.rho).astype(np.int8)),
            0.0, eps, p)
        for _ in range(2000)])
    target = 0.25 / eps
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean() - target) <= 3 * se


# ---------------------------------------------------------------- currents

class _StubState:
    """Minimal engine-state stand-in for deterministic current checks."""

    def __init__(self, params, occ, counters, t):
        self.params = params
        self.config = Configuration(params.L, occ)
        self.counters = np.asarray(counters, dtype=np.int64)
        self._t = t

    @property
    def t(self):
        return self._t


def test_moving_current_equals_fixed_without_frame():
    p = _params(n=4, a=0.0)
    st = _StubState(p, (np.arange(8) % 2).astype(np.int8), np.arange(8), 0.0)
    tally = CurrentTally(st, [0, 5], FrameShift.static(p))
    assert tally.current_moving(0, 0.0) == tally.current_fixed(0, 0.0)
    assert tally.current_moving(5, 0.0) == tally.current_fixed(5, 0.0)


def test_moving_current_full_lattice_pure_frame_correction():
    # fully occupied frozen lattice, frame advanced k sites -> -k
    p = _params(n=4, M=2)
    occ = np.ones(8, dtype=np.int8)
    st = _StubState(p, occ, np.zeros(8), 0.0)
    frame = FrameShift(velocity=1.0, n=4, gamma=1.0)  # d_lat(t) = 4t
    tally = CurrentTally(st, [2], frame)
    st._t = 0.75  # frame advanced floor(3) = 3 sites
    tally.snapshot()
    assert tally.current_fixed(2, 0.75) == 0
    assert tally.current_moving(2, 0.75) == -3


def test_moving_current_single_frozen_particle():
    # empty lattice except one particle; the frame passes it once -> -1
    p = _params(n=4, M=2)
    occ = np.zeros(8, dtype=np.int8)
    occ[4] = 1
    st = _StubState(p, occ, np.zeros(8), 0.0)
    frame = FrameShift(velocity=1.0, n=4, gamma=1.0)
    tally = CurrentTally(st, [2], frame)
    st._t = 0.5  # bond moved past sites 3, 4
    tally.snapshot()
    assert tally.current_moving(2, 0.5) == -1


def test_tally_errors():
    p = _params(n=4)
    st = _StubState(p, np.zeros(8, dtype=np.int8), np.zeros(8), 0.0)
    tally = CurrentTally(st, [0])
    with pytest.raises(SeriesError):
        tally.current_fixed(3, 0.0)
    with pytest.raises(SeriesError):
        tally.current_fixed(0, 0.7)


def test_conservation_residual_hand_case():
    p = _params(n=4)
    occ0 = np.array([1, 0, 0, 0, 0, 0, 0, 0], dtype=np.int8)
    occ1 = np.array([0, 1, 0, 0, 0, 0, 0, 0], dtype=np.int8)
    counters = np.zeros(8)
    counters[0] = 1  # one forward jump across bond {0,1}
    st = _StubState(p, occ1, counters, 1.0)
    assert conservation_residual(st, Configuration(8, occ0)) == 0
    bad = _StubState(p, occ1, np.zeros(8), 1.0)
    assert conservation_residual(bad, Configuration(8, occ0)) == 1


# ------------------------------------------------------------------ series

def test_series_csv_round_trip(tmp_path):
    times = np.array([0.0, 0.5, 1.0])
    s1 = ObservableSeries(0, times)
    s1.add("Y:H", [0.1, -0.2, 0.3])
    s1.add("Jfix:0", [0.0, 2.0, 5.0])
    s2 = ObservableSeries(1, times)
    s2.add("Y:H", [0.0, 0.25, -1.5])
    s2.add("Jfix:0", [0.0, -1.0, 0.0])
    path = tmp_path / "series.csv"
    write_series_csv(path, [s1, s2])
    back = read_series_csv(path)
    assert len(back) == 2
    for orig, rt in zip((s1, s2), back):
        assert rt.trajectory_id == orig.trajectory_id
        assert np.array_equal(rt.times, orig.times)
        for name in orig.values:
            assert np.array_equal(rt.values[name], orig.values[name])


def test_series_csv_rejects_foreign_schema(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(SeriesError):
        read_series_csv(path)


def test_series_add_rejects_mismatched_grid():
    s = ObservableSeries(0, np.array([0.0, 1.0]))
    with pytest.raises(SeriesError):
        s.add("x", [1.0, 2.0, 3.0])


def test_trapezoid_cumulative():
    t = np.array([0.0, 1.0, 3.0])
    f = np.array([0.0, 2.0, 2.0])
    out = trapezoid_cumulative(t, f)
    assert np.allclose(out, [0.0, 1.0, 5.0])


def test_martingale_residual_trivial_and_errors():
    times = np.linspace(0.0, 1.0, 5)
    s = ObservableSeries(0, times)
    s.add("Y", np.zeros(5))
    s.add("a_integrand", np.zeros(5))
    s.add("i_integrand", np.zeros(5))
    assert np.all(martingale_residual(s) == 0.0)
    s2 = ObservableSeries(1, times)
    s2.add("Y", np.zeros(5))
    with pytest.raises(SeriesError):
        martingale_residual(s2)
