"""Analytic reference formulas for the scaling limits, and the statistical
machinery that compares Monte Carlo ensembles against them.

The density-field limit is an Ornstein-Uhlenbeck process whose covariance is
chi(rho) * integral T_{t-s}H * G, with {T_t} the heat semigroup of diffusivity
D = phi_h'(rho).  Through the Heaviside link the rescaled current converges to
a Gaussian process with fBm(1/4) structure; its covariance follows from the
heat-semigroup covariance and is normalized accordingly (see fbm_covariance).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .lattice import ThermoFunctions
from .observables import TestFunction, grad_n, lattice_values


@dataclass(frozen=True)
class LimitSpec:
    """Coefficients of the limiting equations, all from one thermo instance."""

    diffusivity: float       # D = phi_h'(rho)
    noise_strength: float    # beta(rho)
    drift: float             # a * beta'(rho)
    kpz_coefficient: float   # a * beta''(rho) / 2
    chi: float

    @classmethod
    def from_thermo(cls, th: ThermoFunctions, a: float) -> "LimitSpec":
        return cls(th.phi_h_prime, th.beta, a * th.beta_prime,
                   a * th.beta_double_prime / 2.0, th.chi)


def heat_semigroup(H: TestFunction, tau: float, D: float,
                   nodes: int = 64, panels: int = 8) -> TestFunction:
    """T_tau H: Gaussian convolution with kernel variance D*tau.

    (T_tau H)(u) = integral H(y) N(u - y; D tau) dy, evaluated with composite
    Gauss-Legendre quadrature over the support of H, so narrow test functions
    are resolved regardless of the kernel width, and the returned function
    accepts arrays of any shape (it composes with itself).
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if tau == 0.0:
        return H
    z, w = np.polynomial.legendre.leggauss(nodes)
    R = H.support_radius
    edges = np.linspace(-R, R, panels + 1)
    half = 0.5 * (edges[1] - edges[0])
    y = (edges[:-1, None] + half * (1.0 + z[None, :])).ravel()
    wy = np.tile(half * w, panels) * H(y)
    var = D * tau
    norm = 1.0 / np.sqrt(2.0 * np.pi * var)

    def fn(u):
        u = np.asarray(u, dtype=np.float64)
        flat = np.atleast_1d(u).ravel()
        diff = flat[:, None] - y[None, :]
        kern = norm * np.exp(-0.5 * diff * diff / var)
        return (kern @ wy).reshape(np.atleast_1d(u).shape)

    return TestFunction(fn, H.support_radius + 7.0 * np.sqrt(D * tau),
                        "smooth", f"T_{tau:g}{H.name}")


def ou_covariance(H: TestFunction, G: TestFunction, t: float, s: float,
                  spec: LimitSpec, epsabs: float = 1e-10) -> float:
    """E[Y_t(H) Y_s(G)] = chi * integral (T_{t-s}H)(x) G(x) dx."""
    if t < s:
        H, G, t, s = G, H, s, t
    TH = heat_semigroup(H, t - s, spec.diffusivity)
    lo = -G.support_radius
    hi = G.support_radius

    def f(x):
        return float(TH(np.array([x]))[0] * G(np.array([x]))[0])

    val, _ = integrate.quad(f, lo, hi, epsabs=epsabs, limit=400)
    return spec.chi * val


def fbm_covariance(t: float, s: float, spec: LimitSpec) -> float:
    """Covariance of the limiting current process (Hurst exponent 1/4).

    E[Z_t Z_s] = chi * sqrt(D / (2 pi)) * (sqrt(t) + sqrt(s) - sqrt(t-s)),
    the unique normalization consistent with the heat-semigroup covariance of
    the density field through the Heaviside test function: each pairing
    contributes chi * (<G,G> - <T_u G, G>) -> chi * sqrt(D u / (2 pi)).
    Note the textbook fBm convention carries an extra overall factor.
    """
    if s > t:
        t, s = s, t
    if s < 0:
        raise ValueError("times must be >= 0")
    pref = spec.chi * np.sqrt(spec.diffusivity / (2.0 * np.pi))
    return float(pref * (np.sqrt(t) + np.sqrt(s) - np.sqrt(t - s)))


def qv_prediction(H: TestFunction, t: float, params,
                  th: ThermoFunctions) -> float:
    """Stationary expectation of the martingale's quadratic variation.

    t * (1/2n) sum_x (grad_n H(x/n))^2 * 2 beta(rho) * (1 + a/n^gamma), with
    E[c(eta)(eta(1)-eta(0))^2] = 2 beta(rho) from the exact enumeration.
    """
    vals = lattice_values(H, params)
    g = grad_n(vals, params.n)
    corr = 1.0 + params.a / params.n ** params.gamma
    return float(t * (g @ g) / (2.0 * params.n) * 2.0 * th.beta * corr)


class EnsembleAccumulator:
    """Mergeable running mean/covariance over named per-trajectory vectors.

    Merging is implemented with the pairwise-update rule, associative and
    commutative up to floating error; standard errors come from the
    between-trajectory covariance (trajectories are i.i.d.).
    """

    def __init__(self, names):
        self.names = list(names)
        k = len(self.names)
        self.count = 0
        self._mean = np.zeros(k)
        self._m2 = np.zeros((k, k))

    def add(self, vector):
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != self._mean.shape:
            raise ValueError("vector length mismatch")
        self.count += 1
        delta = v - self._mean
        self._mean += delta / self.count
        self._m2 += np.outer(delta, v - self._mean)

    def merge(self, other: "EnsembleAccumulator"):
        if other.names != self.names:
            raise ValueError("accumulator name mismatch")
        if other.count == 0:
            return self
        if self.count == 0:
            self.count = other.count
            self._mean = other._mean.copy()
            self._m2 = other._m2.copy()
            return self
        na, nb = self.count, other.count
        delta = other._mean - self._mean
        tot = na + nb
        self._mean = self._mean + delta * nb / tot
        self._m2 = self._m2 + other._m2 + np.outer(delta, delta) * na * nb / tot
        self.count = tot
        return self

    def _idx(self, name):
        return self.names.index(name)

    def mean(self, name=None):
        if name is None:
            return self._mean.copy()
        return float(self._mean[self._idx(name)])

    def cov(self):
        if self.count < 2:
            raise ValueError("need at least two samples")
        return self._m2 / (self.count - 1)

    def sem(self, name) -> float:
        """Standard error of the mean of one observable."""
        i = self._idx(name)
        return float(np.sqrt(self.cov()[i, i] / self.count))

    def mean_with_se(self, name):
        return self.mean(name), self.sem(name)

    def variance_with_se(self, name, sq_name):
        """Var = E[x^2] - E[x]^2 with a delta-method standard error.

        ``name`` and ``sq_name`` index the observable and its square.
        """
        i, j = self._idx(name), self._idx(sq_name)
        m1, m2 = self._mean[i], self._mean[j]
        var = m2 - m1 * m1
        c = self.cov()
        grad = np.zeros(len(self.names))
        grad[j] = 1.0
        grad[i] = -2.0 * m1
        se = float(np.sqrt(grad @ c @ grad / self.count))
        return float(var), se

    def covariance_with_se(self, name_x, name_y, name_xy):
        """Cov = E[xy] - E[x]E[y] with a delta-method standard error."""
        i, j, k = (self._idx(name_x), self._idx(name_y), self._idx(name_xy))
        mx, my, mxy = self._mean[i], self._mean[j], self._mean[k]
        cov_val = mxy - mx * my
        c = self.cov()
        grad = np.zeros(len(self.names))
        grad[k] = 1.0
        grad[i] = -my
        grad[j] = -mx
        se = float(np.sqrt(grad @ c @ grad / self.count))
        return float(cov_val), se


@dataclass
class PowerLawFit:
    exponent: float
    prefactor: float
    exponent_se: float


def fit_power_law(points) -> PowerLawFit:
    """Weighted least squares of log(value) on log(scale).

    ``points`` is an iterable of (scale, value, stderr); stderr propagates to
    log space as stderr/value and into the exponent error.
    """
    pts = [(float(s), float(v), float(e)) for s, v, e in points]
    if len(pts) < 3:
        raise ValueError("need at least three points")
    if any(v <= 0.0 for _, v, _ in pts):
        raise ValueError("values must be positive for a power-law fit")
    x = np.log([s for s, _, _ in pts])
    y = np.log([v for _, v, _ in pts])
    sig = np.array([max(e / v, 1e-300) for _, v, e in pts])
    w = 1.0 / sig ** 2
    X = np.column_stack([np.ones_like(x), x])
    XtW = X.T * w
    cov = np.linalg.inv(XtW @ X)
    beta = cov @ (XtW @ y)
    return PowerLawFit(exponent=float(beta[1]),
                       prefactor=float(np.exp(beta[0])),
                       exponent_se=float(np.sqrt(cov[1, 1])))


def bg_second_moment(params, H: TestFunction, t: float, n_traj: int,
                     progress=None):
    """Monte Carlo estimate of E[(A_t(H))^2] over independent trajectories.

    The A-integral is accumulated exactly along the jump chain (the integrand
    is piecewise constant between events), which avoids the quadrature bias a
    sampling grid coarser than the integrand's O(n^-2) correlation time would
    introduce.  Requires a statically framed setting (zero drift velocity).
    """
    from .engine import require_gradient, run_until, spawn_trajectory
    from .observables import a_term_weights, i_term_weights

    h = require_gradient(params.model)
    th = params.thermo(h)
    if params.a * th.beta_prime != 0.0:
        raise ValueError("exact A-integration needs a static frame "
                         "(a * beta'(rho) must vanish)")
    wA = a_term_weights(H, params)
    wI = i_term_weights(H, params)
    acc = EnsembleAccumulator(["A", "A2"])
    for i in range(n_traj):
        st = spawn_trajectory(params, i)
        st.set_integrands(wA, wI, th, h)
        run_until(st, t)
        a_val = st.a_integral
        acc.add([a_val, a_val * a_val])
        if progress is not None:
            progress(i)
    return acc.mean_with_se("A2")
