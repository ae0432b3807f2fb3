"""Lattice configurations, rate models and exact small-system checkers.

Occupation variables live on a discrete torus of L sites.  A rate model is a
positive local function c evaluated on a window of sites around a bond; the
bundled models (simple exclusion, and a nearest-pair modulated rate) are both
gradient and reversible, which the checkers below verify exactly on small tori.
Thermodynamic functions are exact polynomials in the density, obtained by
enumerating the local window under a Bernoulli product measure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

ENUM_STATE_CAP = 2 ** 24


class EnumerationTooLarge(Exception):
    """Raised when a local window is too wide for exact enumeration."""


class ModelError(Exception):
    """Raised for invalid rate-model definitions."""


@dataclass
class Configuration:
    """Occupations on a torus of L sites; index arithmetic is modulo L."""

    L: int
    occ: np.ndarray  # int8, values in {0, 1}

    def __post_init__(self):
        self.occ = np.asarray(self.occ, dtype=np.int8)
        if self.L < 2 or self.occ.shape != (self.L,):
            raise ValueError("configuration needs L >= 2 sites")
        if not np.all((self.occ == 0) | (self.occ == 1)):
            raise ValueError("occupations must be 0 or 1")

    def particle_count(self) -> int:
        return int(self.occ.sum())

    def translate(self, x: int) -> "Configuration":
        """Cyclic shift: (tau_x eta)(y) = eta(y + x mod L)."""
        return Configuration(self.L, np.roll(self.occ, -x))

    def swap(self, x: int) -> "Configuration":
        """Exchange occupations across bond {x, x+1} (new object)."""
        occ = self.occ.copy()
        y = (x + 1) % self.L
        occ[x], occ[y] = occ[y], occ[x]
        return Configuration(self.L, occ)

    def copy(self) -> "Configuration":
        return Configuration(self.L, self.occ.copy())


def new_bernoulli_config(L: int, rho: float, seed) -> Configuration:
    """Sample each site independently occupied with probability rho.

    ``seed`` may be anything accepted by numpy's default_rng (including a
    Generator), so ensemble code can pass pre-derived streams.
    """
    if L < 2:
        raise ValueError("L must be >= 2")
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    occ = (rng.random(L) < rho).astype(np.int8)
    return Configuration(L, occ)


@dataclass
class LocalFunction:
    """Real function of occupations on sites {start, ..., start+width-1}.

    Stored as a table indexed by bits: bit j corresponds to the site
    start + j.
    """

    start: int
    table: np.ndarray

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.ndim != 1 or len(self.table) & (len(self.table) - 1):
            raise ValueError("table length must be a power of two")

    @property
    def width(self) -> int:
        return int(np.log2(len(self.table)))

    def value(self, occ: np.ndarray, x: int = 0) -> float:
        """Evaluate tau_x of this function on a torus configuration."""
        L = len(occ)
        bits = 0
        for j in range(self.width):
            bits |= int(occ[(x + self.start + j) % L]) << j
        return float(self.table[bits])

    def values(self, occ: np.ndarray) -> np.ndarray:
        """tau_x evaluated at every x of a torus configuration (vectorized)."""
        occ = np.asarray(occ)
        bits = np.zeros(len(occ), dtype=np.int64)
        for j in range(self.width):
            bits |= np.roll(occ, -(self.start + j)).astype(np.int64) << j
        return self.table[bits]


@dataclass
class RateModel:
    """Local jump-rate function c for the bond {0, 1}.

    c depends on sites {-r, ..., r+1}; the table is indexed with bit j for
    site -r + j.  Rates must be bounded away from zero.
    """

    name: str
    r: int
    c_table: np.ndarray

    def __post_init__(self):
        self.c_table = np.asarray(self.c_table, dtype=np.float64)
        expected = 2 ** (2 * self.r + 2)
        if len(self.c_table) != expected:
            raise ModelError(
                f"c_table must have {expected} entries for window radius {self.r}"
            )
        if self.c_table.min() <= 0.0 or not np.all(np.isfinite(self.c_table)):
            raise ModelError("rates must be positive and finite")

    @property
    def c_min(self) -> float:
        return float(self.c_table.min())

    @property
    def c_max(self) -> float:
        return float(self.c_table.max())

    @property
    def window_width(self) -> int:
        return 2 * self.r + 2

    def as_local_function(self) -> LocalFunction:
        return LocalFunction(-self.r, self.c_table)

    def is_constant(self) -> bool:
        return bool(np.all(self.c_table == self.c_table[0]))

    def c_value(self, occ: np.ndarray, x: int) -> float:
        """Rate c_x(eta) for the bond {x, x+1} on a torus configuration."""
        return self.as_local_function().value(occ, x)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "window_radius": self.r,
            "c_table": self.c_table.tolist(),
            "bounds": [self.c_min, self.c_max],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RateModel":
        if "builtin" in obj:
            return builtin_model(obj["builtin"], **obj.get("params", {}))
        return cls(obj["name"], int(obj["window_radius"]), np.asarray(obj["c_table"]))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)

    @classmethod
    def load(cls, path) -> "RateModel":
        with open(path) as f:
            return cls.from_json(json.load(f))


def ssep() -> RateModel:
    """Simple exclusion: c == 1."""
    return RateModel("ssep", 0, np.ones(4))


def gradient_pair_model(b: float = 0.3) -> RateModel:
    """c(eta) = 1 + b*(eta(-1) + eta(2)), the classic gradient reversible rate.

    b must lie in (0, 1) so the bounds stay comfortably positive.
    """
    if not 0.0 < b < 1.0:
        raise ModelError("b must lie in (0, 1)")
    r = 2
    w = 2 * r + 2
    table = np.empty(2 ** w)
    for bits in range(2 ** w):
        # bit j <-> site -2 + j; eta(-1) is bit 1, eta(2) is bit 4
        eta_m1 = (bits >> 1) & 1
        eta_2 = (bits >> 4) & 1
        table[bits] = 1.0 + b * (eta_m1 + eta_2)
    return RateModel(f"gradient-pair-b{b}", r, table)


def builtin_model(name: str, **params) -> RateModel:
    if name == "ssep":
        return ssep()
    if name in ("gradient-pair", "gradient_pair"):
        return gradient_pair_model(**params)
    raise ModelError(f"unknown builtin model {name!r}")


def bernoulli_expectation_poly(fn: LocalFunction) -> Polynomial:
    """E_{nu_rho}[fn] as an exact polynomial in rho (window enumeration)."""
    w = fn.width
    if 2 ** w > ENUM_STATE_CAP:
        raise EnumerationTooLarge(f"window of {w} sites exceeds enumeration cap")
    p = Polynomial([0.0, 1.0])
    q = Polynomial([1.0, -1.0])
    total = Polynomial([0.0])
    for bits in range(2 ** w):
        coeff = fn.table[bits]
        if coeff == 0.0:
            continue
        weight = Polynomial([1.0])
        for j in range(w):
            weight = weight * (p if (bits >> j) & 1 else q)
        total = total + coeff * weight
    return total


@dataclass
class ThermoFunctions:
    """phi_h, beta and chi with derivatives, exact polynomials in rho."""

    rho: float
    phi_h_poly: Polynomial
    beta_poly: Polynomial
    chi_poly: Polynomial = field(
        default_factory=lambda: Polynomial([0.0, 1.0, -1.0])
    )

    @property
    def phi_h(self) -> float:
        return float(self.phi_h_poly(self.rho))

    @property
    def phi_h_prime(self) -> float:
        return float(self.phi_h_poly.deriv()(self.rho))

    @property
    def beta(self) -> float:
        return float(self.beta_poly(self.rho))

    @property
    def beta_prime(self) -> float:
        return float(self.beta_poly.deriv()(self.rho))

    @property
    def beta_double_prime(self) -> float:
        return float(self.beta_poly.deriv(2)(self.rho))

    @property
    def chi(self) -> float:
        return float(self.chi_poly(self.rho))

    def phi_h_of(self, rho) -> np.ndarray:
        return self.phi_h_poly(np.asarray(rho, dtype=np.float64))

    def phi_h_prime_of(self, rho) -> np.ndarray:
        return self.phi_h_poly.deriv()(np.asarray(rho, dtype=np.float64))

    def beta_of(self, rho) -> np.ndarray:
        return self.beta_poly(np.asarray(rho, dtype=np.float64))

    def beta_prime_of(self, rho) -> np.ndarray:
        return self.beta_poly.deriv()(np.asarray(rho, dtype=np.float64))

    def to_json(self) -> dict:
        return {
            "rho": self.rho,
            "phi_h": self.phi_h,
            "phi_h_prime": self.phi_h_prime,
            "beta": self.beta,
            "beta_prime": self.beta_prime,
            "beta_double_prime": self.beta_double_prime,
            "chi": self.chi,
        }


def thermo(model: RateModel, h: LocalFunction, rho: float) -> ThermoFunctions:
    """Exact thermodynamic functions at density rho.

    beta(rho) = chi(rho) * E_{nu_rho}[c]; phi_h(rho) = E_{nu_rho}[h].
    Derivatives come from differentiating the exact polynomials, never from
    finite differences.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1) for thermodynamic functions")
    phi_h_poly = bernoulli_expectation_poly(h)
    c_mean_poly = bernoulli_expectation_poly(model.as_local_function())
    chi_poly = Polynomial([0.0, 1.0, -1.0])
    beta_poly = chi_poly * c_mean_poly
    return ThermoFunctions(rho, phi_h_poly, beta_poly, chi_poly)


@dataclass
class GradientFailure:
    """solve_gradient found no local h within tolerance."""

    residual: float

    def __bool__(self):
        return False


def solve_gradient(model: RateModel, tol: float = 1e-10):
    """Find local h with c(eta)(eta(1)-eta(0)) = tau_1 h(eta) - h(eta).

    h is sought on the window {-r, ..., r+1}; the gauge is fixed by
    h(all-empty) = 0.  Returns a LocalFunction, or GradientFailure carrying
    the max residual when no solution exists.
    """
    r = model.r
    h_start = -r
    h_w = 2 * r + 2
    # Equations range over configurations of sites {-r, ..., r+2}.
    eq_w = h_w + 1
    n_unknowns = 2 ** h_w
    n_eqs = 2 ** eq_w
    A = np.zeros((n_eqs, n_unknowns))
    b = np.zeros(n_eqs)
    c_lf = model.as_local_function()
    for bits in range(n_eqs):
        occ = np.array([(bits >> j) & 1 for j in range(eq_w)], dtype=np.int8)
        # site -r + j  <->  index j in occ
        eta0 = occ[r]       # site 0
        eta1 = occ[r + 1]   # site 1
        c_bits = bits & (2 ** (2 * r + 2) - 1)
        b[bits] = model.c_table[c_bits] * (eta1 - eta0)
        h_bits = bits & (n_unknowns - 1)           # sites -r .. r+1
        th_bits = bits >> 1                        # sites -r+1 .. r+2
        A[bits, th_bits] += 1.0
        A[bits, h_bits] -= 1.0
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    residual = float(np.max(np.abs(A @ sol - b)))
    if residual > tol:
        return GradientFailure(residual)
    sol = sol - sol[0]  # gauge: h(all-empty) = 0
    return LocalFunction(h_start, sol)


def gradient_residual(model: RateModel, h: LocalFunction) -> float:
    """max over local configurations of |c(eta)(eta(1)-eta(0)) - (tau_1 h - h)|.

    h must live on the window {-r, ..., r+1} (as produced by solve_gradient).
    """
    r = model.r
    if h.start != -r or h.width != 2 * r + 2:
        raise ModelError("h must live on the window {-r, ..., r+1}")
    eq_w = 2 * r + 3
    c_mask = 2 ** (2 * r + 2) - 1
    worst = 0.0
    for bits in range(2 ** eq_w):
        eta0 = (bits >> r) & 1
        eta1 = (bits >> (r + 1)) & 1
        lhs = model.c_table[bits & c_mask] * (eta1 - eta0)
        rhs = h.table[(bits >> 1) & c_mask] - h.table[bits & c_mask]
        worst = max(worst, abs(lhs - rhs))
    return worst


def _state_bits_to_occ(bits: int, L: int) -> np.ndarray:
    return np.array([(bits >> j) & 1 for j in range(L)], dtype=np.int8)


def _nu_rho_weights(L: int, rho: float) -> np.ndarray:
    """Bernoulli product weights over all 2^L torus states."""
    states = np.arange(2 ** L, dtype=np.uint64)
    counts = np.zeros(2 ** L, dtype=np.int64)
    for j in range(L):
        counts += ((states >> np.uint64(j)) & np.uint64(1)).astype(np.int64)
    return rho ** counts * (1.0 - rho) ** (L - counts)


def exact_invariance_residual(model: RateModel, params) -> float:
    """max_state |(nu_rho L_n)(state)| for the full torus generator.

    ``params`` is a SimParams-like object with fields L (<= 14), n, rho and
    jump probabilities p_n / q_n.
    """
    L = params.L
    if L > 14:
        raise ValueError("exact generator check limited to L <= 14")
    nu = _nu_rho_weights(L, params.rho)
    res = np.zeros(2 ** L)
    n2 = float(params.n) ** 2
    p_n, q_n = params.p_n, params.q_n
    for bits in range(2 ** L):
        w = nu[bits]
        if w == 0.0:
            continue
        occ = _state_bits_to_occ(bits, L)
        for x in range(L):
            y = (x + 1) % L
            if occ[x] == occ[y]:
                continue
            c = model.c_value(occ, x)
            rate = n2 * c * (p_n if occ[x] == 1 else q_n)
            target = bits ^ ((1 << x) | (1 << y))
            res[bits] -= w * rate
            res[target] += w * rate
    return float(np.max(np.abs(res)))


def detailed_balance_residual(model: RateModel, rho: float, L: int) -> float:
    """Detailed balance of the symmetric part (p = q = 1/2) under nu_rho."""
    if L > 14:
        raise ValueError("exact generator check limited to L <= 14")
    nu = _nu_rho_weights(L, rho)
    worst = 0.0
    for bits in range(2 ** L):
        occ = _state_bits_to_occ(bits, L)
        for x in range(L):
            y = (x + 1) % L
            if occ[x] == occ[y]:
                continue
            target = bits ^ ((1 << x) | (1 << y))
            if target < bits:
                continue  # each unordered pair once
            occ_t = _state_bits_to_occ(target, L)
            fwd = nu[bits] * 0.5 * model.c_value(occ, x)
            bwd = nu[target] * 0.5 * model.c_value(occ_t, x)
            worst = max(worst, abs(fwd - bwd))
    return worst
