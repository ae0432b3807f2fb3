"""Fluctuation fields, currents and martingale integrands.

All fields are evaluated on the torus in macroscopic coordinates: site x sits
at u = x/n, the torus has circumference M, and arguments are wrapped into
[-M/2, M/2).  The moving reference frame shifts test-function arguments by
d_mac(t) = a * beta'(rho) * t * n^(1-gamma); the corresponding lattice
displacement is n times larger.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .lattice import Configuration, LocalFunction, ThermoFunctions


class SupportError(Exception):
    """Test-function support does not fit the torus (enlarge M or shorten T)."""


class SeriesError(Exception):
    """Observable series are inconsistent (grids, untracked bonds, ...)."""


@dataclass
class TestFunction:
    """Macroscopic test function with compact support |u| <= support_radius."""

    fn: callable
    support_radius: float
    smoothness: str = "smooth"
    name: str = "H"

    def __call__(self, u):
        return self.fn(np.asarray(u, dtype=np.float64))

    def translate(self, shift: float) -> "TestFunction":
        f = self.fn
        return TestFunction(lambda u: f(u - shift),
                            self.support_radius + abs(shift),
                            self.smoothness, f"{self.name}@{shift:g}")

    def scale(self, alpha: float) -> "TestFunction":
        f = self.fn
        return TestFunction(lambda u: alpha * f(u), self.support_radius,
                            self.smoothness, self.name)

    def add(self, other: "TestFunction") -> "TestFunction":
        f, g = self.fn, other.fn
        return TestFunction(lambda u: f(u) + g(u),
                            max(self.support_radius, other.support_radius),
                            self.smoothness, f"{self.name}+{other.name}")


def gaussian_bump(sigma: float, center: float = 0.0,
                  cutoff: float = 8.0) -> TestFunction:
    """Truncated Gaussian density; effectively smooth at cutoff 8 sigma."""

    def fn(u):
        z = (u - center) / sigma
        out = np.exp(-0.5 * z * z) / (sigma * np.sqrt(2.0 * np.pi))
        return np.where(np.abs(z) <= cutoff, out, 0.0)

    return TestFunction(fn, abs(center) + cutoff * sigma, "smooth",
                        f"gauss(s={sigma:g},c={center:g})")


def heaviside_ramp(ell: float) -> TestFunction:
    """G_ell(u) = (1 - u/ell)^+ for u > 0, the compact Heaviside surrogate."""

    def fn(u):
        return np.where(u > 0.0, np.maximum(0.0, 1.0 - u / ell), 0.0)

    return TestFunction(fn, ell, "kink", f"ramp(l={ell:g})")


def box_indicator(x: float, eps: float) -> TestFunction:
    """i_eps(x): the normalized indicator of (x, x+eps]."""

    def fn(u):
        return np.where((u > x) & (u <= x + eps), 1.0 / eps, 0.0)

    return TestFunction(fn, max(abs(x), abs(x + eps)), "jump",
                        f"box(x={x:g},e={eps:g})")


@dataclass(frozen=True)
class FrameShift:
    """Galilean frame moving at the system velocity a*beta'(rho)*n^(2-gamma)."""

    velocity: float  # v = a * beta'(rho)
    n: int
    gamma: float

    @classmethod
    def from_params(cls, params, th: ThermoFunctions) -> "FrameShift":
        return cls(params.a * th.beta_prime, params.n, params.gamma)

    @classmethod
    def static(cls, params) -> "FrameShift":
        return cls(0.0, params.n, params.gamma)

    def d_mac(self, t: float) -> float:
        return self.velocity * t * self.n ** (1.0 - self.gamma)

    def d_lat(self, t: float) -> float:
        return self.velocity * t * self.n ** (2.0 - self.gamma)


def wrapped_lattice_args(n: int, L: int, shift: float = 0.0) -> np.ndarray:
    """Macroscopic positions x/n - shift wrapped into [-M/2, M/2)."""
    M = L / n
    u = np.arange(L) / n - shift
    return (u + M / 2.0) % M - M / 2.0


def _check_support(H: TestFunction, M: float):
    if 2.0 * H.support_radius >= M:
        raise SupportError(
            f"support radius {H.support_radius:g} does not fit torus M={M:g}; "
            "enlarge M or shorten the horizon")


def lattice_values(H: TestFunction, params, t: float = 0.0,
                   frame: FrameShift | None = None) -> np.ndarray:
    """H evaluated at every (frame-shifted, wrapped) lattice point."""
    _check_support(H, params.M)
    d = frame.d_mac(t) if frame is not None else 0.0
    return H(wrapped_lattice_args(params.n, params.L, d))


def grad_n(values: np.ndarray, n: int) -> np.ndarray:
    """Discrete derivative: n * (H((x+1)/n) - H(x/n)) on the torus."""
    return n * (np.roll(values, -1) - values)


def lap_n(values: np.ndarray, n: int) -> np.ndarray:
    """Discrete Laplacian: n^2 * (H((x+1)/n) + H((x-1)/n) - 2 H(x/n))."""
    return n * n * (np.roll(values, -1) + np.roll(values, 1) - 2.0 * values)


def density_field(config: Configuration, H: TestFunction, t: float,
                  params, frame: FrameShift | None = None) -> float:
    """Y_t(H) = n^(-1/2) sum_x H(x/n - d_mac(t)) (eta(x) - rho)."""
    vals = lattice_values(H, params, t, frame)
    centered = config.occ.astype(np.float64) - params.rho
    return float(vals @ centered / np.sqrt(params.n))


def v_f_values(config: Configuration, params, th: ThermoFunctions) -> np.ndarray:
    """tau_x V_f for every x: a*c_x*(eta(x+1)-eta(x))^2/2 centered and
    linearly projected out."""
    model = params.model
    r = model.r
    w = model.window_width
    f_table = np.empty(2 ** w)
    for bits in range(2 ** w):
        s0 = (bits >> r) & 1
        s1 = (bits >> (r + 1)) & 1
        f_table[bits] = params.a * model.c_table[bits] * (s1 - s0) ** 2 / 2.0
    f_vals = LocalFunction(-r, f_table).values(config.occ)
    centered = config.occ.astype(np.float64) - params.rho
    return (f_vals - params.a * th.beta
            - params.a * th.beta_prime * centered)


def a_term_increment(config: Configuration, H: TestFunction, t: float,
                     params, th: ThermoFunctions,
                     frame: FrameShift | None = None) -> float:
    """Integrand of the weighted nonlinear term A_t at field time t.

    The caller owns the time quadrature; see the engine's exact in-kernel
    accumulation for statically framed runs.
    """
    vals = lattice_values(H, params, t, frame)
    weights = grad_n(vals, params.n)
    vf = v_f_values(config, params, th)
    return float(params.n ** (1.0 - params.gamma) / np.sqrt(params.n)
                 * (weights @ vf))


def i_term_increment(config: Configuration, H: TestFunction, t: float,
                     params, th: ThermoFunctions, h: LocalFunction,
                     frame: FrameShift | None = None) -> float:
    """Integrand of the linear (Laplacian) term I_t at field time t."""
    vals = lattice_values(H, params, t, frame)
    weights = 0.5 * lap_n(vals, params.n)
    hv = h.values(config.occ) - th.phi_h
    return float(weights @ hv / np.sqrt(params.n))


def a_term_weights(H: TestFunction, params, t: float = 0.0,
                   frame: FrameShift | None = None) -> np.ndarray:
    """Per-site weights for the engine's exact A-integral accumulator."""
    vals = lattice_values(H, params, t, frame)
    return (params.n ** (1.0 - params.gamma) / np.sqrt(params.n)
            * grad_n(vals, params.n))


def i_term_weights(H: TestFunction, params, t: float = 0.0,
                   frame: FrameShift | None = None) -> np.ndarray:
    vals = lattice_values(H, params, t, frame)
    return 0.5 * lap_n(vals, params.n) / np.sqrt(params.n)


def quadratic_field(config: Configuration, x: float, eps: float, params,
                    t: float = 0.0, frame: FrameShift | None = None) -> float:
    """Square of the eps-box-averaged fluctuation Y_t(i_eps(x))^2."""
    if eps < 1.0 / params.n:
        raise ValueError("eps must cover at least one lattice site")
    H = box_indicator(x, eps)
    vals = lattice_values(H, params, t, frame)
    if not np.any(vals):
        raise SupportError("box contains no lattice site after discretization")
    centered = config.occ.astype(np.float64) - params.rho
    y = float(vals @ centered / np.sqrt(params.n))
    return y * y


class CurrentTally:
    """Signed particle currents through tracked (possibly moving) bonds.

    Fixed-bond counts come straight from the engine's per-bond jump counters.
    The moving-bond current through {x + floor(d_lat(t)), ...+1} satisfies the
    exact identity

        J_mov(t) = J_fix_x(t) - sum_{y=x+1}^{x+floor(d_lat(t))} eta_t(y),

    equivalent to subtracting the occupation of each site the bond advances
    past at the moment it is passed.
    """

    def __init__(self, state, bonds, frame: FrameShift | None = None):
        self.state = state
        self.bonds = [int(b) % state.params.L for b in bonds]
        self.frame = frame
        self.times: list[float] = []
        self._fixed: dict[int, list[int]] = {b: [] for b in self.bonds}
        self._moving: dict[int, list[int]] = {b: [] for b in self.bonds}
        self.snapshot()

    def snapshot(self):
        st = self.state
        L = st.params.L
        t = st.t
        k = 0
        if self.frame is not None:
            d = self.frame.d_lat(t)
            if abs(d) >= L:
                raise SeriesError("moving frame wrapped the torus; enlarge L")
            k = int(np.floor(d))
        self.times.append(t)
        occ = st.config.occ
        for b in self.bonds:
            j_fix = int(st.counters[b])
            self._fixed[b].append(j_fix)
            if k >= 0:
                # sites the bond advanced past count -1 each if occupied now
                corr = -sum(int(occ[(b + 1 + j) % L]) for j in range(k))
            else:
                # retreating bond: sites re-entering ahead count +1 each
                corr = sum(int(occ[(b - j) % L]) for j in range(-k))
            self._moving[b].append(j_fix + corr)

    def _lookup(self, series: dict, x: int, t: float) -> int:
        if x not in series:
            raise SeriesError(f"bond {x} is not tracked")
        for i, ti in enumerate(self.times):
            if abs(ti - t) <= 1e-12:
                return series[x][i]
        raise SeriesError(f"no snapshot at field time {t}")

    def current_fixed(self, x: int, t: float) -> int:
        return self._lookup(self._fixed, x, t)

    def current_moving(self, x: int, t: float) -> int:
        return self._lookup(self._moving, x, t)


def conservation_residual(tally_state, config0: Configuration) -> int:
    """Exact integer residual of the current-density conservation law.

    With J_x the signed count through bond {x, x+1}, the net influx into
    site x is J_{x-1} - J_x and must equal eta_t(x) - eta_0(x) exactly.
    """
    counters = tally_state.counters
    occ_t = tally_state.config.occ.astype(np.int64)
    occ_0 = config0.occ.astype(np.int64)
    influx = np.roll(counters, 1) - counters
    return int(np.max(np.abs(influx - (occ_t - occ_0))))


@dataclass
class ObservableSeries:
    """Per-trajectory samples on a common field-time grid."""

    trajectory_id: int
    times: np.ndarray
    values: dict = field(default_factory=dict)  # name -> array aligned to times

    def add(self, name: str, arr):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != self.times.shape:
            raise SeriesError("series length must match the time grid")
        self.values[name] = arr


def write_series_csv(path, series_list):
    """Stable long-format schema: trajectory_id, field_time, observable_name, value."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["trajectory_id", "field_time", "observable_name", "value"])
        for s in series_list:
            for name in sorted(s.values):
                for t, v in zip(s.times, s.values[name]):
                    w.writerow([s.trajectory_id, repr(float(t)), name,
                                repr(float(v))])


def read_series_csv(path) -> list[ObservableSeries]:
    rows: dict[int, dict] = {}
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        if header != ["trajectory_id", "field_time", "observable_name", "value"]:
            raise SeriesError("unrecognized series schema")
        for tid, t, name, v in r:
            d = rows.setdefault(int(tid), {})
            d.setdefault(name, []).append((float(t), float(v)))
    out = []
    for tid in sorted(rows):
        names = rows[tid]
        first = next(iter(names.values()))
        times = np.array([t for t, _ in first])
        s = ObservableSeries(tid, times)
        for name, pairs in names.items():
            ts = np.array([t for t, _ in pairs])
            if ts.shape != times.shape or not np.allclose(ts, times):
                raise SeriesError("mismatched grids in series file")
            s.add(name, np.array([v for _, v in pairs]))
        out.append(s)
    return out


def trapezoid_cumulative(times: np.ndarray, integrand: np.ndarray) -> np.ndarray:
    dt = np.diff(times)
    inc = 0.5 * dt * (integrand[1:] + integrand[:-1])
    return np.concatenate([[0.0], np.cumsum(inc)])


def martingale_residual(series: ObservableSeries, y_name: str = "Y",
                        a_name: str = "a_integrand",
                        i_name: str = "i_integrand",
                        exact_a: str | None = None,
                        exact_i: str | None = None) -> np.ndarray:
    """M_t = Y_t - Y_0 - I_t - A_t on the series grid.

    Integrals come from trapezoid quadrature of the stored integrands, or
    from exact accumulator columns when their names are given.
    """
    try:
        y = series.values[y_name]
        a_t = (series.values[exact_a] if exact_a
               else trapezoid_cumulative(series.times, series.values[a_name]))
        i_t = (series.values[exact_i] if exact_i
               else trapezoid_cumulative(series.times, series.values[i_name]))
    except KeyError as e:
        raise SeriesError(f"missing series column {e}")
    return y - y[0] - i_t - a_t
