"""Viscous Burgers hydrodynamics and empirical density comparison.

The macroscopic density solves

    d_t rho = (1/2) Lap phi_h(rho) - a Grad beta(rho)

on the periodic interval [0, M).  The solver is an explicit conservative
finite-difference scheme: centered second difference on phi_h, upwind first
difference on the advective flux a*beta (upwind side set by the local sign of
beta'), so discrete mass is conserved to rounding per step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .lattice import Configuration, ThermoFunctions


class CFLViolation(Exception):
    pass


@dataclass
class DensityProfile:
    """Periodic density values on a uniform macroscopic grid of spacing dx."""

    dx: float
    values: np.ndarray  # rho(x_i) at x_i = (i + 1/2) * dx

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(self.values < -1e-12) or np.any(self.values > 1.0 + 1e-12):
            raise ValueError("density values must lie in [0, 1]")
        self.values = np.clip(self.values, 0.0, 1.0)

    @property
    def length(self) -> float:
        return self.dx * len(self.values)

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(len(self.values)) + 0.5) * self.dx

    def mass(self) -> float:
        return float(self.values.sum() * self.dx)

    def at(self, x) -> np.ndarray:
        """Nearest-cell evaluation with periodic wrap."""
        idx = np.floor(np.asarray(x, dtype=np.float64) / self.dx).astype(int)
        return self.values[idx % len(self.values)]

    @classmethod
    def from_function(cls, fn, length: float, dx: float) -> "DensityProfile":
        m = int(round(length / dx))
        x = (np.arange(m) + 0.5) * dx
        return cls(length / m, np.asarray(fn(x), dtype=np.float64))

    def save_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["x", "rho"])
            for x, v in zip(self.centers, self.values):
                w.writerow([repr(float(x)), repr(float(v))])

    @classmethod
    def load_csv(cls, path) -> "DensityProfile":
        xs, vs = [], []
        with open(path, newline="") as f:
            r = csv.reader(f)
            next(r)
            for x, v in r:
                xs.append(float(x))
                vs.append(float(v))
        dx = xs[1] - xs[0]
        return cls(dx, np.array(vs))


def step_profile(rho_left: float, rho_right: float, length: float):
    """Two-phase initial condition: rho_left on [0, length/2), rho_right after."""

    def fn(x):
        return np.where(x % length < length / 2.0, rho_left, rho_right)

    return fn


def sample_profile_measure(profile: DensityProfile, n: int, M: int,
                           seed) -> Configuration:
    """Slowly varying product measure: P(eta(x)=1) = rho0(x/n)."""
    L = M * n
    if profile.length < M - 1e-9:
        raise ValueError("profile must cover the torus")
    probs = profile.at(np.arange(L) / n)
    rng = np.random.default_rng(seed)
    occ = (rng.random(L) < probs).astype(np.int8)
    return Configuration(L, occ)


def solve_burgers(profile: DensityProfile, th: ThermoFunctions, a: float,
                  t: float, safety: float = 0.4) -> DensityProfile:
    """Evolve the profile to field time t with the explicit conservative scheme."""
    rho = profile.values.copy()
    dx = profile.dx
    rho_grid = np.linspace(rho.min(), rho.max(), 256)
    dmax = float(np.max(np.abs(th.phi_h_prime_of(rho_grid)))) or 1e-30
    bmax = float(np.max(np.abs(th.beta_prime_of(rho_grid))))
    dt_diff = safety * dx * dx / dmax
    dt_adv = safety * dx / (a * bmax) if a * bmax > 0 else np.inf
    dt = min(dt_diff, dt_adv)
    if dt <= 0 or not np.isfinite(dt):
        raise CFLViolation("no admissible time step")
    steps = max(1, int(np.ceil(t / dt)))
    dt = t / steps
    for _ in range(steps):
        phi = th.phi_h_of(rho)
        beta = th.beta_of(rho)
        # interface i+1/2 between cells i and i+1 (periodic)
        phi_r = np.roll(phi, -1)
        rho_r = np.roll(rho, -1)
        diff_flux = -(phi_r - phi) / (2.0 * dx)
        speed = a * th.beta_prime_of(0.5 * (rho + rho_r))
        adv_flux = a * np.where(speed >= 0.0, beta, np.roll(beta, -1))
        flux = diff_flux + adv_flux
        rho = rho - dt / dx * (flux - np.roll(flux, 1))
        if not np.all(np.isfinite(rho)):
            raise CFLViolation("solution blew up; reduce the safety factor")
    return DensityProfile(dx, np.clip(rho, 0.0, 1.0))


def block_average_density(config: Configuration, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Empirical density in blocks of ceil(sqrt(n)) sites.

    Returns (block centers in macroscopic units, block means); a trailing
    partial block is dropped.
    """
    b = int(np.ceil(np.sqrt(n)))
    nb = config.L // b
    occ = config.occ[: nb * b].astype(np.float64)
    means = occ.reshape(nb, b).mean(axis=1)
    centers = (np.arange(nb) * b + (b - 1) / 2.0) / n
    return centers, means


def hydro_compare(params, profile: DensityProfile, t: float,
                  ensemble_size: int, progress=None):
    """Mean L1 distance between ensemble-averaged block densities and the PDE.

    Returns (L1 distance at time t, stderr, baseline L1 at t=0).  Blocks
    within 2*sqrt(phi_h' * t) of the torus wrap at x=0 are excluded from the
    comparison, so the statistic mimics a whole-line statement even though
    both sides are computed periodically.
    """
    from .engine import require_gradient, run_until, trajectory_seed_words, \
        _build_state
    from . import _kernels as K

    h = require_gradient(params.model)
    th = params.thermo(h)
    target = solve_burgers(profile, th, params.a, t)
    b = int(np.ceil(np.sqrt(params.n)))
    nb = params.L // b
    sum_t = np.zeros(nb)
    sumsq_t = np.zeros(nb)
    sum_0 = np.zeros(nb)
    centers = None
    for i in range(ensemble_size):
        words = trajectory_seed_words(params.seed, i)
        config = sample_profile_measure(profile, params.n, params.M,
                                        np.random.default_rng(words[4:]))
        st = _build_state(params, config, K.seed_rng(words[:4]))
        _, m0 = block_average_density(st.config, params.n)
        sum_0 += m0
        run_until(st, t)
        centers, mt = block_average_density(st.config, params.n)
        sum_t += mt
        sumsq_t += mt * mt
        if progress is not None:
            progress(i)
    mean_t = sum_t / ensemble_size
    mean_0 = sum_0 / ensemble_size
    margin = 2.0 * np.sqrt(max(float(th.phi_h_prime), 0.0) * t)
    dist = np.minimum(centers % params.M, params.M - centers % params.M)
    keep = dist >= margin
    if not np.any(keep):
        raise ValueError("wrap margin swallows the whole torus; enlarge M")
    width = params.M - 2.0 * margin
    l1 = float(np.mean(np.abs(mean_t - target.at(centers))[keep]) * width)
    l1_baseline = float(np.mean(np.abs(mean_0 - profile.at(centers))[keep])
                        * width)
    # per-block SEM of the averaged profile, propagated through the L1 norm
    var_t = np.maximum(sumsq_t / ensemble_size - mean_t ** 2, 0.0)
    sem_t = np.sqrt(var_t / ensemble_size)
    se = float(np.mean(sem_t[keep]) * width)
    return l1, se, l1_baseline
