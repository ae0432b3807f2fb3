"""Continuous-time simulation engine for the weakly asymmetric exclusion process.

The generator's diffusive n^2 speeding is folded into the bond rates, so all
times handled here are field times.  Sampling is exact: waiting times are
exponential in the total rate and bonds are picked proportionally to their
rate, either via two uniform classes (constant c) or a partial-sum tree
(general c).  A pre-drawn absolute next-event time is carried in the state,
which makes trajectories independent of how a run is segmented into
run_until calls.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .lattice import (
    Configuration,
    GradientFailure,
    LocalFunction,
    RateModel,
    ThermoFunctions,
    detailed_balance_residual,
    new_bernoulli_config,
    solve_gradient,
    thermo,
)

SEED_DERIVATION_ID = "seedseq-spawnkey-v1"
DEFAULT_REBUILD_EVERY = 1_000_000


class FrozenError(Exception):
    """The configuration admits no jump and the horizon is infinite."""


@dataclass(frozen=True)
class SimParams:
    """One experiment's physics and discretization."""

    model: RateModel
    n: int
    gamma: float
    a: float
    rho: float
    M: int = 4
    T: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.a < 0:
            raise ValueError("a must be >= 0")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.a / self.n ** self.gamma > 1.0:
            raise ValueError("asymmetry a/n^gamma must not exceed 1")

    @property
    def L(self) -> int:
        return self.M * self.n

    @property
    def p_n(self) -> float:
        return 0.5 * (1.0 + self.a / self.n ** self.gamma)

    @property
    def q_n(self) -> float:
        return 1.0 - self.p_n

    def thermo(self, h: LocalFunction | None = None) -> ThermoFunctions:
        if h is None:
            h = require_gradient(self.model)
        return thermo(self.model, h, self.rho)

    def describe(self) -> dict:
        return {
            "model": self.model.to_json(),
            "n": self.n,
            "gamma": self.gamma,
            "a": self.a,
            "rho": self.rho,
            "M": self.M,
            "T": self.T,
            "seed": self.seed,
        }


def require_gradient(model: RateModel) -> LocalFunction:
    """Solve for h; raise if the model violates the gradient hypothesis."""
    h = solve_gradient(model)
    if isinstance(h, GradientFailure):
        raise ValueError(
            f"model {model.name!r} is not gradient (residual {h.residual:.3e})"
        )
    return h


def validate_model(model: RateModel, check_L: int = 6, tol: float = 1e-10):
    """Enforce the gradient and reversibility hypotheses at run time."""
    h = require_gradient(model)
    db = detailed_balance_residual(model, 0.5, check_L)
    if db > tol:
        raise ValueError(
            f"model {model.name!r} violates detailed balance (residual {db:.3e})"
        )
    return h


@dataclass
class JumpEvent:
    time: float
    bond: int
    direction: int  # +1 forward (x -> x+1), -1 backward


@dataclass
class EngineState:
    """Mutable simulation state; strictly single-threaded."""

    params: SimParams
    config: Configuration
    rng: np.ndarray          # xoshiro state, uint64[4]
    freg: np.ndarray
    ireg: np.ndarray
    counters: np.ndarray     # signed jump counts per bond since t=0
    fast: bool
    # fast-path class structures
    w10: float = 0.0
    w01: float = 0.0
    bonds10: np.ndarray | None = None
    pos10: np.ndarray | None = None
    bonds01: np.ndarray | None = None
    pos01: np.ndarray | None = None
    class_counts: np.ndarray | None = None
    # tree-path structures
    P: int = 0
    tree: np.ndarray | None = None
    # exact integral accumulators
    use_ai: bool = False
    wA: np.ndarray | None = None
    wI: np.ndarray | None = None
    vf_table: np.ndarray | None = None
    hc_table: np.ndarray | None = None
    rebuild_every: int = DEFAULT_REBUILD_EVERY
    # optional event log
    log_on: bool = False
    ev_t: np.ndarray = field(default_factory=lambda: np.empty(0))
    ev_b: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int32))
    ev_d: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int8))
    observers: list = field(default_factory=list)

    @property
    def t(self) -> float:
        return float(self.freg[0])

    @property
    def event_count(self) -> int:
        return int(self.ireg[0])

    @property
    def total_rate(self) -> float:
        if self.fast:
            return self.w10 * self.class_counts[0] + self.w01 * self.class_counts[1]
        return float(self.tree[1])

    @property
    def a_integral(self) -> float:
        return float(self.freg[4])

    @property
    def i_integral(self) -> float:
        return float(self.freg[5])

    def bond_rates(self) -> tuple[np.ndarray, np.ndarray]:
        """Forward/backward rate tables derived afresh from the configuration."""
        p = self.params
        occ = self.config.occ.astype(np.int64)
        nxt = np.roll(occ, -1)
        c = p.model.as_local_function().values(self.config.occ)
        n2 = float(p.n) ** 2
        fwd = n2 * c * p.p_n * occ * (1 - nxt)
        bwd = n2 * c * p.q_n * nxt * (1 - occ)
        return fwd, bwd

    def tree_consistency(self) -> float:
        """Max relative discrepancy between tree leaves and fresh rates."""
        fwd, bwd = self.bond_rates()
        w = fwd + bwd
        if self.fast:
            stored = np.zeros(self.params.L)
            stored[self.bonds10[: self.class_counts[0]]] = self.w10
            stored[self.bonds01[: self.class_counts[1]]] = self.w01
        else:
            stored = self.tree[self.P : self.P + self.params.L].copy()
        scale = max(w.max(), 1.0)
        return float(np.max(np.abs(stored - w)) / scale)

    def set_integrands(self, wA: np.ndarray, wI: np.ndarray,
                       th: ThermoFunctions, h: LocalFunction):
        """Register bond-weight tables for the exact A- and I-integrals.

        wA[x] multiplies V_f at x, wI[x] multiplies the centered tau_x h.
        Accumulators restart from the current values; call once per
        static-frame experiment.
        """
        p = self.params
        r = p.model.r
        w = p.model.window_width
        vf = np.empty(2 ** w)
        hc = np.empty(2 ** w)
        hw = h.width
        if h.start < -r or h.start + hw > r + 2:
            raise ValueError("h support must fit the rate window")
        off = h.start + r
        for bits in range(2 ** w):
            s0 = (bits >> r) & 1
            s1 = (bits >> (r + 1)) & 1
            vf[bits] = (p.a * p.model.c_table[bits] * (s1 - s0) ** 2 / 2.0
                        - p.a * th.beta
                        - p.a * th.beta_prime * (s0 - p.rho))
            hc[bits] = h.table[(bits >> off) & (2 ** hw - 1)] - th.phi_h
        self.use_ai = True
        self.wA = np.ascontiguousarray(wA, dtype=np.float64)
        self.wI = np.ascontiguousarray(wI, dtype=np.float64)
        self.vf_table = vf
        self.hc_table = hc
        self.freg[4] = 0.0
        self.freg[5] = 0.0
        self._refresh_sums()

    def _refresh_sums(self):
        occ = self.config.occ
        L = self.params.L
        if self.fast:
            K._refresh_sums(occ, L, self.wA, self.wI,
                            self.vf_table, self.hc_table, self.freg)
        else:
            K._refresh_sums_general(occ, L, self.params.model.r,
                                    self.wA, self.wI,
                                    self.vf_table, self.hc_table, self.freg)

    def enable_event_log(self, capacity: int = 1 << 16):
        self.log_on = True
        self.ev_t = np.empty(capacity)
        self.ev_b = np.empty(capacity, dtype=np.int32)
        self.ev_d = np.empty(capacity, dtype=np.int8)

    def add_observer(self, fn):
        """fn(time, bond, direction) called for each logged jump."""
        if not self.log_on:
            self.enable_event_log()
        self.observers.append(fn)

    def drain_events(self) -> list[JumpEvent]:
        m = int(self.ireg[2])
        events = [JumpEvent(float(self.ev_t[i]), int(self.ev_b[i]),
                            int(self.ev_d[i])) for i in range(m)]
        self.ireg[2] = 0
        return events

    def _kernel(self, t_target: float, max_events: int) -> int:
        L = self.params.L
        if self.fast:
            return K.run_fast(
                self.config.occ, L, self.w10, self.w01,
                self.bonds10, self.pos10, self.bonds01, self.pos01,
                self.class_counts,
                self.rng, self.freg, self.ireg, self.counters,
                self.use_ai,
                self.wA if self.use_ai else _zeros(L),
                self.wI if self.use_ai else _zeros(L),
                self.vf_table if self.use_ai else _zeros(4),
                self.hc_table if self.use_ai else _zeros(4),
                t_target, max_events, self.rebuild_every,
                self.log_on, self.ev_t, self.ev_b, self.ev_d)
        p = self.params
        w = 2 ** p.model.window_width
        return K.run_tree(
            self.config.occ, L, self.P, self.tree, p.model.r,
            p.model.c_table, p.n ** 2 * p.p_n, p.n ** 2 * p.q_n,
            self.rng, self.freg, self.ireg, self.counters,
            self.use_ai,
            self.wA if self.use_ai else _zeros(L),
            self.wI if self.use_ai else _zeros(L),
            self.vf_table if self.use_ai else _zeros(w),
            self.hc_table if self.use_ai else _zeros(w),
            t_target, max_events, self.rebuild_every,
            self.log_on, self.ev_t, self.ev_b, self.ev_d)

    def _flush_events(self):
        if self.log_on and self.observers:
            for ev in self.drain_events():
                for fn in self.observers:
                    fn(ev.time, ev.bond, ev.direction)
        elif self.log_on:
            pass  # caller reads drain_events explicitly
        return


def _zeros(k):
    return np.zeros(k)


def init(params: SimParams, *, config: Configuration | None = None,
         seed=None, validate: bool = True,
         fluctuation_mode: bool = False) -> EngineState:
    """Build an engine state at t=0 sampled from nu_rho (or a given config)."""
    if validate:
        validate_model(params.model)
    if fluctuation_mode and params.rho in (0.0, 1.0):
        raise ValueError("rho in {0,1} is degenerate for fluctuation runs")
    if config is None:
        config = new_bernoulli_config(params.L, params.rho,
                                      params.seed if seed is None else seed)
    if config.L != params.L:
        raise ValueError("configuration size must equal M*n")
    seed_words = np.random.SeedSequence(params.seed).generate_state(4, np.uint64)
    rng = K.seed_rng(seed_words)
    return _build_state(params, config, rng)


def _build_state(params: SimParams, config: Configuration,
                 rng: np.ndarray) -> EngineState:
    L = params.L
    freg = np.zeros(8)
    freg[1] = -1.0  # next-event time not yet drawn
    ireg = np.zeros(4, dtype=np.int64)
    counters = np.zeros(L, dtype=np.int64)
    fast = params.model.is_constant() and params.model.r == 0
    st = EngineState(params, config, rng, freg, ireg, counters, fast)
    n2 = float(params.n) ** 2
    if fast:
        c0 = float(params.model.c_table[0])
        st.w10 = n2 * c0 * params.p_n
        st.w01 = n2 * c0 * params.q_n
        st.bonds10 = np.empty(L, dtype=np.int64)
        st.pos10 = np.empty(L, dtype=np.int64)
        st.bonds01 = np.empty(L, dtype=np.int64)
        st.pos01 = np.empty(L, dtype=np.int64)
        st.class_counts = np.zeros(2, dtype=np.int64)
        K.build_classes(config.occ, L, st.bonds10, st.pos10,
                        st.bonds01, st.pos01, st.class_counts)
    else:
        P = 1
        while P < L:
            P <<= 1
        st.P = P
        st.tree = np.zeros(2 * P)
        K.build_tree(config.occ, L, P, st.tree, params.model.r,
                     params.model.c_table, n2 * params.p_n, n2 * params.q_n)
    return st


def step(state: EngineState) -> JumpEvent | None:
    """Execute exactly one jump; None signals a frozen configuration."""
    if state.total_rate <= 0.0:
        return None
    log_was_on = state.log_on
    if not log_was_on:
        state.enable_event_log(4)
    mark = int(state.ireg[2])
    status = state._kernel(np.inf, state.event_count + 1)
    if status == K.STATUS_FROZEN:
        return None
    ev = JumpEvent(float(state.ev_t[mark]), int(state.ev_b[mark]),
                   int(state.ev_d[mark]))
    if not log_was_on:
        state.log_on = False
        state.ireg[2] = 0
        state.ev_t = np.empty(0)
        state.ev_b = np.empty(0, dtype=np.int32)
        state.ev_d = np.empty(0, dtype=np.int8)
    else:
        state._flush_events()
    return ev


def run_until(state: EngineState, t_target: float) -> EngineState:
    """Advance to the exact field time t_target."""
    if t_target < state.t:
        raise ValueError("t_target must not precede the current time")
    while True:
        status = state._kernel(float(t_target), np.iinfo(np.int64).max)
        state._flush_events()
        if status == K.STATUS_LOG_FULL:
            if not state.observers:
                # caller is accumulating raw events; grow the buffers
                for name in ("ev_t", "ev_b", "ev_d"):
                    arr = getattr(state, name)
                    grown = np.empty(max(2 * len(arr), 1024), dtype=arr.dtype)
                    grown[: len(arr)] = arr
                    setattr(state, name, grown)
            continue
        if status in (K.STATUS_OK, K.STATUS_FROZEN):
            break
    return state


def trajectory_seed_words(master_seed: int, index: int) -> np.ndarray:
    ss = np.random.SeedSequence(master_seed, spawn_key=(index,))
    return ss.generate_state(8, np.uint64)


def spawn_trajectory(params: SimParams, index: int, *,
                     validate: bool = False,
                     config: Configuration | None = None) -> EngineState:
    """Independent, individually reproducible trajectory #index.

    The per-trajectory stream is derived from (master seed, index) with
    numpy's SeedSequence spawn keys; the first four words seed the kernel
    RNG, the rest seed the initial-configuration draw.
    """
    if index < 0:
        raise ValueError("index must be >= 0")
    if validate:
        validate_model(params.model)
    words = trajectory_seed_words(params.seed, index)
    if config is None:
        config_rng = np.random.default_rng(words[4:])
        config = new_bernoulli_config(params.L, params.rho, config_rng)
    rng = K.seed_rng(words[:4])
    return _build_state(params, config, rng)
