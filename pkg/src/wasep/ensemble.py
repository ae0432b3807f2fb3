"""Reproducible trajectory ensembles.

Trajectory #i is fully determined by (master seed, i), so scheduling cannot
change any result: workers compute per-index results independently, and the
single-threaded reducer consumes them in index order.  Merged statistics are
therefore bitwise identical for any worker count.

Parallel runs use fork-start multiprocessing; the task callable is inherited
by the children (it may close over non-picklable test functions), only indices
and per-trajectory results cross process boundaries.
"""

from __future__ import annotations

import multiprocessing
import traceback
from dataclasses import dataclass, field

import numpy as np

from .analytics import EnsembleAccumulator
from .engine import SimParams, require_gradient, run_until, spawn_trajectory
from .observables import (
    CurrentTally,
    FrameShift,
    ObservableSeries,
    TestFunction,
    a_term_weights,
    density_field,
    i_term_weights,
)

_TASK = None


def _init_worker(task):
    global _TASK
    _TASK = task


def _run_index(i):
    try:
        return i, True, _TASK(i)
    except Exception:
        return i, False, traceback.format_exc()


def run_trajectories(task, n_traj: int, workers: int = 1, progress=None):
    """Evaluate task(i) for i in range(n_traj); results come back in index order.

    Returns (results, failures) where results[i] is None on failure and
    failures lists (index, traceback string).  Failed indices never abort the
    run: partial ensembles stay usable.
    """
    results = [None] * n_traj
    failures = []
    if workers <= 1:
        for i in range(n_traj):
            try:
                results[i] = task(i)
            except Exception:
                failures.append((i, traceback.format_exc()))
            if progress is not None:
                progress(i)
        return results, failures
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(workers, _init_worker, (task,)) as pool:
        done = 0
        for i, ok, payload in pool.imap_unordered(_run_index, range(n_traj)):
            if ok:
                results[i] = payload
            else:
                failures.append((i, payload))
            if progress is not None:
                progress(done)
            done += 1
    failures.sort()
    return results, failures


def reduce_features(results, names) -> EnsembleAccumulator:
    """Fold per-trajectory feature vectors in index order (partition invariant)."""
    acc = EnsembleAccumulator(names)
    for v in results:
        if v is not None:
            acc.add(v)
    return acc


@dataclass
class ObservationPlan:
    """What one trajectory should record on a common field-time grid.

    times must start at 0; column names are 'Y:<field>', 'Jfix:<bond>',
    'Jmov:<bond>', plus exact accumulators 'A' and 'I' when an integral test
    function is given (static frame only: the in-kernel accumulators use
    time-independent site weights).
    """

    times: np.ndarray
    fields: dict = field(default_factory=dict)   # name -> TestFunction
    moving_frame: bool = False
    bonds: tuple = ()
    integral_field: TestFunction | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if len(self.times) == 0 or self.times[0] != 0.0:
            self.times = np.concatenate([[0.0], self.times])
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


def run_trajectory(params: SimParams, index: int,
                   plan: ObservationPlan) -> ObservableSeries:
    """Simulate trajectory #index and sample the plan's observables."""
    h = require_gradient(params.model)
    th = params.thermo(h)
    frame = (FrameShift.from_params(params, th) if plan.moving_frame
             else FrameShift.static(params))
    st = spawn_trajectory(params, index)
    if plan.integral_field is not None:
        if plan.moving_frame and frame.velocity != 0.0:
            raise ValueError("exact integral accumulators need a static frame")
        wA = a_term_weights(plan.integral_field, params)
        wI = i_term_weights(plan.integral_field, params)
        st.set_integrands(wA, wI, th, h)
    tally = CurrentTally(st, plan.bonds, frame) if plan.bonds else None
    cols = {f"Y:{name}": [] for name in plan.fields}
    for b in plan.bonds:
        cols[f"Jfix:{b}"] = []
        cols[f"Jmov:{b}"] = []
    if plan.integral_field is not None:
        cols["A"] = []
        cols["I"] = []

    def record(t):
        for name, H in plan.fields.items():
            cols[f"Y:{name}"].append(density_field(st.config, H, t, params,
                                                   frame))
        if tally is not None:
            for b in plan.bonds:
                cols[f"Jfix:{b}"].append(tally.current_fixed(b, t))
                cols[f"Jmov:{b}"].append(tally.current_moving(b, t))
        if plan.integral_field is not None:
            cols["A"].append(st.a_integral)
            cols["I"].append(st.i_integral)

    record(0.0)
    for t in plan.times[1:]:
        run_until(st, float(t))
        if tally is not None:
            tally.snapshot()
        record(float(t))
    series = ObservableSeries(index, plan.times.copy())
    for name, vals in cols.items():
        series.add(name, vals)
    return series


class SeriesTask:
    """Picklable-by-fork task wrapper: index -> ObservableSeries."""

    def __init__(self, params: SimParams, plan: ObservationPlan):
        self.params = params
        self.plan = plan

    def __call__(self, index: int) -> ObservableSeries:
        return run_trajectory(self.params, index, self.plan)


def series_features(series_list, extract, names,
                    ) -> EnsembleAccumulator:
    """Accumulate extract(series) -> vector over an index-ordered series list."""
    acc = EnsembleAccumulator(names)
    for s in series_list:
        if s is not None:
            acc.add(extract(s))
    return acc
