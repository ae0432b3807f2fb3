"""Ensemble scheduling: partition invariance, failure isolation, plans."""

import numpy as np
import pytest

from wasep.engine import SimParams
from wasep.ensemble import (
    ObservationPlan,
    SeriesTask,
    reduce_features,
    run_trajectories,
    run_trajectory,
    series_features,
)
from wasep.lattice import ssep
from wasep.observables import gaussian_bump


def _params(**kw):
    base = dict(model=ssep(), n=16, gamma=1.0, a=1.0, rho=0.5, M=4, seed=55)
    base.update(kw)
    return SimParams(**base)


# ---------------------------------------------------------------- scheduling

def _square(i):
    return [float(i * i)]


def test_run_trajectories_serial_matches_parallel():
    serial, f1 = run_trajectories(_square, 12, workers=1)
    parallel, f2 = run_trajectories(_square, 12, workers=3)
    assert not f1 and not f2
    assert serial == parallel


def _flaky(i):
    if i in (2, 5):
        raise RuntimeError("boom")
    return [float(i)]


@pytest.mark.parametrize("workers", [1, 2])
def test_failures_are_isolated(workers):
    results, failures = run_trajectories(_flaky, 8, workers=workers)
    assert [i for i, _ in failures] == [2, 5]
    assert results[2] is None and results[5] is None
    assert results[3] == [3.0]
    assert all("boom" in msg for _, msg in failures)


def test_reduce_features_skips_failures_and_is_partition_invariant():
    results, _ = run_trajectories(_flaky, 8, workers=1)
    acc = reduce_features(results, ["x"])
    assert acc.count == 6
    vals = [r[0] for r in results if r is not None]
    assert acc.mean("x") == pytest.approx(np.mean(vals), rel=1e-14)


def test_bitwise_identical_statistics_across_worker_counts():
    params = _params()
    plan = ObservationPlan(np.array([0.1, 0.2]),
                           {"H": gaussian_bump(0.3, cutoff=6.0)})
    task = SeriesTask(params, plan)
    accs = []
    for workers in (1, 2, 3):
        results, failures = run_trajectories(task, 6, workers=workers)
        assert not failures
        accs.append(series_features(
            results, lambda s: [s.values["Y:H"][-1]], ["y"]))
    assert accs[0].mean("y") == accs[1].mean("y") == accs[2].mean("y")
    assert accs[0].cov()[0, 0] == accs[1].cov()[0, 0] == accs[2].cov()[0, 0]


# --------------------------------------------------------------------- plans

def test_plan_prepends_time_zero_and_validates():
    plan = ObservationPlan(np.array([0.5, 1.0]))
    assert plan.times[0] == 0.0 and len(plan.times) == 3
    already = ObservationPlan(np.array([0.0, 1.0]))
    assert len(already.times) == 2
    with pytest.raises(ValueError):
        ObservationPlan(np.array([0.5, 0.5]))


def test_run_trajectory_columns_and_current_identity():
    params = _params(a=0.0)
    H = gaussian_bump(0.3, cutoff=6.0)
    plan = ObservationPlan(np.array([0.25, 0.5]), {"H": H}, bonds=(0, 17),
                           integral_field=H)
    series = run_trajectory(params, 0, plan)
    expected = {"Y:H", "Jfix:0", "Jmov:0", "Jfix:17", "Jmov:17", "A", "I"}
    assert set(series.values) == expected
    # a = 0: the moving frame is static, so moving == fixed currents
    assert np.array_equal(series.values["Jmov:0"], series.values["Jfix:0"])
    assert np.array_equal(series.values["Jmov:17"], series.values["Jfix:17"])
    assert np.all(series.values["A"] == 0.0)  # integrand scales with a
    assert series.values["I"][0] == 0.0 and series.values["I"][-1] != 0.0


def test_run_trajectory_is_reproducible():
    params = _params()
    plan = ObservationPlan(np.array([0.25]),
                           {"H": gaussian_bump(0.3, cutoff=6.0)})
    s1 = run_trajectory(params, 4, plan)
    s2 = run_trajectory(params, 4, plan)
    assert np.array_equal(s1.values["Y:H"], s2.values["Y:H"])


def test_moving_frame_rejects_exact_integrals():
    params = _params(rho=0.3)  # drift velocity a*beta'(0.3) != 0
    H = gaussian_bump(0.3, cutoff=6.0)
    plan = ObservationPlan(np.array([0.25]), {"H": H}, moving_frame=True,
                           integral_field=H)
    with pytest.raises(ValueError):
        run_trajectory(params, 0, plan)
