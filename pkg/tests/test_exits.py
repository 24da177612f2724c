import warnings

import numpy as np
import pytest

from selfstab.domain import Ellipse, Interval
from selfstab.exits import (exit_statistics, kramers_fit, read_exit_records,
                            read_kramers_series, run_exit_trials,
                            write_exit_records, write_kramers_series)
from selfstab.noise import NoisePlan
from selfstab.scenarios import ellipse_model, interval_switch_model
from selfstab.sde import Classical, Limiting, Particle

from helpers import linear_model


@pytest.fixture(scope="module")
def symmetric_records():
    m = linear_model()
    plan = NoisePlan(base_seed=5, dt=1e-3)
    return run_exit_trials(m, Classical(), Interval(-1.0, 1.0), [0.0], 0.4,
                           1e-3, 400, 200.0, plan), plan


def test_zero_noise_from_equilibrium_censors_everything():
    m = linear_model()
    plan = NoisePlan(base_seed=1, dt=1e-3)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        records = run_exit_trials(m, Classical(), Interval(-1.0, 1.0), [0.0],
                                  0.0, 1e-3, 5, 2.0, plan)
    assert all(r.censored for r in records)
    assert any("censored" in str(w.message) for w in caught)
    stats = exit_statistics(records)
    assert stats.n_censored == 5
    assert np.isnan(stats.mean_exit_time)
    assert stats.mean_lower_bound == pytest.approx(2.0)


def test_symmetric_well_exits_balanced(symmetric_records):
    records, _ = symmetric_records
    stats = exit_statistics(records, neighborhoods={"left": (-1.0, 0.1),
                                                    "right": (1.0, 0.1)})
    assert stats.n_censored == 0
    p_left = stats.neighborhood_probability["left"]
    se = np.sqrt(0.25 / stats.n_trials)
    assert abs(p_left - 0.5) <= 3 * se
    assert stats.neighborhood_probability["left"] \
        + stats.neighborhood_probability["right"] == pytest.approx(1.0)


def test_exit_points_sit_on_boundary(symmetric_records):
    records, _ = symmetric_records
    dom = Interval(-1.0, 1.0)
    for r in records:
        if not r.censored:
            assert abs(float(dom.g(r.exit_point))) <= 1e-6
            assert r.exit_time <= 200.0


def test_exit_reruns_are_bitwise_identical(symmetric_records):
    records, plan = symmetric_records
    m = linear_model()
    again = run_exit_trials(m, Classical(), Interval(-1.0, 1.0), [0.0], 0.4,
                            1e-3, 400, 200.0, plan)
    for a, b in zip(records, again):
        assert a.exit_time == b.exit_time
        assert np.array_equal(a.exit_point, b.exit_point)
        assert a.boundary_param == b.boundary_param
        assert a.censored == b.censored


def test_exit_csv_round_trip(symmetric_records, tmp_path):
    records, _ = symmetric_records
    path = tmp_path / "records.csv"
    write_exit_records(records, path, dim=1)
    header = path.read_text().splitlines()[0]
    assert header == "trial,seed,exit_time,exit_x1,boundary_param,censored"
    back = read_exit_records(path)
    assert len(back) == len(records)
    for a, b in zip(records, back):
        assert a.trial == b.trial
        assert a.exit_time == b.exit_time
        assert np.array_equal(a.exit_point, b.exit_point)
        assert a.censored == b.censored


def test_exit_requires_interior_start():
    m = linear_model()
    plan = NoisePlan(base_seed=1, dt=1e-3)
    with pytest.raises(ValueError):
        run_exit_trials(m, Classical(), Interval(-1.0, 1.0), [1.5], 0.1,
                        1e-3, 2, 1.0, plan)


def test_statistics_point_mass():
    from selfstab.exits import ExitRecord
    records = [ExitRecord(trial=i, seed=0, exit_time=5.0,
                          exit_point=np.array([1.0]), boundary_param=1.0,
                          censored=False) for i in range(10)]
    stats = exit_statistics(records, n_bins=4)
    assert stats.mean_exit_time == 5.0
    assert stats.median_exit_time == 5.0
    assert stats.stderr == 0.0
    assert stats.histogram_counts.sum() == 10
    assert np.count_nonzero(stats.histogram_counts) == 1
    with pytest.raises(ValueError):
        exit_statistics([])


def test_ellipse_classical_exits_near_poles():
    """Moderate-noise planar run: exits concentrate near (0, +-2) and
    split about evenly between the two."""
    m = ellipse_model()
    dom = Ellipse([0, 0], [1, 2])
    plan = NoisePlan(base_seed=9, dt=0.005)
    records = run_exit_trials(m, Classical(), dom, [0.0, 0.0], 0.55, 0.005,
                              200, 20000.0, plan)
    stats = exit_statistics(records, neighborhoods={
        "top": (np.pi / 2, 0.6), "bottom": (-np.pi / 2, 0.6),
        "right": (0.0, 0.6), "left": (np.pi, 0.6)})
    p = stats.neighborhood_probability
    assert stats.n_censored == 0
    assert p["top"] + p["bottom"] >= 0.9
    se = np.sqrt(0.25 / stats.n_trials)
    assert abs(p["top"] - p["bottom"]) <= 6 * se


def test_ellipse_stabilized_exits_move_to_x_axis():
    """With attraction on, exits shift to (+-1, 0); run at larger noise
    where the energy gap still favors the x ends."""
    m = ellipse_model()
    dom = Ellipse([0, 0], [1, 2])
    plan = NoisePlan(base_seed=10, dt=0.005)
    records = run_exit_trials(m, Limiting([0.0, 0.0]), dom, [0.0, 0.0], 2.5,
                              0.005, 200, 20000.0, plan)
    stats = exit_statistics(records, neighborhoods={
        "top": (np.pi / 2, 0.6), "bottom": (-np.pi / 2, 0.6),
        "right": (0.0, 0.6), "left": (np.pi, 0.6)})
    p = stats.neighborhood_probability
    assert p["right"] + p["left"] >= 0.6
    assert p["right"] + p["left"] > p["top"] + p["bottom"]


def test_kramers_fit_exact_exponential():
    fit = kramers_fit([(e, np.exp(1.45 / e), 0.0) for e in (0.2, 0.25, 0.3)])
    assert fit.q_estimate == pytest.approx(1.45, abs=1e-12)
    assert fit.intercept == pytest.approx(0.0, abs=1e-12)
    assert fit.max_abs_residual <= 1e-12


def test_kramers_fit_prefactor_goes_to_intercept():
    fit = kramers_fit([(e, 7.0 * np.exp(2.0 / e), 0.0)
                       for e in (0.2, 0.25, 0.3, 0.4)])
    assert fit.q_estimate == pytest.approx(2.0, abs=1e-12)
    assert fit.intercept == pytest.approx(np.log(7.0), abs=1e-12)


def test_kramers_fit_weighted():
    rows = [(0.2, np.exp(1.0 / 0.2), 0.5), (0.25, np.exp(1.0 / 0.25), 0.5),
            (1 / 3, np.exp(3.0), 0.5), (0.5, np.exp(2.0), 0.5)]
    fit = kramers_fit(rows)
    assert fit.q_estimate == pytest.approx(1.0, rel=1e-10)


def test_kramers_fit_validations():
    with pytest.raises(ValueError):
        kramers_fit([(0.2, 1.0, 0.0), (0.2, 1.0, 0.0), (0.3, 2.0, 0.0)])
    with pytest.raises(ValueError):
        kramers_fit([(0.2, -1.0, 0.0), (0.3, 1.0, 0.0), (0.4, 1.0, 0.0)])


def test_kramers_csv_round_trip(tmp_path):
    path = tmp_path / "series.csv"
    rows = [(0.25, 400, 0, 123.4, 5.6), (0.3, 400, 2, 45.6, 1.2)]
    write_kramers_series(rows, path)
    header = path.read_text().splitlines()[0]
    assert header == "epsilon,n_trials,n_censored,mean_exit_time,stderr,eps_log_mean"
    series = read_kramers_series(path)
    assert series[0] == pytest.approx((0.25, 123.4, 5.6))
    assert series[1] == pytest.approx((0.3, 45.6, 1.2))


def test_particle_exit_records_tagged_particle_only():
    m = linear_model()
    plan = NoisePlan(base_seed=17, dt=2e-3)
    records = run_exit_trials(m, Particle(16), Interval(-1.0, 1.0), [0.0],
                              0.35, 2e-3, 8, 100.0, plan)
    assert len(records) == 8
    dom = Interval(-1.0, 1.0)
    for r in records:
        if not r.censored:
            assert abs(float(dom.g(r.exit_point))) <= 1e-6


def test_particle_exit_matches_classical_for_single_particle():
    m = linear_model()
    plan = NoisePlan(base_seed=23, dt=1e-3)
    classical = run_exit_trials(m, Classical(), Interval(-1.0, 1.0), [0.0],
                                0.4, 1e-3, 20, 100.0, plan)
    tagged = run_exit_trials(m, Particle(1), Interval(-1.0, 1.0), [0.0],
                             0.4, 1e-3, 20, 100.0, plan)
    for a, b in zip(classical, tagged):
        assert a.exit_time == b.exit_time
        assert np.array_equal(a.exit_point, b.exit_point)
