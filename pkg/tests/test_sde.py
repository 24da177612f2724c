import numpy as np
import pytest

from selfstab.drift import DriftGridSpec, solve_self_consistent_drift
from selfstab.flow import PathSample, integrate_flow
from selfstab.model import estimate_constants
from selfstab.noise import NoisePlan
from selfstab.sde import (BlowupError, Classical, Frozen, Limiting, Particle,
                          Tracking, empirical_moment, moment_bound_check,
                          simulate, simulate_ensemble)

from helpers import euler_ou_variance, linear_model, ou_selfstab_variance


@pytest.fixture(scope="module")
def ou():
    return linear_model()


def test_single_particle_matches_classical(ou):
    plan = NoisePlan(base_seed=11, dt=1e-3)
    for trial in range(10):
        classical = simulate(ou, Classical(), [1.0], 0.1, 1.0, plan, trial=trial)
        tagged = simulate(ou, Particle(1), [1.0], 0.1, 1.0, plan, trial=trial)[0]
        assert np.max(np.abs(classical.states - tagged.states)) <= 1e-12


def test_zero_noise_matches_flow(ou):
    plan = NoisePlan(base_seed=0, dt=1e-3)
    em = simulate(ou, Classical(), [1.0], 0.0, 1.0, plan)
    rk = integrate_flow(ou, [1.0], 1.0, dt=1e-3)
    # Euler vs fourth order: agreement within O(dt)
    assert np.max(np.abs(em.states - rk.states)) < 5e-4


def test_limiting_mode_zero_noise_rate(ou):
    plan = NoisePlan(base_seed=0, dt=1e-3)
    path = simulate(ou, Limiting([0.0]), [1.0], 0.0, 1.0, plan)
    expect = np.exp(-2.0 * path.times)
    assert np.max(np.abs(path.states[:, 0] - expect)) < 2e-3


def test_tracking_mode_follows_flow(ou):
    flow = integrate_flow(ou, [1.0], 2.0, dt=1e-3)
    plan = NoisePlan(base_seed=1, dt=1e-3)
    path = simulate(ou, Tracking(flow, s=0.5), [1.0], 0.0, 1.0, plan)
    assert np.all(np.isfinite(path.states))
    with pytest.raises(ValueError):
        simulate(ou, Tracking(flow, s=1.5), [1.0], 0.0, 1.0, plan)


def test_frozen_mode_horizon_guard(ou):
    field, _ = solve_self_consistent_drift(
        ou, [1.0], 0.05, 1.0, grid=DriftGridSpec(n_times=11, nodes_per_axis=9),
        M=64, noise_seed=3, tol=5e-3, dt=1e-3)
    plan = NoisePlan(base_seed=2, dt=1e-3)
    path = simulate(ou, Frozen(field, s=0.25), [1.0], 0.05, 0.5, plan)
    assert path.states.shape[0] == 501
    with pytest.raises(ValueError):
        simulate(ou, Frozen(field, s=0.8), [1.0], 0.05, 0.5, plan)


def test_seed_determinism_bitwise(ou):
    plan = NoisePlan(base_seed=33, dt=1e-3)
    a = simulate(ou, Classical(), [1.0], 0.2, 1.0, plan, trial=5)
    b = simulate(ou, Classical(), [1.0], 0.2, 1.0, plan, trial=5)
    assert np.array_equal(a.states, b.states)
    c = simulate(ou, Classical(), [1.0], 0.2, 1.0, plan, trial=6)
    assert not np.array_equal(a.states, c.states)


def test_ensemble_matches_per_trial_bitwise(ou):
    plan = NoisePlan(base_seed=8, dt=1e-3)
    times, states = simulate_ensemble(ou, Classical(), [1.0], 0.15, 1.0, plan,
                                      range(6))
    for trial in (0, 3, 5):
        single = simulate(ou, Classical(), [1.0], 0.15, 1.0, plan, trial=trial)
        assert np.array_equal(states[trial], single.states)


def test_blowup_guard():
    from helpers import expanding_model
    plan = NoisePlan(base_seed=0, dt=1e-2)
    with pytest.raises(BlowupError):
        simulate(expanding_model(), Classical(), [1.0], 0.0, 60.0, plan, guard=1e4)


def test_empirical_moment_of_reference_is_zero(ou):
    ref = integrate_flow(ou, [1.0], 1.0, dt=1e-2)
    stack = np.repeat(ref.states[None], 5, axis=0)
    curve = empirical_moment(stack, ref, order=2)
    assert np.all(curve.values == 0.0)
    assert curve.values[0] == 0.0  # deterministic start


def test_empirical_moment_grid_mismatch(ou):
    ref = integrate_flow(ou, [1.0], 1.0, dt=1e-2)
    other = integrate_flow(ou, [1.0], 1.0, dt=2e-2)
    with pytest.raises(ValueError):
        empirical_moment([other], ref, order=2)


def test_ou_second_moment_matches_variance_ode(ou):
    """Frozen-mode ensemble around the flow: the deviation variance
    solves vdot = -4v + eps, plateau eps/4."""
    eps = 0.1
    field, _ = solve_self_consistent_drift(
        ou, [1.0], eps, 3.0, grid=DriftGridSpec(n_times=31, nodes_per_axis=25),
        M=3000, noise_seed=5, tol=2e-3, dt=1e-3)
    plan = NoisePlan(base_seed=77, dt=1e-3)
    times, states = simulate_ensemble(ou, Frozen(field), [1.0], eps, 3.0, plan,
                                      range(3000), keep_every=50)
    ref_states = integrate_flow(ou, [1.0], 3.0, dt=1e-3).states[::50]
    ref = PathSample(t0=0.0, dt=0.05, states=ref_states)
    curve = empirical_moment(states, ref, order=2)
    exact = ou_selfstab_variance(curve.times, rate=1.0, phi_slope=1.0, epsilon=eps)
    # within 3 standard errors plus a small Euler/field bias allowance
    slack = 3.0 * curve.stderr + 2e-3
    assert np.all(np.abs(curve.values - exact) <= slack)
    assert curve.values[-1] == pytest.approx(eps / 4.0, abs=3 * curve.stderr[-1] + 2e-3)


def test_moment_bounds_ou(ou):
    eps = 0.1
    constants = estimate_constants(ou, [(-3, 3)], r0_candidate=0.5)
    field, _ = solve_self_consistent_drift(
        ou, [1.0], eps, 2.0, grid=DriftGridSpec(n_times=21, nodes_per_axis=17),
        M=2000, noise_seed=5, tol=2e-3, dt=1e-3)
    plan = NoisePlan(base_seed=13, dt=1e-3)
    times, states = simulate_ensemble(ou, Frozen(field), [1.0], eps, 2.0, plan,
                                      range(2000), keep_every=40)
    ref = PathSample(t0=0.0, dt=0.04,
                     states=integrate_flow(ou, [1.0], 2.0, dt=1e-3).states[::40])
    curve = empirical_moment(states, ref, order=2)
    report = moment_bound_check(ou, constants, curve, eps, global_convexity=True)
    assert report.passed
    # the plateau bound eps*d/(2 K_V) = 0.05 sits above the true 0.025
    assert report.uniform_bound == pytest.approx(0.05, abs=1e-9)


def test_moment_bounds_trivial_zero_noise(ou):
    constants = estimate_constants(ou, [(-3, 3)], r0_candidate=0.5)
    ref = integrate_flow(ou, [1.0], 1.0, dt=1e-2)
    stack = np.repeat(ref.states[None], 4, axis=0)
    curve = empirical_moment(stack, ref, order=2)
    report = moment_bound_check(ou, constants, curve, 0.0, global_convexity=True)
    assert report.passed


def test_weak_convergence_against_discrete_oracle(ou):
    """Halving dt moves the terminal second moment by O(dt); both
    resolutions agree with the exact discrete-scheme variance."""
    eps = 0.2
    T = 1.0
    for dt in (0.01, 0.005):
        plan = NoisePlan(base_seed=99, dt=dt)
        times, states = simulate_ensemble(ou, Limiting([0.0]), [0.0], eps, T,
                                          plan, range(4000),
                                          keep_every=int(round(T / dt)))
        m2 = np.mean(states[:, -1, 0] ** 2)
        exact = euler_ou_variance(int(round(T / dt)), dt, rate=2.0, epsilon=eps)[-1]
        se = np.std(states[:, -1, 0] ** 2, ddof=1) / np.sqrt(states.shape[0])
        assert m2 == pytest.approx(exact, abs=3 * se)
    # the scheme bias itself is O(dt)
    v1 = euler_ou_variance(100, 0.01, 2.0, eps)[-1]
    v2 = euler_ou_variance(200, 0.005, 2.0, eps)[-1]
    v_exact = eps / 4.0 * (1 - np.exp(-4.0 * T))
    assert abs(v1 - v_exact) > abs(v2 - v_exact)
    assert abs(v2 - v_exact) < 0.01 * v_exact


def test_propagation_of_chaos_smoke(ou):
    """Interacting particles (N = 2000) vs the frozen-field ensemble:
    mean and deviation variance at t = 1 agree within 3 combined
    standard errors."""
    eps = 0.1
    N = 2000
    dt = 0.01
    plan = NoisePlan(base_seed=55, dt=dt)
    paths = simulate(ou, Particle(N), [1.0], eps, 1.0, plan, trial=0)
    cloud = np.stack([p.final for p in paths])[:, 0]

    field, _ = solve_self_consistent_drift(
        ou, [1.0], eps, 1.0, grid=DriftGridSpec(n_times=21, nodes_per_axis=17),
        M=2000, noise_seed=5, tol=2e-3, dt=dt)
    plan2 = NoisePlan(base_seed=56, dt=dt)
    _, states = simulate_ensemble(ou, Frozen(field), [1.0], eps, 1.0, plan2,
                                  range(2000), keep_every=100)
    frozen_cloud = states[:, -1, 0]

    for stat in (np.mean, np.var):
        a, b = stat(cloud), stat(frozen_cloud)
        se = np.sqrt(np.var(cloud) / N + np.var(frozen_cloud) / len(frozen_cloud))
        if stat is np.var:
            se *= 2.0  # rough delta-method inflation for the variance
        assert abs(a - b) <= 3 * se + 1e-3
