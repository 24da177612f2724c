import numpy as np
import pytest

from selfstab.drift import (DriftGridSpec, EnsembleSnapshot, field_difference,
                            gamma_apply, initial_drift_field, lambda_norm,
                            limit_drift, load_drift_field, save_drift_field,
                            solve_self_consistent_drift)
from selfstab.flow import integrate_flow
from selfstab.model import interaction_force
from selfstab.noise import NoisePlan
from selfstab.sde import Particle, simulate

from helpers import linear_model


@pytest.fixture(scope="module")
def ou_field():
    """Converged self-consistent drift for the linear oracle.

    Exact answer: b(t, x) = x - e^{-t}, because the mean follows the
    noiseless flow when the attraction is linear.
    """
    m = linear_model()
    field, log = solve_self_consistent_drift(
        m, [1.0], epsilon=0.1, horizon=2.0,
        grid=DriftGridSpec(n_times=41, nodes_per_axis=33),
        M=4000, noise_seed=7, tol=2e-3, dt=1e-3)
    return m, field, log


def test_drift_eval_exact_on_nodes(ou_field):
    m, field, _ = ou_field
    nodes = field.nodes()
    for i in (0, 10, 40):
        t = field.times[i]
        got = field.eval(float(t), nodes)
        assert np.allclose(got, field.values[i].reshape(-1, 1), rtol=0, atol=1e-14)


def test_drift_eval_tail_fallback_linear(ou_field):
    # outside the box the fallback F(x - mean_t) is exact for linear F
    m, field, _ = ou_field
    t = 1.0
    x = np.array([50.0])
    mean = field.eval(t, x) - interaction_force(m, x - _mean_at(field, t))
    assert np.allclose(mean, 0.0, atol=1e-12)


def _mean_at(field, t):
    i0 = int(t / field.t_step)
    i0 = min(i0, len(field.times) - 2)
    w = t / field.t_step - i0
    return (1 - w) * field.ensemble_mean[i0] + w * field.ensemble_mean[i0 + 1]


def test_drift_eval_time_bounds(ou_field):
    _, field, _ = ou_field
    with pytest.raises(ValueError):
        field.eval(field.horizon + 1.0, np.array([0.0]))
    with pytest.raises(ValueError):
        field.eval(-0.5, np.array([0.0]))


def test_lambda_norm_constant_field():
    m = linear_model()
    flow = integrate_flow(m, [0.0], 1.0, dt=1e-2)
    base = initial_drift_field(m, flow, 0.0,
                               DriftGridSpec(n_times=5, nodes_per_axis=9,
                                             box=((-3.0, 3.0),)))
    const = field_difference(base, base)
    const.values[:] = 2.5
    assert lambda_norm(const, q=1) == pytest.approx(2.5)  # attained at x = 0
    const.values[:] = 0.0
    assert lambda_norm(const, q=1) == 0.0


def test_lambda_norm_linear_field_peak_at_one():
    # |x| / (1 + x^2) peaks at 1/2 on a grid containing x = 1
    m = linear_model()
    flow = integrate_flow(m, [0.0], 1.0, dt=1e-2)
    field = initial_drift_field(m, flow, 0.0,
                                DriftGridSpec(n_times=3, nodes_per_axis=13,
                                              box=((-3.0, 3.0),)))
    nodes = field.nodes()
    assert np.any(np.isclose(nodes[:, 0], 1.0))
    for i in range(len(field.times)):
        field.values[i] = nodes
    assert lambda_norm(field, q=1) == pytest.approx(0.5, abs=1e-12)


def test_gamma_noise_free_fixed_point():
    """At epsilon = 0 the small-noise limit drift reproduces itself up to
    the Euler discretization of the flow."""
    m = linear_model()
    flow = integrate_flow(m, [1.0], 1.0, dt=1e-3)
    b0 = initial_drift_field(m, flow, 0.0, DriftGridSpec(n_times=11, nodes_per_axis=17))
    b1, snaps = gamma_apply(m, b0, [1.0], 0.0, M=16, noise_seed=0, dt=1e-3)
    assert lambda_norm(field_difference(b1, b0)) < 5e-3  # O(dt) in the flow
    assert len(snaps) == 11
    assert isinstance(snaps[0], EnsembleSnapshot)


def test_gamma_two_identical_trajectories_at_zero_noise():
    m = linear_model()
    flow = integrate_flow(m, [1.0], 1.0, dt=1e-3)
    b0 = initial_drift_field(m, flow, 0.0, DriftGridSpec(n_times=11, nodes_per_axis=9))
    _, snaps = gamma_apply(m, b0, [1.0], 0.0, M=2, noise_seed=3, dt=1e-3)
    for snap in snaps:
        assert np.array_equal(snap.particles[0], snap.particles[1])


def test_gamma_ou_sample_mean_tracks_flow():
    """Driving with the exact drift b(t,x) = x - e^{-t} keeps the
    ensemble an OU cloud around e^{-t}; the tabulated output matches the
    input within Monte Carlo error 5/sqrt(M)."""
    m = linear_model()
    M = 4000
    flow = integrate_flow(m, [1.0], 2.0, dt=1e-3)
    exact = initial_drift_field(m, flow, 0.1, DriftGridSpec(n_times=21, nodes_per_axis=17))
    for i, t in enumerate(exact.times):
        exact.values[i] = exact.nodes() - np.exp(-t)
        exact.ensemble_mean[i] = np.exp(-t)
    out, snaps = gamma_apply(m, exact, [1.0], 0.1, M=M, noise_seed=5, dt=1e-3)
    err = np.max(np.abs(out.values - exact.values))
    assert err <= 5.0 / np.sqrt(M)


def test_gamma_rejects_bad_arguments(ou_field):
    m, field, _ = ou_field
    with pytest.raises(ValueError):
        gamma_apply(m, field, [1.0], -0.1, M=10, noise_seed=0)
    with pytest.raises(ValueError):
        gamma_apply(m, field, [1.0], 0.1, M=1, noise_seed=0)


def test_solver_converges_to_ou_oracle(ou_field):
    m, field, log = ou_field
    assert log.converged
    nodes = field.nodes()
    worst = 0.0
    for i, t in enumerate(field.times):
        exact = nodes[:, 0] - np.exp(-t)
        worst = max(worst, np.max(np.abs(field.values[i][:, 0] - exact)))
    assert worst <= 0.05


def test_solver_increments_monotone_after_second_sweep(ou_field):
    _, _, log = ou_field
    tail = log.increments[1:]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(tail, tail[1:]))


def test_solver_zero_noise_converges_immediately():
    m = linear_model()
    field, log = solve_self_consistent_drift(
        m, [1.0], epsilon=0.0, horizon=1.0,
        grid=DriftGridSpec(n_times=11, nodes_per_axis=9), M=8, noise_seed=1,
        tol=5e-3, dt=1e-3)
    assert log.converged
    assert log.iterations == 1


def test_solver_no_interaction_gives_zero_field():
    from selfstab.model import ModelSpec, RadialProfile

    def grad(x):
        return np.asarray(x, dtype=float)

    m = ModelSpec.gradient(1, lambda x: 0.5 * x[..., 0] ** 2, grad,
                           RadialProfile.polynomial([0.0]), growth_order=0)
    field, log = solve_self_consistent_drift(
        m, [1.0], epsilon=0.1, horizon=1.0,
        grid=DriftGridSpec(n_times=11, nodes_per_axis=9), M=64, noise_seed=2,
        tol=1e-9, dt=1e-3)
    assert log.iterations == 1
    assert np.all(field.values == 0.0)


def test_converged_field_dissipativity(ou_field):
    """Pairwise monotonicity of the converged drift in x, with Monte
    Carlo slack 10/sqrt(M)."""
    m, field, _ = ou_field
    slack = 10.0 / np.sqrt(4000)
    rng = np.random.default_rng(11)
    nodes = field.nodes()
    idx = rng.integers(0, len(nodes), size=(1000, 2))
    for i in range(0, len(field.times), 8):
        vals = field.values[i].reshape(-1, 1)
        x, y = nodes[idx[:, 0]], nodes[idx[:, 1]]
        bx, by = vals[idx[:, 0]], vals[idx[:, 1]]
        inner = np.sum((x - y) * (bx - by), axis=-1)
        assert np.all(inner >= -slack)


def test_lambda_norm_stable_under_box_doubling():
    m = linear_model()
    norms = {}
    for scale in (1.0, 2.0):
        field, _ = solve_self_consistent_drift(
            m, [1.0], epsilon=0.1, horizon=2.0,
            grid=DriftGridSpec(n_times=21, nodes_per_axis=33,
                               box=((-1.2 * scale, (1.0 + 1.2) * scale),)),
            M=2000, noise_seed=7, tol=2e-3, dt=1e-3)
        norms[scale] = lambda_norm(field)
    assert norms[2.0] == pytest.approx(norms[1.0], rel=0.10)


def test_particle_system_snapshot_consistency(ou_field):
    """The drift implied by an interacting-particle snapshot at matched
    time agrees with the converged field within 10/sqrt(N) + O(dt)."""
    m, field, _ = ou_field
    N = 1024
    plan = NoisePlan(base_seed=21, dt=5e-3)
    paths = simulate(m, Particle(N), [1.0], 0.1, 1.0, plan, trial=0)
    cloud = np.stack([p.state_at(1.0) for p in paths])
    nodes = field.nodes()
    implied = interaction_force(m, nodes[:, None, :] - cloud[None, :, :]).mean(axis=1)
    tabulated = field.eval(1.0, nodes)
    tol = 10.0 / np.sqrt(N) + 0.05
    assert np.max(np.abs(implied - tabulated)) <= tol


def test_limit_drift_values():
    m = linear_model(phi_slope=2.5)
    flow = integrate_flow(m, [1.0], 2.0, dt=1e-3)
    # at the flow point itself the limit drift vanishes
    on_flow = limit_drift(m, [1.0], 1.0, flow.state_at(1.0), flow_path=flow)
    assert np.allclose(on_flow, 0.0, atol=1e-12)
    # radial formula at x - psi = -e^{-1}
    val = limit_drift(m, [1.0], 1.0, [0.0], flow_path=flow)
    assert val[0] == pytest.approx(-2.5 * np.exp(-1.0), abs=1e-6)
    with pytest.raises(ValueError):
        limit_drift(m, [1.0], 5.0, [0.0], flow_path=flow)


def test_limit_drift_from_equilibrium():
    m = linear_model(phi_slope=4.0)
    # x0 at the equilibrium: the limit drift is the plain attraction force
    for t in (0.0, 0.7):
        val = limit_drift(m, [0.0], t, [0.3])
        assert val[0] == pytest.approx(4.0 * 0.3, abs=1e-9)


def test_field_serialization_round_trip(ou_field, tmp_path):
    m, field, _ = ou_field
    path = tmp_path / "field.csv"
    save_drift_field(field, path)
    loaded = load_drift_field(path, m)
    assert np.allclose(loaded.values, field.values, rtol=0, atol=0)
    assert np.allclose(loaded.ensemble_mean, field.ensemble_mean, rtol=0, atol=0)
    assert loaded.weight_order == field.weight_order
    x = np.array([0.37])
    assert np.allclose(loaded.eval(0.9, x), field.eval(0.9, x))
