import numpy as np
import pytest

from selfstab.domain import Ellipse, Interval
from selfstab.flow import (DivergenceError, EquilibriumError, PathSample,
                           find_equilibrium, integrate_flow,
                           integrate_relaxed_flow, verify_domain_stability)
from selfstab.scenarios import ellipse_model, interval_switch_model

from helpers import double_well_model, expanding_model, linear_model


def test_linear_flow_decay():
    # closed form e^{-t}
    path = integrate_flow(linear_model(), [1.0], 1.0, dt=1e-3)
    assert path.final[0] == pytest.approx(np.exp(-1.0), abs=1e-8)


def test_equilibrium_start_is_constant():
    path = integrate_flow(linear_model(), [0.0], 2.0, dt=1e-2)
    assert np.all(path.states == 0.0)


def test_planar_decoupled_rates():
    # rates 12 and 1: closed form (e^{-12}, e^{-1}) at T = 1
    path = integrate_flow(ellipse_model(), [1.0, 1.0], 1.0, dt=1e-3)
    assert path.final[0] == pytest.approx(np.exp(-12.0), abs=1e-8)
    assert path.final[1] == pytest.approx(np.exp(-1.0), abs=1e-8)


def test_relaxed_flow_from_stable_point_is_constant():
    path = integrate_relaxed_flow(linear_model(), [0.0], [0.0], 1.0, dt=1e-2)
    assert np.all(path.states == 0.0)


def test_relaxed_flow_combined_rate():
    # V re-enforced by the attraction: total linear rate 2
    path = integrate_relaxed_flow(linear_model(), [0.0], [1.0], 1.0, dt=1e-3)
    assert path.final[0] == pytest.approx(np.exp(-2.0), abs=1e-8)


def test_relaxed_flow_planar_fast_coordinate():
    # rate 12 from the well plus 4 from the attraction: e^{-8} at T = 0.5
    path = integrate_relaxed_flow(ellipse_model(), [0.0, 0.0], [1.0, 0.0], 0.5, dt=1e-3)
    assert path.final[0] == pytest.approx(np.exp(-8.0), abs=1e-8)


def test_flow_semigroup_property():
    m = ellipse_model()
    ab = integrate_flow(m, integrate_flow(m, [0.8, -0.5], 0.4, dt=1e-3).final,
                        0.6, dt=1e-3)
    direct = integrate_flow(m, [0.8, -0.5], 1.0, dt=1e-3)
    assert np.linalg.norm(ab.final - direct.final) < 1e-7


def test_fourth_order_richardson():
    m = linear_model()
    exact = np.exp(-1.0)
    errs = [abs(integrate_flow(m, [1.0], 1.0, dt=dt).final[0] - exact)
            for dt in (4e-2, 2e-2, 1e-2)]
    assert errs[0] / errs[1] > 12.0   # about 16 for a 4th order scheme
    assert errs[1] / errs[2] > 12.0


def test_lyapunov_decrease_in_gradient_case():
    m = interval_switch_model()
    path = integrate_flow(m, [0.9], 5.0, dt=1e-3)
    u = m.potential_value(path.states)
    assert np.all(np.diff(u) <= 1e-10)


def test_divergence_guard():
    with pytest.raises(DivergenceError):
        integrate_flow(expanding_model(), [1.0], 40.0, dt=1e-2, bound=1e4)


def test_find_equilibrium_planar():
    x = find_equilibrium(ellipse_model(), [0.5, -1.0])
    assert x == pytest.approx([0.0, 0.0], abs=1e-9)


def test_find_equilibrium_linear_far_guess():
    assert find_equilibrium(linear_model(), [7.0]) == pytest.approx([0.0], abs=1e-9)


def test_find_equilibrium_double_well_basin():
    # guess 0.2 sits in the basin of +1; the repeller at 0 must be skipped
    x = find_equilibrium(double_well_model(), [0.2], tol=1e-10)
    assert x == pytest.approx([1.0], abs=1e-9)


def test_find_equilibrium_rejects_repeller():
    with pytest.raises(EquilibriumError):
        find_equilibrium(expanding_model(), [0.3])


def test_domain_stability_planar_pass():
    report = verify_domain_stability(ellipse_model(), Ellipse([0, 0], [1, 2]),
                                     [0.0, 0.0], n_boundary=16, horizon=8.0,
                                     dt=5e-3, n_interior=16)
    assert report.passed


def test_domain_stability_interval_pass():
    report = verify_domain_stability(interval_switch_model(), Interval(-1.4, 1.0),
                                     [0.0], n_boundary=2, horizon=20.0, dt=2e-3,
                                     n_interior=12)
    assert report.passed


def test_domain_stability_requires_interior_point():
    with pytest.raises(ValueError):
        verify_domain_stability(linear_model(), Interval(-1.0, 1.0), [2.0])


def test_domain_stability_repeller_fails():
    # attraction weaker than the expansion, so the relaxed field still
    # pushes outward and trajectories escape the interval
    def grad(x):
        return -np.asarray(x, dtype=float)

    from selfstab.model import ModelSpec, RadialProfile
    weak = ModelSpec.gradient(1, lambda x: -0.5 * x[..., 0] ** 2, grad,
                              RadialProfile.polynomial([0.0, 0.25]),
                              growth_order=0)
    report = verify_domain_stability(weak, Interval(-1.0, 1.0),
                                     [0.0], n_boundary=2, horizon=10.0, dt=1e-2,
                                     n_interior=8)
    assert not report.passed
    assert len(report.escaped) > 0


def test_path_sample_interpolation():
    path = PathSample(t0=0.0, dt=0.5, states=np.array([[0.0], [1.0], [4.0]]))
    assert path.state_at(0.25)[0] == pytest.approx(0.5)
    assert path.state_at(1.0)[0] == pytest.approx(4.0)
    many = path.state_at(np.array([0.0, 0.75, 1.0]))
    assert many[:, 0] == pytest.approx([0.0, 2.5, 4.0])
    with pytest.raises(ValueError):
        path.state_at(2.0)


def test_path_sample_validation():
    with pytest.raises(ValueError):
        PathSample(t0=0.0, dt=-0.1, states=np.zeros((3, 1)))
    with pytest.raises(ValueError):
        PathSample(t0=0.0, dt=0.1, states=np.array([[np.nan]]))
