"""Built-in study scenarios and their closed-form targets.

Two scenarios ship with the package:

* ``ou`` -- the linear 1D oracle (V = -x, phi(u) = u) whose
  self-consistent drift, moments, and exit behavior are known in closed
  form; used throughout the tests.
* ``interval-switch`` (config name ``paper-5.1``) -- a 1D cubic-well
  potential on the interval (-1.4, 1), blended by smoothstep into
  convex quadratics away from the interval so the drift contracts
  outside radius 2. Without interaction the cheap exit is the LEFT
  endpoint; attraction with phi(u) = 2.5u flips the cheap exit to the
  RIGHT endpoint.
* ``ellipse`` (config name ``paper-5.2``) -- the planar quadratic well
  6x^2 + y^2/2 on an ellipse, where attraction 4u moves the exit
  location from (0, +-2) to (+-1, 0) and the exit energy from 4 to 16.

The blend leaves the cubic potential and its derivative exactly
unchanged on [-1.6, 1.2], which contains the closed interval, so the
closed-form exit energies computed from the raw cubic are exact for the
blended model too.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import Ellipse, Interval
from .model import ModelSpec, RadialProfile

__all__ = [
    "ou_model",
    "interval_switch_model",
    "interval_switch_domain",
    "interval_switch_targets",
    "ellipse_model",
    "ellipse_domain",
    "ellipse_targets",
    "INTERVAL_SWITCH_U_SOURCE",
    "ELLIPSE_U_SOURCE",
]


def ou_model(rate=1.0, phi_slope=1.0):
    """Linear 1D oracle: V(x) = -rate*x, phi(u) = phi_slope*u."""

    def potential(x):
        return 0.5 * rate * x[..., 0] ** 2

    def grad(x):
        return rate * np.asarray(x, dtype=float)

    def hessian(x):
        shape = np.shape(x)[:-1]
        return np.broadcast_to(rate * np.eye(1), shape + (1, 1)).copy()

    return ModelSpec.gradient(1, potential, grad,
                              RadialProfile.polynomial([0.0, phi_slope]),
                              growth_order=0, hessian=hessian)


# ---------------------------------------------------------------------------
# the 1D exit-location switch


# cubic well, exact on [-1.6, 1.2]
_CORE = (0.0, 0.0, 1.0, 0.45)            # x^2 + 0.45 x^3
# left quadratic: value matched to the cubic at -2, slope -2, curvature 6
_QL_VALUE_AT_M2 = 4.0 - 0.45 * 8.0       # 0.4
# right quadratic: value and slope matched to the cubic at 1.5, curvature 6
_QR_VALUE = 1.5 ** 2 + 0.45 * 1.5 ** 3   # 3.76875
_QR_SLOPE = 2.0 * 1.5 + 1.35 * 1.5 ** 2  # 6.0375

INTERVAL_SWITCH_U_SOURCE = (
    "(1 - smoothstep(-1.6, -2, x1) - smoothstep(1.2, 1.5, x1))"
    " * (x1^2 + 0.45*x1^3)"
    " + smoothstep(-1.6, -2, x1) * (0.4 - 2*(x1 + 2) + 3*(x1 + 2)^2)"
    " + smoothstep(1.2, 1.5, x1) * (3.76875 + 6.0375*(x1 - 1.5) + 3*(x1 - 1.5)^2)"
)

ELLIPSE_U_SOURCE = "6*x1^2 + 0.5*x2^2"


def _hermite(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _hermite_d(t):
    inside = (t > 0.0) & (t < 1.0)
    tc = np.clip(t, 0.0, 1.0)
    return np.where(inside, 6.0 * tc * (1.0 - tc), 0.0)


def _hermite_dd(t):
    inside = (t > 0.0) & (t < 1.0)
    tc = np.clip(t, 0.0, 1.0)
    return np.where(inside, 6.0 - 12.0 * tc, 0.0)


def _u51_pieces(x):
    core = x * x + 0.45 * x ** 3
    ql = _QL_VALUE_AT_M2 - 2.0 * (x + 2.0) + 3.0 * (x + 2.0) ** 2
    qr = _QR_VALUE + _QR_SLOPE * (x - 1.5) + 3.0 * (x - 1.5) ** 2
    tl = (-1.6 - x) / 0.4
    tr = (x - 1.2) / 0.3
    return core, ql, qr, tl, tr


def _in_core(x):
    # the blend is identically zero on [-1.6, 1.2]; skipping it there is
    # exact and keeps the exit-trial hot loop cheap
    return x.size > 0 and x.min() > -1.6 and x.max() < 1.2


def _u51(x):
    x = np.asarray(x, dtype=float)
    if _in_core(x):
        return x * x + 0.45 * x ** 3
    core, ql, qr, tl, tr = _u51_pieces(x)
    sl, sr = _hermite(tl), _hermite(tr)
    return (1.0 - sl - sr) * core + sl * ql + sr * qr


def _u51_prime(x):
    x = np.asarray(x, dtype=float)
    if _in_core(x):
        return 2.0 * x + 1.35 * x * x
    core, ql, qr, tl, tr = _u51_pieces(x)
    core_d = 2.0 * x + 1.35 * x * x
    ql_d = -2.0 + 6.0 * (x + 2.0)
    qr_d = _QR_SLOPE + 6.0 * (x - 1.5)
    sl, sr = _hermite(tl), _hermite(tr)
    sl_d = _hermite_d(tl) * (-1.0 / 0.4)
    sr_d = _hermite_d(tr) * (1.0 / 0.3)
    return ((1.0 - sl - sr) * core_d + sl * ql_d + sr * qr_d
            + sl_d * (ql - core) + sr_d * (qr - core))


def _u51_second(x):
    x = np.asarray(x, dtype=float)
    if _in_core(x):
        return 2.0 + 2.7 * x
    core, ql, qr, tl, tr = _u51_pieces(x)
    core_d = 2.0 * x + 1.35 * x * x
    ql_d = -2.0 + 6.0 * (x + 2.0)
    qr_d = _QR_SLOPE + 6.0 * (x - 1.5)
    sl_d = _hermite_d(tl) * (-1.0 / 0.4)
    sr_d = _hermite_d(tr) * (1.0 / 0.3)
    sl_dd = _hermite_dd(tl) * (1.0 / 0.16)
    sr_dd = _hermite_dd(tr) * (1.0 / 0.09)
    sl, sr = _hermite(tl), _hermite(tr)
    return ((1.0 - sl - sr) * (2.0 + 2.7 * x) + 6.0 * sl + 6.0 * sr
            + 2.0 * sl_d * (ql_d - core_d) + 2.0 * sr_d * (qr_d - core_d)
            + sl_dd * (ql - core) + sr_dd * (qr - core))


def interval_switch_model():
    """Blended cubic potential with phi(u) = 2.5u (fast numpy closures;
    the packaged config carries the equivalent expression text)."""

    def potential(x):
        return _u51(x[..., 0])

    def grad(x):
        return _u51_prime(x[..., 0])[..., None]

    def hessian(x):
        return _u51_second(x[..., 0])[..., None, None]

    return ModelSpec.gradient(1, potential, grad,
                              RadialProfile.polynomial([0.0, 2.5]),
                              growth_order=0, hessian=hessian)


def interval_switch_domain():
    return Interval(-1.4, 1.0)


@dataclass(frozen=True)
class ScenarioTargets:
    """Closed-form exit energies at the domain boundary."""

    classical: dict    # boundary label -> 2 (U(z) - U(x*))
    stabilized: dict   # boundary label -> 2 (U(z) - U(x*) + A(z - x*))
    x_stable: tuple

    @property
    def classical_min(self):
        return min(self.classical.values())

    @property
    def stabilized_min(self):
        return min(self.stabilized.values())


def interval_switch_targets():
    # U(-1.4) = 0.7252, U(1) = 1.45, A(z) = 1.25 z^2 (all exact decimals)
    u_left = 1.96 - 0.45 * 2.744
    u_right = 1.45
    a_left = 1.25 * 1.96
    a_right = 1.25
    return ScenarioTargets(
        classical={"left": 2.0 * u_left, "right": 2.0 * u_right},
        stabilized={"left": 2.0 * (u_left + a_left), "right": 2.0 * (u_right + a_right)},
        x_stable=(0.0,),
    )


# ---------------------------------------------------------------------------
# the planar ellipse example


def ellipse_model():
    """Quadratic well 6x^2 + y^2/2 with phi(u) = 4u."""

    H = np.diag([12.0, 1.0])

    def potential(x):
        return 6.0 * x[..., 0] ** 2 + 0.5 * x[..., 1] ** 2

    def grad(x):
        return np.stack([12.0 * x[..., 0], x[..., 1]], axis=-1)

    def hessian(x):
        shape = np.shape(x)[:-1]
        return np.broadcast_to(H, shape + (2, 2)).copy()

    return ModelSpec.gradient(2, potential, grad,
                              RadialProfile.polynomial([0.0, 4.0]),
                              growth_order=0, hessian=hessian)


def ellipse_domain():
    return Ellipse([0.0, 0.0], [1.0, 2.0])


def ellipse_targets():
    # boundary minima: classical 4 at (0, +-2); stabilized 16 at (+-1, 0)
    return ScenarioTargets(
        classical={"top": 4.0, "bottom": 4.0},
        stabilized={"right": 16.0, "left": 16.0},
        x_stable=(0.0, 0.0),
    )
