"""Problem instances: state drift V, interaction profile phi, and the
dissipativity constants that control stability.

A model couples a vector field V on R^d (optionally the negative
gradient of a scalar potential U) with a rotationally invariant
attraction force F(z) = (z/|z|) phi(|z|). The interaction potential
A(z) = integral of phi along the radius makes F = grad A.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import expr as _expr

__all__ = [
    "RadialProfile",
    "ModelSpec",
    "DissipativityConstants",
    "AssumptionReport",
    "DissipativityError",
    "interaction_force",
    "interaction_potential",
    "interaction_jacobian",
    "estimate_constants",
    "check_assumptions",
]


class DissipativityError(ValueError):
    """Raised when no negative-definite region can be certified; carries
    the violating sample points for diagnosis."""

    def __init__(self, message, violations):
        self.violations = violations
        super().__init__(message)


def _adaptive_simpson(f, a, b, tol):
    """Plain recursive adaptive Simpson quadrature, absolute tolerance."""

    def simpson(lo, hi, flo, fmid, fhi):
        return (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)

    def recurse(lo, hi, flo, fmid, fhi, whole, tol, depth):
        mid = 0.5 * (lo + hi)
        fl = f(0.5 * (lo + mid))
        fr = f(0.5 * (mid + hi))
        left = simpson(lo, mid, flo, fl, fmid)
        right = simpson(mid, hi, fmid, fr, fhi)
        if depth > 48 or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return recurse(lo, mid, flo, fl, fmid, left, tol / 2.0, depth + 1) + recurse(
            mid, hi, fmid, fr, fhi, right, tol / 2.0, depth + 1
        )

    if a == b:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    return recurse(a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), tol, 0)


@dataclass(frozen=True)
class RadialProfile:
    """Interaction profile phi: [0, inf) -> [0, inf), phi(0) = 0.

    Backed either by polynomial coefficients (ascending order, closed
    form antiderivative) or by an arbitrary callable/expression with
    quadrature for the antiderivative.
    """

    fn: Callable
    deriv: Callable
    coefficients: Optional[tuple] = None
    source: Optional[str] = None
    quad_tol: float = 1e-10

    @classmethod
    def polynomial(cls, coefficients):
        coeffs = tuple(float(c) for c in coefficients)
        if coeffs and coeffs[0] != 0.0:
            raise ValueError("phi(0) must be 0: constant coefficient must vanish")
        dcoeffs = tuple(k * c for k, c in enumerate(coeffs))[1:] or (0.0,)

        def fn(u):
            return np.polynomial.polynomial.polyval(u, coeffs)

        def deriv(u):
            return np.polynomial.polynomial.polyval(u, dcoeffs)

        return cls(fn=fn, deriv=deriv, coefficients=coeffs)

    @classmethod
    def from_expression(cls, source):
        e = _expr.parse(source, 1)

        def fn(u):
            return _expr.eval_value(e, np.asarray(u)[..., None])

        def deriv(u):
            return _expr.eval_gradient(e, np.asarray(u, dtype=float)[..., None]).partials[..., 0]

        return cls(fn=fn, deriv=deriv, source=source)

    @classmethod
    def from_callable(cls, fn, deriv=None):
        if deriv is None:
            def deriv(u, _f=fn, _h=1e-6):
                return (_f(u + _h) - _f(u - _h)) / (2.0 * _h)

        return cls(fn=fn, deriv=deriv)

    def __call__(self, u):
        return self.fn(u)

    @property
    def linear_slope(self):
        """Slope c when phi(u) = c*u exactly, else None (enables the
        F(z) = c*z shortcut in hot loops)."""
        if self.coefficients is not None and len(self.coefficients) == 2:
            return self.coefficients[1]
        return None

    def antiderivative(self, s):
        """A along the radius: integral of phi from 0 to s."""
        if self.coefficients is not None:
            icoeffs = (0.0,) + tuple(
                c / (k + 1) for k, c in enumerate(self.coefficients)
            )
            return np.polynomial.polynomial.polyval(s, icoeffs)
        s_arr = np.asarray(s, dtype=float)
        flat = np.atleast_1d(s_arr).ravel()
        out = np.array([_adaptive_simpson(self.fn, 0.0, float(v), self.quad_tol) for v in flat])
        return out.reshape(s_arr.shape) if s_arr.ndim else float(out[0])


def _fd_jacobian(drift, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        cols.append((drift(x + e) - drift(x - e)) / (2.0 * h))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class ModelSpec:
    """One problem instance: dimension, drift, interaction, growth orders.

    ``drift`` must broadcast over leading axes: input (..., d), output
    (..., d). ``potential`` is present iff drift = -grad(potential), the
    gradient case in which quasi-potentials have a closed form.
    """

    dim: int
    drift: Callable
    profile: RadialProfile
    growth_order: int
    weight_order: int = 0  # resolved in __post_init__ when left at 0
    potential: Optional[Callable] = None
    drift_jacobian_fn: Optional[Callable] = None
    sources: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.growth_order < 0:
            raise ValueError("growth_order must be nonnegative")
        if self.weight_order == 0:
            object.__setattr__(self, "weight_order", self.growth_order // 2 + 1)
        if 2 * self.weight_order <= self.growth_order:
            raise ValueError(
                "need 2*weight_order > growth_order (%d, %d)"
                % (self.weight_order, self.growth_order)
            )
        # monotonicity and positivity of the profile are deliberately not
        # enforced here: bad profiles must load so check_assumptions can
        # report them; phi(0) = 0 is definitional (F(0) = 0 needs it)
        phi0 = float(np.asarray(self.profile(0.0)))
        if abs(phi0) > 1e-12:
            raise ValueError("interaction profile must vanish at 0, got %g" % phi0)

    # -- constructors ------------------------------------------------------

    @classmethod
    def gradient(cls, dim, potential, grad, profile, growth_order, weight_order=0,
                 hessian=None, sources=None):
        """Model with drift = -grad(potential)."""

        def drift(x):
            return -np.asarray(grad(x), dtype=float)

        jac = None
        if hessian is not None:
            def jac(x):
                return -np.asarray(hessian(x), dtype=float)

        return cls(dim=dim, drift=drift, profile=profile, growth_order=growth_order,
                   weight_order=weight_order, potential=potential,
                   drift_jacobian_fn=jac, sources=dict(sources or {}))

    @classmethod
    def from_potential_expression(cls, dim, u_source, profile, growth_order,
                                  weight_order=0):
        e = _expr.parse(u_source, dim)

        def potential(x):
            return _expr.eval_value(e, x)

        def grad(x):
            return _expr.eval_gradient(e, x).partials

        def hessian(x):
            x = np.asarray(x, dtype=float)
            cols = []
            for j in range(dim):
                h = np.zeros(dim)
                h[j] = 1.0
                # column j of Hess U = directional derivative of grad U
                cols.append(_hess_column(e, x, h))
            return np.stack(cols, axis=-1)

        return cls.gradient(dim, potential, grad, profile, growth_order, weight_order,
                            hessian=hessian, sources={"u": u_source})

    @classmethod
    def from_drift_expressions(cls, dim, v_sources, profile, growth_order,
                               weight_order=0):
        exprs = [_expr.parse(src, dim) for src in v_sources]
        if len(exprs) != dim:
            raise ValueError("need %d drift components, got %d" % (dim, len(exprs)))

        def drift(x):
            x = np.asarray(x, dtype=float)
            return np.stack([_expr.eval_value(e, x) for e in exprs], axis=-1)

        def jac(x):
            x = np.asarray(x, dtype=float)
            rows = [_expr.eval_gradient(e, x).partials for e in exprs]
            return np.stack(rows, axis=-2)

        return cls(dim=dim, drift=drift, profile=profile, growth_order=growth_order,
                   weight_order=weight_order, drift_jacobian_fn=jac,
                   sources={"v": tuple(v_sources)})

    # -- derived evaluations ----------------------------------------------

    def drift_jacobian(self, x):
        """DV(x) as a (..., d, d) array; finite differences as fallback."""
        if self.drift_jacobian_fn is not None:
            return np.asarray(self.drift_jacobian_fn(x), dtype=float)
        return _fd_jacobian(self.drift, x)

    def jacobian_quadratic_form(self, x, h):
        """<h, DV(x) h> for a unit direction h."""
        J = self.drift_jacobian(x)
        h = np.asarray(h, dtype=float)
        return float(h @ J @ h) if J.ndim == 2 else np.einsum("i,...ij,j->...", h, J, h)

    def potential_value(self, x):
        if self.potential is None:
            raise ValueError("model has no scalar potential (non-gradient case)")
        return self.potential(np.asarray(x, dtype=float))


def _hess_column(expression, x, h):
    d = len(h)
    x = np.asarray(x, dtype=float)
    out = []
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = 1.0
        # mixed second derivative via polarization of the quadratic form:
        # h^T H ei = ( (h+ei)^T H (h+ei) - (h-ei)^T H (h-ei) ) / 4
        p = h + ei
        m = h - ei
        pn = np.linalg.norm(p)
        mn = np.linalg.norm(m)
        qp = _expr.hessian_quadratic_form(expression, x, p / pn) * pn**2 if pn > 0 else 0.0
        qm = _expr.hessian_quadratic_form(expression, x, m / mn) * mn**2 if mn > 0 else 0.0
        out.append((qp - qm) / 4.0)
    return np.stack(out, axis=-1) if np.ndim(out[0]) else np.array(out)


# ---------------------------------------------------------------------------
# interaction force and potential


def interaction_force(model, z):
    """F(z) = (z/|z|) phi(|z|), with F(0) = 0. Accepts (..., d) batches."""
    z = np.asarray(z, dtype=float)
    slope = model.profile.linear_slope
    if slope is not None:  # phi(u) = c*u makes F(z) = c*z exactly
        return slope * z
    scalar_input = z.ndim == 1
    zz = np.atleast_2d(z)
    r = np.linalg.norm(zz, axis=-1)
    out = np.zeros_like(zz)
    mask = r > 0
    if np.any(mask):
        scale = np.asarray(model.profile(r[mask]), dtype=float) / r[mask]
        out[mask] = zz[mask] * scale[:, None]
    return out.reshape(z.shape)


def interaction_potential(model, z):
    """A(z) = integral of phi from 0 to |z|; nonnegative, A(0) = 0."""
    r = np.linalg.norm(np.asarray(z, dtype=float), axis=-1)
    return model.profile.antiderivative(r)


def interaction_jacobian(model, z):
    """DF(z): phi'(r) on the radial direction, phi(r)/r transversally."""
    z = np.asarray(z, dtype=float)
    slope = model.profile.linear_slope
    if slope is not None:
        d = z.shape[-1]
        return np.broadcast_to(slope * np.eye(d), z.shape[:-1] + (d, d)).copy()
    scalar_input = z.ndim == 1
    zz = np.atleast_2d(z)
    d = zz.shape[-1]
    r = np.linalg.norm(zz, axis=-1)
    out = np.empty(zz.shape[:-1] + (d, d))
    eye = np.eye(d)
    phi_d0 = float(np.asarray(model.profile.deriv(0.0)))
    out[...] = phi_d0 * eye
    mask = r > 0
    if np.any(mask):
        zm = zz[mask]
        rm = r[mask]
        unit = zm / rm[:, None]
        proj = unit[:, :, None] * unit[:, None, :]
        radial = np.asarray(model.profile.deriv(rm), dtype=float)
        trans = np.asarray(model.profile(rm), dtype=float) / rm
        out[mask] = (
            radial[:, None, None] * proj
            + trans[:, None, None] * (eye - proj)
        )
    if scalar_input:
        return out[0]
    return out.reshape(z.shape[:-1] + (d, d))


# ---------------------------------------------------------------------------
# constants of the drift geometry


@dataclass(frozen=True)
class DissipativityConstants:
    """Estimated one-sided Lipschitz / convexity-at-infinity constants.

    k_upper bounds <x-y, V(x)-V(y)> <= k_upper |x-y|^2 from above (clamped
    at 0; k_raw keeps the unclamped supremum). k_convex is the uniform
    convexity rate outside the ball of radius r0. eta and r1 follow the
    standard construction eta = k_convex / 4 and
    r1 = max(2 r0, 4 sup_{|y|=r0} |V(y)| / k_convex).
    """

    k_upper: float
    k_convex: float
    eta: float
    r0: float
    r1: float
    k_raw: float
    sampling_box: tuple

    def __post_init__(self):
        if abs(self.eta - self.k_convex / 4.0) > 1e-12 * max(1.0, abs(self.k_convex)):
            raise ValueError("eta must equal k_convex / 4")


def _sample_box(box, n_samples, seed, dim):
    box = [(float(lo), float(hi)) for lo, hi in box]
    if len(box) != dim:
        raise ValueError("box must have one (lo, hi) pair per axis")
    # deterministic lattice through the center plus seeded uniforms
    per_axis = max(3, int(round(n_samples ** (1.0 / dim))))
    if per_axis % 2 == 0:
        per_axis += 1
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in box]
    lattice = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    rng = np.random.default_rng(seed)
    lows = np.array([lo for lo, _ in box])
    highs = np.array([hi for _, hi in box])
    randoms = rng.uniform(lows, highs, size=(n_samples, dim))
    return np.concatenate([lattice, randoms], axis=0)


def _sphere_points(radius, dim, n, seed=1):
    if dim == 1:
        return np.array([[-radius], [radius]])
    if dim == 2:
        theta = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        return radius * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, dim))
    return radius * v / np.linalg.norm(v, axis=-1, keepdims=True)


def _max_symmetric_eigenvalue(model, points):
    J = model.drift_jacobian(points)
    sym = 0.5 * (J + np.swapaxes(J, -1, -2))
    return np.linalg.eigvalsh(sym)[..., -1]


def estimate_constants(model, box, r0_candidate=1.0, n_samples=2048, seed=0):
    """Estimate the dissipativity constants by sampling the symmetrized
    Jacobian over ``box``.

    The box must contain the ball of radius ``r0_candidate``. Raises
    DissipativityError with the violating sample points when the field
    is not uniformly contracting outside that ball.
    """
    box = [(float(lo), float(hi)) for lo, hi in box]
    r0 = float(r0_candidate)
    for lo, hi in box:
        if lo > -r0 or hi < r0:
            raise ValueError("box must contain the ball of radius r0_candidate")
    points = _sample_box(box, n_samples, seed, model.dim)
    lam = _max_symmetric_eigenvalue(model, points)
    k_raw = float(np.max(lam))
    k_upper = max(0.0, k_raw)

    norms = np.linalg.norm(points, axis=-1)
    outside = norms >= r0
    if not np.any(outside):
        raise ValueError("no sample points outside radius r0_candidate")
    lam_out = lam[outside]
    sup_out = float(np.max(lam_out))
    if sup_out >= 0.0:
        bad = points[outside][lam_out >= 0.0]
        raise DissipativityError(
            "drift is not uniformly contracting outside radius %g: "
            "largest symmetrized-Jacobian eigenvalue %.6g >= 0 at %d sample point(s), "
            "first few: %s" % (r0, sup_out, len(bad), bad[:5].tolist()),
            violations=bad,
        )
    k_convex = -sup_out

    sphere = _sphere_points(r0, model.dim, 256, seed=seed + 1)
    sup_v = float(np.max(np.linalg.norm(model.drift(sphere), axis=-1)))
    r1 = max(2.0 * r0, 4.0 * sup_v / k_convex)
    return DissipativityConstants(
        k_upper=k_upper,
        k_convex=k_convex,
        eta=k_convex / 4.0,
        r0=r0,
        r1=r1,
        k_raw=k_raw,
        sampling_box=tuple(box),
    )


# ---------------------------------------------------------------------------
# structural assumption checks


@dataclass(frozen=True)
class ClauseResult:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class AssumptionReport:
    clauses: tuple
    global_convexity: bool

    @property
    def passed(self):
        return all(c.passed for c in self.clauses)

    def clause(self, name):
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)

    def __str__(self):
        lines = []
        for c in self.clauses:
            lines.append("%-24s %s  %s" % (c.name, "PASS" if c.passed else "FAIL", c.detail))
        lines.append("%-24s %s" % ("global_convexity", self.global_convexity))
        return "\n".join(lines)


def check_assumptions(model, box, r0=1.0, n_samples=1024, n_pairs=512,
                      phi_tol=1e-12, growth_margin=0.1, convexity_tol=1e-9,
                      seed=0):
    """Numerically verify the structural model assumptions on ``box``.

    Returns a report with one pass/fail row per clause: profile validity,
    polynomial growth of the interaction force, local contraction of the
    drift outside radius ``r0``, and a flag for whether the contraction
    estimate holds over the whole box.
    """
    box = [(float(lo), float(hi)) for lo, hi in box]
    clauses = []

    # profile: phi(0) = 0 and nondecreasing
    u_max = float(np.linalg.norm([max(abs(lo), abs(hi)) for lo, hi in box])) * 2.0
    grid = np.linspace(0.0, u_max, 257)
    phi_vals = np.asarray(model.profile(grid), dtype=float)
    phi0_ok = abs(phi_vals[0]) <= phi_tol
    mono_ok = bool(np.all(np.diff(phi_vals) >= -phi_tol))
    nonneg_ok = bool(np.all(phi_vals >= -phi_tol))
    clauses.append(ClauseResult(
        "profile",
        phi0_ok and mono_ok and nonneg_ok,
        "phi(0)=%.2e, monotone=%s, nonnegative=%s" % (phi_vals[0], mono_ok, nonneg_ok),
    ))

    # polynomial growth: fit a witness constant on half the pairs, verify
    # on the other half with a margin
    rng = np.random.default_rng(seed)
    lows = np.array([lo for lo, _ in box])
    highs = np.array([hi for _, hi in box])
    xs = rng.uniform(lows, highs, size=(2 * n_pairs, model.dim))
    ys = rng.uniform(lows, highs, size=(2 * n_pairs, model.dim))
    fx = interaction_force(model, xs)
    fy = interaction_force(model, ys)
    sep = np.linalg.norm(xs - ys, axis=-1)
    keep = sep > 1e-9
    num = np.linalg.norm(fx - fy, axis=-1)[keep] / sep[keep]
    pw = (np.linalg.norm(xs, axis=-1) ** model.growth_order
          + np.linalg.norm(ys, axis=-1) ** model.growth_order)[keep]
    defect = num - pw
    half = len(defect) // 2
    k_witness = max(0.0, float(np.max(defect[:half])))
    growth_ok = bool(np.all(defect[half:] <= k_witness * (1.0 + growth_margin) + 1e-9))
    clauses.append(ClauseResult(
        "polynomial_growth",
        growth_ok,
        "witness K=%.4g at order r=%d" % (k_witness, model.growth_order),
    ))

    # drift contraction: sampled symmetrized-Jacobian eigenvalues
    points = _sample_box(box, n_samples, seed + 1, model.dim)
    lam = _max_symmetric_eigenvalue(model, points)
    norms = np.linalg.norm(points, axis=-1)
    outside = norms >= r0
    if np.any(outside):
        worst_out = float(np.max(lam[outside]))
        local_ok = worst_out < 0.0
        detail = "sup eigenvalue outside r0=%g is %.4g" % (r0, worst_out)
    else:
        local_ok = False
        detail = "no samples outside r0=%g" % r0
    clauses.append(ClauseResult("local_dissipativity", local_ok, detail))

    worst_all = float(np.max(lam))
    global_convexity = worst_all < -convexity_tol

    return AssumptionReport(clauses=tuple(clauses), global_convexity=global_convexity)
