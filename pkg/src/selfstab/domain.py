"""Bounded open regions used as exit domains.

A domain is defined by a membership function g with g(x) < 0 inside and
g = 0 on the boundary. Interval, ball, and ellipse kinds carry an exact
boundary parametrization (side -1/+1 in one dimension, angle in two);
implicit domains are given by a g expression plus boundary sample
points and have no scalar parameter (NaN is recorded instead).
"""

from __future__ import annotations

import numpy as np

from . import expr as _expr

__all__ = ["Domain", "Interval", "Ball", "Ellipse", "Implicit"]


class Domain:
    dim = None

    def g(self, x):
        raise NotImplementedError

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return self.g(x) < 0.0

    def boundary_points(self, n):
        raise NotImplementedError

    def boundary_param(self, x):
        """Scalar boundary coordinate of a (near-)boundary point."""
        raise NotImplementedError

    def boundary_point(self, param):
        raise NotImplementedError

    def bounding_box(self):
        raise NotImplementedError

    @property
    def scale(self):
        lo, hi = self.bounding_box()
        return 0.5 * float(np.max(np.asarray(hi) - np.asarray(lo)))


class Interval(Domain):
    """Open interval (a, b) in one dimension; sides are -1 (a) and +1 (b)."""

    dim = 1

    def __init__(self, a, b):
        if not b > a:
            raise ValueError("need a < b")
        self.a = float(a)
        self.b = float(b)

    def g(self, x):
        x = np.asarray(x, dtype=float)[..., 0]
        return np.maximum(self.a - x, x - self.b)

    def boundary_points(self, n=2):
        return np.array([[self.a], [self.b]])

    def boundary_param(self, x):
        x = np.asarray(x, dtype=float)[..., 0]
        mid = 0.5 * (self.a + self.b)
        return np.where(x < mid, -1.0, 1.0)

    def boundary_point(self, param):
        return np.array([self.a if param < 0 else self.b])

    def bounding_box(self):
        return np.array([self.a]), np.array([self.b])


class Ball(Domain):
    def __init__(self, center, radius):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = float(radius)
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        self.dim = self.center.shape[0]

    def g(self, x):
        x = np.asarray(x, dtype=float)
        return np.sum(((x - self.center) / self.radius) ** 2, axis=-1) - 1.0

    def boundary_points(self, n=128):
        if self.dim == 1:
            return self.center + np.array([[-self.radius], [self.radius]])
        if self.dim == 2:
            theta = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
            ring = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
            return self.center + self.radius * ring
        rng = np.random.default_rng(12345)
        v = rng.standard_normal((n, self.dim))
        return self.center + self.radius * v / np.linalg.norm(v, axis=-1, keepdims=True)

    def boundary_param(self, x):
        rel = np.asarray(x, dtype=float) - self.center
        if self.dim == 1:
            return np.where(rel[..., 0] < 0, -1.0, 1.0)
        if self.dim == 2:
            return np.arctan2(rel[..., 1], rel[..., 0])
        return np.full(rel.shape[:-1], np.nan)

    def boundary_point(self, param):
        if self.dim == 1:
            return self.center + np.array([self.radius if param > 0 else -self.radius])
        if self.dim == 2:
            return self.center + self.radius * np.array([np.cos(param), np.sin(param)])
        raise ValueError("no scalar boundary parametrization above dimension 2")

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius


class Ellipse(Domain):
    """Axis-aligned ellipse in the plane, parametrized by angle."""

    dim = 2

    def __init__(self, center, semi_axes):
        self.center = np.asarray(center, dtype=float).reshape(2)
        self.semi_axes = np.asarray(semi_axes, dtype=float).reshape(2)
        if np.any(self.semi_axes <= 0):
            raise ValueError("semi-axes must be positive")

    def g(self, x):
        x = np.asarray(x, dtype=float)
        return np.sum(((x - self.center) / self.semi_axes) ** 2, axis=-1) - 1.0

    def boundary_points(self, n=256):
        theta = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        ring = np.stack([self.semi_axes[0] * np.cos(theta),
                         self.semi_axes[1] * np.sin(theta)], axis=-1)
        return self.center + ring

    def boundary_param(self, x):
        rel = (np.asarray(x, dtype=float) - self.center) / self.semi_axes
        return np.arctan2(rel[..., 1], rel[..., 0])

    def boundary_point(self, param):
        return self.center + self.semi_axes * np.array([np.cos(param), np.sin(param)])

    def bounding_box(self):
        return self.center - self.semi_axes, self.center + self.semi_axes


class Implicit(Domain):
    """Domain from a membership expression g(x) < 0 with user-provided
    boundary samples (no scalar boundary coordinate)."""

    def __init__(self, g_source, dim, boundary_samples):
        self.expression = _expr.parse(g_source, dim)
        self.dim = dim
        self.samples = np.asarray(boundary_samples, dtype=float).reshape(-1, dim)
        if len(self.samples) < 1:
            raise ValueError("implicit domains need at least one boundary sample")
        bad = np.abs(self.g(self.samples))
        if np.any(bad > 1e-9):
            raise ValueError(
                "boundary samples must satisfy |g| <= 1e-9; worst is %g" % float(bad.max())
            )

    def g(self, x):
        return _expr.eval_value(self.expression, np.asarray(x, dtype=float))

    def boundary_points(self, n=None):
        if n is None or n >= len(self.samples):
            return self.samples.copy()
        idx = np.linspace(0, len(self.samples) - 1, n).astype(int)
        return self.samples[idx]

    def boundary_param(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], np.nan)

    def boundary_point(self, param):
        raise ValueError("implicit domains have no boundary parametrization")

    def bounding_box(self):
        lo = self.samples.min(axis=0)
        hi = self.samples.max(axis=0)
        return lo, hi
