"""Discretized smooth closed curves and boundary quadrature.

Curves are parametrized counterclockwise by ``theta`` on a uniform grid of
``N`` nodes. Boundary fields are 1-D arrays holding one value per node.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import spectral_derivative


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryCurve:
    kind: str
    params: dict
    theta: np.ndarray
    nodes: np.ndarray  # (N, 2)
    speed: np.ndarray  # |gamma'(theta)|
    normals: np.ndarray  # (N, 2), unit outward
    curvature: np.ndarray
    weights: np.ndarray  # (2 pi / N) * speed
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def N(self) -> int:
        return len(self.theta)

    @property
    def perimeter(self) -> float:
        return float(np.sum(self.weights))

    @property
    def spacing(self) -> float:
        """Largest distance between consecutive nodes."""
        return float(np.max(np.linalg.norm(np.roll(self.nodes, -1, axis=0) - self.nodes, axis=1)))

    @property
    def length_scale(self) -> float:
        return self.perimeter / (2.0 * np.pi)

    def describe(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "N": self.N}


def _radius_function(kind: str, params: dict):
    """Return (x(theta), y(theta)) callables for the supported shapes."""
    if kind == "circle":
        r = float(params.get("radius", 1.0))
        if r <= 0:
            raise GeometryError(f"circle radius must be positive, got {r}")
        return lambda t: r * np.cos(t), lambda t: r * np.sin(t)
    if kind == "ellipse":
        a = float(params.get("a", 1.0))
        b = float(params.get("b", 0.5))
        if a <= 0 or b <= 0:
            raise GeometryError(f"ellipse semi-axes must be positive, got ({a}, {b})")
        return lambda t: a * np.cos(t), lambda t: b * np.sin(t)
    if kind == "star":
        r0 = float(params.get("radius", 1.0))
        eps = float(params.get("eps", 0.1))
        m = int(params.get("m", 3))
        if r0 <= 0 or m < 1:
            raise GeometryError(f"star needs radius > 0 and m >= 1, got ({r0}, {m})")
        # at |eps| = 1/(1+m^2) the curvature touches zero but the curve stays smooth
        if abs(eps) > 1.0 / (1.0 + m * m):
            raise GeometryError(
                f"star amplitude |eps| = {abs(eps)} must be <= 1/(1+m^2) = {1.0 / (1 + m * m):.4f}"
            )

        def rad(t):
            return r0 * (1.0 + eps * np.cos(m * t))

        return lambda t: rad(t) * np.cos(t), lambda t: rad(t) * np.sin(t)
    raise GeometryError(f"unknown curve kind {kind!r}")


def make_curve(kind: str = "circle", params: dict | None = None, N: int = 64) -> BoundaryCurve:
    """Build a curve of the given kind with ``N`` nodes.

    Shape parameters: ``circle`` takes ``radius``; ``ellipse`` takes semi-axes
    ``a`` and ``b``; ``star`` takes ``radius``, ``eps`` and ``m`` for the polar
    radius ``radius * (1 + eps cos(m theta))``. Derivatives of the
    parametrization are spectral, hence exact for these trigonometric shapes.
    """
    params = dict(params or {})
    N = int(N)
    if N % 2 or N < 16:
        raise GeometryError(f"node count must be even and >= 16, got {N}")
    fx, fy = _radius_function(kind, params)
    theta = 2.0 * np.pi * np.arange(N) / N
    x, y = fx(theta), fy(theta)
    dx, dy = spectral_derivative(x), spectral_derivative(y)
    ddx, ddy = spectral_derivative(x, 2), spectral_derivative(y, 2)
    speed = np.hypot(dx, dy)
    if np.min(speed) <= 0:
        raise GeometryError("parametrization is singular")
    normals = np.column_stack([dy, -dx]) / speed[:, None]
    curvature = (dx * ddy - dy * ddx) / speed**3
    weights = (2.0 * np.pi / N) * speed
    return BoundaryCurve(kind, params, theta, np.column_stack([x, y]), speed, normals,
                         curvature, weights)


def _check_field(curve: BoundaryCurve, f, name="field") -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (curve.N,):
        raise GeometryError(f"{name} has shape {f.shape}, curve has {curve.N} nodes")
    return f


def integrate_boundary(curve: BoundaryCurve, f) -> float:
    """Trapezoid rule in the parameter for the integral of ``f`` over the curve."""
    return float(curve.weights @ _check_field(curve, f))


def weighted_inner(curve: BoundaryCurve, f, g, weight) -> float:
    """Integral of ``f g weight`` over the curve; ``weight`` must be positive."""
    weight = _check_field(curve, weight, "weight")
    if np.any(weight <= 0):
        raise GeometryError("weight must be strictly positive")
    return integrate_boundary(curve, _check_field(curve, f) * _check_field(curve, g) * weight)


def l2_norm(curve: BoundaryCurve, f) -> float:
    f = _check_field(curve, f)
    return float(np.sqrt(curve.weights @ (f * f)))


def fourier_field(curve: BoundaryCurve, mean: float = 0.0, terms=()) -> np.ndarray:
    """Synthesize ``mean + sum c cos(k theta) + s sin(k theta)`` on the nodes.

    ``terms`` is an iterable of ``(k, c, s)`` triples.
    """
    out = np.full(curve.N, float(mean))
    for term in terms:
        k, c, s = term
        k = int(k)
        if k < 1 or k > curve.N // 2:
            raise GeometryError(f"harmonic {k} is outside 1..{curve.N // 2}")
        out += float(c) * np.cos(k * curve.theta) + float(s) * np.sin(k * curve.theta)
    return out


def contains(curve: BoundaryCurve, points) -> np.ndarray:
    """Winding-number test for points strictly inside the curve."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rel = curve.nodes[None, :, :] - pts[:, None, :]
    ang = np.arctan2(rel[..., 1], rel[..., 0])
    d = np.diff(np.concatenate([ang, ang[:, :1]], axis=1), axis=1)
    d = (d + np.pi) % (2.0 * np.pi) - np.pi
    return np.abs(d.sum(axis=1)) > np.pi


def distance_to_nodes(curve: BoundaryCurve, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return np.min(np.linalg.norm(curve.nodes[None, :, :] - pts[:, None, :], axis=2), axis=1)
