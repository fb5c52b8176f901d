import numpy as np
import pytest
from hypothesis import given, strategies as st

from bdflow import geometry
from bdflow.geometry import GeometryError

# complete elliptic integral oracle: 4 a E(1 - b^2/a^2) for a = 1, b = 0.5
ELLIPSE_PERIMETER = 4.844224110273838


def test_unit_circle(circle64):
    np.testing.assert_allclose(circle64.speed, 1.0, atol=1e-14)
    np.testing.assert_allclose(circle64.curvature, 1.0, atol=1e-12)
    assert circle64.perimeter == pytest.approx(2 * np.pi, abs=1e-13)


def test_ellipse_perimeter(ellipse256):
    assert ellipse256.perimeter == pytest.approx(ELLIPSE_PERIMETER, abs=1e-6)
    assert geometry.integrate_boundary(ellipse256, np.ones(256)) == pytest.approx(
        ELLIPSE_PERIMETER, abs=1e-6)


def test_star_invariants():
    c = geometry.make_curve("star", {"eps": 0.1, "m": 3}, 128)
    assert c.speed.min() > 0
    np.testing.assert_allclose(np.linalg.norm(c.normals, axis=1), 1.0, atol=1e-14)
    np.testing.assert_allclose(c.weights @ c.normals, 0.0, atol=1e-10)


def test_star_perimeter_against_adaptive_quadrature():
    from scipy.integrate import quad

    eps, m = 0.05, 4
    c = geometry.make_curve("star", {"eps": eps, "m": m}, 128)

    def speed(t):
        r = 1 + eps * np.cos(m * t)
        dr = -eps * m * np.sin(m * t)
        return np.hypot(r, dr)

    exact, _ = quad(speed, 0, 2 * np.pi, epsabs=1e-12, epsrel=1e-12, limit=200)
    assert c.perimeter == pytest.approx(exact, rel=1e-10)


def test_star_amplitude_guard():
    with pytest.raises(GeometryError):
        geometry.make_curve("star", {"eps": 0.2, "m": 3}, 64)


def test_unknown_kind():
    with pytest.raises(GeometryError):
        geometry.make_curve("square", {}, 64)


def test_integrals(circle64):
    th = circle64.theta
    assert geometry.integrate_boundary(circle64, np.ones(64)) == pytest.approx(2 * np.pi)
    assert abs(geometry.integrate_boundary(circle64, np.cos(th))) < 1e-12
    one = np.ones(64)
    assert geometry.weighted_inner(circle64, one, one, one) == pytest.approx(2 * np.pi)
    assert abs(geometry.weighted_inner(circle64, np.cos(th), np.sin(th), one)) < 1e-12
    assert geometry.weighted_inner(circle64, np.cos(th), np.cos(th), 2 * one) == pytest.approx(
        2 * np.pi)


def test_weight_must_be_positive(circle64):
    with pytest.raises(GeometryError):
        geometry.weighted_inner(circle64, np.ones(64), np.ones(64), np.zeros(64))


def test_field_shape_checked(circle64):
    with pytest.raises(GeometryError):
        geometry.integrate_boundary(circle64, np.ones(10))


def test_fourier_field(circle64):
    th = circle64.theta
    f = geometry.fourier_field(circle64, 1.0, [(2, 0.5, -0.25)])
    np.testing.assert_allclose(f, 1 + 0.5 * np.cos(2 * th) - 0.25 * np.sin(2 * th), atol=1e-15)


def test_contains(circle64):
    inside = geometry.contains(circle64, [[0.0, 0.0], [0.9, 0.0], [1.1, 0.0]])
    assert inside.tolist() == [True, True, False]


@given(st.floats(0.3, 3.0), st.floats(0.3, 3.0), st.sampled_from([32, 64, 128]))
def test_ellipse_invariants(a, b, N):
    c = geometry.make_curve("ellipse", {"a": a, "b": b}, N)
    np.testing.assert_allclose(np.linalg.norm(c.normals, axis=1), 1.0, atol=1e-13)
    # outward normals: n . x > 0 for a convex curve around the origin
    assert np.all(np.einsum("ij,ij->i", c.normals, c.nodes) > 0)
    # divergence theorem: half the integral of x . n is the enclosed area pi a b
    area = 0.5 * c.weights @ np.einsum("ij,ij->i", c.nodes, c.normals)
    assert area == pytest.approx(np.pi * a * b, rel=1e-6)
    assert 2 * np.pi * min(a, b) * (1 - 1e-12) <= c.perimeter <= 2 * np.pi * max(a, b) * (1 + 1e-12)
