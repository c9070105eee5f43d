"""Domain/measure model: geometry helpers, validation, ball masses."""

import numpy as np
import pytest

from smpkit.model import (Ball, Box, UnionOfBalls, Annulus, ConstantDensity,
                          DensityPower, SphereSurface, BoundaryPower,
                          MeasureSpec, ball_volume_const, sphere_area_const,
                          contains, dist_to_boundary, domain_dim, inradius,
                          bounding_box, laplacian_on, fractional_on,
                          measure_of_ball, validate, density_value)

BALL = Ball((0.0, 0.0, 0.0), 1.0)


def test_constants():
    # d=3: volume 4pi/3, area 4pi; ratio b_d / a_d = d in every dimension
    assert ball_volume_const(3) == pytest.approx(4.0 * np.pi / 3.0)
    assert sphere_area_const(3) == pytest.approx(4.0 * np.pi)
    for d in (2, 3, 4, 7):
        assert sphere_area_const(d) / ball_volume_const(d) == pytest.approx(d)


def test_geometry_signed_distance():
    pts = np.array([[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [2.0, 0.0, 0.0]])
    sd = dist_to_boundary(BALL, pts)
    assert np.allclose(sd, [1.0, 0.5, -1.0])
    assert contains(BALL, pts).tolist() == [True, True, False]

    box = Box((0.0, 0.0), (2.0, 1.0))
    assert dist_to_boundary(box, np.array([[0.5, 0.5]]))[0] == pytest.approx(0.5)
    assert domain_dim(box) == 2

    ann = Annulus((0.0, 0.0), 0.5, 1.0)
    sd = dist_to_boundary(ann, np.array([[0.75, 0.0], [0.0, 0.0]]))
    assert sd[0] == pytest.approx(0.25)
    assert sd[1] < 0

    uo = UnionOfBalls((Ball((0.0, 0.0), 1.0), Ball((3.0, 0.0), 0.5)))
    assert contains(uo, np.array([[3.2, 0.0]]))[0]
    assert inradius(uo) == pytest.approx(1.0)
    lo, hi = bounding_box(uo)
    assert np.allclose(lo, [-1.0, -1.0]) and np.allclose(hi, [3.5, 1.0])


def test_validation_catches_bad_specs():
    assert validate(laplacian_on(BALL)) == []
    bad = fractional_on(BALL, 1.7)
    assert any("alpha" in msg for msg in validate(bad))
    # 2 alpha < d violated: d = 3 with alpha too close to 1 is fine, but a
    # fractional operator with 2 alpha >= d must be rejected
    tight = fractional_on(Ball((0.0, 0.0), 1.0), 0.999)
    assert validate(tight) == []  # 1.998 < 2, still admissible
    neg = MeasureSpec((ConstantDensity(1.0, weight=-2.0),))
    assert any("weight" in msg for msg in validate(neg))


def test_density_value_and_clamp():
    nu = MeasureSpec((DensityPower(1.0, (0.0, 0.0, 0.0), 2.0),))
    pts = np.array([[0.5, 0.0, 0.0], [0.0, 0.0, 0.0]])
    v = density_value(nu, pts, domain=BALL, clamp=100.0)
    assert v[0] == pytest.approx(4.0)
    # clamp caps the per-term power value before the weight is applied
    assert v[1] == pytest.approx(200.0)


def test_measure_of_ball_closed_forms():
    lam = MeasureSpec((ConstantDensity(1.0),))
    m = measure_of_ball(lam, (0.0, 0.0, 0.0), 1.0)
    assert float(m) == pytest.approx(4.0 * np.pi / 3.0, rel=1e-10)

    # int_{B(0,1)} |y|^-2 dy = 4 pi
    nu = MeasureSpec((DensityPower(2.0, (0.0, 0.0, 0.0), 1.0),))
    assert float(measure_of_ball(nu, (0, 0, 0), 1.0)) == pytest.approx(
        4.0 * np.pi, rel=1e-8)

    # sphere surface: full sphere inside the ball
    surf = MeasureSpec((SphereSurface((0.0, 0.0, 0.0), 0.25, 2.0),))
    assert float(measure_of_ball(surf, (0, 0, 0), 0.5)) == pytest.approx(
        2.0 * 4.0 * np.pi * 0.25**2, rel=1e-10)


def test_measure_of_ball_off_center_quadrature():
    nu = MeasureSpec((DensityPower(1.0, (0.0, 0.0, 0.0), 1.0),))
    # pole outside the queried ball: smooth integrand, compare to a brute
    # Monte Carlo estimate
    rng = np.random.default_rng(1)
    c = np.array([0.5, 0.0, 0.0])
    pts = c + rng.uniform(-0.2, 0.2, size=(200_000, 3))
    keep = np.linalg.norm(pts - c, axis=1) <= 0.2
    mc = (np.mean(1.0 / np.linalg.norm(pts[keep], axis=1))
          * 4.0 / 3.0 * np.pi * 0.2**3)
    val = float(measure_of_ball(nu, c, 0.2))
    assert val == pytest.approx(mc, rel=5e-3)


def test_measure_of_ball_divergence_flags():
    hot = MeasureSpec((DensityPower(3.0, (0.0, 0.0, 0.0), 1.0),))
    assert measure_of_ball(hot, (0, 0, 0), 0.5).diverges
    edge = MeasureSpec((BoundaryPower(1.5),))
    m = measure_of_ball(edge, (0.9, 0.0, 0.0), 0.2, domain=BALL)
    assert m.diverges


def test_measure_scaling_and_addition():
    a = MeasureSpec((ConstantDensity(1.0),))
    b = MeasureSpec((DensityPower(1.0, (0, 0, 0), 1.0),))
    both = a + b
    assert len(both.terms) == 2
    double = a.scaled(2.0)
    pts = np.array([[0.1, 0.2, 0.0]])
    assert density_value(double, pts)[0] == pytest.approx(
        2.0 * density_value(a, pts)[0])
