"""Green functions, exit kernels, and bump test functions against
closed-form and quadrature oracles."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import betainc

from smpkit import kernels
from smpkit.kernels import (green_ball_brownian, green_ball_brownian_sphere_avg,
                            green_whole_space, green_ball_stable,
                            expected_residence, expected_residence_stable,
                            exit_kernel_center, exit_norm_constant,
                            exit_radial_cdf, exit_radial_cdf_table,
                            printed_constant, TestBump,
                            apply_minus_frac_laplacian, DomainError,
                            NORMALIZED, AS_PRINTED)


def test_green_ball_center_value():
    # G_{B(0,1)}(0, y) = (1/4pi)(1/|y| - 1) in d = 3
    y = np.array([[0.5, 0.0, 0.0]])
    want = (1.0 / 0.5 - 1.0) / (4.0 * np.pi)
    assert green_ball_brownian(3, 1.0, np.zeros(3), y) == pytest.approx(want)


def test_green_ball_symmetry_and_positivity():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x, y = rng.uniform(-0.5, 0.5, size=(2, 3))
        gxy = green_ball_brownian(3, 1.0, x, y[None, :])
        gyx = green_ball_brownian(3, 1.0, y, x[None, :])
        assert gxy == pytest.approx(gyx, rel=1e-10)
        assert gxy > 0


def test_green_ball_boundary_vanishing():
    x = np.array([0.3, 0.1, 0.0])
    y = 0.999999 * np.array([[0.0, 1.0, 0.0]])
    assert abs(green_ball_brownian(3, 1.0, x, y)) < 1e-5


def test_green_sphere_average_newton():
    # average over |y| = s of G(x, .) depends only on max(|x|, s)
    x = np.array([0.4, 0.0, 0.0])
    rng = np.random.default_rng(3)
    for s in (0.2, 0.7):
        dirs = rng.standard_normal((40_000, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        mc = np.mean(green_ball_brownian(3, 1.0, x, s * dirs))
        want = green_ball_brownian_sphere_avg(3, 1.0, 0.4, s)
        assert mc == pytest.approx(want, rel=2e-3)


def test_green_d2_log_form():
    # d = 2 at the center: (1/2pi) log(R/|y|)
    y = np.array([[0.25, 0.0]])
    want = np.log(1.0 / 0.25) / (2.0 * np.pi)
    assert green_ball_brownian(2, 1.0, np.zeros(2), y) == pytest.approx(want)


def test_riesz_kernel_matches_newton_at_alpha_one():
    y = np.array([[0.3, 0.2, 0.1]])
    g1 = green_whole_space(3, 1.0, np.zeros(3), y)
    want = 1.0 / (4.0 * np.pi * np.linalg.norm(y))
    assert g1 == pytest.approx(want, rel=1e-12)


def test_stable_green_reduces_and_integrates():
    # alpha -> 1 recovers the Brownian ball kernel
    x = np.array([0.2, 0.0, 0.0])
    y = np.array([[0.0, 0.4, 0.1]])
    g = green_ball_stable(3, 1.0 - 1e-12, 1.0, x, y)
    gb = green_ball_brownian(3, 1.0, x, y)
    assert g == pytest.approx(gb, rel=1e-6)
    # int G_B(0, y) dy = E_0 tau (closed-form residence); radial quadrature
    alpha = 0.5

    def marg(s):
        return 4.0 * np.pi * s**2 * green_ball_stable(
            3, alpha, 1.0, np.zeros(3), np.array([[s, 0.0, 0.0]]))

    val, _ = quad(marg, 0.0, 1.0, limit=200)
    want = expected_residence_stable(3, alpha, 1.0, np.zeros(3))
    assert val == pytest.approx(want, rel=1e-8)


def test_expected_residence():
    assert expected_residence(3, 1.0, np.zeros(3)) == pytest.approx(1.0 / 6.0)
    assert expected_residence(3, 1.0, np.array([0.5, 0, 0])) == pytest.approx(
        0.75 / 6.0)
    # stable residence at alpha = 1 falls back to the Brownian value
    assert expected_residence_stable(3, 1.0, 1.0, np.zeros(3)) == \
        pytest.approx(1.0 / 6.0, rel=1e-12)


@pytest.mark.parametrize("d,alpha", [(2, 0.25), (2, 0.5), (2, 0.75),
                                     (3, 0.25), (3, 0.5), (3, 0.75)])
def test_normalized_exit_kernel_is_probability(d, alpha):
    b_d = kernels.sphere_area_const(d)

    def marg(s):
        return b_d * s ** (d - 1) * float(
            exit_kernel_center(d, alpha, 1.0, np.array([s])))

    inner, _ = quad(marg, 1.0, 2.0, limit=200)
    outer, _ = quad(marg, 2.0, np.inf, limit=200)
    assert inner + outer == pytest.approx(1.0, abs=1e-6)


def test_normalized_constant_closed_form():
    # the numerically determined constant agrees with
    # Gamma(d/2) sin(pi alpha) / pi^{d/2 + 1}
    from math import gamma, pi, sin
    for d, alpha in [(2, 0.3), (3, 0.5), (3, 0.8)]:
        want = gamma(d / 2.0) * sin(pi * alpha) / pi ** (d / 2.0 + 1.0)
        assert exit_norm_constant(d, alpha) == pytest.approx(want, rel=1e-10)


def test_as_printed_kernel_mass_diverges_at_sphere():
    # exponent-1 kernel: mass over r < |y| < r(1 + delta) blows up as
    # delta -> 0, so the literal formula cannot be a probability density
    d, alpha, r = 3, 0.5, 1.0
    b_d = kernels.sphere_area_const(d)

    def mass_above(delta):
        f = lambda s: b_d * s ** (d - 1) * float(
            exit_kernel_center(d, alpha, r, np.array([s]), AS_PRINTED))
        val, _ = quad(f, r * (1 + delta), 2.0 * r, limit=200)
        return val

    m3, m6 = mass_above(1e-3), mass_above(1e-6)
    assert m6 > m3 + 1.0          # grows without bound
    assert printed_constant(d, alpha) > 0


def test_radial_cdf_analytic_vs_table():
    # analytic: P(|Y| <= s) = betainc(1 - alpha, alpha, 1 - r^2/s^2)
    from scipy.special import beta as beta_fn
    for alpha in (0.25, 0.5, 0.75):
        z, cdf, total = exit_radial_cdf_table(alpha)
        ref = betainc(1.0 - alpha, alpha, z)
        assert np.max(np.abs(cdf - ref)) < 5e-7
        # unnormalized mass of the radial law is the Beta-function constant
        assert total == pytest.approx(beta_fn(1.0 - alpha, alpha), rel=1e-8)
        s = np.array([1.2, 1.7, 3.0])
        got = exit_radial_cdf(alpha, 1.0, s)
        want = betainc(1.0 - alpha, alpha, 1.0 - 1.0 / s**2)
        assert np.allclose(got, want, atol=1e-12)


def test_exit_kernel_domain_errors():
    with pytest.raises(DomainError):
        exit_kernel_center(3, 0.5, 1.0, np.array([0.5]))   # |y| <= r
    with pytest.raises(DomainError):
        exit_kernel_center(2, 1.5, 1.0, np.array([2.0]))   # alpha out of range


def test_bump_calculus():
    bump = TestBump((0.1, -0.2, 0.0), 0.3, 1.7)
    # finite-difference Laplacian check at interior points
    rng = np.random.default_rng(5)
    h = 1e-5
    for _ in range(10):
        x = np.asarray(bump.center) + rng.uniform(-0.15, 0.15, 3)
        lap_fd = 0.0
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            lap_fd += (float(bump((x + e)[None, :])[0])
                       + float(bump((x - e)[None, :])[0])
                       - 2.0 * float(bump(x[None, :])[0])) / h**2
        assert float(bump.laplacian(x[None, :])[0]) == pytest.approx(
            lap_fd, abs=1e-5)
    # vanishes outside the support, including the Laplacian
    far = np.array([[2.0, 0.0, 0.0]])
    assert bump(far)[0] == 0.0 and bump.laplacian(far)[0] == 0.0
    # integral oracle by Monte Carlo
    pts = rng.uniform(-0.3, 0.3, size=(200_000, 3)) + np.asarray(bump.center)
    mc = np.mean(bump(pts)) * 0.6**3
    assert bump.integral(3) == pytest.approx(mc, rel=5e-3)


def test_frac_laplacian_consistency():
    bump = TestBump((0.0, 0.0, 0.0), 0.5, 1.0)
    # alpha = 1 dispatches to the exact Laplacian
    x = np.array([0.1, 0.0, 0.2])
    assert apply_minus_frac_laplacian(bump, x, 1.0) == pytest.approx(
        -float(bump.laplacian(x[None, :])[0]))
    # at the bump's peak the fractional Laplacian is positive (maximum)
    val = apply_minus_frac_laplacian(bump, np.zeros(3), 0.5)
    assert val > 0
    # far outside the support: -A xi < 0 there (xi = 0, neighbors positive)
    far = apply_minus_frac_laplacian(bump, np.array([1.5, 0.0, 0.0]), 0.5)
    assert far < 0
