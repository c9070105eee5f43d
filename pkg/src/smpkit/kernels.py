"""Closed-form Green functions, exit (Poisson) kernels, and pointwise
application of -Laplacian and -fractional-Laplacian to bump test functions.

Generator normalization: the Brownian generator is the full Laplacian (so the
Green function solves -Delta G(x,.) = delta_x), and the stable generator is
-(-Delta)^alpha with Fourier symbol -|xi|^{2 alpha}.
"""

from dataclasses import dataclass
from functools import lru_cache
from math import gamma, pi, sin, log, inf

import numpy as np
from scipy.special import betainc, beta as beta_fn, roots_jacobi

from . import model
from .model import sphere_area_const


class DomainError(ValueError):
    """A query point lies outside the kernel's domain of definition."""


class SingularityError(ValueError):
    """Evaluation exactly at the kernel diagonal."""


# ---------------------------------------------------------------------------
# Green functions
# ---------------------------------------------------------------------------

def newton_constant(d):
    """Constant of the fundamental solution of -Delta: 1/((d-2) b_d), d >= 3."""
    return 1.0 / ((d - 2) * sphere_area_const(d))


def green_ball_brownian(d, R, x, y):
    """Dirichlet Green function of B(0, R) for the Laplacian, image formula.

    d >= 3 uses the Kelvin image charge; d = 2 the logarithmic variant.
    Vectorized over rows of y.
    """
    x = np.asarray(x, float)
    y = np.atleast_2d(np.asarray(y, float))
    if np.linalg.norm(x) >= R or np.any(np.linalg.norm(y, axis=1) >= R):
        raise DomainError("green_ball_brownian: points must lie in B(0,R)")
    rxy = np.linalg.norm(y - x, axis=1)
    if np.any(rxy == 0.0):
        raise SingularityError("green_ball_brownian: coincident points")
    t = np.linalg.norm(x)
    if t == 0.0:
        # image point at infinity; limit of the image term
        if d == 2:
            vals = (np.log(R / np.linalg.norm(y, axis=1))) / (2.0 * pi)
        else:
            vals = newton_constant(d) * (rxy ** (2 - d) - R ** (2 - d))
    else:
        xstar = x * (R**2 / t**2)
        rim = np.linalg.norm(y - xstar, axis=1)
        if d == 2:
            vals = np.log(rim * t / (R * rxy)) / (2.0 * pi)
        else:
            vals = newton_constant(d) * (
                rxy ** (2 - d) - (R / t) ** (d - 2) * rim ** (2 - d))
    vals = np.clip(vals, 0.0, None)  # guard tiny negative roundoff at boundary
    return vals if vals.size > 1 else float(vals[0])


def green_ball_brownian_sphere_avg(d, R, t, s):
    """Average of G_{B(0,R)}(x, .) over the concentric sphere of radius s,
    where t = |x|.  Newton's theorem applied to source and image charge."""
    m = np.maximum(np.asarray(t, float), np.asarray(s, float))
    if d == 2:
        return np.log(R / m) / (2.0 * pi)
    return newton_constant(d) * (m ** (2.0 - d) - R ** (2.0 - d))


def green_whole_space(d, alpha, x, y):
    """Riesz kernel of -(-Delta)^alpha on R^d (2 alpha < d; alpha=1 Newtonian)."""
    if 2.0 * alpha >= d:
        raise DomainError("green_whole_space: 2*alpha < d required")
    x = np.asarray(x, float)
    y = np.atleast_2d(np.asarray(y, float))
    rxy = np.linalg.norm(y - x, axis=1)
    if np.any(rxy == 0.0):
        raise SingularityError("green_whole_space: coincident points")
    const = gamma(d / 2.0 - alpha) / (4.0**alpha * pi ** (d / 2.0) * gamma(alpha))
    vals = const * rxy ** (2.0 * alpha - d)
    return vals if vals.size > 1 else float(vals[0])


def green_ball_stable(d, alpha, R, x, y):
    """Dirichlet Green function of B(0, R) for -(-Delta)^alpha, 2 alpha < d.

    Hypergeometric-integral closed form, evaluated via the regularized
    incomplete beta function.  Validated by property tests only.
    """
    if not (0.0 < alpha < 1.0 and 2.0 * alpha < d):
        raise DomainError("green_ball_stable: alpha in (0,1), 2*alpha < d")
    x = np.asarray(x, float) / R
    y = np.atleast_2d(np.asarray(y, float)) / R
    if np.linalg.norm(x) >= 1.0 or np.any(np.linalg.norm(y, axis=1) >= 1.0):
        raise DomainError("green_ball_stable: points must lie in B(0,R)")
    rxy = np.linalg.norm(y - x, axis=1)
    if np.any(rxy == 0.0):
        raise SingularityError("green_ball_stable: coincident points")
    z = (1.0 - np.dot(x, x)) * (1.0 - np.einsum("ij,ij->i", y, y)) / rxy**2
    const = gamma(d / 2.0) / (4.0**alpha * pi ** (d / 2.0) * gamma(alpha) ** 2)
    frac = beta_fn(alpha, d / 2.0 - alpha) * betainc(
        alpha, d / 2.0 - alpha, z / (1.0 + z))
    vals = const * rxy ** (2.0 * alpha - d) * frac * R ** (2.0 * alpha - d)
    return vals if vals.size > 1 else float(vals[0])


def expected_residence(d, R, x):
    """E_x of the killed lifetime in B(0, R) for the Laplacian:
    (R^2 - |x|^2) / (2 d)."""
    t = float(np.linalg.norm(np.asarray(x, float)))
    if t > R:
        raise DomainError("expected_residence: x outside the ball")
    return (R**2 - t**2) / (2.0 * d)


def expected_residence_stable(d, alpha, R, x):
    """E_x of the killed lifetime in B(0, R) for -(-Delta)^alpha:
    Gamma(d/2) / (4^alpha Gamma(1+alpha) Gamma(d/2+alpha)) (R^2-|x|^2)^alpha."""
    t = float(np.linalg.norm(np.asarray(x, float)))
    if t > R:
        raise DomainError("expected_residence_stable: x outside the ball")
    const = gamma(d / 2.0) / (4.0**alpha * gamma(1.0 + alpha) * gamma(d / 2.0 + alpha))
    return const * (R**2 - t**2) ** alpha


# ---------------------------------------------------------------------------
# Stable exit kernel (two variants)
# ---------------------------------------------------------------------------

AS_PRINTED = "AsPrinted"
NORMALIZED = "Normalized"


def printed_constant(d, alpha):
    """The literal constant pi^{1+d/2} Gamma(d/2) sin(pi alpha)."""
    return pi ** (1.0 + d / 2.0) * gamma(d / 2.0) * sin(pi * alpha)


@lru_cache(maxsize=64)
def exit_radial_rule(alpha, n=96):
    """Gauss-Jacobi rule for integrals against z^{-alpha} (1-z)^{alpha-1} dz
    on (0, 1), where z = 1 - r^2/s^2 parametrizes the exit radius s > r.

    Returns (z_nodes, weights); sum(weights * f(z)) equals
    int_0^1 z^{-alpha} (1-z)^{alpha-1} f(z) dz exactly for polynomial f.
    """
    xj, wj = roots_jacobi(n, alpha - 1.0, -alpha)
    return (xj + 1.0) / 2.0, wj


@lru_cache(maxsize=64)
def exit_norm_constant(d, alpha):
    """Numerically determined constant making the exponent-alpha kernel
    r^{2 alpha} (|y|^2 - r^2)^{-alpha} |y|^{-d} a probability density."""
    z, w = exit_radial_rule(alpha)
    total = float(np.sum(w))  # = B(1-alpha, alpha) up to quadrature
    return 2.0 / (sphere_area_const(d) * total)


def exit_kernel_center(d, alpha, r, y, variant=NORMALIZED):
    """Exit density at y (|y| > r) for the stable process leaving B(0, r)
    from the center.

    AsPrinted evaluates the literal formula
        c * r^{2 alpha} / (|y|^d (|y|^2 - r^2)),  c = printed_constant(d,alpha);
    Normalized evaluates K * r^{2 alpha} (|y|^2 - r^2)^{-alpha} |y|^{-d}
    with K fixed by numerical normalization.
    """
    if not (0.0 < alpha < 1.0 and 2.0 * alpha < d):
        raise DomainError("exit_kernel_center: alpha in (0,1), 2*alpha < d")
    y = np.atleast_1d(np.asarray(y, float))
    s = y if y.ndim == 1 else np.linalg.norm(y, axis=1)
    if np.any(s <= r):
        raise DomainError("exit_kernel_center: |y| > r required")
    if variant == AS_PRINTED:
        vals = printed_constant(d, alpha) * r ** (2 * alpha) / (s**d * (s**2 - r**2))
    elif variant == NORMALIZED:
        vals = (exit_norm_constant(d, alpha) * r ** (2 * alpha)
                * (s**2 - r**2) ** (-alpha) * s ** (-d))
    else:
        raise ValueError(f"unknown exit-kernel variant {variant!r}")
    return vals if vals.size > 1 else float(vals[0])


def exit_radial_cdf(alpha, r, s):
    """P(|Y| <= s) for the Normalized exit kernel (start at center, ball
    radius r); independent of d."""
    s = np.asarray(s, float)
    z = np.clip(1.0 - (r / np.maximum(s, r)) ** 2, 0.0, 1.0)
    return betainc(1.0 - alpha, alpha, z)


@lru_cache(maxsize=64)
def exit_radial_cdf_table(alpha, npts=4001):
    """Numeric radial CDF table in the variable z = 1 - r^2/s^2.

    Built by cumulative quadrature of the normalized radial marginal
    z^{-alpha} (1-z)^{alpha-1} / B(1-alpha, alpha); endpoint singularities
    are absorbed with the exact local primitives.
    """
    # graded grid accumulating both endpoint singularities
    u = np.linspace(0.0, 1.0, npts)
    z = 0.5 * (np.sin(pi * (u - 0.5)) + 1.0)  # clusters at 0 and 1
    z = np.clip(z, 1e-300, 1.0)
    cdf = np.empty_like(z)
    total = beta_fn(1.0 - alpha, alpha)
    mid = np.empty(npts - 1)
    # per-interval mass by 4-point Gauss with singular weight handled by
    # the substitutions z = t^{1/(1-alpha)} near 0 and 1-z = t^{1/alpha} near 1
    xg, wg = np.polynomial.legendre.leggauss(6)
    for i in range(npts - 1):
        a, b = z[i], z[i + 1]
        if a <= 0.0:
            a = 0.0
        if b <= 0.1:   # near 0: substitute z = t^{1/(1-alpha)}
            ta, tb = a ** (1.0 - alpha), b ** (1.0 - alpha)
            t = 0.5 * (tb - ta) * (xg + 1.0) + ta
            zz = t ** (1.0 / (1.0 - alpha))
            f = (1.0 - zz) ** (alpha - 1.0) / (1.0 - alpha)
            mid[i] = 0.5 * (tb - ta) * np.dot(wg, f)
        elif a >= 0.9:  # near 1: substitute 1-z = t^{1/alpha}
            ta, tb = (1.0 - b) ** alpha, (1.0 - a) ** alpha
            t = 0.5 * (tb - ta) * (xg + 1.0) + ta
            zz = 1.0 - t ** (1.0 / alpha)
            f = zz ** (-alpha) / alpha
            mid[i] = 0.5 * (tb - ta) * np.dot(wg, f)
        else:
            t = 0.5 * (b - a) * (xg + 1.0) + a
            f = t ** (-alpha) * (1.0 - t) ** (alpha - 1.0)
            mid[i] = 0.5 * (b - a) * np.dot(wg, f)
    cdf[0] = 0.0
    cdf[1:] = np.cumsum(mid)
    cdf /= cdf[-1]
    return z, cdf, total


def exit_kernel_tail_mass(d, alpha, r, s_out):
    """P(|Y| > s_out) under the Normalized kernel, via the numeric table."""
    z, cdf, _ = exit_radial_cdf_table(alpha)
    zq = 1.0 - (r / s_out) ** 2
    return 1.0 - float(np.interp(zq, z, cdf))


def as_printed_radial_cdf(alpha, r, s, delta):
    """Radial CDF induced by the AsPrinted kernel truncated to |y| > r(1+delta)
    and renormalized.  The untruncated mass diverges at the sphere, so a
    cutoff is part of the definition; delta is the relative inner cutoff."""
    s = np.asarray(s, float)
    s0 = r * (1.0 + delta)
    # radial marginal ~ s^{-1} (s^2 - r^2)^{-1}: primitive in closed form
    def prim(t):
        return log((t**2 - r**2) / t**2) / (2.0 * r**2)
    den = 0.0 - prim(s0)  # primitive -> 0 as t -> infinity
    num = np.array([prim(max(float(si), s0)) - prim(s0) for si in np.atleast_1d(s)])
    out = np.clip(num / den, 0.0, 1.0)
    return out if out.size > 1 else float(out[0])


# ---------------------------------------------------------------------------
# Bump test functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestBump:
    """Radial bump (1 - |y-c|^2 / rho^2)_+^4 with closed-form derivatives.

    C^3 across the support boundary, which suffices for every quadrature in
    this package; nonnegative whenever amplitude >= 0.
    """
    __test__ = False   # not a test case despite the class name

    center: tuple
    radius: float
    amplitude: float = 1.0

    def __call__(self, pts):
        pts = np.atleast_2d(np.asarray(pts, float))
        u = np.sum((pts - np.asarray(self.center)) ** 2, axis=1) / self.radius**2
        v = np.clip(1.0 - u, 0.0, None)
        return self.amplitude * v**4

    def laplacian(self, pts):
        """Closed-form Laplacian (no numerical differentiation)."""
        pts = np.atleast_2d(np.asarray(pts, float))
        d = pts.shape[1]
        s2 = np.sum((pts - np.asarray(self.center)) ** 2, axis=1)
        u = s2 / self.radius**2
        v = np.clip(1.0 - u, 0.0, None)
        rho2 = self.radius**2
        out = -8.0 * d / rho2 * v**3 + 48.0 * s2 / rho2**2 * v**2
        out[u >= 1.0] = 0.0
        return self.amplitude * out

    def integral(self, d):
        """int bump dm: amplitude * b_d * rho^d * int_0^1 s^{d-1}(1-s^2)^4 ds."""
        s, w = np.polynomial.legendre.leggauss(32)
        s = 0.5 * (s + 1.0)
        w = 0.5 * w
        val = np.dot(w, s ** (d - 1) * (1.0 - s**2) ** 4)
        return self.amplitude * sphere_area_const(d) * self.radius**d * val


def frac_laplacian_constant(d, alpha):
    """Standard constant of (-Delta)^alpha: 4^a Gamma(d/2+a)/(pi^{d/2}|Gamma(-a)|)."""
    return 4.0**alpha * gamma(d / 2.0 + alpha) / (pi ** (d / 2.0) * abs(gamma(-alpha)))


def apply_minus_frac_laplacian(bump, x, alpha, d=None, order=20, nseg=24):
    """Value of -Delta^alpha bump at x (= +(-Delta)^alpha bump(x)).

    alpha = 1 dispatches to the analytic -Delta; alpha < 1 uses the
    second-difference rewriting of the principal-value integral, with the
    tail beyond the bump support integrated in closed form.
    """
    x = np.asarray(x, float)
    if d is None:
        d = len(x)
    if alpha == 1.0:
        return -float(bump.laplacian(x[None, :])[0])
    c = frac_laplacian_constant(d, alpha)
    b_d = sphere_area_const(d)
    xival = float(bump(x[None, :])[0])
    reach = float(np.linalg.norm(x - np.asarray(bump.center))) + bump.radius
    from ._quad import sphere_rule, gauss_segments
    dirs, w = sphere_rule(d, order)
    s, ws = gauss_segments(1e-12, reach, nseg=nseg, npt=12, grade_toward="a",
                           ratio=1.8)
    g = np.empty_like(s)
    for i, si in enumerate(s):
        g[i] = np.dot(w, bump(x + si * dirs) + bump(x - si * dirs)) - 2.0 * xival
    inner = float(np.dot(ws, g * s ** (-1.0 - 2.0 * alpha)))
    tail = -2.0 * xival * reach ** (-2.0 * alpha) / (2.0 * alpha)
    # (-Delta)^a xi(x) = -(c/2) * b_d * int (second difference) s^{-1-2a} ds
    return -(c / 2.0) * b_d * (inner + tail)
