"""Domain, operator, measure, and schedule descriptors shared by all modules.

All types are frozen dataclasses: immutable after construction and safe for
unrestricted concurrent reads.  Scope is bounded open subsets of R^d with the
Dirichlet-killed Laplacian (alpha=1) or fractional Laplacian (alpha in (0,1)),
d >= 2.
"""

from dataclasses import dataclass, field
from math import gamma, pi, inf
import numpy as np

from scipy.integrate import quad

from ._quad import sphere_rule, gauss_segments

BROWNIAN = "BrownianLaplacian"
FRACTIONAL = "FractionalLaplacian"


def ball_volume_const(d):
    """a_d = pi^{d/2} / Gamma(d/2 + 1): volume of the unit ball."""
    return pi ** (d / 2.0) / gamma(d / 2.0 + 1.0)


def sphere_area_const(d):
    """b_d = 2 pi^{d/2} / Gamma(d/2): surface area of the unit sphere."""
    return 2.0 * pi ** (d / 2.0) / gamma(d / 2.0)


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple


@dataclass(frozen=True)
class UnionOfBalls:
    balls: tuple  # tuple of Ball; components may be disjoint


@dataclass(frozen=True)
class Annulus:
    center: tuple
    r_in: float
    r_out: float


def domain_dim(domain):
    if isinstance(domain, Ball):
        return len(domain.center)
    if isinstance(domain, Box):
        return len(domain.lo)
    if isinstance(domain, UnionOfBalls):
        return len(domain.balls[0].center)
    if isinstance(domain, Annulus):
        return len(domain.center)
    raise TypeError(f"unknown domain {domain!r}")


def dist_to_boundary(domain, pts):
    """Signed distance to the boundary: positive inside, negative outside.

    For UnionOfBalls the value is the max over components, which for a point
    inside a component is the (conservative) largest inscribed ball radius.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if isinstance(domain, Ball):
        out = domain.radius - np.linalg.norm(pts - np.asarray(domain.center), axis=1)
    elif isinstance(domain, Box):
        lo = np.asarray(domain.lo)
        hi = np.asarray(domain.hi)
        out = np.minimum((pts - lo).min(axis=1), (hi - pts).min(axis=1))
    elif isinstance(domain, UnionOfBalls):
        out = np.max(
            [b.radius - np.linalg.norm(pts - np.asarray(b.center), axis=1)
             for b in domain.balls], axis=0)
    elif isinstance(domain, Annulus):
        rho = np.linalg.norm(pts - np.asarray(domain.center), axis=1)
        out = np.minimum(rho - domain.r_in, domain.r_out - rho)
    else:
        raise TypeError(f"unknown domain {domain!r}")
    return out


def contains(domain, pts):
    return dist_to_boundary(domain, pts) > 0.0


def inradius(domain):
    """Radius of the largest ball inscribed anywhere in the domain."""
    if isinstance(domain, Ball):
        return domain.radius
    if isinstance(domain, Box):
        return 0.5 * float(np.min(np.asarray(domain.hi) - np.asarray(domain.lo)))
    if isinstance(domain, UnionOfBalls):
        return max(b.radius for b in domain.balls)
    if isinstance(domain, Annulus):
        return 0.5 * (domain.r_out - domain.r_in)
    raise TypeError(f"unknown domain {domain!r}")


def bounding_box(domain):
    if isinstance(domain, Ball):
        c = np.asarray(domain.center)
        return c - domain.radius, c + domain.radius
    if isinstance(domain, Box):
        return np.asarray(domain.lo, float), np.asarray(domain.hi, float)
    if isinstance(domain, UnionOfBalls):
        los, his = zip(*(bounding_box(b) for b in domain.balls))
        return np.min(los, axis=0), np.max(his, axis=0)
    if isinstance(domain, Annulus):
        c = np.asarray(domain.center)
        return c - domain.r_out, c + domain.r_out
    raise TypeError(f"unknown domain {domain!r}")


# ---------------------------------------------------------------------------
# Operator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OperatorSpec:
    kind: str            # BROWNIAN or FRACTIONAL
    alpha: float         # in (0, 1]; alpha = 1 means BROWNIAN
    dim: int             # d >= 2
    domain: object       # DomainSpec


def laplacian_on(domain):
    return OperatorSpec(BROWNIAN, 1.0, domain_dim(domain), domain)


def fractional_on(domain, alpha):
    return OperatorSpec(FRACTIONAL, alpha, domain_dim(domain), domain)


# ---------------------------------------------------------------------------
# Measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantDensity:
    level: float
    weight: float = 1.0


@dataclass(frozen=True)
class DensityPower:
    exponent: float          # a >= 0, density V(y) = |y - pole|^{-a}
    pole: tuple
    weight: float = 1.0


@dataclass(frozen=True)
class BoundaryPower:
    exponent: float          # V(y) = dist(y, boundary)^{-a}
    weight: float = 1.0


@dataclass(frozen=True)
class TabulatedDensity:
    axes: tuple              # tuple of 1-D coordinate arrays (as tuples)
    values: tuple            # flattened row-major grid values
    weight: float = 1.0

    def interpolator(self):
        from scipy.interpolate import RegularGridInterpolator
        axes = [np.asarray(a, float) for a in self.axes]
        shape = tuple(len(a) for a in axes)
        vals = np.asarray(self.values, float).reshape(shape)
        return RegularGridInterpolator(axes, vals, bounds_error=False,
                                       fill_value=0.0)


@dataclass(frozen=True)
class SphereSurface:
    center: tuple
    radius: float
    weight: float = 1.0


DENSITY_TERMS = (ConstantDensity, DensityPower, BoundaryPower, TabulatedDensity)


@dataclass(frozen=True)
class MeasureSpec:
    terms: tuple = ()

    def density_terms(self):
        return tuple(t for t in self.terms if isinstance(t, DENSITY_TERMS))

    def surface_terms(self):
        return tuple(t for t in self.terms if isinstance(t, SphereSurface))

    def scaled(self, c):
        out = []
        for t in self.terms:
            d = t.__dict__.copy()
            d["weight"] = t.weight * c
            out.append(type(t)(**d))
        return MeasureSpec(tuple(out))

    def __add__(self, other):
        return MeasureSpec(self.terms + other.terms)


ZERO_MEASURE = MeasureSpec(())


def density_value(nu, pts, domain=None, clamp=None):
    """Total density of the density-type terms of nu at pts (shape (n, d)).

    SphereSurface terms carry no density and are skipped.  clamp, when given,
    caps each term's pointwise value (used by path accumulators near poles).
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    out = np.zeros(len(pts))
    for t in nu.terms:
        if isinstance(t, ConstantDensity):
            v = np.full(len(pts), t.level)
        elif isinstance(t, DensityPower):
            r = np.linalg.norm(pts - np.asarray(t.pole), axis=1)
            with np.errstate(divide="ignore"):
                v = r ** (-t.exponent)
        elif isinstance(t, BoundaryPower):
            if domain is None:
                raise ValueError("BoundaryPower density needs the domain")
            dist = np.clip(dist_to_boundary(domain, pts), 0.0, None)
            with np.errstate(divide="ignore"):
                v = dist ** (-t.exponent)
        elif isinstance(t, TabulatedDensity):
            v = t.interpolator()(pts)
        elif isinstance(t, SphereSurface):
            continue
        else:
            raise TypeError(f"unknown measure term {t!r}")
        if clamp is not None:
            v = np.minimum(v, clamp)
        out += t.weight * v
    return out


# ---------------------------------------------------------------------------
# Radii schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadiiSchedule:
    r_max: float
    r_min: float
    count: int
    spacing: str = "geometric"   # or "linear"
    cutoff_factor: float = 0.25  # inner cutoff delta_j = factor * r_j

    def radii(self):
        if self.spacing == "geometric":
            return np.geomspace(self.r_max, self.r_min, self.count)
        return np.linspace(self.r_max, self.r_min, self.count)

    def cutoffs(self):
        return self.cutoff_factor * self.radii()


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _validate_domain(domain, out):
    try:
        d = domain_dim(domain)
    except TypeError:
        out.append("domain: unknown shape")
        return
    if isinstance(domain, Ball) and domain.radius <= 0:
        out.append("domain.radius: radius > 0 required")
    if isinstance(domain, Box):
        if np.any(np.asarray(domain.hi) <= np.asarray(domain.lo)):
            out.append("domain.box: hi > lo required in every coordinate")
        if len(domain.lo) != len(domain.hi):
            out.append("domain.box: lo/hi dimension mismatch")
    if isinstance(domain, UnionOfBalls):
        if not domain.balls:
            out.append("domain.balls: at least one component required")
        for i, b in enumerate(domain.balls):
            if b.radius <= 0:
                out.append(f"domain.balls[{i}].radius: radius > 0 required")
    if isinstance(domain, Annulus):
        if not (0 < domain.r_in < domain.r_out):
            out.append("domain.annulus: 0 < r_in < r_out required")


def validate(spec):
    """Return a list of invariant violations (empty iff the spec is valid)."""
    out = []
    if isinstance(spec, OperatorSpec):
        if not (0.0 < spec.alpha <= 1.0):
            out.append("alpha: alpha in (0,1] required")
        if spec.kind == BROWNIAN and spec.alpha != 1.0:
            out.append("alpha: BrownianLaplacian requires alpha = 1")
        if spec.kind == FRACTIONAL:
            if not (spec.alpha < 1.0):
                out.append("alpha: FractionalLaplacian requires alpha < 1")
            if not (2.0 * spec.alpha < spec.dim):
                out.append("alpha: 2*alpha < d required")
        if spec.kind not in (BROWNIAN, FRACTIONAL):
            out.append(f"kind: unknown operator kind {spec.kind!r}")
        if spec.dim < 2:
            out.append("dim: d >= 2 required")
        if spec.domain is not None:
            _validate_domain(spec.domain, out)
            try:
                if domain_dim(spec.domain) != spec.dim:
                    out.append("domain: dimension mismatch with dim")
            except TypeError:
                pass
        return out
    if isinstance(spec, MeasureSpec):
        for i, t in enumerate(spec.terms):
            if t.weight < 0:
                out.append(f"terms[{i}].weight: weight >= 0 required")
            if isinstance(t, (DensityPower, BoundaryPower)) and t.exponent < 0:
                out.append(f"terms[{i}].exponent: exponent >= 0 required")
            if isinstance(t, ConstantDensity) and t.level < 0:
                out.append(f"terms[{i}].level: level >= 0 required")
            if isinstance(t, SphereSurface) and t.radius <= 0:
                out.append(f"terms[{i}].radius: radius > 0 required")
        return out
    if isinstance(spec, RadiiSchedule):
        if not (spec.r_max > spec.r_min > 0):
            out.append("radii: r_max > r_min > 0 required")
        if spec.count < 2:
            out.append("radii.count: at least 2 radii required")
        if not (0 < spec.cutoff_factor < 1):
            out.append("radii.cutoff_factor: in (0,1) required")
        return out
    raise TypeError(f"validate: unsupported spec {type(spec).__name__}")


# ---------------------------------------------------------------------------
# Measure of a ball
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mass:
    value: float
    diverges: bool = False
    achieved_tol: float = 0.0

    def __float__(self):
        return inf if self.diverges else self.value


def _cap_area_fraction(d, s, t, r):
    """Fraction of the sphere of radius s about the pole lying in B(c, r),
    where t = |c - pole|.  Vectorized in s."""
    s = np.asarray(s, float)
    frac = np.zeros_like(s)
    full = s <= r - t
    frac[full] = 1.0
    part = (~full) & (np.abs(s - t) < r)
    if np.any(part):
        sp = s[part]
        cosang = np.clip((sp**2 + t**2 - r**2) / (2.0 * sp * t), -1.0, 1.0)
        if d == 3:
            frac[part] = 0.5 * (1.0 - cosang)
        elif d == 2:
            frac[part] = np.arccos(cosang) / pi
        else:
            raise NotImplementedError("off-center power mass only for d in {2,3}")
    return frac


def _sphere_cap_area(d, rho, t, r):
    """Area of the sphere S(center, rho) inside B(c, r), t = |c - center|."""
    return sphere_area_const(d) * rho ** (d - 1) * float(
        _cap_area_fraction(d, np.array([rho]), t, r)[0])


def measure_of_ball(nu, center, r, domain=None, tol=1e-8):
    """nu(B(center, r)) with closed forms where available, else quadrature.

    Returns a Mass; diverges=True flags a power term with exponent >= d whose
    pole lies inside the (closed) ball, or a BoundaryPower term with a >= 1 on
    a ball touching the boundary.
    """
    if r <= 0:
        raise ValueError("measure_of_ball: r > 0 required")
    center = np.asarray(center, float)
    d = len(center)
    total = 0.0
    worst = 0.0
    for t in nu.terms:
        if t.weight == 0.0:
            continue
        if isinstance(t, ConstantDensity):
            total += t.weight * t.level * ball_volume_const(d) * r**d
        elif isinstance(t, DensityPower):
            a = t.exponent
            tt = float(np.linalg.norm(center - np.asarray(t.pole)))
            if a >= d and tt <= r:
                return Mass(inf, diverges=True)
            if tt == 0.0:
                total += t.weight * sphere_area_const(d) * r ** (d - a) / (d - a)
            else:
                lo, hi = max(0.0, tt - r), tt + r
                b_d = sphere_area_const(d)

                def integrand(s):
                    return s ** (d - 1 - a) * b_d * _cap_area_fraction(
                        d, np.array([s]), tt, r)[0]

                val, err = quad(integrand, lo, hi, points=[tt],
                                limit=200, epsabs=tol, epsrel=tol)
                total += t.weight * val
                worst = max(worst, err)
        elif isinstance(t, SphereSurface):
            tt = float(np.linalg.norm(center - np.asarray(t.center)))
            total += t.weight * _sphere_cap_area(d, t.radius, tt, r)
        elif isinstance(t, BoundaryPower):
            if domain is None:
                raise ValueError("BoundaryPower mass needs the domain")
            gap = float(dist_to_boundary(domain, center)[0]) - r
            if gap <= 0 and t.exponent >= 1.0:
                return Mass(inf, diverges=True)
            val, err = _quad_density_ball(
                lambda p: density_value(MeasureSpec((t,)), p, domain=domain),
                center, r, d)
            total += val
            worst = max(worst, err)
        elif isinstance(t, TabulatedDensity):
            val, err = _quad_density_ball(
                lambda p: t.weight * t.interpolator()(p), center, r, d)
            total += val
            worst = max(worst, err)
        else:
            raise TypeError(f"unknown measure term {t!r}")
    return Mass(total, diverges=False, achieved_tol=worst)


def _quad_density_ball(dens, center, r, d, order=24, nseg=10):
    """Integrate a bounded density over B(center, r) by radial shells."""
    dirs, w = sphere_rule(d, order)
    s, ws = gauss_segments(0.0, r, nseg=nseg, npt=12)
    vals = np.empty_like(s)
    for i, si in enumerate(s):
        pts = center[None, :] + si * dirs
        vals[i] = np.dot(w, dens(pts))
    b_d = sphere_area_const(d)
    coarse = np.dot(ws[::2], s[::2] ** (d - 1) * vals[::2]) * 2.0
    fine = float(np.dot(ws, s ** (d - 1) * vals))
    return b_d * fine, b_d * abs(fine - coarse)
