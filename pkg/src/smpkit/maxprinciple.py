"""Point classification, fine-limit representatives, weak supersolution
testing, and the strong-maximum-principle dichotomy check.

Vocabulary used throughout:

* ``InE`` -- the local Green integral of nu around the point converges
  (ball-neighborhood test), so the point carries finite local potential;
* ``InN`` -- the integral diverges (log- or power-divergence significant at
  five standard errors);
* ``Undecided`` -- neither test fires; always safe, never escalated.
"""

from dataclasses import dataclass, field, asdict
from math import inf, isfinite

import numpy as np

from . import kernels, potentials
from ._quad import sphere_rule, gauss_segments
from .model import (BROWNIAN, MeasureSpec, RadiiSchedule, ball_volume_const,
                    sphere_area_const, contains, density_value,
                    dist_to_boundary, measure_of_ball)

IN_E = "InE"
IN_N = "InN"
UNDECIDED = "Undecided"

CONSISTENT = "Consistent"
TRIVIAL = "Trivial"
VIOLATION = "VIOLATION"


class IntegrabilityError(RuntimeError):
    """u * nu fails to be integrable against a test bump."""


# ---------------------------------------------------------------------------
# Averages
# ---------------------------------------------------------------------------

def volume_average(u, x, r, d=None, radial_order=24, sphere_order=24,
                   domain=None):
    """Ball average (1 / a_d r^d) int_{B(x,r)} u dy by product quadrature.

    Points outside `domain` (when given) contribute 0, matching the
    extension-by-zero convention for functions defined on D only.
    """
    x = np.asarray(x, float)
    if d is None:
        d = len(x)
    a_d = ball_volume_const(d)
    b_d = sphere_area_const(d)
    assert abs(b_d / a_d - d) < 1e-12, "surface/volume constant mismatch"
    dirs, w = sphere_rule(d, sphere_order)
    t, wt = gauss_segments(0.0, 1.0, nseg=3, npt=radial_order, grade_toward=None)
    vals = np.empty_like(t)
    for i, ti in enumerate(t):
        pts = x[None, :] + r * ti * dirs
        uy = np.asarray(u(pts), float)
        if domain is not None:
            uy = np.where(contains(domain, pts), uy, 0.0)
        vals[i] = np.dot(w, uy)
    # (1/a_d r^d) * b_d r^d int t^{d-1} avg dt = d * int t^{d-1} avg dt
    return d * float(np.dot(wt, t ** (d - 1) * vals))


def fractional_average(u, x, r, alpha, d=None, variant=kernels.NORMALIZED,
                       sphere_order=24, nquad=96, domain=None, cutoff=1e-6,
                       s_max=None):
    """Exit-kernel average of u over the complement of B(x, r).

    Normalized variant: probability average against the exponent-alpha radial
    law.  AsPrinted variant: the exponent-1 kernel truncated at
    s = r (1 + cutoff) (it is not normalizable), reported as-is.
    """
    x = np.asarray(x, float)
    if d is None:
        d = len(x)
    dirs, w = sphere_rule(d, sphere_order)

    def shell_avg(radii):
        out = np.empty(len(radii))
        for i, si in enumerate(radii):
            pts = x[None, :] + si * dirs
            uy = np.asarray(u(pts), float)
            if domain is not None:
                uy = np.where(contains(domain, pts), uy, 0.0)
            out[i] = np.dot(w, uy)
        return out

    if variant == kernels.NORMALIZED:
        z, wz = kernels.exit_radial_rule(alpha, nquad)
        radii = r / np.sqrt(1.0 - z)
        return float(np.dot(wz, shell_avg(radii)) / np.sum(wz))
    if variant == kernels.AS_PRINTED:
        if s_max is None:
            s_max = 16.0 * r
        s, ws = gauss_segments(r * (1.0 + cutoff), s_max, nseg=24, npt=12,
                               grade_toward="a", ratio=1.7)
        c = kernels.printed_constant(d, alpha) * sphere_area_const(d)
        integrand = shell_avg(s) / (s * (s**2 - r**2))
        return c * r ** (2.0 * alpha) * float(np.dot(ws, integrand))
    raise ValueError(f"unknown kernel variant {variant!r}")


# ---------------------------------------------------------------------------
# Fine limits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FineLimitResult:
    point: tuple
    operator_kind: str
    radii: tuple
    averages: tuple
    limit: float
    order: tuple              # exponents used by the extrapolation model
    residual: float
    tail_max: float           # max of averages over the smallest radii
    undecided: bool = False

    def to_dict(self):
        return asdict(self)


def fine_limit(u, x, operator, radii=None, sphere_order=24):
    """Extrapolated small-r limit of ball (alpha = 1) or exit-kernel
    (alpha < 1) averages, with the raw average table retained.

    The model value + c1 r^{p1} + c2 r^{p2} is fit by least squares; tail_max
    (max over the smallest third of the radii) serves as the limsup proxy.
    """
    x = np.asarray(x, float)
    if radii is None:
        radii = RadiiSchedule(r_max=0.2, r_min=0.0125, count=9)
    rr = radii.radii() if isinstance(radii, RadiiSchedule) else \
        np.sort(np.asarray(radii, float))[::-1]
    alpha = operator.alpha
    if operator.kind == BROWNIAN or alpha == 1.0:
        avg = np.array([volume_average(u, x, r, d=operator.dim,
                                       sphere_order=sphere_order,
                                       domain=operator.domain) for r in rr])
        powers = (2.0, 4.0)
    else:
        avg = np.array([fractional_average(u, x, r, alpha, d=operator.dim,
                                           sphere_order=sphere_order,
                                           domain=operator.domain)
                        for r in rr])
        powers = (2.0 * alpha, 2.0)
    X = np.column_stack([np.ones_like(rr)] + [rr**p for p in powers])
    coef, *_ = np.linalg.lstsq(X, avg, rcond=None)
    fitres = float(np.sqrt(np.mean((X @ coef - avg) ** 2)))
    ntail = max(1, len(rr) // 3)
    tail = avg[-ntail:]
    spread = float(np.max(avg) - np.min(avg))
    undecided = fitres > 1e-3 * max(1.0, abs(coef[0]), spread)
    return FineLimitResult(tuple(map(float, x)), operator.kind, tuple(rr),
                           tuple(avg), float(coef[0]), powers, fitres,
                           float(np.max(tail)), undecided)


# ---------------------------------------------------------------------------
# Point classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassificationReport:
    point: tuple
    verdict: str
    deltas: tuple
    J: tuple
    fit: dict
    radius: float
    method: str = "ball-neighborhood test"
    note: str = ""

    def to_dict(self):
        return asdict(self)


def classify_point(x, nu, operator, r=None, deltas=None, cauchy_tol=1e-2,
                   significance=5.0):
    """Convergence test for the local Green integral of nu around x.

    InE when the J table is Cauchy: increments decay geometrically and the
    projected remaining tail is below cauchy_tol relative to J.  InN when
    the mass itself diverges locally, or the log / power divergence
    coefficient is significant at `significance` standard errors AND the
    fitted divergent part explains the bulk of the observed growth of J
    (both tests are invariant under scaling nu).  Undecided otherwise.
    """
    x = np.asarray(x, float)
    if r is None:
        r = 0.5 * float(dist_to_boundary(operator.domain, x)[0])
        r = min(max(r, 1e-3), 0.5)
    if deltas is None:
        deltas = np.geomspace(0.5 * r, 0.002 * r, 10)
    deltas = np.sort(np.asarray(deltas, float))[::-1]

    mass = measure_of_ball(nu, x, float(deltas[-1]), domain=operator.domain)
    if mass.diverges:
        return ClassificationReport(tuple(map(float, x)), IN_N,
                                    tuple(deltas), (), {}, float(r),
                                    note="measure mass diverges locally")

    lgi = potentials.local_green_integral(x, r, deltas, nu, operator)
    J = np.asarray(lgi.values, float)
    fitd = asdict(lgi.fit)

    diffs = np.abs(np.diff(J))
    scale = max(abs(J[-1]), 1e-12)
    if diffs[-1] == 0.0:
        cauchy = True
    else:
        q = diffs[-1] / max(diffs[-2], 1e-300)
        # geometric projection of the remaining tail sum
        cauchy = q < 0.95 and diffs[-1] * q / (1.0 - q) < cauchy_tol * scale

    fit = lgi.fit
    growth = max(J[-1] - J[0], 1e-12)
    log_span = np.log(deltas[0] / deltas[-1])
    log_sig = (fit.ok and fit.log_coef > significance * max(fit.log_se, 1e-300)
               and fit.log_coef * log_span > 0.3 * growth)
    pow_span = deltas[-1] ** -fit.pow_exponent - deltas[0] ** -fit.pow_exponent
    pow_sig = (fit.ok and fit.pow_coef > significance * max(fit.pow_se, 1e-300)
               and fit.pow_coef * pow_span > 0.3 * growth)

    if cauchy:
        verdict, note = IN_E, "J table Cauchy"
    elif log_sig or pow_sig:
        verdict = IN_N
        note = "log divergence" if log_sig else \
            f"power divergence (gamma={fit.pow_exponent:g})"
    else:
        verdict, note = UNDECIDED, "neither Cauchy nor significant divergence"
    return ClassificationReport(tuple(map(float, x)), verdict, tuple(deltas),
                                tuple(map(float, J)), fitd, float(r),
                                note=note)


# ---------------------------------------------------------------------------
# Weak supersolution test
# ---------------------------------------------------------------------------

_HUGE = 1e12


def _bump_quad(center, rho, fn, d, radial_order=16, sphere_order=32, nseg=4,
               grade=None):
    """int over B(center, rho) of fn by product quadrature."""
    c = np.asarray(center, float)
    dirs, w = sphere_rule(d, sphere_order)
    t, wt = gauss_segments(0.0, 1.0, nseg=nseg, npt=radial_order,
                           grade_toward=grade)
    vals = np.empty_like(t)
    for i, ti in enumerate(t):
        vals[i] = np.dot(w, fn(c[None, :] + rho * ti * dirs))
    return sphere_area_const(d) * rho**d * float(np.dot(wt, t ** (d - 1) * vals))


def _pole_centered_quad(pole, s_lo, s_hi, fn, d, sphere_order=48,
                        radial_order=12, nseg=16):
    """int over the shell s_lo < |y - pole| < s_hi of fn, graded toward the
    inner radius (for integrands singular at the pole)."""
    p = np.asarray(pole, float)
    dirs, w = sphere_rule(d, sphere_order)
    s, ws = gauss_segments(max(s_lo, 1e-12), s_hi, nseg=nseg, npt=radial_order,
                           grade_toward="a", ratio=1.8)
    vals = np.empty_like(s)
    for i, si in enumerate(s):
        vals[i] = np.dot(w, fn(p[None, :] + si * dirs))
    return sphere_area_const(d) * float(np.dot(ws, s ** (d - 1) * vals))


def _minus_A_bump(bump, pts, operator):
    """-A xi on an array of points (A = Delta or -(-Delta)^alpha)."""
    if operator.kind == BROWNIAN or operator.alpha == 1.0:
        return -bump.laplacian(pts)
    return np.array([kernels.apply_minus_frac_laplacian(bump, p,
                                                        operator.alpha,
                                                        d=operator.dim)
                     for p in np.atleast_2d(pts)])


def weak_supersolution_test(u, nu, operator, bumps, tol=1e-6,
                            u_singularity=None):
    """For each bump xi: <u, -A xi> + <u nu, xi>; pass iff min >= -tol.

    u_singularity: optional point where u blows up (e.g. a Green pole); the
    principal-part integral is then taken in coordinates centered there.
    Integrability of u * nu is checked pointwise; nonfinite quadrature values
    raise IntegrabilityError naming the offending bump.
    """
    d = operator.dim
    dom = operator.domain
    nonlocal_op = not (operator.kind == BROWNIAN or operator.alpha == 1.0)
    values = []
    for bi, bump in enumerate(bumps):
        c = np.asarray(bump.center, float)
        rho = bump.radius

        # <u, -A xi>
        if nonlocal_op:
            # -A xi does not vanish outside supp xi: integrate over D
            dc = np.asarray(_domain_center(dom), float)
            reach = _domain_reach(dom)
            term1 = _pole_centered_quad(
                dc, 0.0, reach,
                lambda pts: np.where(contains(dom, pts),
                                     np.asarray(u(pts), float), 0.0)
                * _minus_A_bump(bump, pts, operator),
                d, sphere_order=24, nseg=8)
        elif (u_singularity is not None
              and np.linalg.norm(np.asarray(u_singularity) - c) < rho):
            p = np.asarray(u_singularity, float)
            s_hi = float(np.linalg.norm(p - c)) + rho
            term1 = _pole_centered_quad(
                p, 0.0, s_hi,
                lambda pts: np.asarray(u(pts), float)
                * (-bump.laplacian(pts)), d)
        else:
            term1 = _bump_quad(c, rho,
                               lambda pts: np.asarray(u(pts), float)
                               * (-bump.laplacian(pts)), d)

        # <u nu, xi>: pointwise product quadrature; density poles inside the
        # support get pole-centered grading, surface terms a sphere rule
        term2 = 0.0
        for t in nu.density_terms():
            one = MeasureSpec((t,))

            def integrand(pts):
                uy = np.asarray(u(pts), float)
                dv = density_value(one, pts, domain=dom, clamp=_HUGE)
                return uy * np.asarray(bump(pts), float) * dv

            pole = getattr(t, "pole", None)
            if pole is not None and np.linalg.norm(np.asarray(pole) - c) < rho:
                s_hi = float(np.linalg.norm(np.asarray(pole) - c)) + rho
                part = _pole_centered_quad(np.asarray(pole), 0.0, s_hi,
                                           integrand, d)
            else:
                part = _bump_quad(c, rho, integrand, d)
            if not isfinite(part):
                raise IntegrabilityError(
                    f"u*nu not integrable against bump {bi} at "
                    f"center={tuple(c)}, radius={rho}")
            term2 += part
        for t in nu.surface_terms():
            sc = np.asarray(t.center, float)
            dirs, w = sphere_rule(d, 48)
            pts = sc[None, :] + t.radius * dirs
            uy = np.where(contains(dom, pts), np.asarray(u(pts), float), 0.0)
            area = sphere_area_const(d) * t.radius ** (d - 1)
            term2 += t.weight * area * float(np.dot(w, uy * bump(pts)))

        values.append(float(term1 + term2))
    values = np.asarray(values)
    argmin = int(np.argmin(values)) if len(values) else -1
    return {
        "values": [float(v) for v in values],
        "min_value": float(values.min()) if len(values) else 0.0,
        "argmin": argmin,
        "tol": float(tol),
        "passed": bool(len(values) == 0 or values.min() >= -tol),
    }


def _domain_center(dom):
    from .model import bounding_box
    lo, hi = bounding_box(dom)
    return 0.5 * (lo + hi)


def _domain_reach(dom):
    from .model import bounding_box
    lo, hi = bounding_box(dom)
    return 0.5 * float(np.linalg.norm(hi - lo))


# ---------------------------------------------------------------------------
# Dichotomy check
# ---------------------------------------------------------------------------

def _tail_decreasing(averages, ntail=4, slack=1e-12):
    a = np.asarray(averages, float)
    t = a[-min(ntail, len(a)):]
    return bool(np.all(np.diff(t) <= slack + 1e-9 * np.abs(t[:-1])))

@dataclass(frozen=True)
class DichotomyReport:
    verdict: str
    grid: tuple               # evaluated points
    values: tuple             # fine-limit (or MC) value of u at each point
    zero_set: tuple           # indices into grid
    classifications: tuple    # ClassificationReport per zero point
    weak_test: dict
    zero_threshold: float
    truncation_level: float

    def to_dict(self):
        out = asdict(self)
        out["classifications"] = [c.to_dict() if hasattr(c, "to_dict") else c
                                  for c in self.classifications]
        return out


def dichotomy_check(u, nu, operator, grid, bumps, zero_threshold_rel=1e-6,
                    weak_tol=1e-6, radii=None, mc_estimates=None,
                    u_singularity=None):
    """Zero-set audit of a nonnegative supersolution candidate.

    Runs the weak supersolution test first (its summary is embedded), then
    computes the fine-limit representative of u (truncated at the grid max
    to keep averages bounded) on the grid, collects the zero set Z by the
    limsup proxy, classifies each zero point, and issues the verdict:
    Trivial (u vanishes on the whole grid), Consistent (every zero point is
    InN or Z is empty), Undecided (any zero point Undecided), VIOLATION
    (a zero point classified InE -- the checkable negation of the dichotomy).

    mc_estimates: optional per-grid-point (value, stderr) pairs replacing the
    fine-limit computation (for Monte-Carlo-valued u); a point joins Z only
    if its 99% CI fails to exclude the threshold from above.
    """
    grid = np.atleast_2d(np.asarray(grid, float))
    weak = weak_supersolution_test(u, nu, operator, bumps, tol=weak_tol,
                                   u_singularity=u_singularity)
    if not weak["passed"]:
        raise ValueError("weak supersolution inequality fails "
                         f"(min value {weak['min_value']:.3g}); the "
                         "dichotomy hypothesis is not satisfied")

    if mc_estimates is not None:
        vals = np.array([v for v, _ in mc_estimates])
        ses = np.array([s for _, s in mc_estimates])
        k = float(vals.max(initial=0.0))
        thresh = zero_threshold_rel * max(k, 1e-300)
        proxy = vals - 2.576 * ses      # 99% lower confidence bound
        zero_idx = np.where(proxy < thresh)[0]
        table = vals
    else:
        gvals = np.asarray(u(grid), float)
        k = float(gvals.max(initial=0.0))
        if k < 1e-12:
            return DichotomyReport(TRIVIAL, tuple(map(tuple, grid)),
                                   tuple(map(float, gvals)), (), (), weak,
                                   0.0, k)
        uk = lambda pts: np.minimum(np.asarray(u(pts), float), k)
        thresh = zero_threshold_rel * k
        fls = [fine_limit(uk, x, operator, radii=radii) for x in grid]
        table = np.array([fl.limit for fl in fls])
        # zero membership: extrapolated limit below threshold AND the tail
        # of the average table decreasing (limsup consistent with 0)
        zero_idx = np.array([
            i for i, fl in enumerate(fls)
            if (not fl.undecided and fl.limit < thresh
                and _tail_decreasing(fl.averages))], dtype=int)

    if k < 1e-12:
        return DichotomyReport(TRIVIAL, tuple(map(tuple, grid)),
                               tuple(map(float, table)), (), (), weak,
                               float(thresh), k)

    reports = tuple(classify_point(grid[i], nu, operator) for i in zero_idx)
    if len(zero_idx) == 0:
        verdict = CONSISTENT
    elif any(rep.verdict == UNDECIDED for rep in reports):
        verdict = UNDECIDED
    elif any(rep.verdict == IN_E for rep in reports):
        verdict = VIOLATION
    else:
        verdict = CONSISTENT
    return DichotomyReport(verdict, tuple(map(tuple, grid)),
                           tuple(map(float, table)),
                           tuple(int(i) for i in zero_idx), reports, weak,
                           float(thresh), k)
