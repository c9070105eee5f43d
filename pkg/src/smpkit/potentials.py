"""Quadrature potentials R(mu), local Green integrals, and the Neumann-series
solver for the measure-perturbed resolvent.

Closed forms are used wherever the measure geometry admits them (constant
densities, centered power densities, concentric spheres on a ball domain);
everything else goes through singularity-split radial-shell quadrature.
"""

from dataclasses import dataclass
from math import inf, log, pi

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import model, kernels
from .model import (Ball, MeasureSpec, ConstantDensity, DensityPower,
                    BoundaryPower, TabulatedDensity, SphereSurface,
                    sphere_area_const, density_value, BROWNIAN, FRACTIONAL)
from ._quad import sphere_rule, gauss_segments


class NonContractingError(RuntimeError):
    """The Neumann iteration is not contracting; use the Monte-Carlo fallback."""


@dataclass(frozen=True)
class PotentialValue:
    value: float
    achieved_tol: float = 0.0
    diverges: bool = False
    warning: bool = False

    def __float__(self):
        return inf if self.diverges else self.value


def _require_ball(operator):
    if not isinstance(operator.domain, Ball):
        raise NotImplementedError(
            "quadrature potentials need a Ball domain; use the paths module "
            "for other shapes")
    return np.asarray(operator.domain.center, float), operator.domain.radius


def _green_vals(operator, x, pts):
    """G_D(x, y) for rows of pts, zero outside D, never raising on the mask."""
    c, R = _require_ball(operator)
    xs = np.asarray(x, float) - c
    ys = np.atleast_2d(np.asarray(pts, float)) - c
    out = np.zeros(len(ys))
    inside = np.linalg.norm(ys, axis=1) < R * (1.0 - 1e-14)
    inside &= np.linalg.norm(ys - xs, axis=1) > 0.0
    if np.any(inside):
        if operator.kind == BROWNIAN:
            out[inside] = kernels.green_ball_brownian(operator.dim, R, xs, ys[inside])
        else:
            out[inside] = kernels.green_ball_stable(
                operator.dim, operator.alpha, R, xs, ys[inside])
    return out


def _green_sing_exponent(operator):
    # G(x,y) ~ |x-y|^{-(d - 2 alpha)} (d=2 alpha=1: logarithmic)
    return operator.dim - 2.0 * operator.alpha


def _shell_quadrature(operator, x, dens, s_lo, s_hi, order=24, nseg=20):
    """b_d * int_{s_lo}^{s_hi} s^{d-1} avg_theta[G(x, x+s theta) dens] ds,
    graded toward s_lo.  Returns (value, rough error)."""
    d = operator.dim
    x = np.asarray(x, float)
    dirs, w = sphere_rule(d, order)
    s, ws = gauss_segments(s_lo, s_hi, nseg=nseg, npt=12, grade_toward="a",
                           ratio=1.7)
    shell = np.empty_like(s)
    for i, si in enumerate(s):
        pts = x[None, :] + si * dirs
        shell[i] = np.dot(w, _green_vals(operator, x, pts) * dens(pts))
    b_d = sphere_area_const(d)
    fine = float(np.dot(ws, s ** (d - 1) * shell))
    coarse = float(np.dot(ws[::2], (s ** (d - 1) * shell)[::2])) * 2.0
    return b_d * fine, b_d * abs(fine - coarse)


# ---------------------------------------------------------------------------
# R(mu)
# ---------------------------------------------------------------------------

def potential(mu, operator, x, tol=1e-6):
    """R(mu)(x) = int G_D(x, y) mu(dy): closed forms per term when available,
    else singularity-splitting quadrature.  Returns a PotentialValue with a
    diverges flag when the integral is +infinity."""
    c, R = _require_ball(operator)
    x = np.asarray(x, float)
    if float(model.dist_to_boundary(operator.domain, x)[0]) <= 0:
        raise kernels.DomainError("potential: x must lie in D")
    d = operator.dim
    total, worst, warn = 0.0, 0.0, False
    for t in mu.terms:
        if t.weight == 0.0:
            continue
        if isinstance(t, ConstantDensity):
            if operator.kind == BROWNIAN:
                val = t.level * kernels.expected_residence(d, R, x - c)
            else:
                val = t.level * kernels.expected_residence_stable(
                    d, operator.alpha, R, x - c)
            total += t.weight * val
        elif isinstance(t, SphereSurface):
            rho = t.radius
            sc = np.asarray(t.center, float)
            if operator.kind == BROWNIAN and np.allclose(sc, c):
                tt = float(np.linalg.norm(x - c))
                avg = kernels.green_ball_brownian_sphere_avg(d, R, tt, rho)
                total += t.weight * sphere_area_const(d) * rho ** (d - 1) * avg
            else:
                dirs, w = sphere_rule(d, 32)
                pts = sc[None, :] + rho * dirs
                avg = float(np.dot(w, _green_vals(operator, x, pts)))
                total += t.weight * sphere_area_const(d) * rho ** (d - 1) * avg
                worst = max(worst, tol)
        elif isinstance(t, DensityPower):
            res = _potential_density_power(operator, x, t, tol)
            if res.diverges:
                return PotentialValue(inf, diverges=True)
            total += res.value
            worst = max(worst, res.achieved_tol)
            warn = warn or res.warning
        elif isinstance(t, (BoundaryPower, TabulatedDensity)):
            sub = MeasureSpec((t,))

            def dens(pts, sub=sub):
                return density_value(sub, pts, domain=operator.domain)

            S = float(np.linalg.norm(x - c)) + R
            val, err = _shell_quadrature(operator, x, dens, 1e-10 * R, S)
            total += val
            worst = max(worst, err)
            warn = warn or err > tol
        else:
            raise TypeError(f"unknown measure term {t!r}")
    return PotentialValue(total, achieved_tol=worst, warning=warn)


def _potential_density_power(operator, x, term, tol):
    c, R = _require_ball(operator)
    d = operator.dim
    a = term.exponent
    p = np.asarray(term.pole, float)
    t_xp = float(np.linalg.norm(x - p))
    if a >= d:
        return PotentialValue(inf, diverges=True)
    if t_xp < 1e-14 and a >= 2.0 * operator.alpha:
        return PotentialValue(inf, diverges=True)

    # fully radial closed geometry: x at center, pole at center, Brownian
    if (operator.kind == BROWNIAN and t_xp < 1e-14
            and np.allclose(x, c)):
        # int_0^R s^{d-1-a} b_d nc (s^{2-d} - R^{2-d}) ds  (d>=3)
        s, w = gauss_segments(0.0, R, nseg=24, npt=12, grade_toward="a")
        avg = kernels.green_ball_brownian_sphere_avg(d, R, 0.0, np.maximum(s, 1e-300))
        val = sphere_area_const(d) * float(np.dot(w, s ** (d - 1 - a) * avg))
        return PotentialValue(term.weight * val, achieved_tol=1e-10)

    S = float(np.linalg.norm(x - c)) + R
    pieces = 0.0
    err = 0.0
    h_p = 0.0
    if t_xp > 1e-14 and a > 0.0:
        h_p = 0.5 * t_xp
        # pole-centered shells: G smooth here
        dirs, w = sphere_rule(d, 24)
        s, ws = gauss_segments(0.0, h_p, nseg=16, npt=12, grade_toward="a")
        shell = np.empty_like(s)
        for i, si in enumerate(s):
            pts = p[None, :] + max(si, 1e-300) * dirs
            shell[i] = np.dot(w, _green_vals(operator, x, pts))
        v = sphere_area_const(d) * float(np.dot(ws, s ** (d - 1 - a) * shell))
        pieces += v

    def dens(pts):
        r = np.linalg.norm(pts - p, axis=1)
        mask = r > h_p
        with np.errstate(divide="ignore"):
            out = np.where(mask, r ** (-a) if a > 0 else 1.0, 0.0)
        return out

    val, e = _shell_quadrature(operator, x, dens, 1e-10 * R, S, nseg=24)
    pieces += val
    err = max(err, e)
    return PotentialValue(term.weight * pieces, achieved_tol=err,
                          warning=err > tol)


class PotentialField:
    """Evaluable R(mu) with per-query achieved tolerance."""

    def __init__(self, mu, operator, tol=1e-6):
        self.mu = mu
        self.operator = operator
        self.tol = tol
        self.last = None

    def __call__(self, pts):
        pts = np.atleast_2d(np.asarray(pts, float))
        out = np.empty(len(pts))
        for i, xi in enumerate(pts):
            res = potential(self.mu, self.operator, xi, tol=self.tol)
            out[i] = float(res)
            self.last = res
        return out


# ---------------------------------------------------------------------------
# Local Green integral J_delta
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DivergenceFit:
    const: float
    log_coef: float
    pow_coef: float
    pow_exponent: float
    const_se: float
    log_se: float
    pow_se: float
    residual: float
    ok: bool


@dataclass(frozen=True)
class LocalGreenIntegral:
    point: tuple
    radius: float
    deltas: tuple
    values: tuple            # J_delta, same order as deltas (decreasing delta)
    fit: DivergenceFit
    no_fit: bool = False


def fit_divergence(deltas, J, gammas=(0.25, 0.5, 1.0, 2.0)):
    """Least-squares fit J(delta) = a + b log(1/delta) + c delta^{-gamma},
    gamma chosen from a candidate set by residual."""
    deltas = np.asarray(deltas, float)
    J = np.asarray(J, float)
    best = None
    for gam in gammas:
        X = np.column_stack([np.ones_like(deltas), np.log(1.0 / deltas),
                             deltas ** (-gam)])
        scale = np.maximum(np.abs(X).max(axis=0), 1e-30)
        Xs = X / scale
        coef_s, res, rank, _ = np.linalg.lstsq(Xs, J, rcond=None)
        if rank < 3:
            continue
        coef = coef_s / scale
        dof = max(len(J) - 3, 1)
        resid = float(np.sqrt(np.sum((Xs @ coef_s - J) ** 2) / dof))
        cov = np.linalg.pinv(Xs.T @ Xs) * resid**2
        se = np.sqrt(np.diag(cov)) / scale
        if best is None or resid < best[0]:
            best = (resid, coef, se, gam)
    if best is None:
        return DivergenceFit(0, 0, 0, 0, 0, 0, 0, float("nan"), ok=False)
    resid, coef, se, gam = best
    return DivergenceFit(coef[0], coef[1], coef[2], gam,
                         se[0], se[1], se[2], resid, ok=True)


def local_green_integral(x, r, deltas, nu, operator, order=24, npt_seg=10):
    """J_delta = int_{delta < |y-x| < r} G_D(x, y) nu(dy) for every delta in
    the (decreasing) schedule, plus the divergence fit."""
    x = np.asarray(x, float)
    d = operator.dim
    deltas = np.sort(np.asarray(deltas, float))[::-1]
    if deltas[0] >= r:
        raise ValueError("local_green_integral: deltas must be < r")
    dens_terms = nu.density_terms()
    dirs, w = sphere_rule(d, order)
    b_d = sphere_area_const(d)

    def dens(pts):
        return density_value(MeasureSpec(dens_terms), pts,
                             domain=operator.domain)

    edges = np.concatenate([deltas[::-1], [r]])
    masses = np.zeros(len(edges) - 1)
    for k in range(len(edges) - 1):
        s, ws = gauss_segments(edges[k], edges[k + 1], nseg=6, npt=npt_seg,
                               grade_toward="a")
        shell = np.empty_like(s)
        for i, si in enumerate(s):
            pts = x[None, :] + si * dirs
            shell[i] = np.dot(w, _green_vals(operator, x, pts) * dens(pts))
        masses[k] = b_d * float(np.dot(ws, s ** (d - 1) * shell))
    cum = np.cumsum(masses[::-1])[::-1]  # cum[k] = mass over (edges[k], r)
    J_by_delta = cum[: len(deltas)][::-1]  # J for deltas in decreasing order

    # surface terms: sphere mass within the annulus
    for t in nu.surface_terms():
        sc = np.asarray(t.center, float)
        rho = t.radius
        pts = sc[None, :] + rho * dirs
        g = _green_vals(operator, x, pts)
        dist = np.linalg.norm(pts - x, axis=1)
        area = b_d * rho ** (d - 1)
        for j, dl in enumerate(deltas):
            mask = (dist > dl) & (dist < r)
            J_by_delta[j] += t.weight * area * float(np.dot(w, g * mask))

    fit = fit_divergence(deltas, J_by_delta)
    return LocalGreenIntegral(tuple(x), r, tuple(deltas), tuple(J_by_delta),
                              fit, no_fit=not fit.ok)


# ---------------------------------------------------------------------------
# Neumann series for the perturbed resolvent
# ---------------------------------------------------------------------------

def _radial_density(nu, center, s):
    """Density of nu on the radius grid s (radial terms only)."""
    out = np.zeros_like(s)
    for t in nu.terms:
        if isinstance(t, ConstantDensity):
            out += t.weight * t.level
        elif isinstance(t, DensityPower):
            if not np.allclose(t.pole, center):
                raise ValueError("neumann_resolvent: density pole must sit at "
                                 "the ball center (radial fast path)")
            with np.errstate(divide="ignore"):
                out += t.weight * np.maximum(s, 1e-300) ** (-t.exponent)
        elif isinstance(t, SphereSurface):
            raise ValueError("neumann_resolvent: surface terms not supported; "
                             "use the Monte-Carlo fallback")
        else:
            raise ValueError(f"neumann_resolvent: unsupported term {t!r}")
    return out


class RadialResolvent:
    """R on radial profiles over a ball, via cumulative quadrature in O(n)."""

    def __init__(self, operator, n=4000):
        c, R = _require_ball(operator)
        if operator.kind != BROWNIAN:
            raise NotImplementedError(
                "radial Neumann series implemented for the Brownian case")
        self.center = c
        self.R = R
        self.d = operator.dim
        self.s = np.linspace(0.0, R, n)

    def apply(self, g):
        """Rg on the grid for radial g sampled on self.s."""
        d, R, s = self.d, self.R, self.s
        if d == 2:
            sg = s * g
            C1 = cumulative_trapezoid(sg, s, initial=0.0)
            with np.errstate(divide="ignore"):
                lnRs = np.log(R / np.maximum(s, 1e-300))
            C2 = cumulative_trapezoid(sg * lnRs, s, initial=0.0)
            out = lnRs * C1 + (C2[-1] - C2)
            out[0] = C2[-1]  # limit at the center
            return out
        nc = kernels.newton_constant(d)
        b_d = sphere_area_const(d)
        sg1 = s ** (d - 1) * g
        C1 = cumulative_trapezoid(sg1, s, initial=0.0)
        C2 = cumulative_trapezoid(s * g, s, initial=0.0)
        with np.errstate(divide="ignore"):
            t_pow = np.maximum(s, 1e-300) ** (2.0 - d)
        out = nc * b_d * (t_pow * C1 + (C2[-1] - C2) - R ** (2.0 - d) * C1[-1])
        out[0] = nc * b_d * (C2[-1] - R ** (2.0 - d) * C1[-1])
        return out


@dataclass
class NeumannResult:
    value: float
    lower: float
    upper: float
    terms_used: int
    grid: np.ndarray
    profile: np.ndarray      # midpoint of the final even/odd partial sums

    def field(self, center):
        center = np.asarray(center, float)

        def u(pts):
            pts = np.atleast_2d(np.asarray(pts, float))
            rr = np.linalg.norm(pts - center, axis=1)
            return np.interp(rr, self.grid, self.profile)

        return u


def neumann_resolvent(f_or_mu, nu, operator, x, max_terms=60, tol=1e-9, n=4000):
    """Alternating Neumann series for R^nu applied to f (radial callable of the
    radius) or a radial MeasureSpec, evaluated at x.

    Consecutive partial sums bracket the limit when the iteration contracts;
    returns the midpoint and the bracket.  Raises NonContractingError when the
    bracket stops shrinking within max_terms.
    """
    c, R = _require_ball(operator)
    res = RadialResolvent(operator, n=n)
    s = res.s
    if isinstance(f_or_mu, MeasureSpec):
        # split: density part through the grid, concentric spheres closed-form
        g = np.zeros_like(s)
        u0 = np.zeros_like(s)
        for t in f_or_mu.terms:
            if isinstance(t, SphereSurface):
                if not np.allclose(t.center, c):
                    raise ValueError("neumann_resolvent: sphere must be "
                                     "concentric with the ball")
                avg = kernels.green_ball_brownian_sphere_avg(
                    operator.dim, R, s, t.radius)
                u0 += (t.weight * sphere_area_const(operator.dim)
                       * t.radius ** (operator.dim - 1) * avg)
            else:
                g += _radial_density(MeasureSpec((t,)), c, s)
        u0 = u0 + res.apply(g)
    else:
        g = np.asarray(f_or_mu(s), float) * np.ones_like(s)
        u0 = res.apply(g)

    V = _radial_density(nu, c, s) if nu.terms else np.zeros_like(s)
    rx = float(np.linalg.norm(np.asarray(x, float) - c))

    partial = u0.copy()
    term = u0.copy()
    evens, odds = [np.interp(rx, s, partial)], []
    prev_width = inf
    for k in range(1, max_terms + 1):
        term = res.apply(term * V)
        partial = partial + (-1.0) ** k * term
        val = float(np.interp(rx, s, partial))
        if k % 2 == 1:
            odds.append(val)
        else:
            evens.append(val)
        if odds and evens:
            lo, hi = min(evens[-1], odds[-1]), max(evens[-1], odds[-1])
            width = hi - lo
            if width < tol:
                mid_profile = partial + 0.5 * (-1.0) ** (k + 1) * term
                return NeumannResult(0.5 * (lo + hi), lo, hi, k, s, mid_profile)
            if k > 6 and width > prev_width:
                raise NonContractingError(
                    "Neumann series bracket not shrinking; the perturbation "
                    "is too strong -- use the Monte-Carlo fallback")
            prev_width = width
    raise NonContractingError(
        f"Neumann series did not reach tol={tol} in {max_terms} terms "
        f"(bracket width {prev_width:.3e}); use the Monte-Carlo fallback")
