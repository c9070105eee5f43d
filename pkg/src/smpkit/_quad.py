"""Shared quadrature rules: sphere averages, graded radial segments."""

import numpy as np
from functools import lru_cache


@lru_cache(maxsize=64)
def sphere_rule(d, order=24):
    """Unit-sphere average rule in dimension d.

    Returns (dirs, w) with dirs of shape (m, d) and w summing to 1, so that
    sum(w * f(dirs)) approximates the spherical average of f.  Exact for
    polynomials of degree < order (d=2: trig degree; d=3: tensor
    Gauss-Legendre in cos(theta) x uniform phi).
    """
    if d == 2:
        m = max(4, 2 * order)
        phi = 2.0 * np.pi * (np.arange(m) + 0.5) / m
        dirs = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        w = np.full(m, 1.0 / m)
        return dirs, w
    if d == 3:
        n = max(2, order)
        mu, wmu = np.polynomial.legendre.leggauss(n)
        nphi = 2 * n
        phi = 2.0 * np.pi * (np.arange(nphi) + 0.5) / nphi
        st = np.sqrt(np.clip(1.0 - mu**2, 0.0, None))
        x = np.outer(st, np.cos(phi)).ravel()
        y = np.outer(st, np.sin(phi)).ravel()
        z = np.repeat(mu, nphi)
        dirs = np.stack([x, y, z], axis=1)
        w = np.repeat(wmu, nphi) / (2.0 * nphi)
        return dirs, w
    raise NotImplementedError(f"sphere quadrature only for d in {{2,3}}, got d={d}")


def sphere_average(f, center, radius, d, order=24):
    """Average of f over the sphere of given center and radius."""
    dirs, w = sphere_rule(d, order)
    pts = np.asarray(center)[None, :] + radius * dirs
    return float(np.dot(w, f(pts)))


def gauss_segments(a, b, nseg=8, npt=12, grade_toward=None, ratio=2.0):
    """Composite Gauss-Legendre nodes/weights on [a, b].

    If grade_toward is 'a' or 'b', segment lengths shrink geometrically
    toward that endpoint (for integrable endpoint singularities).
    """
    if b <= a:
        return np.empty(0), np.empty(0)
    x, w = np.polynomial.legendre.leggauss(npt)
    if grade_toward is None:
        edges = np.linspace(a, b, nseg + 1)
    else:
        t = ratio ** np.arange(nseg + 1)
        t = (t - 1.0) / (t[-1] - 1.0)
        if grade_toward == "a":
            edges = a + (b - a) * t
        else:
            edges = b - (b - a) * t[::-1]
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        h = 0.5 * (hi - lo)
        nodes.append(lo + h * (x + 1.0))
        weights.append(h * w)
    return np.concatenate(nodes), np.concatenate(weights)


def ball_average(f, center, radius, d, order=24, nseg=6):
    """Average of f over the solid ball B(center, radius)."""
    s, ws = gauss_segments(0.0, radius, nseg=nseg, npt=order // 2 + 4)
    vals = np.array([sphere_average(f, center, si, d, order) for si in s])
    # average = (d / r^d) * int_0^r s^{d-1} avg_sphere(s) ds
    return float(d / radius**d * np.dot(ws, s ** (d - 1) * vals))
