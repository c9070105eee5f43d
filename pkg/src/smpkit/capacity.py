"""Grid-discretized Riesz capacity programs.

C_1(A): least total mass of a positive measure whose kernel potential is >= 1
on the target A.  c_1(A): most mass supported on A with potential <= 1
everywhere on the grid (weak dual, always <= C_1).  C_p(A), p > 1: least
||f||_p^p over nonnegative densities with potential >= 1 on A.

The kernel is the d = 3 Riesz kernel |x - y|^{2-d}; the singular diagonal is
replaced by the cell's equivalent-ball self-interaction (mean inverse
distance of two uniform points in the volume-matched ball, 6 / (5 a)).
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CapacityProblem:
    centers: np.ndarray       # (N, d) cell centers
    h: float                  # grid spacing
    target: np.ndarray        # (N,) boolean mask
    p: float = 1.0
    kernel_scale: float = 1.0

    @property
    def dim(self):
        return self.centers.shape[1]

    @property
    def cell_weight(self):
        return self.h ** self.dim

    def to_dict(self):
        return {"n_cells": int(len(self.centers)), "h": float(self.h),
                "n_target": int(self.target.sum()), "p": float(self.p),
                "kernel_scale": float(self.kernel_scale)}


@dataclass(frozen=True)
class CapacitySolution:
    value: float
    optimizer: np.ndarray         # measure weights / density on grid cells
    support: np.ndarray           # cell indices carrying the optimizer
    feasibility_residual: float   # min over target of (K mu) - 1
    iterations: int
    duality_gap: float = float("nan")

    def to_dict(self):
        return {"value": float(self.value),
                "feasibility_residual": float(self.feasibility_residual),
                "iterations": int(self.iterations),
                "duality_gap": float(self.duality_gap),
                "support_size": int(len(self.support))}


def grid_problem(lo, hi, n, target, p=1.0, kernel_scale=1.0):
    """Uniform n^d grid of cell centers on the box [lo, hi]^d with a target
    mask from a predicate (callable on (N, d) points) or boolean array."""
    lo = np.atleast_1d(np.asarray(lo, float))
    hi = np.atleast_1d(np.asarray(hi, float))
    d = len(lo)
    h = float((hi[0] - lo[0]) / n)
    axes = [lo[k] + h * (np.arange(n) + 0.5) for k in range(d)]
    grids = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([g.ravel() for g in grids], axis=1)
    mask = target(centers) if callable(target) else np.asarray(target, bool)
    return CapacityProblem(centers, h, mask.astype(bool), p, kernel_scale)


def self_interaction(h, d, kernel_scale=1.0):
    """Cell-averaged |x-y|^{2-d} self-interaction via the equivalent ball."""
    if d != 3:
        raise NotImplementedError("Riesz capacity grids implemented for d=3")
    a = (3.0 * h**3 / (4.0 * np.pi)) ** (1.0 / 3.0)
    return kernel_scale * 6.0 / (5.0 * a)


def kernel_block(prob, rows, cols):
    """Kernel matrix K[rows, cols] with the equivalent-ball diagonal."""
    d = prob.dim
    if d != 3:
        raise NotImplementedError("Riesz capacity grids implemented for d=3")
    xr = prob.centers[rows]
    xc = prob.centers[cols]
    diff = xr[:, None, :] - xc[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    same = dist == 0.0
    with np.errstate(divide="ignore"):
        K = prob.kernel_scale / np.where(same, 1.0, dist)
    K[same] = self_interaction(prob.h, d, prob.kernel_scale)
    return K


def _project_simplex(v):
    """Euclidean projection onto the probability simplex (sort algorithm)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u - css / np.arange(1, len(u) + 1) > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.clip(v - theta, 0.0, None)


def _potential_on(prob, idx_eval, idx_src, mu, chunk=4096):
    """(K mu)_j for j in idx_eval, sources on idx_src, chunked over rows."""
    out = np.empty(len(idx_eval))
    for a in range(0, len(idx_eval), chunk):
        rows = idx_eval[a:a + chunk]
        out[a:a + chunk] = kernel_block(prob, rows, idx_src) @ mu
    return out


def _empty_solution():
    return CapacitySolution(0.0, np.zeros(0), np.zeros(0, dtype=int),
                            0.0, 0, 0.0)


def _equilibrium_weights(prob, A, iters=600, gap_tol=1e-6):
    """Energy-minimizing probability weights on the target cells by projected
    gradient, with the (min, max) of the target potential tracked for
    primal/dual bracketing."""
    K = kernel_block(prob, A, A)
    nA = len(A)
    mu = np.full(nA, 1.0 / nA)
    # deterministic largest-eigenvalue estimate for the step size
    v = np.ones(nA) / np.sqrt(nA)
    for _ in range(30):
        v = K @ v
        lam = float(np.linalg.norm(v))
        v /= lam
    step = 1.0 / max(lam, 1e-300)
    it = 0
    for it in range(1, iters + 1):
        u = K @ mu
        mu = _project_simplex(mu - step * u)
        if it % 25 == 0 or it == iters:
            u = K @ mu
            lo, hi = float(u.min()), float(u.max())
            if hi > 0 and (hi - lo) / hi < gap_tol:
                break
    u = K @ mu
    return mu, u, it


def solve_c1(prob, iters=600, gap_tol=1e-6):
    """Least total mass with potential >= 1 on the target (primal C_1).

    The equilibrium weights are rescaled to exact feasibility; the matching
    dual rescaling gives the reported duality gap.
    """
    A = np.nonzero(prob.target)[0]
    if len(A) == 0:
        return _empty_solution()
    mu, u, it = _equilibrium_weights(prob, A, iters, gap_tol)
    lo, hi = float(u.min()), float(u.max())
    if hi <= 0:
        raise ValueError("degenerate kernel: zero potential on target")
    value_up = 1.0 / lo           # mass of mu/lo, feasible (potential >= 1)
    value_lo = 1.0 / hi           # mass of mu/hi, dual-feasible on target
    nu = mu / lo
    resid = float((u / lo).min() - 1.0)
    gap = (value_up - value_lo) / value_up
    return CapacitySolution(value_up, nu, A, resid, it, gap)


def solve_dual_c1(prob, iters=600, gap_tol=1e-6, chunk=4096):
    """Most mass supported on the target with potential <= 1 on the whole
    grid (the p = 1 dual quantity c_1 <= C_1)."""
    A = np.nonzero(prob.target)[0]
    if len(A) == 0:
        return _empty_solution()
    mu, u, it = _equilibrium_weights(prob, A, iters, gap_tol)
    everywhere = np.arange(len(prob.centers))
    pot = _potential_on(prob, everywhere, A, mu, chunk=chunk)
    top = float(pot.max())
    if top <= 0:
        raise ValueError("degenerate kernel: zero potential")
    nu = mu / top
    value = float(nu.sum())
    resid = float(1.0 - (pot / top).max())   # >= 0: constraint satisfied
    return CapacitySolution(value, nu, A, resid, it,
                            duality_gap=float("nan"))


def solve_cp(prob, iters=400, penalty=None, chunk=4096):
    """Least sum f_i^p w_i over f >= 0 with potential >= 1 on the target,
    p > 1, by projected subgradient with diminishing steps; the returned
    value comes from the best iterate rescaled to exact feasibility."""
    if prob.p <= 1.0:
        raise ValueError("solve_cp needs p > 1 (use solve_c1 for p = 1)")
    A = np.nonzero(prob.target)[0]
    if len(A) == 0:
        return _empty_solution()
    allc = np.arange(len(prob.centers))
    w = prob.cell_weight
    p = prob.p
    KA = None
    if len(A) * len(allc) <= 4 * 10**7:
        KA = kernel_block(prob, A, allc)     # dense target-rows kernel

    def pot_A(f):
        if KA is not None:
            return KA @ (f * w)
        return _potential_on(prob, A, allc, f * w, chunk=chunk)

    def pot_from_violation(viol):
        # K^T applied to the violated-target indicator
        if KA is not None:
            return KA.T @ viol
        out = np.zeros(len(allc))
        for a in range(0, len(allc), chunk):
            cols = allc[a:a + chunk]
            out[a:a + chunk] = kernel_block(prob, A, cols).T @ viol
        return out

    # feasible start: uniform on the target scaled to feasibility
    f = np.zeros(len(allc))
    f[A] = 1.0
    uA = pot_A(f)
    if float(uA.max()) <= 0:
        raise ValueError("infeasible discretization: zero kernel rows")
    f /= max(float(uA.min()), 1e-300)
    best = np.inf
    best_f = f.copy()
    if penalty is None:
        penalty = 10.0 * p * float(np.max(f)) ** (p - 1.0) * w / prob.cell_weight
    step0 = float(np.max(f)) / 2.0
    for k in range(1, iters + 1):
        uA = pot_A(f)
        viol = (uA < 1.0).astype(float)
        g = p * np.clip(f, 0.0, None) ** (p - 1.0) * w \
            - penalty * pot_from_violation(viol) * w
        f = np.clip(f - step0 / np.sqrt(k) * g, 0.0, None)
        uA = pot_A(f)
        m = float(uA.min())
        if m > 0:
            fs = f / m
            val = float(np.sum(fs**p) * w)
            if val < best:
                best, best_f = val, fs
    uA = pot_A(best_f)
    resid = float(uA.min() - 1.0)
    return CapacitySolution(best, best_f, allc, resid, iters)
