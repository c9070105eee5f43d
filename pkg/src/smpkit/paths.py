"""Killed Brownian and alpha-stable trajectory simulation with PCAF
accumulation.

Reproducibility contract: every random draw comes from a Philox generator
keyed by (master seed, task id, replicate-or-block id) through SeedSequence
spawn keys.  Batch runs process replicates in fixed blocks of BLOCK columns
and draw full-block arrays each step, so a replicate's path depends only on
its own (seed, task, block, column) address -- never on worker count or
execution order.  Reductions happen in replicate order with compensated
summation.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import ceil, sqrt, fsum, inf

import numpy as np

from . import model, kernels
from .model import (dist_to_boundary, contains, domain_dim, Ball, Box,
                    UnionOfBalls, Annulus, MeasureSpec, DensityPower,
                    SphereSurface, density_value)

BLOCK = 1024          # fixed batch block size; part of the determinism contract
_BLOCK_NS = 2**32     # spawn-key namespace offset for block streams


class StepBudgetExceeded(RuntimeError):
    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


@dataclass(frozen=True)
class RngStream:
    seed: int
    task: int
    replicate: int

    def generator(self):
        seq = np.random.SeedSequence(self.seed,
                                     spawn_key=(self.task, self.replicate))
        return np.random.Generator(np.random.Philox(seq))


def _block_generator(seed, task, block):
    seq = np.random.SeedSequence(seed, spawn_key=(task, _BLOCK_NS + block))
    return np.random.Generator(np.random.Philox(seq))


def _run_blocks(nblocks, body, workers=None):
    """Run per-block closures, serially or on a thread pool.

    Each closure owns its own generator and writes into disjoint output
    slices, so the result is identical for any worker count.
    """
    if workers is None:
        workers = int(os.environ.get("SMPKIT_WORKERS", "1"))
    if workers <= 1 or nblocks <= 1:
        for b in range(nblocks):
            body(b)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(body, range(nblocks)))


@dataclass(frozen=True)
class PathRecord:
    start: tuple
    exit_point: tuple
    lifetime: float           # Brownian: summed step times; stable: sojourn sum
    pcaf: float
    steps: int
    stream: tuple             # (seed, task, replicate)
    jumped_out: bool = False  # stable nonlocal exit
    censored: bool = False    # step budget hit before exit


def block_sums(values):
    """Order-independent compensated reduction: fsum over replicate order."""
    return fsum(float(v) for v in values)


# ---------------------------------------------------------------------------
# Walk on spheres (Brownian harmonic measure)
# ---------------------------------------------------------------------------

def project_to_boundary(domain, pts):
    pts = np.atleast_2d(np.asarray(pts, float))
    if isinstance(domain, Ball):
        c = np.asarray(domain.center)
        v = pts - c
        n = np.linalg.norm(v, axis=1, keepdims=True)
        return c + domain.radius * v / np.where(n == 0, 1.0, n)
    if isinstance(domain, Box):
        lo, hi = np.asarray(domain.lo), np.asarray(domain.hi)
        out = np.clip(pts, lo, hi)
        # snap the coordinate closest to a face onto that face
        dlo = out - lo
        dhi = hi - out
        for i in range(len(out)):
            j = int(np.argmin(np.minimum(dlo[i], dhi[i])))
            out[i, j] = lo[j] if dlo[i, j] <= dhi[i, j] else hi[j]
        return out
    if isinstance(domain, UnionOfBalls):
        sd = np.stack([b.radius - np.linalg.norm(pts - np.asarray(b.center), axis=1)
                       for b in domain.balls])
        comp = np.argmax(sd, axis=0)
        out = np.empty_like(pts)
        for i, b_idx in enumerate(comp):
            out[i] = project_to_boundary(domain.balls[b_idx], pts[i])[0]
        return out
    if isinstance(domain, Annulus):
        c = np.asarray(domain.center)
        v = pts - c
        n = np.linalg.norm(v, axis=1, keepdims=True)
        n = np.where(n == 0, 1.0, n)
        inner_closer = (n[:, 0] - domain.r_in) < (domain.r_out - n[:, 0])
        rad = np.where(inner_closer, domain.r_in, domain.r_out)
        return c + rad[:, None] * v / n
    raise TypeError(f"unknown domain {domain!r}")


def wos_exit_batch(domain, x, eps, n, seed, task=0, max_steps=100_000,
                   workers=None):
    """Walk-on-spheres exit points for n replicates started at x.

    Returns (exit_points (n,d), step_counts (n,)).
    """
    d = domain_dim(domain)
    if eps <= 0 or eps > model.inradius(domain) / 10.0:
        raise ValueError("wos: 0 < eps <= inradius/10 required")
    x = np.asarray(x, float)
    if not bool(contains(domain, x)[0]):
        raise ValueError("wos: start point must lie in D")
    exits = np.empty((n, d))
    steps = np.zeros(n, dtype=int)

    def _do_block(b):
        nb = min(BLOCK, n - b * BLOCK)
        g = _block_generator(seed, task, b)
        X = np.tile(x, (nb, 1))
        moving = np.ones(nb, dtype=bool)
        cnt = np.zeros(nb, dtype=int)
        for _ in range(max_steps):
            z = g.standard_normal((nb, d))
            if not moving.any():
                break
            r = dist_to_boundary(domain, X)
            moving &= r >= eps
            if not moving.any():
                break
            dirs = z / np.linalg.norm(z, axis=1, keepdims=True)
            X[moving] += r[moving, None] * dirs[moving]
            cnt[moving] += 1
        else:
            raise StepBudgetExceeded("wos: step budget exceeded",
                                     state={"X": X, "moving": moving})
        sl = slice(b * BLOCK, b * BLOCK + nb)
        exits[sl] = project_to_boundary(domain, X)
        steps[sl] = cnt

    _run_blocks(ceil(n / BLOCK), _do_block, workers)
    return exits, steps


def wos_exit(domain, x, eps, stream, max_steps=100_000):
    """Single walk-on-spheres path; returns (exit_point, step_count)."""
    d = domain_dim(domain)
    g = stream.generator()
    X = np.asarray(x, float).copy()
    for k in range(max_steps):
        z = g.standard_normal(d)
        r = float(dist_to_boundary(domain, X)[0])
        if r < eps:
            return project_to_boundary(domain, X)[0], k
        X = X + r * z / np.linalg.norm(z)
    raise StepBudgetExceeded("wos: step budget exceeded", state={"X": X})


# ---------------------------------------------------------------------------
# Killed Euler paths with PCAF accumulation
# ---------------------------------------------------------------------------

def _surface_occupation(nu, X, eps_shell):
    """Shell-occupation density proxy for SphereSurface terms: sum of
    weight/(2 eps) over shells containing each row of X."""
    out = np.zeros(len(X))
    for t in nu.terms:
        if isinstance(t, SphereSurface):
            rho = np.linalg.norm(X - np.asarray(t.center), axis=1)
            out += t.weight * (np.abs(rho - t.radius) < eps_shell) / (2.0 * eps_shell)
    return out


def euler_killed_block(domain, x, nu, dt, seed, task=0, n=BLOCK, *,
                       horizon=None, f=None, want_resolvent=False,
                       beta=None, eps_shell=None, cap_time=None,
                       substep_factor=8, workers=None):
    """Vectorized killed Euler-Maruyama engine (Brownian generator Delta).

    Accumulates the PCAF A of nu (density terms clamped at 1/dt^2 with
    substepping near poles; SphereSurface terms via the eps-shell proxy) and,
    optionally, the resolvent integral int e^{-A} f dt, the horizon-stopped
    state, and the representation integral int e^{-A} dA^beta.

    Returns a dict of per-replicate arrays (replicate order fixed).
    """
    d = domain_dim(domain)
    x = np.asarray(x, float)
    if not bool(contains(domain, x)[0]):
        raise ValueError("euler: start point must lie in D")
    has_surface = any(isinstance(t, SphereSurface) for t in nu.terms)
    if has_surface:
        if eps_shell is None:
            raise ValueError("surface terms need eps_shell")
        if dt > eps_shell**2 / 4.0:
            raise ValueError("rejected configuration: dt <= eps_shell^2/4 "
                             "required for the surface shell proxy")
    poles = np.array([t.pole for t in nu.terms
                      if isinstance(t, DensityPower) and t.exponent > 0.0],
                     dtype=float)
    clamp = 1.0 / dt**2
    if cap_time is None:
        lo, hi = model.bounding_box(domain)
        half_diam = 0.5 * float(np.linalg.norm(hi - lo))
        cap_time = 60.0 * half_diam**2 / (2.0 * d)
        if horizon is not None:
            cap_time = max(cap_time, horizon * 1.01)
    max_steps = int(ceil(cap_time / dt)) + 1
    sigma = sqrt(2.0 * dt)
    near_radius = 2.0 * sqrt(dt)

    out = {k: np.zeros(n) for k in ("tau", "pcaf", "res", "beta_acc", "term")}
    out["exit"] = np.zeros((n, d))
    out["steps"] = np.zeros(n, dtype=int)
    out["censored"] = np.zeros(n, dtype=bool)
    out["alive_at_horizon"] = np.zeros(n, dtype=bool)

    def _do_block(b):
        nb = min(BLOCK, n - b * BLOCK)
        g = _block_generator(seed, task, b)
        X = np.tile(x, (nb, 1))
        t = np.zeros(nb)
        A = np.zeros(nb)
        res = np.zeros(nb)
        beta_acc = np.zeros(nb)
        term = np.zeros(nb)
        alive = np.ones(nb, dtype=bool)
        done_h = np.zeros(nb, dtype=bool)
        exitX = np.tile(x, (nb, 1))
        tau = np.zeros(nb)
        steps = np.zeros(nb, dtype=int)

        for _ in range(max_steps):
            if not alive.any():
                break
            z = g.standard_normal((nb, d))
            act = alive.copy()
            # functional accumulators at the pre-step state (left point)
            if act.any():
                w = np.exp(-A[act])
                if want_resolvent and f is not None:
                    res[act] += w * f(X[act]) * dt
                if beta is not None:
                    beta_acc[act] += (w * density_value(
                        beta, X[act], domain=domain, clamp=clamp) * dt)
                    if eps_shell is not None:
                        beta_acc[act] += w * _surface_occupation(
                            beta, X[act], eps_shell) * dt
            # move, then accumulate the PCAF at the post-move point (the
            # pre-move point may sit exactly on a density pole); steps that
            # start near a pole are refined into substep_factor substeps
            near = np.zeros(nb, dtype=bool)
            if poles.size and act.any():
                dmin = np.min(np.linalg.norm(
                    X[act][:, None, :] - poles[None, :, :], axis=2), axis=1)
                near_idx = np.where(act)[0][dmin < near_radius]
                near[near_idx] = True
            plain = act & ~near
            X[plain] += sigma * z[plain]
            if nu.terms and plain.any():
                V = density_value(nu, X[plain], domain=domain, clamp=clamp)
                if has_surface:
                    V = V + _surface_occupation(nu, X[plain], eps_shell)
                A[plain] += V * dt
            if near.any():
                m = int(near.sum())
                sub_dt = dt / substep_factor
                sub_sig = sqrt(2.0 * sub_dt)
                zs = g.standard_normal((m, substep_factor, d))
                Xn = X[near]
                An = np.zeros(m)
                for j in range(substep_factor):
                    Xn = Xn + sub_sig * zs[:, j, :]
                    Vn = density_value(nu, Xn, domain=domain, clamp=clamp)
                    if has_surface:
                        Vn = Vn + _surface_occupation(nu, Xn, eps_shell)
                    An += Vn * sub_dt
                A[near] += An
                X[near] = Xn
            t[act] += dt
            steps[act] += 1
            # horizon stop
            if horizon is not None:
                hit = act & (t >= horizon - 0.5 * dt)
                if hit.any():
                    inside = hit.copy()
                    inside[hit] = contains(domain, X[hit])
                    if f is not None:
                        term[inside] = np.exp(-A[inside]) * f(X[inside])
                    done_h |= hit
                    alive &= ~hit
                    out_sl = np.where(hit)[0]
                    exitX[out_sl] = X[out_sl]
                    tau[hit] = t[hit]
                    continue
            # boundary crossing
            crossed = act & ~done_h
            if crossed.any():
                sd = dist_to_boundary(domain, X[crossed])
                dead_idx = np.where(crossed)[0][sd <= 0.0]
                if dead_idx.size:
                    alive[dead_idx] = False
                    exitX[dead_idx] = X[dead_idx]
                    tau[dead_idx] = t[dead_idx]
        censored = alive.copy()
        tau[censored] = t[censored]
        exitX[censored] = X[censored]

        sl = slice(b * BLOCK, b * BLOCK + nb)
        out["tau"][sl] = tau
        out["pcaf"][sl] = A
        out["res"][sl] = res
        out["beta_acc"][sl] = beta_acc
        out["term"][sl] = term
        out["exit"][sl] = exitX
        out["steps"][sl] = steps
        out["censored"][sl] = censored
        out["alive_at_horizon"][sl] = done_h

    _run_blocks(ceil(n / BLOCK), _do_block, workers)
    return out


def euler_killed_pcaf(domain, x, nu, dt, stream, **kw):
    """Single killed Euler path (density-type nu); returns a PathRecord."""
    run = euler_killed_block(domain, x, nu, dt, stream.seed, stream.task,
                             n=1, **kw)
    return PathRecord(tuple(np.asarray(x, float)), tuple(run["exit"][0]),
                      float(run["tau"][0]), float(run["pcaf"][0]),
                      int(run["steps"][0]),
                      (stream.seed, stream.task, stream.replicate),
                      censored=bool(run["censored"][0]))


def surface_pcaf(domain, x, sphere, dt, eps, stream, **kw):
    """Single killed Euler path accumulating the eps-shell surface PCAF."""
    nu = MeasureSpec((sphere,))
    run = euler_killed_block(domain, x, nu, dt, stream.seed, stream.task,
                             n=1, eps_shell=eps, **kw)
    return PathRecord(tuple(np.asarray(x, float)), tuple(run["exit"][0]),
                      float(run["tau"][0]), float(run["pcaf"][0]),
                      int(run["steps"][0]),
                      (stream.seed, stream.task, stream.replicate),
                      censored=bool(run["censored"][0]))


# ---------------------------------------------------------------------------
# Stable exit sampling
# ---------------------------------------------------------------------------

def _sample_exit_radii(alpha, r, q):
    """Map uniform quantiles to exit radii via the numeric CDF table."""
    z, cdf, _ = kernels.exit_radial_cdf_table(alpha)
    zq = np.interp(q, cdf, z)
    return r / np.sqrt(np.clip(1.0 - zq, 1e-300, None))


def stable_exit_sample(d, alpha, r, n, seed, task=0):
    """n exit points (relative to the ball center) from B(0, r), Normalized
    kernel, start at center: radius by inverse CDF, direction uniform."""
    out = np.empty((n, d))
    for b in range(ceil(n / BLOCK)):
        nb = min(BLOCK, n - b * BLOCK)
        g = _block_generator(seed, task, b)
        q = g.uniform(size=nb)
        z = g.standard_normal((nb, d))
        radii = _sample_exit_radii(alpha, r, q)
        dirs = z / np.linalg.norm(z, axis=1, keepdims=True)
        out[b * BLOCK:b * BLOCK + nb] = radii[:, None] * dirs
    return out


def stable_exit_step(x, r, alpha, stream):
    """One exit point of B(x, r) for the stable walker (Normalized kernel)."""
    x = np.asarray(x, float)
    d = len(x)
    g = stream.generator()
    q = float(g.uniform())
    z = g.standard_normal(d)
    radius = float(_sample_exit_radii(alpha, r, np.array([q]))[0])
    return x + radius * z / np.linalg.norm(z)


def stable_wos_exit_batch(domain, x, alpha, n, seed, task=0, max_steps=10_000,
                          shrink=1.0, workers=None):
    """Stable walk-on-spheres: repeated exit jumps from inscribed balls until
    the sampled point leaves D.

    Returns (exit_points, steps, sojourn) where sojourn has one column per
    component (UnionOfBalls) holding the summed per-step expected residence
    C(d, alpha) * r^{2 alpha} attributed to the component of the step's start.
    """
    d = domain_dim(domain)
    x = np.asarray(x, float)
    if not bool(contains(domain, x)[0]):
        raise ValueError("stable wos: start point must lie in D")
    ncomp = len(domain.balls) if isinstance(domain, UnionOfBalls) else 1
    exits = np.empty((n, d))
    steps = np.zeros(n, dtype=int)
    sojourn = np.zeros((n, ncomp))
    soj_const = kernels.expected_residence_stable(d, alpha, 1.0, np.zeros(d))

    def _do_block(b):
        nb = min(BLOCK, n - b * BLOCK)
        g = _block_generator(seed, task, b)
        X = np.tile(x, (nb, 1))
        alive = np.ones(nb, dtype=bool)
        cnt = np.zeros(nb, dtype=int)
        soj = np.zeros((nb, ncomp))
        for _ in range(max_steps):
            if not alive.any():
                break
            q = g.uniform(size=nb)
            z = g.standard_normal((nb, d))
            r = np.clip(dist_to_boundary(domain, X), 0.0, None) * shrink
            if ncomp > 1:
                sd = np.stack([bb.radius - np.linalg.norm(
                    X - np.asarray(bb.center), axis=1) for bb in domain.balls])
                comp = np.argmax(sd, axis=0)
            else:
                comp = np.zeros(nb, dtype=int)
            radii = _sample_exit_radii(alpha, 1.0, q) * r
            dirs = z / np.linalg.norm(z, axis=1, keepdims=True)
            soj[alive, comp[alive]] += soj_const * r[alive] ** (2.0 * alpha)
            X[alive] += radii[alive, None] * dirs[alive]
            cnt[alive] += 1
            alive &= contains(domain, X)
        else:
            if alive.any():
                raise StepBudgetExceeded("stable wos: step budget exceeded")
        sl = slice(b * BLOCK, b * BLOCK + nb)
        exits[sl] = X
        steps[sl] = cnt
        sojourn[sl] = soj

    _run_blocks(ceil(n / BLOCK), _do_block, workers)
    return exits, steps, sojourn


def stable_wos_exit(domain, x, alpha, stream, max_steps=10_000):
    """Single stable walk; returns (exit_point, steps, per-component sojourn)."""
    x = np.asarray(x, float)
    d = len(x)
    g = stream.generator()
    ncomp = len(domain.balls) if isinstance(domain, UnionOfBalls) else 1
    soj = np.zeros(ncomp)
    soj_const = kernels.expected_residence_stable(d, alpha, 1.0, np.zeros(d))
    X = x.copy()
    for k in range(max_steps):
        r = float(dist_to_boundary(domain, X)[0])
        if r <= 0:
            return X, k, soj
        if ncomp > 1:
            sd = [bb.radius - float(np.linalg.norm(X - np.asarray(bb.center)))
                  for bb in domain.balls]
            ci = int(np.argmax(sd))
        else:
            ci = 0
        soj[ci] += soj_const * r ** (2.0 * alpha)
        q = float(g.uniform())
        z = g.standard_normal(d)
        radius = float(_sample_exit_radii(alpha, r, np.array([q]))[0])
        X = X + radius * z / np.linalg.norm(z)
    raise StepBudgetExceeded("stable wos: step budget exceeded")


# ---------------------------------------------------------------------------
# Brute-force stable exit oracle (small-dt skeleton)
# ---------------------------------------------------------------------------

def _one_sided_stable(g, a, size):
    """Kanter/CMS sampler for the positive a-stable law, a in (0,1)."""
    U = g.uniform(0.0, np.pi, size=size)
    E = g.standard_exponential(size=size)
    num = np.sin(a * U) / np.sin(U) ** (1.0 / a)
    fac = (np.sin((1.0 - a) * U) / E) ** ((1.0 - a) / a)
    return num * fac


def stable_exit_bruteforce(d, alpha, r, dt, n, seed, task=0, max_steps=200_000):
    """Exit points of B(0, r) for the isotropic alpha-stable process, by
    subordinated-Brownian increments on a dt time grid.

    The exit position law is invariant under time change, so the subordinator
    normalization constant is irrelevant; dt only controls skeleton bias.
    """
    exits = np.empty((n, d))
    for b in range(ceil(n / BLOCK)):
        nb = min(BLOCK, n - b * BLOCK)
        g = _block_generator(seed, task, b)
        X = np.zeros((nb, d))
        alive = np.ones(nb, dtype=bool)
        for _ in range(max_steps):
            if not alive.any():
                break
            # subordinate the generator-Delta Brownian motion by an
            # alpha-stable subordinator: symbol -|xi|^{2 alpha}
            S = _one_sided_stable(g, alpha, nb)
            z = g.standard_normal((nb, d))
            step = np.sqrt(2.0 * dt ** (1.0 / alpha) * S)[:, None] * z
            X[alive] += step[alive]
            alive &= np.linalg.norm(X, axis=1) <= r
        else:
            if alive.any():
                raise StepBudgetExceeded("stable brute force: budget exceeded")
        exits[b * BLOCK:b * BLOCK + nb] = X
    return exits
