"""Monte-Carlo estimators for Feynman-Kac functionals with confidence
intervals.

All estimators ride on the killed Euler engine in paths; replicate addressing
and reduction order follow that module's determinism contract.
"""

from dataclasses import dataclass, asdict
from math import fsum, sqrt

import numpy as np
from scipy.stats import norm as _norm

from . import paths
from .model import MeasureSpec, contains


@dataclass(frozen=True)
class FkEstimate:
    point: tuple
    functional: str
    estimate: float
    stderr: float
    n: int
    dt: float
    eps: float | None = None
    ci_level: float = 0.99
    seed: int | None = None

    @property
    def ci_halfwidth(self):
        return _norm.ppf(0.5 + self.ci_level / 2.0) * self.stderr

    def ci(self):
        h = self.ci_halfwidth
        return self.estimate - h, self.estimate + h

    def to_dict(self):
        return asdict(self)


def mc_mean(values, ci_level=0.99):
    """Compensated mean and standard error over replicate order."""
    n = len(values)
    m = fsum(float(v) for v in values) / n
    var = fsum((float(v) - m) ** 2 for v in values) / max(n - 1, 1)
    return m, sqrt(var / n)


def fk_semigroup(x, t, f, nu, operator, n, seed, task=10, dt=1e-3,
                 eps_shell=None, workers=None):
    """P^nu_t f(x) = E_x[ e^{-A_t} f(X_t) 1{t < tau_D} ]."""
    run = paths.euler_killed_block(operator.domain, x, nu, dt, seed, task,
                                   n=n, horizon=t, f=f, eps_shell=eps_shell,
                                   workers=workers)
    vals = run["term"]  # zero for paths killed before the horizon
    m, se = mc_mean(vals)
    return FkEstimate(tuple(map(float, np.atleast_1d(x))), "semigroup", m, se,
                      n, dt, eps=eps_shell, seed=seed)


def fk_resolvent(x, f, nu, operator, n, seed, task=11, dt=1e-3,
                 eps_shell=None, workers=None):
    """R^nu f(x) = E_x int_0^tau e^{-A_t} f(X_t) dt."""
    run = paths.euler_killed_block(operator.domain, x, nu, dt, seed, task,
                                   n=n, f=f, want_resolvent=True,
                                   eps_shell=eps_shell, workers=workers)
    m, se = mc_mean(run["res"])
    return FkEstimate(tuple(map(float, np.atleast_1d(x))), "resolvent", m, se,
                      n, dt, eps=eps_shell, seed=seed)


@dataclass(frozen=True)
class ResidualPoint:
    point: tuple
    residual: float
    stderr: float
    ci_excludes_zero: bool
    terminal_mean: float
    beta_mean: float


def check_representation(u, nu, beta, domain_prime, t, points, n, seed,
                         task=12, dt=1e-3, eps_shell=None, ci_level=0.99,
                         workers=None):
    """Per-point residual of the stopped representation
    u(x) = E_x e^{-A_{t ^ tau}} u(X_{t ^ tau}) + E_x int_0^{t ^ tau} e^{-A} dA^beta.

    beta may be the zero measure.  Returns a list of ResidualPoint; the
    ci_excludes_zero flag marks points whose residual CI misses 0.
    """
    beta = beta if beta is not None else MeasureSpec(())
    out = []
    z = _norm.ppf(0.5 + ci_level / 2.0)
    for j, x in enumerate(np.atleast_2d(np.asarray(points, float))):
        run = paths.euler_killed_block(domain_prime, x, nu, dt, seed,
                                       task + 1000 * j, n=n, horizon=t, f=u,
                                       beta=beta, eps_shell=eps_shell,
                                       workers=workers)
        # terminal term: engine fills `term` at the horizon; exited paths
        # contribute e^{-A_tau} u(X_tau) at the recorded exit state
        term = run["term"].copy()
        exited = ~run["alive_at_horizon"]
        if exited.any():
            term[exited] = (np.exp(-run["pcaf"][exited])
                            * u(run["exit"][exited]))
        total = term + run["beta_acc"]
        m, se = mc_mean(total)
        resid = float(u(x[None, :])[0]) - m
        tm, _ = mc_mean(term)
        bm, _ = mc_mean(run["beta_acc"])
        out.append(ResidualPoint(tuple(map(float, x)), resid, se,
                                 bool(abs(resid) > z * se), tm, bm))
    return out
