"""Averages, fine limits, classification, weak supersolution test, and the
dichotomy audit."""

import numpy as np
import pytest

from smpkit import kernels, maxprinciple as mp
from smpkit.model import (Ball, ConstantDensity, DensityPower, MeasureSpec,
                          RadiiSchedule, laplacian_on, fractional_on)

BALL = Ball((0.0, 0.0, 0.0), 1.0)
OP = laplacian_on(BALL)
NU_LOG = MeasureSpec((DensityPower(2.0, (0.0, 0.0, 0.0), 6.0),))
U_SQ = lambda P: np.sum(np.atleast_2d(P)**2, axis=1)

BUMPS = [kernels.TestBump((0.0, 0.0, 0.0), 0.25, 1.0),
         kernels.TestBump((0.35, 0.0, 0.0), 0.2, 1.3),
         kernels.TestBump((0.0, -0.4, 0.1), 0.22, 0.7),
         kernels.TestBump((0.12, 0.0, 0.0), 0.25, 1.0)]


def test_volume_average_closed_forms():
    one = lambda P: np.ones(len(P))
    assert mp.volume_average(one, [0.1, 0.0, 0.2], 0.3) == pytest.approx(1.0)
    # harmonic coordinate: exact mean value
    u1 = lambda P: P[:, 0]
    assert mp.volume_average(u1, [0.2, 0.1, 0.0], 0.3) == pytest.approx(
        0.2, abs=1e-12)
    # |y|^2 at 0: d r^2 / (d + 2)
    assert mp.volume_average(U_SQ, [0, 0, 0], 0.5) == pytest.approx(
        3.0 * 0.25 / 5.0, abs=1e-12)


def test_averages_linear_and_positive():
    rng = np.random.default_rng(11)
    x = np.array([0.1, -0.2, 0.0])
    u = lambda P: np.abs(P[:, 0]) + 0.5
    v = lambda P: P[:, 1] ** 2
    au = mp.volume_average(u, x, 0.2)
    av = mp.volume_average(v, x, 0.2)
    w = lambda P: 2.0 * u(P) + 3.0 * v(P)
    assert mp.volume_average(w, x, 0.2) == pytest.approx(2 * au + 3 * av)
    assert au >= 0 and av >= 0


def test_fractional_average_probability_and_tail():
    one = lambda P: np.ones(len(P))
    assert mp.fractional_average(one, [0, 0, 0], 0.1, 0.5) == pytest.approx(
        1.0, abs=1e-10)
    ind = lambda P: (np.linalg.norm(P, axis=1) > 0.2).astype(float)
    want = 1.0 - kernels.exit_radial_cdf(0.5, 0.1, 0.2)
    assert mp.fractional_average(ind, [0, 0, 0], 0.1, 0.5) == pytest.approx(
        want, abs=1e-9)


def test_fractional_average_continuity():
    # averages of a continuous u approach u(x) along a shrinking schedule
    x = np.array([0.3, 0.0, 0.0])
    vals = [mp.fractional_average(U_SQ, x, r, 0.5, domain=BALL)
            for r in (0.2, 0.1, 0.05, 0.025)]
    errs = np.abs(np.asarray(vals) - 0.09)
    # heavy tails: error decays like r^(2 alpha) = r, roughly halving per step
    assert np.all(np.diff(errs) < 0) and errs[-1] < 2e-2


def test_fine_limit_extrapolation():
    fl = mp.fine_limit(U_SQ, [0, 0, 0], OP)
    assert abs(fl.limit) < 1e-8 and fl.residual < 1e-8
    # removable discontinuity is invisible to averages
    u = lambda P: np.where(np.linalg.norm(P - np.array([0.2, 0, 0]),
                                          axis=1) < 1e-14, 5.0, U_SQ(P))
    fl2 = mp.fine_limit(u, [0.2, 0.0, 0.0], OP)
    assert fl2.limit == pytest.approx(0.04, abs=1e-8)


def test_fine_limit_green_section():
    x0 = np.array([0.3, 0.0, 0.0])
    g = lambda P: np.atleast_1d(kernels.green_ball_brownian(3, 1.0, x0, P))
    x = np.array([-0.2, 0.1, 0.0])
    fl = mp.fine_limit(g, x, OP, radii=RadiiSchedule(0.1, 0.01, 8))
    want = float(kernels.green_ball_brownian(3, 1.0, x0, x[None, :]))
    assert fl.limit == pytest.approx(want, abs=1e-6)


def test_fine_limit_continuous_random_points():
    rng = np.random.default_rng(21)
    u = lambda P: np.cos(P[:, 0]) + P[:, 1]**2 - 0.3 * P[:, 2]
    for _ in range(25):
        x = rng.uniform(-0.4, 0.4, 3)
        fl = mp.fine_limit(u, x, OP, radii=RadiiSchedule(0.1, 0.01, 8))
        assert fl.limit == pytest.approx(float(u(x[None, :])[0]),
                                         abs=10 * max(fl.residual, 1e-10))


def test_classify_scale_invariance_and_verdicts():
    cases = [
        (NU_LOG, [0, 0, 0], "InN"),
        (MeasureSpec((DensityPower(1.0, (0, 0, 0), 1.0),)), [0, 0, 0], "InE"),
        (MeasureSpec((ConstantDensity(2.0),)), [0.2, 0.1, 0.0], "InE"),
    ]
    for nu, x, want in cases:
        for s in (1.0, 2.0, 1e3):
            rep = mp.classify_point(np.asarray(x, float), nu.scaled(s), OP)
            assert rep.verdict == want, (nu, s, rep.note)
            assert rep.method == "ball-neighborhood test"


def test_classify_inN_significance_invariant():
    rep = mp.classify_point(np.zeros(3), NU_LOG, OP)
    assert rep.verdict == "InN"
    assert rep.fit["log_coef"] > 5.0 * rep.fit["log_se"]
    # the fitted log slope tracks the analytic coefficient 2d = 6
    assert rep.fit["log_coef"] == pytest.approx(6.0, rel=0.2)


def test_weak_supersolution_zero_identity():
    # -Delta |y|^2 + (2d/|y|^2) |y|^2 = 0: every bump pairing vanishes
    res = mp.weak_supersolution_test(U_SQ, NU_LOG, OP, BUMPS)
    assert res["passed"]
    assert np.max(np.abs(res["values"])) < 1e-6


def test_weak_supersolution_constant_and_green():
    one = lambda P: np.ones(len(np.atleast_2d(P)))
    res = mp.weak_supersolution_test(one, MeasureSpec(()), OP, BUMPS)
    assert np.max(np.abs(res["values"])) < 1e-10     # int Delta xi = 0
    nu = MeasureSpec((ConstantDensity(2.0),))
    res2 = mp.weak_supersolution_test(one, nu, OP, BUMPS)
    want = [2.0 * b.integral(3) for b in BUMPS]
    assert np.allclose(res2["values"], want, rtol=1e-8)
    # u = G(x0, .): value is xi(x0) >= 0
    x0 = np.array([0.3, 0.0, 0.0])
    g = lambda P: np.atleast_1d(kernels.green_ball_brownian(3, 1.0, x0, P))
    res3 = mp.weak_supersolution_test(g, MeasureSpec(()), OP, BUMPS,
                                      u_singularity=x0)
    want3 = [float(b(x0[None, :])[0]) for b in BUMPS]
    assert np.allclose(res3["values"], want3, atol=5e-5)


def test_weak_test_scaling_stability():
    for c in (1e-3, 1e3):
        uc = lambda P, c=c: c * U_SQ(P)
        res = mp.weak_supersolution_test(uc, NU_LOG, OP, BUMPS, tol=1e-6 * c)
        assert res["passed"]


def test_dichotomy_isolated_zero():
    grid = np.array([[0, 0, 0], [0.3, 0, 0], [0, 0.5, 0],
                     [-0.2, -0.2, 0.2], [0.1, 0.1, 0.1]])
    rep = mp.dichotomy_check(U_SQ, NU_LOG, OP, grid, BUMPS)
    assert rep.verdict == "Consistent"
    assert rep.zero_set == (0,)
    assert rep.classifications[0].verdict == "InN"
    d = rep.to_dict()
    assert d["verdict"] == "Consistent"


def test_dichotomy_trivial_and_mc_modes():
    grid = np.array([[0, 0, 0], [0.3, 0, 0]])
    zero = lambda P: np.zeros(len(np.atleast_2d(P)))
    rep = mp.dichotomy_check(zero, NU_LOG, OP, grid, BUMPS)
    assert rep.verdict == "Trivial"
    # MC mode: positive estimates with tight CIs leave Z empty
    ests = [(0.5, 0.001), (0.3, 0.001)]
    one = lambda P: np.ones(len(np.atleast_2d(P)))
    rep2 = mp.dichotomy_check(one, MeasureSpec(()), OP, grid, BUMPS,
                              mc_estimates=ests)
    assert rep2.verdict == "Consistent" and rep2.zero_set == ()


def test_dichotomy_never_violation_on_corpus():
    # machine-checkable face of the dichotomy: no corpus fixture violates it
    grid = np.array([[0, 0, 0], [0.3, 0, 0], [0, 0.5, 0], [0.1, 0.1, 0.1]])
    fixtures = [
        (U_SQ, NU_LOG),
        (lambda P: np.ones(len(np.atleast_2d(P))),
         MeasureSpec((ConstantDensity(1.0),))),
        (lambda P: np.clip(1.0 - np.sum(np.atleast_2d(P)**2, axis=1),
                           0.0, None) / 6.0, MeasureSpec(())),
    ]
    for u, nu in fixtures:
        rep = mp.dichotomy_check(u, nu, OP, grid, BUMPS)
        assert rep.verdict != "VIOLATION"
