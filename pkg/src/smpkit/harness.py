"""Experiment harness: config validation, fixture catalog, reproducible runs,
report/CSV persistence.

Config files are JSON documents with a `schema_version` key; every artifact
embeds the config's SHA-256 hash.  Given (config, seed) the report is
byte-reproducible regardless of worker count: all randomness flows through
the block-stream addressing of the paths module and reductions are
order-independent.
"""

import hashlib
import io
import json
import time
from math import sqrt

import numpy as np

from . import capacity, feynman_kac, kernels, maxprinciple, paths, potentials
from .model import (Ball, Box, UnionOfBalls, Annulus, ConstantDensity,
                    DensityPower, BoundaryPower, SphereSurface, MeasureSpec,
                    OperatorSpec, RadiiSchedule, laplacian_on, fractional_on,
                    contains, bounding_box, domain_dim)

SCHEMA_VERSION = 1
KINDS = ("classify", "fine-limit", "weak-test", "dichotomy", "fk",
         "resolvent", "capacity", "revuz-check", "exit-kernel-check")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNDECIDED = 2


# ---------------------------------------------------------------------------
# Fixture catalog
# ---------------------------------------------------------------------------

def _ball_of(op):
    if not isinstance(op.domain, Ball):
        raise ValueError("this catalog entry needs a ball domain")
    return np.asarray(op.domain.center, float), op.domain.radius


def _make_constant_one(op, params):
    return (lambda P: np.ones(len(np.atleast_2d(P)))), None


def _make_x_squared(op, params):
    c, _ = _ball_of(op)
    return (lambda P: np.sum((np.atleast_2d(P) - c) ** 2, axis=1)), None


def _make_harmonic_coordinate(op, params):
    axis = int(params.get("axis", 0))
    return (lambda P: np.atleast_2d(P)[:, axis]), None


def _make_residence_ball(op, params):
    c, R = _ball_of(op)
    d = op.dim

    def u(P):
        s2 = np.sum((np.atleast_2d(P) - c) ** 2, axis=1)
        return np.clip(R**2 - s2, 0.0, None) / (2.0 * d)
    return u, None


def _make_green_section(op, params):
    c, R = _ball_of(op)
    x0 = np.asarray(params.get("x0", (c + [0.3] + [0.0] * (op.dim - 1))), float)

    def u(P):
        P = np.atleast_2d(np.asarray(P, float))
        inside = contains(op.domain, P) & (np.linalg.norm(P - x0, axis=1) > 0)
        out = np.zeros(len(P))
        if inside.any():
            out[inside] = np.atleast_1d(kernels.green_ball_brownian(
                op.dim, R, x0 - c, P[inside] - c))
        return out
    return u, tuple(x0)


CATALOG = {
    "constant-one": (_make_constant_one,
                     "u = 1; normalization fixture (averages exactly 1)"),
    "x-squared": (_make_x_squared,
                  "u = |x - c|^2; isolated zero at the ball center, ball "
                  "averages have the closed form d r^2 / (d+2)"),
    "harmonic-coordinate": (_make_harmonic_coordinate,
                            "u = x_i; mean-value fixture (averages exact)"),
    "residence-ball": (_make_residence_ball,
                       "u = (R^2 - |x-c|^2) / 2d; radial ODE oracle for the "
                       "expected lifetime"),
    "green-section": (_make_green_section,
                      "u = G_D(x0, .); image-formula oracle, singular at x0"),
}


def catalog_list():
    """Registered closed-form fixtures with their oracle notes."""
    return [{"name": k, "note": v[1]} for k, v in sorted(CATALOG.items())]


def make_candidate(name, op, params=None):
    """Instantiate a catalog fixture; returns (callable, singular_point)."""
    if name not in CATALOG:
        raise KeyError(f"unknown candidate {name!r}; known: "
                       + ", ".join(sorted(CATALOG)))
    return CATALOG[name][0](op, params or {})


# ---------------------------------------------------------------------------
# Config parsing / validation
# ---------------------------------------------------------------------------

def parse_domain(spec):
    t = spec["type"]
    if t == "ball":
        return Ball(tuple(spec["center"]), float(spec["radius"]))
    if t == "box":
        return Box(tuple(spec["lo"]), tuple(spec["hi"]))
    if t == "union_of_balls":
        return UnionOfBalls(tuple(Ball(tuple(b["center"]), float(b["radius"]))
                                  for b in spec["balls"]))
    if t == "annulus":
        return Annulus(tuple(spec["center"]), float(spec["r_in"]),
                       float(spec["r_out"]))
    raise ValueError(f"unknown domain type {t!r}")


def parse_operator(spec):
    dom = parse_domain(spec["domain"])
    if spec.get("kind", "brownian") == "brownian":
        return laplacian_on(dom)
    return fractional_on(dom, float(spec["alpha"]))


def parse_measure(spec):
    terms = []
    for t in spec.get("terms", []):
        ty = t["type"]
        w = float(t.get("weight", 1.0))
        if ty == "constant":
            terms.append(ConstantDensity(float(t["level"]), w))
        elif ty == "density_power":
            terms.append(DensityPower(float(t["exponent"]),
                                      tuple(t["pole"]), w))
        elif ty == "boundary_power":
            terms.append(BoundaryPower(float(t["exponent"]), w))
        elif ty == "sphere":
            terms.append(SphereSurface(tuple(t["center"]),
                                       float(t["radius"]), w))
        else:
            raise ValueError(f"unknown measure term type {ty!r}")
    return MeasureSpec(tuple(terms))


def parse_bumps(spec):
    return [kernels.TestBump(tuple(b["center"]), float(b["radius"]),
                             float(b.get("amplitude", 1.0))) for b in spec]


def parse_radii(spec):
    if spec is None:
        return None
    return RadiiSchedule(float(spec["r_max"]), float(spec["r_min"]),
                         int(spec["count"]),
                         spacing=spec.get("spacing", "geometric"),
                         cutoff_factor=float(spec.get("cutoff_factor", 0.25)))


def validate_config(cfg):
    """Exhaustive schema check; returns a list of error strings."""
    errors = []
    if not isinstance(cfg, dict):
        return ["config must be a JSON object"]
    if cfg.get("schema_version") != SCHEMA_VERSION:
        errors.append(f"schema_version: must be {SCHEMA_VERSION}")
    kind = cfg.get("kind")
    if kind not in KINDS:
        errors.append(f"kind: must be one of {', '.join(KINDS)}")
    if "seed" not in cfg:
        errors.append("seed: required (no silent nondeterminism)")
    elif not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        errors.append("seed: must be a nonnegative integer")
    if kind not in (None, "capacity", "exit-kernel-check"):
        if "operator" not in cfg:
            errors.append("operator: required")
        else:
            try:
                parse_operator(cfg["operator"])
            except Exception as e:
                errors.append(f"operator: {e}")
    if "measure" in cfg:
        try:
            parse_measure(cfg["measure"])
        except Exception as e:
            errors.append(f"measure: {e}")
    if "candidate" in cfg and cfg["candidate"] not in CATALOG:
        errors.append(f"candidate: unknown name {cfg['candidate']!r}")
    if kind in ("fine-limit", "weak-test", "dichotomy") \
            and "candidate" not in cfg:
        errors.append("candidate: required for this experiment kind")
    budgets = cfg.get("budgets", {})
    for key, val in budgets.items():
        if not isinstance(val, (int, float)) or val <= 0:
            errors.append(f"budgets.{key}: must be positive")
    if kind in ("weak-test", "dichotomy") and not cfg.get("bumps"):
        errors.append("bumps: at least one test bump required")
    if kind == "capacity":
        cap = cfg.get("capacity", {})
        for key in ("n", "target_radius"):
            if key not in cap:
                errors.append(f"capacity.{key}: required")
    return errors


def config_hash(cfg):
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _jsonable(obj):
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _points_from(cfg, op, default_count=5):
    if "points" in cfg:
        return np.atleast_2d(np.asarray(cfg["points"], float))
    grid = cfg.get("grid", {"kind": "random_interior",
                            "count": default_count})
    if grid.get("kind") == "random_interior":
        return random_interior_points(op.domain, int(grid["count"]),
                                      cfg["seed"])
    raise ValueError(f"unknown grid kind {grid.get('kind')!r}")


def random_interior_points(domain, count, seed, margin=0.15):
    """Deterministic rejection sample of interior points, margin away from
    the boundary (relative to the inradius)."""
    from .model import inradius, dist_to_boundary
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(seed, spawn_key=(7777,))))
    lo, hi = bounding_box(domain)
    d = len(lo)
    keep = []
    guard = margin * inradius(domain)
    while len(keep) < count:
        pts = rng.uniform(lo, hi, size=(4 * count, d))
        ok = dist_to_boundary(domain, pts) > guard
        keep.extend(pts[ok].tolist())
    return np.asarray(keep[:count])


# ---------------------------------------------------------------------------
# Experiment kinds
# ---------------------------------------------------------------------------

def exit_kernel_mass(d, alpha, variant, r=1.0, cutoff=1e-3):
    """Total mass of the exit kernel over |y| > r, by adaptive quadrature
    independent of the kernel module's own normalization rule.

    The exponent-1 (AsPrinted) kernel has divergent mass at the sphere; its
    value above the relative cutoff is reported instead (closed form).
    """
    from math import log, pi
    from .model import sphere_area_const
    if variant == kernels.AS_PRINTED:
        s0 = r * (1.0 + cutoff)
        prim = log((s0**2 - r**2) / s0**2) / (2.0 * r**2)
        return (kernels.printed_constant(d, alpha) * sphere_area_const(d)
                * r ** (2.0 * alpha) * (0.0 - prim))
    from scipy.integrate import quad
    b_d = sphere_area_const(d)

    def marg(s):
        return b_d * s ** (d - 1) * float(kernels.exit_kernel_center(
            d, alpha, r, np.array([s]), variant))

    inner, _ = quad(marg, r, 2.0 * r, limit=200)
    outer, _ = quad(marg, 2.0 * r, np.inf, limit=200)
    return float(inner + outer)

def _run_classify(cfg):
    op = parse_operator(cfg["operator"])
    nu = parse_measure(cfg["measure"])
    pts = _points_from(cfg, op)
    reports = [maxprinciple.classify_point(x, nu, op) for x in pts]
    return ({"classifications": [r.to_dict() for r in reports]},
            [r.verdict for r in reports])


def _run_fine_limit(cfg):
    op = parse_operator(cfg["operator"])
    u, _ = make_candidate(cfg["candidate"], op, cfg.get("candidate_params"))
    radii = parse_radii(cfg.get("radii"))
    pts = _points_from(cfg, op)
    results = [maxprinciple.fine_limit(u, x, op, radii=radii) for x in pts]
    verdicts = ["Undecided" if r.undecided else "ok" for r in results]
    return {"fine_limits": [r.to_dict() for r in results]}, verdicts


def _run_weak_test(cfg):
    op = parse_operator(cfg["operator"])
    nu = parse_measure(cfg.get("measure", {}))
    u, sing = make_candidate(cfg["candidate"], op, cfg.get("candidate_params"))
    bumps = parse_bumps(cfg["bumps"])
    tol = cfg.get("budgets", {}).get("tol", 1e-6)
    summary = maxprinciple.weak_supersolution_test(u, nu, op, bumps, tol=tol,
                                                   u_singularity=sing)
    return {"weak_test": summary}, ["pass" if summary["passed"] else "fail"]


def _run_dichotomy(cfg):
    op = parse_operator(cfg["operator"])
    nu = parse_measure(cfg.get("measure", {}))
    u, sing = make_candidate(cfg["candidate"], op, cfg.get("candidate_params"))
    bumps = parse_bumps(cfg["bumps"])
    pts = _points_from(cfg, op, default_count=7)
    radii = parse_radii(cfg.get("radii"))
    tol = cfg.get("budgets", {}).get("tol", 1e-6)
    rep = maxprinciple.dichotomy_check(u, nu, op, pts, bumps, weak_tol=tol,
                                       radii=radii, u_singularity=sing)
    return {"dichotomy": rep.to_dict()}, [rep.verdict]


def _run_fk(cfg):
    op = parse_operator(cfg["operator"])
    nu = parse_measure(cfg.get("measure", {}))
    u, _ = make_candidate(cfg.get("candidate", "constant-one"), op,
                          cfg.get("candidate_params"))
    b = cfg.get("budgets", {})
    n = int(b.get("replicates", 4096))
    horizon = float(b.get("t", 0.05))
    dts = b.get("dt", 1e-3)
    dts = [dts] if isinstance(dts, (int, float)) else list(dts)
    pts = _points_from(cfg, op, default_count=1)
    ests = []
    for x in pts:
        for dt in dts:
            est = feynman_kac.fk_semigroup(x, horizon, u, nu, op, n,
                                           cfg["seed"], dt=float(dt),
                                           eps_shell=b.get("eps"))
            ests.append(est.to_dict())
    return {"fk_estimates": ests}, ["ok"]


def _run_resolvent(cfg):
    op = parse_operator(cfg["operator"])
    nu = parse_measure(cfg.get("measure", {}))
    b = cfg.get("budgets", {})
    n = int(b.get("replicates", 4096))
    dt = float(b.get("dt", 5e-4))
    one = lambda s: np.ones_like(np.asarray(s, float))
    one_pts = lambda P: np.ones(len(np.atleast_2d(P)))
    pts = _points_from(cfg, op, default_count=3)
    rows = []
    for j, x in enumerate(pts):
        series = potentials.neumann_resolvent(one, nu, op, x)
        mc = feynman_kac.fk_resolvent(x, one_pts, nu, op, n, cfg["seed"],
                                      task=11 + j, dt=dt)
        z = abs(mc.estimate - series.value) / max(mc.stderr, 1e-300)
        rows.append({"point": [float(v) for v in x],
                     "series": series.value,
                     "series_bracket": [series.lower, series.upper],
                     "mc": mc.estimate, "mc_stderr": mc.stderr,
                     "sigma_discrepancy": z, "consistent": bool(z <= 3.0)})
    ok = all(r["consistent"] for r in rows)
    return {"resolvent": rows}, ["pass" if ok else "fail"]


def _run_revuz(cfg):
    op = parse_operator(cfg["operator"])
    nu = parse_measure(cfg["measure"])
    b = cfg.get("budgets", {})
    n = int(b.get("replicates", 4096))
    dt = float(b.get("dt", 1e-3))
    pts = _points_from(cfg, op, default_count=1)
    rows = []
    for j, x in enumerate(pts):
        run = paths.euler_killed_block(op.domain, x, nu, dt, cfg["seed"],
                                       task=20 + j, n=n,
                                       eps_shell=b.get("eps"))
        m, se = feynman_kac.mc_mean(run["pcaf"])
        oracle = potentials.potential(nu, op, x)
        z = abs(m - oracle.value) / max(se, 1e-300)
        rows.append({"point": [float(v) for v in x], "mc_mean": m,
                     "mc_stderr": se, "oracle": oracle.value,
                     "oracle_tol": oracle.achieved_tol,
                     "sigma_discrepancy": z, "consistent": bool(z <= 3.0)})
    ok = all(r["consistent"] for r in rows)
    return {"revuz": rows}, ["pass" if ok else "fail"]


def _run_exit_kernel(cfg):
    b = cfg.get("budgets", {})
    rows = []
    for d in (2, 3):
        for alpha in (0.25, 0.5, 0.75):
            if 2.0 * alpha >= d:
                continue
            norm = exit_kernel_mass(d, alpha, kernels.NORMALIZED)
            printed = exit_kernel_mass(d, alpha, kernels.AS_PRINTED)
            rows.append({"d": d, "alpha": alpha,
                         "normalized_integral": norm,
                         "as_printed_mass_above_cutoff": printed,
                         "as_printed_diverges_at_sphere": True})
    n = int(b.get("replicates", 20000))
    sample = paths.stable_exit_sample(2, 0.5, 1.0, n, cfg["seed"], task=30)
    radii = np.sort(np.linalg.norm(sample, axis=1))
    emp = np.arange(1, n + 1) / n
    model_cdf = kernels.exit_radial_cdf(0.5, 1.0, radii)
    ks = float(np.max(np.abs(emp - model_cdf)))
    return ({"normalization": rows, "ks_normalized": ks,
             "ks_replicates": n}, ["pass" if ks <= 0.02 else "fail"])


def _run_capacity(cfg):
    cp = cfg["capacity"]
    lo = cp.get("lo", [-1.0, -1.0, -1.0])
    hi = cp.get("hi", [1.0, 1.0, 1.0])
    center = np.asarray(cp.get("target_center", [0.0, 0.0, 0.0]), float)
    r = float(cp["target_radius"])
    ns = cp["n"] if isinstance(cp["n"], list) else [cp["n"]]
    iters = int(cp.get("iters", 800))
    rows = []
    for n in ns:
        prob = capacity.grid_problem(
            lo, hi, int(n),
            lambda P: np.linalg.norm(P - center, axis=1) <= r)
        s1 = capacity.solve_c1(prob, iters=iters)
        s2 = capacity.solve_dual_c1(prob, iters=iters)
        rows.append({"n": int(n), "h": prob.h,
                     "c1_primal": s1.value, "c1_dual": s2.value,
                     "duality_gap": s1.duality_gap,
                     "weak_duality_ok": bool(s2.value <= s1.value + 1e-9)})
    ok = all(row["weak_duality_ok"] for row in rows)
    return {"capacity": rows, "target_radius": r}, ["pass" if ok else "fail"]


_RUNNERS = {
    "classify": _run_classify,
    "fine-limit": _run_fine_limit,
    "weak-test": _run_weak_test,
    "dichotomy": _run_dichotomy,
    "fk": _run_fk,
    "resolvent": _run_resolvent,
    "capacity": _run_capacity,
    "revuz-check": _run_revuz,
    "exit-kernel-check": _run_exit_kernel,
}


# ---------------------------------------------------------------------------
# Run / persist
# ---------------------------------------------------------------------------

def run(cfg, output_dir=None):
    """Execute one experiment config; returns (report_dict, exit_code) and
    writes report.json plus CSV side files when an output directory is set."""
    errors = validate_config(cfg)
    if errors:
        raise ValueError("invalid config:\n  " + "\n  ".join(errors))
    t0 = time.perf_counter()
    results, verdicts = _RUNNERS[cfg["kind"]](cfg)
    wall = time.perf_counter() - t0
    import importlib.metadata as md
    import scipy
    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": cfg["kind"],
        "config": cfg,
        "config_hash": config_hash(cfg),
        "versions": {"numpy": np.__version__, "scipy": scipy.__version__,
                     "smpkit": md.version("smpkit")},
        "results": _jsonable(results),
        "verdicts": verdicts,
        "timing": {"wall_s": wall},
    }
    code = EXIT_UNDECIDED if any(v == "Undecided" for v in verdicts) \
        else EXIT_OK
    out = output_dir or cfg.get("output_dir")
    if out:
        import pathlib
        p = pathlib.Path(out)
        p.mkdir(parents=True, exist_ok=True)
        (p / "report.json").write_text(report_json(report))
        for what in _plot_kinds_for(cfg["kind"]):
            (p / f"{what}.csv").write_text(emit_plotdata(report, what))
    return report, code


def report_json(report):
    """Canonical serialization: sorted keys, fixed float formatting."""
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def strip_timing(report):
    """Copy of the report without timing fields (for byte comparisons)."""
    out = {k: v for k, v in report.items() if k != "timing"}
    return out


def _plot_kinds_for(kind):
    return {"fine-limit": ["fine-limit"], "classify": ["classify"],
            "capacity": ["capacity"], "fk": ["fk"]}.get(kind, [])


def emit_plotdata(report, what):
    """Flat CSV for external plotting; every file carries the config hash."""
    buf = io.StringIO()
    buf.write(f"# config={report['config_hash']}\n")
    res = report["results"]
    if what == "fine-limit":
        buf.write("point_index,r,average,extrapolated\n")
        for i, fl in enumerate(res.get("fine_limits", [])):
            for r, a in zip(fl["radii"], fl["averages"]):
                buf.write(f"{i},{r!r},{a!r},{fl['limit']!r}\n")
    elif what == "classify":
        buf.write("point_index,delta,J,fit_const,fit_log_coef,fit_pow_coef\n")
        for i, rep in enumerate(res.get("classifications", [])):
            fit = rep.get("fit", {})
            for dl, J in zip(rep["deltas"], rep["J"]):
                buf.write(f"{i},{dl!r},{J!r},{fit.get('const', '')!r},"
                          f"{fit.get('log_coef', '')!r},"
                          f"{fit.get('pow_coef', '')!r}\n")
    elif what == "capacity":
        buf.write("h,value,dual_value\n")
        for row in res.get("capacity", []):
            buf.write(f"{row['h']!r},{row['c1_primal']!r},"
                      f"{row['c1_dual']!r}\n")
    elif what == "fk":
        buf.write("dt,estimate,stderr\n")
        for est in res.get("fk_estimates", []):
            buf.write(f"{est['dt']!r},{est['estimate']!r},"
                      f"{est['stderr']!r}\n")
    else:
        raise ValueError(
            f"unknown plotdata kind {what!r}; options: "
            "fine-limit, classify, capacity, fk")
    return buf.getvalue()
