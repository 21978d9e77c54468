"""Verification suites: surrogate axioms, oracle checks, rate bounds, and the acceptance runs.

Each check returns a ``CheckResult``; ``run_suite`` collects them for the CLI
and the test harness.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ghom import analysis, problems as P, subsolvers
from ghom.driver import GhomConfig, ghom_run
from ghom.errors import CapabilityError
from ghom.surrogates import KINDS, axiom_check, build, hessian_psd_check


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0
    rows: list = field(default_factory=list)

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<40s} {self.detail}"


def _timed(fn):
    def wrapper(*a, **kw):
        t0 = time.perf_counter()
        res = fn(*a, **kw)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------- axioms


def axiom_problems():
    return {
        "logsumexp": P.log_sum_exp(np.random.default_rng(3).standard_normal((8, 5)), x0=np.full(5, 0.5)),
        "power_norm(3)": P.power_norm(3, n=2),
        "lasso": P.random_lasso(n=10),
        "rosenbrock": P.rosenbrock_2d(),
        "nls1d": P.nls_1d(),
    }


def _axiom_cell(kind, pb, p):
    """Build the surrogate at 1.1x its constant; None when the kind does not apply."""
    x = pb.x0
    if kind == "proximal":
        return build(kind, pb, x, p=p, M=1.1)
    if kind in ("taylor", "composite"):
        L, _ = pb.lipschitz_constant(p)
        return build(kind, pb, x, p=p, M=1.1 * L if L > 0 else 1.1, L_f=L)
    if kind == "bounded":
        if p != 1 or pb.smooth.curvature_bound(x, pb.probe_radius) is None:
            return None
        bd = build(kind, pb, x, p=1)
        H = 1.1 * pb.smooth.curvature_bound(x, pb.probe_radius)
        return build(kind, pb, x, p=1, H=H, L_f=bd.constants["L_f"])
    if pb.composition is None:
        return None
    variant = kind.split(":")[1]
    if variant == "outer" and not pb.composition.separable:
        return None
    from ghom.surrogates import _composition_constants

    c = _composition_constants(pb, x, pb.probe_radius)
    need = c["L0phi"] * c["L1F"] if variant == "inner" else c["L1phi"]
    return build(kind, pb, x, M=1.1 * need)


@_timed
def check_axioms(samples=200) -> CheckResult:
    rows, ok = [], True
    for name, pb in axiom_problems().items():
        for kind in KINDS:
            for p in ((1, 2) if kind in ("proximal", "taylor", "composite") else (1,)):
                try:
                    s = _axiom_cell(kind, pb, p)
                except CapabilityError:
                    s = None
                if s is None:
                    rows.append((name, kind, p, "n/a"))
                    continue
                rep = axiom_check(s, pb, samples=samples, seed=0)
                good = rep.passed()
                ok &= good
                rows.append((name, kind, p, "ok" if good else "FAIL",
                             f"min h {rep.min_error:.2e} anchor {rep.anchor_error:.1e}/{rep.anchor_grad:.1e} "
                             f"grad-bound {rep.grad_bound_violation:.1e}"))
    cells = sum(r[3] != "n/a" for r in rows)
    return CheckResult("surrogate axioms", ok, f"{cells} builder/problem cells", rows=rows)


@_timed
def check_convexification(samples=200) -> CheckResult:
    """p = 3 Taylor model of a convex log-sum-exp with M = 3 L_3 has PSD Hessians."""
    pb = P.log_sum_exp(np.random.default_rng(5).standard_normal((8, 4)), x0=np.full(4, 0.3))
    L3 = pb.smooth.known_lipschitz[3]
    from ghom.surrogates import convexify_mp

    M = convexify_mp(L3, 3)
    s = build("taylor", pb, pb.x0, p=3, M=M, L_f=L3)
    lo, scale = hessian_psd_check(s, samples=samples, seed=0)
    ok = lo >= -1e-8 * max(scale, 1.0)
    return CheckResult("convexification p=3, M=3L", ok, f"min eig {lo:.3e} (scale {scale:.3g}), M={M:g}")


# ---------------------------------------------------------------- oracles


@_timed
def check_fd(tol=1e-4) -> CheckResult:
    rows, worst = [], 0.0
    rng = np.random.default_rng(0)
    for name in sorted(P.REGISTRY):
        pb = P.make_problem(name)
        o = pb.smooth
        pts = [pb.x0] + [pb.x0 + 0.3 * rng.standard_normal(pb.dim) for _ in range(2)]
        for i in range(1, min(o.max_order, 4) + 1):
            err = max(P.fd_check(o, x, i) for x in pts)
            worst = max(worst, err)
            rows.append((name, i, err))
    return CheckResult("finite-difference derivatives", worst <= tol, f"max scaled error {worst:.2e}", rows=rows)


@_timed
def check_lipschitz_probes() -> CheckResult:
    rows, ok = [], True
    pb = P.log_sum_exp(np.random.default_rng(1).standard_normal((6, 3)), x0=np.zeros(3))
    for order, L in ((1, 1.0), (2, 2.0), (3, 4.0)):
        v = P.lipschitz_probe(pb.smooth, order, (pb.x0, 3.0), samples=100, seed=0, metric=pb.metric)
        good = 0 < v <= 1.05 * L
        ok &= good
        rows.append((f"logsumexp L{order}", v, L))
    for p in (1, 2):
        pn = P.power_norm(p + 1, n=3)
        v = P.lipschitz_probe(pn.smooth, p, (pn.x0, 2.0), samples=100, seed=0, metric=pn.metric)
        bound = math.factorial(p + 1)
        good = 0 < v <= 1.05 * bound
        ok &= good
        rows.append((f"|x|^{p + 1} L{p}", v, bound))
    detail = ", ".join(f"{r[0]}={r[1]:.3f}/{r[2]:g}" for r in rows)
    return CheckResult("Lipschitz probes vs known constants", ok, detail, rows=rows)


@_timed
def check_uniform_convexity() -> CheckResult:
    pb = P.power_norm(4, n=3, scale=0.25)
    v = P.uniform_convexity_probe(pb, 4, samples=200, seed=0)
    return CheckResult("uniform convexity of |x|^4/4", v >= 0.25 - 1e-6, f"sigma_4 probe {v:.6f} (floor 0.25)")


def _random_cubic_problem(rng, n):
    B = rng.standard_normal((n, n))
    A = 0.5 * (B + B.T) * rng.uniform(0.2, 3.0)
    b = rng.standard_normal(n)
    pb = P.quadratic(A, b, x0=rng.standard_normal(n))
    return pb, A, b


@_timed
def check_cubic_vs_grid(count=100, seed=0, tol=1e-6) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(count):
        n = 1 + i % 2
        pb, A, b = _random_cubic_problem(rng, n)
        M = rng.uniform(0.5, 5.0)
        s = build("taylor", pb, pb.x0, p=2, M=M, L_f=0.0)
        sol = subsolvers.cubic_step(s)
        g = A @ pb.x0 + b
        nH = float(np.max(np.abs(np.linalg.eigvalsh(A))))
        # any global minimizer satisfies M r^2 / 2 <= |g| + |H| r
        r = 1.05 * (2 * nH / M + math.sqrt(2 * np.linalg.norm(g) / M)) + 1e-3
        gm = subsolvers.grid_oracle(s, (pb.x0 - r, pb.x0 + r), resolution=401 if n == 1 else 201, zoom=6)
        worst = max(worst, abs(s.model_value(sol.point) - gm.value))
    return CheckResult("cubic step vs grid oracle", worst <= tol, f"{count} instances, max model gap {worst:.2e}")


@_timed
def check_prox_vs_grid(count=100, seed=0, tol=1e-4) -> CheckResult:
    rng = np.random.default_rng(seed + 1)
    worst = 0.0
    for _ in range(count):
        a = rng.uniform(0.2, 4.0)
        c = rng.uniform(-3, 3)
        lam = rng.uniform(0.0, 2.0)
        pb = P.lasso(np.array([[math.sqrt(a)]]), np.array([math.sqrt(a) * c]), lam, x0=np.array([rng.uniform(-3, 3)]))
        M = a * rng.uniform(1.0, 3.0)
        s = build("composite", pb, pb.x0, p=1, M=M, L_f=a)
        sol = subsolvers.prox_step(s)
        r = abs(pb.x0[0]) + abs(a * (pb.x0[0] - c)) / M + 1.0
        gm = subsolvers.grid_oracle(s, (pb.x0 - r, pb.x0 + r), resolution=401, zoom=6)
        worst = max(worst, float(abs(sol.point[0] - gm.point[0])))
    return CheckResult("prox step vs grid oracle", worst <= tol, f"{count} soft-threshold instances, max |dy| {worst:.2e}")


# ---------------------------------------------------------------- bounds


@_timed
def check_global_rate() -> CheckResult:
    rows, ok = [], True
    for name, mk in (("logsumexp n=5", lambda: P.symmetric_log_sum_exp(5)), ("power_norm(3)", lambda: P.power_norm(3, n=2))):
        for p in (1, 2):
            pb = mk()
            if name.startswith("power"):
                # order-1 constant on the unit ball that contains the monotone iterates
                L, _ = pb.lipschitz_constant(p, pb.x_star, 1.0 + 1e-9)
            else:
                L, _ = pb.lipschitz_constant(p)
            tr = ghom_run(pb, GhomConfig(p=p, M=1.1 * L, L_f=L, max_iters=300))
            R = analysis.measured_radius(tr, pb.x_star, pb.metric)
            rep = analysis.check_global_bound(tr, tr.meta["L_h"], R, p, pb.f_star)
            ok &= rep.passed
            rows.append((name, p, rep))
    detail = "; ".join(f"{n} p={p}: margin {r.min_margin:.2e}" for n, p, r in rows)
    return CheckResult("global sublinear bound", ok, detail, rows=rows)


def order_sweep(p_values=(1, 2), max_iters=200):
    out = {}
    for p in p_values:
        pb = P.logistic_log_sum_exp()
        L = pb.smooth.known_lipschitz[p]
        tr = ghom_run(pb, GhomConfig(p=p, M=1.1 * L, max_iters=max_iters, tol_stationarity=1e-12))
        out[p] = analysis.fit_sublinear(tr, pb.f_star)
    return out


@_timed
def check_order_separation() -> CheckResult:
    fits = order_sweep()
    gap = fits[2].value - fits[1].value
    return CheckResult("order-p separation", gap >= 0.5,
                       f"exponent p=1 {fits[1].value:.3f}, p=2 {fits[2].value:.3f}, gap {gap:.3f}")


def quadratic_run():
    pb = P.diagonal_quadratic()
    tr = ghom_run(pb, GhomConfig(p=2, M=1.0, tight=True))
    return pb, tr


@_timed
def check_local_superlinear() -> CheckResult:
    pb, tr = quadratic_run()
    q, sig = pb.uniform_convexity
    fit = analysis.fit_superlinear(tr, pb.f_star)
    rep = analysis.check_superlinear_bounds(tr, 2, q, sig, tr.meta["L_h"], pb.f_star, variant="general")
    rep2 = analysis.check_superlinear_bounds(tr, 2, q, sig, tr.meta["L_h"], pb.f_star, variant="convex_error")
    ok = fit.value >= 1.8 and rep.passed and rep2.passed
    return CheckResult("local superlinear rate", ok,
                       f"order {fit.value:.3f}; recurrence margins {rep.min_margin:.2e} / {rep2.min_margin:.2e} "
                       f"over {len(rep.ks)} steps")


@_timed
def check_subgradient_superlinear() -> CheckResult:
    pb, tr = quadratic_run()
    q, sig = pb.uniform_convexity
    rep = analysis.check_superlinear_bounds(tr, 2, q, sig, tr.meta["L_h"], pb.f_star, variant="gradient")
    return CheckResult("subgradient superlinear rate", rep.passed and len(rep.ks) > 0,
                       f"{len(rep.ks)} steps, min margin {rep.min_margin:.2e}")


@_timed
def check_nonconvex_stationarity() -> CheckResult:
    pb = P.rosenbrock_2d()
    L2 = P.lipschitz_probe(pb.smooth, 2, (pb.x0, pb.probe_radius), samples=100, seed=0, metric=pb.metric)
    M = 1.5 * L2
    tr = ghom_run(pb, GhomConfig(p=2, M=M, L_f=L2, max_iters=2000, tol_stationarity=1e-9))
    Delta = (M - L2) / math.factorial(3)
    rep = analysis.check_stationarity_rate(tr, tr.meta["L_h"], Delta, 2, tr.records[0].f_value, pb.f_floor)
    final = tr.records[-1].stationarity_bound
    return CheckResult("nonconvex stationarity rate", rep.passed and final <= 1e-6,
                       f"{len(tr.records) - 1} iterations, min margin {rep.min_margin:.2e}, final S bound {final:.2e}")


@_timed
def check_second_order() -> CheckResult:
    pb = P.double_well()
    L, _ = pb.lipschitz_constant(2, np.zeros(2), 2.0)
    M = 1.5 * L
    tr = ghom_run(pb, GhomConfig(p=2, M=M, L_f=L, max_iters=500, tol_stationarity=1e-10))
    zs, negs, rep = analysis.second_order_trace(pb, tr, M, L)
    return CheckResult("second-order stationarity rate", rep.passed and negs[-1] <= 1e-4,
                       f"start {pb.x0}, end {np.round(tr.final_point, 6)}, final -lambda_min^+ {negs[-1]:.2e}, "
                       f"min margin {rep.min_margin:.2e}")


KL_CASES = ((4.0 / 3.0, "superlinear"), (1.5, "linear"), (4.0, "sublinear"))


def kl_case(qp, M=6.0, x0=0.5, max_iters=200):
    pb = P.norm_power_kl(qp, x0=x0)
    tr = ghom_run(pb, GhomConfig(p=2, M=M, surrogate="proximal", max_iters=max_iters, theta=1e-8,
                                 tol_stationarity=1e-14))
    X = tr.iterates()
    q, _ = P.estimate_kl_exponent(pb, X[: max(4, len(X) // 2)], pb.f_star)
    regime, fit, rep = analysis.kl_verify(tr, q, pb.f_star)
    return q, regime, fit, rep


@_timed
def check_kl() -> CheckResult:
    ok, parts = True, []
    for qp, want in KL_CASES:
        q, regime, fit, rep = kl_case(qp)
        good = regime == want and rep.passed
        ok &= good
        val = "n/a" if fit is None else f"{fit.value:.4g}"
        parts.append(f"|x|^{qp:.4g}: q={q:.3f} {regime} fit {val} {'ok' if good else 'FAIL'}")
    return CheckResult("KL trichotomy", ok, "; ".join(parts))


@_timed
def check_determinism() -> CheckResult:
    import contextlib
    import io
    import tempfile
    from pathlib import Path

    from ghom import cli

    with tempfile.TemporaryDirectory() as d, contextlib.redirect_stdout(io.StringIO()):
        cfg = cli.bundled_config("logsumexp_p2.cfg")
        a, b = Path(d) / "a", Path(d) / "b"
        ca = cli.cmd_run(cfg, out=a)
        cb = cli.cmd_run(cfg, out=b)
        same = (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()
        tr = cli.read_trace(a / "trace.csv")
        cli.write_trace(tr, Path(d) / "c.csv")
        round_trip = (Path(d) / "c.csv").read_bytes() == (a / "trace.csv").read_bytes()
        exp = cli.load_config(cfg)
        direct = ghom_run(P.make_problem(exp.problem, exp.params), exp.driver)
        fields = ("k", "f_value", "step_norm", "stationarity_bound", "h_value", "descent_gap", "wall_ms")
        exact = len(tr.records) == len(direct.records) and all(
            all(getattr(r, f) == getattr(s, f) for f in fields) and np.array_equal(r.x, s.x)
            for r, s in zip(tr.records, direct.records)
        )
    ok = ca == 0 and cb == 0 and same and round_trip and exact and len(tr.records) >= 10
    return CheckResult("determinism and CSV round trip", ok,
                       f"exit {ca}/{cb}, {len(tr.records)} rows, identical={same}, csv round trip={round_trip}, "
                       f"bit-exact parse={exact}")


ACCEPTANCE = (
    (1, check_axioms),
    (2, check_lipschitz_probes),
    (3, check_convexification),
    (4, check_global_rate),
    (5, check_order_separation),
    (6, check_local_superlinear),
    (7, check_subgradient_superlinear),
    (8, check_uniform_convexity),
    (9, check_nonconvex_stationarity),
    (10, check_second_order),
    (11, check_kl),
    (12, lambda: _both(check_cubic_vs_grid(), check_prox_vs_grid())),
    (13, check_determinism),
)


def _both(a: CheckResult, b: CheckResult) -> CheckResult:
    return CheckResult("subsolver oracle equivalence", a.passed and b.passed, f"{a.detail}; {b.detail}",
                       a.seconds + b.seconds)


SUITES = {
    "axioms": (check_axioms, check_convexification),
    "oracles": (check_fd, check_lipschitz_probes, check_uniform_convexity, check_cubic_vs_grid, check_prox_vs_grid),
    "bounds": (check_global_rate, check_order_separation, check_local_superlinear, check_subgradient_superlinear,
               check_nonconvex_stationarity, check_second_order, check_kl),
    "acceptance": tuple(fn for _, fn in ACCEPTANCE),
}


def run_suite(name):
    if name == "all":
        fns = SUITES["axioms"] + SUITES["oracles"] + SUITES["bounds"] + (check_determinism,)
    elif name in SUITES:
        fns = SUITES[name]
    else:
        from ghom.errors import ArgumentError

        raise ArgumentError(f"unknown suite {name!r}; known: {', '.join(list(SUITES) + ['all'])}")
    return [fn() for fn in fns]
