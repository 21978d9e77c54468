"""Command-line experiment runner: ``ghom run|verify|fit|sweep``.

Config files are INI-style (``[section]`` headers, ``key = value`` lines).
Recognized sections and keys are listed in ``SCHEMA``; see README.md.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import itertools
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ghom import analysis
from ghom.driver import GhomConfig, IterateRecord, RunTrace, ghom_run, reference_fstar
from ghom.errors import ArgumentError, ConfigurationError, GhomError, InsufficientDataError
from ghom.problems import make_problem

HEADER = ["k", "f", "step_norm", "stat_bound", "h_value", "descent_gap", "wall_ms"]
FIELDS = ["k", "f_value", "step_norm", "stationarity_bound", "h_value", "descent_gap", "wall_ms"]
CHECKS = ("fit", "global_bound", "superlinear", "superlinear_convex_error", "superlinear_gradient",
          "stationarity_rate", "second_order", "kl")

SCHEMA = {
    "problem": {"name", "params"},
    "surrogate": {"kind", "p", "M", "tight", "L_f"},
    "subsolver": {"kind", "theta", "max_inner"},
    "driver": {"max_iters", "tol_stationarity", "tol_step", "record_iterates", "seed", "timing"},
    "analysis": {"checks", "fit_mode", "f_star", "reference", "locality", "kl_q"},
    "output": {"dir"},
    "sweep": None,  # free-form parameter lists
}

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


class ConfigError(ArgumentError):
    pass


@dataclass
class ExperimentConfig:
    problem: str
    params: str
    driver: GhomConfig
    checks: list = field(default_factory=list)
    fit_mode: str = "sublinear"
    f_star: float | None = None
    reference: bool = False
    locality: float = analysis.LOCALITY
    kl_q: float | None = None
    out: str = "runs/out"
    sweep: dict = field(default_factory=dict)
    source: str = ""


def bundled_config(name):
    return CONFIG_DIR / name


def _bool(v, key):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {v!r}")


def _line_of(path, section, key):
    try:
        lines = Path(path).read_text().splitlines()
    except OSError:
        return None
    cur = None
    for i, line in enumerate(lines, 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip()
        elif cur == section and s.split("=", 1)[0].strip() == key:
            return i
    return None


def load_config(path, seed=None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    def where(sec, key):
        n = _line_of(path, sec, key)
        return f"{path}:{n}" if n else str(path)

    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{path}: unknown section [{sec}]; known: {', '.join(SCHEMA)}")
        if SCHEMA[sec] is None:
            continue
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{where(sec, key)}: unknown key {key!r} in [{sec}]")

    def get(sec, key, conv=str, default=None):
        if not cp.has_option(sec, key):
            return default
        raw = cp.get(sec, key)
        try:
            return conv(raw)
        except (ValueError, ArgumentError) as exc:
            raise ConfigError(f"{where(sec, key)}: bad value for {sec}.{key}: {exc}") from exc

    name = get("problem", "name")
    if not name:
        raise ConfigError(f"{path}: unknown problem: [problem] name is missing")
    M = get("surrogate", "M", str, "auto").strip()
    try:
        drv = GhomConfig(
            p=get("surrogate", "p", int, 2),
            M=M if M == "auto" else float(M),
            surrogate=get("surrogate", "kind", str, "taylor"),
            tight=get("surrogate", "tight", lambda v: _bool(v, "surrogate.tight"), False),
            L_f=get("surrogate", "L_f", float, None),
            subsolver=get("subsolver", "kind", str, "auto"),
            theta=get("subsolver", "theta", float, 0.1),
            max_inner=get("subsolver", "max_inner", int, 500),
            max_iters=get("driver", "max_iters", int, 200),
            tol_stationarity=get("driver", "tol_stationarity", float, 1e-10),
            tol_step=get("driver", "tol_step", float, 1e-14),
            record_iterates=get("driver", "record_iterates", lambda v: _bool(v, "driver.record_iterates"), True),
            seed=seed if seed is not None else get("driver", "seed", int, 0),
            timing=get("driver", "timing", lambda v: _bool(v, "driver.timing"), False),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    checks = [c.strip() for c in get("analysis", "checks", str, "").split(",") if c.strip()]
    for c in checks:
        if c not in CHECKS:
            raise ConfigError(f"{where('analysis', 'checks')}: unknown check {c!r}; known: {', '.join(CHECKS)}")
    sweep = {}
    if cp.has_section("sweep"):
        for key, raw in cp["sweep"].items():
            vals = [v.strip() for v in raw.split(",") if v.strip()]
            sweep[key] = vals
    fstar = get("analysis", "f_star", str, None)
    return ExperimentConfig(
        problem=name,
        params=get("problem", "params", str, ""),
        driver=drv,
        checks=checks,
        fit_mode=get("analysis", "fit_mode", str, "sublinear"),
        f_star=None if fstar in (None, "") else float(fstar),
        reference=get("analysis", "reference", lambda v: _bool(v, "analysis.reference"), False),
        locality=get("analysis", "locality", float, analysis.LOCALITY),
        kl_q=get("analysis", "kl_q", float, None),
        out=get("output", "dir", str, "runs/out"),
        sweep=sweep,
        source=str(path),
    )


# ---------------------------------------------------------------- trace io


def _fmt(v):
    return format(float(v), ".17g")


def write_trace(trace: RunTrace, path):
    path = Path(path)
    X = trace.iterates()
    n = 0 if X is None else X.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER + [f"x_{i}" for i in range(n)])
        for r in trace.records:
            row = [str(int(r.k))] + [_fmt(getattr(r, f)) for f in FIELDS[1:]]
            if n:
                row += [_fmt(v) for v in r.x]
            w.writerow(row)


def read_trace(path) -> RunTrace:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][: len(HEADER)] != HEADER:
        raise ArgumentError(f"{path}: not a trace file (expected header {','.join(HEADER)})")
    nx = len(rows[0]) - len(HEADER)
    recs = []
    for row in rows[1:]:
        vals = [float(v) for v in row[1 : len(HEADER)]]
        x = np.array([float(v) for v in row[len(HEADER) :]]) if nx else None
        recs.append(IterateRecord(int(row[0]), *vals, x=x))
    meta = read_meta(path.parent / "meta.txt")
    final = recs[-1].x if recs and nx else None
    return RunTrace(GhomConfig(), meta.get("problem", ""), recs, meta.get("termination", "unknown"), final, meta)


def read_meta(path):
    meta = {}
    if Path(path).is_file():
        for line in Path(path).read_text().splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                meta[k.strip()] = v.strip()
    return meta


def write_meta(path, items):
    with open(path, "w") as fh:
        for k, v in items.items():
            fh.write(f"{k} = {v}\n")


# ---------------------------------------------------------------- run


def _resolve_fstar(exp: ExperimentConfig, pb):
    if exp.f_star is not None:
        return exp.f_star
    if pb.f_star is not None:
        return pb.f_star
    if exp.reference:
        return reference_fstar(pb)
    return None


def _need_fstar(f_star, check):
    if f_star is None:
        raise InsufficientDataError(
            f"check {check!r} needs f*; set [analysis] f_star, or reference = true to compute it by a reference solve")


def run_checks(exp: ExperimentConfig, pb, tr: RunTrace, f_star, out: Path | None = None):
    """Returns (fits, reports) for the configured checks; writes plot data when ``out`` is set."""
    cfg = tr.config
    p = cfg.p
    fits, reports = [], []
    L_h = tr.meta.get("L_h")
    ks = [r.k for r in tr.records]
    if out is not None:
        analysis.write_plot_data(out / "stat.dat", ks, [r.stationarity_bound for r in tr.records])
        if f_star is not None:
            analysis.write_plot_data(out / "delta.dat", ks, [r.f_value - f_star for r in tr.records])
    for check in exp.checks:
        if check == "fit":
            _need_fstar(f_star, check)
            fits.append(analysis.FITS[exp.fit_mode](tr, f_star))
        elif check == "global_bound":
            _need_fstar(f_star, check)
            x_star = pb.x_star if pb.x_star is not None else tr.final_point
            R = analysis.measured_radius(tr, x_star, pb.metric)
            rep = analysis.check_global_bound(tr, L_h, R, p, f_star)
            reports.append(rep)
            if out is not None:
                analysis.write_plot_data(out / "bound_global.dat", rep.ks, rep.bounds)
        elif check.startswith("superlinear"):
            _need_fstar(f_star, check)
            if pb.uniform_convexity is None:
                raise InsufficientDataError(f"problem {pb.name} declares no uniform convexity (q, sigma_q)")
            q, sig = pb.uniform_convexity
            variant = {"superlinear": "general"}.get(check, check.replace("superlinear_", ""))
            reports.append(analysis.check_superlinear_bounds(tr, p, q, sig, L_h, f_star, variant, exp.locality))
        elif check == "stationarity_rate":
            margin = tr.meta.get("margin")
            if margin is None:
                raise ConfigurationError("surrogate kind has no descent margin Delta")
            rep = analysis.check_stationarity_rate(tr, L_h, margin, p, tr.records[0].f_value, pb.f_floor)
            reports.append(rep)
            if out is not None:
                analysis.write_plot_data(out / "bound_stationarity.dat", rep.ks, rep.bounds)
        elif check == "second_order":
            L = tr.meta.get("L_f")
            zs, _, rep = analysis.second_order_trace(pb, tr, tr.meta["M_final"], L)
            reports.append(rep)
            if out is not None:
                analysis.write_plot_data(out / "zeta.dat", ks, zs)
        elif check == "kl":
            _need_fstar(f_star, check)
            q = exp.kl_q
            if q is None:
                from ghom.problems import estimate_kl_exponent

                X = tr.iterates()
                q, _ = estimate_kl_exponent(pb, X[: max(4, len(X) // 2)], f_star)
            _, fit, rep = analysis.kl_verify(tr, q, f_star, p=p, locality=exp.locality)
            if fit is not None:
                fits.append(fit)
            reports.append(rep)
    return fits, reports


def _report_text(exp, pb, tr, f_star, fits, reports):
    lines = [f"problem: {pb.name} {exp.params}".rstrip(), f"surrogate: {tr.config.surrogate} p={tr.config.p} "
             f"M={tr.config.M} tight={tr.config.tight}", f"termination: {tr.termination} after {len(tr.records) - 1} iterations",
             f"f_final: {tr.records[-1].f_value!r}", f"f_star: {f_star!r}"]
    for k in ("M0", "M_final", "L_h", "L_f", "margin", "doublings", "warnings"):
        lines.append(f"{k}: {tr.meta.get(k)}")
    for fit in fits:
        lines.append(str(fit))
    for rep in reports:
        lines.append(str(rep))
    return "\n".join(lines) + "\n"


def execute(exp: ExperimentConfig, out=None, quiet=False):
    """Run one experiment; returns (exit code, trace or None, fits, reports)."""
    out = Path(out or exp.out)
    out.mkdir(parents=True, exist_ok=True)
    pb = make_problem(exp.problem, exp.params)
    tr = ghom_run(pb, exp.driver)
    write_trace(tr, out / "trace.csv")
    f_star = _resolve_fstar(exp, pb)
    meta = {"problem": pb.name, "params": exp.params, "termination": tr.termination, "iterations": len(tr.records) - 1,
            "f_star": "" if f_star is None else repr(f_star)}
    meta.update({k: v for k, v in tr.meta.items() if k in ("M0", "M_final", "L_h", "L_f", "margin", "doublings")})
    write_meta(out / "meta.txt", meta)
    if tr.termination == "descent_failure":
        msg = f"descent failure: {tr.meta.get('failure')}; M_p is below the model's requirement"
        (out / "report.txt").write_text(msg + "\n")
        if not quiet:
            print(f"error: {msg}", file=sys.stderr)
        return 1, tr, [], []
    fits, reports = run_checks(exp, pb, tr, f_star, out)
    text = _report_text(exp, pb, tr, f_star, fits, reports)
    (out / "report.txt").write_text(text)
    if not quiet:
        print(text, end="")
    return (2 if any(not r.passed for r in reports) else 0), tr, fits, reports


def _guard(fn):
    def wrapped(*a, **kw):
        try:
            return fn(*a, **kw)
        except (GhomError, ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1

    wrapped.__name__ = fn.__name__
    wrapped.__doc__ = fn.__doc__
    return wrapped


@_guard
def cmd_run(config_path, out=None, seed=None):
    """Run a config; 0 ok, 2 failed bound check, 1 error."""
    exp = load_config(config_path, seed)
    code, *_ = execute(exp, out)
    return code


@_guard
def cmd_verify(suite="all"):
    from ghom import suites

    results = suites.run_suite(suite)
    for r in results:
        print(f"{r.line()}  ({r.seconds:.1f}s)")
    ok = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return 0 if ok else 2


@_guard
def cmd_fit(trace_path, mode="sublinear", f_star=None):
    if mode not in analysis.FITS:
        raise ArgumentError(f"unknown fit mode {mode!r}; known: {', '.join(analysis.FITS)}")
    tr = read_trace(trace_path)
    if f_star is None:
        raw = tr.meta.get("f_star", "")
        if raw in ("", "None"):
            raise InsufficientDataError(
                "f* is unknown for this trace; pass --fstar, or rerun with [analysis] reference = true "
                "to compute f* by a reference solve")
        f_star = float(raw)
    fit = analysis.FITS[mode](tr, f_star)
    print(fit)
    return 0


def _apply_cell(exp: ExperimentConfig, cell: dict) -> ExperimentConfig:
    import copy

    e = copy.deepcopy(exp)
    params = dict(kv.split("=", 1) for kv in e.params.split(",") if "=" in kv)
    mult = None
    for key, val in cell.items():
        if key.startswith("problem."):
            params[key.split(".", 1)[1]] = val
        elif key == "M_multiplier":
            mult = float(val)
        elif key == "M":
            e.driver.M = val if val == "auto" else float(val)
        elif key in ("p", "max_iters", "max_inner", "seed"):
            setattr(e.driver, key, int(val))
        elif key in ("theta", "L_f", "tol_stationarity"):
            setattr(e.driver, key, float(val))
        elif key == "tight":
            e.driver.tight = _bool(val, "sweep.tight")
        elif key in ("surrogate", "subsolver"):
            setattr(e.driver, key, val)
        else:
            raise ConfigError(f"unknown sweep parameter {key!r}")
    e.params = ",".join(f"{k}={v}" for k, v in params.items())
    if mult is not None:
        pb = make_problem(e.problem, e.params)
        L, _ = pb.lipschitz_constant(e.driver.p)
        e.driver.M = mult * L
        e.driver.L_f = L
    e.driver.__post_init__()
    return e


def _sweep_cell(args):
    exp, cell, out = args
    try:
        e = _apply_cell(exp, cell)
        code, tr, fits, reports = execute(e, out, quiet=True)
        fit = None
        if not fits and tr is not None and code != 1:
            f_star = _resolve_fstar(e, make_problem(e.problem, e.params))
            if f_star is not None:
                try:
                    fit = analysis.FITS[e.fit_mode](tr, f_star)
                except InsufficientDataError:
                    fit = None
        else:
            fit = fits[0] if fits else None
        return cell, code, None if fit is None else fit.value, len(tr.records) - 1 if tr else 0, ""
    except (GhomError, ValueError) as exc:
        return cell, 1, None, 0, str(exc)


def sweep_cells(exp: ExperimentConfig):
    if not exp.sweep or any(not v for v in exp.sweep.values()):
        raise ConfigError(f"{exp.source}: [sweep] grid is empty")
    keys = list(exp.sweep)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(exp.sweep[k] for k in keys))]


@_guard
def cmd_sweep(config_path, out=None, seed=None):
    exp = load_config(config_path, seed)
    cells = sweep_cells(exp)
    base = Path(out or exp.out)
    base.mkdir(parents=True, exist_ok=True)
    jobs = [(exp, cell, base / ("cell_" + "_".join(f"{k}-{v}" for k, v in cell.items()).replace("/", "_")))
            for cell in cells]
    workers = max(1, min(len(jobs), int(os.environ.get("GHOM_THREADS", os.cpu_count() or 1))))
    if workers == 1:
        rows = [_sweep_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_cell, jobs))
    keys = list(exp.sweep)
    lines = ["\t".join(keys + ["exit", "iterations", f"{exp.fit_mode}_fit"])]
    for cell, code, val, iters, err in rows:
        v = "nan" if val is None else f"{val:.6g}"
        lines.append("\t".join([cell[k] for k in keys] + [str(code), str(iters), v]) + (f"\t{err}" if err else ""))
    text = "\n".join(lines) + "\n"
    (base / "summary.tsv").write_text(text)
    print(text, end="")
    return 1 if any(r[1] == 1 for r in rows) else (2 if any(r[1] == 2 for r in rows) else 0)


# ---------------------------------------------------------------- entry


def build_parser():
    ap = argparse.ArgumentParser(prog="ghom", description="Higher-order majorization-minimization experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--out")
    r.add_argument("--seed", type=int)
    v = sub.add_parser("verify", help="run verification suites")
    v.add_argument("--suite", default="all", choices=["axioms", "oracles", "bounds", "acceptance", "all"])
    f = sub.add_parser("fit", help="fit a convergence rate to a trace.csv")
    f.add_argument("trace")
    f.add_argument("--mode", default="sublinear", choices=list(analysis.FITS))
    f.add_argument("--fstar", type=float)
    s = sub.add_parser("sweep", help="cartesian parameter sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, args.out, args.seed)
    if args.command == "verify":
        return cmd_verify(args.suite)
    if args.command == "fit":
        return cmd_fit(args.trace, args.mode, args.fstar)
    return cmd_sweep(args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
