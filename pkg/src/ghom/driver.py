"""GHOM outer loop: surrogate, subproblem, descent enforcement, trace."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from ghom import subsolvers
from ghom.errors import ConfigurationError, DomainError
from ghom.metric import dual_norm, metric_norm
from ghom.problems import CompositeProblem, lipschitz_probe
from ghom.surrogates import Surrogate, build

TERMINATIONS = ("stationarity", "step", "max_iters", "descent_failure")
MAX_DOUBLINGS = 30


@dataclass
class GhomConfig:
    p: int = 2
    M: Union[float, str] = "auto"
    surrogate: str = "taylor"
    subsolver: str = "auto"
    theta: float = subsolvers.THETA
    tol_stationarity: float = 1e-10
    tol_step: float = 1e-14
    max_iters: int = 200
    record_iterates: bool = True
    seed: int = 0
    tight: bool = False
    max_inner: int = 500
    L_f: Optional[float] = None  # Lipschitz estimate for the Taylor-type builders
    timing: bool = False  # wall_ms stays 0 unless enabled, keeping traces bit-reproducible

    def __post_init__(self):
        if self.p < 1:
            raise ConfigurationError("p must be >= 1")
        if self.tol_stationarity <= 0 or self.tol_step <= 0:
            raise ConfigurationError("tolerances must be positive")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if isinstance(self.M, str):
            if self.M != "auto":
                self.M = float(self.M)
        elif self.M <= 0:
            raise ConfigurationError("M_p must be positive")


@dataclass
class IterateRecord:
    k: int
    f_value: float
    step_norm: float  # |x_k - x_{k-1}|
    stationarity_bound: float  # upper bound on S(x_k)
    h_value: float  # h(x_k; x_{k-1})
    descent_gap: float  # g(x_{k-1}) - g(x_k) on the surrogate at x_{k-1}
    wall_ms: float = 0.0
    x: Optional[np.ndarray] = None


@dataclass
class RunTrace:
    config: GhomConfig
    problem: str
    records: list
    termination: str
    final_point: np.ndarray
    meta: dict = field(default_factory=dict)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def f(self):
        return self.column("f_value")

    @property
    def S(self):
        return self.column("stationarity_bound")

    def iterates(self):
        if any(r.x is None for r in self.records):
            return None
        return np.array([r.x for r in self.records])


def stationarity_bound(s: Surrogate, sol) -> float:
    """||grad h(x+; x)||_* + residual; bounds S(x+) from above."""
    return dual_norm(s.metric, s.error_gradient(sol.point)) + sol.residual


def initial_M(pb: CompositeProblem, cfg: GhomConfig, x0=None):
    """1.1 x probed L_p over the ball of radius probe_radius around x0."""
    x0 = pb.x0 if x0 is None else x0
    if cfg.surrogate == "proximal":
        return 1.0
    if cfg.surrogate.startswith("composition"):
        from ghom.surrogates import _composition_constants

        c = _composition_constants(pb, np.asarray(x0, dtype=float), pb.probe_radius)
        return 1.1 * (c["L0phi"] * c["L1F"] if cfg.surrogate.endswith("inner") else c["L1phi"])
    L = lipschitz_probe(pb.smooth, cfg.p, (np.asarray(x0, dtype=float), pb.probe_radius), samples=100,
                        seed=cfg.seed, metric=pb.metric)
    return 1.1 * L if L > 0 else 1.0


def adapt_mp(cfg: GhomConfig, failure_count, initial=None, pb=None):
    """Doubling schedule for M = 'auto'."""
    if cfg.M != "auto":
        raise ConfigurationError("adapt_mp needs M = 'auto'")
    if failure_count > MAX_DOUBLINGS:
        raise ConfigurationError(f"more than {MAX_DOUBLINGS} doublings of M; model is misconfigured")
    if initial is None:
        if pb is None:
            raise ConfigurationError("need a problem to probe the initial M")
        initial = initial_M(pb, cfg)
    return float(initial) * 2.0**failure_count


def _build(pb, cfg, x, M):
    L_f = cfg.L_f
    if L_f is None and cfg.surrogate in ("taylor", "composite") and cfg.M == "auto":
        # auto mode treats the current M as the working Lipschitz estimate
        L_f = pb.smooth.known_lipschitz.get(cfg.p, M)
        L_f = min(L_f, M)
    return build(cfg.surrogate, pb, x, p=cfg.p, M=M, tight=cfg.tight, L_f=L_f)


def ghom_run(pb: CompositeProblem, cfg: GhomConfig, x0=None, f_floor=None) -> RunTrace:
    """Run GHOM from x0; the trace's record k describes the arrival at x_k."""
    x = np.array(pb.x0 if x0 is None else x0, dtype=float)
    fx = pb.value(x)
    if not math.isfinite(fx):
        raise DomainError("starting point is outside dom f")
    floor = pb.f_floor if f_floor is None else f_floor
    if cfg.M == "auto":
        M0 = adapt_mp(cfg, 0, pb=pb)
    else:
        M0 = float(cfg.M)
    M = M0
    fails = 0
    S0 = pb.stationarity(x)
    recs = [IterateRecord(0, fx, 0.0, S0, 0.0, 0.0, 0.0, x.copy() if cfg.record_iterates else None)]
    termination = "max_iters"
    meta = {"M0": M0, "tie_break": "descent limit from the anchor", "doublings": 0, "warnings": 0}
    if S0 <= cfg.tol_stationarity:
        return RunTrace(cfg, pb.name, recs, "stationarity", x, meta)
    t_start = time.perf_counter()
    s = None
    for k in range(1, cfg.max_iters + 1):
        while True:
            s = _build(pb, cfg, x, M)
            sol = subsolvers.solve(s, cfg.subsolver, cfg.theta, cfg.max_inner)
            if sol.warning:
                meta["warnings"] += 1
                r = metric_norm(pb.metric, sol.point - x)
                if not (sol.descent_gap >= -1e-10 and sol.residual <= 10 * cfg.theta * r**cfg.p):
                    sol = subsolvers.solve(s, cfg.subsolver, cfg.theta, 2 * cfg.max_inner)
            f_new = pb.value(sol.point)
            g_new = s.model_value(sol.point)
            scale = max(1.0, abs(fx))
            r = metric_norm(pb.metric, sol.point - x)
            if sol.warning and not (sol.descent_gap >= -1e-10 * scale and sol.residual <= 10 * cfg.theta * r**cfg.p):
                # inner solver could not certify the step even with twice the budget
                termination = "descent_failure"
                meta["subsolver_failure"] = True
                break
            ok = f_new <= g_new + 1e-12 * scale and sol.descent_gap >= -1e-10 * scale
            if ok:
                break
            if cfg.M == "auto":
                fails += 1
                try:
                    M = adapt_mp(cfg, fails, initial=M0)
                except ConfigurationError:
                    termination = "descent_failure"
                    break
                meta["doublings"] = fails
                continue
            termination = "descent_failure"
            break
        if termination == "descent_failure":
            meta["failure"] = {"k": k, "f_new": f_new, "g_new": g_new, "gap": sol.descent_gap, "M": M}
            break
        stat = stationarity_bound(s, sol)
        h = s.error_value(sol.point)
        wall = (time.perf_counter() - t_start) * 1e3 if cfg.timing else 0.0
        x = sol.point.copy()
        fx = f_new
        recs.append(IterateRecord(k, fx, r, stat, h, sol.descent_gap, wall, x.copy() if cfg.record_iterates else None))
        if fx < floor - 1e-9 * max(1.0, abs(floor)):
            meta["below_floor"] = True
        if stat <= cfg.tol_stationarity:
            termination = "stationarity"
            break
        if r <= cfg.tol_step:
            termination = "step"
            break
    meta["M_final"] = M
    meta["L_h"] = None if s is None else s.lipschitz_h
    meta["L_f"] = None if s is None else s.constants.get("L_f")
    meta["margin"] = None if s is None else s.margin
    return RunTrace(cfg, pb.name, recs, termination, x, meta)


def reference_fstar(pb: CompositeProblem, x0=None, max_iters=500):
    """High-accuracy f* by a GHOM p=2 reference run; cached on the problem."""
    if pb.f_star is not None:
        return pb.f_star
    simple = pb.simple.is_zero
    cfg = GhomConfig(p=2 if simple else 1, M="auto", surrogate="taylor" if simple else "composite",
                     theta=1e-8, tol_stationarity=1e-12, max_iters=max_iters, record_iterates=False)
    tr = ghom_run(pb, cfg, x0)
    pb.f_star = float(tr.records[-1].f_value)
    pb.x_star = tr.final_point.copy()
    return pb.f_star
