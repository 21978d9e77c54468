"""Rate fits and per-iteration checks of the convergence bounds on GHOM traces."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ghom.errors import ArgumentError, CapabilityError, ConfigurationError, InsufficientDataError
from ghom.metric import SpdMetric, dual_norm, sym_eig

EPS = np.finfo(float).eps
LOCALITY = 1.0


@dataclass
class RateFit:
    mode: str
    value: float  # exponent, ratio, or order depending on mode
    r_squared: float
    window: tuple
    dispersion: float = 0.0
    n_points: int = 0

    def __str__(self):
        label = {"sublinear": "exponent", "linear": "ratio", "superlinear": "order"}[self.mode]
        return (f"{self.mode}: {label} = {self.value:.6g} (r^2 = {self.r_squared:.4f}, "
                f"window k = {self.window[0]}..{self.window[1]}, dispersion {self.dispersion:.3g}, n = {self.n_points})")


@dataclass
class BoundReport:
    tag: str
    ks: list
    margins: list  # bound - observed
    passed: bool
    constants: dict = field(default_factory=dict)
    observed: list = field(default_factory=list)
    bounds: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def min_margin(self):
        return min(self.margins) if self.margins else math.inf

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        consts = ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in self.constants.items())
        out = f"[{status}] {self.tag}: {len(self.ks)} checks, min margin {self.min_margin:.3e}; {consts}"
        for n in self.notes:
            out += f"\n    note: {n}"
        return out


def _report(tag, ks, bounds, observed, constants, scale, notes=None):
    margins = [float(b - o) for b, o in zip(bounds, observed)]
    tol = 1e-7 * scale
    passed = all(m >= -tol for m in margins)
    return BoundReport(tag, list(ks), margins, passed, constants, [float(o) for o in observed],
                       [float(b) for b in bounds], notes or [])


def _records(trace):
    """(k, f, S) arrays from a RunTrace or a plain sequence of f values."""
    if hasattr(trace, "records"):
        r = trace.records
        return (np.array([x.k for x in r]), np.array([x.f_value for x in r], dtype=float),
                np.array([x.stationarity_bound for x in r], dtype=float))
    f = np.asarray(trace, dtype=float)
    return np.arange(len(f)), f, np.full(len(f), np.nan)


def noise_floor(f_star):
    return 1e3 * EPS * abs(f_star) + 1e-14


def _gaps(trace, f_star):
    ks, f, _ = _records(trace)
    return ks, f - f_star


def _usable(ks, gaps, f_star):
    """Leading run of gaps above the noise floor (stops at the first noisy value)."""
    floor = noise_floor(f_star)
    keep = []
    for k, d in zip(ks, gaps):
        if not d > floor:
            break
        keep.append((k, d))
    return keep


def _r2(x, y, slope, icpt):
    y = np.asarray(y)
    ss = float(np.sum((y - y.mean()) ** 2))
    if ss == 0:
        return 1.0
    res = float(np.sum((y - (slope * np.asarray(x) + icpt)) ** 2))
    return float(min(max(1 - res / ss, 0.0), 1.0))


def fit_sublinear(trace, f_star, window=None) -> RateFit:
    """Decay exponent a in f_k - f* ~ C k^{-a} from a log-log least-squares fit."""
    ks, gaps = _gaps(trace, f_star)
    pts = [(k, d) for k, d in _usable(ks, gaps, f_star) if k >= 1]
    if window is not None:
        pts = [(k, d) for k, d in pts if window[0] <= k <= window[1]]
    if len(pts) < 3:
        raise InsufficientDataError("need at least 3 positive gaps above the noise floor")
    x = np.log([k for k, _ in pts])
    y = np.log([d for _, d in pts])
    slope, icpt = np.polyfit(x, y, 1)
    return RateFit("sublinear", float(-slope), _r2(x, y, slope, icpt), (pts[0][0], pts[-1][0]), 0.0, len(pts))


def fit_linear(trace, f_star, window=None, locality=LOCALITY) -> RateFit:
    """Mean of Delta_{k+1} / Delta_k over the local tail."""
    ks, gaps = _gaps(trace, f_star)
    pts = _usable(ks, gaps, f_star)
    if window is not None:
        pts = [(k, d) for k, d in pts if window[0] <= k <= window[1]]
    pts = [(k, d) for k, d in pts if d <= locality]
    if len(pts) < 3:
        raise InsufficientDataError("need at least 3 local gaps above the noise floor")
    d = np.array([v for _, v in pts])
    ratios = d[1:] / d[:-1]
    x = np.array([k for k, _ in pts], dtype=float)
    slope, icpt = np.polyfit(x, np.log(d), 1)
    return RateFit("linear", float(np.mean(ratios)), _r2(x, np.log(d), slope, icpt), (pts[0][0], pts[-1][0]),
                   float(np.std(ratios)), len(pts))


def fit_superlinear(trace, f_star, window=None, locality=LOCALITY) -> RateFit:
    """Median of log Delta_{k+1} / log Delta_k over the local tail."""
    ks, gaps = _gaps(trace, f_star)
    pts = _usable(ks, gaps, f_star)
    if window is not None:
        pts = [(k, d) for k, d in pts if window[0] <= k <= window[1]]
    pts = [(k, d) for k, d in pts if d < min(locality, 1.0)]
    if len(pts) < 2:
        raise InsufficientDataError("need at least 2 consecutive local gaps above the noise floor")
    L = np.log([d for _, d in pts])
    orders = L[1:] / L[:-1]
    x, y = np.log(-L[:-1]), np.log(-L[1:])
    if len(x) >= 2 and np.ptp(x) > 0:
        slope, icpt = np.polyfit(x, y, 1)
        r2 = _r2(x, y, slope, icpt)
    else:
        r2 = 1.0
    return RateFit("superlinear", float(np.median(orders)), r2, (pts[0][0], pts[-1][0]),
                   float(np.std(orders)), len(pts))


FITS = {"sublinear": fit_sublinear, "linear": fit_linear, "superlinear": fit_superlinear}


# ---------------------------------------------------------------- bound checks


def measured_radius(trace, x_star, metric: SpdMetric):
    X = trace.iterates()
    if X is None:
        raise InsufficientDataError("iterates were not recorded")
    x_star = np.asarray(x_star, dtype=float)
    return float(max(math.sqrt(max((x - x_star) @ metric.D @ (x - x_star), 0.0)) for x in X))


def global_rate_bound(k, L_h, R, p):
    return L_h * R ** (p + 1) / (math.factorial(p) * (1 + k / (p + 1)) ** p)


def check_global_bound(trace, L_p_h, R, p, f_star) -> BoundReport:
    """f_k - f* <= L_h R^{p+1} / (p! (1 + k/(p+1))^p) for k >= 1."""
    if R is None:
        raise InsufficientDataError("iterate radius R is required")
    ks, gaps = _gaps(trace, f_star)
    sel = [(k, d) for k, d in zip(ks, gaps) if k >= 1]
    bounds = [global_rate_bound(k, L_p_h, R, p) for k, _ in sel]
    scale = max(1.0, abs(f_star))
    return _report("global sublinear rate", [k for k, _ in sel], bounds, [d for _, d in sel],
                   {"L_h": float(L_p_h), "R": float(R), "p": p, "f_star": float(f_star)}, scale)


def superlinear_constant(variant, p, q, sigma, L_h):
    """(C, exponent) of the one-step recurrence x_{k+1} <= C x_k^exponent."""
    if variant == "convex_error":
        C = ((q - 1) * q ** ((p - q + 1) / (q - 1)) * sigma ** (-(p + 1) / (q - 1))
             * (L_h / math.factorial(p)) ** (q / (q - 1)))
        return C, p / (q - 1)
    if variant == "general":
        return (L_h / math.factorial(p + 1)) * (q / sigma) ** ((p + 1) / q), (p + 1) / q
    if variant == "gradient":
        return (L_h / math.factorial(p)) * (q / sigma) ** (p / (q - 1)), p / (q - 1)
    raise ArgumentError(f"unknown variant {variant!r}")


def check_superlinear_bounds(trace, p, q, sigma_q, L_p_h, f_star, variant="general",
                             locality=LOCALITY, theta=None) -> BoundReport:
    """Per-step recurrence check on the local tail (Delta_k <= locality).

    ``theta`` adds the relaxed-stationarity inflation theta * p! to L_h and
    is reported as such; by default the exact-stationarity constant is used.
    """
    if sigma_q is None or q is None:
        raise InsufficientDataError("uniform convexity (q, sigma_q) is required")
    ks, f, S = _records(trace)
    gaps = f - f_star
    notes = []
    L_eff = L_p_h
    if theta:
        L_eff = L_p_h + theta * math.factorial(p)
        notes.append(f"L_h inflated by theta p! = {theta * math.factorial(p):.3g} for inexact subproblems")
    tag = {"convex_error": "superlinear rate (convex error)", "general": "superlinear rate",
           "gradient": "superlinear subgradient rate"}[variant]
    if variant == "convex_error" and not p > q - 1:
        notes.append("recurrence applies only when p > q - 1; not checked")
        return BoundReport(tag, [], [], True, {"p": p, "q": q}, notes=notes)
    C, e = superlinear_constant(variant, p, q, sigma_q, L_eff)
    floor = noise_floor(f_star)
    sel, bounds, obs = [], [], []
    for i in range(len(ks) - 1):
        if not (0 < gaps[i] <= locality) or gaps[i] <= floor:
            continue
        if variant == "gradient":
            if not S[i] > 0 or not np.isfinite(S[i]):
                continue
            bounds.append(C * S[i] ** e)
            obs.append(S[i + 1])
        else:
            bounds.append(C * gaps[i] ** e)
            obs.append(gaps[i + 1])
        sel.append(int(ks[i + 1]))
    if variant == "gradient":
        notes.append("uses the computed upper bound on S on both sides; a failure can be inconclusive")
    if not sel:
        notes.append("no iterate inside the locality threshold")
    scale = max(1.0, abs(f_star)) if variant != "gradient" else 1.0
    # relative scale for tiny quantities: compare against the observed magnitude
    rep = _report(tag, sel, bounds, obs, {"C": float(C), "exponent": float(e), "q": float(q), "sigma_q": float(sigma_q),
                                          "L_h": float(L_eff), "f_star": float(f_star)}, scale, notes)
    return rep


def stationarity_envelope(k, L_h, Delta, p, f0, f_floor):
    return (L_h / math.factorial(p)) * ((f0 - f_floor) / (k * Delta)) ** (p / (p + 1))


def check_stationarity_rate(trace, L_p_h, Delta, p, f0, f_floor) -> BoundReport:
    """min_{i<=k} S_i <= (L_h/p!) ((f0 - f_floor)/(k Delta))^{p/(p+1)}."""
    if not Delta > 0:
        raise ConfigurationError("error-function margin Delta must be positive")
    ks, _, S = _records(trace)
    run_min = math.inf
    sel, bounds, obs = [], [], []
    for k, s in zip(ks, S):
        if k < 1:
            continue
        run_min = min(run_min, s)
        sel.append(int(k))
        obs.append(run_min)
        bounds.append(stationarity_envelope(k, L_p_h, Delta, p, f0, f_floor))
    return _report("first-order stationarity rate", sel, bounds, obs,
                   {"L_h": float(L_p_h), "Delta": float(Delta), "p": p, "f0": float(f0), "f_floor": float(f_floor)}, 1.0,
                   ["S is replaced by its computed upper bound (conservative)"])


def zeta(grad, hess, metric: SpdMetric, M, L, p):
    """max of the curvature and gradient terms at one point, plus -lambda_min^+."""
    lam = sym_eig(metric.whiten_matrix(hess)).eigenvalues
    neg = max(0.0, -float(lam[0]))
    g = dual_norm(metric, grad)
    lmax = metric.lambda_max
    a = neg ** ((p + 1) / (p - 1))
    b = (p ** ((p + 1) / p) * lmax ** ((p + 1) / (p - 1)) * ((M + L) / math.factorial(p - 1)) ** ((p + 1) / (p * (p - 1)))
         * g ** ((p + 1) / p))
    return max(a, b), neg


def second_order_envelope(k, M, L, p, lmax, f0, f_floor):
    return (p * (p + 1) / math.factorial(p - 1) ** (2 / (p - 1)) * (M + L) ** ((p + 1) / (p - 1)) / (M - L)
            * lmax ** ((p + 1) / (p - 1)) / k * (f0 - f_floor))


def second_order_trace(pb, trace, M_p, L_p, metric=None, p=None, f_floor=None):
    """(zeta_k list, -lambda_min^+ list, BoundReport) for min_{i<=k} zeta_i against its envelope."""
    p = trace.config.p if p is None else p
    if p < 2:
        raise CapabilityError("second-order measure needs p >= 2")
    if not M_p > L_p:
        raise ConfigurationError("second-order envelope needs M_p > L_p")
    metric = metric or pb.metric
    X = trace.iterates()
    if X is None:
        raise InsufficientDataError("iterates were not recorded")
    f_floor = pb.f_floor if f_floor is None else f_floor
    f0 = trace.records[0].f_value
    zs, negs = [], []
    for x in X:
        z, n = zeta(pb.smooth.gradient(x), pb.smooth.hessian(x), metric, M_p, L_p, p)
        zs.append(z)
        negs.append(n)
    lmax = metric.lambda_max
    run = math.inf
    sel, bounds, obs = [], [], []
    for k in range(1, len(zs)):
        run = min(run, zs[k])
        sel.append(k)
        obs.append(run)
        bounds.append(second_order_envelope(k, M_p, L_p, p, lmax, f0, f_floor))
    rep = _report("second-order stationarity rate", sel, bounds, obs,
                  {"M": float(M_p), "L": float(L_p), "p": p, "lambda_max_D": lmax, "f0": float(f0),
                   "f_floor": float(f_floor)}, 1.0)
    return zs, negs, rep


# ---------------------------------------------------------------- KL


def kl_classify(q, p, tol=0.1):
    """superlinear if q > p+1, linear if q = p+1 (within tol), sublinear otherwise."""
    if not q > 1:
        raise ArgumentError("KL exponent must exceed 1")
    if abs(q - (p + 1)) <= tol:
        return "linear"
    return "superlinear" if q > p + 1 else "sublinear"


def kl_sublinear_exponent(q, p):
    return q / (p + 1 - q)


def kl_verify(trace, q, f_star, p=None, tol=0.1, rho_min=1.2, ratio_range=(0.05, 0.95), slope_tol=0.25,
              locality=LOCALITY):
    """Classify by (q, p), fit the tail with the matching mode, and check agreement."""
    p = trace.config.p if p is None else p
    regime = kl_classify(q, p, tol)
    notes = []
    try:
        if regime == "sublinear":
            ks, gaps = _gaps(trace, f_star)
            loc = [k for k, d in zip(ks, gaps) if 0 < d <= locality and k >= 1]
            window = (loc[0], ks[-1]) if loc else None
            fit = fit_sublinear(trace, f_star, window)
        else:
            fit = FITS[regime](trace, f_star, locality=locality)
    except InsufficientDataError as exc:
        return regime, None, BoundReport(f"KL {regime} regime", [], [], False, {"q": q, "p": p}, notes=[str(exc)])
    if regime == "superlinear":
        ok = fit.value >= rho_min
        target = f"order >= {rho_min}"
    elif regime == "linear":
        ok = ratio_range[0] <= fit.value <= ratio_range[1]
        target = f"ratio in [{ratio_range[0]}, {ratio_range[1]}]"
    else:
        pred = kl_sublinear_exponent(q, p)
        ok = abs(fit.value - pred) <= slope_tol * pred
        target = f"exponent within {slope_tol:.0%} of {pred:.4g}"
    notes.append(f"fit {fit}; target {target}")
    rep = BoundReport(f"KL {regime} regime", [fit.window[1]], [0.0 if ok else -1.0], bool(ok),
                      {"q": float(q), "p": p, "fitted": fit.value}, notes=notes)
    return regime, fit, rep


# ---------------------------------------------------------------- plot data


def write_plot_data(path, xs: Sequence, ys: Sequence):
    with open(path, "w") as fh:
        for x, y in zip(xs, ys):
            fh.write(f"{x!r} {float(y)!r}\n")
