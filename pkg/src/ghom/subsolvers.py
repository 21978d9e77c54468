"""Inner solvers for the surrogate subproblem and a brute-force grid reference."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from ghom.errors import ArgumentError, CapabilityError, NumericalError
from ghom.metric import SpdMetric, dual_norm, metric_norm, sym_eig
from ghom.surrogates import Surrogate

THETA = 0.1
ABS_FLOOR = 1e-12
SOLVERS = ("prox", "cubic", "convex_descent", "nonconvex_descent", "auto")


@dataclass
class SubSolution:
    point: np.ndarray
    residual: float
    descent_gap: float
    inner_iters: int
    warning: bool = False
    method: str = ""
    info: dict = field(default_factory=dict)


def _residual(s: Surrogate, y):
    return s.simple.subgradient_min_norm(y, s.model_grad(y), s.metric)


def _finish(s, y, iters, method, warning=False, **info):
    gap = s.model_value(s.anchor) - s.model_value(y)
    return SubSolution(np.asarray(y, dtype=float), float(_residual(s, y)), float(gap), iters, warning, method, info)


def tolerance(s: Surrogate, y, theta=THETA, abs_floor=ABS_FLOOR):
    return max(theta * metric_norm(s.metric, y - s.anchor) ** s.p, abs_floor)


# ---------------------------------------------------------------- p = 1


def prox_step(s: Surrogate, theta=THETA) -> SubSolution:
    """Closed-form minimizer of f1 + <grad f2(x), y-x> + M/2 ||y-x||^2."""
    if s.p != 1 or s.kind not in ("taylor", "composite"):
        raise CapabilityError("prox_step needs a first-order Taylor/composite surrogate")
    if not s.metric.diagonal and not s.simple.is_zero:
        return convex_descent(s, theta)
    x = s.anchor
    g = s.problem.smooth.gradient(x)
    z = x - s.metric.solve(g) / s.M
    y = s.simple.prox(z, 1.0 / s.M, s.metric)
    return _finish(s, y, 1, "prox")


# ---------------------------------------------------------------- p = 2


def cubic_minimize(g, H, M, metric: SpdMetric | None = None, max_iter=200):
    """Global minimizer of <g,s> + 1/2 <Hs,s> + M/6 ||s||^3.

    Works in D-whitened coordinates and solves the secular equation
    ||s(lam)|| = 2 lam / M on [max(0, -lam_1), lam_lo + sqrt(M |g| / 2)].
    Returns (s, lam, info).
    """
    g = np.asarray(g, dtype=float)
    n = g.shape[0]
    metric = metric or SpdMetric.identity(n)
    if M <= 0:
        raise ArgumentError("cubic regularization needs M > 0")
    gh = metric.whiten(g)
    Hh = metric.whiten_matrix(np.asarray(H, dtype=float))
    eig = sym_eig(Hh)
    lam, Q = eig.eigenvalues, eig.eigenvectors
    gam = Q.T @ gh
    gnorm = float(np.linalg.norm(gh))
    scale = max(1.0, float(np.max(np.abs(lam))))
    lo = max(0.0, -float(lam[0]))
    if gnorm == 0.0:
        if lam[0] >= 0:
            return np.zeros(n), 0.0, {"case": "stationary"}
        sh = (2 * lo / M) * Q[:, 0]
        return metric.unwhiten(sh), lo, {"case": "hard"}

    def shat(l, mask=None):
        den = lam + l
        c = np.zeros(n)
        ok = den > 0 if mask is None else mask
        c[ok] = -gam[ok] / den[ok]
        return c

    # hard case: no gradient weight on the leftmost eigenspace
    left = np.abs(lam - lam[0]) <= 1e-12 * scale
    if lam[0] < 0 and np.all(np.abs(gam[left]) <= 1e-14 * gnorm):
        c = shat(lo, ~left)
        rp = float(np.linalg.norm(c))
        target = 2 * lo / M
        if rp <= target:
            tau = math.sqrt(max(target**2 - rp**2, 0.0))
            c = c + tau * np.eye(n)[np.argmax(left)]
            return metric.unwhiten(Q @ c), lo, {"case": "hard"}

    def phi(l):
        den = lam + l
        if np.any(den <= 0):
            return math.inf, -math.inf
        c = gam / den
        r = float(np.linalg.norm(c))
        dr = -float(np.sum(c * c / den)) / r if r > 0 else 0.0
        return r - 2 * l / M, dr - 2 / M

    a, b = lo, lo + math.sqrt(M * gnorm / 2) * (1 + 1e-12) + 1e-300
    fb, _ = phi(b)
    grow = 0
    while fb > 0 and grow < 60:
        b = lo + 2 * (b - lo)
        fb, _ = phi(b)
        grow += 1
    if fb > 0:
        raise NumericalError("secular equation root not bracketed", lo=lo, hi=b, phi_hi=fb)
    l = b
    it = 0
    for it in range(max_iter):
        fl, dfl = phi(l)
        if fl == 0.0:
            break
        if fl > 0:
            a = l
        else:
            b = l
        step = l - fl / dfl if math.isfinite(fl) and dfl < 0 else math.nan
        l = step if a < step < b else 0.5 * (a + b)
        if b - a <= 1e-15 * max(b, 1e-300):
            break
    c = -gam / (lam + l)
    return metric.unwhiten(Q @ c), l, {"case": "easy", "iters": it + 1}


def cubic_step(s: Surrogate, theta=THETA) -> SubSolution:
    """Global minimizer of the cubic-regularized quadratic model."""
    if s.p != 2 or s.kind not in ("taylor", "composite") or not s.simple.is_zero:
        raise CapabilityError("cubic_step needs a p = 2 Taylor surrogate without simple part")
    x = s.anchor
    g = s.problem.smooth.gradient(x)
    H = s.problem.smooth.hessian(x)
    step, lam, info = cubic_minimize(g, H, s.M, s.metric)
    return _finish(s, x + step, info.get("iters", 1), "cubic", lam=lam, case=info["case"])


# ---------------------------------------------------------------- descent


def _prox_metric(s):
    return s.metric if (s.metric.diagonal or s.simple.is_zero) else SpdMetric.identity(s.metric.dim)


def _free_mask(s, y):
    if s.simple.kind == "l1" and s.simple.weight > 0:
        return y != 0
    if s.simple.kind == "box":
        return (y > s.simple.lo) & (y < s.simple.hi)
    if s.simple.kind == "custom":
        return np.zeros(y.shape, dtype=bool)
    return np.ones(y.shape, dtype=bool)


def _newton_try(s, y, fy):
    """Active-set (shifted) Newton step on the free coordinates; None if it fails."""
    free = _free_mask(s, y)
    if not np.any(free):
        return None
    try:
        H = s.smooth_model.hessian(y)
        g = s.model_grad(y)
    except (ArgumentError, CapabilityError, FloatingPointError):
        return None
    if s.simple.kind == "l1":
        g = g + s.simple.weight * np.sign(y)
    Hf = H[np.ix_(free, free)]
    gf = g[free]
    if not np.all(np.isfinite(Hf)) or not np.all(np.isfinite(gf)):
        return None
    ev = np.linalg.eigvalsh(0.5 * (Hf + Hf.T))
    shift = 0.0 if ev[0] > 1e-12 * max(1.0, abs(ev[-1])) else (-ev[0] + 1e-8 * max(1.0, abs(ev[-1])))
    try:
        d = -np.linalg.solve(Hf + shift * np.eye(len(gf)), gf)
    except np.linalg.LinAlgError:
        return None
    slope = float(gf @ d)
    if not slope < 0:
        return None
    alpha = 1.0
    for _ in range(30):
        yt = y.copy()
        yt[free] = y[free] + alpha * d
        ft = s.model_value(yt)
        if ft <= fy + 1e-4 * alpha * slope:
            return yt, ft
        alpha *= 0.5
    return None


def _local_lipschitz(s, y):
    try:
        H = s.smooth_model.hessian(y)
        ev = sym_eig(s.metric.whiten_matrix(H)).eigenvalues
        L = float(max(abs(ev[0]), abs(ev[-1])))
        return L if L > 0 and math.isfinite(L) else 1.0
    except (ArgumentError, CapabilityError):
        return 1.0


def _curvature_escape(s, y, fy):
    """Step along the leftmost model eigenvector when it has negative curvature at y."""
    if not s.simple.is_zero:
        return None
    try:
        H = s.metric.whiten_matrix(s.smooth_model.hessian(y))
    except (ArgumentError, CapabilityError):
        return None
    r = sym_eig(H)
    lam = float(r.eigenvalues[0])
    if not lam < -1e-10 * max(1.0, float(np.max(np.abs(r.eigenvalues)))):
        return None
    v = s.metric.unwhiten(r.eigenvectors[:, 0])
    alpha = 1.0
    for _ in range(60):
        for d in (v, -v):
            z = y + alpha * d
            fz = s.model_value(z)
            if fz < fy:
                return z, fz
        alpha *= 0.5
    return None


def _descent(s: Surrogate, theta, max_inner, method, abs_floor=ABS_FLOOR, newton=True):
    x = s.anchor
    y = x.copy()
    fy = s.model_value(y)
    pm = _prox_metric(s)
    t = 1.0 / _local_lipschitz(s, y)
    it = 0
    escapes = 0
    for it in range(1, max_inner + 1):
        # at the anchor the tolerance reduces to abs_floor
        if _residual(s, y) <= tolerance(s, y, theta, abs_floor):
            esc = _curvature_escape(s, y, fy) if method == "nonconvex_descent" and escapes < 5 else None
            if esc is None:
                return _finish(s, y, it - 1, method)
            y, fy = esc
            escapes += 1
            continue
        g = s.model_grad(y)
        gstep = pm.solve(g) if pm is s.metric else g
        moved = False
        for _ in range(60):
            z = s.simple.prox(y - t * gstep, t, pm)
            fz = s.model_value(z)
            d = z - y
            model_bound = s.smooth_model.value(y) + g @ d + 0.5 / t * metric_norm(pm, d) ** 2 + s.simple.value(z)
            if math.isfinite(fz) and fz <= model_bound + 1e-15 * abs(fy) and fz <= fy:
                moved = True
                break
            t *= 0.5
        if moved:
            y, fy = z, fz
            t *= 2.0
        if newton:
            nt = _newton_try(s, y, fy)
            if nt is not None and nt[1] <= fy:
                y, fy = nt
                moved = True
        if not moved:
            break
    res = _residual(s, y)
    ok = res <= tolerance(s, y, theta, abs_floor)
    return _finish(s, y, it, method, warning=not ok)


def _scalar_root(s: Surrogate, theta, max_inner):
    """1-D convex model: bracket the sign change of g' and run Brent's method."""
    x = float(s.anchor[0])
    d0 = float(s.model_grad(s.anchor)[0])
    if d0 == 0.0:
        return _finish(s, s.anchor, 0, "scalar_root")
    direction = -math.copysign(1.0, d0)
    step = max(abs(d0) / _local_lipschitz(s, s.anchor), 1e-300)
    grad = lambda y: float(s.model_grad(np.array([y]))[0])
    far = x + direction * step
    for _ in range(200):
        gf = grad(far)
        if not math.isfinite(gf) or math.copysign(1.0, gf) != math.copysign(1.0, d0) or gf == 0.0:
            break
        step *= 2.0
        far = x + direction * step
    else:
        return None
    if grad(far) == 0.0:
        return _finish(s, np.array([far]), 1, "scalar_root")
    root, res = optimize.brentq(grad, x, far, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=max_inner,
                                full_output=True, disp=False)
    y = np.array([root])
    ok = res.converged or _residual(s, y) <= tolerance(s, y, theta)
    return _finish(s, y, res.iterations, "scalar_root", warning=not ok)


def convex_descent(s: Surrogate, theta=THETA, max_inner=500) -> SubSolution:
    """Proximal-gradient with backtracking from the anchor, plus Newton polish.

    Scalar models with no simple part go to a bracketed root find instead.
    """
    if s.anchor.shape[0] == 1 and s.simple.is_zero:
        sol = _scalar_root(s, theta, max_inner)
        if sol is not None:
            return sol
    return _descent(s, theta, max_inner, "convex_descent")


def nonconvex_descent(s: Surrogate, theta=THETA, max_inner=500) -> SubSolution:
    """Same descent iteration; converges to a stationary point of a nonconvex model."""
    return _descent(s, theta, max_inner, "nonconvex_descent")


def solve(s: Surrogate, kind="auto", theta=THETA, max_inner=500) -> SubSolution:
    if kind == "auto":
        if s.p == 1 and s.kind in ("taylor", "composite"):
            kind = "prox"
        elif s.p == 2 and s.kind in ("taylor", "composite") and s.simple.is_zero:
            kind = "cubic"
        else:
            kind = "convex_descent" if (s.problem.convex and (s.convex_error or s.kind == "proximal")) else "nonconvex_descent"
    if kind == "prox":
        return prox_step(s, theta)
    if kind == "cubic":
        return cubic_step(s, theta)
    if kind == "convex_descent":
        return convex_descent(s, theta, max_inner)
    if kind == "nonconvex_descent":
        return nonconvex_descent(s, theta, max_inner)
    raise ArgumentError(f"unknown subsolver {kind!r}; known: {', '.join(SOLVERS)}")


# ---------------------------------------------------------------- grid reference


@dataclass
class GridMin:
    point: np.ndarray
    value: float
    at_boundary: bool = False

    def __iter__(self):
        # unpacks as (point, value)
        return iter((self.point, self.value))


def grid_oracle(s: Surrogate, box, resolution=401, zoom=0) -> GridMin:
    """Exhaustive grid minimization of g(.; x) over a box in dimension <= 2.

    ``zoom`` repeats the search on a shrinking box around the best cell.
    """
    lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in box)
    n = s.anchor.shape[0]
    if n > 2:
        raise CapabilityError("grid oracle supports dimension <= 2")
    if lo.shape[0] != n or hi.shape[0] != n:
        raise ArgumentError("box dimension mismatch")
    blo, bhi = lo.copy(), hi.copy()
    best_pt, best_val, at_edge = None, math.inf, False
    for level in range(zoom + 1):
        axes = [np.linspace(lo[i], hi[i], resolution) for i in range(n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        P = np.stack([m.ravel() for m in mesh], axis=1)
        with np.errstate(invalid="ignore", over="ignore"):
            V = s.model_values(P)
        V = np.where(np.isfinite(V), V, math.inf)
        k = int(np.argmin(V))
        if V[k] <= best_val:
            best_pt, best_val = P[k].copy(), float(V[k])
        idx = np.unravel_index(k, mesh[0].shape)
        h = (hi - lo) / (resolution - 1)
        if level == 0:
            at_edge = any(idx[i] in (0, resolution - 1) for i in range(n))
        lo = np.maximum(best_pt - 2 * h, blo)
        hi = np.minimum(best_pt + 2 * h, bhi)
    return GridMin(best_pt, best_val, bool(at_edge))
