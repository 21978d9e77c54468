"""Objective oracles, simple (prox-capable) parts and the test-problem library."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit, logsumexp, softmax

from ghom.errors import ArgumentError, CapabilityError, InsufficientDataError
from ghom.metric import (
    SpdMetric,
    SymTensor,
    contract_array,
    dual_norm,
    metric_norm,
    sym_eig,
    tensor_norm_probe,
)


# ---------------------------------------------------------------- oracles


class SmoothOracle:
    """Smooth function with derivatives up to ``max_order``.

    Subclasses implement ``value`` and ``deriv`` (raw ndarray of order i).
    ``derivative`` wraps the raw array in a checked SymTensor.
    """

    name = "smooth"

    def __init__(self, dim, max_order, known_lipschitz=None, known_optimum=None):
        self.dim = int(dim)
        self.max_order = int(max_order)
        self.known_lipschitz = dict(known_lipschitz or {})
        self.known_optimum = known_optimum

    def value(self, x) -> float:
        raise NotImplementedError

    def deriv(self, x, i):
        raise NotImplementedError

    def derivative(self, x, i) -> SymTensor:
        self._check_order(i)
        return SymTensor(self.deriv(np.asarray(x, dtype=float), i))

    def gradient(self, x):
        return self.deriv(np.asarray(x, dtype=float), 1)

    def hessian(self, x):
        return self.deriv(np.asarray(x, dtype=float), 2)

    def values(self, X):
        return np.array([self.value(x) for x in np.asarray(X, dtype=float)])

    def curvature_bound(self, center, radius):
        """Matrix H with hess f(y) <= H for y in the ball, or None."""
        return None

    def lipschitz_bound(self, order, center, radius):
        """Analytic upper bound on L_order over the ball, or None."""
        return None

    def _check_order(self, i):
        if i < 1 or i > self.max_order:
            raise CapabilityError(f"{self.name}: derivative order {i} not available (max {self.max_order})")


class FunctionOracle(SmoothOracle):
    """Oracle from a list of callables [value, grad, hess, ...]."""

    def __init__(self, dim, funcs, known_lipschitz=None, known_optimum=None, name="function", vector_values=None):
        super().__init__(dim, len(funcs) - 1, known_lipschitz, known_optimum)
        self._funcs = list(funcs)
        self.name = name
        self._vec = vector_values

    def value(self, x):
        return float(self._funcs[0](np.asarray(x, dtype=float)))

    def deriv(self, x, i):
        self._check_order(i)
        return np.asarray(self._funcs[i](np.asarray(x, dtype=float)), dtype=float).reshape((self.dim,) * i)

    def values(self, X):
        if self._vec is not None:
            return np.asarray(self._vec(np.asarray(X, dtype=float)), dtype=float)
        return super().values(X)


class QuadraticOracle(SmoothOracle):
    """f(x) = 1/2 x'Ax + b'x + c."""

    name = "quadratic"

    def __init__(self, A, b=None, c=0.0, metric=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[0]
        self.A = 0.5 * (A + A.T)
        self.b = np.zeros(n) if b is None else np.asarray(b, dtype=float).reshape(n)
        self.c = float(c)
        metric = metric or SpdMetric.identity(n)
        L1 = float(np.max(np.abs(sym_eig(metric.whiten_matrix(self.A)).eigenvalues)))
        opt = None
        ev = sym_eig(self.A).eigenvalues
        if ev[0] > 0:
            xs = -np.linalg.solve(self.A, self.b)
            opt = (xs, self.value(xs))
        super().__init__(n, 4, {1: L1, 2: 0.0, 3: 0.0}, opt)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.A @ x + self.b @ x + self.c)

    def values(self, X):
        X = np.asarray(X, dtype=float)
        return 0.5 * np.einsum("ki,ij,kj->k", X, self.A, X) + X @ self.b + self.c

    def deriv(self, x, i):
        self._check_order(i)
        if i == 1:
            return self.A @ x + self.b
        if i == 2:
            return self.A.copy()
        return np.zeros((self.dim,) * i)

    def curvature_bound(self, center, radius):
        return self.A.copy()

    def lipschitz_bound(self, order, center, radius):
        return self.known_lipschitz.get(order)


class LogSumExpOracle(SmoothOracle):
    """f(x) = log sum_i exp(<a_i, x>), rows of A are the a_i."""

    name = "logsumexp"

    def __init__(self, A):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        super().__init__(self.A.shape[1], 4, {1: 1.0, 2: 2.0, 3: 4.0})

    def value(self, x):
        return float(logsumexp(self.A @ x))

    def values(self, X):
        return logsumexp(np.asarray(X, dtype=float) @ self.A.T, axis=1)

    def deriv(self, x, i):
        self._check_order(i)
        pi = softmax(self.A @ x)
        g = self.A.T @ pi
        if i == 1:
            return g
        C = self.A - g  # centered directions
        H = np.einsum("k,ka,kb->ab", pi, C, C)
        if i == 2:
            return 0.5 * (H + H.T)
        if i == 3:
            return np.einsum("k,ka,kb,kc->abc", pi, C, C, C)
        T4 = np.einsum("k,ka,kb,kc,kd->abcd", pi, C, C, C, C)
        T4 -= np.einsum("ab,cd->abcd", H, H) + np.einsum("ac,bd->abcd", H, H) + np.einsum("ad,bc->abcd", H, H)
        return T4

    def curvature_bound(self, center, radius):
        # hess f <= sum a_i a_i' = D
        return self.A.T @ self.A


class PowerNormOracle(SmoothOracle):
    """f(x) = scale * ||x - c||^s in the metric D."""

    name = "power_norm"

    def __init__(self, s, center, metric=None, scale=1.0):
        c = np.asarray(center, dtype=float).reshape(-1)
        n = c.shape[0]
        self.s = float(s)
        if self.s <= 1.0:
            raise ArgumentError("power must exceed 1")
        self.c = c
        self.metric = metric or SpdMetric.identity(n)
        self.scale = float(scale)
        known = {}
        si = round(self.s)
        if abs(self.s - si) < 1e-12 and si >= 2:
            known[si - 1] = math.factorial(si) * self.scale
            for j in range(si, 4):
                known[j] = 0.0 if si % 2 == 0 else known.get(j)
            known = {k: v for k, v in known.items() if v is not None}
        super().__init__(n, 4, known, (c.copy(), 0.0))

    def value(self, x):
        u = np.asarray(x, dtype=float) - self.c
        r2 = max(float(u @ self.metric.D @ u), 0.0)
        return self.scale * r2 ** (self.s / 2)

    def values(self, X):
        U = np.asarray(X, dtype=float) - self.c
        r2 = np.maximum(np.einsum("ki,ij,kj->k", U, self.metric.D, U), 0.0)
        return self.scale * r2 ** (self.s / 2)

    def deriv(self, x, i):
        self._check_order(i)
        return self.scale * power_norm_derivative(np.asarray(x, dtype=float) - self.c, self.metric.D, self.s, i)

    def curvature_bound(self, center, radius):
        rmax = metric_norm(self.metric, np.asarray(center) - self.c) + radius
        s = self.s
        if s < 2:
            return None
        return self.scale * s * (s - 1) * rmax ** (s - 2) * self.metric.D

    def lipschitz_bound(self, order, center, radius):
        if order in self.known_lipschitz:
            return self.known_lipschitz[order]
        if order == 1 and self.s >= 2:
            # hessian eigenvalues are s r^{s-2} and s(s-1) r^{s-2}
            rmax = metric_norm(self.metric, np.asarray(center) - self.c) + radius
            return self.scale * self.s * (self.s - 1) * rmax ** (self.s - 2)
        return None


def power_norm_derivative(u, D, s, i):
    """i-th derivative of (u'Du)^{s/2} for i <= 4."""
    n = u.shape[0]
    w = D @ u
    r2 = max(float(u @ w), 0.0)
    r = math.sqrt(r2)
    shape = (n,) * i
    # coefficient of r^{s-2m}: prod_{l<m}(s-2l)
    def coef(m):
        out = 1.0
        for l in range(m):
            out *= s - 2 * l
        return out

    def rp(m):
        # r^{s-2m} with the zero-radius conventions handled by the caller
        return r ** (s - 2 * m)

    if r == 0.0:
        if s > i:
            return np.zeros(shape)
        # pure-D term survives only if every w-term has a zero coefficient
        k = i // 2
        if i % 2 == 0 and abs(s - i) < 1e-12 and all(abs(coef(m)) < 1e-15 for m in range(k + 1, i + 1)):
            return coef(k) * _sym_dd(D, i)
        raise ArgumentError(f"derivative of order {i} of a norm power {s} is undefined at the center")

    out = np.zeros(shape)
    if i == 1:
        return coef(1) * rp(1) * w
    if i == 2:
        out = coef(1) * rp(1) * D
        if coef(2) != 0.0:
            out = out + coef(2) * rp(2) * np.outer(w, w)
        return out
    if i == 3:
        if coef(2) != 0.0:
            wD = np.einsum("a,bc->abc", w, D)
            out = out + coef(2) * rp(2) * (wD + np.transpose(wD, (1, 0, 2)) + np.transpose(wD, (1, 2, 0)))
        if coef(3) != 0.0:
            out = out + coef(3) * rp(3) * np.einsum("a,b,c->abc", w, w, w)
        return out
    # i == 4
    if coef(2) != 0.0:
        out = out + coef(2) * rp(2) * _sym_dd(D, 4)
    if coef(3) != 0.0:
        six = sum(np.einsum(f"{i},{j},{k}->abcd", w, w, D)
                  for i, j, k in [("a", "b", "cd"), ("a", "c", "bd"), ("a", "d", "bc"),
                                  ("b", "c", "ad"), ("b", "d", "ac"), ("c", "d", "ab")])
        out = out + coef(3) * rp(3) * six
    if coef(4) != 0.0:
        out = out + coef(4) * rp(4) * np.einsum("a,b,c,d->abcd", w, w, w, w)
    return out


def _sym_dd(D, i):
    if i == 2:
        return D.copy()
    return np.einsum("ab,cd->abcd", D, D) + np.einsum("ac,bd->abcd", D, D) + np.einsum("ad,bc->abcd", D, D)


class RosenbrockOracle(SmoothOracle):
    """100 (y - x^2)^2 + (1 - x)^2."""

    name = "rosenbrock"

    def __init__(self, a=1.0, b=100.0):
        self.a, self.b = float(a), float(b)
        super().__init__(2, 4, {3: 24.0 * self.b}, (np.array([self.a, self.a**2]), 0.0))

    def value(self, z):
        x, y = z
        return float(self.b * (y - x * x) ** 2 + (self.a - x) ** 2)

    def values(self, Z):
        Z = np.asarray(Z, dtype=float)
        x, y = Z[:, 0], Z[:, 1]
        return self.b * (y - x * x) ** 2 + (self.a - x) ** 2

    def deriv(self, z, i):
        self._check_order(i)
        x, y = z
        b = self.b
        if i == 1:
            return np.array([-4 * b * x * (y - x * x) - 2 * (self.a - x), 2 * b * (y - x * x)])
        if i == 2:
            return np.array([[12 * b * x * x - 4 * b * y + 2, -4 * b * x], [-4 * b * x, 2 * b]])
        if i == 3:
            T = np.zeros((2, 2, 2))
            T[0, 0, 0] = 24 * b * x
            T[0, 0, 1] = T[0, 1, 0] = T[1, 0, 0] = -4 * b
            return T
        T = np.zeros((2, 2, 2, 2))
        T[0, 0, 0, 0] = 24 * b
        return T

    def _box(self, center, radius):
        cx, cy = np.asarray(center, dtype=float)
        return abs(cx) + radius, cy - radius, cy + radius

    def curvature_bound(self, center, radius):
        xm, ylo, _ = self._box(center, radius)
        b = self.b
        # Gershgorin-style: diag + |offdiag| bounds per row, as a diagonal majorant
        d0 = 12 * b * xm * xm - 4 * b * ylo + 2 + 4 * b * xm
        d1 = 2 * b + 4 * b * xm
        return np.diag([max(d0, 0.0), d1])

    def lipschitz_bound(self, order, center, radius):
        xm, ylo, yhi = self._box(center, radius)
        b = self.b
        if order == 3:
            return 24 * b
        if order == 2:
            # Frobenius norm of the third derivative dominates its operator norm
            return math.sqrt((24 * b * xm) ** 2 + 3 * (4 * b) ** 2)
        if order == 1:
            h = np.array([[12 * b * xm * xm + 4 * b * max(abs(ylo), abs(yhi)) + 2, 4 * b * xm], [4 * b * xm, 2 * b]])
            return float(np.linalg.norm(h, 2))
        return None


class DoubleWellOracle(SmoothOracle):
    """sum_i (x_i^2 - 1)^2; saddle at the origin, minima at (+-1, ..., +-1)."""

    name = "double_well"

    def __init__(self, n=2):
        super().__init__(n, 4, {3: 24.0}, (np.ones(n), 0.0))

    def value(self, x):
        return float(np.sum((np.asarray(x) ** 2 - 1.0) ** 2))

    def values(self, X):
        return np.sum((np.asarray(X, dtype=float) ** 2 - 1.0) ** 2, axis=1)

    def deriv(self, x, i):
        self._check_order(i)
        n = self.dim
        if i == 1:
            return 4 * x * (x * x - 1)
        diag = {2: 12 * x * x - 4, 3: 24 * x, 4: 24 * np.ones(n)}[i]
        T = np.zeros((n,) * i)
        idx = np.arange(n)
        T[(idx,) * i] = diag
        return T

    def curvature_bound(self, center, radius):
        m = np.abs(np.asarray(center, dtype=float)) + radius
        return np.diag(np.maximum(12 * m * m - 4, 0.0))

    def lipschitz_bound(self, order, center, radius):
        m = float(np.max(np.abs(np.asarray(center, dtype=float)))) + radius
        return {1: max(12 * m * m - 4, 4.0), 2: 24 * m, 3: 24.0}.get(order)


class LogisticOracle(SmoothOracle):
    """(1/m) sum log(1 + exp(-y_i <a_i, x>)) + mu/2 |x|^2."""

    name = "logistic_l2"

    def __init__(self, A, labels, mu):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.y = np.asarray(labels, dtype=float).reshape(-1)
        self.mu = float(mu)
        m, n = self.A.shape
        self.Z = self.A * self.y[:, None]  # rows y_i a_i
        L1 = float(np.linalg.norm(self.A, 2) ** 2) / (4 * m) + self.mu
        super().__init__(n, 3, {1: L1})

    def value(self, x):
        t = self.Z @ x
        return float(np.mean(np.logaddexp(0.0, -t)) + 0.5 * self.mu * x @ x)

    def values(self, X):
        X = np.asarray(X, dtype=float)
        T = X @ self.Z.T
        return np.mean(np.logaddexp(0.0, -T), axis=1) + 0.5 * self.mu * np.sum(X * X, axis=1)

    def deriv(self, x, i):
        self._check_order(i)
        m = self.Z.shape[0]
        t = self.Z @ x
        sg = expit(-t)  # sigma(-t)
        if i == 1:
            return -(self.Z.T @ sg) / m + self.mu * x
        w = sg * (1 - sg)
        if i == 2:
            return (self.Z.T * w) @ self.Z / m + self.mu * np.eye(self.dim)
        w3 = -w * (1 - 2 * sg)  # d/dt of sigma(-t)(1-sigma(-t))
        return np.einsum("k,ka,kb,kc->abc", w3, self.Z, self.Z, self.Z) / m

    def curvature_bound(self, center, radius):
        m = self.Z.shape[0]
        return self.Z.T @ self.Z / (4 * m) + self.mu * np.eye(self.dim)


class ComposedOracle(SmoothOracle):
    """x -> phi(F(x)) through the chain rule (orders 1, 2)."""

    name = "composed"

    def __init__(self, comp):
        self.comp = comp
        super().__init__(comp.dim, 2)

    def value(self, x):
        return self.comp.phi.value(self.comp.F(x))

    def deriv(self, x, i):
        self._check_order(i)
        c = self.comp
        z = c.F(x)
        J = c.jac(x)
        gphi = c.phi.deriv(z, 1)
        if i == 1:
            return J.T @ gphi
        H = J.T @ c.phi.deriv(z, 2) @ J + np.einsum("j,jab->ab", gphi, c.second(x))
        return 0.5 * (H + H.T)

    def curvature_bound(self, center, radius):
        if self.comp.curvature is None:
            return None
        return self.comp.curvature(np.asarray(center, dtype=float), radius)


@dataclass
class Composition:
    """f(x) = phi(F(x)); F: R^n -> R^m with Jacobian and second derivatives."""

    dim: int
    F: Callable
    jac: Callable
    second: Callable  # x -> array (m, n, n)
    phi: SmoothOracle
    separable: bool = False
    # optional caller-supplied constants; probed over a region otherwise
    L1F: Optional[float] = None
    L0phi: Optional[float] = None
    L1phi: Optional[float] = None
    curvature: Optional[Callable] = None  # (center, radius) -> hessian majorant on the ball


# ---------------------------------------------------------------- simple parts


class SimplePart:
    """Prox-capable convex part: zero, l1, box indicator or custom."""

    def __init__(self, kind="zero", weight=0.0, lo=None, hi=None, value_fn=None, prox_fn=None, subgrad_fn=None):
        if kind not in ("zero", "l1", "box", "custom"):
            raise ArgumentError(f"unknown simple part kind {kind!r}")
        self.kind = kind
        self.weight = float(weight)
        self.lo = None if lo is None else np.asarray(lo, dtype=float)
        self.hi = None if hi is None else np.asarray(hi, dtype=float)
        self._value_fn, self._prox_fn, self._subgrad_fn = value_fn, prox_fn, subgrad_fn
        if kind == "box" and np.any(self.lo > self.hi):
            raise ArgumentError("empty box")

    @property
    def is_zero(self):
        return self.kind == "zero" or (self.kind == "l1" and self.weight == 0.0)

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return 0.0
        if self.kind == "l1":
            return self.weight * float(np.sum(np.abs(x)))
        if self.kind == "box":
            return 0.0 if np.all(x >= self.lo) and np.all(x <= self.hi) else math.inf
        return float(self._value_fn(x))

    def values(self, X):
        X = np.asarray(X, dtype=float)
        if self.kind == "zero":
            return np.zeros(X.shape[0])
        if self.kind == "l1":
            return self.weight * np.sum(np.abs(X), axis=1)
        if self.kind == "box":
            ok = np.all((X >= self.lo) & (X <= self.hi), axis=1)
            return np.where(ok, 0.0, math.inf)
        return np.array([self.value(x) for x in X])

    def prox(self, z, t, metric: SpdMetric | None = None):
        """argmin_y kind(y) + 1/(2t) ||y - z||_D^2, D diagonal."""
        z = np.asarray(z, dtype=float)
        d = np.ones_like(z)
        if metric is not None:
            if not metric.diagonal and not self.is_zero:
                raise CapabilityError("closed-form prox needs a diagonal metric")
            d = np.diag(metric.D).copy()
        if self.is_zero:
            return z.copy()
        if self.kind == "l1":
            thr = t * self.weight / d
            return np.sign(z) * np.maximum(np.abs(z) - thr, 0.0)
        if self.kind == "box":
            return np.clip(z, self.lo, self.hi)
        return np.asarray(self._prox_fn(z, t, d), dtype=float)

    def min_norm_element(self, x, g):
        """Entry-wise closest point to 0 of g + subdifferential(x)."""
        x = np.asarray(x, dtype=float)
        g = np.asarray(g, dtype=float)
        if self.is_zero:
            return g.copy()
        if self.kind == "l1":
            lam = self.weight
            v = g + lam * np.sign(x)
            at0 = x == 0
            v[at0] = np.sign(g[at0]) * np.maximum(np.abs(g[at0]) - lam, 0.0)
            return v
        if self.kind == "box":
            v = g.copy()
            atlo = x <= self.lo
            athi = x >= self.hi
            v[atlo] = np.minimum(g[atlo], 0.0)
            v[athi] = np.maximum(g[athi], 0.0)
            v[atlo & athi] = 0.0
            return v
        if self._subgrad_fn is None:
            raise CapabilityError("custom simple part lacks a subgradient map")
        return np.asarray(self._subgrad_fn(x, g), dtype=float)

    def subgradient_min_norm(self, x, g_smooth, metric: SpdMetric | None = None):
        """dist_*(0, g_smooth + subdiff(x)); exact for diagonal metrics, an upper bound otherwise."""
        v = self.min_norm_element(x, g_smooth)
        if metric is None:
            return float(np.linalg.norm(v))
        return dual_norm(metric, v)

    def __repr__(self):
        return f"SimplePart({self.kind})"


# ---------------------------------------------------------------- problems


@dataclass
class CompositeProblem:
    name: str
    smooth: SmoothOracle
    simple: SimplePart
    metric: SpdMetric
    x0: np.ndarray
    composition: Optional[Composition] = None
    uniform_convexity: Optional[tuple] = None  # (q, sigma_q)
    kl: Optional[tuple] = None  # (q, sigma_q, delta, eps)
    f_star: Optional[float] = None
    x_star: Optional[np.ndarray] = None
    f_floor: float = 0.0
    convex: bool = False
    params: dict = field(default_factory=dict)
    probe_radius: float = 2.0
    _lip_cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self):
        return self.smooth.dim

    def value(self, x) -> float:
        v1 = self.simple.value(x)
        if not math.isfinite(v1):
            return math.inf
        return self.smooth.value(x) + v1

    def values(self, X):
        return self.smooth.values(X) + self.simple.values(X)

    def stationarity(self, x) -> float:
        """S(x) = dist_*(0, df(x)) for smooth + simple."""
        return self.simple.subgradient_min_norm(x, self.smooth.gradient(x), self.metric)

    def lipschitz_constant(self, order, center=None, radius=None):
        """(L, source) with source in known | bound | probed.

        Region defaults to the ball of radius ``probe_radius`` around x0.
        """
        center = self.x0 if center is None else np.asarray(center, dtype=float)
        radius = self.probe_radius if radius is None else radius
        key = (order, tuple(np.round(center, 12)), radius)
        if key in self._lip_cache:
            return self._lip_cache[key]
        if order in self.smooth.known_lipschitz:
            out = (float(self.smooth.known_lipschitz[order]), "known")
        else:
            b = self.smooth.lipschitz_bound(order, center, radius)
            if b is not None:
                out = (float(b), "bound")
            else:
                out = (lipschitz_probe(self.smooth, order, (center, radius), samples=200, seed=0, metric=self.metric), "probed")
        self._lip_cache[key] = out
        return out


# ---------------------------------------------------------------- operations


def taylor_eval(o: SmoothOracle, x, y, order) -> float:
    if order > o.max_order:
        raise CapabilityError(f"Taylor order {order} exceeds oracle order {o.max_order}")
    x = np.asarray(x, dtype=float)
    s = np.asarray(y, dtype=float) - x
    val = o.value(x)
    for i in range(1, order + 1):
        val += contract_array(o.deriv(x, i), s, i) / math.factorial(i)
    return float(val)


def taylor_grad(o: SmoothOracle, x, y, order):
    if order > o.max_order:
        raise CapabilityError(f"Taylor order {order} exceeds oracle order {o.max_order}")
    x = np.asarray(x, dtype=float)
    s = np.asarray(y, dtype=float) - x
    g = np.zeros(o.dim)
    for i in range(1, order + 1):
        g = g + contract_array(o.deriv(x, i), s, i - 1) / math.factorial(i - 1)
    return g


def fd_check(o: SmoothOracle, x, order, step=1e-5) -> float:
    """Max error of the analytic order-th derivative against central differences.

    Errors are scaled by max(1, max |entry|) of the analytic tensor.
    """
    if order > o.max_order:
        raise CapabilityError(f"order {order} exceeds oracle order {o.max_order}")
    x = np.asarray(x, dtype=float)
    n = o.dim
    exact = o.deriv(x, order)
    slices = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        if order == 1:
            slices.append((o.value(x + e) - o.value(x - e)) / (2 * step))
        else:
            slices.append((o.deriv(x + e, order - 1) - o.deriv(x - e, order - 1)) / (2 * step))
    approx = np.stack([np.asarray(s_) for s_ in slices], axis=-1)
    scale = max(1.0, float(np.max(np.abs(exact))))
    return float(np.max(np.abs(exact - approx)) / scale)


def _ball_samples(rng, center, radius, metric, count):
    n = center.shape[0]
    Z = rng.standard_normal((count, n))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    Z *= rng.uniform(0, 1, (count, 1)) ** (1.0 / n)
    return center + radius * np.array([metric.unwhiten(z) for z in Z])


def lipschitz_probe(o: SmoothOracle, order, region, samples=100, seed=0, metric=None) -> float:
    """Sampled lower bound on L_order over a metric ball (center, radius)."""
    if order > o.max_order:
        raise CapabilityError(f"order {order} exceeds oracle order {o.max_order}")
    center, radius = region
    center = np.asarray(center, dtype=float)
    metric = metric or SpdMetric.identity(o.dim)
    rng = np.random.default_rng(seed)
    X = _ball_samples(rng, center, radius, metric, samples)
    Y = _ball_samples(rng, center, radius, metric, samples)
    # half of the pairs are short displacements to catch local peaks
    half = samples // 2
    for k in range(half):
        d = rng.standard_normal(o.dim)
        d = metric.unwhiten(d / np.linalg.norm(d))
        Y[k] = X[k] + radius * 10 ** rng.uniform(-3, -1) * d
    best = 0.0
    for x, y in zip(X, Y):
        r = metric_norm(metric, x - y)
        if r == 0:
            continue
        diff = o.deriv(x, order) - o.deriv(y, order)
        val = tensor_norm_probe(SymTensor(diff, check=False), metric, samples=8, seed=int(rng.integers(1 << 31)))
        best = max(best, val / r)
    return float(best)


def uniform_convexity_probe(pb: CompositeProblem, q, samples=200, seed=0, region=None) -> float:
    """min over sampled pairs of q (f(y) - f(x) - <f^x, y-x>) / ||y-x||^q."""
    rng = np.random.default_rng(seed)
    center, radius = region if region is not None else (pb.x0, pb.probe_radius)
    center = np.asarray(center, dtype=float)
    X = _ball_samples(rng, center, radius, pb.metric, samples)
    Y = _ball_samples(rng, center, radius, pb.metric, samples)
    if pb.smooth.max_order >= 2:
        # half the pairs follow the least-curvature direction at x
        for k in range(samples // 2):
            try:
                Hw = pb.metric.whiten_matrix(pb.smooth.hessian(X[k]))
            except ArgumentError:
                continue
            v = pb.metric.unwhiten(sym_eig(Hw).eigenvectors[:, 0])
            Y[k] = X[k] + radius * rng.uniform(-1, 1) * v
    best = math.inf
    used = 0
    for x, y in zip(X, Y):
        r = metric_norm(pb.metric, y - x)
        if r < 1e-12:
            continue
        gx = pb.smooth.gradient(x)
        if not pb.simple.is_zero:
            # min_norm_element(x, 0) is one valid subgradient of the simple part
            gx = gx + pb.simple.min_norm_element(x, np.zeros_like(x))
        gap = pb.value(y) - pb.value(x) - gx @ (y - x)
        best = min(best, q * gap / r**q)
        used += 1
    if used == 0:
        raise InsufficientDataError("all sampled pairs coincide")
    return float(best)


def estimate_kl_exponent(pb: CompositeProblem, points, f_star=None):
    """Fit log(f - f*) = log(sigma) + q log S; returns (q, sigma)."""
    f_star = pb.f_star if f_star is None else f_star
    if f_star is None:
        raise InsufficientDataError("f* unknown")
    xs, ys = [], []
    for x in points:
        gap = pb.value(x) - f_star
        S = pb.stationarity(x)
        if gap > 0 and S > 0 and math.isfinite(gap):
            xs.append(math.log(S))
            ys.append(math.log(gap))
    if len(xs) < 3:
        raise InsufficientDataError("need at least 3 points with f > f* and S > 0")
    q, logsig = np.polyfit(xs, ys, 1)
    return float(q), float(math.exp(logsig))


# ---------------------------------------------------------------- library


def log_sum_exp(A, x0=None, name="logsumexp"):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    D = A.T @ A
    ev = sym_eig(D).eigenvalues
    if ev[0] <= 1e-12 * max(ev[-1], 1.0):
        raise ArgumentError("sum a_i a_i' is singular; drop redundant coordinates first")
    n = A.shape[1]
    oracle = LogSumExpOracle(A)
    x0 = np.full(n, 1.0) if x0 is None else np.asarray(x0, dtype=float)
    return CompositeProblem(name, oracle, SimplePart(), SpdMetric(D), x0, convex=True, f_floor=0.0)


def symmetric_log_sum_exp(n=1, x0=None):
    """a_i = +-e_i, so x* = 0 and f* = log(2n)."""
    A = np.vstack([np.eye(n), -np.eye(n)])
    x0 = np.linspace(1.0, 2.0, n) if x0 is None else x0
    pb = log_sum_exp(A, x0=x0, name="logsumexp")
    pb.x_star, pb.f_star = np.zeros(n), math.log(2 * n)
    pb.smooth.known_optimum = (pb.x_star, pb.f_star)
    # locally strongly convex but no global uniform convexity; f_floor is a valid lower bound
    pb.f_floor = math.log(2 * n)
    pb.params = {"n": n}
    return pb


def logistic_log_sum_exp(a=1.0, x0=1.0):
    """Two-term log-sum-exp with a_1 = 0: log(1 + exp(a x)); infimum 0, not attained."""
    pb = log_sum_exp(np.array([[0.0], [float(a)]]), x0=np.array([float(x0)]), name="logistic_lse")
    pb.f_star = 0.0
    pb.f_floor = 0.0
    pb.params = {"a": a}
    return pb


def power_norm(q, center=None, n=None, scale=1.0, metric=None, x0=None):
    if center is None:
        center = np.zeros(n or 2)
    center = np.asarray(center, dtype=float).reshape(-1)
    n = center.shape[0]
    metric = metric or SpdMetric.identity(n)
    oracle = PowerNormOracle(q, center, metric, scale)
    if x0 is None:
        d = metric.unwhiten(np.ones(n) / math.sqrt(n))
        x0 = center + d  # unit distance from the center
    pb = CompositeProblem("power_norm", oracle, SimplePart(), metric, np.asarray(x0, dtype=float),
                          f_star=0.0, x_star=center.copy(), convex=True, f_floor=0.0)
    if q >= 2:
        # scale * ||x - c||^q is uniformly convex of degree q with sigma = q scale 2^{2-q}
        pb.uniform_convexity = (float(q), float(q) * scale * 2.0 ** (2 - q))
    pb.params = {"q": q, "n": n, "scale": scale}
    return pb


def quadratic(A, b=None, x0=None, metric=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    metric = metric or SpdMetric.identity(n)
    oracle = QuadraticOracle(A, b, metric=metric)
    x0 = np.ones(n) if x0 is None else np.asarray(x0, dtype=float)
    pb = CompositeProblem("quadratic", oracle, SimplePart(), metric, x0, convex=True)
    ev = sym_eig(metric.whiten_matrix(oracle.A)).eigenvalues
    if oracle.known_optimum is not None:
        pb.x_star, pb.f_star = oracle.known_optimum
        pb.f_floor = pb.f_star
        pb.uniform_convexity = (2.0, float(ev[0]))
    pb.convex = bool(ev[0] >= 0)
    return pb


def diagonal_quadratic(n=4, lmin=1.0, lmax=10.0, x0=None):
    A = np.diag(np.linspace(lmin, lmax, n))
    pb = quadratic(A, np.zeros(n), x0=x0)
    pb.params = {"n": n, "lmin": lmin, "lmax": lmax}
    return pb


def logistic_l2(A, labels, mu, x0=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    oracle = LogisticOracle(A, labels, mu)
    x0 = np.zeros(A.shape[1]) if x0 is None else np.asarray(x0, dtype=float)
    pb = CompositeProblem("logistic_l2", oracle, SimplePart(), SpdMetric.identity(A.shape[1]), x0, convex=True)
    if mu > 0:
        pb.uniform_convexity = (2.0, float(mu))
    return pb


def lasso(A, b, lam, x0=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    oracle = QuadraticOracle(A.T @ A, -A.T @ b, 0.5 * b @ b)
    n = A.shape[1]
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    pb = CompositeProblem("lasso", oracle, SimplePart("l1", lam), SpdMetric.identity(n), x0, convex=True)
    pb.params = {"lam": lam}
    return pb


def random_lasso(m=20, n=10, lam=0.1, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n)) / math.sqrt(m)
    xt = np.zeros(n)
    xt[: max(1, n // 3)] = rng.standard_normal(max(1, n // 3))
    b = A @ xt + 0.01 * rng.standard_normal(m)
    pb = lasso(A, b, lam, x0=np.ones(n))
    pb.params = {"m": m, "n": n, "lam": lam, "seed": seed}
    return pb


def norm_power_kl(q, x0=0.5):
    """1-D |x|^q with f* = 0 at 0; KL exponent q/(q-1)."""
    pb = power_norm(q, center=np.zeros(1), x0=np.array([float(x0)]))
    pb.name = "norm_power_kl"
    pb.convex = True
    pb.kl = (q / (q - 1.0), None, None, None)
    return pb


def rosenbrock_2d(x0=(-1.2, 1.0)):
    pb = CompositeProblem("rosenbrock", RosenbrockOracle(), SimplePart(), SpdMetric.identity(2),
                          np.asarray(x0, dtype=float), f_star=0.0, x_star=np.array([1.0, 1.0]), f_floor=0.0)
    return pb


def double_well(n=2, x0=None):
    x0 = np.full(n, 1e-3) * np.arange(1, n + 1) if x0 is None else np.asarray(x0, dtype=float)
    pb = CompositeProblem("double_well", DoubleWellOracle(n), SimplePart(), SpdMetric.identity(n), x0,
                          f_star=0.0, x_star=np.ones(n), f_floor=0.0)
    pb.params = {"n": n}
    return pb


def nls_composition(F, jac, second, phi, simple=None, dim=None, separable=False, x0=None, name="nls", **consts):
    dim = dim or phi.dim
    comp = Composition(dim, F, jac, second, phi, separable, **consts)
    oracle = ComposedOracle(comp)
    x0 = np.ones(dim) if x0 is None else np.asarray(x0, dtype=float)
    return CompositeProblem(name, oracle, simple or SimplePart(), SpdMetric.identity(dim), x0, composition=comp)


def nls_1d(x0=2.0):
    """1-D least squares 1/2 (x^2 - 1)^2 written as phi(F(x)), F(x) = x^2 - 1, phi = z^2/2."""
    phi = QuadraticOracle(np.eye(1))
    pb = nls_composition(
        lambda x: x**2 - 1.0,
        lambda x: np.diag(2 * x),
        lambda x: np.full((1, 1, 1), 2.0),
        phi, dim=1, separable=True, x0=np.array([float(x0)]), name="nls1d", L1F=2.0, L1phi=1.0,
        curvature=lambda c, r: np.array([[max(6.0 * (abs(c[0]) + r) ** 2 - 2.0, 0.0)]]),
    )
    pb.f_star, pb.x_star, pb.f_floor = 0.0, np.ones(1), 0.0
    return pb


def _parse_params(text):
    out = {}
    if not text:
        return out
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ArgumentError(f"bad problem parameter {part!r}; expected key=value")
        k, v = part.split("=", 1)
        v = v.strip()
        try:
            val = int(v)
        except ValueError:
            try:
                val = _num(v)
            except ValueError:
                val = v
        out[k.strip()] = val
    return out


def _num(v):
    if "/" in v:
        a, b = v.split("/", 1)
        return float(a) / float(b)
    return float(v)


def _vec_param(v, n):
    if isinstance(v, str):
        return np.array([float(t) for t in v.split(";")])
    return np.full(n, float(v))


def _random_logistic(m=40, n=5, mu=0.1, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    y = np.sign(A @ rng.standard_normal(n) + 0.3 * rng.standard_normal(m))
    y[y == 0] = 1.0
    pb = logistic_l2(A, y, mu)
    pb.params = {"m": m, "n": n, "mu": mu, "seed": seed}
    return pb


def _power_norm_named(q=3.0, n=2, scale=1.0, center=0.0):
    return power_norm(q, center=_vec_param(center, n), scale=scale)


REGISTRY = {
    "logsumexp": lambda n=5: symmetric_log_sum_exp(int(n)),
    "logistic_lse": lambda a=1.0, x0=1.0: logistic_log_sum_exp(a, x0),
    "power_norm": _power_norm_named,
    "quadratic": lambda n=4, lmin=1.0, lmax=10.0: diagonal_quadratic(int(n), lmin, lmax),
    "logistic_l2": lambda m=40, n=5, mu=0.1, seed=0: _random_logistic(int(m), int(n), mu, int(seed)),
    "lasso": lambda m=20, n=10, lam=0.1, seed=0: random_lasso(int(m), int(n), lam, int(seed)),
    "norm_power_kl": lambda q=1.5, x0=0.5: norm_power_kl(q, x0),
    "rosenbrock": lambda: rosenbrock_2d(),
    "double_well": lambda n=2: double_well(int(n)),
    "nls1d": lambda x0=2.0: nls_1d(x0),
}


def make_problem(name, params=""):
    """Build a registered problem from its name and a 'k=v,k=v' string (or dict)."""
    if name not in REGISTRY:
        raise ArgumentError(f"unknown problem {name!r}; known: {', '.join(sorted(REGISTRY))}")
    kw = params if isinstance(params, dict) else _parse_params(params)
    try:
        pb = REGISTRY[name](**kw)
    except TypeError as exc:
        raise ArgumentError(f"bad parameters for problem {name!r}: {exc}") from exc
    pb.params = dict(pb.params, **kw)
    return pb
