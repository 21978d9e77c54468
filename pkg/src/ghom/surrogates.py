"""Higher-order surrogate builders, error functions and axiom checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ghom.errors import ArgumentError, CapabilityError, ConfigurationError
from ghom.metric import SymTensor, contract_array, dual_norm, metric_norm, sym_eig, tensor_norm_probe
from ghom.problems import CompositeProblem, PowerNormOracle, SmoothOracle, _ball_samples, lipschitz_probe

KINDS = ("proximal", "taylor", "composite", "bounded", "composition:inner", "composition:outer")


# ---------------------------------------------------------------- model oracles


class SumOracle(SmoothOracle):
    name = "sum"

    def __init__(self, *parts):
        self.parts = parts
        super().__init__(parts[0].dim, min(p.max_order for p in parts))

    def value(self, x):
        return float(sum(p.value(x) for p in self.parts))

    def values(self, X):
        return sum(p.values(X) for p in self.parts)

    def deriv(self, x, i):
        self._check_order(i)
        return sum(p.deriv(x, i) for p in self.parts)


class TaylorOracle(SmoothOracle):
    """Polynomial T_p^f(.; x); derivatives of every order (zero above p)."""

    name = "taylor"

    def __init__(self, f: SmoothOracle, x, p):
        if p > f.max_order:
            raise CapabilityError(f"Taylor order {p} needs derivatives the oracle lacks (max {f.max_order})")
        self.x = np.asarray(x, dtype=float).copy()
        self.p = p
        self.coef = [f.value(self.x)] + [f.deriv(self.x, j) for j in range(1, p + 1)]
        super().__init__(f.dim, 4)

    def value(self, y):
        s = np.asarray(y, dtype=float) - self.x
        return float(sum(contract_array(self.coef[j], s, j) / math.factorial(j) for j in range(self.p + 1)))

    def values(self, Y):
        S = np.asarray(Y, dtype=float) - self.x
        out = np.full(S.shape[0], float(self.coef[0]))
        for j in range(1, self.p + 1):
            t = self.coef[j]
            # contract the trailing axis against each row of S, j times
            acc = np.broadcast_to(t, (S.shape[0],) + t.shape)
            for _ in range(j):
                acc = np.einsum("k...i,ki->k...", acc, S)
            out = out + acc / math.factorial(j)
        return out

    def deriv(self, y, i):
        self._check_order(i)
        s = np.asarray(y, dtype=float) - self.x
        out = np.zeros((self.dim,) * i)
        for j in range(i, self.p + 1):
            out = out + contract_array(self.coef[j], s, j - i) / math.factorial(j - i)
        return out


class FormOracle(SmoothOracle):
    """y -> (1/k!) H[y - x]^k for a fixed symmetric order-k form H."""

    name = "form"

    def __init__(self, H, x):
        self.H = np.asarray(H, dtype=float)
        self.k = self.H.ndim
        self.x = np.asarray(x, dtype=float).copy()
        super().__init__(self.x.shape[0], 4)

    def value(self, y):
        s = np.asarray(y, dtype=float) - self.x
        return float(contract_array(self.H, s, self.k)) / math.factorial(self.k)

    def deriv(self, y, i):
        self._check_order(i)
        if i > self.k:
            return np.zeros((self.dim,) * i)
        s = np.asarray(y, dtype=float) - self.x
        return contract_array(self.H, s, self.k - i) / math.factorial(self.k - i)


class InnerLinearizedOracle(SmoothOracle):
    """y -> phi(F(x) + J(x)(y - x))."""

    name = "inner_linearized"

    def __init__(self, comp, x):
        self.comp = comp
        self.x = np.asarray(x, dtype=float).copy()
        self.Fx = np.asarray(comp.F(self.x), dtype=float)
        self.J = np.atleast_2d(comp.jac(self.x))
        super().__init__(comp.dim, comp.phi.max_order)

    def _z(self, y):
        return self.Fx + self.J @ (np.asarray(y, dtype=float) - self.x)

    def value(self, y):
        return self.comp.phi.value(self._z(y))

    def deriv(self, y, i):
        self._check_order(i)
        t = self.comp.phi.deriv(self._z(y), i)
        for _ in range(i):
            # pull every axis back through J
            t = np.tensordot(t, self.J, axes=([0], [0]))
        return t


class OuterLinearizedOracle(SmoothOracle):
    """y -> phi(F(x)) + <grad phi(F(x)), F(y) - F(x)> + M/2 |F(y) - F(x)|^2."""

    name = "outer_linearized"

    def __init__(self, comp, x, M):
        self.comp = comp
        self.x = np.asarray(x, dtype=float).copy()
        self.M = float(M)
        self.Fx = np.asarray(comp.F(self.x), dtype=float)
        self.phix = comp.phi.value(self.Fx)
        self.gphix = comp.phi.deriv(self.Fx, 1)
        super().__init__(comp.dim, 2)

    def value(self, y):
        d = np.asarray(self.comp.F(y), dtype=float) - self.Fx
        return float(self.phix + self.gphix @ d + 0.5 * self.M * d @ d)

    def deriv(self, y, i):
        self._check_order(i)
        d = np.asarray(self.comp.F(y), dtype=float) - self.Fx
        J = np.atleast_2d(self.comp.jac(y))
        v = self.gphix + self.M * d
        if i == 1:
            return J.T @ v
        H = self.M * J.T @ J + np.einsum("j,jab->ab", v, self.comp.second(y))
        return 0.5 * (H + H.T)


# ---------------------------------------------------------------- surrogate


@dataclass
class Surrogate:
    kind: str
    anchor: np.ndarray
    p: int
    problem: CompositeProblem
    smooth_model: SmoothOracle
    lipschitz_h: float
    convex_error: bool
    error_fn: Callable
    error_grad_fn: Callable
    M: float = 0.0
    margin: Optional[float] = None  # Delta with h >= Delta |y-x|^{p+1}
    constants: dict = field(default_factory=dict)

    @property
    def simple(self):
        return self.problem.simple

    @property
    def metric(self):
        return self.problem.metric

    def model_value(self, y) -> float:
        v1 = self.simple.value(y)
        if not math.isfinite(v1):
            return math.inf
        return self.smooth_model.value(y) + v1

    def model_values(self, Y):
        return self.smooth_model.values(Y) + self.simple.values(Y)

    def model_grad(self, y):
        return self.smooth_model.deriv(np.asarray(y, dtype=float), 1)

    def error_value(self, y) -> float:
        return float(self.error_fn(np.asarray(y, dtype=float)))

    def error_gradient(self, y):
        return np.asarray(self.error_grad_fn(np.asarray(y, dtype=float)), dtype=float)

    def error_value_direct(self, y) -> float:
        """g(y; x) - f(y) through the model, independent of the declared formula."""
        return self.model_value(y) - self.problem.value(y)


def _regularizer(pb, x, p, M):
    return PowerNormOracle(p + 1, x, pb.metric, scale=M / math.factorial(p + 1))


def _anchor(x):
    return np.asarray(x, dtype=float).copy()


def build_proximal(pb: CompositeProblem, x, p, M) -> Surrogate:
    if M <= 0:
        raise ConfigurationError("proximal surrogate needs M > 0")
    x = _anchor(x)
    reg = _regularizer(pb, x, p, M)
    model = SumOracle(pb.smooth, reg)
    return Surrogate("proximal", x, p, pb, model, float(M), True, reg.value, reg.gradient, M=M,
                     margin=M / math.factorial(p + 1), constants={"L_h": M})


def _taylor_like(kind, pb, x, p, M, tight, L_f):
    x = _anchor(x)
    if L_f is None:
        L_f, src = pb.lipschitz_constant(p)
    else:
        src = "given"
    if M < L_f * (1 - 1e-12):
        raise ConfigurationError(f"M_p = {M:g} is below L_{p} = {L_f:g} ({src}); the model would not majorize")
    f = pb.smooth
    T = TaylorOracle(f, x, p)
    reg = _regularizer(pb, x, p, M)
    model = SumOracle(T, reg)

    def err(y):
        return T.value(y) - f.value(y) + reg.value(y)

    def derr(y):
        return T.deriv(y, 1) - f.gradient(y) + reg.gradient(y)

    L_h = float(M) if tight else float(M + L_f)
    return Surrogate(kind, x, p, pb, model, L_h, False, err, derr, M=M,
                     margin=(M - L_f) / math.factorial(p + 1),
                     constants={"L_h": L_h, "L_f": L_f, "L_f_source": src, "tight": bool(tight)})


def build_taylor(pb: CompositeProblem, x, p, M, tight=False, L_f=None) -> Surrogate:
    return _taylor_like("taylor", pb, x, p, M, tight, L_f)


def build_composite(pb: CompositeProblem, x, p, M, tight=False, L_f=None) -> Surrogate:
    return _taylor_like("composite", pb, x, p, M, tight, L_f)


def build_bounded_derivative(pb: CompositeProblem, x, p, H=None, L_f=None, region_radius=None) -> Surrogate:
    """T_p f + (1/(p+1)!) H[y-x]^{p+1} with grad^{p+1} f <= H."""
    if p > 2:
        raise CapabilityError("bounded-derivative surrogate is supported for p in {1, 2}")
    x = _anchor(x)
    radius = pb.probe_radius if region_radius is None else region_radius
    if H is None:
        if p != 1:
            raise ConfigurationError("p = 2 bounded surrogate needs an explicit order-3 form")
        H = pb.smooth.curvature_bound(x, radius)
        if H is None:
            raise CapabilityError(f"problem {pb.name} has no curvature bound; pass H explicitly")
    Ht = H if isinstance(H, SymTensor) else SymTensor(H)
    if Ht.order != p + 1:
        raise ArgumentError(f"H must have order {p + 1}")
    if L_f is None:
        L_f, src = pb.lipschitz_constant(p, x, radius)
    else:
        src = "given"
    normH = tensor_norm_probe(Ht, pb.metric, samples=64, seed=0)
    f = pb.smooth
    T = TaylorOracle(f, x, p)
    form = FormOracle(Ht.entries, x)
    model = SumOracle(T, form)

    def err(y):
        return T.value(y) + form.value(y) - f.value(y)

    def derr(y):
        return T.deriv(y, 1) + form.deriv(y, 1) - f.gradient(y)

    L_h = float(normH + L_f)
    return Surrogate("bounded", x, p, pb, model, L_h, False, err, derr,
                     constants={"L_h": L_h, "norm_H": normH, "L_f": L_f, "L_f_source": src})


def _composition_constants(pb, x, radius, M=None, samples=200, seed=0):
    """Probe the maxima that enter the composition constants over the ball."""
    comp = pb.composition
    rng = np.random.default_rng(seed)
    Y = np.vstack([x, _ball_samples(rng, x, radius, pb.metric, samples)])
    Fx = np.asarray(comp.F(x), dtype=float)
    Jx = np.atleast_2d(comp.jac(x))
    max_gphi = max_J = max_F = max_F2 = max_gphi_lin = 0.0
    for y in Y:
        Fy = np.asarray(comp.F(y), dtype=float)
        max_F = max(max_F, float(np.linalg.norm(Fy)))
        max_J = max(max_J, float(np.linalg.norm(np.atleast_2d(comp.jac(y)), 2)))
        max_gphi = max(max_gphi, float(np.linalg.norm(comp.phi.deriv(Fy, 1))))
        # Frobenius norm of the second-derivative array bounds its operator norm
        max_F2 = max(max_F2, float(np.linalg.norm(comp.second(y))))
        zl = Fx + Jx @ (y - x)
        for t in np.linspace(0.0, 1.0, 5):
            # phi is evaluated between F(y) and the linearization
            max_gphi_lin = max(max_gphi_lin, float(np.linalg.norm(comp.phi.deriv(t * Fy + (1 - t) * zl, 1))))
    L1F = comp.L1F if comp.L1F is not None else max_F2
    L1phi = comp.L1phi if comp.L1phi is not None else comp.phi.known_lipschitz.get(1)
    if L1phi is None:
        L1phi = lipschitz_probe(comp.phi, 1, (Fx, max(max_F, 1.0)), samples=samples, seed=seed)
    L0phi = comp.L0phi if comp.L0phi is not None else max(max_gphi_lin, max_gphi)
    return {"L1F": float(L1F), "L0phi": float(L0phi), "L1phi": float(L1phi), "max_grad_phi": max_gphi,
            "max_jac": max_J, "max_F": max_F, "source": "probed"}


def build_composition(pb: CompositeProblem, x, M, variant="inner", region_radius=None) -> Surrogate:
    if pb.composition is None:
        raise CapabilityError(f"problem {pb.name} has no composition structure")
    variant = {"linearize_inner": "inner", "linearize_outer": "outer"}.get(variant, variant)
    if variant not in ("inner", "outer"):
        raise ArgumentError(f"unknown composition variant {variant!r}")
    comp = pb.composition
    x = _anchor(x)
    radius = pb.probe_radius if region_radius is None else region_radius
    c = _composition_constants(pb, x, radius)
    f = pb.smooth
    if variant == "inner":
        need = c["L0phi"] * c["L1F"]
        if M < need * (1 - 1e-12):
            raise ConfigurationError(f"inner composition surrogate needs M >= L0_phi L1_F = {need:g}")
        lin = InnerLinearizedOracle(comp, x)
        reg = _regularizer(pb, x, 1, M)
        model = SumOracle(lin, reg)
        L_h = M + c["L1F"] * c["max_grad_phi"] + 2 * c["L1phi"] * c["max_jac"] ** 2

        def err(y):
            return lin.value(y) + reg.value(y) - f.value(y)

        def derr(y):
            return lin.deriv(y, 1) + reg.gradient(y) - f.gradient(y)
    else:
        if not comp.separable:
            raise CapabilityError("outer linearization needs a separable inner map F")
        if M < c["L1phi"] * (1 - 1e-12):
            raise ConfigurationError(f"outer composition surrogate needs M >= L1_phi = {c['L1phi']:g}")
        model = OuterLinearizedOracle(comp, x, M)
        L_h = 2 * c["L1F"] * c["max_grad_phi"] + 2 * M * c["L1F"] * c["max_F"] + (M + c["L1phi"]) * c["max_jac"] ** 2

        def err(y):
            return model.value(y) - f.value(y)

        def derr(y):
            return model.deriv(y, 1) - f.gradient(y)

    c.update(L_h=float(L_h), variant=variant)
    return Surrogate(f"composition:{variant}", x, 1, pb, model, float(L_h), False, err, derr, M=M, constants=c)


def build(kind, pb: CompositeProblem, x, p=1, M=1.0, tight=False, **kw) -> Surrogate:
    """Dispatch by kind name (proximal | taylor | composite | bounded | composition:{inner|outer})."""
    if kind == "proximal":
        return build_proximal(pb, x, p, M)
    if kind == "taylor":
        return build_taylor(pb, x, p, M, tight, kw.get("L_f"))
    if kind == "composite":
        return build_composite(pb, x, p, M, tight, kw.get("L_f"))
    if kind == "bounded":
        return build_bounded_derivative(pb, x, p, kw.get("H"), kw.get("L_f"))
    if kind.startswith("composition"):
        variant = kind.split(":", 1)[1] if ":" in kind else kw.get("variant", "inner")
        return build_composition(pb, x, M, variant)
    raise ArgumentError(f"unknown surrogate kind {kind!r}; known: {', '.join(KINDS)}")


def convexify_mp(L_p, p) -> float:
    """Smallest M making the regularized Taylor model of a convex f convex."""
    if L_p < 0 or p < 1:
        raise ArgumentError("need L_p >= 0 and p >= 1")
    return float(p * L_p) if p > 2 else float(L_p)


# ---------------------------------------------------------------- axiom checks


@dataclass
class AxiomReport:
    min_error: float
    anchor_error: float
    anchor_grad: float
    grad_bound_violation: float
    convexity_gap: Optional[float]
    formula_mismatch: float
    samples: int
    min_margin_gap: Optional[float] = None  # min of h - Delta r^{p+1}

    def passed(self, maj_tol=1e-10, anchor_tol=1e-10, grad_tol=1e-8, conv_tol=1e-8):
        ok = self.min_error >= -maj_tol and self.anchor_error <= anchor_tol and self.anchor_grad <= anchor_tol
        ok = ok and self.grad_bound_violation <= grad_tol
        if self.convexity_gap is not None:
            ok = ok and self.convexity_gap >= -conv_tol
        return bool(ok)


def axiom_check(s: Surrogate, pb: CompositeProblem = None, region=None, samples=200, seed=0) -> AxiomReport:
    """Sample the surrogate axioms; violations are reported, not raised."""
    pb = pb or s.problem
    center, radius = region if region is not None else (s.anchor, pb.probe_radius)
    rng = np.random.default_rng(seed)
    Y = _ball_samples(rng, np.asarray(center, dtype=float), radius, pb.metric, samples)
    Y = np.array([y for y in Y if math.isfinite(pb.simple.value(y))])
    x = s.anchor
    fact = math.factorial(s.p)
    min_err = math.inf
    viol = -math.inf
    mismatch = 0.0
    margin_gap = math.inf
    for y in Y:
        h = s.error_value(y)
        hd = s.error_value_direct(y)
        min_err = min(min_err, h)
        mismatch = max(mismatch, abs(h - hd) / max(1.0, abs(s.model_value(y)), abs(pb.value(y))))
        r = metric_norm(pb.metric, y - x)
        viol = max(viol, dual_norm(pb.metric, s.error_gradient(y)) - s.lipschitz_h / fact * r**s.p)
        if s.margin is not None:
            margin_gap = min(margin_gap, h - s.margin * r ** (s.p + 1))
    conv = None
    if s.convex_error and len(Y) > 1:
        conv = math.inf
        Z = Y[rng.permutation(len(Y))]
        for y, z in zip(Y, Z):
            conv = min(conv, s.error_value(z) - s.error_value(y) - s.error_gradient(y) @ (z - y))
    return AxiomReport(
        min_error=float(min_err),
        anchor_error=abs(s.error_value(x)),
        anchor_grad=dual_norm(pb.metric, s.error_gradient(x)),
        grad_bound_violation=float(max(viol, 0.0)),
        convexity_gap=None if conv is None else float(conv),
        formula_mismatch=float(mismatch),
        samples=len(Y),
        min_margin_gap=None if s.margin is None else float(margin_gap),
    )


def hessian_psd_check(s: Surrogate, region=None, samples=200, seed=0):
    """min over sampled y of lambda_min of the whitened model Hessian, and its scale."""
    pb = s.problem
    center, radius = region if region is not None else (s.anchor, pb.probe_radius)
    rng = np.random.default_rng(seed)
    Y = _ball_samples(rng, np.asarray(center, dtype=float), radius, pb.metric, samples)
    lo, scale = math.inf, 0.0
    for y in Y:
        ev = sym_eig(pb.metric.whiten_matrix(s.smooth_model.hessian(y))).eigenvalues
        lo = min(lo, float(ev[0]))
        scale = max(scale, float(np.max(np.abs(ev))))
    return lo, scale
