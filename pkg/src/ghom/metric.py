"""Norm pair induced by an SPD operator, dense symmetric tensors, eigensolver."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from ghom import kernels
from ghom.errors import ArgumentError

SYM_TOL = 1e-12


def _as_vec(v, dim):
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != dim:
        raise ArgumentError(f"expected vector of length {dim}, got {v.shape[0]}")
    return v


class SpdMetric:
    """Self-adjoint positive-definite D with primal norm <Dx,x>^1/2."""

    def __init__(self, D):
        D = np.atleast_2d(np.asarray(D, dtype=float))
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise ArgumentError("D must be square")
        scale = max(np.max(np.abs(D)), 1e-300)
        if np.max(np.abs(D - D.T)) > SYM_TOL * scale:
            raise ArgumentError("D is not symmetric")
        try:
            self._cho = cho_factor(D, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ArgumentError("D is not positive definite") from exc
        self.D = D.copy()
        self.D.setflags(write=False)
        self.dim = D.shape[0]
        self.lower = np.tril(self._cho[0])
        self.diagonal = bool(np.all(D == np.diag(np.diag(D))))
        self._lam_max = None

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n))

    def apply(self, v):
        return self.D @ v

    def solve(self, g):
        """D^{-1} g."""
        return cho_solve(self._cho, g)

    def whiten(self, g):
        # L^{-1} g, so that ||g||_* = |L^{-1} g|_2
        return solve_triangular(self.lower, g, lower=True)

    def unwhiten(self, y):
        # L^{-T} y maps whitened primal coordinates back
        return solve_triangular(self.lower, y, lower=True, trans="T")

    def whiten_matrix(self, H):
        Li_H = solve_triangular(self.lower, H, lower=True)
        W = solve_triangular(self.lower, Li_H.T, lower=True)
        return 0.5 * (W + W.T)

    @property
    def lambda_max(self):
        if self._lam_max is None:
            self._lam_max = float(sym_eig(self.D).eigenvalues[-1])
        return self._lam_max

    def __repr__(self):
        return f"SpdMetric(dim={self.dim})"


def _scaled(v):
    # factor out max |v_i| so the quadratic forms neither underflow nor overflow
    s = float(np.max(np.abs(v))) if v.size else 0.0
    return (s, v / s) if s > 0 and math.isfinite(s) else (1.0, v)


def metric_norm(m: SpdMetric, v) -> float:
    s, u = _scaled(_as_vec(v, m.dim))
    return s * float(np.sqrt(max(u @ (m.D @ u), 0.0)))


def dual_norm(m: SpdMetric, g) -> float:
    s, u = _scaled(_as_vec(g, m.dim))
    w = m.whiten(u)
    return s * float(np.sqrt(w @ w))


class SymTensor:
    """Dense symmetric multilinear form of order 1..4."""

    __slots__ = ("entries", "order", "dim")

    def __init__(self, entries, check=True):
        a = np.asarray(entries, dtype=float)
        if a.ndim < 1 or a.ndim > 4:
            raise ArgumentError("tensor order must be in 1..4")
        if len(set(a.shape)) != 1:
            raise ArgumentError("tensor must be hypercubic")
        if check and a.ndim > 1:
            scale = max(float(np.max(np.abs(a))) if a.size else 0.0, 1e-300)
            # adjacent transpositions generate the full symmetric group
            for i in range(a.ndim - 1):
                if np.max(np.abs(a - np.swapaxes(a, i, i + 1))) > SYM_TOL * scale:
                    raise ArgumentError("tensor entries are not symmetric")
        a = a.copy()
        a.setflags(write=False)
        self.entries = a
        self.order = a.ndim
        self.dim = a.shape[0]

    @classmethod
    def zeros(cls, dim, order):
        return cls(np.zeros((dim,) * order), check=False)

    def __sub__(self, other):
        return SymTensor(self.entries - other.entries, check=False)

    def __add__(self, other):
        return SymTensor(self.entries + other.entries, check=False)

    def __repr__(self):
        return f"SymTensor(order={self.order}, dim={self.dim})"


def symmetrize(a):
    """Average over all index permutations."""
    a = np.asarray(a, dtype=float)
    if a.ndim <= 1:
        return a.copy()
    perms = list(permutations(range(a.ndim)))
    out = np.zeros_like(a)
    for pr in perms:
        out += np.transpose(a, pr)
    return out / len(perms)


def contract_array(a, h, times):
    """Contract the last `times` axes of a with the same vector h."""
    for _ in range(times):
        a = a @ h
    return a


def tensor_contract(T: SymTensor, dirs, keep=0):
    if keep < 0 or len(dirs) + keep != T.order:
        raise ArgumentError(f"need order-{T.order} arity, got {len(dirs)} dirs + keep={keep}")
    res = T.entries
    for h in dirs:
        res = res @ _as_vec(h, T.dim)
    if keep == 0:
        return float(res)
    # remaining axes of a symmetric form stay symmetric
    return SymTensor(res, check=False)


@dataclass(frozen=True)
class EigResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0


def sym_eig(A) -> EigResult:
    """Full symmetric spectrum by cyclic Jacobi, ascending."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ArgumentError("matrix must be square")
    scale = max(float(np.max(np.abs(A))) if A.size else 0.0, 1e-300)
    if np.max(np.abs(A - A.T)) > 1e-10 * scale:
        raise ArgumentError("matrix is not symmetric")
    w, V, sweeps = kernels.jacobi_eigh(0.5 * (A + A.T))
    order = np.argsort(w, kind="stable")
    return EigResult(w[order], V[:, order], sweeps)


def _whiten_tensor(T: SymTensor, m: SpdMetric):
    # T̂[u,...] = T[L^{-T}u, ...]
    Li = m.unwhiten(np.eye(m.dim))
    a = T.entries
    for ax in range(T.order):
        a = np.moveaxis(np.tensordot(a, Li, axes=([ax], [0])), -1, ax)
    return a


def tensor_norm_probe(T: SymTensor, m: SpdMetric, samples=64, seed=0) -> float:
    """Lower bound on max_{||h||=1} |T[h]^k|; exact for k <= 2."""
    if samples < 1:
        raise ArgumentError("samples must be >= 1")
    if T.dim != m.dim:
        raise ArgumentError("tensor and metric dimensions differ")
    k = T.order
    if k == 1:
        return dual_norm(m, T.entries)
    a = _whiten_tensor(T, m)
    if k == 2:
        ev = sym_eig(a).eigenvalues
        return float(max(abs(ev[0]), abs(ev[-1])))
    if not np.any(a):
        return 0.0
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((samples, m.dim))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    vals = np.array([abs(float(contract_array(a, u, k))) for u in U])
    best = float(vals.max())
    # power refinement from the few best starts
    for idx in np.argsort(vals)[::-1][: min(8, samples)]:
        u = U[idx].copy()
        for _ in range(50):
            g = contract_array(a, u, k - 1)
            if float(g @ u) < 0:
                g = -g
            ng = np.linalg.norm(g)
            if ng == 0:
                break
            u_new = g / ng
            val = abs(float(contract_array(a, u_new, k)))
            best = max(best, val)
            if np.linalg.norm(u_new - u) < 1e-12:
                break
            u = u_new
    return best
