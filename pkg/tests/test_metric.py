import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from ghom import kernels
from ghom.errors import ArgumentError
from ghom.metric import (SpdMetric, SymTensor, dual_norm, metric_norm, sym_eig, tensor_contract,
                         tensor_norm_probe)
from ghom.problems import symmetric_log_sum_exp

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def random_spd(seed, n):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    return B @ B.T + n * np.eye(n)


# ---- SpdMetric


def test_rejects_asymmetric():
    with pytest.raises(ArgumentError):
        SpdMetric([[1.0, 0.5], [0.0, 1.0]])


def test_rejects_indefinite():
    with pytest.raises(ArgumentError):
        SpdMetric([[1.0, 0.0], [0.0, -1.0]])


def test_whiten_roundtrip():
    D = random_spd(0, 4)
    m = SpdMetric(D)
    g = np.arange(1.0, 5.0)
    assert np.allclose(m.lower @ m.whiten(g), g)
    assert np.allclose(m.solve(g), np.linalg.solve(D, g))
    assert not m.diagonal and SpdMetric.identity(3).diagonal


@pytest.mark.parametrize("D,v,want", [(np.eye(2), (3, 4), 5.0), (np.eye(3), (0, 0, 0), 0.0), ([[2.0]], (1,), math.sqrt(2))])
def test_metric_norm_examples(D, v, want):
    assert metric_norm(SpdMetric(D), np.array(v, float)) == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("D,g,want", [(np.eye(2), (3, 4), 5.0), (np.eye(2), (0, 0), 0.0), (np.diag([4.0, 1.0]), (2, 0), 1.0)])
def test_dual_norm_examples(D, g, want):
    assert dual_norm(SpdMetric(D), np.array(g, float)) == pytest.approx(want, rel=1e-12)


def test_norm_dimension_mismatch():
    m = SpdMetric.identity(2)
    with pytest.raises(ArgumentError):
        metric_norm(m, np.ones(3))
    with pytest.raises(ArgumentError):
        dual_norm(m, np.ones(1))


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_cauchy_schwarz(seed, n):
    m = SpdMetric(random_spd(seed, n))
    rng = np.random.default_rng(seed)
    for _ in range(25):
        g, v = rng.standard_normal(n), rng.standard_normal(n)
        assert abs(g @ v) <= dual_norm(m, g) * metric_norm(m, v) + 1e-9


@given(st.integers(0, 10_000), finite)
def test_norm_homogeneous(seed, alpha):
    m = SpdMetric(random_spd(seed, 3))
    v = np.random.default_rng(seed).standard_normal(3)
    assert metric_norm(m, alpha * v) == pytest.approx(abs(alpha) * metric_norm(m, v), rel=1e-12, abs=1e-300)


# ---- SymTensor and contraction


def test_symtensor_rejects_asymmetric_and_bad_shape():
    T = np.zeros((2, 2, 2))
    T[0, 0, 1] = 1.0
    with pytest.raises(ArgumentError):
        SymTensor(T)
    with pytest.raises(ArgumentError):
        SymTensor(np.zeros((2, 3)))


def test_contract_examples():
    h = np.array([1.0, -2.0, 3.0])
    assert tensor_contract(SymTensor(np.eye(3)), [h, h]) == pytest.approx(14.0)
    assert tensor_contract(SymTensor(np.full((1, 1, 1), 6.0)), [np.ones(1)] * 3) == pytest.approx(6.0)
    assert tensor_contract(SymTensor.zeros(3, 3), [h, h, h]) == 0.0
    part = tensor_contract(SymTensor(np.eye(3)), [h], keep=1)
    assert np.allclose(part.entries, h)


def test_contract_arity():
    with pytest.raises(ArgumentError):
        tensor_contract(SymTensor(np.eye(2)), [np.ones(2)] * 3)


@given(st.integers(0, 10_000), finite, finite)
def test_contract_multilinear(seed, a, b):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, 3, 3))
    from ghom.metric import symmetrize

    T = SymTensor(symmetrize(A))
    h1, h2, u = rng.standard_normal((3, 3))
    lhs = tensor_contract(T, [a * h1 + b * h2, u, u])
    rhs = a * tensor_contract(T, [h1, u, u]) + b * tensor_contract(T, [h2, u, u])
    scale = (abs(a) + abs(b) + 1) * np.abs(T.entries).sum() * (np.abs(h1).sum() + np.abs(h2).sum() + 1) * np.abs(u).sum() ** 2
    assert abs(lhs - rhs) <= 1e-10 * scale


# ---- eigensolver


@pytest.mark.parametrize("A,want", [(np.diag([2.0, 1.0]), [1, 2]), ([[0.0, 1.0], [1.0, 0.0]], [-1, 1]), (np.eye(4), [1, 1, 1, 1])])
def test_sym_eig_examples(A, want):
    assert np.allclose(sym_eig(np.array(A, float)).eigenvalues, want, atol=1e-12)


def test_sym_eig_rejects_asymmetric():
    with pytest.raises(ArgumentError):
        sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


@given(arrays(np.float64, (5, 5), elements=st.floats(-100, 100)))
def test_sym_eig_reconstructs(B):
    A = 0.5 * (B + B.T)
    r = sym_eig(A)
    rec = r.eigenvectors @ np.diag(r.eigenvalues) @ r.eigenvectors.T
    assert np.linalg.norm(rec - A) <= 1e-9 * max(np.linalg.norm(A), 1e-300) + 1e-300
    assert np.all(np.diff(r.eigenvalues) >= 0)


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernel not built")
@pytest.mark.parametrize("n", [1, 2, 7, 40])
def test_backends_agree(n):
    A = random_spd(n, n) - 2 * n * np.eye(n)
    w1, V1, s1 = kernels.python_jacobi_eigh(A)
    w2, V2, s2 = kernels.compiled_jacobi_eigh(A)
    assert np.allclose(np.sort(w1), np.sort(w2), rtol=1e-12, atol=1e-12 * np.abs(A).max())
    assert np.allclose(np.abs(V1.T @ V2).max(axis=0), 1.0)  # same eigenbasis up to sign
    assert s1 == s2


def test_python_backend_matches_numpy():
    A = random_spd(3, 12)
    w, V, _ = kernels.python_jacobi_eigh(A)
    assert np.allclose(np.sort(w), np.linalg.eigvalsh(A), rtol=1e-12)


# ---- norm probe


def test_norm_probe_examples():
    I = SymTensor(np.eye(3))
    assert tensor_norm_probe(I, SpdMetric.identity(3)) == pytest.approx(1.0)
    assert tensor_norm_probe(SymTensor.zeros(3, 3), SpdMetric.identity(3)) == 0.0


def test_norm_probe_lse_third_derivative():
    pb = symmetric_log_sum_exp(1)
    for x in (-2.0, 0.0, 0.3, 1.7):
        T = pb.smooth.derivative(np.array([x]), 3)
        assert tensor_norm_probe(T, pb.metric) <= 2.0 + 1e-12


def test_norm_probe_order2_exact():
    rng = np.random.default_rng(1)
    B = rng.standard_normal((4, 4))
    A = B + B.T
    D = random_spd(2, 4)
    m = SpdMetric(D)
    want = np.abs(np.linalg.eigvalsh(m.whiten_matrix(A))).max()
    assert tensor_norm_probe(SymTensor(A), m) == pytest.approx(want, rel=1e-10)
