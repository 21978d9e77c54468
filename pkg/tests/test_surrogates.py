import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ghom import problems as P
from ghom.errors import ArgumentError, CapabilityError, ConfigurationError
from ghom.metric import SpdMetric, metric_norm
from ghom.surrogates import (KINDS, axiom_check, build, build_bounded_derivative, build_composite, build_composition,
                             build_proximal, build_taylor, convexify_mp, hessian_psd_check)
from ghom import suites


def test_proximal_examples():
    pb = P.power_norm(3, n=2)
    x = pb.x0
    s = build_proximal(pb, x, 2, 6.0)
    assert s.error_value(x) == 0.0
    y = x + np.array([0.6, 0.8])
    assert s.error_value(y) == pytest.approx(1.0)
    rep = axiom_check(s)
    assert rep.passed() and rep.convexity_gap >= -1e-12


def test_taylor_on_quadratic_is_exact_plus_regularizer():
    pb = P.diagonal_quadratic(3)
    s = build_taylor(pb, pb.x0, 2, 1.5, tight=True)
    rng = np.random.default_rng(0)
    for y in pb.x0 + rng.standard_normal((10, 3)):
        r = metric_norm(pb.metric, y - pb.x0)
        assert s.error_value(y) == pytest.approx(1.5 / 6 * r**3, rel=1e-9, abs=1e-12)
    assert s.model_value(pb.x0) == pytest.approx(pb.value(pb.x0))
    assert s.lipschitz_h == 1.5


def test_taylor_lse_axioms():
    pb = P.symmetric_log_sum_exp(3)
    s = build_taylor(pb, pb.x0, 2, 2.0)
    assert axiom_check(s, samples=200).passed()


def test_taylor_below_lipschitz_rejected():
    pb = P.symmetric_log_sum_exp(2)
    with pytest.raises(ConfigurationError):
        build_taylor(pb, pb.x0, 2, 1.0)


def test_undersized_model_fails_majorization():
    pb = P.power_norm(3, n=1)
    s = build_taylor(pb, np.array([1.0]), 2, 3.0, L_f=3.0)  # true L_2 = 6
    rep = axiom_check(s, samples=200)
    assert rep.min_error < -1e-6 and not rep.passed()


def test_composite_lasso():
    pb = P.random_lasso(n=6)
    L, _ = pb.lipschitz_constant(1)
    s = build_composite(pb, pb.x0, 1, 1.1 * L)
    assert s.error_value(pb.x0) == 0.0
    assert axiom_check(s, samples=200).passed()
    from ghom.subsolvers import solve

    assert solve(s).method == "prox"


def test_bounded_derivative_examples():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    pb = P.quadratic(A)
    x = np.array([0.3, -0.2])
    exact = build_bounded_derivative(pb, x, 1, H=A, L_f=0.0)
    shifted = build_bounded_derivative(pb, x, 1, H=A + 0.7 * np.eye(2), L_f=0.0)
    for y in np.random.default_rng(1).standard_normal((8, 2)):
        assert exact.error_value(y) == pytest.approx(0.0, abs=1e-12)
        assert shifted.error_value(y) == pytest.approx(0.35 * np.sum((y - x) ** 2), rel=1e-10)
    assert shifted.error_value(x) == 0.0
    with pytest.raises(CapabilityError):
        build_bounded_derivative(pb, x, 3)
    with pytest.raises(ArgumentError):
        build_bounded_derivative(pb, x, 1, H=np.zeros((2, 2, 2)))


def affine_ls():
    A = np.array([[1.0, 2.0], [0.0, 1.0], [1.0, -1.0]])
    b = np.array([1.0, 0.0, 2.0])
    phi = P.QuadraticOracle(np.eye(3))
    return P.nls_composition(lambda x: A @ x - b, lambda x: A, lambda x: np.zeros((3, 2, 2)), phi, dim=2,
                             x0=np.array([0.5, 0.5]), L1F=0.0, L1phi=1.0)


def test_composition_inner_affine_is_quadratic():
    pb = affine_ls()
    s = build_composition(pb, pb.x0, 0.8, "linearize_inner")
    for y in np.random.default_rng(2).standard_normal((6, 2)):
        assert s.error_value(y) == pytest.approx(0.4 * np.sum((y - pb.x0) ** 2), rel=1e-9, abs=1e-12)


def test_composition_anchor_and_outer():
    pb = P.nls_1d()
    for variant in ("inner", "outer"):
        c = suites._axiom_cell(f"composition:{variant}", pb, 1)
        assert abs(c.error_value(pb.x0)) <= 1e-12
        assert abs(c.error_gradient(pb.x0)[0]) <= 1e-10
    with pytest.raises(CapabilityError):
        build_composition(P.diagonal_quadratic(), np.ones(4), 1.0)


def test_outer_needs_separable():
    pb = affine_ls()
    with pytest.raises(CapabilityError):
        build_composition(pb, pb.x0, 2.0, "linearize_outer")


def test_outer_grid_majorization_1d():
    # F(x) = x^2, phi(z) = z^2 (L1_phi = 2), anchor 1, grid over [-2, 2]
    phi = P.QuadraticOracle(2 * np.eye(1))
    pb = P.nls_composition(lambda x: x**2, lambda x: np.diag(2 * x), lambda x: np.full((1, 1, 1), 2.0), phi, dim=1,
                           separable=True, x0=np.array([1.0]), L1F=2.0, L1phi=2.0)
    s = build_composition(pb, pb.x0, 1.1 * 2.0, "linearize_outer")
    ys = np.linspace(-2, 2, 4001)[:, None]
    g = s.model_values(ys)
    f = np.array([pb.value(y) for y in ys])
    assert np.min(g - f) >= -1e-10


@pytest.mark.parametrize("L,p,want", [(1.0, 3, 3.0), (0.0, 2, 0.0), (0.0, 5, 0.0), (2.0, 4, 8.0), (5.0, 2, 5.0)])
def test_convexify(L, p, want):
    assert convexify_mp(L, p) == want


def test_convexified_model_psd():
    pb = P.log_sum_exp(np.random.default_rng(4).standard_normal((6, 3)), x0=np.full(3, 0.2))
    s = build_taylor(pb, pb.x0, 3, convexify_mp(4.0, 3), L_f=4.0)
    lo, scale = hessian_psd_check(s, samples=200)
    assert lo >= -1e-8 * scale


def test_unknown_kind():
    with pytest.raises(ArgumentError):
        build("magic", P.diagonal_quadratic(), np.ones(4))


@pytest.mark.parametrize("name", list(suites.axiom_problems()))
@pytest.mark.parametrize("kind", KINDS)
def test_axioms_every_builder(name, kind):
    pb = suites.axiom_problems()[name]
    for p in ((1, 2) if kind in ("proximal", "taylor", "composite") else (1,)):
        try:
            s = suites._axiom_cell(kind, pb, p)
        except CapabilityError:
            s = None
        if s is None:
            pytest.skip(f"{kind} does not apply to {name}")
        rep = axiom_check(s, pb, samples=200)
        assert rep.passed(), rep
        assert rep.formula_mismatch <= 1e-9
        if rep.min_margin_gap is not None:
            assert rep.min_margin_gap >= -1e-9


@given(st.integers(0, 1000), st.floats(0.1, 20), st.integers(1, 3))
def test_proximal_majorizes(seed, M, p):
    pb = P.log_sum_exp(np.random.default_rng(seed).standard_normal((5, 2)))
    s = build_proximal(pb, pb.x0, p, M)
    for y in np.random.default_rng(seed + 1).standard_normal((20, 2)) * 3:
        assert s.model_value(y) >= pb.value(y) - 1e-12


def test_convex_error_sign_condition():
    # at a stationary point y* of the proximal model, <-grad h(y*), x - y*> >= 0
    pb = P.power_norm(3, n=2)
    s = build_proximal(pb, pb.x0, 2, 6.0)
    from ghom.subsolvers import solve

    sol = solve(s, theta=1e-10)
    y = sol.point
    assert -s.error_gradient(y) @ (pb.x0 - y) >= -1e-8
