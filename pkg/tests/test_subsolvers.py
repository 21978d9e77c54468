import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ghom import problems as P
from ghom import subsolvers as S
from ghom.errors import CapabilityError
from ghom.metric import SpdMetric, metric_norm
from ghom.surrogates import build


def lasso_1d(lam=1.0, a=1.0, c=2.0, x0=0.0):
    # f2 = a/2 (x - c)^2 so the prox-gradient point from x0 = 0 with M = a is z = c
    pb = P.lasso(np.array([[math.sqrt(a)]]), np.array([math.sqrt(a) * c]), lam, x0=np.array([x0]))
    return pb


def quad_problem(H, g, x0):
    pb = P.quadratic(np.atleast_2d(H), np.asarray(g, float) - np.atleast_2d(H) @ np.asarray(x0, float),
                     x0=np.asarray(x0, float))
    return pb


# ---- prox


def test_prox_soft_threshold_example():
    pb = lasso_1d()
    s = build("composite", pb, pb.x0, p=1, M=1.0, L_f=1.0)
    sol = S.prox_step(s)
    assert sol.point[0] == pytest.approx(1.0)
    grid = S.grid_oracle(s, ([-3.0], [3.0]), resolution=60001)
    assert abs(grid.point[0] - 1.0) <= 1e-4


def test_prox_shrinks_to_zero():
    pb = lasso_1d(lam=1.0, c=0.7)
    s = build("composite", pb, pb.x0, p=1, M=1.0, L_f=1.0)
    assert S.prox_step(s).point[0] == 0.0


def test_prox_zero_simple_is_gradient_step():
    D = np.diag([2.0, 0.5])
    pb = P.quadratic(np.diag([1.0, 0.25]), np.array([1.0, -1.0]), x0=np.array([0.3, 0.9]), metric=SpdMetric(D))
    s = build("taylor", pb, pb.x0, p=1, M=3.0, L_f=0.5)
    want = pb.x0 - np.linalg.solve(D, pb.smooth.gradient(pb.x0)) / 3.0
    assert np.allclose(S.prox_step(s).point, want)


def test_prox_requires_p1():
    pb = lasso_1d()
    with pytest.raises(CapabilityError):
        S.prox_step(build("composite", pb, pb.x0, p=2, M=1.0, L_f=0.0))


def test_prox_fixed_point():
    pb = lasso_1d(lam=0.3, c=2.0, x0=1.7)
    s = build("composite", pb, pb.x0, p=1, M=1.0, L_f=1.0)
    y = S.prox_step(s).point
    s2 = build("composite", pb, y, p=1, M=1.0, L_f=1.0)
    assert abs(S.prox_step(s2).point[0] - y[0]) <= 1e-10


def test_prox_nondiagonal_metric_routes_to_descent():
    A = np.array([[1.0, 0.2], [0.2, 0.5]])
    pb = P.lasso(A, np.array([1.0, 1.0]), 0.1, x0=np.ones(2))
    pb.metric = SpdMetric([[2.0, 0.3], [0.3, 1.0]])
    s = build("composite", pb, pb.x0, p=1, M=3.0, L_f=2.0)
    sol = S.prox_step(s)
    assert sol.method == "convex_descent" and sol.descent_gap >= -1e-10


# ---- cubic


def test_cubic_scalar_example():
    pb = quad_problem([[0.0]], [1.0], [0.0])
    s = build("taylor", pb, pb.x0, p=2, M=2.0, L_f=0.0)
    sol = S.cubic_step(s)
    assert sol.point[0] == pytest.approx(-1.0, abs=1e-12)
    grid = S.grid_oracle(s, ([-3.0], [3.0]), resolution=60001)
    assert abs(grid.point[0] + 1.0) <= 1e-4


def test_cubic_stationary_anchor():
    pb = quad_problem(np.diag([1.0, 3.0]), [0.0, 0.0], [0.5, -0.5])
    s = build("taylor", pb, pb.x0, p=2, M=1.0, L_f=0.0)
    assert np.allclose(S.cubic_step(s).point, pb.x0)


def test_cubic_newton_limit():
    H = np.array([[3.0, 1.0], [1.0, 2.0]])
    g = np.array([1.0, -2.0])
    s, lam, info = S.cubic_minimize(g, H, 1e-8)
    assert np.allclose(s, -np.linalg.solve(H, g), atol=1e-6)


def test_cubic_hard_case():
    H = np.diag([-1.0, 2.0])
    g = np.array([0.0, 1.0])
    M = 1.0
    s, lam, info = S.cubic_minimize(g, H, M)
    # global minimizer: lambda = M r / 2 >= 1 and (H + lambda I) s = -g
    r = np.linalg.norm(s)
    assert lam >= 1.0 - 1e-10 and M * r / 2 == pytest.approx(lam, rel=1e-8)
    assert np.allclose((H + lam * np.eye(2)) @ s, -g, atol=1e-8)


@given(st.integers(0, 10_000))
def test_cubic_global_vs_grid(seed):
    rng = np.random.default_rng(seed)
    n = 1 + seed % 2
    pb, A, b = __import__("ghom.suites", fromlist=["x"])._random_cubic_problem(rng, n)
    M = rng.uniform(0.5, 5.0)
    s = build("taylor", pb, pb.x0, p=2, M=M, L_f=0.0)
    sol = S.cubic_step(s)
    g = A @ pb.x0 + b
    r = 1.05 * (2 * np.abs(np.linalg.eigvalsh(A)).max() / M + math.sqrt(2 * np.linalg.norm(g) / M)) + 1e-3
    grid = S.grid_oracle(s, (pb.x0 - r, pb.x0 + r), resolution=201, zoom=4)
    assert s.model_value(sol.point) <= grid.value + 1e-6


def test_cubic_requires_smooth_p2():
    pb = P.random_lasso(n=4)
    with pytest.raises(CapabilityError):
        S.cubic_step(build("composite", pb, pb.x0, p=2, M=5.0, L_f=0.0))


# ---- descent methods


def test_convex_descent_stationary_anchor():
    pb = P.diagonal_quadratic(2, x0=np.zeros(2))
    s = build("proximal", pb, pb.x0, p=2, M=1.0)
    sol = S.convex_descent(s)
    assert np.array_equal(sol.point, pb.x0) and sol.residual == 0.0


def test_convex_descent_quartic_2d_vs_grid():
    pb = P.log_sum_exp(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0], [0.5, -1.0]]), x0=np.array([0.8, -0.6]))
    s = build("taylor", pb, pb.x0, p=3, M=12.0, L_f=4.0)
    sol = S.convex_descent(s)
    grid = S.grid_oracle(s, (pb.x0 - 2.5, pb.x0 + 2.5), resolution=400)
    assert abs(s.model_value(sol.point) - grid.value) <= 1e-3


def test_lasso_p2_composite_descends():
    pb = P.random_lasso(n=8)
    L, _ = pb.lipschitz_constant(2)
    s = build("composite", pb, pb.x0, p=2, M=1.0, L_f=L)
    sol = S.solve(s)
    assert sol.descent_gap > 0 and not sol.warning


def test_nonconvex_descent_rosenbrock():
    pb = P.rosenbrock_2d()
    L, _ = pb.lipschitz_constant(2)
    s = build("taylor", pb, pb.x0, p=2, M=1.1 * L, L_f=L)
    sol = S.nonconvex_descent(s)
    assert sol.descent_gap > 0


def test_nonconvex_descent_leaves_local_max():
    # model -x^2 + (M/6)|x|^3 at anchor 0 is a strict local max
    pb = P.quadratic(np.array([[-2.0]]), np.zeros(1), x0=np.zeros(1))
    pb.x0 = np.array([1e-3])
    s = build("taylor", pb, np.zeros(1), p=2, M=1.0, L_f=0.0)
    sol = S.nonconvex_descent(s)
    assert abs(sol.point[0]) > 0.1 and sol.descent_gap > 0


def test_nonconvex_descent_power_3_2_vs_grid():
    pb = P.norm_power_kl(1.5, x0=0.5)
    s = build("proximal", pb, pb.x0, p=2, M=6.0)
    sol = S.nonconvex_descent(s, theta=1e-6, max_inner=2000)
    grid = S.grid_oracle(s, ([-1.0], [1.0]), resolution=200001)
    assert abs(sol.point[0] - grid.point[0]) <= 1e-4


def test_scalar_root_path():
    pb = P.norm_power_kl(4.0 / 3.0, x0=1e-6)
    s = build("proximal", pb, pb.x0, p=2, M=6.0)
    sol = S.solve(s, theta=1e-8)
    assert sol.method == "scalar_root" and not sol.warning and sol.descent_gap >= 0


@given(st.integers(0, 10_000), st.sampled_from(["proximal", "taylor"]), st.integers(1, 2))
def test_solution_invariants(seed, kind, p):
    rng = np.random.default_rng(seed)
    pb = P.log_sum_exp(rng.standard_normal((6, 3)), x0=rng.standard_normal(3))
    L = pb.smooth.known_lipschitz[p]
    s = build(kind, pb, pb.x0, p=p, M=1.5 * L, L_f=L)
    sol = S.solve(s)
    assert sol.descent_gap >= -1e-10
    assert sol.residual <= S.THETA * metric_norm(pb.metric, sol.point - pb.x0) ** p + S.ABS_FLOOR


def test_unknown_solver():
    s = build("proximal", P.diagonal_quadratic(), np.ones(4), p=2, M=1.0)
    with pytest.raises(Exception, match="unknown subsolver"):
        S.solve(s, "magic")


# ---- grid oracle


def test_grid_vertex_within_half_cell():
    pb = quad_problem([[2.0]], [-1.2], [0.0])  # f(y) = y^2 - 1.2 y, vertex 0.6
    s = build("bounded", pb, pb.x0, p=1, H=np.array([[2.0]]), L_f=0.0)
    gm = S.grid_oracle(s, ([-1.0], [1.0]), resolution=101)
    assert abs(gm.point[0] - 0.6) <= 0.5 * 0.02 + 1e-12 and not gm.at_boundary
    pt, val = gm
    assert val == gm.value


def test_grid_boundary_flag_and_dim():
    pb = quad_problem([[2.0]], [-1.2], [0.0])
    s = build("bounded", pb, pb.x0, p=1, H=np.array([[2.0]]), L_f=0.0)
    gm = S.grid_oracle(s, ([-1.0], [0.2]), resolution=101)
    assert gm.at_boundary and gm.point[0] == pytest.approx(0.2)
    s3 = build("proximal", P.diagonal_quadratic(3), np.ones(3), p=2, M=1.0)
    with pytest.raises(CapabilityError):
        S.grid_oracle(s3, (np.zeros(3), np.ones(3)))
