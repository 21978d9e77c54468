import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ghom import problems as P
from ghom.driver import GhomConfig, adapt_mp, ghom_run, initial_M, reference_fstar, stationarity_bound
from ghom.errors import ConfigurationError, DomainError
from ghom.metric import metric_norm
from ghom.subsolvers import SubSolution, solve
from ghom.surrogates import build


def test_config_validation():
    with pytest.raises(ConfigurationError):
        GhomConfig(p=0)
    with pytest.raises(ConfigurationError):
        GhomConfig(M=-1.0)
    with pytest.raises(ConfigurationError):
        GhomConfig(tol_stationarity=0.0)
    with pytest.raises(ConfigurationError):
        GhomConfig(max_iters=0)
    assert GhomConfig(M="3.5").M == 3.5


def test_power_norm_converges_monotonically():
    pb = P.power_norm(3, center=np.array([0.5, -0.25]))
    assert metric_norm(pb.metric, pb.x0 - pb.x_star) == pytest.approx(1.0)
    tr = ghom_run(pb, GhomConfig(p=2, M=7.0, max_iters=50))
    f = tr.f
    assert np.all(np.diff(f) <= 1e-15)
    assert f[-1] <= 1e-8 and len(tr.records) <= 51


@pytest.mark.parametrize("p,surrogate", [(1, "taylor"), (2, "taylor"), (2, "proximal"), (1, "composite")])
def test_symmetric_lse_decreases_to_optimum(p, surrogate):
    pb = P.symmetric_log_sum_exp(1)
    tr = ghom_run(pb, GhomConfig(p=p, M=2.5 if surrogate != "proximal" else 1.0, surrogate=surrogate, max_iters=400))
    assert np.all(np.diff(tr.f) <= 1e-14)
    assert tr.f[-1] - math.log(2) <= 1e-8


def test_infeasible_start():
    pb = P.CompositeProblem("box", P.QuadraticOracle(np.eye(1)), P.SimplePart("box", lo=[-1.0], hi=[1.0]),
                            P.SpdMetric.identity(1), np.array([2.0]))
    with pytest.raises(DomainError):
        ghom_run(pb, GhomConfig())


def test_descent_failure_with_undersized_M():
    pb = P.rosenbrock_2d()
    tr = ghom_run(pb, GhomConfig(p=2, M=1.0, L_f=1.0))
    assert tr.termination == "descent_failure" and "failure" in tr.meta


def test_auto_M_recovers():
    pb = P.rosenbrock_2d()
    tr = ghom_run(pb, GhomConfig(p=2, M="auto", max_iters=1000, tol_stationarity=1e-8))
    assert tr.termination == "stationarity"
    assert tr.meta["M_final"] >= tr.meta["M0"]
    assert np.all(np.diff(tr.f) <= 1e-12)


def test_adapt_mp():
    cfg = GhomConfig(M="auto")
    pb = P.symmetric_log_sum_exp(2)
    first = adapt_mp(cfg, 0, pb=pb)
    assert first == pytest.approx(initial_M(pb, cfg))
    assert adapt_mp(cfg, 3, initial=0.7) == pytest.approx(5.6)
    with pytest.raises(ConfigurationError):
        adapt_mp(cfg, 31, initial=1.0)
    with pytest.raises(ConfigurationError):
        adapt_mp(GhomConfig(M=1.0), 0, initial=1.0)


def test_stationarity_bound_examples():
    pb = P.power_norm(3, n=2)
    s = build("proximal", pb, pb.x0, p=2, M=6.0)
    sol = solve(s, theta=1e-10)
    r = metric_norm(pb.metric, sol.point - pb.x0)
    assert stationarity_bound(s, sol) == pytest.approx(3.0 * r**2 + sol.residual, rel=1e-12)
    # anchor is the unconstrained minimizer
    pb0 = P.diagonal_quadratic(2, x0=np.zeros(2))
    s0 = build("taylor", pb0, pb0.x0, p=2, M=1.0, L_f=0.0)
    sol0 = SubSolution(pb0.x0.copy(), 0.0, 0.0, 0)
    assert stationarity_bound(s0, sol0) == 0.0


def _check_trace_invariants(pb, tr, exact=False):
    cfg = tr.config
    fact = math.factorial(cfg.p)
    L_h = tr.meta["L_h"]
    tot_h = 0.0
    for prev, cur in zip(tr.records, tr.records[1:]):
        assert cur.f_value <= prev.f_value + 1e-12 * max(1, abs(prev.f_value))
        assert cur.h_value >= -1e-10
        assert cur.h_value <= prev.f_value - cur.f_value + 1e-10
        assert cur.descent_gap >= -1e-10
        r = cur.step_norm
        assert cur.stationarity_bound <= (L_h / fact) * r**cfg.p + cfg.theta * r**cfg.p + 1e-8
        tot_h += cur.h_value
    assert tot_h <= tr.records[0].f_value - pb.f_floor + 1e-10


@pytest.mark.parametrize("case", ["lse_taylor2", "lse_prox", "pn_taylor1", "quad", "rosen", "lasso", "nls_inner"])
def test_trace_invariants(case):
    if case == "lse_taylor2":
        pb, cfg = P.symmetric_log_sum_exp(3), GhomConfig(p=2, M=2.2)
    elif case == "lse_prox":
        pb, cfg = P.symmetric_log_sum_exp(3), GhomConfig(p=2, M=3.0, surrogate="proximal", max_iters=60)
    elif case == "pn_taylor1":
        pb, cfg = P.power_norm(3, n=2), GhomConfig(p=1, M=7.0, L_f=6.0, max_iters=80)
    elif case == "quad":
        pb, cfg = P.diagonal_quadratic(), GhomConfig(p=2, M=1.0, tight=True)
    elif case == "rosen":
        pb, cfg = P.rosenbrock_2d(), GhomConfig(p=2, M=10500.0, L_f=7000.0, max_iters=400)
    elif case == "lasso":
        pb = P.random_lasso()
        L, _ = pb.lipschitz_constant(1)
        cfg = GhomConfig(p=1, M=1.1 * L, L_f=L, surrogate="composite", max_iters=200)
        pb.f_floor = 0.0
    else:
        pb = P.nls_1d()
        cfg = GhomConfig(p=1, M="auto", surrogate="composition:inner", max_iters=100)
    tr = ghom_run(pb, cfg)
    assert tr.termination != "descent_failure"
    _check_trace_invariants(pb, tr)


def test_convex_error_sign_at_iterates():
    pb = P.power_norm(3, n=2)
    tr = ghom_run(pb, GhomConfig(p=2, M=6.0, surrogate="proximal", theta=1e-10, max_iters=30))
    X = tr.iterates()
    for xk, xn in zip(X, X[1:]):
        s = build("proximal", pb, xk, p=2, M=6.0)
        assert -s.error_gradient(xn) @ (xk - xn) >= -1e-8


@given(st.integers(0, 500))
def test_deterministic(seed):
    pb = P.make_problem("logistic_l2", f"seed={seed % 5}")
    cfg = GhomConfig(p=2, M="auto", seed=seed, max_iters=15)
    a, b = ghom_run(pb, cfg), ghom_run(P.make_problem("logistic_l2", f"seed={seed % 5}"), cfg)
    assert [r.f_value for r in a.records] == [r.f_value for r in b.records]
    assert all(np.array_equal(r.x, s.x) for r, s in zip(a.records, b.records))


def test_record_zero_and_termination():
    pb = P.diagonal_quadratic(2, x0=np.zeros(2))
    tr = ghom_run(pb, GhomConfig())
    assert tr.termination == "stationarity" and len(tr.records) == 1
    assert tr.records[0].k == 0 and tr.records[0].step_norm == 0.0


def test_max_iters_and_no_iterates():
    pb = P.symmetric_log_sum_exp(2)
    tr = ghom_run(pb, GhomConfig(p=1, M=1.1, max_iters=5, record_iterates=False))
    assert tr.termination == "max_iters" and len(tr.records) == 6 and tr.iterates() is None


def test_reference_fstar_caches():
    pb = P.make_problem("logistic_l2")
    assert pb.f_star is None
    f1 = reference_fstar(pb)
    assert pb.f_star == f1 and pb.stationarity(pb.x_star) <= 1e-10
    tr = ghom_run(pb, GhomConfig(p=1, M="auto", max_iters=300))
    assert tr.f[-1] >= f1 - 1e-10
