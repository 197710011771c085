import io

import numpy as np
import pytest

from bregman_learn.abpd import AbpdConfig, SolverError, run_abpd
from bregman_learn.geometry import BregmanGeometry, RelativeConstants
from bregman_learn.problems import (AffineFunction, Box, ConstrainedProblem,
                                    QuadraticFunction)
from bregman_learn.solvers.linear import LinearSubproblemSolver
from bregman_learn.verify import small_qp_oracle


def toy_qp_problem(mu=2.0):
    # min x1^2 + x2^2 s.t. x1 + x2 >= 1 on [0,1]^2; optimum (0.5, 0.5)
    geom = BregmanGeometry("identity", dim=2)
    obj = QuadraticFunction(2 * np.eye(2))
    con = AffineFunction(np.array([-1.0, -1.0]), 1.0)
    box = Box(lo=np.zeros(2), hi=np.ones(2))
    return ConstrainedProblem(obj, [con], geom,
                              RelativeConstants(mu=mu, l_g=np.sqrt(2.0)),
                              box=box)


def run_toy(mu, K, **kw):
    prob = toy_qp_problem(mu)
    cfg = AbpdConfig.for_problem(prob, max_iters=K, record_values=False, **kw)
    return prob, run_abpd(prob, LinearSubproblemSolver(prob), cfg,
                          x0=np.zeros(2))


def test_unconstrained_proximal_point_converges():
    # m = 0, strongly convex quadratic: inexact Bregman proximal point with
    # near-exact inner solves
    xstar = np.array([0.7, -0.3, 1.2])
    geom = BregmanGeometry("identity", dim=3)
    obj = QuadraticFunction(np.eye(3), -xstar)
    prob = ConstrainedProblem(obj, [], geom, RelativeConstants(mu=0.5, l_g=1.0))
    cfg = AbpdConfig(tau0=4.0, sigma0=0.25, mu=0.5, max_iters=50, l_g=1.0,
                     record_values=False,
                     schedule=lambda k, tau0, mu: (1e-14, 1e-14))
    res = run_abpd(prob, LinearSubproblemSolver(prob), cfg, x0=np.zeros(3))
    assert np.linalg.norm(res.x_last - xstar) <= 1e-6


def test_toy_qp_reaches_tolerance():
    prob, res = run_toy(mu=2.0, K=2000)
    fstar = 0.5
    assert prob.objective_value(res.x_avg) - fstar <= 1e-4
    assert np.linalg.norm(np.maximum(prob.constraint_values(res.x_avg), 0)) <= 1e-4
    assert res.y_avg[0] == pytest.approx(1.0, abs=1e-2)


def test_inactive_constraints_keep_dual_zero():
    geom = BregmanGeometry("identity", dim=2)
    obj = QuadraticFunction(np.eye(2), np.array([0.5, 0.5]))
    con = AffineFunction(np.array([1.0, 1.0]), -1e6)  # hugely slack
    prob = ConstrainedProblem(obj, [con], geom,
                              RelativeConstants(mu=1.0, l_g=np.sqrt(2)))
    cfg = AbpdConfig.for_problem(prob, max_iters=60, record_iterates=True,
                                 record_values=False)
    res = run_abpd(prob, LinearSubproblemSolver(prob), cfg, x0=np.zeros(2))
    assert all(y[0] == 0.0 for y in res.dual_iterates)
    # run equals unconstrained training
    assert np.linalg.norm(res.x_last - (-np.array([0.5, 0.5]))) <= 1e-5


def test_ergodic_average_identity():
    prob = toy_qp_problem(mu=0.0)
    cfg = AbpdConfig.for_problem(prob, max_iters=80, record_iterates=True,
                                 record_values=False)
    res = run_abpd(prob, LinearSubproblemSolver(prob), cfg, x0=np.zeros(2))
    trace = np.array(res.trace)
    t = trace[:, 0]
    xs = np.array(res.iterates)
    recomputed = (t[:, None] * xs).sum(axis=0) / t.sum()
    assert res.x_avg == pytest.approx(recomputed, abs=1e-12)
    ys = np.array(res.dual_iterates)
    recomputed_y = (t[:, None] * ys).sum(axis=0) / t.sum()
    assert res.y_avg == pytest.approx(recomputed_y, abs=1e-12)


def test_mu_zero_rate_is_one_over_k():
    prob = toy_qp_problem(mu=0.0)
    residuals = {}
    for K in (100, 200, 400, 800):
        _, res = run_toy(mu=0.0, K=K)
        fgap = prob.objective_value(res.x_avg) - 0.5
        viol = float(np.maximum(prob.constraint_values(res.x_avg), 0).max())
        residuals[K] = max(fgap, viol, 0.0)
    C = residuals[100] * 100
    for K in (200, 400, 800):
        assert residuals[K] * K <= 1.5 * C


def test_mu_positive_rate_accelerates():
    prob = toy_qp_problem(mu=2.0)

    def residual(K):
        _, res = run_toy(mu=2.0, K=K)
        fgap = prob.objective_value(res.x_avg) - 0.5
        viol = float(np.maximum(prob.constraint_values(res.x_avg), 0).max())
        return max(fgap, viol, 0.0)

    r1, r2 = residual(200), residual(400)
    assert r2 <= r1 / 3.0


def test_x0_outside_box_rejected():
    prob = toy_qp_problem()
    cfg = AbpdConfig.for_problem(prob, max_iters=5)
    with pytest.raises(ValueError, match="box"):
        run_abpd(prob, LinearSubproblemSolver(prob), cfg, x0=np.array([2.0, 2.0]))


def test_negative_y0_rejected():
    prob = toy_qp_problem()
    cfg = AbpdConfig.for_problem(prob, max_iters=5)
    with pytest.raises(ValueError, match="nonnegative"):
        run_abpd(prob, LinearSubproblemSolver(prob), cfg, x0=np.zeros(2),
                 y0=np.array([-1.0]))


def test_strict_mode_raises_on_uncertified_step():
    prob = toy_qp_problem(mu=0.0)
    cfg = AbpdConfig.for_problem(prob, max_iters=10, strict_certificates=True)
    starved = LinearSubproblemSolver(prob, max_inner=1)
    with pytest.raises(SolverError):
        run_abpd(prob, starved, cfg, x0=np.zeros(2))


def test_tolerant_mode_records_uncertified_steps():
    prob = toy_qp_problem(mu=0.0)
    cfg = AbpdConfig.for_problem(prob, max_iters=10, record_values=False)
    starved = LinearSubproblemSolver(prob, max_inner=1)
    res = run_abpd(prob, starved, cfg, x0=np.zeros(2))
    assert res.uncertified_steps > 0


def test_k_zero_returns_initial_point():
    prob = toy_qp_problem()
    cfg = AbpdConfig.for_problem(prob, max_iters=0)
    res = run_abpd(prob, LinearSubproblemSolver(prob), cfg, x0=np.zeros(2))
    assert res.iterations == 0
    assert res.x_last == pytest.approx(np.zeros(2))
    assert res.x_avg == pytest.approx(np.zeros(2))


def test_diagnostics_csv_roundtrip():
    prob = toy_qp_problem()
    cfg = AbpdConfig.for_problem(prob, max_iters=7)
    res = run_abpd(prob, LinearSubproblemSolver(prob), cfg, x0=np.zeros(2))
    assert len(res.diagnostics.rows) == 7
    buf = io.StringIO()
    res.diagnostics.write_csv(buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0].startswith("k,objective,max_violation")
    assert len(lines) == 8


def test_iteration_hook_can_mutate_constraints():
    # tightening the offset mid-run must refresh the dual's constraint view
    geom = BregmanGeometry("identity", dim=1)
    obj = QuadraticFunction(np.array([[2.0]]))
    con = AffineFunction(np.array([1.0]), -10.0)
    prob = ConstrainedProblem(obj, [con], geom,
                              RelativeConstants(mu=2.0, l_g=1.0))
    seen = {}

    def hook(k, state):
        if k == 5:
            con.b = 0.5  # now requires x <= -0.5 ... constraint x + 0.5 <= 0
            return True
        if k > 5:
            seen["post"] = True
        return False

    cfg = AbpdConfig.for_problem(prob, max_iters=400, record_values=False)
    res = run_abpd(prob, LinearSubproblemSolver(prob), cfg,
                   x0=np.zeros(1), iteration_hook=hook)
    assert seen["post"]
    assert res.x_last[0] == pytest.approx(-0.5, abs=1e-3)


def test_early_stop_check():
    prob = toy_qp_problem(mu=2.0)
    cfg = AbpdConfig.for_problem(prob, max_iters=5000, record_values=False,
                                 stop_every=10)

    def stop(state):
        return prob.objective_value(state["x"]) - 0.5 <= 1e-3

    res = run_abpd(prob, LinearSubproblemSolver(prob), cfg, x0=np.zeros(2),
                   stop_check=stop)
    assert res.stopped_early
    assert res.iterations < 5000


def test_toy_qp_against_oracle_reference():
    sol = small_qp_oracle(2 * np.eye(2), np.zeros(2),
                          A=np.array([[-1.0, -1.0]]), b=np.array([-1.0]))
    prob, res = run_toy(mu=2.0, K=1500)
    assert prob.objective_value(res.x_avg) - sol.f <= 2e-4
    assert np.linalg.norm(res.x_avg - sol.x) <= 2e-2
    assert abs(res.y_avg[0] - sol.y[0]) <= 2e-2
