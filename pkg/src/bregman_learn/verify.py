"""Independent oracles backing the test and acceptance suites.

Everything here is deliberately brute force: central differences for
gradients, active-set enumeration for tiny QPs, and a seeded generator of
difference-of-convex instances with a known strictly feasible point.  These
stay independent of the solver code paths they check.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .geometry import BregmanGeometry, RelativeConstants
from .problems import Box, DcConstraint, DcProblem, QuadraticFunction


def finite_difference_check(oracle, points, step=1e-5):
    """Worst relative gradient error over the points, by central differences.

    The error at a point is ||g_claimed - g_fd|| / max(||g_fd||, tiny), so a
    gradient off by a factor of two reports an error near one.
    """
    value = oracle.value if hasattr(oracle, "value") else oracle[0]
    grad = oracle.grad if hasattr(oracle, "grad") else oracle[1]
    worst = 0.0
    for x in points:
        x = np.asarray(x, dtype=float)
        g = np.asarray(grad(x), dtype=float)
        fd = np.empty_like(g)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = step
            fd[i] = (value(x + e) - value(x - e)) / (2.0 * step)
        denom = max(float(np.linalg.norm(fd)), 1e-12)
        worst = max(worst, float(np.linalg.norm(g - fd)) / denom)
    return worst


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    f: float
    kkt_residual: float
    active_set: tuple


def small_qp_oracle(Q, c, A=None, b=None, tol=1e-9):
    """Exact reference solution of min 0.5 x'Qx + c'x s.t. Ax <= b.

    Enumerates every active subset of the constraints (at most dim of them
    at a time plus degenerate extras), solves the KKT system directly, and
    returns the feasible KKT point.  Brute-force-trustworthy for dim <= 5
    and a handful of constraints only.
    """
    Q = np.asarray(Q, dtype=float)
    c = np.asarray(c, dtype=float)
    d = Q.shape[0]
    if d > 5:
        raise ValueError("oracle limited to dimension <= 5")
    if A is None or len(A) == 0:
        x = np.linalg.solve(Q, -c)
        f = 0.5 * float(x @ Q @ x) + float(c @ x)
        return QpSolution(x, np.zeros(0), f, float(np.linalg.norm(Q @ x + c)), ())
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m = A.shape[0]
    best = None
    for size in range(0, min(m, d) + 1):
        for active in combinations(range(m), size):
            S = list(active)
            K = np.zeros((d + size, d + size))
            K[:d, :d] = Q
            if size:
                K[:d, d:] = A[S].T
                K[d:, :d] = A[S]
            rhs = np.concatenate([-c, b[S]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x, y_act = sol[:d], sol[d:]
            if size and np.any(y_act < -tol):
                continue
            if np.any(A @ x - b > tol):
                continue
            y = np.zeros(m)
            y[S] = np.maximum(y_act, 0.0)
            f = 0.5 * float(x @ Q @ x) + float(c @ x)
            stat = Q @ x + c + A.T @ y
            comp = y * (A @ x - b)
            res = max(float(np.linalg.norm(stat)), float(np.abs(comp).max(initial=0.0)),
                      float(np.maximum(A @ x - b, 0.0).max(initial=0.0)))
            cand = QpSolution(x, y, f, res, tuple(S))
            if best is None or cand.f < best.f - 1e-12 or (
                    abs(cand.f - best.f) <= 1e-12 and cand.kkt_residual < best.kkt_residual):
                best = cand
    if best is None:
        raise ValueError("infeasible or degenerate QP: no KKT point found")
    return best


@dataclass
class DcInstance:
    """A generated DC-constrained test problem with recorded constants."""

    problem: DcProblem
    rho: float
    suggested_L: float
    x0: np.ndarray
    feasible_slack: float
    seed: int


def dc_instance_generator(seed, dim=4, m=3, box_half_width=5.0):
    """Random DC instance: strongly convex quadratic objective, constraints
    g_i - h_i - eta_i with convex quadratic parts, origin strictly feasible
    with slack at least 0.1.  Reproducible per seed."""
    if dim > 10 or m > 5:
        raise ValueError("generator limited to dim <= 10, m <= 5")
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((dim, dim)) / np.sqrt(dim)
    Q = B @ B.T + 0.3 * np.eye(dim)
    c = 0.5 * rng.standard_normal(dim)
    objective = QuadraticFunction(Q, c)
    constraints = []
    for _ in range(m):
        Bg = rng.standard_normal((dim, dim)) / np.sqrt(dim)
        g = QuadraticFunction(Bg @ Bg.T + 0.05 * np.eye(dim),
                              0.3 * rng.standard_normal(dim))
        Bh = rng.standard_normal((dim, dim)) / np.sqrt(dim)
        Hh = 0.8 * (Bh @ Bh.T) + 0.4 * np.eye(dim)
        h = QuadraticFunction(Hh, 0.3 * rng.standard_normal(dim))
        l_h = float(np.linalg.eigvalsh(Hh).max())
        eta = 0.1 + float(rng.uniform(0.0, 0.4))
        constraints.append(DcConstraint(g, h, eta=eta, l_h=l_h))
    geometry = BregmanGeometry("identity", dim=dim)
    box = Box(lo=-box_half_width * np.ones(dim), hi=box_half_width * np.ones(dim))
    problem = DcProblem(objective, constraints, geometry, box=box,
                        name=f"dc-{seed}")
    rho = problem.rho
    x0 = np.zeros(dim)
    slack = -problem.phi_bar(x0)
    # L must dominate both rho and 1/sigma_max; 1.5 rho keeps the per-step
    # descent constant of the outer loop comfortably positive
    suggested_L = max(1.5 * rho, 1.05 / geometry.sigma_max_wtw)
    return DcInstance(problem, rho, suggested_L, x0, float(slack), seed)
