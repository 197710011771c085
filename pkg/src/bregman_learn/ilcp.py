"""Outer proximal loop for difference-of-convex constrained problems.

Each outer step adds a dominating quadratic divergence term to both the
objective and every DC constraint, which makes the subproblem convex, and
delegates it to the primal-dual driver until an (eps3, eps4) certificate
holds.  The loop stops once the inter-iterate movement falls below the
threshold that certifies an approximate Fritz John point, and reports the
FJ residuals at the exit point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .abpd import AbpdConfig, SolverError, run_abpd
from .geometry import RelativeConstants
from .problems import ConstrainedProblem
from .solvers.linear import LinearSubproblemSolver


@dataclass
class IlcpConfig:
    prox_modulus: float
    target_eps: float
    max_outer: int
    rho: float
    sigma_min: float = 1.0
    sigma_max: float = 1.0
    eps34: float = None
    abpd_max_iters: int = 2000
    abpd_stop_every: int = 5
    strict_certificates: bool = False
    region_radius: float = None

    def __post_init__(self):
        L = self.prox_modulus
        bound = max(self.rho, 1.0 / self.sigma_max)
        if L <= bound:
            raise ValueError(
                f"prox modulus {L} must exceed max(rho, 1/sigma_max) = {bound}")
        if self.target_eps <= 0:
            raise ValueError("target_eps must be positive")
        if self.eps34 is None:
            self.eps34 = ((L - self.rho) * self.target_eps ** 2 * self.sigma_min
                          / (4.0 * L ** 2 * self.sigma_max ** 2))

    @property
    def movement_trigger(self):
        """Stop once sqrt(2 D(x_new, x_old)) falls below eps/(L sigma_max)."""
        return self.target_eps / (self.prox_modulus * self.sigma_max)

    @classmethod
    def for_problem(cls, dc_problem, target_eps, max_outer, prox_modulus=None,
                    **kw):
        geom = dc_problem.geometry
        rho = dc_problem.rho
        if prox_modulus is None:
            prox_modulus = max(1.5 * rho, 1.05 / geom.sigma_max_wtw)
        return cls(prox_modulus=prox_modulus, target_eps=target_eps,
                   max_outer=max_outer, rho=rho,
                   sigma_min=geom.sigma_min_wtw, sigma_max=geom.sigma_max_wtw,
                   **kw)


class _ProxShifted:
    """base(x) + L * D(x, anchor) with matching oracles."""

    def __init__(self, base, L, geometry, anchor):
        self.base = base
        self.L = float(L)
        self.geometry = geometry
        self.anchor = np.asarray(anchor, dtype=float)
        self.curvature = base.curvature + self.L * geometry.sigma_max_wtw

    def value(self, x):
        return self.base.value(x) + self.L * self.geometry.divergence(x, self.anchor)

    def grad(self, x):
        return self.base.grad(x) + self.L * self.geometry.quad_grad(x, self.anchor)

    def value_and_grad(self, x):
        v, g = self.base.value_and_grad(x)
        return (v + self.L * self.geometry.divergence(x, self.anchor),
                g + self.L * self.geometry.quad_grad(x, self.anchor))


def _region_gradient_bound(fn, anchor, radius, n_probe=16, seed=0):
    """Crude sup ||grad fn|| over a ball: sampled probes plus a margin."""
    rng = np.random.default_rng(seed)
    dim = anchor.size
    worst = float(np.linalg.norm(fn.grad(anchor)))
    for _ in range(n_probe):
        u = rng.standard_normal(dim)
        u *= radius / np.linalg.norm(u)
        worst = max(worst, float(np.linalg.norm(fn.grad(anchor + u))))
    return 1.5 * worst + 1e-6


def assemble_subproblem(dc_problem, anchor, L, region_radius=None):
    """Convexified proximal subproblem at the anchor.

    objective: f + L D(., anchor); constraint i: g_i - h_i - eta_i +
    L D(., anchor), convex because L exceeds every smoothness constant of
    the concave parts.  The subproblem's relative strong convexity handed to
    the inner driver is L - rho; its Lipschitz constant is re-estimated for
    the shifted constraint map around the anchor.
    """
    rho = dc_problem.rho
    if L <= rho:
        raise ValueError("subproblem not convex: L must exceed rho")
    geom = dc_problem.geometry
    anchor = np.asarray(anchor, dtype=float)
    objective = _ProxShifted(dc_problem.objective, L, geom, anchor)
    constraints = [_ProxShifted(c, L, geom, anchor)
                   for c in dc_problem.dc_constraints]
    if region_radius is None:
        region_radius = max(1.0, np.sqrt(anchor @ anchor))
    sup_grads = [_region_gradient_bound(c, anchor, region_radius, seed=i)
                 for i, c in enumerate(constraints)]
    sigma_min = max(geom.sigma_min_wtw, 1e-12)
    l_g = float(np.sqrt(np.sum(np.square(sup_grads)))) / np.sqrt(sigma_min)
    constants = RelativeConstants(mu=L - rho, l_g=max(l_g, 1e-8),
                                  l_h=tuple(c.l_h for c in dc_problem.dc_constraints))
    return ConstrainedProblem(objective, constraints, geom, constants,
                              box=dc_problem.box, name="ilcp-subproblem")


def subproblem_gap_bound(subproblem, x, y):
    """Computable upper bound on the subproblem objective gap at (x, y).

    Weak duality plus strong convexity of the Lagrangian in x gives
    phi(x) - phi(x*) <= -<y, gbar(x)> + ||grad_x L(x, y)||^2 / (2 mu_cert)
    for any nonnegative y; valid whether or not x is subproblem-feasible.
    """
    geom = subproblem.geometry
    mu_cert = (subproblem.constants.mu * geom.sigma_min_wtw
               * (1.0 + float(np.sum(y))))
    gbar = subproblem.constraint_values(x)
    grad = subproblem.lagrangian_grad(x, y)
    return float(-(y @ gbar) + (grad @ grad) / (2.0 * mu_cert)), gbar, grad


@dataclass
class FjResidual:
    """Approximate Fritz John certificate at a candidate point."""

    y0: float
    y: np.ndarray
    stationarity: float
    complementarity: np.ndarray
    feasibility: float
    stationarity_slack: float = np.nan

    def max_component(self):
        comp = float(self.complementarity.max(initial=0.0))
        return max(self.stationarity, comp)


def _normal_cone_distance(v, x, box, tol=1e-9):
    """dist(v, -N_X(x)) for a box X; the plain norm at interior points."""
    if box is None:
        return float(np.linalg.norm(v))
    r = np.empty_like(v)
    at_lo = x <= box.lo + tol
    at_hi = x >= box.hi - tol
    interior = ~(at_lo | at_hi)
    r[interior] = v[interior]
    r[at_lo] = np.minimum(v[at_lo], 0.0)
    r[at_hi] = np.maximum(v[at_hi], 0.0)
    both = at_lo & at_hi
    r[both] = 0.0
    return float(np.linalg.norm(r))


def fj_residual(dc_problem, x, multipliers, stationarity_slack=np.nan):
    """FJ residuals with the inner driver's dual as the multiplier source.

    (1, y_raw) is normalized onto the simplex; stationarity is the distance
    of the weighted subgradient combination to -N_X(x); complementarity
    entries are sqrt(|y_i * constraint_i(x)|).
    """
    x = np.asarray(x, dtype=float)
    y_raw = np.asarray(multipliers, dtype=float)
    if np.any(y_raw < 0):
        raise ValueError("multipliers must be nonnegative")
    total = 1.0 + float(y_raw.sum())
    y0 = 1.0 / total
    y = y_raw / total
    v = y0 * dc_problem.objective.grad(x)
    vals = np.empty(dc_problem.m)
    for i, c in enumerate(dc_problem.dc_constraints):
        vals[i], g = c.value_and_grad(x)
        if y[i] != 0.0:
            v = v + y[i] * g
    stationarity = _normal_cone_distance(v, x, dc_problem.box)
    complementarity = np.sqrt(np.abs(y * vals))
    return FjResidual(y0=y0, y=y, stationarity=stationarity,
                      complementarity=complementarity,
                      feasibility=dc_problem.phi_bar(x),
                      stationarity_slack=stationarity_slack)


@dataclass
class IlcpOuterRecord:
    t: int
    objective: float
    phi_bar: float
    movement: float
    gap_bound: float
    inner_iterations: int
    certified: bool


@dataclass
class IlcpResult:
    x: np.ndarray
    residual: FjResidual
    records: list
    stopped_by_movement: bool
    multipliers: np.ndarray
    inexactness_slack: float

    def write_csv(self, path_or_file):
        close = isinstance(path_or_file, (str, bytes))
        f = open(path_or_file, "w") if close else path_or_file
        try:
            f.write("t,objective,phi_bar,movement,gap_bound,inner_iterations,certified\n")
            for r in self.records:
                f.write(f"{r.t},{r.objective!r},{r.phi_bar!r},{r.movement!r},"
                        f"{r.gap_bound!r},{r.inner_iterations},{int(r.certified)}\n")
        finally:
            if close:
                f.close()


def run_ilcp(dc_problem, config, x0, solver_factory=None, tau0=None,
             sigma0=None):
    """Outer proximal loop; x0 must satisfy phi_bar(x0) <= 0.

    solver_factory(subproblem) builds the inner subproblem backend (defaults
    to the accelerated gradient solver).  Returns the exit point, its FJ
    residuals, and the per-outer-iteration records.
    """
    x = np.asarray(x0, dtype=float).copy()
    feas0 = dc_problem.phi_bar(x)
    if feas0 > 0:
        raise ValueError(f"infeasible start: phi_bar(x0) = {feas0:.3e} > 0")
    if solver_factory is None:
        solver_factory = LinearSubproblemSolver
    geom = dc_problem.geometry
    L = config.prox_modulus
    eps3 = eps4 = config.eps34
    records = []
    stopped = False
    y_exit = np.zeros(dc_problem.m)
    slack_exit = np.nan
    anchor_exit = x.copy()
    for t in range(config.max_outer):
        sub = assemble_subproblem(dc_problem, x, L,
                                  region_radius=config.region_radius)
        abpd_cfg = AbpdConfig.for_problem(
            sub, max_iters=config.abpd_max_iters, tau0=tau0, sigma0=sigma0,
            strict_certificates=False, record_values=False,
            stop_every=config.abpd_stop_every)
        certified_state = {}

        def stop_check(state, _sub=sub, _cert=certified_state):
            for cand_x, cand_y in ((state["x"], state["y"]),
                                   (state["x_avg"], state["y_avg"])):
                gap, gbar, grad = subproblem_gap_bound(_sub, cand_x, cand_y)
                if gap <= eps3 and float(gbar.max(initial=-np.inf)) <= eps4:
                    _cert.update(x=cand_x.copy(), y=cand_y.copy(), gap=gap,
                                 grad=grad)
                    return True
            return False

        result = run_abpd(sub, solver_factory(sub), abpd_cfg, x0=x,
                          stop_check=stop_check)
        if certified_state:
            x_new = certified_state["x"]
            y_raw = certified_state["y"]
            gap = certified_state["gap"]
            grad_sub = certified_state["grad"]
            certified = True
        else:
            x_new, y_raw = result.x_last, result.y_last
            gap, _, grad_sub = subproblem_gap_bound(sub, x_new, y_raw)
            certified = gap <= eps3 and dc_problem.phi_bar(x_new) <= eps4
            if not certified and config.strict_certificates:
                raise SolverError(
                    f"outer step {t}: subproblem gap bound {gap:.3e} "
                    f"exceeds eps3 = {eps3:.3e}")
        movement = float(np.sqrt(2.0 * geom.divergence(x_new, x)))
        records.append(IlcpOuterRecord(
            t=t, objective=dc_problem.objective_value(x_new),
            phi_bar=dc_problem.phi_bar(x_new), movement=movement,
            gap_bound=gap, inner_iterations=result.iterations,
            certified=certified))
        # ergodic dual of the last subproblem feeds the FJ residuals
        y_exit = result.y_avg
        anchor_exit = x
        slack_exit = float(np.linalg.norm(
            sub.lagrangian_grad(x_new, y_exit))) / (1.0 + float(y_exit.sum()))
        x = x_new
        if movement <= config.movement_trigger:
            stopped = True
            break
    residual = fj_residual(dc_problem, x, y_exit,
                           stationarity_slack=slack_exit)
    return IlcpResult(x=x, residual=residual, records=records,
                      stopped_by_movement=stopped, multipliers=y_exit,
                      inexactness_slack=slack_exit)
