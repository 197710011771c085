"""Quadratic Bregman geometries and the curvature constants built on them.

The divergence used everywhere in this package is the matrix-induced
quadratic

    D(x, y) = 0.5 * (x - y)^T W^T W (x - y),

which reduces to half the squared Euclidean distance for W = I.  A
geometry object fixes W (exactly or implicitly) together with the extremal
eigenvalues of W^T W that the step-size and stopping rules consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPERATOR_KINDS = ("identity", "explicit-matrix", "prediction-score")

_POWER_ITERS = 100
_POWER_TOL = 1e-10


def _power_iteration(matvec, dim, rng_seed=0, iters=_POWER_ITERS, tol=_POWER_TOL):
    """Largest eigenvalue of a symmetric PSD operator given as a matvec."""
    rng = np.random.default_rng(rng_seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = matvec(v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        lam_new = float(v @ w)
        v = w / norm
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            lam = lam_new
            break
        lam = lam_new
    return max(lam, 0.0)


class BregmanGeometry:
    """Divergence D(x, y) = 0.5 ||W (x - y)||^2 with eigenvalue bounds of W^T W.

    Parameters
    ----------
    kind : str
        "identity", "explicit-matrix" or "prediction-score".
    dim : int
        Dimension of the points the divergence compares.  For the
        prediction-score kind this is the flattened score dimension
        (n_samples * n_classes): points *are* training-score matrices, so
        the divergence is the plain half squared distance in score space
        and both eigenvalue bounds equal 1.
    matrix : ndarray, optional
        The explicit W (rows x dim) for kind "explicit-matrix".
    score_map : callable, optional
        For the prediction-score kind, an optional map from a weight
        vector to the flattened training-score vector.  Only used to
        cross-check the score-space identity on small instances.
    """

    def __init__(self, kind="identity", dim=None, matrix=None, score_map=None,
                 score_shape=None):
        if kind not in OPERATOR_KINDS:
            raise ValueError(f"unknown operator kind {kind!r}")
        self.kind = kind
        self.score_map = score_map
        self.score_shape = score_shape
        self.rank_deficient = False
        if kind == "explicit-matrix":
            if matrix is None:
                raise ValueError("explicit-matrix geometry requires a matrix")
            W = np.asarray(matrix, dtype=float)
            if W.ndim != 2:
                raise ValueError("W must be a 2-d array")
            if not np.any(W):
                raise ValueError("degenerate W = 0 is not a valid geometry")
            self.matrix = W
            self.matrix_dims = W.shape
            self.dim = W.shape[1]
            self._wtw = W.T @ W
            self._compute_sigma_bounds()
        else:
            if dim is None:
                raise ValueError(f"{kind} geometry requires dim")
            self.matrix = None
            self.matrix_dims = (int(dim), int(dim))
            self.dim = int(dim)
            self._wtw = None
            self.sigma_max_wtw = 1.0
            self.sigma_min_wtw = 1.0
        if self.sigma_min_wtw > self.sigma_max_wtw:
            raise ValueError("sigma_min exceeds sigma_max")

    def _compute_sigma_bounds(self):
        wtw = self._wtw
        d = wtw.shape[0]
        lam_max = _power_iteration(lambda v: wtw @ v, d)
        if lam_max <= 0.0:
            raise ValueError("degenerate W = 0 is not a valid geometry")
        # smallest eigenvalue via the shifted operator lam_max*I - W^T W
        lam_min = lam_max - _power_iteration(lambda v: lam_max * v - wtw @ v, d, rng_seed=1)
        lam_min = max(lam_min, 0.0)
        if lam_min <= 1e-10 * lam_max:
            # rank-deficient W: report the smallest eigenvalue over the row
            # space instead, since the stopping rules divide by sigma_min
            self.rank_deficient = True
            eigvals = np.linalg.eigvalsh(wtw)
            positive = eigvals[eigvals > 1e-10 * lam_max]
            lam_min = float(positive.min()) if positive.size else 0.0
        self.sigma_max_wtw = float(lam_max)
        self.sigma_min_wtw = float(lam_min)

    def _as_points(self, x, y):
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if self.kind == "prediction-score" and self.score_map is not None:
            # weight vectors are mapped through the weak-learner scores;
            # already-flattened score vectors pass through unchanged
            if x.size != self.dim:
                x = np.asarray(self.score_map(x), dtype=float).ravel()
            if y.size != self.dim:
                y = np.asarray(self.score_map(y), dtype=float).ravel()
        if x.size != self.dim or y.size != self.dim:
            raise ValueError(
                f"dimension mismatch: geometry expects {self.dim}, "
                f"got {x.size} and {y.size}")
        return x, y

    def divergence(self, x, y):
        """D(x, y) = 0.5 (x-y)^T W^T W (x-y); nonnegative, 0 iff W(x-y) = 0."""
        x, y = self._as_points(x, y)
        d = x - y
        if self.kind == "explicit-matrix":
            wd = self.matrix @ d
            return 0.5 * float(wd @ wd)
        return 0.5 * float(d @ d)

    def quad_grad(self, x, y):
        """Gradient of D(., y) at x, i.e. W^T W (x - y)."""
        x, y = self._as_points(x, y)
        d = x - y
        if self.kind == "explicit-matrix":
            return self._wtw @ d
        return d

    def diameter_bound(self, box):
        """Upper bound on max sqrt(2 D(x1, x2)) over an axis-aligned box.

        Uses sqrt(sigma_max(W^T W)) times the box diagonal length.
        """
        lo, hi = (np.asarray(b, dtype=float).ravel() for b in box)
        if lo.size != self.dim or hi.size != self.dim:
            raise ValueError("box dimension mismatch")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("diameter undefined: box is unbounded")
        diag = float(np.linalg.norm(hi - lo))
        return float(np.sqrt(self.sigma_max_wtw) * diag)


def divergence(geometry, x, y):
    """Module-level convenience wrapper for geometry.divergence."""
    return geometry.divergence(x, y)


def diameter_bound(geometry, box):
    """Module-level convenience wrapper for geometry.diameter_bound."""
    return geometry.diameter_bound(box)


@dataclass
class RelativeConstants:
    """Convexity/Lipschitz constants measured against the divergence.

    mu : relative strong convexity of the objective (>= 0).
    l_g : relative Lipschitz constant of the constraint map (> 0).
    l_h : per-constraint relative smoothness of the concave parts, used by
        the DC outer loop; empty for purely convex problems.
    """

    mu: float = 0.0
    l_g: float = 1.0
    l_h: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if self.l_g <= 0:
            raise ValueError("l_g must be positive")
        self.l_h = tuple(float(v) for v in self.l_h)
        if any(v < 0 for v in self.l_h):
            raise ValueError("l_h entries must be nonnegative")

    @property
    def rho(self):
        return max(self.l_h) if self.l_h else 0.0
