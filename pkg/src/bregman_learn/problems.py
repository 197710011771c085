"""Constrained learning problems: objectives, constraint oracles, builders.

Two problem families are constructed here:

* Neyman-Pearson classification: weighted cross-entropy objective with one
  convex per-class loss budget per protected class.
* Fairness classification: total cross-entropy objective with
  difference-of-convex constraints bounding pairwise group-loss gaps.

Both come in a linear parameterization (decision variable = affine model
weights) and a score parameterization (decision variable = the flattened
training-score matrix, used by the boosting backend).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import BregmanGeometry, RelativeConstants


class DataError(ValueError):
    """Raised for malformed or inconsistent dataset inputs."""


# ---------------------------------------------------------------------------
# cross-entropy primitives

def softmax(scores):
    s = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(scores):
    s = scores - scores.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def cross_entropy_loss(scores, labels, weights=None):
    """Weighted softmax cross-entropy and its gradient w.r.t. the scores.

    Parameters
    ----------
    scores : (n, J) array of logits.
    labels : (n,) int array of class indices in [0, J).
    weights : optional (n,) array of per-sample weights (default all ones).

    Returns
    -------
    (loss, grad) with loss = sum_i w_i * (-log softmax(scores_i)[labels_i])
    and grad[i] = w_i * (softmax(scores_i) - onehot(labels_i)).
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    labels = np.atleast_1d(np.asarray(labels))
    n, J = scores.shape
    if labels.shape[0] != n:
        raise ValueError("scores and labels disagree on the sample count")
    if labels.min() < 0 or labels.max() >= J:
        raise ValueError("label outside [0, n_classes)")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape[0] != n:
            raise ValueError("weights length mismatch")
    logp = log_softmax(scores)
    loss = float(-(w * logp[np.arange(n), labels]).sum())
    grad = softmax(scores)
    grad[np.arange(n), labels] -= 1.0
    grad *= w[:, None]
    return loss, grad


def shrink_predictions(probs, floor):
    """Raise per-class probabilities below `floor` and renormalize rows.

    Guards the constraint-loss evaluation against single outlier samples
    whose near-zero predicted probability would blow up the log loss and
    make the convex relaxation infeasible.  Renormalized rows sum to one and
    stay elementwise >= floor / (1 + J * floor).
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    J = probs.shape[1]
    if not (0.0 < floor <= 1.0 / J):
        raise ValueError("floor must lie in (0, 1/n_classes]")
    clipped = np.maximum(probs, floor)
    return clipped / clipped.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# function oracles

class QuadraticFunction:
    """f(x) = 0.5 x^T Q x + c^T x + d with symmetric PSD (or indefinite) Q."""

    def __init__(self, Q, c=None, d=0.0):
        self.Q = np.asarray(Q, dtype=float)
        dim = self.Q.shape[0]
        self.c = np.zeros(dim) if c is None else np.asarray(c, dtype=float)
        self.d = float(d)
        eigs = np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T))
        self.curvature = float(max(eigs.max(), 0.0))
        self.convexity = float(eigs.min())

    def value(self, x):
        return 0.5 * float(x @ self.Q @ x) + float(self.c @ x) + self.d

    def grad(self, x):
        return self.Q @ x + self.c

    def value_and_grad(self, x):
        g = self.Q @ x + self.c
        return 0.5 * float(x @ (g + self.c)) + self.d, g


class AffineFunction:
    """f(x) = a^T x + b."""

    def __init__(self, a, b=0.0):
        self.a = np.asarray(a, dtype=float)
        self.b = float(b)
        self.curvature = 0.0

    def value(self, x):
        return float(self.a @ x) + self.b

    def grad(self, x):
        return self.a.copy()

    def value_and_grad(self, x):
        return self.value(x), self.a.copy()


class _SoftmaxCache:
    """Memoizes the softmax pass shared by all oracles of one problem."""

    def __init__(self):
        self._key = None
        self._value = None

    def get(self, x, compute):
        key = x.tobytes()
        if key != self._key:
            self._value = compute()
            self._key = key
        return self._value


class LinearCrossEntropy:
    """Coefficient-weighted cross-entropy of an affine model.

    value(x) = sum_i coeff_i * ce(Phi_i @ X, b_i) + 0.5 * ridge * ||x||^2,
    where x is the flattened (d_aug, J) weight matrix.
    """

    def __init__(self, phi, labels, coeff, n_classes, ridge=0.0, cache=None,
                 sample_mask=None):
        self.phi = phi
        self.labels = labels
        self.coeff = np.asarray(coeff, dtype=float)
        self.J = int(n_classes)
        self.ridge = float(ridge)
        self.cache = cache if cache is not None else _SoftmaxCache()
        self.mask = sample_mask
        rows = phi if sample_mask is None else phi[sample_mask]
        cs = self.coeff if sample_mask is None else self.coeff[sample_mask]
        # softmax Hessian per sample is bounded by 0.5 I in score space
        self.curvature = 0.5 * float(cs @ (rows * rows).sum(axis=1)) + self.ridge

    def _scores_probs(self, x):
        X = x.reshape(self.phi.shape[1], self.J)

        def compute():
            scores = self.phi @ X
            return scores, softmax(scores)

        return self.cache.get(x, compute)

    def value(self, x):
        return self.value_and_grad(x)[0]

    def grad(self, x):
        return self.value_and_grad(x)[1]

    def value_and_grad(self, x):
        scores, probs = self._scores_probs(x)
        n = scores.shape[0]
        idx = np.arange(n) if self.mask is None else np.flatnonzero(self.mask)
        logp = log_softmax(scores[idx])
        lab = self.labels[idx]
        w = self.coeff[idx]
        value = float(-(w * logp[np.arange(idx.size), lab]).sum())
        g_scores = probs[idx].copy()
        g_scores[np.arange(idx.size), lab] -= 1.0
        g_scores *= w[:, None]
        grad = (self.phi[idx].T @ g_scores).ravel()
        if self.ridge:
            value += 0.5 * self.ridge * float(x @ x)
            grad = grad + self.ridge * x
        return value, grad


class ScoreCrossEntropy:
    """Coefficient-weighted cross-entropy as a function of the score matrix.

    The decision variable is the flattened (n, J) training-score matrix, so
    gradients are per-sample softmax residuals.  Also exposes the per-sample
    Hessian diagonal used by second-order boosting.
    """

    def __init__(self, n_samples, n_classes, labels, coeff, cache=None,
                 normalizer=1.0, offset=0.0):
        self.n = int(n_samples)
        self.J = int(n_classes)
        self.labels = labels
        self.coeff = np.asarray(coeff, dtype=float)
        self.normalizer = float(normalizer)
        self.offset = float(offset)
        self.cache = cache if cache is not None else _SoftmaxCache()
        self.curvature = 0.5 * float(self.coeff.max(initial=0.0)) / self.normalizer

    def _probs(self, x):
        scores = x.reshape(self.n, self.J)
        return self.cache.get(x, lambda: softmax(scores))

    def value(self, x):
        return self.value_and_grad(x)[0]

    def grad(self, x):
        return self.value_and_grad(x)[1]

    def value_and_grad(self, x):
        scores = x.reshape(self.n, self.J)
        probs = self._probs(x)
        logp = log_softmax(scores)
        w = self.coeff / self.normalizer
        value = float(-(w * logp[np.arange(self.n), self.labels]).sum()) + self.offset
        g = probs.copy()
        g[np.arange(self.n), self.labels] -= 1.0
        g *= w[:, None]
        return value, g.ravel()

    def samplewise_grad_hess(self, scores):
        """Per-sample gradient and Hessian diagonal in score space."""
        probs = softmax(scores)
        g = probs.copy()
        g[np.arange(self.n), self.labels] -= 1.0
        w = (self.coeff / self.normalizer)[:, None]
        return g * w, probs * (1.0 - probs) * w


class FunctionWithOffset:
    """g(x) = base(x) - offset, sharing the base oracle."""

    def __init__(self, base, offset=0.0):
        self.base = base
        self.offset = float(offset)

    @property
    def curvature(self):
        return self.base.curvature

    def value(self, x):
        return self.base.value(x) - self.offset

    def grad(self, x):
        return self.base.grad(x)

    def value_and_grad(self, x):
        v, g = self.base.value_and_grad(x)
        return v - self.offset, g


# ---------------------------------------------------------------------------
# problem containers

@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def project(self, x):
        return np.minimum(np.maximum(x, self.lo), self.hi)

    def contains(self, x, tol=1e-12):
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))


class ConstrainedProblem:
    """min f(x) s.t. g_i(x) <= 0 over an optional box, with value/gradient
    oracles and the relative constants the drivers consume."""

    def __init__(self, objective, constraints, geometry, constants, box=None,
                 name=""):
        self.objective = objective
        self.constraints = list(constraints)
        self.geometry = geometry
        self.constants = constants
        self.box = box
        self.name = name

    @property
    def m(self):
        return len(self.constraints)

    def constraint_values(self, x):
        return np.array([c.value(x) for c in self.constraints])

    def constraint_values_for_dual(self, x):
        """Values the dual ascent sees; subclasses may apply safeguards."""
        return self.constraint_values(x)

    def objective_value(self, x):
        return self.objective.value(x)

    def lagrangian_grad(self, x, y):
        g = self.objective.grad(x).astype(float, copy=True)
        for yi, c in zip(y, self.constraints):
            if yi != 0.0:
                g += yi * c.grad(x)
        return g


def lagrangian(problem, x, y):
    """f(x) + <y, g(x)> for nonnegative multipliers y."""
    y = np.asarray(y, dtype=float)
    if y.shape[0] != problem.m:
        raise ValueError("multiplier length mismatch")
    if np.any(y < 0):
        raise ValueError("multipliers must be nonnegative")
    return problem.objective_value(x) + float(y @ problem.constraint_values(x))


@dataclass
class DcConstraint:
    """One difference-of-convex constraint g(x) - h(x) - eta <= 0."""

    g_part: object
    h_part: object
    eta: float
    l_h: float = 0.0

    def value(self, x):
        return self.g_part.value(x) - self.h_part.value(x) - self.eta

    def grad(self, x):
        return self.g_part.grad(x) - self.h_part.grad(x)

    def value_and_grad(self, x):
        vg, gg = self.g_part.value_and_grad(x)
        vh, gh = self.h_part.value_and_grad(x)
        return vg - vh - self.eta, gg - gh


class DcProblem:
    """min f(x) s.t. max_i (g_i - h_i - eta_i)(x) <= 0."""

    def __init__(self, objective, dc_constraints, geometry, box=None, name=""):
        self.objective = objective
        self.dc_constraints = list(dc_constraints)
        self.geometry = geometry
        self.box = box
        self.name = name

    @property
    def m(self):
        return len(self.dc_constraints)

    @property
    def rho(self):
        return max((c.l_h for c in self.dc_constraints), default=0.0)

    def constraint_values(self, x):
        return np.array([c.value(x) for c in self.dc_constraints])

    def phi_bar(self, x):
        return float(self.constraint_values(x).max()) if self.dc_constraints else -np.inf

    def objective_value(self, x):
        return self.objective.value(x)


# ---------------------------------------------------------------------------
# task specs and builders

@dataclass
class NpcSpec:
    """Per-class risk-budget task description.

    alpha entries align with constrained_classes; expected_error_rates feed
    the alpha heuristic when alpha is not fixed.
    """

    constrained_classes: tuple
    alpha: np.ndarray = None
    expected_error_rates: np.ndarray = None
    per_class_weights: np.ndarray = None

    def __post_init__(self):
        self.constrained_classes = tuple(int(j) for j in self.constrained_classes)
        if not self.constrained_classes:
            raise ValueError("constrained_classes must be nonempty")
        if self.alpha is not None:
            self.alpha = np.asarray(self.alpha, dtype=float)
            if np.any(self.alpha <= 0):
                raise ValueError("alpha entries must be positive")
        if self.expected_error_rates is not None:
            self.expected_error_rates = np.asarray(self.expected_error_rates, dtype=float)


@dataclass
class FairnessSpec:
    """Pairwise group-loss gap task description."""

    sensitive: np.ndarray
    alpha: float
    n_groups: int = None

    def __post_init__(self):
        self.sensitive = np.asarray(self.sensitive, dtype=int)
        if self.n_groups is None:
            self.n_groups = int(self.sensitive.max()) + 1
        if self.alpha <= 0:
            raise ValueError("fairness tolerance alpha must be positive")

    @property
    def group_sizes(self):
        return np.bincount(self.sensitive, minlength=self.n_groups)


def augment_features(features):
    """Append the bias column, folding the intercept into the weights."""
    features = np.asarray(features, dtype=float)
    return np.hstack([features, np.ones((features.shape[0], 1))])


def default_class_weights(labels, n_classes):
    """w_i = 1 / n_class(i): the objective becomes balanced class risk."""
    counts = np.bincount(labels, minlength=n_classes).astype(float)
    return 1.0 / counts[labels]


class NpcProblem(ConstrainedProblem):
    """NPC instance with mutable alpha (for the mid-run refit heuristic) and
    an optional prediction-shrink safeguard on the dual-side constraint
    values."""

    def __init__(self, objective, class_losses, spec, geometry, constants,
                 labels, n_classes, box=None, shrink_floor=None,
                 scores_of=None):
        constraints = [FunctionWithOffset(loss, a)
                       for loss, a in zip(class_losses, spec.alpha)]
        super().__init__(objective, constraints, geometry, constants, box,
                         name="npc")
        self.spec = spec
        self.labels = labels
        self.n_classes = n_classes
        self.shrink_floor = shrink_floor
        self._scores_of = scores_of

    def set_alpha(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        if alpha.shape[0] != self.m:
            raise ValueError("alpha length mismatch")
        self.spec.alpha = alpha
        for c, a in zip(self.constraints, alpha):
            c.offset = float(a)

    def scores(self, x):
        return self._scores_of(x)

    def constraint_values_for_dual(self, x):
        """Class losses minus alpha, with small predicted probabilities on
        the true class floored before the log (outlier safeguard)."""
        if self.shrink_floor is None:
            return self.constraint_values(x)
        probs = shrink_predictions(softmax(self.scores(x)), self.shrink_floor)
        neglog = -np.log(probs[np.arange(len(self.labels)), self.labels])
        vals = np.zeros(self.m)
        for k, j in enumerate(self.spec.constrained_classes):
            vals[k] = neglog[self.labels == j].sum() - self.spec.alpha[k]
        return vals


def build_npc_problem(features, labels, spec, geometry, ridge=0.0,
                      weights=None, shrink_floor=None, scores=None):
    """Assemble the per-class risk-budget problem.

    Linear parameterization when geometry.kind != "prediction-score"
    (decision variable: flattened affine weights); otherwise the decision
    variable is the flattened training-score matrix and `features` is
    unused by the oracles.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    n_classes = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=n_classes)
    for j in spec.constrained_classes:
        if j >= n_classes or counts[j] == 0:
            raise DataError(f"constrained class {j} absent from the data")
    if spec.alpha is None:
        raise ValueError("spec.alpha must be set before building the problem")
    if spec.alpha.shape[0] != len(spec.constrained_classes):
        raise ValueError("alpha and constrained_classes length mismatch")
    if weights is None:
        weights = (spec.per_class_weights if spec.per_class_weights is not None
                   else default_class_weights(labels, n_classes))
    cache = _SoftmaxCache()
    ones = np.ones(n)
    if geometry.kind == "prediction-score":
        objective = ScoreCrossEntropy(n, n_classes, labels, weights, cache=cache)
        losses = [ScoreCrossEntropy(n, n_classes, labels,
                                    ones * (labels == j), cache=cache)
                  for j in spec.constrained_classes]
        constants = RelativeConstants(mu=0.0, l_g=1.0)
        scores_of = lambda x: x.reshape(n, n_classes)
    else:
        phi = augment_features(features)
        objective = LinearCrossEntropy(phi, labels, weights, n_classes,
                                       ridge=ridge, cache=cache)
        losses = [LinearCrossEntropy(phi, labels, ones, n_classes, cache=cache,
                                     sample_mask=(labels == j))
                  for j in spec.constrained_classes]
        l_g = float(np.linalg.norm(phi, axis=1).sum())
        constants = RelativeConstants(mu=ridge, l_g=l_g)
        scores_of = lambda x: phi @ x.reshape(phi.shape[1], n_classes)
    return NpcProblem(objective, losses, spec, geometry, constants, labels,
                      n_classes, shrink_floor=shrink_floor, scores_of=scores_of)


def build_fairness_problem(features, labels, spec, geometry):
    """Assemble the DC fairness problem.

    The objective is the total cross-entropy; each unordered group pair
    (j, l) produces two one-sided DC constraints encoding
    |xi(j) - xi(l)| <= alpha, where xi(k) is group k's mean cross-entropy.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    n_classes = int(labels.max()) + 1
    sizes = spec.group_sizes
    if spec.n_groups < 2:
        raise DataError("fairness problems need at least two groups")
    if np.any(sizes == 0):
        raise DataError("every group must contain at least one sample")
    cache = _SoftmaxCache()
    ones = np.ones(n)
    if geometry.kind == "prediction-score":
        def group_loss(k):
            return ScoreCrossEntropy(n, n_classes, labels,
                                     ones * (spec.sensitive == k), cache=cache,
                                     normalizer=float(sizes[k]))

        objective = ScoreCrossEntropy(n, n_classes, labels, ones, cache=cache)

        def l_h(k):
            return 0.5 / float(sizes[k])
    else:
        phi = augment_features(features)

        def group_loss(k):
            mask = spec.sensitive == k
            return LinearCrossEntropy(phi, labels, ones / float(sizes[k]),
                                      n_classes, cache=cache, sample_mask=mask)

        objective = LinearCrossEntropy(phi, labels, ones, n_classes, cache=cache)

        def l_h(k):
            mask = spec.sensitive == k
            return 0.5 * float((phi[mask] ** 2).sum()) / float(sizes[k])

    group_losses = [group_loss(k) for k in range(spec.n_groups)]
    smooth = [l_h(k) for k in range(spec.n_groups)]
    dc = []
    for j in range(spec.n_groups):
        for l in range(j + 1, spec.n_groups):
            dc.append(DcConstraint(group_losses[j], group_losses[l],
                                   eta=spec.alpha, l_h=smooth[l]))
            dc.append(DcConstraint(group_losses[l], group_losses[j],
                                   eta=spec.alpha, l_h=smooth[j]))
    problem = DcProblem(objective, dc, geometry, name="fairness")
    problem.group_losses = group_losses
    problem.n_classes = n_classes
    problem.labels = labels
    return problem


def estimate_alpha(labels, n_classes, constrained_classes, expected_error_rates,
                   phase="initial", current_scores=None, shrink_floor=None):
    """Risk-budget heuristic for the NPC constraint levels.

    initial: alpha_k = n_k * e_k * log(2) for binary tasks and
    n_k * e_k * log(J) for multiclass, the loss of predicting the uniform
    probability on the budgeted error mass.

    refit (requires current scores): binary tasks rescale the model's own
    class-k log loss, alpha_k = -e_k * sum_{i: b_i = k} log p_i(k);
    multiclass tasks rescale the total true-class log loss,
    alpha_k = -e_k * sum_i log p_i(b_i).
    """
    labels = np.asarray(labels)
    constrained_classes = tuple(int(j) for j in constrained_classes)
    e = np.asarray(expected_error_rates, dtype=float)
    if e.shape[0] != len(constrained_classes):
        raise ValueError("one expected error rate per constrained class")
    counts = np.bincount(labels, minlength=n_classes).astype(float)
    if phase == "initial":
        return np.array([counts[j] * ek * np.log(n_classes)
                         for j, ek in zip(constrained_classes, e)])
    if phase != "refit":
        raise ValueError("phase must be 'initial' or 'refit'")
    if current_scores is None:
        raise ValueError("refit phase requires current_scores")
    probs = softmax(np.asarray(current_scores, dtype=float))
    if shrink_floor is not None:
        probs = shrink_predictions(probs, shrink_floor)
    else:
        probs = np.maximum(probs, 1e-300)
    true_logp = np.log(probs[np.arange(labels.shape[0]), labels])
    if n_classes == 2:
        return np.array([-ek * true_logp[labels == j].sum()
                         for j, ek in zip(constrained_classes, e)])
    total = -true_logp.sum()
    return np.array([ek * total for ek in e])
