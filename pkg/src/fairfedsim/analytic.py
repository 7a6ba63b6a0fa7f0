"""Closed-form threshold-classifier analysis for Gaussian populations.

A population is a `GaussianClientSpec`: per (group, label) cell the 1-D
feature is N(mu^y_g, sigma^2), with label rates alpha^y_g and group rates
r_g. A threshold rule predicts 1 iff x >= theta, so every error rate and
fairness gap has a closed form in the Gaussian CDF.

Two clusters of identical clients (an alpha cluster holding fraction p of
the clients and a beta cluster holding 1 - p) admit two notions of the
shared "federated" threshold:

* ``average`` -- the p-weighted average of the two cluster-optimal
  thresholds, i.e. what parameter averaging of per-cluster-trained
  threshold models produces;
* ``pooled``  -- the minimizer of the p-weighted mixture of the two
  clusters' expected errors.

Both lie between the cluster optima. Reference tables in the literature
for the balanced cases are reproduced by the ``average`` convention, which
is therefore the default; ``pooled`` is the fixed-point object used by the
critical-cluster-size computation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np
from scipy.special import ndtr

from .data import GaussianClientSpec
from .errors import NumericsError, ValidationError
from .fairness import GROUP_A, GROUP_B, FairnessMetric, MetricLike, coerce_metric

ClusterSpec = GaussianClientSpec  # one cluster's population

_GRID_POINTS = 2000
_GOLDEN_TOL = 1e-6
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class TwoClusterScenario:
    spec_alpha: ClusterSpec
    spec_beta: ClusterSpec
    p: float  # fraction of clients in the alpha cluster

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValidationError(f"p must be in [0, 1], got {self.p}")


def _upper_tail(z):
    return ndtr(-np.asarray(z, dtype=np.float64))


def expected_error(spec: ClusterSpec, theta) -> np.ndarray:
    """Misclassification probability of the threshold rule on the population.

    Sum over groups of r_g * (alpha^1_g * P[x < theta | y=1]
    + alpha^0_g * P[x >= theta | y=0]).
    """
    th = np.asarray(theta, dtype=np.float64)
    total = np.zeros_like(th, dtype=np.float64)
    for g in (GROUP_A, GROUP_B):
        miss1 = ndtr((th - spec.mu(g, 1)) / spec.sigma)
        miss0 = _upper_tail((th - spec.mu(g, 0)) / spec.sigma)
        total += spec.r(g) * (spec.alpha(g, 1) * miss1 + spec.alpha(g, 0) * miss0)
    return total if total.shape else float(total)


def _search_interval(specs: Iterable[ClusterSpec]) -> Tuple[float, float]:
    mus, sigmas = [], []
    for s in specs:
        mus += [s.mu_1_a, s.mu_0_a, s.mu_1_b, s.mu_0_b]
        sigmas.append(s.sigma)
    pad = 6.0 * max(sigmas)
    return min(mus) - pad, max(mus) + pad


def _minimize_1d(fn, lo: float, hi: float) -> float:
    """Coarse grid scan then golden-section refinement to ~1e-6."""
    grid = np.linspace(lo, hi, _GRID_POINTS)
    values = fn(grid)
    i = int(np.argmin(values))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, _GRID_POINTS - 1)]
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    while abs(b - a) > _GOLDEN_TOL:
        if fn(np.array([c]))[0] < fn(np.array([d]))[0]:
            b, d = d, c
            c = b - _INV_PHI * (b - a)
        else:
            a, c = c, d
            d = a + _INV_PHI * (b - a)
    return float(0.5 * (a + b))


def optimal_threshold(spec: ClusterSpec) -> float:
    """Threshold minimizing the population's expected error."""
    lo, hi = _search_interval([spec])
    return _minimize_1d(lambda t: np.asarray(expected_error(spec, t)), lo, hi)


def threshold_closed_form(spec: ClusterSpec) -> float:
    """(mu^1_a + mu^0_b + mu^1_b + mu^0_a) / 4.

    Equals the optimal threshold when rates are balanced and the two
    groups share the label-1 to label-0 mean distance; kept as a
    cross-check for the numeric solver.
    """
    return 0.25 * (spec.mu_1_a + spec.mu_0_b + spec.mu_1_b + spec.mu_0_a)


def is_balanced_equal_distance(spec: ClusterSpec, tol: float = 1e-12) -> bool:
    balanced = (
        abs(spec.alpha_1_a - 0.5) <= tol
        and abs(spec.alpha_1_b - 0.5) <= tol
        and abs(spec.r_a - 0.5) <= tol
    )
    equal_dist = abs((spec.mu_1_a - spec.mu_0_a) - (spec.mu_1_b - spec.mu_0_b)) <= tol
    return balanced and equal_dist


def pooled_threshold(scenario: TwoClusterScenario, p: Optional[float] = None) -> float:
    """Minimizer of p * error_alpha(theta) + (1-p) * error_beta(theta)."""
    w = scenario.p if p is None else p
    lo, hi = _search_interval([scenario.spec_alpha, scenario.spec_beta])
    return _minimize_1d(
        lambda t: w * np.asarray(expected_error(scenario.spec_alpha, t))
        + (1.0 - w) * np.asarray(expected_error(scenario.spec_beta, t)),
        lo,
        hi,
    )


def global_threshold(
    scenario: TwoClusterScenario, method: str = "average", p: Optional[float] = None
) -> float:
    """Shared threshold over both clusters; see module docstring for methods."""
    w = scenario.p if p is None else p
    if method == "average":
        ta = optimal_threshold(scenario.spec_alpha)
        tb = optimal_threshold(scenario.spec_beta)
        return w * ta + (1.0 - w) * tb
    if method == "pooled":
        return pooled_threshold(scenario, p=w)
    raise ValidationError(f"unknown global threshold method {method!r}")


def analytic_gap(spec: ClusterSpec, theta, metric: MetricLike):
    """Population fairness gap of the threshold rule.

    sp:   |sum_y alpha^y_a P[x >= theta | a, y] - same for b|
    eqop: |P[x >= theta | a, 1] - P[x >= theta | b, 1]|
    eo:   max over y of |P[x >= theta | a, y] - P[x >= theta | b, y]|
    """
    metric = coerce_metric(metric)
    th = np.asarray(theta, dtype=np.float64)
    tail = {
        (g, y): _upper_tail((th - spec.mu(g, y)) / spec.sigma)
        for g in (GROUP_A, GROUP_B)
        for y in (0, 1)
    }
    if metric is FairnessMetric.SP:
        sel_a = spec.alpha(GROUP_A, 1) * tail[(GROUP_A, 1)] + spec.alpha(GROUP_A, 0) * tail[(GROUP_A, 0)]
        sel_b = spec.alpha(GROUP_B, 1) * tail[(GROUP_B, 1)] + spec.alpha(GROUP_B, 0) * tail[(GROUP_B, 0)]
        gap = np.abs(sel_a - sel_b)
    elif metric is FairnessMetric.EQOP:
        gap = np.abs(tail[(GROUP_A, 1)] - tail[(GROUP_B, 1)])
    else:
        gap = np.maximum(
            np.abs(tail[(GROUP_A, 1)] - tail[(GROUP_B, 1)]),
            np.abs(tail[(GROUP_A, 0)] - tail[(GROUP_B, 0)]),
        )
    return gap if gap.shape else float(gap)


def average_gap(
    scenario: TwoClusterScenario,
    metric: MetricLike,
    mode: str,
    threshold_method: str = "average",
) -> float:
    """Client-weighted average gap under clustered or shared thresholds.

    'clustered' evaluates each cluster at its own optimal threshold;
    'global' evaluates both clusters at the shared threshold.
    """
    if mode == "clustered":
        ga = analytic_gap(scenario.spec_alpha, optimal_threshold(scenario.spec_alpha), metric)
        gb = analytic_gap(scenario.spec_beta, optimal_threshold(scenario.spec_beta), metric)
    elif mode == "global":
        tg = global_threshold(scenario, method=threshold_method)
        ga = analytic_gap(scenario.spec_alpha, tg, metric)
        gb = analytic_gap(scenario.spec_beta, tg, metric)
    else:
        raise ValidationError(f"unknown mode {mode!r}; use 'clustered' or 'global'")
    return scenario.p * ga + (1.0 - scenario.p) * gb


def _label1_mass(spec: ClusterSpec, lo: float, hi: float) -> float:
    """integral over [lo, hi] of (density of group a | y=1) - (group b | y=1)."""
    za = (np.array([hi, lo]) - spec.mu_1_a) / spec.sigma
    zb = (np.array([hi, lo]) - spec.mu_1_b) / spec.sigma
    return float((ndtr(za[0]) - ndtr(za[1])) - (ndtr(zb[0]) - ndtr(zb[1])))


@dataclass(frozen=True)
class CriticalClusterSize:
    p_hat: float
    converged: bool
    degenerate: bool
    theta_alpha: float
    theta_beta: float
    theta_global: float
    iterations: int


def critical_cluster_size(
    scenario: TwoClusterScenario,
    damping: float = 0.5,
    tol: float = 1e-6,
    max_iterations: int = 200,
) -> CriticalClusterSize:
    """Smallest alpha-cluster fraction above which clustering wins on eqop.

    The size is the fixed point of
      p = min(1, |mass_beta(theta_G..theta_beta) / mass_alpha(theta_alpha..theta_G)|)
    where the masses integrate the difference of the two groups' label-1
    densities and theta_G is the pooled-error minimizer at weight p.
    Resolved by damped iteration from p = 0.5. A vanishing denominator is
    reported as the degenerate answer p_hat = 1.
    """
    ta = optimal_threshold(scenario.spec_alpha)
    tb = optimal_threshold(scenario.spec_beta)
    if abs(ta - tb) < 1e-9:
        return CriticalClusterSize(1.0, True, True, ta, tb, ta, 0)

    p = 0.5
    tg = pooled_threshold(scenario, p=p)
    for it in range(1, max_iterations + 1):
        num = _label1_mass(scenario.spec_beta, min(tg, tb), max(tg, tb))
        den = _label1_mass(scenario.spec_alpha, min(ta, tg), max(ta, tg))
        if abs(den) < 1e-12:
            return CriticalClusterSize(1.0, True, True, ta, tb, tg, it)
        target = min(1.0, abs(num / den))
        step = target - p
        p = p + damping * step
        tg = pooled_threshold(scenario, p=p)
        if abs(step) < tol:
            return CriticalClusterSize(p, True, False, ta, tb, tg, it)
    raise NumericsError(
        f"critical cluster size did not converge after {max_iterations} "
        f"iterations (last p={p:.6f}, step={step:.2e}, theta_global={tg:.6f})"
    )


def sp_condition_check(spec: ClusterSpec) -> bool:
    """Whether the statistical-parity improvement condition holds.

    Requires label-1 majorities in both groups (alpha^1_g >= alpha^0_g) and
    a derivative-balance inequality at the reference threshold
    theta_bar = (mu^1_a + mu^0_b + mu^1_b + mu^0_a) / 4: the side pairing
    (group a, label 0) with (group b, label 1) must dominate the side
    pairing (group b, label 0) with (group a, label 1).
    """
    lhs, rhs = sp_condition_terms(spec)
    labels_ok = (
        spec.alpha(GROUP_A, 1) >= spec.alpha(GROUP_A, 0)
        and spec.alpha(GROUP_B, 1) >= spec.alpha(GROUP_B, 0)
    )
    return bool(labels_ok and lhs >= rhs)


def sp_condition_terms(spec: ClusterSpec) -> Tuple[float, float]:
    """Both sides of the condition inequality, evaluated at theta_bar."""
    tb = threshold_closed_form(spec)
    s2 = 2.0 * spec.sigma**2

    def term(alpha: float, mu: float) -> float:
        return alpha * math.exp(-((tb - mu) ** 2) / s2) * (tb - mu)

    lhs = term(spec.alpha(GROUP_A, 0), spec.mu_0_a) - term(spec.alpha(GROUP_B, 1), spec.mu_1_b)
    rhs = term(spec.alpha(GROUP_B, 0), spec.mu_0_b) - term(spec.alpha(GROUP_A, 1), spec.mu_1_a)
    return lhs, rhs


def crossing_point(mu_first: float, mu_second: float) -> float:
    """x where two equal-variance Gaussian densities intersect (midpoint)."""
    return 0.5 * (mu_first + mu_second)


@dataclass(frozen=True)
class GapCurvePoint:
    theta: float
    gap: float


def gap_curve(
    spec: ClusterSpec,
    metric: MetricLike,
    theta_range: Optional[Tuple[float, float]] = None,
    n_points: int = 201,
) -> List[GapCurvePoint]:
    """Uniformly sampled analytic gap over a theta interval."""
    if n_points < 2:
        raise ValidationError("n_points must be >= 2")
    if theta_range is None:
        theta_range = _search_interval([spec])
    lo, hi = theta_range
    if not hi > lo:
        raise ValidationError("theta_range must be increasing")
    thetas = np.linspace(lo, hi, n_points)
    gaps = analytic_gap(spec, thetas, metric)
    return [GapCurvePoint(float(t), float(g)) for t, g in zip(thetas, gaps)]
