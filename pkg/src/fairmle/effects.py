"""Path-specific-effect functionals and the four direct-effect estimators.

A functional names a mediation graph, the treatment edges that carry the
treated value (the remaining edges hold the reference value), and an
estimation strategy.  The per-covariate contribution

    unit_effect(x) = E-hat[Y(pi, 1, 0) | x] - E-hat[Y(0) | x]

is an exact sum over the binary mediators using the fitted factor models, and
every plug-in effect is a weighted empirical average of it.  The natural
direct effect additionally supports inverse-probability-weighted, mixed, and
augmented (AIPW) estimators; those consume observed outcomes and are
restricted to complete cases with renormalization when outcomes are MAR.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .designs import GraphDesigns
from .errors import PositivityError

ESTIMATORS = ("gformula", "ipw", "mixed", "aipw")

# Inverse-probability weights below this probability raise PositivityError.
POSITIVITY_FLOOR = 1e-6
# Optimizer-internal evaluations clip instead of raising so that line
# searches can step through (and retreat from) extreme parameter values.
_CLIP_FLOOR = 1e-12


@dataclass(frozen=True)
class PseFunctional:
    """A path-specific contrast: which treatment edges are switched on.

    ``treated_edges`` is a subset of {"y", "m", "l"}: the A->Y edge, the edges
    into the first mediator, and the edges into the second mediator.  The
    direct edge "y" must be included (the reparameterization and the box
    constraint both hinge on it).  The contrast compares treated value 1 on
    those edges against reference value 0 everywhere.
    """

    graph: str
    treated_edges: frozenset[str] = field(default_factory=lambda: frozenset({"y"}))
    estimator: str = "gformula"
    contrast: tuple[int, int] = (1, 0)

    def __post_init__(self):
        object.__setattr__(self, "treated_edges", frozenset(self.treated_edges))
        if self.graph not in ("one-mediator", "two-mediator"):
            raise ValueError(f"unknown graph {self.graph!r}")
        allowed = {"y", "m"} if self.graph == "one-mediator" else {"y", "m", "l"}
        if not self.treated_edges <= allowed:
            raise ValueError(f"treated edges {set(self.treated_edges)} not in {allowed}")
        if "y" not in self.treated_edges:
            raise ValueError("the direct edge 'y' must be part of the constrained paths")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.estimator != "gformula" and not self.is_nde:
            raise ValueError(f"{self.estimator} is defined only for the natural direct effect")
        if self.contrast != (1, 0):
            raise ValueError("only the (1, 0) contrast is supported")

    @property
    def is_nde(self) -> bool:
        return self.graph == "one-mediator" and self.treated_edges == {"y"}

    def arm_assignment(self, treated: bool) -> dict[str, float]:
        """Edge-wise treatment values for the treated or reference arm."""
        hi, lo = float(self.contrast[0]), float(self.contrast[1])
        edges = ("y", "m") if self.graph == "one-mediator" else ("y", "m", "l")
        if not treated:
            return {e: lo for e in edges}
        return {e: (hi if e in self.treated_edges else lo) for e in edges}


def nde_functional(estimator: str = "gformula") -> PseFunctional:
    return PseFunctional(graph="one-mediator", treated_edges=frozenset({"y"}), estimator=estimator)


def two_mediator_pse() -> PseFunctional:
    """Direct edge plus all paths through the first mediator."""
    return PseFunctional(graph="two-mediator", treated_edges=frozenset({"y", "m"}))


def total_effect_functional(graph: str) -> PseFunctional:
    edges = {"y", "m"} if graph == "one-mediator" else {"y", "m", "l"}
    return PseFunctional(graph=graph, treated_edges=frozenset(edges))


def default_functional(graph: str, estimator: str = "gformula") -> PseFunctional:
    return nde_functional(estimator) if graph == "one-mediator" else two_mediator_pse()


@dataclass(frozen=True)
class EffectEstimate:
    """An effect value together with its per-row decomposition.

    ``value`` equals the weighted sum of ``per_unit`` (uniform 1/n weights
    unless explicit weights were supplied).
    """

    value: float
    per_unit: np.ndarray
    estimator: str


def _arm_mean(params, x: np.ndarray, assign: dict[str, float]) -> np.ndarray:
    """E-hat[Y(arm) | x]: outcome mean integrated over the mediator laws.

    The first mediator is drawn at the arm's "m" treatment value; the second
    (if present) at the arm's "l" value given each m; the outcome mean is
    evaluated at the arm's "y" value.  Exact enumeration over binary states.
    """
    a_y, a_m = assign["y"], assign["m"]
    pm1 = params.m_model.prob(x=x, a=a_m)
    if not params.has_l:
        mu0 = params.y_model.mean(x=x, a=a_y, m=0.0)
        mu1 = params.y_model.mean(x=x, a=a_y, m=1.0)
        return mu0 * (1.0 - pm1) + mu1 * pm1
    a_l = assign["l"]
    total = np.zeros_like(np.asarray(x, dtype=float))
    for m_val, pm in ((0.0, 1.0 - pm1), (1.0, pm1)):
        pl1 = params.l_model.prob(x=x, a=a_l, m=m_val)
        mu0 = params.y_model.mean(x=x, a=a_y, m=m_val, l=0.0)
        mu1 = params.y_model.mean(x=x, a=a_y, m=m_val, l=1.0)
        total = total + pm * (mu0 * (1.0 - pl1) + mu1 * pl1)
    return total


def unit_effect(params, x, functional: PseFunctional) -> np.ndarray:
    """Per-covariate-value effect contribution m(x) for a plug-in contrast."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if functional.graph == "two-mediator" and not params.has_l:
        raise ValueError("two-mediator functional needs a fitted l model")
    treated = _arm_mean(params, x, functional.arm_assignment(True))
    reference = _arm_mean(params, x, functional.arm_assignment(False))
    return treated - reference


def _weighted_estimate(per_unit: np.ndarray, weights, tag: str) -> EffectEstimate:
    if weights is None:
        value = float(np.mean(per_unit))
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != per_unit.shape:
            raise ValueError("weights length does not match dataset")
        value = float(np.sum(w * per_unit))
    return EffectEstimate(value=value, per_unit=per_unit, estimator=tag)


def plugin_effect(ds, params, functional: PseFunctional, weights=None) -> EffectEstimate:
    """Empirical (or weighted) average of unit_effect over the rows of ds."""
    return _weighted_estimate(unit_effect(params, ds.x, functional), weights, "gformula")


def nde_gformula(ds, params, weights=None) -> EffectEstimate:
    """Plug-in natural direct effect from the outcome and mediator models."""
    return plugin_effect(ds, params, nde_functional(), weights)


def pse_edge_gformula(ds, params, functional: PseFunctional | None = None, weights=None) -> EffectEstimate:
    """Plug-in path-specific effect on the two-mediator graph."""
    functional = functional or two_mediator_pse()
    if functional.graph != "two-mediator":
        raise ValueError("pse_edge_gformula expects a two-mediator functional")
    return plugin_effect(ds, params, functional, weights)


def _checked_probs(p: np.ndarray, what: str, clip: bool, both_sides: bool = True) -> np.ndarray:
    if clip:
        hi = 1.0 - _CLIP_FLOOR if both_sides else 1.0
        return np.clip(p, _CLIP_FLOOR, hi)
    bad = p < POSITIVITY_FLOOR
    if both_sides:
        bad |= p > 1.0 - POSITIVITY_FLOOR
    if np.any(bad):
        raise PositivityError(f"{what} below positivity floor {POSITIVITY_FLOOR:g}")
    return p


def nde_ipw(ds, params) -> EffectEstimate:
    """Inverse-probability-weighted NDE from the treatment and mediator models.

    Uses observed outcomes only; with MAR-masked outcomes the average runs
    over complete cases with 1/P_n(r=1) renormalization.
    """
    value, per_unit = _ipw_value(ds, params.a_model, params.m_model, clip=False)
    return EffectEstimate(value=value, per_unit=per_unit, estimator="ipw")


def nde_mixed(ds, params) -> EffectEstimate:
    """Propensity-weighted contrast of outcome-model values at observed m."""
    value, per_unit = _mixed_value(ds, params.a_model, params.y_model, clip=False)
    return EffectEstimate(value=value, per_unit=per_unit, estimator="mixed")


def nde_aipw(ds, params) -> EffectEstimate:
    """Augmented IPW estimator of the NDE using all three models."""
    value, per_unit = _aipw_value(ds, params.a_model, params.m_model, params.y_model, clip=False)
    return EffectEstimate(value=value, per_unit=per_unit, estimator="aipw")


def estimate(ds, params, functional: PseFunctional, weights=None) -> EffectEstimate:
    """Dispatch on the functional's estimator."""
    if functional.estimator == "gformula":
        return plugin_effect(ds, params, functional, weights)
    if weights is not None:
        raise ValueError("weighted averaging applies to plug-in estimators only")
    return {"ipw": nde_ipw, "mixed": nde_mixed, "aipw": nde_aipw}[functional.estimator](ds, params)


def _mediator_density_pair(m_model, x, m_obs, a_val):
    """(P(M = m_obs | a_val, x), fitted success prob) at a counterfactual a."""
    pm1 = m_model.prob(x=x, a=a_val)
    return np.where(m_obs == 1.0, pm1, 1.0 - pm1), pm1


def _ipw_value(ds, a_model, m_model, clip: bool):
    obs = ds.r == 1
    pa1 = _checked_probs(a_model.prob(x=ds.x), "treatment propensity", clip)
    q0, _ = _mediator_density_pair(m_model, ds.x, ds.m, 0.0)
    q1, _ = _mediator_density_pair(m_model, ds.x, ds.m, 1.0)
    q1 = _checked_probs(q1, "mediator density", clip, both_sides=False)
    ratio = q0 / q1
    term = ds.a / pa1 * ratio * np.where(obs, ds.y, 0.0) - (1.0 - ds.a) / (1.0 - pa1) * np.where(obs, ds.y, 0.0)
    n1 = int(np.sum(obs))
    value = float(np.sum(term[obs]) / n1)
    per_unit = np.where(obs, term, 0.0) * (ds.n / n1)
    return value, per_unit


def _mixed_value(ds, a_model, y_model, clip: bool):
    pa1 = _checked_probs(a_model.prob(x=ds.x), "treatment propensity", clip)
    mu1 = y_model.mean(x=ds.x, a=1.0, m=ds.m)
    mu0 = y_model.mean(x=ds.x, a=0.0, m=ds.m)
    term = (1.0 - ds.a) / (1.0 - pa1) * (mu1 - mu0)
    return float(np.mean(term)), term


def _eta(y_model, m_model, x, a_val: float, a_prime: float):
    """eta(a, a', x) = sum_m E[Y | a, m, x] P(m | a', x)."""
    pm1 = m_model.prob(x=x, a=a_prime)
    mu0 = y_model.mean(x=x, a=a_val, m=0.0)
    mu1 = y_model.mean(x=x, a=a_val, m=1.0)
    return mu0 * (1.0 - pm1) + mu1 * pm1


def _aipw_value(ds, a_model, m_model, y_model, clip: bool):
    obs = ds.r == 1
    n1 = int(np.sum(obs))
    pa1 = _checked_probs(a_model.prob(x=ds.x), "treatment propensity", clip)
    q0, _ = _mediator_density_pair(m_model, ds.x, ds.m, 0.0)
    q1, _ = _mediator_density_pair(m_model, ds.x, ds.m, 1.0)
    q1 = _checked_probs(q1, "mediator density", clip, both_sides=False)
    ratio = q0 / q1
    w1 = ds.a / pa1
    w0 = (1.0 - ds.a) / (1.0 - pa1)
    mu1_obs = y_model.mean(x=ds.x, a=1.0, m=ds.m)
    eta10 = _eta(y_model, m_model, ds.x, 1.0, 0.0)
    eta00 = _eta(y_model, m_model, ds.x, 0.0, 0.0)
    y_filled = np.where(obs, ds.y, 0.0)
    # Observed-outcome augmentation groups: complete cases, renormalized.
    g1 = w1 * ratio * (y_filled - mu1_obs)
    g3 = -w0 * (y_filled - eta00)
    # Model-only groups: all rows; the reference-arm mean enters negatively.
    g2 = w0 * (mu1_obs - eta10) + eta10
    value = float(np.sum(g1[obs] + g3[obs]) / n1 + np.mean(g2 - eta00))
    per_unit = np.where(obs, g1 + g3, 0.0) * (ds.n / n1) + g2 - eta00
    return value, per_unit


# ---------------------------------------------------------------------------
# Cached counterfactual design matrices and analytic gradients.  These back
# the constrained-training objectives; every gradient is checked against
# central finite differences in the test suite.
# ---------------------------------------------------------------------------


class CfDesigns:
    """Counterfactual design matrices for one dataset, built once per fit."""

    def __init__(self, ds, designs: GraphDesigns):
        self.ds = ds
        self.designs = designs
        x = ds.x
        self.Xa = designs.a.matrix(x=x)
        self.Xm = {a: designs.m.matrix(x=x, a=a) for a in (0.0, 1.0)}
        self.Xm_obs = designs.m.matrix(x=x, a=ds.a)
        if designs.has_l:
            self.Xl = {
                (a, m): designs.l.matrix(x=x, a=a, m=m)
                for a in (0.0, 1.0)
                for m in (0.0, 1.0)
            }
            self.Xy = {
                (a, m, l): designs.y.matrix(x=x, a=a, m=m, l=l)
                for a in (0.0, 1.0)
                for m in (0.0, 1.0)
                for l in (0.0, 1.0)
            }
        else:
            self.Xl = None
            self.Xy = {(a, m): designs.y.matrix(x=x, a=a, m=m) for a in (0.0, 1.0) for m in (0.0, 1.0)}
            self.Xy_obs_m = {a: designs.y.matrix(x=x, a=a, m=ds.m) for a in (0.0, 1.0)}
        self.obs = ds.r == 1
        self.n1 = int(np.sum(self.obs))


def _arm_stats(cf: CfDesigns, assign: dict[str, float], theta_y, theta_m, theta_l=None):
    """Value and gradients of E-hat[Y(arm) | x_i] for linear/logistic factors."""
    a_y, a_m = assign["y"], assign["m"]
    Xm = cf.Xm[a_m]
    pm1 = expit(Xm @ theta_m)
    if cf.Xl is None:
        mu = {m: cf.Xy[(a_y, m)] @ theta_y for m in (0.0, 1.0)}
        val = mu[0.0] * (1.0 - pm1) + mu[1.0] * pm1
        d_y = cf.Xy[(a_y, 0.0)] * (1.0 - pm1)[:, None] + cf.Xy[(a_y, 1.0)] * pm1[:, None]
        d_m = ((mu[1.0] - mu[0.0]) * pm1 * (1.0 - pm1))[:, None] * Xm
        return val, d_y, d_m, None
    a_l = assign["l"]
    val = 0.0
    d_y = 0.0
    d_l = 0.0
    inner = {}
    for m in (0.0, 1.0):
        Xl = cf.Xl[(a_l, m)]
        pl1 = expit(Xl @ theta_l)
        mu0 = cf.Xy[(a_y, m, 0.0)] @ theta_y
        mu1 = cf.Xy[(a_y, m, 1.0)] @ theta_y
        inner[m] = mu0 * (1.0 - pl1) + mu1 * pl1
        pm = pm1 if m == 1.0 else 1.0 - pm1
        val = val + pm * inner[m]
        d_y = d_y + pm[:, None] * (
            cf.Xy[(a_y, m, 0.0)] * (1.0 - pl1)[:, None] + cf.Xy[(a_y, m, 1.0)] * pl1[:, None]
        )
        d_l = d_l + (pm * (mu1 - mu0) * pl1 * (1.0 - pl1))[:, None] * Xl
    d_m = ((inner[1.0] - inner[0.0]) * pm1 * (1.0 - pm1))[:, None] * Xm
    return val, d_y, d_m, d_l


def plugin_stats(cf: CfDesigns, functional: PseFunctional, theta_y, theta_m, theta_l=None):
    """Per-row plug-in effect values and their gradients.

    Returns (values, d_theta_y, d_theta_m, d_theta_l), each per-row; the
    l-gradient is None on the one-mediator graph.
    """
    v1, dy1, dm1, dl1 = _arm_stats(cf, functional.arm_assignment(True), theta_y, theta_m, theta_l)
    v0, dy0, dm0, dl0 = _arm_stats(cf, functional.arm_assignment(False), theta_y, theta_m, theta_l)
    d_l = None if dl1 is None else dl1 - dl0
    return v1 - v0, dy1 - dy0, dm1 - dm0, d_l


def ipw_stats(cf: CfDesigns, theta_a, theta_m, clip: bool = True):
    """IPW NDE value and gradients w.r.t. the treatment and mediator models."""
    ds, obs, n1 = cf.ds, cf.obs, cf.n1
    pa1 = _checked_probs(expit(cf.Xa @ theta_a), "treatment propensity", clip)
    pm1_0 = expit(cf.Xm[0.0] @ theta_m)
    pm1_1 = expit(cf.Xm[1.0] @ theta_m)
    q0 = np.where(ds.m == 1.0, pm1_0, 1.0 - pm1_0)
    q1 = _checked_probs(np.where(ds.m == 1.0, pm1_1, 1.0 - pm1_1), "mediator density", clip, both_sides=False)
    ratio = q0 / q1
    y = np.where(obs, ds.y, 0.0)
    arm1 = ds.a / pa1 * ratio * y
    arm0 = (1.0 - ds.a) / (1.0 - pa1) * y
    value = float(np.sum((arm1 - arm0)[obs]) / n1)
    # d(1/pa1) = -(1-pa1)/pa1 * Xa ; d(1/(1-pa1)) = pa1/(1-pa1) * Xa
    coef_a = np.where(obs, -arm1 * (1.0 - pa1) - arm0 * pa1, 0.0)
    d_a = cf.Xa.T @ coef_a / n1
    d_ratio_coef = (ds.m - pm1_0)[:, None] * cf.Xm[0.0] - (ds.m - pm1_1)[:, None] * cf.Xm[1.0]
    d_m = d_ratio_coef.T @ np.where(obs, arm1, 0.0) / n1
    return value, d_a, d_m


def mixed_stats(cf: CfDesigns, theta_a, theta_y, clip: bool = True):
    """Mixed-estimator NDE value and gradients (treatment and outcome models)."""
    ds = cf.ds
    pa1 = _checked_probs(expit(cf.Xa @ theta_a), "treatment propensity", clip)
    w0 = (1.0 - ds.a) / (1.0 - pa1)
    mu1 = cf.Xy_obs_m[1.0] @ theta_y
    mu0 = cf.Xy_obs_m[0.0] @ theta_y
    value = float(np.mean(w0 * (mu1 - mu0)))
    d_a = cf.Xa.T @ (w0 * (mu1 - mu0) * pa1) / ds.n
    d_y = ((cf.Xy_obs_m[1.0] - cf.Xy_obs_m[0.0]) * w0[:, None]).mean(axis=0)
    return value, d_a, d_y


def aipw_stats(cf: CfDesigns, theta_a, theta_m, theta_y, clip: bool = True):
    """AIPW NDE value and gradients with respect to all three models."""
    ds, obs, n1, n = cf.ds, cf.obs, cf.n1, cf.ds.n
    pa1 = _checked_probs(expit(cf.Xa @ theta_a), "treatment propensity", clip)
    pm1_0 = expit(cf.Xm[0.0] @ theta_m)
    pm1_1 = expit(cf.Xm[1.0] @ theta_m)
    q0 = np.where(ds.m == 1.0, pm1_0, 1.0 - pm1_0)
    q1 = _checked_probs(np.where(ds.m == 1.0, pm1_1, 1.0 - pm1_1), "mediator density", clip, both_sides=False)
    ratio = q0 / q1
    w1 = ds.a / pa1
    w0 = (1.0 - ds.a) / (1.0 - pa1)
    mu1_obs = cf.Xy_obs_m[1.0] @ theta_y
    mu_cf = {(a, m): cf.Xy[(a, m)] @ theta_y for a in (0.0, 1.0) for m in (0.0, 1.0)}
    eta10 = mu_cf[(1.0, 0.0)] * (1.0 - pm1_0) + mu_cf[(1.0, 1.0)] * pm1_0
    eta00 = mu_cf[(0.0, 0.0)] * (1.0 - pm1_0) + mu_cf[(0.0, 1.0)] * pm1_0
    y = np.where(obs, ds.y, 0.0)
    g1 = w1 * ratio * (y - mu1_obs)
    g3 = -w0 * (y - eta00)
    g2 = w0 * (mu1_obs - eta10) + eta10
    value = float(np.sum((g1 + g3)[obs]) / n1 + np.mean(g2 - eta00))

    obs_w = np.where(obs, 1.0, 0.0) / n1
    # treatment-model gradient
    coef_a = -g1 * (1.0 - pa1) * obs_w + g3 * pa1 * obs_w + w0 * (mu1_obs - eta10) * pa1 / n
    d_a = cf.Xa.T @ coef_a
    # mediator-model gradient: the ratio in g1 plus eta10/eta00 through pm1_0
    d_ratio_coef = (ds.m - pm1_0)[:, None] * cf.Xm[0.0] - (ds.m - pm1_1)[:, None] * cf.Xm[1.0]
    d_m = d_ratio_coef.T @ (g1 * obs_w)
    deta10_dm = (mu_cf[(1.0, 1.0)] - mu_cf[(1.0, 0.0)]) * pm1_0 * (1.0 - pm1_0)
    deta00_dm = (mu_cf[(0.0, 1.0)] - mu_cf[(0.0, 0.0)]) * pm1_0 * (1.0 - pm1_0)
    d_m = d_m + cf.Xm[0.0].T @ ((1.0 - w0) / n * deta10_dm + (w0 * obs_w - 1.0 / n) * deta00_dm)
    # outcome-model gradient
    deta10_dy = cf.Xy[(1.0, 0.0)] * (1.0 - pm1_0)[:, None] + cf.Xy[(1.0, 1.0)] * pm1_0[:, None]
    deta00_dy = cf.Xy[(0.0, 0.0)] * (1.0 - pm1_0)[:, None] + cf.Xy[(0.0, 1.0)] * pm1_0[:, None]
    d_y = (
        -(cf.Xy_obs_m[1.0].T @ (w1 * ratio * obs_w))
        + cf.Xy_obs_m[1.0].T @ (w0 / n)
        + deta10_dy.T @ ((1.0 - w0) / n)
        + deta00_dy.T @ (w0 * obs_w - 1.0 / n)
    )
    return value, d_a, d_m, d_y
