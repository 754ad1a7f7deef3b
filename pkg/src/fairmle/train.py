"""Training procedures m0..m4 for effect-constrained prediction.

m0  unconstrained factor-wise MLE.
m1  constrained MLE: maximize the observed-data likelihood subject to the
    chosen effect estimate lying in [eps_l, eps_u], via an exterior quadratic
    penalty with geometrically increasing weight; only the factors appearing
    in the chosen estimator move, the rest stay at their MLEs.
m2  reparameterized MLE: refit the outcome regression in the form where the
    effect is a single coefficient, pinned to zero (plain OLS, see reparam).
m3  hybrid MLE: empirical-likelihood weights on the baseline distribution
    tied to the parametric factors through the moment constraint
    sum_i p_i * m(x_i; theta) = 0; solved by maximizing the profiled objective
    parametric-loglik(theta) - sum_i log(1 + lambda*(theta) m_i(theta)),
    whose gradient follows from the envelope theorem.
m4  hybrid reparameterized MLE: alternate (i) per-row effect values from the
    current reparameterized model, (ii) multiplier solve, (iii) weight update,
    (iv) weighted reparameterized refit with the effect coefficient pinned,
    until the parameter and weight updates fall below a sup-norm tolerance.

Batch prediction for masked rows follows each method's averaging rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from . import el, glm
from .dataset import Dataset
from .designs import GraphDesigns, covariate_terms, default_designs
from .effects import (
    CfDesigns,
    ESTIMATORS,
    PseFunctional,
    aipw_stats,
    default_functional,
    estimate,
    ipw_stats,
    mixed_stats,
    plugin_stats,
    unit_effect,
)
from .errors import ConvergenceError, InfeasibleConstraintError
from .reparam import ReparamOutcomeModel, fit_reparam_outcome

METHODS = ("m0", "m1", "m2", "m3", "m4")

PENALTY_INIT = 10.0
PENALTY_GROWTH = 10.0
PENALTY_MAX_STAGES = 16


@dataclass(frozen=True)
class TrainConfig:
    method: str
    graph: str = "one-mediator"
    estimator: str = "gformula"
    epsilon: tuple[float, float] = (-0.05, 0.05)
    constraint_tol: float = 1e-6
    grad_tol: float = 1e-6
    outer_tol: float = 1e-6
    max_outer_iters: int = 200
    designs: GraphDesigns | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.epsilon[0] > self.epsilon[1]:
            raise ValueError("epsilon bounds must satisfy eps_l <= eps_u")
        if self.method in ("m2", "m3", "m4") and self.estimator != "gformula":
            raise ValueError(f"{self.method} supports the plug-in (gformula) effect only")
        if self.graph == "two-mediator" and self.estimator != "gformula":
            raise ValueError("ipw/mixed/aipw estimators are defined for the one-mediator graph")

    def functional(self) -> PseFunctional:
        return default_functional(self.graph, self.estimator)

    def resolved_designs(self) -> GraphDesigns:
        return self.designs if self.designs is not None else default_designs(self.graph)


@dataclass
class FitResult:
    method: str
    params: glm.GlmParams
    loglik: float
    effect_at_fit: float
    predictions: np.ndarray
    el_state: el.ElState | None = None
    reparam_model: ReparamOutcomeModel | None = None
    diagnostics: dict = field(default_factory=dict)


def fit(ds: Dataset, config: TrainConfig) -> FitResult:
    """Dispatch to the configured training procedure."""
    if (config.graph == "two-mediator") != ds.has_l:
        raise ValueError("config graph does not match dataset columns")
    return {
        "m0": fit_unconstrained,
        "m1": fit_constrained_standard,
        "m2": fit_reparam,
        "m3": fit_hybrid,
        "m4": fit_hybrid_reparam,
    }[config.method](ds, config)


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------


def _maximize(neg_fun_grad, x0: np.ndarray, gtol: float, maxiter: int = 500):
    """BFGS plus a gradient-only Newton polish.

    Near the optimum the remaining objective improvement falls below float64
    resolution of the objective value, so Wolfe line searches stall slightly
    above tight gradient tolerances; polishing with the accumulated inverse
    Hessian, accepting steps purely on gradient-norm decrease, closes the gap.
    """
    res = scipy.optimize.minimize(neg_fun_grad, x0, jac=True, method="BFGS",
                                  options={"gtol": gtol, "maxiter": maxiter})
    x, grad, hess_inv = res.x, res.jac, res.hess_inv
    for _ in range(30):
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm <= gtol:
            break
        cand = x - hess_inv @ grad
        _, cand_grad = neg_fun_grad(cand)
        if float(np.max(np.abs(cand_grad))) >= grad_norm:
            break
        x, grad = cand, cand_grad
    return x, float(np.max(np.abs(grad)))


def _gaussian_profiled(X: np.ndarray, y: np.ndarray, theta: np.ndarray):
    """Gaussian loglik with the noise variance profiled out, and its gradient."""
    resid = y - X @ theta
    n = y.shape[0]
    sig2 = float(np.mean(resid**2))
    ll = -0.5 * n * (np.log(2.0 * np.pi * sig2) + 1.0)
    grad = X.T @ resid / sig2
    return ll, grad, np.sqrt(sig2)


class _Blocks:
    """Pack/unpack named coefficient blocks into one optimizer vector."""

    def __init__(self, init: dict[str, np.ndarray]):
        self.names = list(init)
        self.sizes = [init[k].size for k in self.names]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.x0 = np.concatenate([init[k] for k in self.names])

    def split(self, vec: np.ndarray) -> dict[str, np.ndarray]:
        return {
            k: vec[self.offsets[i]: self.offsets[i + 1]]
            for i, k in enumerate(self.names)
        }

    def join(self, grads: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([grads[k] for k in self.names])


def _rebuild_params(mle: glm.GlmParams, designs: GraphDesigns, theta: dict[str, np.ndarray],
                    sigma: float | None) -> glm.GlmParams:
    a_model = glm.LogisticModel(designs.a, theta["a"]) if "a" in theta else mle.a_model
    m_model = glm.LogisticModel(designs.m, theta["m"]) if "m" in theta else mle.m_model
    l_model = mle.l_model
    if "l" in theta:
        l_model = glm.LogisticModel(designs.l, theta["l"])
    y_model = mle.y_model
    if "y" in theta:
        y_model = glm.LinearModel(designs.y, theta["y"], sigma)
    return glm.GlmParams(a_model=a_model, m_model=m_model, y_model=y_model, l_model=l_model)


def _full_loglik(ds: Dataset, params: glm.GlmParams) -> float:
    return glm.observed_data_loglik(ds, params)


def _mean_given_ax(params, x, a):
    """Model E[Y | a, x]: outcome mean with all mediators integrated out."""
    pm1 = params.m_model.prob(x=x, a=a)
    if not params.has_l:
        return (
            params.y_model.mean(x=x, a=a, m=0.0) * (1.0 - pm1)
            + params.y_model.mean(x=x, a=a, m=1.0) * pm1
        )
    total = 0.0
    for m_val, pm in ((0.0, 1.0 - pm1), (1.0, pm1)):
        pl1 = params.l_model.prob(x=x, a=a, m=m_val)
        total = total + pm * (
            params.y_model.mean(x=x, a=a, m=m_val, l=0.0) * (1.0 - pl1)
            + params.y_model.mean(x=x, a=a, m=m_val, l=1.0) * pl1
        )
    return total


def _mean_given_x(params, x):
    """Model E[Y | x]: treatment and mediators integrated out."""
    pa1 = params.a_model.prob(x=x)
    return _mean_given_ax(params, x, 0.0) * (1.0 - pa1) + _mean_given_ax(params, x, 1.0) * pa1


def _mean_given_mx(params, x, m):
    """Model E[Y | m, x] via Bayes weights over the treatment arm."""
    pa1 = params.a_model.prob(x=x)
    qm = {a: np.where(m == 1.0, params.m_model.prob(x=x, a=a), 1.0 - params.m_model.prob(x=x, a=a))
          for a in (0.0, 1.0)}
    w1 = qm[1.0] * pa1
    w0 = qm[0.0] * (1.0 - pa1)
    mu1 = params.y_model.mean(x=x, a=1.0, m=m)
    mu0 = params.y_model.mean(x=x, a=0.0, m=m)
    return (mu1 * w1 + mu0 * w0) / (w1 + w0)


def predict(ds: Dataset, result: FitResult, config: TrainConfig) -> np.ndarray:
    """Predicted outcomes for the masked (r == 0) rows, in row order.

    m0, m3, m4 predict the direct conditional mean at the observed covariates;
    m1 averages out the covariates tied up by its estimator (mediators for the
    plug-in, treatment and mediators for ipw/aipw, treatment for mixed); m2
    averages the reparameterized mean over the mediators.
    """
    new = ds.r == 0
    x = ds.x[new]
    a = ds.a[new]
    m = ds.m[new]
    l = None if ds.l is None else ds.l[new]
    params = result.params
    if config.method in ("m0", "m3", "m4"):
        return np.asarray(params.y_model.mean(x=x, a=a, m=m, l=l))
    if config.method == "m2" or config.estimator == "gformula":
        return np.asarray(_mean_given_ax(params, x, a))
    if config.estimator in ("ipw", "aipw"):
        return np.asarray(_mean_given_x(params, x))
    return np.asarray(_mean_given_mx(params, x, m))


def _finalize(ds, config, params, effect, el_state=None, reparam_model=None, diagnostics=None):
    result = FitResult(
        method=config.method,
        params=params,
        loglik=_full_loglik(ds, params),
        effect_at_fit=float(effect),
        predictions=np.empty(0),
        el_state=el_state,
        reparam_model=reparam_model,
        diagnostics=diagnostics or {},
    )
    result.predictions = predict(ds, result, config)
    return result


# ---------------------------------------------------------------------------
# m0: unconstrained MLE
# ---------------------------------------------------------------------------


def fit_unconstrained(ds: Dataset, config: TrainConfig) -> FitResult:
    designs = config.resolved_designs()
    params = glm.fit_factors(ds, designs)
    effect = estimate(ds, params, config.functional()).value
    return _finalize(ds, config, params, effect, diagnostics={"converged": True})


# ---------------------------------------------------------------------------
# m1: penalty-method constrained MLE
# ---------------------------------------------------------------------------

# Factors allowed to move, per estimator (the ones its formula contains).
_MOVING = {
    "gformula": ("y", "m"),
    "ipw": ("a", "m"),
    "mixed": ("a", "y"),
    "aipw": ("a", "m", "y"),
}


def _violation(g: float, eps: tuple[float, float]) -> float:
    return max(0.0, g - eps[1], eps[0] - g)


def fit_constrained_standard(ds: Dataset, config: TrainConfig) -> FitResult:
    designs = config.resolved_designs()
    mle = glm.fit_factors(ds, designs)
    functional = config.functional()
    cf = CfDesigns(ds, designs)
    moving = list(_MOVING[config.estimator])
    if config.estimator == "gformula" and designs.has_l:
        moving.append("l")

    init = {}
    for name in moving:
        model = {"a": mle.a_model, "m": mle.m_model, "y": mle.y_model, "l": mle.l_model}[name]
        init[name] = np.asarray(model.coef, dtype=float)
    blocks = _Blocks(init)

    obs = cf.obs
    Xy_obs = designs.y.matrix(x=ds.x[obs], a=ds.a[obs], m=ds.m[obs],
                              l=None if ds.l is None else ds.l[obs])
    y_obs = ds.y[obs]
    Xl_obs = None
    if designs.has_l:
        Xl_obs = designs.l.matrix(x=ds.x, a=ds.a, m=ds.m)

    def estimator_value_grads(theta):
        t_a = theta.get("a", mle.a_model.coef)
        t_m = theta.get("m", mle.m_model.coef)
        t_y = theta.get("y", mle.y_model.coef)
        t_l = theta.get("l", mle.l_model.coef if mle.has_l else None)
        if config.estimator == "gformula":
            vals, d_y, d_m, d_l = plugin_stats(cf, functional, t_y, t_m, t_l)
            grads = {"y": d_y.mean(axis=0), "m": d_m.mean(axis=0)}
            if d_l is not None:
                grads["l"] = d_l.mean(axis=0)
            return float(vals.mean()), grads
        if config.estimator == "ipw":
            value, d_a, d_m = ipw_stats(cf, t_a, t_m)
            return value, {"a": d_a, "m": d_m}
        if config.estimator == "mixed":
            value, d_a, d_y = mixed_stats(cf, t_a, t_y)
            return value, {"a": d_a, "y": d_y}
        value, d_a, d_m, d_y = aipw_stats(cf, t_a, t_m, t_y)
        return value, {"a": d_a, "m": d_m, "y": d_y}

    def loglik_value_grads(theta):
        total = 0.0
        grads = {}
        if "a" in theta:
            total += glm.logistic_loglik(cf.Xa, theta["a"], ds.a)
            grads["a"] = glm.logistic_score(cf.Xa, theta["a"], ds.a)
        if "m" in theta:
            total += glm.logistic_loglik(cf.Xm_obs, theta["m"], ds.m)
            grads["m"] = glm.logistic_score(cf.Xm_obs, theta["m"], ds.m)
        if "l" in theta:
            total += glm.logistic_loglik(Xl_obs, theta["l"], ds.l)
            grads["l"] = glm.logistic_score(Xl_obs, theta["l"], ds.l)
        sigma = None
        if "y" in theta:
            ll_y, g_y, sigma = _gaussian_profiled(Xy_obs, y_obs, theta["y"])
            total += ll_y
            grads["y"] = g_y
        return total, grads, sigma

    eps = config.epsilon
    g0, _ = estimator_value_grads(blocks.split(blocks.x0))
    diagnostics = {"stages": 0, "inner_grad_norm": 0.0}
    x_cur = blocks.x0
    if _violation(g0, eps) <= config.constraint_tol:
        theta = blocks.split(x_cur)
        _, _, sigma = loglik_value_grads(theta)
        params = _rebuild_params(mle, designs, theta, sigma)
        effect = estimate(ds, params, functional).value
        diagnostics.update(converged=True, violation=_violation(g0, eps), penalty=0.0)
        return _finalize(ds, config, params, effect, diagnostics=diagnostics)

    rho = PENALTY_INIT
    for stage in range(1, PENALTY_MAX_STAGES + 1):
        def neg_obj(vec, rho=rho):
            theta = blocks.split(vec)
            ll, ll_grads, _ = loglik_value_grads(theta)
            g, g_grads = estimator_value_grads(theta)
            v = _violation(g, eps)
            obj = ll - rho * v * v
            grads = {}
            sign = 1.0 if g > eps[1] else -1.0
            for name in blocks.names:
                grads[name] = ll_grads[name] - (2.0 * rho * v * sign) * g_grads[name]
            return -obj, -blocks.join(grads)

        x_cur, grad_norm = _maximize(neg_obj, x_cur, config.grad_tol)
        g, _ = estimator_value_grads(blocks.split(x_cur))
        viol = _violation(g, eps)
        diagnostics.update(stages=stage, inner_grad_norm=grad_norm, violation=viol, penalty=rho)
        if viol <= config.constraint_tol:
            break
        rho *= PENALTY_GROWTH
    else:
        raise ConvergenceError(
            f"penalty method failed to reach feasibility (violation {viol:.3e})",
            diagnostics,
        )

    theta = blocks.split(x_cur)
    _, _, sigma = loglik_value_grads(theta)
    params = _rebuild_params(mle, designs, theta, sigma)
    effect = estimate(ds, params, functional).value
    diagnostics["converged"] = True
    return _finalize(ds, config, params, effect, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# m2: reparameterized MLE with the effect coefficient pinned at zero
# ---------------------------------------------------------------------------


def fit_reparam(ds: Dataset, config: TrainConfig) -> FitResult:
    designs = config.resolved_designs()
    mle = glm.fit_factors(ds, designs)
    functional = config.functional()
    weights = np.full(ds.n, 1.0 / ds.n)
    model = fit_reparam_outcome(
        ds, covariate_terms(designs.y), functional, mle.m_model, mle.l_model, weights
    )
    params = glm.GlmParams(mle.a_model, mle.m_model, model, mle.l_model)
    return _finalize(
        ds, config, params, model.treatment_coef,
        reparam_model=model, diagnostics={"converged": True},
    )


# ---------------------------------------------------------------------------
# m3: hybrid (empirical-likelihood) constrained MLE
# ---------------------------------------------------------------------------


def fit_hybrid(ds: Dataset, config: TrainConfig) -> FitResult:
    designs = config.resolved_designs()
    mle = glm.fit_factors(ds, designs)
    functional = config.functional()
    cf = CfDesigns(ds, designs)

    init = {"y": np.asarray(mle.y_model.coef), "m": np.asarray(mle.m_model.coef)}
    if designs.has_l:
        init["l"] = np.asarray(mle.l_model.coef)
    blocks = _Blocks(init)

    obs = cf.obs
    Xy_obs = designs.y.matrix(x=ds.x[obs], a=ds.a[obs], m=ds.m[obs],
                              l=None if ds.l is None else ds.l[obs])
    y_obs = ds.y[obs]
    Xl_obs = None
    if designs.has_l:
        Xl_obs = designs.l.matrix(x=ds.x, a=ds.a, m=ds.m)

    def neg_obj(vec):
        theta = blocks.split(vec)
        ll_y, g_y, _ = _gaussian_profiled(Xy_obs, y_obs, theta["y"])
        ll_m = glm.logistic_loglik(cf.Xm_obs, theta["m"], ds.m)
        g_m = glm.logistic_score(cf.Xm_obs, theta["m"], ds.m)
        total = ll_y + ll_m
        grads = {"y": g_y, "m": g_m}
        t_l = None
        if "l" in theta:
            t_l = theta["l"]
            total += glm.logistic_loglik(Xl_obs, t_l, ds.l)
            grads["l"] = glm.logistic_score(Xl_obs, t_l, ds.l)
        vals, d_y, d_m, d_l = plugin_stats(cf, functional, theta["y"], theta["m"], t_l)
        try:
            lam = el.solve_lambda(vals)
        except InfeasibleConstraintError:
            return np.inf, np.zeros_like(vec)
        denom = 1.0 + lam * vals
        total += float(-np.sum(np.log(denom)))
        # envelope theorem: d/dtheta of the profiled dual term needs no dlam
        scale = -lam / denom
        grads["y"] = grads["y"] + d_y.T @ scale
        grads["m"] = grads["m"] + d_m.T @ scale
        if d_l is not None:
            grads["l"] = grads["l"] + d_l.T @ scale
        return -total, -blocks.join(grads)

    f0, _ = neg_obj(blocks.x0)
    if not np.isfinite(f0):
        raise InfeasibleConstraintError(
            "per-unit effect values are one-signed at the MLE; the hybrid moment "
            "constraint has no interior solution"
        )
    x_opt, grad_norm = _maximize(neg_obj, blocks.x0, config.grad_tol)
    if grad_norm > config.grad_tol:
        raise ConvergenceError(
            f"hybrid objective stalled at gradient norm {grad_norm:.3e}",
            {"grad_norm": grad_norm},
        )
    theta = blocks.split(x_opt)
    _, _, sigma = _gaussian_profiled(Xy_obs, y_obs, theta["y"])
    params = _rebuild_params(mle, designs, theta, sigma)
    vals = unit_effect(params, ds.x, functional)
    state = el.solve_state(vals)
    # The effect under the fitted fair world weighs the per-unit values by the
    # EL weights, which is the constrained quantity (zero at the optimum); the
    # unweighted average is kept as a diagnostic.
    effect = float(np.sum(state.weights * vals))
    diagnostics = {
        "converged": True,
        "grad_norm": grad_norm,
        "constraint_residual": float(np.sum(state.weights * vals)),
        "unweighted_effect": float(np.mean(vals)),
        "el_logterm": float(np.sum(state.log_weights)),
    }
    return _finalize(ds, config, params, effect, el_state=state, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# m4: hybrid reparameterized MLE (iterative weights <-> pinned refit)
# ---------------------------------------------------------------------------


def fit_hybrid_reparam(ds: Dataset, config: TrainConfig) -> FitResult:
    designs = config.resolved_designs()
    mle = glm.fit_factors(ds, designs)
    functional = config.functional()
    cov_design = covariate_terms(designs.y)

    weights = np.full(ds.n, 1.0 / ds.n)
    model = fit_reparam_outcome(ds, cov_design, functional, mle.m_model, mle.l_model, weights)
    coef_vec = np.concatenate([[model.intercept], model.coef])

    lam = 0.0
    updates: list[float] = []
    converged = False
    for iteration in range(1, config.max_outer_iters + 1):
        params = glm.GlmParams(mle.a_model, mle.m_model, model, mle.l_model)
        vals = unit_effect(params, ds.x, functional)
        lam = el.solve_lambda(vals)
        new_weights = el.weights_from_lambda(vals, lam)
        new_model = fit_reparam_outcome(
            ds, cov_design, functional, mle.m_model, mle.l_model, new_weights
        )
        new_vec = np.concatenate([[new_model.intercept], new_model.coef])
        delta = max(
            float(np.max(np.abs(new_vec - coef_vec))),
            float(np.max(np.abs(new_weights - weights))),
        )
        updates.append(delta)
        weights, model, coef_vec = new_weights, new_model, new_vec
        if delta <= config.outer_tol:
            converged = True
            break
        if len(updates) >= 21 and updates[-1] >= updates[-21]:
            raise ConvergenceError(
                "hybrid reparameterized iteration is oscillating",
                {"updates": updates},
            )
    if not converged:
        raise ConvergenceError(
            f"hybrid reparameterized fit did not converge in {config.max_outer_iters} iterations",
            {"updates": updates},
        )

    params = glm.GlmParams(mle.a_model, mle.m_model, model, mle.l_model)
    vals = unit_effect(params, ds.x, functional)
    state = el.ElState(lam=lam, weights=weights)
    diagnostics = {
        "converged": True,
        "outer_iterations": iteration,
        "updates": updates,
        "constraint_residual": float(np.sum(weights * vals)),
    }
    return _finalize(
        ds, config, params, model.treatment_coef,
        el_state=state, reparam_model=model, diagnostics=diagnostics,
    )
