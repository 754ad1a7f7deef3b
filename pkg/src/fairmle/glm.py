"""Maximum-likelihood fitting of the parametric model factors.

The joint model for a mediation graph factorizes into logistic regressions for
the sensitive feature and each binary mediator, and a Gaussian linear
regression for the outcome.  Outcomes may be missing (indicator r); under MAR
the observed-data log-likelihood simply weights the outcome factor by r.

Logistic fits use Newton iterations with step-halving; linear fits are OLS
with the MLE (1/n) variance divisor.  Both are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.special import expit

from .designs import DesignSpec, GraphDesigns
from .errors import RankDeficiencyError, SeparationError

if TYPE_CHECKING:  # pragma: no cover
    from .dataset import Dataset

# Newton iterations stop at this sup-norm of the score.
GRAD_TOL = 1e-8
MAX_NEWTON_ITER = 200
# |coefficient| beyond this is taken as divergence (separation): the fitted
# probabilities are saturated to ~1e-17 which no finite data supports.
SEPARATION_BOUND = 40.0


@dataclass(frozen=True)
class LogisticModel:
    design: DesignSpec
    coef: np.ndarray

    def logits(self, **cols) -> np.ndarray:
        return self.design.matrix(**cols) @ self.coef

    def prob(self, **cols) -> np.ndarray:
        """P(response = 1 | columns)."""
        return expit(self.logits(**cols))

    def log_prob(self, response, **cols) -> np.ndarray:
        """log P(response | columns), stable in the tails."""
        s = self.logits(**cols)
        t = np.asarray(response, dtype=float)
        return -np.logaddexp(0.0, np.where(t == 1.0, -s, s))


@dataclass(frozen=True)
class LinearModel:
    design: DesignSpec
    coef: np.ndarray
    sigma: float

    def mean(self, **cols) -> np.ndarray:
        return self.design.matrix(**cols) @ self.coef

    def log_density(self, y, **cols) -> np.ndarray:
        resid = np.asarray(y, dtype=float) - self.mean(**cols)
        return -0.5 * np.log(2.0 * np.pi * self.sigma**2) - resid**2 / (2.0 * self.sigma**2)


@dataclass(frozen=True)
class GlmParams:
    """Fitted factors of the joint model; ``y_model`` needs .mean and .sigma."""

    a_model: LogisticModel
    m_model: LogisticModel
    y_model: object
    l_model: LogisticModel | None = None

    @property
    def has_l(self) -> bool:
        return self.l_model is not None


def logistic_loglik(X: np.ndarray, coef: np.ndarray, t: np.ndarray) -> float:
    s = X @ coef
    return float(np.sum(t * s - np.logaddexp(0.0, s)))


def logistic_score(X: np.ndarray, coef: np.ndarray, t: np.ndarray) -> np.ndarray:
    return X.T @ (t - expit(X @ coef))


def fit_logistic(design: DesignSpec, response, cols: dict, *, tol: float = GRAD_TOL) -> LogisticModel:
    """Newton/IRLS logistic MLE.

    Raises SeparationError when the MLE diverges (a response class is missing
    or the classes are linearly separated in the design span) and
    RankDeficiencyError when the information matrix is singular.
    """
    t = np.asarray(response, dtype=float)
    X = design.matrix(**cols)
    if X.shape[0] != t.shape[0]:
        raise ValueError("response length does not match design rows")
    if t.min() == t.max():
        raise SeparationError("response takes a single value; logistic MLE diverges")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficiencyError("logistic design matrix is rank deficient")

    coef = np.zeros(design.p)
    ll = logistic_loglik(X, coef, t)
    for _ in range(MAX_NEWTON_ITER):
        p = expit(X @ coef)
        grad = X.T @ (t - p)
        if np.max(np.abs(grad)) <= tol:
            return LogisticModel(design, coef)
        w = p * (1.0 - p)
        info = (X * w[:, None]).T @ X
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise RankDeficiencyError("singular information matrix in logistic fit") from None
        # Step-halving line search on the log-likelihood.  The acceptance
        # slack tracks the loglik's own float64 rounding noise, otherwise the
        # full Newton step gets spuriously rejected near the optimum on large
        # samples and the iteration stalls above the gradient tolerance.
        slack = 1e-12 + 1e-14 * abs(ll)
        scale = 1.0
        for _ in range(60):
            cand = coef + scale * step
            ll_cand = logistic_loglik(X, cand, t)
            if ll_cand >= ll - slack:
                break
            scale *= 0.5
        coef = coef + scale * step
        ll = logistic_loglik(X, coef, t)
        if np.max(np.abs(coef)) > SEPARATION_BOUND:
            raise SeparationError("logistic coefficients diverged (separated data)")
    raise SeparationError("logistic Newton iterations failed to converge")


def fit_linear(design: DesignSpec, response, cols: dict) -> LinearModel:
    """OLS coefficients (the Gaussian MLE) with the 1/n MLE noise scale."""
    y = np.asarray(response, dtype=float)
    X = design.matrix(**cols)
    if X.shape[0] != y.shape[0]:
        raise ValueError("response length does not match design rows")
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise RankDeficiencyError("linear design matrix is rank deficient")
    resid = y - X @ coef
    sigma = float(np.sqrt(np.mean(resid**2)))
    return LinearModel(design, coef, sigma)


def fit_factors(ds: "Dataset", designs: GraphDesigns) -> GlmParams:
    """MLE of every factor; the outcome regression uses observed-outcome rows."""
    cols = ds.columns()
    a_model = fit_logistic(designs.a, ds.a, cols)
    m_model = fit_logistic(designs.m, ds.m, cols)
    l_model = None
    if designs.has_l:
        if ds.l is None:
            raise ValueError("two-mediator designs require an l column")
        l_model = fit_logistic(designs.l, ds.l, cols)
    obs = ds.r == 1
    obs_cols = {k: (v[obs] if v is not None else None) for k, v in cols.items()}
    y_model = fit_linear(designs.y, ds.y[obs], obs_cols)
    return GlmParams(a_model=a_model, m_model=m_model, y_model=y_model, l_model=l_model)


def observed_data_loglik(ds: "Dataset", params: GlmParams, x_log_weights: np.ndarray | None = None) -> float:
    """Observed-data log-likelihood conditional on x.

    Sums log p(a|x) + log p(m|a,x) [+ log p(l|m,a,x)] over all rows plus the
    Gaussian outcome term over rows with observed outcomes.  When per-row log
    weights for the baseline distribution are supplied (the nonparametric part
    of a hybrid likelihood) their sum is added.
    """
    cols = ds.columns()
    total = float(np.sum(params.a_model.log_prob(ds.a, **cols)))
    total += float(np.sum(params.m_model.log_prob(ds.m, **cols)))
    if params.has_l:
        if ds.l is None:
            raise ValueError("params include an l factor but dataset has no l")
        total += float(np.sum(params.l_model.log_prob(ds.l, **cols)))
    obs = ds.r == 1
    if np.any(obs):
        obs_cols = {k: (v[obs] if v is not None else None) for k, v in cols.items()}
        mu = params.y_model.mean(**obs_cols)
        sigma = params.y_model.sigma
        resid = ds.y[obs] - mu
        total += float(
            np.sum(-0.5 * np.log(2.0 * np.pi * sigma**2) - resid**2 / (2.0 * sigma**2))
        )
    if x_log_weights is not None:
        total += float(np.sum(x_log_weights))
    return total
