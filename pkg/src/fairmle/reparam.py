"""Outcome regression reparameterized so the constrained effect is one coefficient.

The conditional outcome mean is rewritten as

    E[Y | x, a, m(, l)] = w0 + wa * a + (phi(x, a, m, l) - c(a)) . alpha_f

where phi collects the outcome-design terms that vanish when all non-treatment
covariates are zero, and c(a) is the mediator-and-baseline average of phi under
the contrast's edge assignments: mediator laws take treatment value a on the
constrained edges and 0 elsewhere, and the baseline distribution is the
(possibly reweighted) empirical distribution of x.  Averaging the implied
per-x effect contrast with those same baseline weights telescopes the c(a)
terms, so the model's path-specific effect equals wa identically; pinning
wa = 0 turns the effect constraint into an ordinary unconstrained regression.

Because phi and c(a) are both linear in alpha_f, fitting the reparameterized
Gaussian MLE is OLS on transformed features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .designs import DesignSpec
from .effects import PseFunctional
from .errors import RankDeficiencyError
from .glm import LogisticModel


@dataclass(frozen=True)
class ReparamOutcomeModel:
    """Gaussian outcome model in reparameterized form.

    ``correction`` holds c(0) and c(1); ``treatment_coef`` (wa) is the model's
    path-specific effect, exactly.
    """

    covariate_design: DesignSpec
    coef: np.ndarray
    intercept: float
    treatment_coef: float
    correction: np.ndarray
    sigma: float

    def __post_init__(self):
        for term in self.covariate_design.terms:
            if not set(term) - {"a"}:
                raise ValueError("covariate design may not contain intercept or pure-a terms")
        if self.correction.shape != (2, self.covariate_design.p):
            raise ValueError("correction must hold one vector per treatment arm")

    def features(self, x, a, m, l=None) -> np.ndarray:
        phi = self.covariate_design.matrix(x=x, a=a, m=m, l=l)
        a_arr = np.broadcast_to(np.asarray(a, dtype=float), (phi.shape[0],))
        return phi - self.correction[a_arr.astype(int)]

    def mean(self, x, a, m, l=None) -> np.ndarray:
        a_arr = np.asarray(a, dtype=float)
        return self.intercept + self.treatment_coef * a_arr + self.features(x, a, m, l) @ self.coef


def pse_of(model: ReparamOutcomeModel) -> float:
    """The path-specific effect encoded by the model: its treatment coefficient."""
    return float(model.treatment_coef)


def correction_vectors(
    covariate_design: DesignSpec,
    x: np.ndarray,
    weights: np.ndarray,
    functional: PseFunctional,
    m_model: LogisticModel,
    l_model: LogisticModel | None = None,
) -> np.ndarray:
    """c(a) for a in {0, 1}: weighted mediator-averaged covariate terms.

    The mediator laws use the contrast's edge assignment at free treatment
    value a (constrained edges) and the reference 0 (unconstrained edges);
    only nuisance parameters enter, so the result is cached per fit.
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != x.shape:
        raise ValueError("weights must align with x")
    needs_l = functional.graph == "two-mediator"
    if needs_l and l_model is None:
        raise ValueError("two-mediator correction needs an l model")
    out = np.empty((2, covariate_design.p))
    treated = functional.treated_edges
    for a in (0.0, 1.0):
        a_m = a if "m" in treated else 0.0
        pm1 = m_model.prob(x=x, a=a_m)
        acc = np.zeros(covariate_design.p)
        for m_val, pm in ((0.0, 1.0 - pm1), (1.0, pm1)):
            if not needs_l:
                acc += (w * pm) @ covariate_design.matrix(x=x, a=a, m=m_val)
                continue
            a_l = a if "l" in treated else 0.0
            pl1 = l_model.prob(x=x, a=a_l, m=m_val)
            for l_val, pl in ((0.0, 1.0 - pl1), (1.0, pl1)):
                acc += (w * pm * pl) @ covariate_design.matrix(x=x, a=a, m=m_val, l=l_val)
        out[int(a)] = acc
    return out


def fit_reparam_outcome(
    ds,
    covariate_design: DesignSpec,
    functional: PseFunctional,
    m_model: LogisticModel,
    l_model: LogisticModel | None,
    weights: np.ndarray,
    pin_treatment: bool = True,
) -> ReparamOutcomeModel:
    """Gaussian MLE of the reparameterized outcome regression.

    The regression runs on observed-outcome rows; the baseline weights (which
    cover all rows) enter only through c(a).  With ``pin_treatment`` the
    treatment coefficient wa is fixed at zero, making the fit an unconstrained
    OLS whose induced effect is exactly zero.
    """
    correction = correction_vectors(covariate_design, ds.x, weights, functional, m_model, l_model)
    obs = ds.r == 1
    phi = covariate_design.matrix(
        x=ds.x[obs], a=ds.a[obs], m=ds.m[obs], l=None if ds.l is None else ds.l[obs]
    )
    feats = phi - correction[ds.a[obs].astype(int)]
    columns = [np.ones(feats.shape[0])]
    if not pin_treatment:
        columns.append(ds.a[obs])
    design_mat = np.column_stack(columns + [feats])
    coef, _, rank, _ = np.linalg.lstsq(design_mat, ds.y[obs], rcond=None)
    if rank < design_mat.shape[1]:
        raise RankDeficiencyError("reparameterized outcome design is rank deficient")
    resid = ds.y[obs] - design_mat @ coef
    sigma = float(np.sqrt(np.mean(resid**2)))
    if pin_treatment:
        w0, wa, alpha = float(coef[0]), 0.0, coef[1:]
    else:
        w0, wa, alpha = float(coef[0]), float(coef[1]), coef[2:]
    return ReparamOutcomeModel(
        covariate_design=covariate_design,
        coef=alpha,
        intercept=w0,
        treatment_coef=wa,
        correction=correction,
        sigma=sigma,
    )
