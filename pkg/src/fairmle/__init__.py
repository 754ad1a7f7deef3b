"""Training of predictive models under path-specific-effect fairness bounds.

The package fits mediation-graph likelihoods (logistic factors plus a Gaussian
outcome regression) subject to a bound on a chosen path-specific effect, using
five procedures: unconstrained MLE, penalty-method constrained MLE, a
reparameterized regression in which the effect is a single pinned coefficient,
a hybrid empirical-likelihood fit that also tilts the baseline distribution,
and the combination of the last two.  It ships the synthetic benchmarks, the
four direct-effect estimators, metrics, a replication harness, and a CLI.
"""

from .dataset import Dataset, DgpSpec, load_csv, mask_outcomes_mar, save_csv, simulate, true_params
from .designs import DesignSpec, GraphDesigns, covariate_terms, default_designs, design
from .effects import (
    EffectEstimate,
    PseFunctional,
    nde_aipw,
    nde_functional,
    nde_gformula,
    nde_ipw,
    nde_mixed,
    pse_edge_gformula,
    two_mediator_pse,
    unit_effect,
)
from .el import ElState, profile_el_logterm, solve_lambda, weights_from_lambda
from .evaluation import Metrics, kl_estimate, mse_masked, run_replications
from .glm import GlmParams, LinearModel, LogisticModel, fit_factors, fit_linear, fit_logistic, observed_data_loglik
from .reparam import ReparamOutcomeModel, fit_reparam_outcome, pse_of
from .train import FitResult, TrainConfig, fit, predict

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DgpSpec",
    "DesignSpec",
    "EffectEstimate",
    "ElState",
    "FitResult",
    "GlmParams",
    "GraphDesigns",
    "LinearModel",
    "LogisticModel",
    "Metrics",
    "PseFunctional",
    "ReparamOutcomeModel",
    "TrainConfig",
    "covariate_terms",
    "default_designs",
    "design",
    "fit",
    "fit_factors",
    "fit_linear",
    "fit_logistic",
    "fit_reparam_outcome",
    "kl_estimate",
    "load_csv",
    "mask_outcomes_mar",
    "mse_masked",
    "nde_aipw",
    "nde_functional",
    "nde_gformula",
    "nde_ipw",
    "nde_mixed",
    "observed_data_loglik",
    "predict",
    "profile_el_logterm",
    "pse_edge_gformula",
    "pse_of",
    "run_replications",
    "save_csv",
    "simulate",
    "solve_lambda",
    "true_params",
    "two_mediator_pse",
    "unit_effect",
    "weights_from_lambda",
]
