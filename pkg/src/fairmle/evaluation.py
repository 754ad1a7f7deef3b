"""Evaluation metrics and the replication harness.

KL divergence from the generating distribution to a fitted model is estimated
by Monte Carlo on a fresh sample: mean of log p_true(row) - log p_fit(row).
The "conditional" scope covers p(y, m(, l), a | x); the "joint" scope adds the
baseline density, comparing the true N(0,1) against the fitted empirical
distribution of x smoothed by a (weight-aware) Gaussian KDE.

Prediction error is the mean squared error on the masked rows, scored against
the generated outcomes that the training data never saw.

run_replications repeats simulate / mask / fit / score over independent seeds
and reports per-configuration means with standard errors; replication results
are aggregated in replication order, so the output is identical for any
worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import train
from .dataset import Dataset, DgpSpec, mask_outcomes_mar, simulate, true_params
from .errors import FairmleError

KL_SCOPES = ("conditional", "joint")
KL_EVAL_N = 100_000
_KDE_GRID = 4096


@dataclass(frozen=True)
class Metrics:
    effect: float
    loglik: float
    kl: float
    mse: float

    def as_dict(self) -> dict:
        return {"effect": self.effect, "loglik": self.loglik, "kl": self.kl, "mse": self.mse}


def _conditional_logdensity(params, ds: Dataset) -> np.ndarray:
    cols = ds.columns()
    out = params.a_model.log_prob(ds.a, **cols)
    out = out + params.m_model.log_prob(ds.m, **cols)
    if params.has_l:
        out = out + params.l_model.log_prob(ds.l, **cols)
    mu = params.y_model.mean(**cols)
    sigma = params.y_model.sigma
    if not sigma > 0.0:
        raise ValueError("fitted outcome noise scale must be positive for KL evaluation")
    out = out + (-0.5 * np.log(2.0 * np.pi * sigma**2) - (ds.y - mu) ** 2 / (2.0 * sigma**2))
    return out


def _weighted_kde_logpdf(support: np.ndarray, weights: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Gaussian KDE with Silverman bandwidth, evaluated by binned convolution.

    The weighted support is spread linearly onto a fine grid, convolved with
    the kernel, and the log-density is interpolated at the query points.
    """
    w = weights / np.sum(weights)
    mean = float(np.sum(w * support))
    sd = float(np.sqrt(np.sum(w * (support - mean) ** 2)))
    order = np.argsort(support)
    cum = np.cumsum(w[order])
    q25, q75 = np.interp([0.25, 0.75], cum, support[order])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    h = 0.9 * spread * support.size ** (-0.2)
    if not h > 0.0:
        raise ValueError("degenerate support for kernel density estimate")

    lo = min(support.min(), query.min()) - 1.0
    hi = max(support.max(), query.max()) + 1.0
    grid = np.linspace(lo, hi, _KDE_GRID)
    step = grid[1] - grid[0]
    # Linear binning of the weights onto the grid.
    pos = (support - lo) / step
    idx = np.clip(pos.astype(int), 0, _KDE_GRID - 2)
    frac = pos - idx
    counts = np.zeros(_KDE_GRID)
    np.add.at(counts, idx, w * (1.0 - frac))
    np.add.at(counts, idx + 1, w * frac)
    half = int(np.ceil(8.0 * h / step))
    t = np.arange(-half, half + 1) * step
    kernel = np.exp(-0.5 * (t / h) ** 2) / (np.sqrt(2.0 * np.pi) * h)
    pdf = np.convolve(counts, kernel, mode="same")
    logpdf = np.interp(query, grid, np.log(np.maximum(pdf, 1e-300)))
    # Queries beyond the support range can fall outside the truncated kernel's
    # reach; evaluate the mixture exactly there (they are few).
    outside = (query < support.min()) | (query > support.max())
    if np.any(outside):
        z = (query[outside, None] - support[None, :]) / h
        log_terms = -0.5 * z**2 + np.log(w)[None, :] - np.log(np.sqrt(2.0 * np.pi) * h)
        logpdf[outside] = logsumexp(log_terms, axis=1)
    if np.any(logpdf <= np.log(1e-290)):
        raise ValueError("kernel density underflowed to zero at an evaluation point")
    return logpdf


def kl_estimate(
    train_ds: Dataset,
    dgp: DgpSpec,
    fit: train.FitResult,
    scope: str = "conditional",
    eval_seed: int = 0,
    eval_n: int = KL_EVAL_N,
) -> float:
    """Monte-Carlo KL(p_true || p_fit) on a fresh sample from the true DGP."""
    if scope not in KL_SCOPES:
        raise ValueError(f"scope must be one of {KL_SCOPES}")
    eval_ds = simulate(DgpSpec(dgp.variant, eval_n, 0.0, eval_seed))
    truth = true_params(dgp.variant)
    log_ratio = _conditional_logdensity(truth, eval_ds) - _conditional_logdensity(fit.params, eval_ds)
    if scope == "joint":
        weights = (
            fit.el_state.weights
            if fit.el_state is not None
            else np.full(train_ds.n, 1.0 / train_ds.n)
        )
        log_true_x = -0.5 * np.log(2.0 * np.pi) - 0.5 * eval_ds.x**2
        log_fit_x = _weighted_kde_logpdf(train_ds.x, weights, eval_ds.x)
        log_ratio = log_ratio + (log_true_x - log_fit_x)
    return float(np.mean(log_ratio))


def mse_masked(full: Dataset, masked: Dataset, predictions: np.ndarray) -> float:
    """Mean squared error on the masked rows against their generated outcomes."""
    if full.n != masked.n or not np.all(full.r == 1):
        raise ValueError("need the fully observed dataset and its masked version")
    hidden = masked.r == 0
    preds = np.asarray(predictions, dtype=float)
    if preds.shape != (int(hidden.sum()),):
        raise ValueError("predictions must cover exactly the masked rows")
    return float(np.mean((full.y[hidden] - preds) ** 2))


@dataclass
class ConfigSummary:
    """Replication-averaged metrics for one training configuration."""

    config: train.TrainConfig
    mean: Metrics
    se: Metrics
    reps_used: int
    failures: list[str]


def _rep_seeds(base_seed: int, reps: int) -> np.ndarray:
    words = np.random.SeedSequence(base_seed).generate_state(reps * 3, dtype=np.uint64)
    return words.reshape(reps, 3)


def _run_one_rep(args):
    (rep, seeds, variant, n, missing, configs, kl_scope, kl_eval_n) = args
    sim_seed, mask_seed, eval_seed = (int(s) for s in seeds)
    dgp = DgpSpec(variant=variant, n=n, missing_fraction=missing, seed=sim_seed)
    full = simulate(dgp)
    masked = mask_outcomes_mar(full, missing, mask_seed)
    out = []
    for config in configs:
        try:
            result = train.fit(masked, config)
            metrics = Metrics(
                effect=result.effect_at_fit,
                loglik=result.loglik,
                kl=kl_estimate(masked, dgp, result, kl_scope, eval_seed, kl_eval_n),
                mse=mse_masked(full, masked, result.predictions),
            )
            out.append(("ok", metrics))
        except FairmleError as exc:
            out.append(("error", f"rep {rep}: {exc}"))
    return out


def run_replications(
    reps: int,
    base_seed: int,
    configs: list[train.TrainConfig],
    *,
    n: int = 5000,
    missing_fraction: float = 0.20,
    kl_scope: str = "conditional",
    kl_eval_n: int = KL_EVAL_N,
    jobs: int = 1,
) -> list[ConfigSummary]:
    """simulate / mask / fit / score ``reps`` times and average per config.

    Every configuration is fitted on the same per-replication dataset so the
    methods are compared like for like.  Failures are recorded per config and
    excluded from the averages rather than aborting the run.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    variants = {c.graph for c in configs}
    if len(variants) != 1:
        raise ValueError("all configurations must share one graph variant")
    variant = variants.pop()
    seeds = _rep_seeds(base_seed, reps)
    tasks = [
        (rep, seeds[rep], variant, n, missing_fraction, configs, kl_scope, kl_eval_n)
        for rep in range(reps)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_rep = list(pool.map(_run_one_rep, tasks, chunksize=1))
    else:
        per_rep = [_run_one_rep(t) for t in tasks]

    summaries = []
    for j, config in enumerate(configs):
        rows = [rep_out[j] for rep_out in per_rep]
        values = np.array([[m.effect, m.loglik, m.kl, m.mse] for s, m in rows if s == "ok"])
        failures = [m for s, m in rows if s == "error"]
        if values.size == 0:
            nanmet = Metrics(np.nan, np.nan, np.nan, np.nan)
            summaries.append(ConfigSummary(config, nanmet, nanmet, 0, failures))
            continue
        mean = values.mean(axis=0)
        if values.shape[0] > 1:
            se = values.std(axis=0, ddof=1) / np.sqrt(values.shape[0])
        else:
            se = np.full(4, np.nan)
        summaries.append(
            ConfigSummary(
                config=config,
                mean=Metrics(*mean),
                se=Metrics(*se),
                reps_used=values.shape[0],
                failures=failures,
            )
        )
    return summaries
