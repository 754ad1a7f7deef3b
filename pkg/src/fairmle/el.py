"""Empirical-likelihood weights under a single scalar moment constraint.

Maximizing sum_i log p_i over probability vectors subject to
sum_i p_i * v_i = 0 has the closed-form solution

    p_i = (1/n) / (1 + lambda * v_i),

where the Lagrange multiplier lambda is the unique root of

    R(lambda) = sum_i v_i / (1 + lambda * v_i) = 0

on the interval where every denominator stays positive (the normalization
multiplier is eliminated analytically).  R is strictly decreasing there, so a
safeguarded Newton/bisection solve is exact and fast.  The profiled value of
sum_i log p_i is -sum_i log(1 + lambda* v_i) - n log n, the standard dual form
of the constrained program (Owen, Empirical Likelihood, 2001).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleConstraintError

RESIDUAL_TOL = 1e-10
# Relative margin keeping the bracket away from the poles of R.
BRACKET_MARGIN = 1e-12
MAX_ITER = 200


@dataclass(frozen=True)
class ElState:
    """Solved multiplier and the implied per-row weights."""

    lam: float
    weights: np.ndarray

    @property
    def log_weights(self) -> np.ndarray:
        return np.log(self.weights)


def _residual(lam: float, v: np.ndarray) -> float:
    return float(np.sum(v / (1.0 + lam * v)))


def solve_lambda(values) -> float:
    """Root of sum v_i / (1 + lambda v_i) = 0 with all denominators positive.

    Requires min(v) < 0 < max(v) (otherwise no interior weights satisfy the
    constraint); an all-zero vector yields lambda = 0.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty constraint vector")
    vmin, vmax = float(v.min()), float(v.max())
    if vmin == 0.0 and vmax == 0.0:
        return 0.0
    if vmin >= 0.0 or vmax <= 0.0:
        raise InfeasibleConstraintError(
            "constraint values are one-signed; no interior weights exist"
        )
    if float(np.sum(v)) == 0.0:
        return 0.0  # uniform weights are already stationary
    lo = -1.0 / vmax
    hi = -1.0 / vmin
    width = hi - lo
    lo += BRACKET_MARGIN * width
    hi -= BRACKET_MARGIN * width
    r_lo, r_hi = _residual(lo, v), _residual(hi, v)
    if not (r_lo > 0.0 > r_hi):  # extreme near-degenerate data
        raise InfeasibleConstraintError("could not bracket the multiplier root")
    lam = 0.0
    r = _residual(lam, v)
    for _ in range(MAX_ITER):
        if abs(r) <= RESIDUAL_TOL:
            return lam
        if r > 0.0:
            lo = lam
        else:
            hi = lam
        if hi - lo <= 2.0 * np.spacing(max(abs(lo), abs(hi), 1e-6)):
            break  # root located to machine precision in lambda
        slope = -float(np.sum((v / (1.0 + lam * v)) ** 2))
        step = -r / slope
        cand = lam + step
        if not lo < cand < hi:  # Newton left the bracket: bisect
            cand = 0.5 * (lo + hi)
        lam = cand
        r = _residual(lam, v)
    # Polish: keep whichever bracket point has the smallest residual.
    for cand in (lo, hi):
        r_cand = _residual(cand, v)
        if abs(r_cand) < abs(r):
            lam, r = cand, r_cand
    # For heavily tilted constraints the residual cannot be driven to the
    # nominal tolerance in float64: one ulp of lambda already moves it by
    # |R'(lambda)| * ulp, and each term carries its own rounding noise.
    # Accept the root at that machine-resolution floor.
    terms = v / (1.0 + lam * v)
    resolution = 4.0 * np.spacing(max(1e-3, abs(lam))) * float(np.sum(terms**2))
    noise = 8.0 * np.finfo(float).eps * float(np.sum(np.abs(terms)))
    if abs(r) <= max(RESIDUAL_TOL, resolution, noise):
        return lam
    raise InfeasibleConstraintError(f"multiplier solve stalled at residual {r:.3e}")


def weights_from_lambda(values, lam: float) -> np.ndarray:
    """p_i = (1/n) / (1 + lambda v_i); denominators must be positive."""
    v = np.asarray(values, dtype=float)
    denom = 1.0 + lam * v
    if np.any(denom <= 0.0):
        raise ValueError("nonpositive weight denominator for this multiplier")
    return 1.0 / (v.size * denom)


def solve_state(values) -> ElState:
    """Convenience: solve the multiplier and return it with its weights."""
    v = np.asarray(values, dtype=float)
    lam = solve_lambda(v)
    return ElState(lam=lam, weights=weights_from_lambda(v, lam))


def profile_el_logterm(values) -> float:
    """Profiled sum of log-weights: -sum log(1 + lambda* v_i) - n log n."""
    v = np.asarray(values, dtype=float)
    lam = solve_lambda(v)
    return float(-np.sum(np.log1p(lam * v)) - v.size * np.log(v.size))
