"""Product-term design specifications for the binary-mediation models.

A design is an ordered list of product terms over the variables
``x`` (continuous baseline), ``a`` (binary sensitive feature), ``m`` and ``l``
(binary mediators).  The empty term is the intercept.  Designs are evaluated
into dense matrices from keyword columns, which makes counterfactual
evaluation (``a=0``, ``a=1``, ``m=0``, ...) a matter of passing scalars.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VARIABLES = ("x", "a", "m", "l")

Term = tuple[str, ...]


def _canonical(term: Term) -> Term:
    return tuple(sorted(set(term), key=VARIABLES.index))


@dataclass(frozen=True)
class DesignSpec:
    """Ordered, distinct product terms; ``()`` denotes the intercept."""

    terms: tuple[Term, ...]

    def __post_init__(self):
        canon = tuple(_canonical(t) for t in self.terms)
        for t in canon:
            for v in t:
                if v not in VARIABLES:
                    raise ValueError(f"unknown design variable {v!r}")
        if len(set(canon)) != len(canon):
            raise ValueError("design terms must be distinct")
        object.__setattr__(self, "terms", canon)

    @property
    def p(self) -> int:
        return len(self.terms)

    @property
    def variables(self) -> frozenset[str]:
        return frozenset(v for t in self.terms for v in t)

    def labels(self) -> list[str]:
        return ["1" if not t else ":".join(t) for t in self.terms]

    def matrix(self, **cols) -> np.ndarray:
        """Evaluate the design at the given columns (arrays or scalars)."""
        n = 1
        for v in cols.values():
            if v is None:
                continue
            arr = np.asarray(v)
            if arr.ndim > 0:
                n = max(n, arr.shape[0])
        out = np.empty((n, self.p))
        for j, term in enumerate(self.terms):
            col = np.ones(n)
            for v in term:
                if v not in cols or cols[v] is None:
                    raise ValueError(f"design needs column {v!r}")
                col = col * np.asarray(cols[v], dtype=float)
            out[:, j] = col
        return out


def design(*labels: str) -> DesignSpec:
    """Build a DesignSpec from labels like ``"1"``, ``"x"``, ``"a:x"``."""
    terms = []
    for lab in labels:
        terms.append(() if lab == "1" else tuple(lab.split(":")))
    return DesignSpec(tuple(terms))


@dataclass(frozen=True)
class GraphDesigns:
    """Model designs for every factor of a mediation graph."""

    a: DesignSpec
    m: DesignSpec
    y: DesignSpec
    l: DesignSpec | None = None

    @property
    def has_l(self) -> bool:
        return self.l is not None


def default_designs(variant: str) -> GraphDesigns:
    """Correctly specified designs for the built-in data generating processes."""
    if variant == "one-mediator":
        return GraphDesigns(
            a=design("1", "x"),
            m=design("1", "x", "a", "a:x"),
            y=design("1", "x", "a", "a:x", "m", "x:m", "a:m", "x:a:m"),
        )
    if variant == "two-mediator":
        return GraphDesigns(
            a=design("1", "x"),
            m=design("1", "x", "a", "a:x"),
            l=design("1", "x", "a", "m", "a:x", "a:m", "x:a:m"),
            y=design("1", "x", "a", "m", "l", "a:x", "a:m", "a:l", "a:m:l"),
        )
    raise ValueError(f"unknown graph variant {variant!r}")


def covariate_terms(y_design: DesignSpec) -> DesignSpec:
    """Drop the intercept and pure-treatment terms from an outcome design.

    The remaining terms all contain at least one of x, m, l, so the resulting
    predictor vanishes identically when those covariates are zero.  This is the
    anchored part of the reparameterized outcome regression; the dropped
    ``1`` and ``a`` terms are absorbed by its treatment-offset parameters.
    """
    kept = tuple(t for t in y_design.terms if set(t) - {"a"})
    if not kept:
        raise ValueError("outcome design has no covariate-dependent terms")
    return DesignSpec(kept)
