"""Synthetic mediation datasets, MAR outcome masking, and CSV round-tripping.

Two built-in data generating processes are supported:

one-mediator
    x ~ N(0,1); logit P(a=1|x) = -0.5 - 0.5x;
    logit P(m=1|a,x) = -0.5 - x - 0.5a + ax;
    y = 1 + x + 2a - 2ax + m + 3xm + am + xam + N(0,1).

two-mediator
    x, a, m as above; logit P(l=1|a,x,m) = -0.5 - x - 0.5a - 0.25m + ax
    + 0.5am + 0.25axm; y = 1 + x + 2a + m + 0.5l - 2ax + am + al + aml + N(0,1).

Randomness comes from a named seed via numpy's SeedSequence, spawned into one
child stream per variable draw (x, a, m, l, outcome noise), so datasets are
bit-reproducible across platforms and the two variants share their x/a/m draws
for a common seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from . import glm
from .designs import default_designs
from .errors import SchemaError

VARIANTS = ("one-mediator", "two-mediator")


@dataclass(frozen=True)
class DgpSpec:
    """Recipe for one synthetic dataset."""

    variant: str
    n: int
    missing_fraction: float = 0.20
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0.0 <= self.missing_fraction < 1.0:
            raise ValueError("missing_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class Dataset:
    """Immutable column store for one mediation dataset.

    y holds NaN exactly where r == 0 (outcome unobserved); l is present for
    all rows or not at all.
    """

    x: np.ndarray
    a: np.ndarray
    m: np.ndarray
    y: np.ndarray
    r: np.ndarray
    l: np.ndarray | None = None

    def __post_init__(self):
        for name in ("x", "a", "m", "y", "r", "l"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.ascontiguousarray(arr, dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.x.shape[0]
        for name in ("a", "m", "y", "r"):
            if getattr(self, name).shape != (n,):
                raise SchemaError(f"column {name} has wrong length")
        if self.l is not None and self.l.shape != (n,):
            raise SchemaError("column l has wrong length")
        for name in ("a", "m", "r") + (("l",) if self.l is not None else ()):
            vals = getattr(self, name)
            if not np.isin(vals, (0.0, 1.0)).all():
                raise SchemaError(f"column {name} must be binary 0/1")
        if not np.array_equal(np.isnan(self.y), self.r == 0):
            raise SchemaError("y must be present exactly when r == 1")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def has_l(self) -> bool:
        return self.l is not None

    @property
    def n_observed(self) -> int:
        return int(np.sum(self.r))

    def columns(self) -> dict:
        return {"x": self.x, "a": self.a, "m": self.m, "l": self.l}


def true_params(variant: str) -> glm.GlmParams:
    """The generating coefficients, packaged as fitted-model objects."""
    designs = default_designs(variant)
    a_model = glm.LogisticModel(designs.a, np.array([-0.5, -0.5]))
    m_model = glm.LogisticModel(designs.m, np.array([-0.5, -1.0, -0.5, 1.0]))
    if variant == "one-mediator":
        # terms: 1, x, a, a:x, m, x:m, a:m, x:a:m
        y_model = glm.LinearModel(
            designs.y, np.array([1.0, 1.0, 2.0, -2.0, 1.0, 3.0, 1.0, 1.0]), 1.0
        )
        return glm.GlmParams(a_model, m_model, y_model)
    # terms: 1, x, a, m, a:x, a:m, x:a:m
    l_model = glm.LogisticModel(
        designs.l, np.array([-0.5, -1.0, -0.5, -0.25, 1.0, 0.5, 0.25])
    )
    # terms: 1, x, a, m, l, a:x, a:m, a:l, a:m:l
    y_model = glm.LinearModel(
        designs.y, np.array([1.0, 1.0, 2.0, 1.0, 0.5, -2.0, 1.0, 1.0, 1.0]), 1.0
    )
    return glm.GlmParams(a_model, m_model, y_model, l_model)


def simulate_glm(params: glm.GlmParams, n: int, seed: int) -> Dataset:
    """Draw a fully observed dataset from arbitrary factor models."""
    streams = [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(5)]
    rng_x, rng_a, rng_m, rng_l, rng_eps = streams
    x = rng_x.standard_normal(n)
    a = (rng_a.random(n) < params.a_model.prob(x=x)).astype(float)
    m = (rng_m.random(n) < params.m_model.prob(x=x, a=a)).astype(float)
    l = None
    if params.has_l:
        l = (rng_l.random(n) < params.l_model.prob(x=x, a=a, m=m)).astype(float)
    mu = params.y_model.mean(x=x, a=a, m=m, l=l)
    y = mu + params.y_model.sigma * rng_eps.standard_normal(n)
    return Dataset(x=x, a=a, m=m, y=y, r=np.ones(n), l=l)


def simulate(spec: DgpSpec) -> Dataset:
    """Fully observed draw from the built-in DGP named by the spec.

    Masking is applied separately (see :func:`mask_outcomes_mar`) so that the
    generated outcomes can be retained as evaluation ground truth.
    """
    return simulate_glm(true_params(spec.variant), spec.n, spec.seed)


def mask_outcomes_mar(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Hide exactly floor(fraction * n) outcomes, chosen uniformly at random.

    The selection ignores every column, so the missingness is MAR by
    construction; an exact count (rather than per-row Bernoulli) keeps the
    masked share fixed across replications.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    if not np.all(ds.r == 1):
        raise ValueError("dataset already has masked outcomes")
    k = int(np.floor(fraction * ds.n))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    hide = rng.permutation(ds.n)[:k]
    r = np.ones(ds.n)
    r[hide] = 0.0
    y = ds.y.copy()
    y[hide] = np.nan
    return replace(ds, y=y, r=r)


def save_csv(ds: Dataset, path) -> None:
    """Write ``x,a,m[,l],y,r`` with an empty y field on masked rows."""
    header = ["x", "a", "m"] + (["l"] if ds.has_l else []) + ["y", "r"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            row = [repr(float(ds.x[i])), int(ds.a[i]), int(ds.m[i])]
            if ds.has_l:
                row.append(int(ds.l[i]))
            row.append("" if ds.r[i] == 0 else repr(float(ds.y[i])))
            row.append(int(ds.r[i]))
            writer.writerow(row)


def _parse_binary(token: str, name: str, line: int) -> float:
    if token not in ("0", "1"):
        raise SchemaError(f"line {line}: column {name} must be 0 or 1, got {token!r}")
    return float(token)


def load_csv(path) -> Dataset:
    """Read a dataset written by :func:`save_csv` (schema-checked)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("no rows: file is empty") from None
        if header == ["x", "a", "m", "l", "y", "r"]:
            has_l = True
        elif header == ["x", "a", "m", "y", "r"]:
            has_l = False
        else:
            raise SchemaError(f"unrecognized header {header!r}")
        width = len(header)
        xs, as_, ms, ls, ys, rs = [], [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise SchemaError(f"line {lineno}: expected {width} fields, got {len(row)}")
            xs.append(float(row[0]))
            as_.append(_parse_binary(row[1], "a", lineno))
            ms.append(_parse_binary(row[2], "m", lineno))
            pos = 3
            if has_l:
                ls.append(_parse_binary(row[3], "l", lineno))
                pos = 4
            y_tok, r_tok = row[pos], row[pos + 1]
            r = _parse_binary(r_tok, "r", lineno)
            if r == 1.0:
                if y_tok == "":
                    raise SchemaError(f"line {lineno}: y missing although r=1")
                ys.append(float(y_tok))
            else:
                if y_tok != "":
                    raise SchemaError(f"line {lineno}: y present although r=0")
                ys.append(np.nan)
            rs.append(r)
    if not xs:
        raise SchemaError("no rows: file has a header but no data")
    return Dataset(
        x=np.array(xs),
        a=np.array(as_),
        m=np.array(ms),
        y=np.array(ys),
        r=np.array(rs),
        l=np.array(ls) if has_l else None,
    )
