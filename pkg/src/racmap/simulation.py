"""Simulation designs and the scenario runner.

Two generators drive the studies:

* ``generate_logistic`` draws clustered binary outcomes from a logistic
  model with a one-dimensional quadratic location effect and a normal
  cluster effect; it feeds the sub-sampling comparison, where the full
  sample and four case-control schemes are each fit by random effects
  and conditional ML.
* ``generate_region`` draws per-region Poisson counts given contact
  areas, a wear-factor law and a true intensity vector; it feeds the
  estimator comparison across twelve scenarios (a baseline plus eleven
  one-parameter variations).

Real contact surfaces are proprietary, so a synthetic database stands
in: spatially correlated random blobs thresholded to a target coverage,
aggregated to the expert regions, and scaled so the average shoe has
unit total area (intensities are then directly interpretable as expected
RACs per shoe for a unit wear factor).  Every scenario is reproducible
bit-for-bit from its seed; replications use split RNG streams so results
do not depend on execution order.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .errors import ConvergenceError, InvalidInputError, SingularFitError
from .estimators_pixel import fit_conditional_logit, fit_mixed_logit
from .estimators_region import (fit_cml_region, fit_re_region, naive_region,
                                rescale_cml)
from .partitioning import banded_partition, expert_partition
from .shoe_data import ShoeRecord
from .subsampling import subsample_indices

DEFAULT_REPLICATIONS = 100
SUBSAMPLING_SCHEMES = ("random", "cc_pooled", "cc_within_prop_size",
                       "cc_within_prop_cases")


# ---------------------------------------------------------------------------
# Wear-factor laws
# ---------------------------------------------------------------------------

def draw_wear_factors(law: dict, m: int, rng, source=None) -> np.ndarray:
    """Draw m wear factors from a named law (mean 1 unless noted).

    Kinds: constant, gamma(shape, rate), uniform(lo, hi),
    shifted_bernoulli (0.5 or 1.5), empirical (resampled from `source`),
    empirical_paired (the source vector itself, in order).
    """
    kind = law["kind"]
    if kind == "constant":
        return np.ones(m)
    if kind == "gamma":
        shape, rate = float(law["shape"]), float(law["rate"])
        return rng.gamma(shape, 1.0 / rate, size=m)
    if kind == "uniform":
        return rng.uniform(float(law.get("lo", 0.0)), float(law.get("hi", 2.0)),
                           size=m)
    if kind == "shifted_bernoulli":
        return 0.5 + rng.integers(0, 2, size=m).astype(float)
    if kind == "empirical":
        if source is None:
            raise InvalidInputError("empirical wear law needs a source vector")
        return source[rng.integers(0, source.size, size=m)]
    if kind == "empirical_paired":
        if source is None or source.size != m:
            raise InvalidInputError("paired wear law needs one value per shoe")
        return source.copy()
    raise InvalidInputError(f"unknown wear-factor law {kind!r}")


# ---------------------------------------------------------------------------
# Synthetic contact-surface database
# ---------------------------------------------------------------------------

def synthetic_contact_mask(grid, coverage, rng, smooth=9):
    """A blob-like 0/1 mask covering ~`coverage` of the grid.

    Thresholds a smoothed noise field at the matching quantile, so the
    covered fraction is exact up to pixel rounding.
    """
    height, width = grid
    if not (0.0 < coverage <= 1.0):
        raise InvalidInputError("coverage must be in (0, 1]")
    if coverage == 1.0:
        return np.ones((height, width), dtype=np.uint8)
    noise = rng.standard_normal((height, width))
    fld = ndimage.uniform_filter(noise, size=smooth, mode="reflect")
    cut = np.quantile(fld, 1.0 - coverage)
    return (fld >= cut).astype(np.uint8)


@dataclass
class SurfaceDatabase:
    """A bank of per-shoe region areas plus an empirical wear vector.

    Areas are scaled so the mean total per shoe is 1, making intensities
    read as expected RACs per shoe at unit wear.
    """

    areas: np.ndarray        # (n_shoes, J), unit-mean totals
    wear_source: np.ndarray  # mean-1 empirical wear factors, one per shoe
    region_share: np.ndarray # average area per region


def build_surface_database(n_shoes, n_regions, seed, grid=(80, 62),
                           coverage_range=(0.45, 0.9)) -> SurfaceDatabase:
    """Generate the synthetic stand-in for the observed shoe database."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if n_regions == 14:
        part = expert_partition(grid=grid)
    else:
        n_cols = 4 if n_regions % 4 == 0 else 2
        part = banded_partition(grid, n_regions // n_cols, n_cols)
        if part.n_cells != n_regions:
            raise InvalidInputError(
                f"cannot tile {n_regions} regions as a band layout")
    flat = part.labels.ravel()
    areas = np.empty((n_shoes, part.n_cells))
    for i in range(n_shoes):
        cov = rng.uniform(*coverage_range)
        mask = synthetic_contact_mask(grid, cov, rng)
        areas[i] = np.bincount(flat, weights=mask.ravel(),
                               minlength=part.n_cells)
    areas /= areas.sum(axis=1).mean()
    # Wear proxy: a skewed positive count-like variable, normalized to mean 1.
    raw = np.clip(np.round(rng.lognormal(math.log(28.0), 0.75, size=n_shoes)),
                  1, 250)
    wear = raw / raw.mean()
    return SurfaceDatabase(areas=areas, wear_source=wear,
                           region_share=areas.mean(axis=0))


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

@dataclass
class ClusterData:
    """Clustered binary outcomes on a fixed one-dimensional design."""

    x: np.ndarray            # shared within-cluster locations, (size,)
    y: np.ndarray            # (m, size) binary outcomes
    a: np.ndarray            # (m,) cluster effects


def generate_logistic(m, size, beta, a_sd, seed_or_rng) -> ClusterData:
    """Bernoulli outcomes with P = expit(b0 + b1*x + b2*x^2 + a_i).

    Locations are equispaced midpoints on [0, 1], identical across
    clusters; cluster effects are N(0, a_sd^2).
    """
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) \
        else np.random.default_rng(np.random.SeedSequence(seed_or_rng))
    b0, b1, b2 = beta
    x = (np.arange(size) + 0.5) / size
    a = rng.normal(0.0, a_sd, size=m)
    p = expit(b0 + b1 * x[None, :] + b2 * x[None, :]**2 + a[:, None])
    y = (rng.random((m, size)) < p).astype(np.int64)
    return ClusterData(x=x, y=y, a=a)


def generate_region(areas, lam, a, seed_or_rng) -> list:
    """Per-region Poisson counts given areas (m, J), intensities and wear."""
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) \
        else np.random.default_rng(np.random.SeedSequence(seed_or_rng))
    areas = np.asarray(areas, dtype=float)
    lam = np.asarray(lam, dtype=float)
    a = np.asarray(a, dtype=float)
    if np.any(lam < 0):
        raise InvalidInputError("intensities must be non-negative")
    mean = areas * lam[None, :] * a[:, None]
    counts = rng.poisson(mean)
    return [ShoeRecord(shoe_id=f"shoe_{i:04d}", s_area=areas[i],
                       counts=counts[i]) for i in range(areas.shape[0])]


# ---------------------------------------------------------------------------
# Scenario definitions
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    """A fully parameterized simulation run, reproducible from its seed."""

    scenario_id: str
    design: str                       # "logistic_cluster" | "region_poisson"
    m: int
    replications: int
    seed: int
    full_replications: int = 500
    # logistic design
    cluster_size: int = 0
    beta: tuple = (-3.0, 2.0, -2.0)
    a_sd: float = 0.75
    controls_per_shoe: int = 20
    # region design
    n_regions: int = 14
    lambda_spec: dict = field(default_factory=lambda: {"kind": "baseline"})
    a_law: dict = field(default_factory=lambda: {"kind": "empirical_paired"})
    resample_surfaces: bool = False
    n_source: int = 386

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        for key in ("beta",):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json_file(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def true_lambdas(spec: dict, db: SurfaceDatabase, seed: int) -> np.ndarray:
    """Resolve a lambda specification against the synthetic database.

    The baseline shape mimics an uneven sole: heavier at the ball and
    heel, scaled so the average shoe expects ~34 RACs at unit wear.
    """
    J = db.region_share.size
    kind = spec["kind"]
    if kind == "equal":
        return np.full(J, float(spec.get("value", 32.0)))
    if kind == "half_small_half_large":
        lam = np.full(J, float(spec.get("small", 16.0)))
        lam[J // 2:] = float(spec.get("large", 48.0))
        return lam
    if kind == "one_large":
        lam = np.full(J, float(spec.get("small", 2.5)))
        lam[int(spec.get("cell", 0))] = float(spec.get("large", 416.0))
        return lam
    if kind == "explicit":
        lam = np.asarray(spec["values"], dtype=float)
        if lam.size != J:
            raise InvalidInputError("explicit lambda length mismatch")
        return lam
    if kind == "baseline":
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xBA5E)))
        weights = rng.uniform(0.7, 1.4, size=J)
        total = float(spec.get("mean_racs", 34.0))
        return weights * total / float(weights @ db.region_share)
    raise InvalidInputError(f"unknown lambda spec {kind!r}")


# ---------------------------------------------------------------------------
# Accumulation
# ---------------------------------------------------------------------------

class _Accumulator:
    """Streaming mean/variance per (method, cell), plus failure counts."""

    def __init__(self, methods, cells):
        self.methods = list(methods)
        self.cells = list(cells)
        self.count = {m: 0 for m in methods}
        self.failures = {m: 0 for m in methods}
        self.sum = {m: np.zeros(len(cells)) for m in methods}
        self.sumsq = {m: np.zeros(len(cells)) for m in methods}

    def add(self, method, values):
        v = np.asarray(values, dtype=float)
        self.count[method] += 1
        self.sum[method] += v
        self.sumsq[method] += v * v

    def fail(self, method):
        self.failures[method] += 1

    def table(self, scenario_id, truth):
        rows = []
        summary = []
        truth = np.asarray(truth, dtype=float)
        for method in self.methods:
            n = self.count[method]
            if n == 0:
                summary.append({"method": method, "mean_abs_bias": math.nan,
                                "mean_mse": math.nan, "replications": 0,
                                "failures": self.failures[method]})
                continue
            mean = self.sum[method] / n
            var = np.maximum(self.sumsq[method] / n - mean**2, 0.0)
            bias = mean - truth
            mse = bias**2 + var
            for j, cell in enumerate(self.cells):
                rows.append({"method": method, "cell": cell,
                             "bias": float(bias[j]),
                             "variance": float(var[j]),
                             "mse": float(mse[j])})
            summary.append({"method": method,
                            "mean_abs_bias": float(np.mean(np.abs(bias))),
                            "mean_mse": float(np.mean(mse)),
                            "replications": n,
                            "failures": self.failures[method]})
        return ComparisonTable(scenario_id=scenario_id, cells=self.cells,
                               rows=rows, summary=summary)


@dataclass
class ComparisonTable:
    """Bias/MSE per method and cell, plus per-method summary rows."""

    scenario_id: str
    cells: list
    rows: list
    summary: list

    def mse(self, method, cell) -> float:
        for r in self.rows:
            if r["method"] == method and r["cell"] == cell:
                return r["mse"]
        raise KeyError((method, cell))

    def mean_mse(self, method) -> float:
        for s in self.summary:
            if s["method"] == method:
                return s["mean_mse"]
        raise KeyError(method)

    def mean_abs_bias(self, method) -> float:
        for s in self.summary:
            if s["method"] == method:
                return s["mean_abs_bias"]
        raise KeyError(method)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "method", "cell", "bias", "variance", "mse"])
            for r in self.rows:
                w.writerow([self.scenario_id, r["method"], r["cell"],
                            repr(r["bias"]), repr(r["variance"]), repr(r["mse"])])

    def summary_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "method", "mean_mse", "mean_abs_bias",
                        "replications", "failures"])
            for s in self.summary:
                w.writerow([self.scenario_id, s["method"], repr(s["mean_mse"]),
                            repr(s["mean_abs_bias"]), s["replications"],
                            s["failures"]])

    def to_dict(self) -> dict:
        return {"scenario": self.scenario_id, "cells": list(self.cells),
                "rows": self.rows, "summary": self.summary}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# Replication bodies
# ---------------------------------------------------------------------------

def _region_replication(sc: Scenario, db: SurfaceDatabase, lam_true, rng):
    if sc.resample_surfaces:
        areas = db.areas[rng.integers(0, db.areas.shape[0], size=sc.m)]
    else:
        areas = db.areas[:sc.m]
    source = db.wear_source[:sc.m] if sc.a_law["kind"] == "empirical_paired" \
        else db.wear_source
    a = draw_wear_factors(sc.a_law, sc.m, rng, source=source)
    shoes = generate_region(areas, lam_true, a, rng)
    out = {}
    naive = naive_region(shoes)
    out["naive"] = naive.lambda_hat
    try:
        out["random_effects"] = fit_re_region(shoes, prior="gamma").lambda_hat
    except (ConvergenceError, SingularFitError, InvalidInputError):
        out["random_effects"] = None
    try:
        cml = rescale_cml(fit_cml_region(shoes), naive)
        out["cml"] = cml.lambda_hat
    except (ConvergenceError, SingularFitError, InvalidInputError):
        out["cml"] = None
    return out


def _logistic_fits(data: ClusterData, scheme, controls_per_shoe, rng_seed):
    """Fit RE and CML slopes on one (sub)sample; returns dict of estimates."""
    m, size = data.y.shape
    x = data.x
    if scheme == "full":
        kept = [np.arange(size) for _ in range(m)]
        offsets = np.zeros(m)
    else:
        count = controls_per_shoe
        if scheme == "random":
            count = int(data.y.sum()) + controls_per_shoe * m
        kept, rho1, rho0, _ = subsample_indices(
            list(data.y), scheme, count, rng_seed)
        with np.errstate(divide="ignore"):
            offsets = np.log(rho1) - np.log(rho0)
    ys, X_re, X_cml = [], [], []
    for i in range(m):
        xi = x[kept[i]]
        ys.append(data.y[i, kept[i]])
        X_re.append(np.column_stack([np.ones(xi.size), xi, xi**2]))
        X_cml.append(np.column_stack([xi, xi**2]))
    out = {}
    try:
        fit = fit_mixed_logit(ys, X_re, offsets, compute_cov=False)
        out["re"] = np.array([fit.beta[1], fit.beta[2]])
    except (ConvergenceError, SingularFitError, InvalidInputError):
        out["re"] = None
    try:
        fit = fit_conditional_logit(ys, X_cml, compute_cov=False)
        out["cml"] = np.array([fit.beta[0], fit.beta[1]])
    except (ConvergenceError, SingularFitError, InvalidInputError):
        out["cml"] = None
    return out


def _logistic_replication(sc: Scenario, rng, sub_seed):
    data = generate_logistic(sc.m, sc.cluster_size, sc.beta, sc.a_sd, rng)
    results = {}
    for s_i, scheme in enumerate(("full",) + SUBSAMPLING_SCHEMES):
        fits = _logistic_fits(data, scheme, sc.controls_per_shoe,
                              sub_seed + s_i)
        for est in ("re", "cml"):
            results[f"{est}_{scheme}"] = fits[est]
    return results


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

def run_scenario(sc: Scenario, replications=None) -> ComparisonTable:
    """Run one scenario and tabulate bias/MSE against the truth.

    Estimator failures inside a replication are counted per method and
    excluded from that method's accumulation, never silently dropped.
    """
    reps = int(replications or sc.replications)
    if reps < 1:
        raise InvalidInputError("need at least one replication")
    root = np.random.SeedSequence(sc.seed)
    rep_seeds = root.spawn(reps)

    if sc.design == "region_poisson":
        n_db = sc.n_source if sc.resample_surfaces else max(sc.n_source, sc.m)
        db = build_surface_database(n_db, sc.n_regions, sc.seed)
        lam_true = true_lambdas(sc.lambda_spec, db, sc.seed)
        acc = _Accumulator(["naive", "random_effects", "cml"],
                           [f"cell_{j}" for j in range(lam_true.size)])
        for r in range(reps):
            rng = np.random.default_rng(rep_seeds[r])
            fits = _region_replication(sc, db, lam_true, rng)
            for method, vals in fits.items():
                if vals is None or np.any(~np.isfinite(vals)):
                    acc.fail(method)
                else:
                    acc.add(method, vals)
        return acc.table(sc.scenario_id, lam_true)

    if sc.design == "logistic_cluster":
        methods = [f"{est}_{s}" for est in ("re", "cml")
                   for s in ("full",) + SUBSAMPLING_SCHEMES]
        acc = _Accumulator(methods, ["beta1", "beta2"])
        truth = np.array([sc.beta[1], sc.beta[2]])
        for r in range(reps):
            rng = np.random.default_rng(rep_seeds[r])
            sub_seed = int(rep_seeds[r].generate_state(1)[0] % (2**31))
            fits = _logistic_replication(sc, rng, sub_seed)
            for method, vals in fits.items():
                if vals is None or np.any(~np.isfinite(vals)):
                    acc.fail(method)
                else:
                    acc.add(method, vals)
        return acc.table(sc.scenario_id, truth)

    raise InvalidInputError(f"unknown design {sc.design!r}")


# ---------------------------------------------------------------------------
# Registry: the paper-style scenario set
# ---------------------------------------------------------------------------

def scenario_registry() -> dict:
    """All shipped scenarios keyed by id.

    The twelve region scenarios are a baseline plus one-parameter
    variations (intensity sets, region count, shoe counts with
    resampling, wear laws); the logistic scenario is the sub-sampling
    comparison.  Reduced default replication counts keep desk runs
    short; `full_replications` restores study scale.
    """
    base = dict(design="region_poisson", m=386, replications=100,
                full_replications=500, n_regions=14, n_source=386)
    reg = {}

    def add(sid, seed, **kw):
        cfg = dict(base)
        cfg.update(kw)
        reg[sid] = Scenario(scenario_id=sid, seed=seed, **cfg)

    add("region_baseline", 9001)
    add("region_equal_lambda", 9002, lambda_spec={"kind": "equal", "value": 32.0})
    add("region_half_small_half_large", 9003,
        lambda_spec={"kind": "half_small_half_large", "small": 16.0,
                     "large": 48.0})
    add("region_one_large", 9004,
        lambda_spec={"kind": "one_large", "small": 2.5, "large": 416.0,
                     "cell": 0})
    add("region_36_cells", 9005, n_regions=36)
    add("region_500_shoes", 9006, m=500, resample_surfaces=True,
        a_law={"kind": "empirical"})
    add("region_1000_shoes", 9007, m=1000, resample_surfaces=True,
        a_law={"kind": "empirical"})
    add("region_386_resampled_a", 9008, resample_surfaces=True,
        a_law={"kind": "empirical"})
    add("region_gamma_a", 9009, a_law={"kind": "gamma", "shape": 1.0 / 3.0,
                                       "rate": 1.0 / 3.0})
    add("region_constant_a", 9010, a_law={"kind": "constant"})
    add("region_uniform_a", 9011, a_law={"kind": "uniform", "lo": 0.0,
                                         "hi": 2.0})
    add("region_bernoulli_a", 9012, a_law={"kind": "shifted_bernoulli"})

    reg["subsampling_cc"] = Scenario(
        scenario_id="subsampling_cc", design="logistic_cluster", m=500,
        cluster_size=500, beta=(-3.0, 2.0, -2.0), a_sd=0.75,
        controls_per_shoe=20, replications=100, full_replications=300,
        seed=9100)
    return reg


REGION_SCENARIO_IDS = (
    "region_baseline", "region_equal_lambda", "region_half_small_half_large",
    "region_one_large", "region_36_cells", "region_500_shoes",
    "region_1000_shoes", "region_386_resampled_a", "region_gamma_a",
    "region_constant_a", "region_uniform_a", "region_bernoulli_a")


def write_scenario_files(directory) -> list:
    """Write every registry scenario as a JSON file; returns the paths."""
    import os
    os.makedirs(directory, exist_ok=True)
    paths = []
    for sid, sc in sorted(scenario_registry().items()):
        path = os.path.join(directory, f"{sid}.json")
        with open(path, "w") as fh:
            fh.write(sc.to_json() + "\n")
        paths.append(path)
    return paths
