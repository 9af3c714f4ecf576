"""Case-control sub-sampling of pixel data and the induced offset algebra.

Sampling a fraction rho1 of cases (pixels with a RAC) and rho0 of
controls within a shoe turns the occurrence probability p into

    rho1 * p / (rho0 * (1 - p) + rho1 * p),

i.e. it shifts the linear predictor by log(rho1 / rho0).  Supplying that
shift as a fixed offset during fitting keeps every location effect
unbiased; only the intercept absorbs the sampling design.

Schemes
-------
full                  keep everything (offsets are zero)
random                a simple random sample of `count` observations,
                      pooled over shoes; cases are not protected
cc_pooled             all cases + `count * n_shoes` controls drawn from
                      the pooled control set
cc_within_prop_size   all cases + a control budget of `count * n_shoes`
                      allocated to shoes proportionally to shoe size
cc_within_prop_cases  same budget allocated proportionally to each
                      shoe's case count

Control budgets are allocated with a multinomial draw, so per-shoe counts
are proportional in expectation.  All rho values are recorded as realized
fractions, and per-shoe RNG streams are split from the single seed so any
subsample is bit-for-bit reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .shoe_data import ShoeRecord, StandardShoe

SCHEMES = ("full", "random", "cc_pooled", "cc_within_prop_size",
           "cc_within_prop_cases")


@dataclass
class SubsampleMeta:
    """Provenance of a subsample: scheme, realized rhos, seed, warnings."""

    scheme: str
    controls_per_case_or_count: int
    rho1: dict
    rho0: dict
    seed: int
    warnings: list = field(default_factory=list)

    def offset(self, shoe_id) -> float:
        if shoe_id not in self.rho1:
            raise KeyError(f"shoe {shoe_id!r} is not part of this subsample")
        r1, r0 = self.rho1[shoe_id], self.rho0[shoe_id]
        if r1 == 0.0 and r0 == 0.0:
            return 0.0
        if r0 == 0.0:
            return math.inf
        if r1 == 0.0:
            return -math.inf
        return math.log(r1 / r0)

    def constant_offset(self) -> float | None:
        """The common offset if sampling fractions are shoe-constant, else None.

        When this is not None the intercept can be corrected after an
        offset-free fit by subtracting the returned value.
        """
        offs = {self.offset(sid) for sid in self.rho1}
        if len(offs) == 1:
            return offs.pop()
        return None

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "controls_per_case_or_count": self.controls_per_case_or_count,
            "rho1": dict(sorted(self.rho1.items())),
            "rho0": dict(sorted(self.rho0.items())),
            "seed": self.seed,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubsampleMeta":
        return cls(scheme=d["scheme"],
                   controls_per_case_or_count=d["controls_per_case_or_count"],
                   rho1=d["rho1"], rho0=d["rho0"], seed=d["seed"],
                   warnings=list(d.get("warnings", [])))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def full_meta(shoe_ids, seed=0) -> SubsampleMeta:
    """Meta object for an unsampled (full-data) fit."""
    ones = {sid: 1.0 for sid in shoe_ids}
    return SubsampleMeta(scheme="full", controls_per_case_or_count=0,
                         rho1=dict(ones), rho0=dict(ones), seed=seed)


def adjusted_probability(p_orig: float, rho1: float, rho0: float) -> float:
    """Occurrence probability conditional on having been sampled."""
    num = rho1 * p_orig
    den = rho0 * (1.0 - p_orig) + rho1 * p_orig
    if den == 0.0:
        return 0.0
    return num / den


def offset_for(meta: SubsampleMeta, shoe_id) -> float:
    """Per-shoe offset log(rho1/rho0) to add to the linear predictor."""
    return meta.offset(shoe_id)


# ---------------------------------------------------------------------------
# Index-level engine (shared by pixel data and the simulation clusters)
# ---------------------------------------------------------------------------

def subsample_indices(y_list, scheme: str, count: int, seed: int):
    """Subsample binary outcome vectors, one per cluster.

    Returns ``(kept, rho1, rho0, warnings)`` where `kept` holds a sorted
    index array per cluster and the rho arrays are realized per-cluster
    sampling fractions for cases and controls.
    """
    if scheme not in SCHEMES:
        raise InvalidInputError(f"unknown scheme {scheme!r}; one of {SCHEMES}")
    y_list = [np.asarray(y, dtype=np.int64) for y in y_list]
    for y in y_list:
        if np.any((y != 0) & (y != 1)):
            raise InvalidInputError("subsampling expects binarized outcomes")
    m = len(y_list)
    warnings: list = []
    sizes = np.array([y.size for y in y_list], dtype=np.int64)
    cases = [np.flatnonzero(y == 1) for y in y_list]
    controls = [np.flatnonzero(y == 0) for y in y_list]
    n_cases = np.array([c.size for c in cases], dtype=np.int64)
    n_controls = np.array([c.size for c in controls], dtype=np.int64)

    seqs = np.random.SeedSequence(seed).spawn(m + 1)
    pool_rng = np.random.default_rng(seqs[0])
    shoe_rngs = [np.random.default_rng(s) for s in seqs[1:]]

    if scheme == "full":
        kept = [np.arange(y.size) for y in y_list]
        ones = np.ones(m)
        return kept, ones, ones.copy(), warnings

    if scheme == "random":
        total = int(sizes.sum())
        k = int(count)
        if k > total:
            warnings.append(f"requested {k} observations but only {total} exist; "
                            "keeping all")
            k = total
        chosen = pool_rng.choice(total, size=k, replace=False)
        offsets = np.concatenate(([0], np.cumsum(sizes)))
        kept = []
        for i in range(m):
            local = chosen[(chosen >= offsets[i]) & (chosen < offsets[i + 1])]
            kept.append(np.sort(local - offsets[i]))
        kept_cases = np.array([int(y_list[i][kept[i]].sum()) for i in range(m)])
        kept_controls = np.array([kept[i].size for i in range(m)]) - kept_cases
        rho1 = np.where(n_cases > 0, kept_cases / np.maximum(n_cases, 1), 1.0)
        rho0 = np.where(n_controls > 0,
                        kept_controls / np.maximum(n_controls, 1), 1.0)
        return kept, rho1, rho0, warnings

    # Case-control schemes: every case is retained.
    budget = int(count) * m
    if scheme == "cc_pooled":
        total_controls = int(n_controls.sum())
        k = budget
        if k > total_controls:
            warnings.append(f"control budget {k} exceeds the {total_controls} "
                            "available controls; keeping all")
            k = total_controls
        chosen = pool_rng.choice(total_controls, size=k, replace=False)
        offsets = np.concatenate(([0], np.cumsum(n_controls)))
        taken = []
        for i in range(m):
            local = chosen[(chosen >= offsets[i]) & (chosen < offsets[i + 1])]
            taken.append(controls[i][np.sort(local - offsets[i])])
    else:
        weights = sizes.astype(float) if scheme == "cc_within_prop_size" \
            else n_cases.astype(float)
        wsum = weights.sum()
        if wsum == 0:
            warnings.append("all allocation weights are zero; no controls kept")
            alloc = np.zeros(m, dtype=np.int64)
        else:
            alloc = pool_rng.multinomial(budget, weights / wsum)
        taken = []
        for i in range(m):
            k_i = int(alloc[i])
            if k_i > n_controls[i]:
                warnings.append(
                    f"cluster {i}: requested {k_i} controls, only "
                    f"{int(n_controls[i])} available; keeping all")
                k_i = int(n_controls[i])
            if k_i == 0:
                taken.append(np.empty(0, dtype=np.int64))
            else:
                taken.append(np.sort(shoe_rngs[i].choice(
                    controls[i], size=k_i, replace=False)))

    kept = [np.sort(np.concatenate([cases[i], taken[i]])) for i in range(m)]
    rho1 = np.ones(m)
    rho0 = np.where(n_controls > 0,
                    np.array([t.size for t in taken]) / np.maximum(n_controls, 1),
                    1.0)
    return kept, rho1, rho0, warnings


# ---------------------------------------------------------------------------
# Pixel-data front end
# ---------------------------------------------------------------------------

def subsample(shoes, scheme: str, count: int, seed: int):
    """Subsample binarized pixel shoes.

    Parameters
    ----------
    shoes : list of StandardShoe
        Binarized pixel data (counts in {0, 1}).
    scheme, count, seed
        See the module docstring; `count` is the total size for the
        ``random`` scheme and the per-shoe control budget otherwise.

    Returns
    -------
    (records, meta) where each record holds the retained pixels of one
    shoe (s_area = 1, counts = outcome, cell_index = flat pixel ids).
    """
    for shoe in shoes:
        if not isinstance(shoe, StandardShoe):
            raise InvalidInputError("subsample expects StandardShoe inputs")
        if np.any(shoe.n > 1):
            raise InvalidInputError(
                f"shoe {shoe.shoe_id} has counts > 1; binarize first")
    width = shoes[0].grid_width if shoes else 0
    y_list = []
    pixel_ids = []
    for shoe in shoes:
        ys, xs = np.nonzero(shoe.S)
        pixel_ids.append(ys * width + xs)
        y_list.append(shoe.n[ys, xs])
    kept, rho1, rho0, warnings = subsample_indices(y_list, scheme, count, seed)
    records = []
    for shoe, ids, y, keep in zip(shoes, pixel_ids, y_list, kept):
        records.append(ShoeRecord(
            shoe_id=shoe.shoe_id,
            s_area=np.ones(keep.size),
            counts=y[keep],
            cell_index=ids[keep]))
    meta = SubsampleMeta(
        scheme=scheme, controls_per_case_or_count=int(count),
        rho1={s.shoe_id: float(r) for s, r in zip(shoes, rho1)},
        rho0={s.shoe_id: float(r) for s, r in zip(shoes, rho0)},
        seed=int(seed), warnings=warnings)
    return records, meta
