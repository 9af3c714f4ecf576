"""Truncated-power cubic spline basis and its tensor-product surface.

The one-dimensional basis at knots ``k_1 < ... < k_p`` is

    (1, t, t^2, t^3, (t-k_1)_+^3, ..., (t-k_p)_+^3)

and the two-dimensional log-intensity surface is the product of an X and
a Y spline, realized as the flattened outer product of the two basis
vectors.  Coefficients therefore have length ``(4+p_x) * (4+p_y)``, with
the (0,0) entry of the outer product acting as the global intercept.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


def basis_1d(t, knots) -> np.ndarray:
    """Evaluate the truncated-power cubic basis.

    Parameters
    ----------
    t : scalar or array of shape (n,)
    knots : array of shape (p,), strictly increasing

    Returns
    -------
    Array of shape (4+p,) for scalar input, (n, 4+p) otherwise.
    """
    knots = np.asarray(knots, dtype=float)
    if knots.size > 1 and not np.all(np.diff(knots) > 0):
        raise InvalidInputError("knots must be strictly increasing")
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    cols = [np.ones_like(t_arr), t_arr, t_arr**2, t_arr**3]
    for k in knots:
        cols.append(np.maximum(t_arr - k, 0.0) ** 3)
    out = np.column_stack(cols)
    if np.isscalar(t) or np.ndim(t) == 0:
        return out[0]
    return out


def quantile_knots(values, p: int) -> np.ndarray:
    """Interior knots at the p equal quantiles of the empirical distribution.

    Uses levels ``1/(p+1), ..., p/(p+1)`` with linear (type-7) interpolation.
    """
    if p < 1:
        raise InvalidInputError("knot count p must be >= 1")
    values = np.asarray(values, dtype=float)
    if np.unique(values).size < p + 1:
        raise InvalidInputError(
            f"need at least {p + 1} distinct values to place {p} knots")
    levels = np.arange(1, p + 1) / (p + 1)
    knots = np.quantile(values, levels)
    if not np.all(np.diff(knots) > 0):
        raise InvalidInputError("degenerate values: quantile knots coincide")
    return knots


def tensor_design(x, y, knots_x, knots_y) -> np.ndarray:
    """Design rows for the tensor-product surface at points (x, y).

    Row i is the flattened outer product ``basis_1d(x_i) (x) basis_1d(y_i)``,
    in C order (x-basis index varies slowest).
    """
    bx = np.atleast_2d(basis_1d(np.atleast_1d(x), knots_x))
    by = np.atleast_2d(basis_1d(np.atleast_1d(y), knots_y))
    return np.einsum("ni,nj->nij", bx, by).reshape(bx.shape[0], -1)


@dataclass
class SplineSpec:
    """Knots and coefficients of a fitted tensor-product spline surface.

    ``centering`` records whether the basis was centered before fitting;
    the fitters in this package never center, so it stays ``"none"``.
    """

    knots_x: np.ndarray
    knots_y: np.ndarray
    beta: np.ndarray
    centering: str = "none"

    def __post_init__(self):
        self.knots_x = np.asarray(self.knots_x, dtype=float)
        self.knots_y = np.asarray(self.knots_y, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        expected = (4 + self.knots_x.size) * (4 + self.knots_y.size)
        if self.beta.size != expected:
            raise InvalidInputError(
                f"beta has length {self.beta.size}, design dimension is {expected}")
        for k in (self.knots_x, self.knots_y):
            if k.size > 1 and not np.all(np.diff(k) > 0):
                raise InvalidInputError("knots must be strictly increasing")

    @property
    def dim(self) -> int:
        return self.beta.size

    def design_row(self, x, y) -> np.ndarray:
        return tensor_design(x, y, self.knots_x, self.knots_y)

    def to_dict(self) -> dict:
        return {
            "knots_x": self.knots_x.tolist(),
            "knots_y": self.knots_y.tolist(),
            "beta": self.beta.tolist(),
            "centering": self.centering,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplineSpec":
        return cls(knots_x=d["knots_x"], knots_y=d["knots_y"],
                   beta=d["beta"], centering=d.get("centering", "none"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "SplineSpec":
        return cls.from_dict(json.loads(s))


def eval_surface(spec: SplineSpec, x, y):
    """Evaluate the fitted surface g(x, y) at one or many points."""
    rows = spec.design_row(x, y)
    vals = rows @ spec.beta
    if np.isscalar(x) and np.isscalar(y):
        return float(vals[0])
    return vals


# Default knot counts for the pixel-resolution spline surface.
DEFAULT_KNOTS_X = 3
DEFAULT_KNOTS_Y = 5
