"""Nonnegative decomposition of deficits over four fixed rank-one directions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConeViolation
from .grid_fields import ScalarField, SymTensorField, require_same_grid

_R = 1.0 / math.sqrt(2.0)
DIRECTIONS = (
    (1.0, 0.0),
    (0.0, 1.0),
    (_R, _R),
    (_R, -_R),
)


@dataclass(frozen=True)
class Primitive:
    """``coeff * eta (x) eta``; ``coeff`` is the squared amplitude a^2."""

    index: int
    coeff: ScalarField

    def __post_init__(self):
        if self.index not in range(4):
            raise ValueError(f"primitive index must be 0..3, got {self.index}")
        if np.any(self.coeff.values < 0):
            raise ValueError("primitive coefficients must be nonnegative")

    @property
    def eta(self):
        return DIRECTIONS[self.index]

    def amplitude(self):
        return ScalarField(self.coeff.spec, np.sqrt(self.coeff.values))


def cone_margin(D):
    """Pointwise ``min(d11, d22) - |d12|``; nonnegative exactly on the admissible cone."""
    d = D.values
    return np.minimum(d[..., 0], d[..., 2]) - np.abs(d[..., 1])


def decompose(D):
    """Split ``D`` into four primitives whose weighted sum reproduces it exactly.

    Raises ConeViolation at the worst node if ``|d12| <= min(d11, d22)`` fails.
    """
    margin = cone_margin(D)
    worst = int(np.argmin(margin))
    if margin.flat[worst] < 0:
        node = np.unravel_index(worst, margin.shape)
        raise ConeViolation(tuple(int(i) for i in node), float(margin.flat[worst]))
    d11, d12, d22 = np.moveaxis(D.values, -1, 0)
    off = np.abs(d12)
    coeffs = (
        d11 - off,
        d22 - off,
        2.0 * np.maximum(d12, 0.0),
        2.0 * np.maximum(-d12, 0.0),
    )
    return [Primitive(i, ScalarField(D.spec, c)) for i, c in enumerate(coeffs)]


def reconstruct(primitives):
    spec = require_same_grid(*(p.coeff for p in primitives))
    out = np.zeros(spec.shape + (3,))
    for p in primitives:
        e1, e2 = p.eta
        c = p.coeff.values
        out[..., 0] += c * e1 * e1
        out[..., 1] += c * e1 * e2
        out[..., 2] += c * e2 * e2
    return SymTensorField(spec, out)
