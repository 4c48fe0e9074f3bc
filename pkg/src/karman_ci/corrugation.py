"""One corrugation step: add a plane-wave oscillation to (v, w) along a fixed
direction so that the deficit loses ``a^2 eta (x) eta`` up to an O(1/lambda) error.

With ``theta = lambda x.eta`` and ``c = sqrt(2) a / lambda``::

    v' = v + c sin(theta)
    w' = w - c sin(theta) grad v - a^2/(4 lambda) sin(2 theta) eta + psi

The profile pair works because 2 cos^2 t - cos 2t = 1. ``psi`` is an optional
second-order corrector (on by default)::

    psi = -(2c/lambda) cos(theta) [ (m_ee / 2) eta + m_ep eta_perp ]

with ``m = hess v`` in the (eta, eta_perp) frame. It removes the parts of the
leading error ``-2c sin(theta) hess v`` that are symmetric gradients, leaving
only ``-2c sin(theta) m_pp eta_perp (x) eta_perp``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .decomposition import DIRECTIONS
from .errors import ResolutionError
from .grid_fields import (
    PlanarMapField,
    ScalarField,
    grad_map,
    grad_scalar,
    hessian,
    norm,
    require_same_grid,
)

SQRT2 = math.sqrt(2.0)
MAX_LAMBDA_H = 0.25


@dataclass(frozen=True)
class StepParams:
    eta: tuple
    a: ScalarField
    lam: float

    def __post_init__(self):
        eta = tuple(float(e) for e in self.eta)
        if not math.isclose(math.hypot(*eta), 1.0, rel_tol=1e-12):
            raise ValueError(f"direction {eta} is not a unit vector")
        object.__setattr__(self, "eta", eta)
        if not self.lam > 0:
            raise ValueError(f"frequency must be positive, got {self.lam}")
        if np.any(self.a.values < 0):
            raise ValueError("amplitude must be nonnegative")

    @classmethod
    def from_primitive(cls, prim, lam):
        return cls(DIRECTIONS[prim.index], prim.amplitude(), lam)

    def check_resolvable(self):
        lh = self.lam * self.a.spec.h
        if lh > MAX_LAMBDA_H * (1 + 1e-12):
            raise ResolutionError(f"lambda*h = {lh:.4g} exceeds {MAX_LAMBDA_H}")


def _frame(eta):
    e1, e2 = eta
    return np.array([e1, e2]), np.array([-e2, e1])


def _hessian_frame(v, eta):
    """Components (m_ee, m_ep, m_pp) of hess v in the (eta, eta_perp) frame."""
    m = hessian(v).values
    e, p = _frame(eta)

    def quad(x, y):
        return m[..., 0] * x[0] * y[0] + m[..., 1] * (x[0] * y[1] + x[1] * y[0]) + m[..., 2] * x[1] * y[1]

    return quad(e, e), quad(e, p), quad(p, p)


def _corrector_direction(v, eta):
    m_ee, m_ep, _ = _hessian_frame(v, eta)
    e, p = _frame(eta)
    return 0.5 * m_ee[..., None] * e + m_ep[..., None] * p


def step(v, w, p, corrector=True):
    require_same_grid(v, w, p.a)
    p.check_resolvable()
    spec = v.spec
    X, Y = spec.coords()
    e = np.array(p.eta)
    theta = p.lam * (X * e[0] + Y * e[1])
    a = p.a.values
    c = SQRT2 * a / p.lam
    s1 = np.sin(theta)

    gv = grad_scalar(v).values
    v_new = v.values + c * s1
    w_new = (
        w.values
        - (c * s1)[..., None] * gv
        - (a * a / (4.0 * p.lam) * np.sin(2.0 * theta))[..., None] * e
    )
    if corrector:
        q = _corrector_direction(v, p.eta)
        w_new = w_new - (2.0 * c / p.lam * np.cos(theta))[..., None] * q
    return ScalarField(spec, v_new), PlanarMapField(spec, w_new)


def step_error_bound(v, p):
    """A-priori bound on the non-cancelled part of the deficit change (no FD term)."""
    ga = norm(grad_scalar(p.a))
    gv = norm(grad_scalar(v))
    amax = norm(p.a)
    hv = norm(hessian(v))
    return 8.0 / p.lam * (ga * (1.0 + gv + amax) + amax * hv)


def fd_allowance(v, p):
    """Allowance for finite-difference error of the oscillatory terms."""
    lh = p.lam * p.a.spec.h
    return 3.0 * lh**2 * (1.0 + norm(grad_scalar(v)) + norm(p.a)) ** 2


def step_error_profile(v, a, eta, corrector=True):
    """Coefficients ``(P, Q)`` with step error <= P/lambda + Q/lambda^2 (continuum terms).

    Tighter than step_error_bound: it uses pointwise products, and with the
    corrector only the eta_perp-eta_perp part of hess v enters P.
    """
    require_same_grid(v, a)
    av = a.values
    ga = np.sqrt(np.sum(grad_scalar(a).values ** 2, axis=-1))
    if corrector:
        _, _, m_pp = _hessian_frame(v, eta)
        lead = np.abs(m_pp)
        q = PlanarMapField(v.spec, _corrector_direction(v, eta))
        qmag = np.sqrt(np.sum(q.values**2, axis=-1))
        Jq = grad_map(q).sym().values
        sym_q = np.abs(0.5 * (Jq[..., 0] + Jq[..., 2])) + np.hypot(0.5 * (Jq[..., 0] - Jq[..., 2]), Jq[..., 1])
        extra = 4.0 * SQRT2 * (qmag * ga + av * sym_q)
    else:
        h = hessian(v).values
        lead = np.abs(0.5 * (h[..., 0] + h[..., 2])) + np.hypot(0.5 * (h[..., 0] - h[..., 2]), h[..., 1])
        extra = 0.0
    P = float(np.max(2.0 * SQRT2 * av * lead + av * ga))
    Q = float(np.max(2.0 * ga * ga + extra))
    return P, Q


def min_frequency(P, Q, budget):
    """Smallest lambda with P/lambda + Q/lambda^2 <= budget."""
    if P <= 0 and Q <= 0:
        return 0.0
    return (P + math.sqrt(P * P + 4.0 * budget * Q)) / (2.0 * budget)
