#!/usr/bin/env python3
"""Independent oracles for the frozen test values.

Nothing here imports ``karman_ci``. Values are computed in closed form with
exact rationals, sympy, or 50-digit mpmath, then written to
``tests/oracle_values.json``. Re-run after changing any formula below:

    python3 oracles/derive.py
"""
from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path

import mpmath as mp
import sympy as sp

mp.mp.dps = 50
OUT = Path(__file__).resolve().parents[1] / "tests" / "oracle_values.json"


def f(x):
    return float(x)


# --- four-direction decomposition, exact rationals -------------------------


def outer(c, e1, e2, half):
    # directions 3, 4 are (1, +-1)/sqrt(2); their outer products carry a 1/2
    s = Fraction(1, 2) if half else Fraction(1)
    return (c * e1 * e1 * s, c * e1 * e2 * s, c * e2 * e2 * s)


def decompose_exact(d11, d12, d22):
    off = abs(d12)
    return (d11 - off, d22 - off, 2 * max(d12, 0), 2 * max(-d12, 0))


def reconstruct_exact(c):
    parts = [
        outer(c[0], 1, 0, False),
        outer(c[1], 0, 1, False),
        outer(c[2], 1, 1, True),
        outer(c[3], 1, -1, True),
    ]
    return tuple(sum(p[i] for p in parts) for i in range(3))


def decomposition_cases():
    cases = {}
    for name, d in {
        "identity": (Fraction(1), Fraction(0), Fraction(1)),
        "offdiag_pos": (Fraction(1), Fraction(1, 4), Fraction(1)),
        "offdiag_neg": (Fraction(1), Fraction(-1, 2), Fraction(2)),
    }.items():
        c = decompose_exact(*d)
        assert reconstruct_exact(c) == d
        cases[name] = {"D": [f(x) for x in d], "coeffs": [f(x) for x in c]}
    # eta3 (x) eta3 + eta4 (x) eta4 = I
    assert reconstruct_exact((0, 0, Fraction(1), Fraction(1))) == (1, 0, 1)
    return cases


# --- corrugation step: discrete residual in closed form ---------------------


def profile_identity():
    t = sp.symbols("t", real=True)
    return sp.simplify(2 * sp.cos(t) ** 2 - sp.cos(2 * t)) == 1


def interior_step_error(a, lam, h):
    """sup over theta of the interior discrete increment error for constant a, affine v.

    Centered differences give d/dx sin(lam x) = sin(lam h)/h cos(lam x), so the
    gained deficit is 2 a^2 S1 cos^2 - a^2 S2 cos 2theta with S1 = sinc^2(lam h),
    S2 = sinc(2 lam h). The error is that minus a^2.
    """
    x = mp.mpf(lam) * mp.mpf(h)
    s1 = (mp.sin(x) / x) ** 2
    s2 = mp.sin(2 * x) / (2 * x)
    a2 = mp.mpf(a) ** 2

    def err(c2):  # c2 = cos^2 theta in [0, 1]
        return abs(2 * a2 * s1 * c2 - a2 * s2 * (2 * c2 - 1) - a2)

    # linear in c2, so the sup sits at an endpoint
    return max(err(mp.mpf(0)), err(mp.mpf(1)))


def gradient_taylor_bound(n):
    h = mp.mpf(1) / (n - 1)
    return (2 * mp.pi * h) ** 2 / 6 * 2 * mp.pi


def sin_gradient_interior_error(n):
    """Exact interior error of the centered stencil on sin(2 pi x): 2 pi (1 - sinc(2 pi h)) max|cos|."""
    h = mp.mpf(1) / (n - 1)
    k = 2 * mp.pi
    return k * (1 - mp.sin(k * h) / (k * h))


def step_bound_example():
    lam = 64 * mp.pi
    return 8 / lam * (mp.mpf("0.3") * mp.mpf("0.1") * (2 * mp.pi) ** 2)


# --- planner --------------------------------------------------------------


def hop(k, d2, sigma, n):
    ak2 = d2[k] - d2[k + 1]
    ak = mp.sqrt(ak2)
    ap = mp.sqrt(d2[k - 1] - d2[k]) if k > 0 else mp.mpf(0)
    budget = sigma * d2[k + 1]

    def g(t):
        return (n - 1) * 4 * ak2 / t + 4 * ak * ap * (t**-2 + t**-n) - budget

    if g(mp.mpf(2)) <= 0:
        return mp.mpf(2)
    lo, hi = mp.mpf(2), mp.mpf(2)
    while g(hi) > 0:
        lo, hi = hi, hi * 4
    return mp.findroot(g, (lo, hi), solver="bisect", tol=mp.mpf(10) ** -40, maxsteps=400)


def plan(d0, holder_a, h, K, ratio, sigma, eps0, beta, n=2, first_min=0):
    d0, ratio, sigma, eps0, beta = (mp.mpf(x) for x in (d0, ratio, sigma, eps0, beta))
    delta0 = mp.sqrt(d0)
    delta = [delta0 * ratio**k for k in range(K + 1)]
    d2 = [d * d for d in delta]
    hops = [hop(k, d2, sigma, n) for k in range(K)]
    cum, acc = [], mp.mpf(1)
    for t in hops:
        acc *= t**n
        cum.append(acc)
    theta2 = 1 + mp.mpf(holder_a)
    eps_bound = [(theta2 / (eps0 * d2[k])) ** (1 / beta) for k in range(K)]
    floor = max(max(eps_bound[k] / cum[k] for k in range(K)), mp.mpf(first_min) / hops[0])
    lam = [floor * c for c in cum]
    infeasible = next((k for k in range(K) if lam[k] * mp.mpf(h) > mp.mpf(1) / 4), None)
    alpha = None
    if K >= 2:
        alpha = min(mp.log(delta[k] / delta[k + 1]) / mp.log(lam[k + 1] / lam[k]) for k in range(K - 1))
    return {
        "delta": [f(x) for x in delta],
        "hops": [f(x) for x in hops],
        "lam": [f(x) for x in lam],
        "lam_floor": f(floor),
        "alpha_eff": None if alpha is None else f(alpha),
        "infeasible_stage": infeasible,
    }


# --- reduction bridge -------------------------------------------------------


def reduction_identity_plan(beta=mp.mpf("0.8"), eps0=mp.mpf("0.1")):
    # v = 0, A = I: |grad v (x) grad v - A| = 1 = D^2 / 2
    D = mp.sqrt(2)
    t0 = mp.sqrt(mp.mpf(1) / 2)
    m_min = 2 * (1 + 0 + D)
    m_eps = ((1 + 0) * D ** (beta - 2) / eps0) ** (1 / beta)
    return {"D": f(D), "t0": f(t0), "t": f(t0 / 2), "M": f(max(m_min, m_eps))}


def polar_diag(s):
    # F = diag(1 + s, 1) is SPD, so sqrt(F^T F) = F and the distance is s
    F = sp.Matrix([[1 + s, 0], [0, 1]])
    S = F.T * F
    root = (S + sp.sqrt(S.det()) * sp.eye(2)) / sp.sqrt(S.trace() + 2 * sp.sqrt(S.det()))
    root = sp.simplify(root)
    return root == F


def main():
    values = {
        "decomposition": decomposition_cases(),
        "profile_identity": profile_identity(),
        "step_constant_513": f(interior_step_error("0.3", 32 * mp.pi, mp.mpf(1) / 512)),
        "step_affine_513": f(interior_step_error("0.2", 32 * mp.pi, mp.mpf(1) / 512)),
        "sin_gradient_bound_257": f(gradient_taylor_bound(257)),
        "sin_gradient_interior_257": f(sin_gradient_interior_error(257)),
        "step_bound_example": f(step_bound_example()),
        "planner_fixture_2049": plan(0.5, 0, mp.mpf(1) / 2048, 3, 0.5, 0.6, 1000, 0.8),
        "planner_default_eps0_2049": plan(0.5, 0, mp.mpf(1) / 2048, 3, 0.5, 0.6, 0.1, 0.8),
        "planner_coarse_h64": plan(0.5, 0, mp.mpf(1) / 64, 6, 0.5, 0.25, 0.1, 0.8),
        "planner_coarse_h64_eps1000": plan(0.5, 0, mp.mpf(1) / 64, 6, 0.5, 0.25, 1000, 0.8),
        "reduction_identity": reduction_identity_plan(),
        "polar_diag_exact": polar_diag(sp.Rational(1, 100)),
        "synth_growth_4x": f(mp.mpf(4) ** (mp.mpf("0.95") - mp.mpf("0.8"))),
        "cv_telescoping": f(mp.sqrt(2) / (1 - mp.mpf("0.5"))),
    }
    OUT.write_text(json.dumps(values, indent=2, sort_keys=True) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
