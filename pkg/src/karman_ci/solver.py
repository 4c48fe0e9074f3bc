"""Staged convex integration for ``2 sym grad w + grad v (x) grad v = A``.

Each stage k cancels ``T = D - delta_{k+1}^2 I`` (after mollification) with one
corrugation step per active primitive, leaving a deficit within
``sigma * delta_{k+1}^2`` of ``delta_{k+1}^2 I``. Keeping that multiple of the
identity in reserve keeps the next target positive definite and inside the cone.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import __version__
from .corrugation import (
    MAX_LAMBDA_H,
    StepParams,
    fd_allowance,
    min_frequency,
    step,
    step_error_bound,
    step_error_profile,
)
from .decomposition import DIRECTIONS, Primitive, decompose
from .errors import (
    ConeViolation,
    ConfigError,
    DegenerateDeficit,
    Infeasible,
    NotShort,
    ScheduleTooAggressive,
)
from .grid_fields import (
    ScalarField,
    SymTensorField,
    grad_map,
    grad_scalar,
    holder_seminorm,
    magnitude,
    mat_spectral,
    mollify,
    norm,
    require_same_grid,
    vk_residual,
)

# alpha must stay below 1/(1 + n(n+1)) with n = 2
ALPHA_CAP = 1.0 / 7.0
MIN_HOP = 2.0
SKIP_FRACTION = 0.02
# off-diagonals up to this share of the budget are left in the deficit
DEFER_FRACTION = 0.5
# mollify well inside the previous stage's wavelength
ELL_PER_WAVELENGTH = 0.05
DEGENERATE_TOL = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    beta: float = 0.8
    alpha_target: float = 0.1
    p: float = 2.0
    stages: int = 3
    delta0: float | None = None
    ratio: float = 0.5
    sigma: float = 0.6
    eps0: float = 0.1
    mollify: float = 0.05
    seed: int = 0
    grid: int = 257

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ConfigError(f"beta must lie in (0, 1), got {self.beta}")
        cap = min(ALPHA_CAP, self.beta / 2.0)
        if not 0.0 < self.alpha_target < cap:
            raise ConfigError(
                f"alpha_target must lie in (0, min(1/7, beta/2)) = (0, {cap:.6g}), got {self.alpha_target}"
            )
        if not self.p >= 2.0:
            raise ConfigError(f"p must be >= 2, got {self.p}")
        if int(self.stages) != self.stages or self.stages < 1:
            raise ConfigError(f"stages must be a positive integer, got {self.stages}")
        if self.delta0 is not None and not self.delta0 > 0:
            raise ConfigError(f"delta0 must be positive, got {self.delta0}")
        if not 0.0 < self.ratio < 1.0:
            raise ConfigError(f"ratio must lie in (0, 1), got {self.ratio}")
        if not 0.0 < self.sigma < 1.0:
            raise ConfigError(f"sigma must lie in (0, 1), got {self.sigma}")
        if not self.eps0 > 0:
            raise ConfigError(f"eps0 must be positive, got {self.eps0}")
        if not self.mollify > 0:
            raise ConfigError(f"mollify must be positive, got {self.mollify}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed}")

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return asdict(self)


@dataclass
class Schedule:
    delta: list
    lam: list
    lam_floor: float
    mu: list
    ell: list
    hops: list
    theta2: float
    eps0: float
    eps0_binding: list
    n_steps: int
    h: float

    @property
    def stages(self):
        return len(self.lam)

    def to_dict(self):
        d = asdict(self)
        d["alpha_eff"] = holder_certificate(self) if self.stages >= 2 else None
        return d


def alpha_eff(delta, lam):
    """Largest Hoelder exponent a (delta_k, lambda_k) schedule supports."""
    ratios = []
    for k in range(len(lam) - 1):
        up = math.log(lam[k + 1] / lam[k])
        if up <= 0:
            continue
        ratios.append(math.log(delta[k] / delta[k + 1]) / up)
    return min(ratios) if ratios else math.inf


def holder_certificate(schedule):
    if len(schedule.lam) < 2:
        raise ConfigError("the Hoelder certificate needs at least two stages")
    return alpha_eff(schedule.delta, schedule.lam)


def _ladder_hop(k, d2, sigma, n, reserve=0.0):
    """In-stage frequency hop t for stage k under the nominal error model."""
    ak2 = max(d2[k] - d2[k + 1], 0.0)
    ak = math.sqrt(ak2)
    ap = math.sqrt(max(d2[k - 1] - d2[k], 0.0)) if k > 0 else 0.0
    budget = sigma * d2[k + 1] - reserve
    if budget <= 0:
        raise Infeasible(k, f"deferred off-diagonal {reserve:.6g} uses up the budget {sigma * d2[k + 1]:.6g}")

    def excess(t):
        return (n - 1) * 4.0 * ak2 / t + 4.0 * ak * ap * (t**-2 + t**-n) - budget

    if excess(MIN_HOP) <= 0:
        return MIN_HOP
    hi = MIN_HOP
    while excess(hi) > 0:
        hi *= 4.0
    return brentq(excess, MIN_HOP, hi, xtol=1e-12, rtol=1e-14)


def plan_schedule(d0_sup, holder_a, h, cfg, n_steps=2, first_step_min=0.0, reserve=0.0):
    """Choose (delta_k, lambda_k) for every stage.

    lambda_k is the smallest frequency consistent with (i) the per-stage error
    budget under the ladder model, (ii) delta^{beta-2} mu^{-beta} theta^2 <= eps0
    with mu_k = lambda_k delta_k and theta^2 = 1 + [A]_beta; (iii) lambda_k h <= 1/4
    is then checked and a violation raises Infeasible. ``reserve`` is deficit
    mass left uncancelled (a deferred off-diagonal); it comes out of the budget
    of every stage that would still defer it.
    """
    K = int(cfg.stages)
    theta2 = 1.0 + holder_a
    if d0_sup <= 0:
        return Schedule([], [], 0.0, [], [], [], theta2, cfg.eps0, [], n_steps, h)
    delta0 = cfg.delta0 if cfg.delta0 is not None else math.sqrt(d0_sup)
    delta = [delta0 * cfg.ratio**k for k in range(K + 1)]
    d2 = [d * d for d in delta]
    d2_amp = list(d2)
    d2_amp[0] = max(d0_sup, d2[0])
    n = max(int(n_steps), 1)

    # a stage keeps the off-diagonal only while it fits in DEFER_FRACTION of its budget
    reserves = [reserve if reserve <= DEFER_FRACTION * cfg.sigma * d2[k + 1] else 0.0 for k in range(K)]
    hops = [_ladder_hop(k, d2_amp, cfg.sigma, n, reserves[k]) for k in range(K)]
    cum = np.cumprod([t**n for t in hops])
    eps_bound = [(theta2 / (cfg.eps0 * d2[k])) ** (1.0 / cfg.beta) for k in range(K)]
    floor = max(float(max(eps_bound[k] / cum[k] for k in range(K))), first_step_min / hops[0])
    lam = [floor * float(c) for c in cum]
    binding = [math.isclose(lam[k], eps_bound[k], rel_tol=1e-9) for k in range(K)]

    for k in range(K):
        if lam[k] * h > MAX_LAMBDA_H * (1 + 1e-12):
            raise Infeasible(k, f"lambda_{k} = {lam[k]:.6g} needs h <= {MAX_LAMBDA_H / lam[k]:.3g}, grid has h = {h:.3g}")

    ell = []
    prev = floor
    for k in range(K):
        ell.append(max(2.0 * h, min(cfg.mollify * delta[k] / delta[0], ELL_PER_WAVELENGTH / prev)))
        prev = lam[k]
    mu = [lam[k] * delta[k] for k in range(K)]
    return Schedule(delta, lam, floor, mu, ell, hops, theta2, cfg.eps0, binding, n, h)


@dataclass
class StepRecord:
    index: int
    lam: float
    corrector: bool
    amplitude_sup: float
    predicted: float
    bound: float
    fd_allowance: float
    measured: float


@dataclass
class StageRecord:
    stage: int
    target: float
    ell: float
    budget: float
    deviation: float
    residual_sup: float
    min_eig: float
    deferred: float = 0.0
    steps: list = field(default_factory=list)
    wall_clock: float = 0.0

    def to_dict(self, timing=False):
        d = asdict(self)
        if not timing:
            d.pop("wall_clock")
        return d


def _identity(spec, s):
    return SymTensorField.constant(spec, s, 0.0, s)


def _rank_one(a_vals, eta, spec):
    e1, e2 = eta
    c = a_vals * a_vals
    return SymTensorField(spec, np.stack([c * e1 * e1, c * e1 * e2, c * e2 * e2], -1))


def split_target(T, budget):
    """Decompose T into primitives with smooth coefficients; returns (primitives, deferred).

    A small off-diagonal (at most DEFER_FRACTION of the budget) is not cancelled:
    only the diagonal part of T is decomposed and ``deferred = max |d12|`` stays
    in the deficit. Otherwise, where d12 changes sign, the plain coefficients carry |d12| and max(+-d12, 0),
    whose square roots have unbounded gradients on the zero set. In that case one
    diagonal direction takes a constant coefficient kappa and the rest of T (whose
    off-diagonal then has a strict sign) goes through decompose. The sum is still T.
    """
    d12 = T.values[..., 1]
    hi, lo = float(d12.max()), float(d12.min())
    off = max(hi, -lo)
    if off <= DEFER_FRACTION * budget:
        diag = T.values.copy()
        diag[..., 1] = 0.0
        return decompose(SymTensorField(T.spec, diag)), off
    if not (lo < 0.0 < hi):
        return decompose(T), 0.0
    spread = hi - lo
    # keep the smaller constant; idx 2 is (1, 1)/sqrt2, idx 3 is (1, -1)/sqrt2
    idx, kappa = (2, 2.0 * hi + spread) if hi <= -lo else (3, -2.0 * lo + spread)
    e1, e2 = DIRECTIONS[idx]
    shifted = T - SymTensorField.constant(T.spec, kappa * e1 * e1, kappa * e1 * e2, kappa * e2 * e2)
    try:
        prims = decompose(shifted)
    except ConeViolation:
        return decompose(T), 0.0
    const = ScalarField(T.spec, np.full(T.spec.shape, kappa))
    return [Primitive(p.index, const) if p.index == idx else p for p in prims], 0.0


def active_primitives(T, budget, stage):
    """Primitives a stage will cancel, in step order, and the deferred off-diagonal."""
    floor = SKIP_FRACTION * budget
    # every coefficient is at most 2 max|T_ij|; skip before roundoff can trip the cone check
    if 2.0 * float(np.abs(T.values).max()) <= floor:
        return [], float(np.abs(T.values[..., 1]).max())
    prims, deferred = split_target(T, budget)
    prims = [p for p in prims if float(p.coeff.values.max()) > floor]
    return (prims[::-1] if stage % 2 else prims), deferred


def stage_start(schedule, k):
    return schedule.lam_floor if k == 0 else schedule.lam[k - 1]


def run_stage(v, w, A, k, schedule, sigma, check_steps=True):
    """Run stage k; returns ``(v', w', StageRecord)``."""
    t0 = time.perf_counter()
    spec = require_same_grid(v, w, A)
    target = schedule.delta[k + 1] ** 2
    budget = sigma * target
    D = vk_residual(v, w, A)
    T = mollify(D - _identity(spec, target), schedule.ell[k])
    prims, deferred = active_primitives(T, budget, k)

    lo = stage_start(schedule, k)
    hi = schedule.lam[k]
    m = len(prims)
    records = []
    for i, prim in enumerate(prims):
        lam = lo * (hi / lo) ** ((i + 1) / m)
        a = prim.amplitude()
        options = []
        for corr in (True, False):
            P, Q = step_error_profile(v, a, prim.eta, corr)
            options.append((P / lam + Q / lam**2, not corr, corr))
        predicted, _, corr = min(options)
        params = StepParams(prim.eta, a, lam)
        bound = step_error_bound(v, params)
        fd = fd_allowance(v, params)
        v, w = step(v, w, params, corrector=corr)
        measured = math.nan
        if check_steps:
            D_new = vk_residual(v, w, A)
            measured = norm(D_new - D + _rank_one(a.values, prim.eta, spec))
            D = D_new
        records.append(
            StepRecord(prim.index, lam, corr, norm(a), predicted, bound, fd, measured)
        )

    D = vk_residual(v, w, A)
    deviation = norm(D - _identity(spec, target))
    lo_eig, _ = D.eigenvalues()
    rec = StageRecord(
        stage=k,
        target=target,
        ell=schedule.ell[k],
        budget=budget,
        deviation=deviation,
        residual_sup=norm(D),
        min_eig=float(lo_eig.min()),
        deferred=deferred,
        steps=records,
        wall_clock=time.perf_counter() - t0,
    )
    if deviation > budget:
        err = ScheduleTooAggressive(k, deviation, budget)
        err.record = rec
        raise err
    return v, w, rec


def verify_thm1_bounds(v0, w0, v_bar, w_bar, A, p=2.0):
    """Empirical constants of the two gradient estimates.

    C_v = |grad v_bar - grad v0|_sup / D0^{1/2}
    C_w = |grad w_bar - grad w0|_{L^p} / (|grad v0|_sup D0^{1/2} + D0)
    """
    require_same_grid(v0, w0, v_bar, w_bar, A)
    d0 = norm(vk_residual(v0, w0, A))
    if d0 <= 0:
        raise DegenerateDeficit("initial deficit is zero; the estimates are vacuous")
    dv = norm(grad_scalar(v_bar) - grad_scalar(v0))
    Jdiff = grad_map(w_bar).values - grad_map(w0).values
    weights = v0.spec.quadrature_weights()
    dw = float(np.sum(mat_spectral(Jdiff) ** p * weights)) ** (1.0 / p)
    gv0 = norm(grad_scalar(v0))
    return dv / math.sqrt(d0), dw / (gv0 * math.sqrt(d0) + d0)


@dataclass
class SolveReport:
    config: dict
    seed: int
    grid: dict
    initial_residual: float
    shortness_margin: float
    holder_A: float
    schedule: dict
    stages: list
    final_residual: float
    residual_bound: float
    monotone: bool
    C_v: float | None
    C_w: float | None
    alpha_eff_planned: float | None
    alpha_eff_used: float | None
    tool_version: str = __version__

    @property
    def stages_run(self):
        return len(self.stages)

    def to_dict(self, timing=False):
        return {
            "tool_version": self.tool_version,
            "config": self.config,
            "seed": self.seed,
            "grid": self.grid,
            "initial_residual": self.initial_residual,
            "shortness_margin": self.shortness_margin,
            "holder_A": self.holder_A,
            "schedule": self.schedule,
            "stages_run": self.stages_run,
            "stages": [s.to_dict(timing) for s in self.stages],
            "final_residual": self.final_residual,
            "residual_bound": self.residual_bound,
            "monotone": self.monotone,
            "C_v": self.C_v,
            "C_w": self.C_w,
            "alpha_eff_planned": self.alpha_eff_planned,
            "alpha_eff_used": self.alpha_eff_used,
        }

    def timings(self):
        return [s.wall_clock for s in self.stages]


def first_step_frequency(v0, prims, budget):
    """Lowest first-step frequency keeping each stage-0 step within budget / n given v0."""
    need = 0.0
    n = max(len(prims), 1)
    for prim in prims:
        a = prim.amplitude()
        best = min(min_frequency(*step_error_profile(v0, a, prim.eta, c), budget / n) for c in (True, False))
        need = max(need, best)
    return need


def solve(v0, w0, A, cfg):
    """Drive the deficit of (v0, w0) towards zero; returns ``(v, w, SolveReport)``."""
    spec = require_same_grid(v0, w0, A)
    D0 = vk_residual(v0, w0, A)
    d0_sup = norm(D0)
    margin = float(D0.eigenvalues()[0].min())
    grid = {"nx": spec.nx, "ny": spec.ny, "domain": list(spec.domain)}
    holder_a = holder_seminorm(A, cfg.beta)

    def report(schedule, stages, v, w, final, bound):
        consts = (None, None)
        if d0_sup > DEGENERATE_TOL * max(1.0, norm(A)):
            consts = verify_thm1_bounds(v0, w0, v, w, A, cfg.p)
        sups = [d0_sup] + [s.residual_sup for s in stages]
        used = [s.steps[-1].lam for s in stages if s.steps]
        return SolveReport(
            config=cfg.to_dict(),
            seed=cfg.seed,
            grid=grid,
            initial_residual=d0_sup,
            shortness_margin=margin,
            holder_A=holder_a,
            schedule=schedule.to_dict() if schedule else None,
            stages=stages,
            final_residual=final,
            residual_bound=bound,
            monotone=all(b < a for a, b in zip(sups, sups[1:])),
            C_v=consts[0],
            C_w=consts[1],
            alpha_eff_planned=holder_certificate(schedule) if schedule and schedule.stages >= 2 else None,
            alpha_eff_used=alpha_eff(schedule.delta, used) if schedule and len(used) >= 2 else None,
        )

    if d0_sup <= DEGENERATE_TOL * max(1.0, norm(A)):
        return v0, w0, report(None, [], v0, w0, d0_sup, d0_sup)
    if margin <= 0:
        raise NotShort(margin)

    K = int(cfg.stages)
    delta0 = cfg.delta0 if cfg.delta0 is not None else math.sqrt(d0_sup)
    d1_sq = (delta0 * cfg.ratio) ** 2
    if d1_sq > margin / 2:
        raise Infeasible(0, f"delta_1^2 = {d1_sq:.6g} exceeds half the shortness margin {margin:.6g}")

    # probe stage 0 to size the ladder and the first frequency
    budget0 = cfg.sigma * d1_sq
    ell0 = max(2.0 * spec.h, cfg.mollify)
    T0 = mollify(D0 - _identity(spec, d1_sq), ell0)
    prims0, reserve = active_primitives(T0, budget0, 0)
    n_active = max(len(prims0), 1)
    need = first_step_frequency(v0, prims0, budget0 - reserve)
    schedule = plan_schedule(
        d0_sup, holder_a, spec.h, cfg, n_steps=n_active, first_step_min=need, reserve=reserve
    )

    v, w = v0, w0
    stages = []
    for k in range(K):
        v, w, rec = run_stage(v, w, A, k, schedule, cfg.sigma)
        stages.append(rec)
    final = stages[-1].residual_sup
    bound = (1.0 + cfg.sigma) * schedule.delta[K] ** 2
    return v, w, report(schedule, stages, v, w, final, bound)


def residual_sup(v, w, A):
    return float(magnitude(vk_residual(v, w, A)).max())
