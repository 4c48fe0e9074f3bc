import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from karman_ci.errors import ConfigError, Infeasible, NotShort, ScheduleTooAggressive
from karman_ci.grid_fields import (
    GridSpec,
    PlanarMapField,
    ScalarField,
    SymTensorField,
    grad_map,
    grad_scalar,
    outer_self,
    shortness_margin,
    synth_holder_tensor,
    vk_residual,
)
from karman_ci.solver import (
    Schedule,
    SolverConfig,
    active_primitives,
    alpha_eff,
    holder_certificate,
    plan_schedule,
    run_stage,
    solve,
    split_target,
    verify_thm1_bounds,
)


def zero_pair(spec):
    return ScalarField.zeros(spec), PlanarMapField.zeros(spec)


def toy_schedule(delta, lam):
    n = len(lam)
    return Schedule(list(delta), list(lam), lam[0] / 2, [0.0] * n, [0.1] * n, [2.0] * n, 1.0, 0.1, [False] * n, 2, 1e-3)


# --- config -------------------------------------------------------------------


def test_config_defaults_and_roundtrip():
    cfg = SolverConfig()
    assert cfg.eps0 == 0.1 and cfg.alpha_target == 0.1
    assert SolverConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        SolverConfig.from_dict({"stages": 2, "bogus": 1})


@pytest.mark.parametrize(
    "bad",
    [
        {"beta": 1.0},
        {"alpha_target": 0.0},
        {"p": 1.5},
        {"stages": 0},
        {"stages": 1.5},
        {"delta0": -1.0},
        {"ratio": 1.0},
        {"sigma": 0.0},
        {"eps0": 0.0},
        {"mollify": 0.0},
        {"seed": -1},
    ],
)
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        SolverConfig(**bad)


# --- planner --------------------------------------------------------------------


def test_empty_schedule_for_zero_deficit():
    sched = plan_schedule(0.0, 0.0, 1 / 64, SolverConfig())
    assert sched.stages == 0 and sched.lam == []


def test_geometric_deltas():
    sched = plan_schedule(0.49, 0.0, 1 / 2048, SolverConfig(stages=3, ratio=0.5, eps0=1000.0))
    assert sched.delta == pytest.approx([0.7, 0.35, 0.175, 0.0875], rel=1e-14)
    assert all(b < a for a, b in zip(sched.delta, sched.delta[1:]))
    assert all(b >= a for a, b in zip(sched.lam, sched.lam[1:]))
    assert sched.lam[-1] * sched.h <= 0.25


def test_planner_matches_oracle(oracle):
    ref = oracle["planner_fixture_2049"]
    sched = plan_schedule(0.5, 0.0, 1 / 2048, SolverConfig(stages=3, ratio=0.5, sigma=0.6, eps0=1000.0))
    assert sched.delta == pytest.approx(ref["delta"], rel=1e-12)
    assert sched.hops == pytest.approx(ref["hops"], rel=1e-9)
    assert sched.lam == pytest.approx(ref["lam"], rel=1e-9)
    assert holder_certificate(sched) == pytest.approx(ref["alpha_eff"], rel=1e-9)


@pytest.mark.parametrize(
    "key, h, stages, sigma, eps0",
    [
        ("planner_default_eps0_2049", 1 / 2048, 3, 0.6, 0.1),
        ("planner_coarse_h64", 1 / 64, 6, 0.25, 0.1),
        ("planner_coarse_h64_eps1000", 1 / 64, 6, 0.25, 1000.0),
    ],
)
def test_planner_infeasible_stage(oracle, key, h, stages, sigma, eps0):
    expected = oracle[key]["infeasible_stage"]
    assert expected is not None and expected <= 6
    cfg = SolverConfig(stages=stages, ratio=0.5, sigma=sigma, eps0=eps0)
    with pytest.raises(Infeasible) as exc:
        plan_schedule(0.5, 0.0, h, cfg)
    assert exc.value.stage == expected


def test_eps0_binding_is_recorded():
    sched = plan_schedule(0.5, 0.0, 1 / 2048, SolverConfig(stages=3, eps0=1000.0))
    assert len(sched.eps0_binding) == 3 and any(sched.eps0_binding)


# --- certificate ----------------------------------------------------------------


def test_certificate_examples():
    d = [2.0**-k for k in range(4)]
    assert holder_certificate(toy_schedule(d, [32.0**k for k in range(3)])) == pytest.approx(0.2, rel=1e-14)
    assert holder_certificate(toy_schedule(d, [2.0 ** (7 * k) for k in range(3)])) == pytest.approx(1 / 7, rel=1e-14)
    assert holder_certificate(toy_schedule(d, [2.0**k for k in range(3)])) == pytest.approx(1.0, rel=1e-14)
    assert holder_certificate(toy_schedule(d, [5.0, 5.0, 5.0])) == math.inf
    with pytest.raises(ConfigError):
        holder_certificate(toy_schedule(d[:2], [5.0]))


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(1.1, 50.0), min_size=2, max_size=5),
    st.floats(0.2, 0.9),
    st.floats(1e-3, 1e3),
)
def test_certificate_scale_invariant(hops, ratio, scale):
    lam = list(np.cumprod([1.0] + hops))
    delta = [ratio**k for k in range(len(lam) + 1)]
    base = alpha_eff(delta, lam)
    assert alpha_eff(delta, [scale * x for x in lam]) == pytest.approx(base, rel=1e-9)


# --- target splitting -------------------------------------------------------------


def test_split_target_defers_small_offdiagonal():
    spec = GridSpec(17)
    T = SymTensorField.constant(spec, 0.3, 0.01, 0.2)
    prims, deferred = split_target(T, budget=0.1)
    assert deferred == pytest.approx(0.01)
    assert [float(p.coeff.values.max()) for p in prims] == pytest.approx([0.3, 0.2, 0.0, 0.0])


def test_split_target_sign_change_is_exact():
    spec = GridSpec(33)
    X, _ = spec.coords()
    T = SymTensorField(spec, np.stack([1.0 + 0 * X, 0.2 * np.cos(2 * np.pi * X), 1.0 + 0 * X], -1))
    prims, deferred = split_target(T, budget=0.01)
    assert deferred == 0.0
    total = sum((p.coeff.values[..., None] * _outer(p.eta) for p in prims), np.zeros(spec.shape + (3,)))
    assert np.abs(total - T.values).max() < 1e-14
    # one diagonal direction carries a constant coefficient
    assert any(np.ptp(p.coeff.values) == 0 and p.coeff.values.max() > 0 for p in prims if p.index >= 2)


def _outer(eta):
    e1, e2 = eta
    return np.array([e1 * e1, e1 * e2, e2 * e2])


def test_anisotropic_stage_uses_axis_primitives():
    spec = GridSpec(33)
    T = SymTensorField.constant(spec, 0.6 - 0.15, 0.0, 0.4 - 0.15)
    prims, _ = active_primitives(T, budget=0.6 * 0.15, stage=0)
    assert [p.index for p in prims] == [0, 1]
    prims, _ = active_primitives(T, budget=0.6 * 0.15, stage=1)
    assert [p.index for p in prims] == [1, 0]


# --- stages -------------------------------------------------------------------------


def test_stage_at_target_is_identity():
    spec = GridSpec(65)
    v, w = zero_pair(spec)
    A = SymTensorField.constant(spec, 0.125, 0.0, 0.125)
    sched = toy_schedule([0.5, 0.125**0.5], [10.0])
    v1, w1, rec = run_stage(v, w, A, 0, sched, 0.6)
    assert rec.steps == []
    assert np.array_equal(v1.values, v.values) and np.array_equal(w1.values, w.values)


def test_single_stage_meets_budget():
    spec = GridSpec(513)
    v, w = zero_pair(spec)
    A = SymTensorField.constant(spec, 0.5, 0.0, 0.5)
    cfg = SolverConfig(stages=1, sigma=0.6, eps0=1000.0)
    sched = plan_schedule(0.5, 0.0, spec.h, cfg)
    assert sched.delta[1] ** 2 == pytest.approx(0.125)
    v1, w1, rec = run_stage(v, w, A, 0, sched, cfg.sigma)
    assert rec.deviation <= 0.6 * 0.125
    assert [s.index for s in rec.steps] == [0, 1]
    for s in rec.steps:
        assert s.measured <= s.bound + s.fd_allowance


def test_stage_post_check_raises():
    spec = GridSpec(129)
    X, Y = spec.coords()
    v0 = ScalarField(spec, 0.2 * np.sin(2 * np.pi * X) * np.sin(2 * np.pi * Y))
    w0 = PlanarMapField.zeros(spec)
    A = outer_self(grad_scalar(v0)) + SymTensorField.constant(spec, 0.5, 0.0, 0.5)
    # frequencies far below what the curvature of v0 needs
    sched = toy_schedule([0.5**0.5, 0.5], [3.0])
    with pytest.raises(ScheduleTooAggressive) as exc:
        run_stage(v0, w0, A, 0, sched, 0.1)
    assert exc.value.stage == 0
    assert exc.value.record.deviation > exc.value.record.budget


# --- solve -----------------------------------------------------------------------------


def test_manufactured_exact_input_is_returned():
    spec = GridSpec(65)
    X, Y = spec.coords()
    v0 = ScalarField(spec, 0.1 * np.sin(2 * np.pi * X))
    w0 = PlanarMapField(spec, 0.05 * np.stack([np.cos(2 * np.pi * Y), X * Y], -1))
    A = outer_self(grad_scalar(v0)) + 2.0 * grad_map(w0).sym()
    v, w, rep = solve(v0, w0, A, SolverConfig())
    assert v is v0 and w is w0
    assert rep.stages_run == 0 and rep.C_v is None


def test_not_short_raises():
    spec = GridSpec(33)
    v, w = zero_pair(spec)
    with pytest.raises(NotShort):
        solve(v, w, SymTensorField.constant(spec, 1.0, 0.0, -1.0), SolverConfig())


def test_margin_too_small_for_first_stage():
    spec = GridSpec(33)
    v, w = zero_pair(spec)
    # delta_1^2 = 0.25 * 0.5 exceeds half the margin 0.1
    A = SymTensorField.constant(spec, 0.5, 0.0, 0.1)
    with pytest.raises(Infeasible) as exc:
        solve(v, w, A, SolverConfig(stages=1, eps0=1000.0))
    assert exc.value.stage == 0


def holder_fixture(n):
    spec = GridSpec(n)
    A = SymTensorField.constant(spec, 0.4, 0.0, 0.4) + synth_holder_tensor(0.8, 7, 0.05, spec)
    return (*zero_pair(spec), A)


def test_holder_fixture_one_stage():
    v0, w0, A = holder_fixture(513)
    assert shortness_margin(v0, w0, A) >= 0.35 - 1e-12
    # ratio 0.6 keeps delta_1^2 under half the margin; sigma < 1 - ratio^2 keeps the next target positive
    cfg = SolverConfig(stages=1, ratio=0.6, sigma=0.6, mollify=0.3, eps0=1000.0)
    _, _, rep = solve(v0, w0, A, cfg)
    assert rep.monotone and rep.final_residual < rep.initial_residual
    assert rep.final_residual <= rep.residual_bound


def test_holder_fixture_two_stages_exceed_desk_grid():
    v0, w0, A = holder_fixture(513)
    cfg = SolverConfig(stages=2, ratio=0.6, sigma=0.6, mollify=0.3, eps0=1000.0)
    with pytest.raises(Infeasible) as exc:
        solve(v0, w0, A, cfg)
    assert exc.value.stage == 1


def test_solve_deterministic():
    spec = GridSpec(257)
    v, w = zero_pair(spec)
    A = SymTensorField.constant(spec, 0.5, 0.0, 0.5)
    cfg = SolverConfig(stages=2, eps0=1000.0)
    r1 = solve(v, w, A, cfg)
    r2 = solve(v, w, A, cfg)
    assert r1[2].to_dict() == r2[2].to_dict()
    assert np.array_equal(r1[0].values, r2[0].values) and np.array_equal(r1[1].values, r2[1].values)


def test_fixture2_margin_and_step_contracts(fixture2):
    rep = fixture2["report"]
    sigma = fixture2["cfg"].sigma
    for s in rep.stages:
        assert s.min_eig >= (1 - sigma) * s.target
        assert s.deviation <= s.budget
        assert len(s.steps) == 2
        lams = [st_.lam for st_ in s.steps]
        assert lams == sorted(lams) and lams[-1] <= rep.schedule["lam"][s.stage] * (1 + 1e-12)
        for step in s.steps:
            assert step.measured <= step.bound + step.fd_allowance
    assert rep.residual_bound == pytest.approx(1.6 * 0.5 * 4.0**-3)
    d = rep.to_dict()
    assert list(d)[:3] == ["tool_version", "config", "seed"]
    assert "wall_clock" not in d["stages"][0]
    assert len(rep.timings()) == 3


# --- gradient-estimate constants --------------------------------------------------------------------


def test_gradient_constants_zero_for_unchanged_pair():
    spec = GridSpec(33)
    X, _ = spec.coords()
    v = ScalarField(spec, 0.3 * X)
    w = PlanarMapField.zeros(spec)
    A = SymTensorField.constant(spec, 0.5, 0.0, 0.5)
    assert verify_thm1_bounds(v, w, v, w, A) == (0.0, 0.0)


def test_gradient_constants_scale_invariant():
    spec = GridSpec(65)
    X, Y = spec.coords()
    v0 = ScalarField(spec, 0.2 * X + 0.1 * Y)
    w0 = PlanarMapField(spec, 0.05 * np.stack([Y, X * X], -1))
    v1 = ScalarField(spec, v0.values + 0.02 * np.sin(9 * X))
    w1 = PlanarMapField(spec, w0.values + 0.01 * np.stack([np.cos(7 * Y), X * Y], -1))
    A = SymTensorField.constant(spec, 0.5, 0.05, 0.4)
    s = 0.5
    base = verify_thm1_bounds(v0, w0, v1, w1, A)
    scaled = verify_thm1_bounds(v0 * s, w0 * s**2, v1 * s, w1 * s**2, A * s**2)
    assert scaled[0] == pytest.approx(base[0], rel=1e-12)


def test_solver_C_v_scale_invariant():
    spec = GridSpec(513)
    v, w = zero_pair(spec)
    out = []
    for s in (1.0, 0.5):
        A = SymTensorField.constant(spec, 0.5 * s * s, 0.0, 0.5 * s * s)
        _, _, rep = solve(v, w, A, SolverConfig(stages=2, eps0=1000.0))
        out.append(rep.C_v)
    assert out[1] == pytest.approx(out[0], rel=1e-6)
