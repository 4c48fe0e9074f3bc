"""Batch command line: ``karman-ci {gen,solve,reduce,verify,norms}``.

Settings resolve as defaults < ``--config`` JSON < flags. Every command writes
its outputs first and ``manifest.json`` last.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, KarmanError, VerificationMismatch
from .grid_fields import (
    GridSpec,
    PlanarMapField,
    ScalarField,
    SymTensorField,
    grad_map,
    grad_scalar,
    holder_seminorm,
    norm,
    outer_self,
    shortness_margin,
    synth_holder_tensor,
    vk_residual,
)
from .io import FieldIOError, dumps, read_field, read_json, write_field, write_json
from .reduction import plan_reduction, reduction_audit
from .solver import SolverConfig, alpha_eff, solve, verify_thm1_bounds

log = logging.getLogger("karman_ci")

# flag name -> config key
CONFIG_FLAGS = {
    "grid": "grid",
    "beta": "beta",
    "alpha": "alpha_target",
    "p": "p",
    "stages": "stages",
    "delta0": "delta0",
    "ratio": "ratio",
    "sigma": "sigma",
    "eps0": "eps0",
    "seed": "seed",
}
REL_TOL = 1e-9


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def resolve_config(args):
    data = {}
    if args.config:
        loaded = read_json(args.config)
        if not isinstance(loaded, dict):
            raise ConfigError(f"{args.config} must hold a JSON object")
        data.update(loaded)
    for flag, key in CONFIG_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            data[key] = val
    try:
        return SolverConfig.from_dict(data), data
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def write_manifest(out, command, cfg, inputs, outputs, started, extra=None):
    for p in outputs:
        if not Path(p).exists():
            raise KarmanError(f"expected output {p} is missing")
    manifest = {
        "command": command,
        "tool_version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "started": started,
        "finished": _now(),
    }
    if extra:
        manifest.update(extra)
    return write_json(Path(out) / "manifest.json", manifest)


def _require(path):
    path = Path(path)
    if not path.exists():
        raise FieldIOError(f"missing input {path}")
    return path


def _pair_paths(directory):
    """(v, w) manifests in a directory: solver outputs if present, else generator outputs."""
    directory = Path(directory)
    for v_name, w_name in (("v", "w"), ("v0", "w0")):
        if (directory / f"{v_name}.json").exists():
            return _require(directory / f"{v_name}.json"), _require(directory / f"{w_name}.json")
    return _require(directory / "v.json"), _require(directory / "w.json")


def manufactured_pair(spec, seed):
    """Smooth seeded (v0, w0) built from a few low Fourier modes."""
    rng = np.random.default_rng(seed)
    X, Y = spec.coords()
    v = np.zeros(spec.shape)
    w = np.zeros(spec.shape + (2,))
    for kx, ky in ((1, 0), (0, 1), (1, 1), (2, 1)):
        cv, cw1, cw2, phase = rng.uniform(-1, 1, size=4)
        arg = 2 * math.pi * (kx * X + ky * Y) + math.pi * phase
        v += 0.05 * cv * np.sin(arg)
        w[..., 0] += 0.02 * cw1 * np.cos(arg)
        w[..., 1] += 0.02 * cw2 * np.sin(arg)
    return ScalarField(spec, v), PlanarMapField(spec, w)


def cmd_gen(args):
    started = _now()
    cfg, _ = resolve_config(args)
    out = Path(args.out)
    spec = GridSpec(cfg.grid)
    if args.init == "smooth" or args.exact:
        v0, w0 = manufactured_pair(spec, cfg.seed)
    else:
        v0, w0 = ScalarField.zeros(spec), PlanarMapField.zeros(spec)
    exact = outer_self(grad_scalar(v0)) + 2.0 * grad_map(w0).sym()
    if args.exact:
        A = exact
    else:
        A = exact + SymTensorField.constant(spec, args.shift, 0.0, args.shift)
        if args.amplitude > 0:
            A = A + synth_holder_tensor(cfg.beta, cfg.seed, args.amplitude, spec)
    outputs = []
    for f, name in ((v0, "v0"), (w0, "w0"), (A, "A")):
        outputs.append(write_field(f, out, name))
        outputs.append(out / f"{name}.csv")
    summary = {
        "tool_version": __version__,
        "grid": {"nx": spec.nx, "ny": spec.ny, "domain": list(spec.domain)},
        "seed": cfg.seed,
        "beta": cfg.beta,
        "shift": 0.0 if args.exact else args.shift,
        "amplitude": 0.0 if args.exact else args.amplitude,
        "init": "smooth" if args.exact else args.init,
        "exact": bool(args.exact),
        "shortness_margin": shortness_margin(v0, w0, A),
        "initial_residual": norm(vk_residual(v0, w0, A)),
        "holder_A": holder_seminorm(A, cfg.beta),
    }
    outputs.append(write_json(out / "gen_report.json", summary))
    write_manifest(out, "gen", cfg, [], outputs, started)
    print(f"gen: wrote {spec.nx}x{spec.ny} fields to {out}; shortness margin {summary['shortness_margin']:.6g}")
    return 0


def _load_problem(directory):
    directory = Path(directory)
    vp, wp = _pair_paths(directory)
    ap = _require(directory / "A.json")
    return read_field(vp), read_field(wp), read_field(ap), [vp, wp, ap]


def cmd_solve(args):
    started = _now()
    cfg, explicit = resolve_config(args)
    src = Path(args.inp)
    v0 = read_field(_require(src / "v0.json"))
    w0 = read_field(_require(src / "w0.json"))
    A = read_field(_require(src / "A.json"))
    inputs = [src / "v0.json", src / "w0.json", src / "A.json"]
    if "grid" in explicit and int(explicit["grid"]) != A.spec.nx:
        raise ConfigError(f"config grid {explicit['grid']} does not match input grid {A.spec.nx}")
    cfg = SolverConfig.from_dict({**cfg.to_dict(), "grid": A.spec.nx})
    v, w, report = solve(v0, w0, A, cfg)
    out = Path(args.out)
    outputs = []
    for f, name in ((v, "v"), (w, "w")):
        outputs.append(write_field(f, out, name))
        outputs.append(out / f"{name}.csv")
    outputs.append(write_json(out / "report.json", report.to_dict()))
    write_manifest(
        out,
        "solve",
        cfg,
        inputs,
        outputs,
        started,
        {"stage_wall_clock": report.timings()},
    )
    print(
        f"solve: {report.stages_run} stage(s), final residual {report.final_residual:.6g} "
        f"(bound {report.residual_bound:.6g})"
    )
    return 0


def cmd_reduce(args):
    started = _now()
    cfg, _ = resolve_config(args)
    src = Path(args.inp)
    v, w, A, inputs = _load_problem(src) if (src / "A.json").exists() else _solve_dir_problem(src)
    plan = plan_reduction(v, A, cfg.beta, eps0=cfg.eps0, t_request=args.t)
    audit = reduction_audit(v, w, A, plan.t, cfg.p)
    out = Path(args.out)
    doc = {"tool_version": __version__, "plan": plan.to_dict(), "audit": audit}
    outputs = [write_json(out / "reduction.json", doc)]
    write_manifest(out, "reduce", cfg, inputs, outputs, started)
    print(
        f"reduce: t = {plan.t:.6g}{' (clamped)' if plan.clamped else ''}, "
        f"lift identity {audit['lift_identity_residual']:.3g}, vauwee residual {audit['vauwee_residual']:.6g}"
    )
    return 0


def _solve_dir_problem(directory):
    """Solver outputs plus the A recorded in the solve manifest."""
    directory = Path(directory)
    manifest = read_json(_require(directory / "manifest.json"))
    a_path = next((Path(p) for p in manifest.get("inputs", []) if Path(p).name == "A.json"), None)
    if a_path is None:
        raise ConfigError(f"{directory}/manifest.json does not name an A field")
    vp, wp = _pair_paths(directory)
    ap = _require(a_path)
    return read_field(vp), read_field(wp), read_field(ap), [vp, wp, ap]


def _close(a, b):
    if a is None or b is None:
        return a is None and b is None
    return math.isclose(a, b, rel_tol=REL_TOL, abs_tol=1e-15)


def cmd_verify(args):
    src = Path(args.inp)
    report = read_json(_require(src / "report.json"))
    manifest = read_json(_require(src / "manifest.json"))
    data = dict(report["config"])
    if args.alpha is not None:
        data["alpha_target"] = args.alpha
    cfg = SolverConfig.from_dict(data)
    inputs = {Path(p).name: Path(p) for p in manifest.get("inputs", [])}
    missing = {"v0.json", "w0.json", "A.json"} - set(inputs)
    if missing:
        raise FieldIOError(f"{src}/manifest.json does not list inputs {sorted(missing)}")
    v0 = read_field(_require(inputs["v0.json"]))
    w0 = read_field(_require(inputs["w0.json"]))
    A = read_field(_require(inputs["A.json"]))
    v = read_field(_require(src / "v.json"))
    w = read_field(_require(src / "w.json"))

    failures = []
    residual = norm(vk_residual(v, w, A))
    if not _close(residual, report["final_residual"]):
        failures.append(f"final residual {residual:.17g} != recorded {report['final_residual']:.17g}")
    if report["stages_run"] and residual > report["residual_bound"]:
        failures.append(f"final residual {residual:.6g} exceeds bound {report['residual_bound']:.6g}")
    if report["stages_run"]:
        sups = [report["initial_residual"]] + [s["residual_sup"] for s in report["stages"]]
        if not all(b < a for a, b in zip(sups, sups[1:])):
            failures.append("stage residuals are not strictly decreasing")
        c_v, c_w = verify_thm1_bounds(v0, w0, v, w, A, cfg.p)
        if not _close(c_v, report["C_v"]):
            failures.append(f"C_v {c_v:.17g} != recorded {report['C_v']:.17g}")
        if not _close(c_w, report["C_w"]):
            failures.append(f"C_w {c_w:.17g} != recorded {report['C_w']:.17g}")
        sched = report["schedule"]
        if len(sched["lam"]) >= 2:
            a_eff = alpha_eff(sched["delta"], sched["lam"])
            if not _close(a_eff, report["alpha_eff_planned"]):
                failures.append(f"alpha_eff {a_eff:.17g} != recorded {report['alpha_eff_planned']:.17g}")
            if a_eff < cfg.alpha_target:
                failures.append(f"Hoelder certificate: alpha_eff {a_eff:.6g} < alpha_target {cfg.alpha_target:.6g}")
    if failures:
        raise VerificationMismatch(failures)
    print(f"verify: {src} ok")
    return 0


def cmd_norms(args):
    cfg, _ = resolve_config(args)
    f = read_field(_require(args.inp))
    doc = {
        "field": str(args.inp),
        "kind": f.kind,
        "sup": norm(f, "sup"),
        "lp": norm(f, "lp", p=cfg.p),
        "p": cfg.p,
        "holder": norm(f, "holder", beta=cfg.beta),
        "beta": cfg.beta,
    }
    if args.out:
        write_json(Path(args.out) / "norms.json", doc)
    sys.stdout.write(dumps(doc))
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config; flags override it")
    common.add_argument("--grid", type=int)
    common.add_argument("--beta", type=float)
    common.add_argument("--alpha", type=float, help="target Hoelder exponent alpha")
    common.add_argument("--p", type=float)
    common.add_argument("--stages", type=int)
    common.add_argument("--delta0", type=float)
    common.add_argument("--ratio", type=float)
    common.add_argument("--sigma", type=float)
    common.add_argument("--eps0", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--t", type=float, help="lift scale for reduce")
    common.add_argument("--out", type=Path)
    common.add_argument("--in", dest="inp", type=Path)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="karman-ci", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="generate A and an initial pair")
    gen.add_argument("--shift", type=float, default=0.5, help="add shift*I to A")
    gen.add_argument("--amplitude", type=float, default=0.05, help="sup of the Hoelder perturbation")
    gen.add_argument("--init", choices=("zero", "smooth"), default="zero")
    gen.add_argument("--exact", action="store_true", help="A solves the constraint for (v0, w0)")
    gen.set_defaults(func=cmd_gen, needs=("out",))

    for name, func, needs, text in (
        ("solve", cmd_solve, ("inp", "out"), "run the staged solver"),
        ("reduce", cmd_reduce, ("inp", "out"), "lift, extract and audit"),
        ("verify", cmd_verify, ("inp",), "re-check a solve directory"),
        ("norms", cmd_norms, ("inp",), "norms of one field file"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.set_defaults(func=func, needs=needs)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    for need in args.needs:
        if getattr(args, need) is None:
            parser.error(f"{args.command} requires --{'in' if need == 'inp' else need}")
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except KarmanError as exc:
        print(f"karman-ci {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    log.debug("%s finished in %.2fs", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
