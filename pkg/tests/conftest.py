"""Shared fixtures and the acceptance summary printed at the end of a run."""
from __future__ import annotations

import json
import time
from pathlib import Path

import pytest

from karman_ci.grid_fields import GridSpec, PlanarMapField, ScalarField, SymTensorField
from karman_ci.solver import SolverConfig, solve

HERE = Path(__file__).resolve().parent

# acceptance fixture 2: A = 0.5 I on 2049^2, three stages, delta_k^2 = 0.5 * 4^-k
FIXTURE2_CONFIG = dict(stages=3, ratio=0.5, sigma=0.6, eps0=1000.0, grid=2049)

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, text = mark.args
    entry = _criteria.setdefault(n, {"text": text, "ok": True, "ran": False})
    if rep.when == "call" or rep.failed:
        entry["ran"] = True
        entry["ok"] = entry["ok"] and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        status = "PASS" if e["ok"] and e["ran"] else ("FAIL" if e["ran"] else "SKIP")
        tr.write_line(f"criterion {n:2d}: {status}  {e['text']}")


@pytest.fixture(scope="session")
def oracle():
    return json.loads((HERE / "oracle_values.json").read_text())


@pytest.fixture(scope="session")
def fixture2():
    """One solve of fixture 2 shared by every test that inspects it."""
    cfg = SolverConfig(**FIXTURE2_CONFIG)
    spec = GridSpec(cfg.grid)
    v0 = ScalarField.zeros(spec)
    w0 = PlanarMapField.zeros(spec)
    A = SymTensorField.constant(spec, 0.5, 0.0, 0.5)
    t0 = time.perf_counter()
    v, w, report = solve(v0, w0, A, cfg)
    elapsed = time.perf_counter() - t0
    return {"cfg": cfg, "v0": v0, "w0": w0, "A": A, "v": v, "w": w, "report": report, "elapsed": elapsed}
