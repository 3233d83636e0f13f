"""Acceptance gate: one test per criterion, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they are
produced; they are also repeated in the terminal summary.
"""

import filecmp
import math
import time
from pathlib import Path

import numpy as np
import pytest

from meniscus.cells import BiologyParams, CellSolver, CellState, RateField
from meniscus.config import default_config
from meniscus.mesh import BoundaryTag, structured_generator
from meniscus.poro import BiotSolver, MechParams, PoroState, fallback_boundary
from meniscus.stimulus import StimulusParams, rate_map
from meniscus.stokes import CoupledSolver, InterfaceParams, run_coupled
from meniscus.verification import (
    cell_flux_balance,
    conservation_run,
    darcy_balance,
    implicit_euler_oracle,
    mms_cells,
    ode_oracle,
    stimulus_response,
    terzaghi,
)

# reference values exactly as tabulated, before normalization
MECHANICS_TABLE = {
    "p_max": "10", "mu_f": "1e-9", "rho_p": "1.1e3", "kappa": "1E-14", "rho_f": "1e3",
    "Phi": "0.8", "E": "80", "inv_M": "6.89e1", "nu": "0.167", "alpha_biot": "1.0",
}
BIOLOGY_TABLE = {
    "a1": "0.015", "beta": "0.5", "b1": "0.005", "b2": "0.001", "delta1": "0.01",
    "gamma1": "0.01",
}
STIMULUS_TABLE = {"alpha_min": "0.05", "alpha_max": "0.1", "S_min": "1", "S_max": "3"}


def _norm(value) -> str:
    return repr(float(value))


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """Criteria 2 and 8 run once each; criterion 10 reruns them elsewhere."""
    cache = {}

    def get(name, attempt=0):
        key = (name, attempt)
        if key not in cache:
            out = tmp_path_factory.mktemp(f"{name}-{attempt}")
            start = time.perf_counter()
            if name == "conservation":
                result = conservation_run(out, n=16, n_steps=300, dt=0.1)
            else:
                result = stimulus_response(out, n=8, n_steps=300, dt=0.1)
            cache[key] = (out, result, time.perf_counter() - start)
        return cache[key]

    return get


def test_parameter_fidelity(verdict):
    cfg = default_config()
    bad = []
    for section, table in (("mechanics", MECHANICS_TABLE), ("biology", BIOLOGY_TABLE),
                           ("stimulus", STIMULUS_TABLE)):
        params = getattr(cfg, section)
        for key, text in table.items():
            if _norm(getattr(params, key)) != _norm(text):
                bad.append(f"{section}.{key}={getattr(params, key)!r} (table {text})")
    lam, mu = cfg.mechanics.lame
    lame_ok = round(lam, 2) == 17.19 and round(mu, 2) == 34.28
    ok = not bad and lame_ok
    verdict(1, "parameter fidelity", ok,
            f"{len(MECHANICS_TABLE) + len(BIOLOGY_TABLE) + len(STIMULUS_TABLE)} values, "
            f"lambda={lam:.4f} mu={mu:.4f}" + (f"; mismatches {bad}" if bad else ""))
    assert ok


def test_conservation(verdict, runs):
    out, report, wall = runs("conservation")
    n_elem = 2 * 16 * 16
    ok = report.conservation_drift <= 1e-9 and report.steps == 300 and n_elem >= 512
    verdict(2, "conservation", ok,
            f"relative drift {report.conservation_drift:.2e} <= 1e-9 over {report.steps} steps, "
            f"{n_elem} elements, {wall:.1f} s")
    assert ok


@pytest.mark.slow
def test_mms_convergence(verdict):
    start = time.perf_counter()
    dr = mms_cells(3, "diffusion-reaction")
    tx = mms_cells(3, "taxis")
    wall = time.perf_counter() - start
    ok = (min(dr.observed("c1"), dr.observed("c2")) >= 1.8
          and min(tx.observed("c1"), tx.observed("c2")) >= 1.5)
    verdict(3, "MMS convergence", ok,
            f"diffusion-reaction orders c1={dr.observed('c1'):.3f} c2={dr.observed('c2'):.3f} "
            f"(>= 1.8); taxis c1={tx.observed('c1'):.3f} c2={tx.observed('c2'):.3f} (>= 1.5); "
            f"{wall:.0f} s")
    assert ok


def test_uniform_state_oracle(verdict):
    params = BiologyParams()
    y0 = (0.5, 0.1, 1.0, 0.05)
    dt, n_steps, a1, a2 = 0.1, 300, 0.05, 0.05
    mesh = structured_generator(3, 3)
    state = CellState.from_functions(mesh, *(lambda x, v=v: np.full(len(x), v) for v in y0))
    # both sides solve the same implicit Euler steps, so the Newton tolerance
    # is tightened until only roundoff separates them
    solver = CellSolver(mesh, params, dt, tol=1e-13)
    rates = RateField.constant(mesh.n_elements, a1, a2)
    traj = [np.array(y0)]
    spread = 0.0
    for _ in range(n_steps):
        state, _ = solver.step(state, rates)
        fields = (state.c1, state.c2, state.h, state.k)
        spread = max(spread, max(float(np.ptp(f)) for f in fields))
        traj.append(np.array([f.mean() for f in fields]))
    traj = np.array(traj)
    euler = implicit_euler_oracle(params, y0, dt, n_steps, a1, a2)
    times = dt * np.arange(n_steps + 1)
    adaptive = ode_oracle(params, y0, dt * n_steps, a1, a2, t_eval=times).y.T
    d_euler = float(np.abs(traj - euler).max()) + spread
    d_adaptive = float(np.abs(traj - adaptive).max()) + spread
    ok = d_euler <= 1e-10 and d_adaptive <= 0.05
    verdict(4, "uniform-state oracle", ok,
            f"vs implicit Euler {d_euler:.2e} <= 1e-10, vs DOP853 {d_adaptive:.3e} <= 0.05 "
            f"(T = {dt * n_steps:g})")
    assert ok


@pytest.mark.slow
def test_terzaghi(verdict):
    start = time.perf_counter()
    report = terzaghi(3)
    wall = time.perf_counter() - start
    U = report.extra["degree"][-1]
    err = report.errors["p"][-1]
    ok = abs(U - 0.931) <= 0.02 and err < 0.02
    verdict(5, "Terzaghi", ok,
            f"U(T_v=1) = {U:.4f} (0.931 +- 0.02), finest relative L2 error {err:.2%} < 2%, "
            f"errors {', '.join(f'{e:.3e}' for e in report.errors['p'])}, {wall:.1f} s")
    assert ok


def test_local_mass_conservation(verdict):
    rng = np.random.default_rng(20240607)
    worst_cells = 0.0
    for trial in range(3):
        params = BiologyParams(a1=rng.uniform(0.005, 0.05), b1=rng.uniform(0, 0.05),
                               b2=rng.uniform(0, 0.05), beta=rng.uniform(0, 1),
                               gamma1=rng.uniform(0, 0.05), delta1=rng.uniform(0, 0.05))
        mesh = structured_generator(6, 5, length=1.3, height=0.9)
        x = mesh.vertices
        old = CellState.from_functions(
            mesh,
            lambda p: 0.3 + 0.2 * np.sin(3 * p[:, 0] + p[:, 1]),
            lambda p: 0.1 + 0.05 * np.cos(2 * p[:, 1]),
            lambda p: 1 + 0.5 * p[:, 0] * p[:, 1],
            lambda p: 0.2 * p[:, 0] ** 2)
        old = CellState(old.c1 + 0.01 * rng.standard_normal(old.c1.shape), old.c2,
                        old.h + 0.1 * rng.random(len(x)), old.k, 0.0)
        rates = RateField(rng.uniform(0.05, 0.1, mesh.n_elements),
                          rng.uniform(0.05, 0.1, mesh.n_elements))
        dt = rng.uniform(0.05, 0.2)
        new, _ = CellSolver(mesh, params, dt, tol=1e-13).step(old, rates)
        r1, r2 = cell_flux_balance(mesh, params, old, new, rates.alpha1, rates.alpha2, dt)
        worst_cells = max(worst_cells, np.abs(r1).max(), np.abs(r2).max())

    worst_darcy = 0.0
    for trial in range(3):
        mech = MechParams(kappa=10 ** rng.uniform(-15, -13), E=rng.uniform(20, 200),
                          nu=rng.uniform(0.1, 0.4), inv_M=rng.uniform(0.1, 100),
                          alpha_biot=rng.uniform(0.5, 1.0))
        mesh = structured_generator(5, 4, edge_tags={"top": BoundaryTag.Inflow})
        dt = rng.uniform(0.05, 0.2)
        solver = BiotSolver(mesh, mech, dt, boundary=fallback_boundary(mech))
        state = PoroState.zeros(mesh)
        for _ in range(3):
            new = solver.step(state)
            worst_darcy = max(worst_darcy, np.abs(darcy_balance(mesh, mech, state, new, dt)).max())
            state = new
    ok = worst_cells <= 1e-10 and worst_darcy <= 1e-10
    verdict(6, "local mass conservation", ok,
            f"max dG flux-balance residual {worst_cells:.2e}, max RT0/P0 residual "
            f"{worst_darcy:.2e} (<= 1e-10)")
    assert ok


def test_stimulus_mapping(verdict):
    params = StimulusParams()
    edge = rate_map(np.array([0.0, 2.0]), params).alpha1
    mid = rate_map(np.array([params.S_min + params.ramp_width / 2]), params).alpha1[0]
    rng = np.random.default_rng(7)
    S = np.concatenate([rng.uniform(-10, 10, 50_000), rng.exponential(5, 49_990),
                        [params.S_min, params.S_max, 0.0, 1e300, -1e300, 1.1, 1.2, 2.8, 2.9,
                         params.S_min + params.ramp_width]])
    out = rate_map(S, params)
    bounded = all(np.all((a >= params.alpha_min) & (a <= params.alpha_max))
                  for a in (out.alpha1, out.alpha2))
    ok = (math.isclose(edge[0], 0.05, abs_tol=1e-15) and math.isclose(edge[1], 0.1, abs_tol=1e-15)
          and math.isclose(mid, 0.075, abs_tol=1e-15) and bounded and len(S) == 100_000)
    verdict(7, "stimulus mapping", ok,
            f"alpha(0)={edge[0]:g} alpha(2)={edge[1]:g} ramp midpoint={mid:g}; "
            f"{len(S)} fuzzed points within [{params.alpha_min}, {params.alpha_max}]: {bounded}")
    assert ok


@pytest.mark.slow
def test_stimulus_response(verdict, runs):
    out, result, wall = runs("response")
    ok = result.passed
    on = result.expected
    verdict(8, "stress-magnitude response", ok,
            f"{int(on.sum())}/{len(on)} elements expected to respond, "
            f"min |dc2| there {result.dc2[on].min():.2e} (> 1e-8), max elsewhere "
            f"{result.dc2[~on].max():.2e} (<= 1e-10), loaded-block occupancy "
            f"{result.occupancy_loaded:.3f}, {wall:.0f} s")
    assert ok


def test_coupled_smoke(verdict):
    mesh = structured_generator(12, 4, "channel-over-porous", ny_fluid=4, length=2.0,
                                height=1.0, fluid_height=1.0)
    mech = MechParams()
    dt = 0.1

    solver = CoupledSolver(mesh, mech, InterfaceParams(), dt)
    state, hist = run_coupled(solver, 9)
    completed = (len(hist.times) == 9 and math.isclose(state.t, 0.9)
                 and all(np.all(np.isfinite(a)) for a in (state.fluid.u, state.fluid.p,
                                                            state.poro.eta, state.poro.p)))

    quiet = CoupledSolver(mesh, mech, InterfaceParams(), dt, pressure=lambda t: 0.0)
    _, free = run_coupled(quiet, 9, state)
    energy = [solver.energy(state)] + free.energy
    decay = all(b <= a * (1 + 1e-12) + 1e-300 for a, b in zip(energy, energy[1:]))

    mismatch = []
    for gamma in (1e2, 1e4, 1e6):
        s = CoupledSolver(mesh, mech, InterfaceParams(gamma_N=gamma), dt)
        mismatch.append(max(run_coupled(s, 9)[1].mismatch))
    decreasing = all(b < a for a, b in zip(mismatch, mismatch[1:]))

    ok = completed and decay and decreasing
    verdict(9, "coupled mechanics smoke", ok,
            f"9 steps completed: {completed}, max |p_f| {max(hist.max_fluid_pressure):.3g}; "
            f"unforced energy {energy[0]:.3e} -> {energy[-1]:.3e} non-increasing: {decay}; "
            f"mismatch vs gamma_N 1e2/1e4/1e6: "
            + "/".join(f"{m:.2e}" for m in mismatch))
    assert ok


def _csv_files(root: Path) -> list[Path]:
    return sorted(p.relative_to(root) for p in root.rglob("*.csv"))


@pytest.mark.slow
def test_determinism(verdict, runs):
    same, compared = True, []
    for name in ("conservation", "response"):
        first, _, _ = runs(name, 0)
        second, _, _ = runs(name, 1)
        files = _csv_files(first)
        same &= bool(files) and files == _csv_files(second)
        for rel in files:
            same &= filecmp.cmp(first / rel, second / rel, shallow=False)
            compared.append(str(rel))
    verdict(10, "determinism", same,
            f"{len(compared)} CSV files byte-identical across reruns: {', '.join(compared)}")
    assert same
