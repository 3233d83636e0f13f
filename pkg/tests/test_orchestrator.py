import numpy as np
import pytest

from meniscus.config import default_config
from meniscus.orchestrator import (
    BIO_COLUMNS,
    MECH_COLUMNS,
    RestoreError,
    RunError,
    Simulation,
    run,
)
from meniscus.output import read_series, read_vtk
from meniscus.poro import BiotSolver, PoroState, fallback_boundary


def small(mode="biology-only", geometry="channel-over-porous", **run_kw):
    c = default_config()
    c = c.override("mesh", geometry=geometry, nx=4, ny=2, ny_fluid=2)
    return c.override("run", mode=mode, **{"n_steps": 6, "output_stride": 3, **run_kw})


def cell_vectors(sim):
    return sim.cell_state.vector()


def test_biology_only_outputs(tmp_path):
    report = run(small(), tmp_path)
    assert report.steps == 6 and report.mech_solves == 0
    header, data = read_series(tmp_path / "series.csv")
    assert tuple(header) == BIO_COLUMNS and data.shape == (6, len(BIO_COLUMNS))
    assert np.allclose(data[:, 1], 0.1 * np.arange(1, 7))
    for name in ("report.txt", "series.png", "c2_final.png", "cells_00003.vtk", "cells_00006.vtk"):
        assert (tmp_path / name).stat().st_size > 0
    vtk = read_vtk(tmp_path / "cells_00006.vtk")
    assert {"c1", "c2", "h", "k"} <= set(vtk["point_data"])
    assert "mode: biology-only" in (tmp_path / "report.txt").read_text()


def test_run_without_output_dir_writes_nothing(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    report = run(small())
    assert report.steps == 6 and not list(tmp_path.iterdir())


def test_checkpoint_restore_is_bitwise(tmp_path):
    config = small("fallback", n_mech=2)
    whole = Simulation(config, out_dir=tmp_path / "a")
    whole.run()

    first = Simulation(config, out_dir=tmp_path / "b")
    first.run(until=3)
    ckpt = first.checkpoint(tmp_path / "half.npz")
    second = Simulation(config, out_dir=tmp_path / "b")
    second.restore(ckpt)
    assert second.step == 3
    second.run()

    assert np.array_equal(cell_vectors(second), cell_vectors(whole))
    assert np.array_equal(second.poro_state.p, whole.poro_state.p)
    assert second.mech_solves == whole.mech_solves
    assert ((tmp_path / "b" / "series.csv").read_text()
            == (tmp_path / "a" / "series.csv").read_text())


def test_periodic_checkpoints(tmp_path):
    run(small(checkpoint_stride=2), tmp_path)
    assert sorted(p.name for p in tmp_path.glob("checkpoint_*.npz")) == [
        "checkpoint_00002.npz", "checkpoint_00004.npz", "checkpoint_00006.npz"]


def test_restore_rejects_other_mesh_or_config(tmp_path):
    config = small()
    sim = Simulation(config)
    sim.run(until=2)
    ckpt = sim.checkpoint(tmp_path / "c.npz")
    other_mesh = config.override("mesh", nx=5)
    with pytest.raises(RestoreError, match="mesh"):
        Simulation(other_mesh).restore(ckpt)
    with pytest.raises(RestoreError, match="configuration"):
        Simulation(config.override("biology", beta=0.4)).restore(ckpt)


def test_frozen_zero_stress_equals_biology_only():
    bio = Simulation(small())
    bio.run()
    frozen = Simulation(small("fallback", n_mech=0), stimulus_field=np.zeros(bio.bio_mesh.n_elements))
    frozen.run()
    assert frozen.mech_solves == 0
    assert np.array_equal(cell_vectors(frozen), cell_vectors(bio))


def test_out_of_window_stimulus_equals_constant_rates():
    bio = Simulation(small())
    bio.run()
    config = small("coupled", n_mech=3).override("stimulus", S_min=1e6, S_max=2e6)
    coupled = Simulation(config)
    coupled.run()
    assert coupled.mech_solves == 2  # steps 1 and 4
    assert coupled.mech_state.t == pytest.approx(0.6)
    assert np.array_equal(cell_vectors(coupled), cell_vectors(bio))


def test_mechanics_only_matches_standalone_solver(tmp_path):
    config = small("mechanics-only", geometry="unit-square-porous", n_steps=4, n_mech=3)
    config = config.override("mesh", ny=4)
    sim = Simulation(config, out_dir=tmp_path)
    sim.run()
    mech = config.mechanics
    solver = BiotSolver(sim.bio_mesh, mech, config.run.dt, boundary=fallback_boundary(mech))
    state = PoroState.zeros(sim.bio_mesh)
    for i in range(1, 5):
        state = solver.step(state, i * config.run.dt)
    assert np.array_equal(sim.poro_state.p, state.p)
    assert np.array_equal(sim.poro_state.eta, state.eta)
    header, data = read_series(tmp_path / "mechanics.csv")
    assert tuple(header) == MECH_COLUMNS and len(data) == 4
    assert (tmp_path / "mechanics.png").exists() and (tmp_path / "poro_00004.vtk").exists()


def test_coupled_run_writes_fluid_snapshots(tmp_path):
    report = run(small("coupled", n_mech=3), tmp_path)
    assert report.mech_solves == 2
    for name in ("fluid_00006.vtk", "poro_00006.vtk", "stimulus.png"):
        assert (tmp_path / name).exists()


def test_newton_failure_names_step_and_phase():
    config = small().override("solver", newton_tol=1e-300, newton_max_it=1)
    with pytest.raises(RunError) as info:
        run(config)
    assert (info.value.step, info.value.phase) == (1, "biology")
    assert "step 1, phase biology" in str(info.value)


def test_observers_see_every_step():
    seen = []
    run(small(), observers=[lambda step, state, row: seen.append((step, row["step"]))])
    assert seen == [(i, i) for i in range(1, 7)]
