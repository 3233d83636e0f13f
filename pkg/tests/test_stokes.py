import numpy as np
import pytest

from meniscus import fem
from meniscus.mesh import MeshError, structured_generator
from meniscus.poro import MechParams, element_flux
from meniscus.stokes import (
    CoupledSolver,
    InterfaceParams,
    StokesSolver,
    StokesState,
    run_coupled,
)

PARAMS = MechParams()


def coupled_mesh(nx=8, ny=4):
    return structured_generator(nx, ny, "channel-over-porous", ny_fluid=ny, length=2.0,
                                height=1.0, fluid_height=1.0)


def l2_relative(solver, mesh, u, exact):
    rule = fem.triangle_quadrature(5)
    loc = fem.FieldVector(solver.V, u).local()
    uq = np.einsum("eci,qi->eqc", loc, solver.V.values(rule.points))
    ex = exact(fem.physical_points(mesh, rule.points).reshape(-1, 2)).reshape(uq.shape)
    w = 2 * mesh.areas[:, None] * rule.weights
    return np.sqrt((w * ((uq - ex) ** 2).sum(-1)).sum() / (w * (ex ** 2).sum(-1)).sum())


def test_interface_params_validation():
    with pytest.raises(ValueError):
        InterfaceParams(gamma_N=0.0)
    with pytest.raises(ValueError):
        InterfaceParams(bjs=-1.0)


def test_channel_needs_inflow_and_outflow():
    with pytest.raises(MeshError):
        StokesSolver(structured_generator(2, 2), PARAMS, 0.1)


def test_zero_forcing_zero_flow():
    mesh = structured_generator(6, 3, "channel")
    solver = StokesSolver(mesh, PARAMS, 0.1, pressure=lambda t: 0.0)
    state = solver.step(StokesState.zeros(mesh))
    assert not state.u.any() and not state.p.any()


def test_poiseuille_profile():
    L, H = 4.0, 1.0
    mesh = structured_generator(32, 8, "channel", length=L, height=H)
    profile = lambda x: np.column_stack([4 * x[:, 1] * (H - x[:, 1]) / H ** 2, 0 * x[:, 0]])  # noqa: E731
    solver = StokesSolver(mesh, PARAMS, None, inflow="dirichlet", inflow_velocity=profile,
                          outflow="traction")
    state = solver.steady()
    assert l2_relative(solver, mesh, state.u, profile) <= 0.02
    inlet = np.isclose(mesh.vertices[:, 0], 0.0)
    drop = 8 * PARAMS.mu_f * 1.0 / H ** 2 * L
    assert state.p[inlet].mean() == pytest.approx(drop, rel=0.05)


def test_discretely_divergence_free():
    mesh = structured_generator(8, 4, "channel")
    solver = StokesSolver(mesh, PARAMS, 0.1)
    state = StokesState.zeros(mesh)
    for _ in range(3):
        state = solver.step(state)
    scale = np.linalg.norm(solver.B.toarray(), 1) * np.abs(state.u).max()
    assert solver.divergence_residual(state) <= 1e-10 * scale


def test_pressure_driven_flow_moves_downstream():
    mesh = structured_generator(8, 4, "channel")
    state = StokesSolver(mesh, PARAMS, 0.1).step(StokesState.zeros(mesh), 0.5)
    assert state.vertex_velocity(mesh)[:, 0].max() > 0
    assert state.p.max() == pytest.approx(10.0, rel=0.05)


def test_coupled_requires_both_subdomains():
    with pytest.raises(MeshError):
        CoupledSolver(structured_generator(4, 4), PARAMS, InterfaceParams(), 0.1)


def test_seepage_with_unit_porosity_is_flux():
    solver = CoupledSolver(coupled_mesh(), PARAMS, InterfaceParams(), 0.1)
    state, _ = run_coupled(solver, 2)
    flux = element_flux(solver.porous_mesh, state.poro.u)
    assert np.abs(flux).max() > 0
    assert np.array_equal(state.poro.seepage(solver.porous_mesh, 1.0), flux)
    assert np.allclose(solver.seepage(state), flux / PARAMS.Phi, rtol=1e-15)


def test_coupled_history_is_bounded():
    solver = CoupledSolver(coupled_mesh(), PARAMS, InterfaceParams(), 0.1)
    _, hist = run_coupled(solver, 5)
    assert np.all(np.isfinite(hist.energy))
    assert max(hist.max_fluid_pressure) <= 10.5
    assert hist.times == pytest.approx([0.1, 0.2, 0.3, 0.4, 0.5])


def test_energy_decays_without_forcing():
    mesh = coupled_mesh()
    solver = CoupledSolver(mesh, PARAMS, InterfaceParams(), 0.1,
                           pressure=lambda t: 10.0 if t < 0.35 else 0.0)
    _, hist = run_coupled(solver, 10)
    tail = np.array(hist.energy[3:])
    assert tail[0] > 0
    assert np.all(np.diff(tail) <= 1e-12 * tail[0])


def test_mismatch_shrinks_with_penalty():
    mesh = coupled_mesh()
    mismatch = []
    for g in (1e2, 1e4, 1e6):
        _, hist = run_coupled(CoupledSolver(mesh, PARAMS, InterfaceParams(gamma_N=g), 0.1), 3)
        mismatch.append(hist.mismatch[-1])
    assert mismatch[0] > mismatch[1] > mismatch[2]


def test_rigid_impermeable_block_acts_as_wall():
    params = MechParams(kappa=1e-20, E=1e6)
    solver = CoupledSolver(coupled_mesh(16, 8), params, InterfaceParams(), 0.1)
    state, _ = run_coupled(solver, 3)
    ref = StokesSolver(solver.fluid_mesh, params, 0.1, interface_as_wall=True)
    wall = StokesState.zeros(solver.fluid_mesh)
    for _ in range(3):
        wall = ref.step(wall)
    d = state.fluid.u - wall.u
    M = ref.M
    assert np.sqrt(d @ M @ d / (wall.u @ M @ wall.u)) <= 0.05
