import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meniscus.cells import (
    BiologyParams,
    CellSolver,
    CellState,
    NewtonError,
    RateField,
    residual,
    run_cells,
    taxis_velocity,
)
from meniscus.mesh import structured_generator
from meniscus.verification import implicit_euler_oracle, logistic, ode_oracle, reaction_rhs

MESH = structured_generator(4, 4)


def uniform(mesh, c1=0.0, c2=0.0, h=0.0, k=0.0, t=0.0):
    n, nv = 3 * mesh.n_elements, mesh.n_vertices
    return CellState(np.full(n, c1), np.full(n, c2), np.full(nv, h), np.full(nv, k), t)


def bumpy(mesh):
    return CellState.from_functions(
        mesh,
        lambda p: 0.4 + 0.2 * np.cos(np.pi * p[:, 0]),
        lambda p: 0.1 + 0.05 * p[:, 1],
        lambda p: 0.5 * p[:, 0] * p[:, 1],
        lambda p: 0.2 + 0.1 * np.sin(np.pi * p[:, 1]))


def test_reference_parameters():
    p = BiologyParams()
    assert (p.a1, p.b1, p.b2, p.beta, p.gamma1, p.delta1) == (0.015, 0.005, 0.001, 0.5, 0.01, 0.01)


@pytest.mark.parametrize("kw", [dict(a1=0.0), dict(beta=-1.0), dict(penalty=0.0), dict(b1=float("nan"))])
def test_parameter_validation(kw):
    with pytest.raises(ValueError):
        BiologyParams(**kw)


def test_reaction_derivative():
    p = BiologyParams()
    rhs = reaction_rhs([0.5, 0.0, 0.0, 0.0], p, 0.05, 0.05)
    assert np.allclose(rhs, [0.1, 0.025, 0.0, 0.0], atol=1e-15)


def test_trivial_equilibrium_residual():
    zero = uniform(MESH)
    r = residual(MESH, zero, zero, RateField.constant(MESH.n_elements, 0.05), BiologyParams(), 0.1)
    assert np.all(r == 0)


def test_uniform_block_residual():
    state = uniform(MESH, c1=0.5)
    rates = RateField.constant(MESH.n_elements, 0.05)
    r = CellSolver(MESH, BiologyParams(), 0.1).residual(state.vector(), state.vector(), rates, 0.1)
    n = 3 * MESH.n_elements
    weights = np.repeat(MESH.areas / 3, 3)  # integral of each dG basis function
    assert np.allclose(r[:n], -0.1 * weights, atol=1e-15)
    assert np.allclose(r[n:2 * n], -0.025 * weights, atol=1e-15)
    assert np.all(r[2 * n:] == 0)


def test_taxis_velocity_of_affine_fields():
    mesh = structured_generator(3, 3)
    x = mesh.vertices[:, 0]
    v, vf = taxis_velocity(mesh, x, np.zeros_like(x), 0.005, 0.001)
    assert np.allclose(v, [0.005, 0.0], atol=1e-16)
    assert np.allclose(vf, [0.005, 0.0], atol=1e-16)
    v, _ = taxis_velocity(mesh, np.zeros_like(x), mesh.vertices[:, 1], 0.005, 0.001)
    assert np.allclose(v, [0.0, 0.001], atol=1e-16)


def test_taxis_velocity_of_quadratic():
    mesh = structured_generator(4, 4)
    x = mesh.vertices[:, 0]
    v, _ = taxis_velocity(mesh, x ** 2, np.zeros_like(x), 1.0, 0.0)
    # the P1 gradient of x^2 is exact at element centroids along x
    xs = mesh.vertices[mesh.elements, 0]
    assert np.allclose(v[:, 0], xs.min(axis=1) + xs.max(axis=1), atol=1e-12)
    assert np.allclose(v[:, 1], 0.0, atol=1e-12)


def test_zero_state_one_iteration():
    solver = CellSolver(MESH, BiologyParams(), 0.1)
    new, its = solver.step(uniform(MESH), RateField.constant(MESH.n_elements, 0.05))
    assert its == 1
    assert np.all(new.vector() == 0) and new.t == pytest.approx(0.1)


def test_rate_field_must_match_mesh():
    solver = CellSolver(MESH, BiologyParams(), 0.1)
    with pytest.raises(ValueError):
        solver.step(uniform(MESH), RateField.constant(3, 0.05))


def test_run_requires_steps():
    with pytest.raises(ValueError):
        run_cells(MESH, uniform(MESH), RateField.constant(MESH.n_elements, 0.05), BiologyParams(), 0.1, 0)


def test_newton_failure_carries_history():
    solver = CellSolver(MESH, BiologyParams(), 5.0, tol=1e-300, max_it=2)
    with pytest.raises(NewtonError) as info:
        solver.step(bumpy(MESH), RateField.constant(MESH.n_elements, 0.05))
    assert len(info.value.history) == 3
    assert "residual history" in str(info.value)


def test_jacobian_matches_finite_differences():
    mesh = structured_generator(3, 3)
    p = BiologyParams(b1=0.05, b2=0.03)
    solver = CellSolver(mesh, p, 0.1)
    rates = RateField(np.linspace(0.01, 0.09, mesh.n_elements), np.full(mesh.n_elements, 0.05))
    u = bumpy(mesh).vector()
    u_old = u * 0.9
    J = solver.jacobian(u, rates).toarray()
    eps = 1e-7
    rng = np.random.default_rng(0)
    for _ in range(4):
        d = rng.standard_normal(len(u))
        fd = (solver.residual(u + eps * d, u_old, rates, 0.1)
              - solver.residual(u - eps * d, u_old, rates, 0.1)) / (2 * eps)
        assert np.abs(fd - J @ d).max() <= 1e-6 * max(1.0, np.abs(fd).max())


def test_total_population_conserved_without_growth():
    p = BiologyParams(beta=0.0, b1=0.05, b2=0.05)
    solver = CellSolver(MESH, p, 0.1)
    state = bumpy(MESH)
    before = solver.integrals(state)
    rates = RateField(np.linspace(0.0, 0.1, MESH.n_elements), np.full(MESH.n_elements, 0.02))
    summary = run_cells(MESH, state, rates, p, 0.1, 10, solver=solver)
    after = solver.integrals(summary.final)
    total = lambda d: d["int_c1"] + d["int_c2"]  # noqa: E731
    assert abs(total(after) - total(before)) <= 1e-12 * total(before)


def test_uniform_state_stays_uniform():
    p = BiologyParams(b1=0.0, b2=0.0)
    y0 = [0.3, 0.1, 0.0, 0.0]
    state = uniform(MESH, *y0)
    summary = run_cells(MESH, state, RateField.constant(MESH.n_elements, 0.05), p, 0.1, 20,
                        solver=CellSolver(MESH, p, 0.1, tol=1e-13))
    final = summary.final
    oracle = implicit_euler_oracle(p, y0, 0.1, 20, 0.05, 0.05)[-1]
    for field, value in zip((final.c1, final.c2, final.h, final.k), oracle):
        assert np.abs(field - value).max() <= 1e-11


def test_observer_stride():
    seen = []
    p = BiologyParams()
    run_cells(MESH, uniform(MESH, 0.2), RateField.constant(MESH.n_elements, 0.05), p, 0.1, 7,
              observers=[lambda step, state, row: seen.append(step)], stride=3)
    assert seen == [3, 6, 7]


def test_logistic_sub_case():
    p = BiologyParams()
    t = np.linspace(0, 20, 11)
    sol = ode_oracle(p, [0.1, 0.0, 0.0, 0.0], 20.0, 0.0, 0.0, t_eval=t, tol=1e-13)
    assert np.abs(sol.y[0] - logistic(t, 0.1, p.beta)).max() <= 1e-10
    assert np.all(sol.y[1:] == 0)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=4, max_size=4), st.floats(0, 0.2), st.floats(0, 0.2))
def test_densities_stay_nonnegative(y0, a1, a2):
    sol = ode_oracle(BiologyParams(), y0, 30.0, a1, a2, t_eval=np.linspace(0, 30, 31), tol=1e-10)
    # exponential decay to zero may undershoot by a few multiples of the absolute tolerance
    assert sol.y.min() >= -100 * 1e-10


@settings(max_examples=10, deadline=None)
@given(st.floats(0.0, 0.9), st.floats(0.0, 0.5))
def test_discrete_uniform_matches_oracle_step(c1, c2):
    p = BiologyParams(b1=0.0, b2=0.0)
    mesh = structured_generator(2, 2)
    solver = CellSolver(mesh, p, 0.5, tol=1e-13)
    new, _ = solver.step(uniform(mesh, c1, c2, 0.1, 0.1), RateField.constant(mesh.n_elements, 0.05))
    expected = implicit_euler_oracle(p, [c1, c2, 0.1, 0.1], 0.5, 1, 0.05, 0.05)[-1]
    assert np.abs(new.c1 - expected[0]).max() <= 1e-12
    assert np.abs(new.k - expected[3]).max() <= 1e-12
