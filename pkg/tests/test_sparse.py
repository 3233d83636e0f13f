import math

import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from meniscus.mesh import structured_generator
from meniscus.poro import MechParams
from meniscus.sparse import (
    LinearSolverConfig,
    SingularMatrixError,
    SolverError,
    assemble,
    solve,
    write_matrix_market,
)
from meniscus.stokes import StokesSolver


def laplacian_1d(n):
    i = np.arange(n)
    rows = np.concatenate([i, i[1:], i[:-1]])
    cols = np.concatenate([i, i[1:] - 1, i[:-1] + 1])
    vals = np.concatenate([np.full(n, 2.0), -np.ones(n - 1), -np.ones(n - 1)])
    return assemble(rows, cols, vals, (n, n))


def test_duplicates_are_summed():
    A = assemble([0, 0], [0, 0], [1.0, 2.0], (1, 1))
    assert A.nnz == 1 and A[0, 0] == 3.0


def test_identity_action():
    n = 5
    A = assemble(np.arange(n), np.arange(n), np.ones(n), (n, n))
    x = np.random.default_rng(0).standard_normal(n)
    assert np.array_equal(A @ x, x)


def test_laplacian_smallest_eigenvalue():
    A = laplacian_1d(4).toarray()
    assert np.linalg.eigvalsh(A).min() == pytest.approx(2 - 2 * math.cos(math.pi / 5), abs=1e-12)


def test_out_of_range_index():
    with pytest.raises(IndexError, match="row index 3"):
        assemble([3], [0], [1.0], (3, 3))
    with pytest.raises(IndexError, match="column index -1"):
        assemble([0], [-1], [1.0], (3, 3))


def test_identity_solve():
    e1 = np.eye(4)[0]
    assert np.array_equal(solve(sp.identity(4), e1), e1)


@pytest.mark.parametrize("config", [
    LinearSolverConfig(),
    LinearSolverConfig("GMRES", 1e-12),
    LinearSolverConfig("GMRES", 1e-12, preconditioner="ILU0"),
    LinearSolverConfig("BiCGStab", 1e-12, preconditioner="Jacobi"),
])
def test_laplacian_recovers_solution(config):
    n = 50
    A = laplacian_1d(n)
    x_true = np.random.default_rng(1).standard_normal(n)
    x = solve(A, A @ x_true, config)
    assert np.abs(x - x_true).max() <= 1e-8
    if config.method != "direct-LU":
        assert np.linalg.norm(A @ x - A @ x_true) <= config.rtol * np.linalg.norm(A @ x_true) * 1.0001


def _stokes_block(mu_f):
    mesh = structured_generator(6, 3, "channel")
    solver = StokesSolver(mesh, MechParams(mu_f=mu_f), 0.1)
    A = solver.matrix()
    free = np.setdiff1d(np.arange(A.shape[0]), solver.fixed)
    return A[free][:, free], solver.load_vector(0.5)[free]


def test_stokes_saddle_point_direct():
    A, b = _stokes_block(1.0)
    for rhs in (b, np.random.default_rng(2).standard_normal(len(b))):
        x = solve(A, rhs)
        assert np.linalg.norm(A @ x - rhs) <= 1e-10 * np.linalg.norm(rhs)


def test_stokes_saddle_point_backward_stable_at_tissue_viscosity():
    # at mu_f = 1e-9 the tangential inflow penalty dominates and cond(A) is
    # about 1e9, so only the normwise backward error is meaningful
    A, b = _stokes_block(1e-9)
    x = solve(A, b)
    backward = np.linalg.norm(A @ x - b) / (spla.norm(A) * np.linalg.norm(x) + np.linalg.norm(b))
    assert backward <= 1e-14


def test_singular_names_row():
    A = sp.csr_matrix(np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]))
    with pytest.raises(SingularMatrixError) as info:
        solve(A, np.ones(3))
    assert info.value.row == 1
    assert "row 1" in str(info.value)


def test_iteration_limit_reports_residual():
    A = laplacian_1d(200)
    with pytest.raises(SolverError) as info:
        solve(A, np.ones(200), LinearSolverConfig("GMRES", 1e-14, max_iter=1))
    assert info.value.residual > 0


def test_shape_checks():
    with pytest.raises(ValueError, match="square"):
        solve(sp.csr_matrix(np.ones((2, 3))), np.ones(2))
    with pytest.raises(ValueError, match="rhs"):
        solve(sp.identity(3), np.ones(2))


@pytest.mark.parametrize("kw", [dict(method="CG"), dict(rtol=0.0), dict(max_iter=0),
                                dict(preconditioner="AMG")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        LinearSolverConfig(**kw)


def test_matrix_market_dump(tmp_path):
    A = laplacian_1d(5)
    path = tmp_path / "a.mtx"
    write_matrix_market(path, A)
    assert np.array_equal(scipy.io.mmread(str(path)).toarray(), A.toarray())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5),
                          st.floats(-10, 10, allow_nan=False)), max_size=60))
def test_assembly_is_canonical_and_additive(triplets):
    rows = [t[0] for t in triplets]
    cols = [t[1] for t in triplets]
    vals = [t[2] for t in triplets]
    A = assemble(rows, cols, vals, (6, 6))
    dense = np.zeros((6, 6))
    np.add.at(dense, (rows, cols), vals)
    assert np.allclose(A.toarray(), dense, atol=1e-12)
    for r in range(6):
        idx = A.indices[A.indptr[r]:A.indptr[r + 1]]
        assert np.all(np.diff(idx) > 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**31))
def test_direct_solve_residual_contract(n, seed):
    rng = np.random.default_rng(seed)
    A = laplacian_1d(n) + sp.diags(rng.uniform(0, 1, n))
    b = rng.standard_normal(n)
    x = solve(A, b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * max(np.linalg.norm(b), 1e-300)
