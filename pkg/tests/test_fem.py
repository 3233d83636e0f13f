import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meniscus import fem
from meniscus.fem import FieldVector, FunctionSpace, assemble_bilinear, interpolate
from meniscus.mesh import build_mesh, structured_generator

REFERENCE = build_mesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])


def jittered(n=4, seed=3):
    mesh = structured_generator(n, n)
    rng = np.random.default_rng(seed)
    v = mesh.vertices.copy()
    inside = (v > 0).all(axis=1) & (v < 1).all(axis=1)
    v[inside] += 0.25 / n * rng.uniform(-1, 1, (inside.sum(), 2))
    return build_mesh(v, mesh.elements)


def exact_monomial(a, b):
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


@pytest.mark.parametrize("degree", [1, 2, 4, 5, 6])
def test_quadrature_exactness(degree):
    rule = fem.triangle_quadrature(degree)
    assert rule.weights.sum() == pytest.approx(0.5, abs=1e-14)
    x, y = rule.points[:, 1], rule.points[:, 2]
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            assert rule.weights @ (x ** a * y ** b) == pytest.approx(exact_monomial(a, b), abs=1e-14)


def test_line_quadrature():
    s, w = fem.line_quadrature(3)
    assert w.sum() == pytest.approx(1.0)
    assert w @ s ** 5 == pytest.approx(1 / 6, abs=1e-15)


def test_dof_counts():
    mesh = structured_generator(3, 2)
    counts = {"P1": mesh.n_vertices, "dG-P1": 3 * mesh.n_elements, "P0": mesh.n_elements,
              "RT0": mesh.n_faces, "P1-bubble": mesh.n_vertices + mesh.n_elements}
    for kind, n in counts.items():
        assert FunctionSpace(kind, mesh).ndofs == n
    assert FunctionSpace("P1-bubble", mesh, 2).ndofs == 2 * counts["P1-bubble"]
    with pytest.raises(ValueError):
        FunctionSpace("RT0", mesh, 2)
    with pytest.raises(ValueError):
        FunctionSpace("P2", mesh)


def test_field_length_checked():
    with pytest.raises(ValueError):
        FieldVector(FunctionSpace("P0", REFERENCE), np.zeros(2))


def test_p1_reproduces_x():
    mesh = jittered()
    u = interpolate(lambda p: p[:, 0], FunctionSpace("P1", mesh))
    rng = np.random.default_rng(0)
    for e in rng.integers(0, mesh.n_elements, 10):
        bary = rng.dirichlet(np.ones(3))
        value, grad = fem.evaluate(u, int(e), bary)
        x = bary @ mesh.vertices[mesh.elements[e]]
        assert value == pytest.approx(x[0], abs=1e-14)
        assert np.allclose(grad, [1.0, 0.0], atol=1e-12)


def test_evaluate_errors():
    u = interpolate(lambda p: p[:, 0], FunctionSpace("P1", REFERENCE))
    with pytest.raises(IndexError):
        fem.evaluate(u, 1, (0.2, 0.2))
    with pytest.raises(ValueError):
        fem.evaluate(u, 0, (1.5, 0.2))


def test_dg_constant_and_affine_have_no_jumps():
    mesh = jittered()
    dg = FunctionSpace("dG-P1", mesh)
    one = FieldVector(dg, np.ones(dg.ndofs))
    assert np.all(fem.interior_jumps(one) == 0)
    affine = interpolate(lambda p: p[:, 0] + 2 * p[:, 1], dg)
    assert np.abs(fem.interior_jumps(affine)).max() <= 1e-13


def test_rt0_single_face_divergence():
    mesh = structured_generator(2, 2)
    rt = FunctionSpace("RT0", mesh)
    f = int(mesh.interior_faces[0])
    coeffs = np.zeros(rt.ndofs)
    coeffs[f] = 1.0 / mesh.face_measures[f]  # unit total flux
    div = fem.rt0_divergence(FieldVector(rt, coeffs))
    left, right = mesh.face_elements[f]
    assert div[left] == pytest.approx(1 / mesh.areas[left])
    assert div[right] == pytest.approx(-1 / mesh.areas[right])
    others = np.setdiff1d(np.arange(mesh.n_elements), [left, right])
    assert np.all(div[others] == 0)


def test_rt0_divergence_pattern():
    mesh = jittered()
    rt = FunctionSpace("RT0", mesh)
    expected = (mesh.element_face_signs * mesh.face_measures[mesh.element_faces]
                / mesh.areas[:, None])
    assert np.allclose(rt.rt0_divergence(), expected, atol=1e-12)


def test_interpolation_examples():
    mesh = jittered()
    p0 = interpolate(lambda p: np.ones(len(p)), FunctionSpace("P0", mesh))
    assert np.all(p0.coeffs == 1)
    radial = interpolate(lambda p: p, FunctionSpace("RT0", mesh))
    assert np.allclose(fem.rt0_divergence(radial), 2.0, atol=1e-12)


@pytest.mark.parametrize("field", [lambda p: np.column_stack([np.full(len(p), 0.3), -np.ones(len(p))]),
                                   lambda p: p,
                                   lambda p: 0.5 * p + np.array([0.2, -0.1])])
def test_rt0_patch(field):
    mesh = jittered()
    u = interpolate(field, FunctionSpace("RT0", mesh))
    bary = np.random.default_rng(1).dirichlet(np.ones(3), 4)
    vals = fem.element_values(u, bary)
    pts = fem.physical_points(mesh, bary)
    assert np.allclose(vals, field(pts.reshape(-1, 2)).reshape(vals.shape), atol=1e-12)


@pytest.mark.parametrize("kind", ["P1", "dG-P1", "P1-bubble"])
def test_affine_patch(kind):
    mesh = jittered()
    f = lambda p: 1.5 - p[:, 0] + 3 * p[:, 1]  # noqa: E731
    u = interpolate(f, FunctionSpace(kind, mesh))
    bary = np.random.default_rng(2).dirichlet(np.ones(3), 5)
    vals = fem.element_values(u, bary)
    assert np.allclose(vals, f(fem.physical_points(mesh, bary).reshape(-1, 2)).reshape(vals.shape),
                       atol=1e-12)
    assert np.allclose(fem.element_gradients(u, bary), [-1.0, 3.0], atol=1e-11)


def test_bubble_interpolates_centroid():
    mesh = jittered()
    f = lambda p: np.sin(p[:, 0]) * p[:, 1]  # noqa: E731
    u = interpolate(f, FunctionSpace("P1-bubble", mesh))
    at_centroid = fem.element_values(u, np.full((1, 3), 1 / 3))[:, 0]
    assert np.allclose(at_centroid, f(mesh.centroids), atol=1e-14)


def test_reference_mass_matrix():
    M = assemble_bilinear("mass", FunctionSpace("P1", REFERENCE)).toarray()
    expected = np.full((3, 3), 1 / 24) + np.eye(3) / 24
    assert np.allclose(M, expected, atol=1e-15)


def test_stiffness_kernel():
    mesh = jittered()
    for kind in ("P1", "P1-bubble"):
        K = assemble_bilinear("stiffness", FunctionSpace(kind, mesh))
        one = np.zeros(K.shape[0])
        one[:mesh.n_vertices] = 1.0  # bubble coefficients of a constant are zero
        assert np.abs(K @ one).max() <= 1e-13
        assert abs(K - K.T).max() <= 1e-13


def test_anisotropic_stiffness():
    mesh = jittered()
    V = FunctionSpace("P1", mesh)
    D = np.array([[2.0, 0.5], [0.5, 1.0]])
    K = assemble_bilinear("stiffness", V, coefficient=D)
    u = interpolate(lambda p: p[:, 0], V).coeffs
    v = interpolate(lambda p: p[:, 1], V).coeffs
    assert v @ K @ u == pytest.approx(0.5, abs=1e-12)  # integral of e_y . D e_x over the unit square


def test_nip_matches_continuous_stiffness_on_affines():
    mesh = jittered()
    dg, p1 = FunctionSpace("dG-P1", mesh), FunctionSpace("P1", mesh)
    f = lambda p: 0.3 + 2 * p[:, 0] - p[:, 1]  # noqa: E731
    A = assemble_bilinear("dg_diffusion", dg, coefficient=0.7, penalty=4.0)
    K = assemble_bilinear("stiffness", p1, coefficient=0.7)
    action_dg = A @ interpolate(f, dg).coeffs
    gathered = np.zeros(mesh.n_vertices)
    np.add.at(gathered, mesh.elements.ravel(), action_dg)
    assert np.abs(gathered - K @ interpolate(f, p1).coeffs).max() <= 1e-12


def test_nip_constants_in_kernel():
    mesh = jittered()
    dg = FunctionSpace("dG-P1", mesh)
    A = assemble_bilinear("dg_diffusion", dg, coefficient=0.015, penalty=4.0, a_max=1.0)
    assert np.abs(A @ np.ones(dg.ndofs)).max() <= 1e-13


def test_upwind_advection_conserves():
    mesh = jittered()
    dg = FunctionSpace("dG-P1", mesh)
    w = np.random.default_rng(4).standard_normal((mesh.n_elements, 2))
    A = assemble_bilinear("advection", dg, velocity=w)
    # testing with v = 1 sums the face fluxes, which cancel in pairs
    assert np.abs(np.ones(dg.ndofs) @ A).max() <= 1e-13
    # constant velocity and constant field: no net transport anywhere
    A = assemble_bilinear("advection", dg, velocity=np.tile([0.3, -0.2], (mesh.n_elements, 1)))
    c = np.ones(dg.ndofs)
    per_element = (A @ c).reshape(-1, 3).sum(axis=1)
    interior = np.all(mesh.face_elements[mesh.element_faces, 1] >= 0, axis=1)
    assert np.abs(per_element[interior]).max() <= 1e-13


def test_divergence_forms():
    mesh = jittered()
    V = FunctionSpace("P1", mesh, 2)
    Q = FunctionSpace("P0", mesh)
    B = assemble_bilinear("divergence", V, Q)
    u = interpolate(lambda p: p, V).coeffs
    assert np.allclose(B @ u, 2 * mesh.areas, atol=1e-13)
    rt = FunctionSpace("RT0", mesh)
    Bu = assemble_bilinear("divergence", rt, Q)
    assert np.allclose(Bu @ interpolate(lambda p: p, rt).coeffs, 2 * mesh.areas, atol=1e-13)


def test_elasticity_rigid_motions():
    mesh = jittered()
    V = FunctionSpace("P1", mesh, 2)
    K = assemble_bilinear("elasticity", V, lam=17.0, mu=34.0)
    for motion in (lambda p: np.tile([1.0, 0.0], (len(p), 1)),
                   lambda p: np.column_stack([-p[:, 1], p[:, 0]])):
        assert np.abs(K @ interpolate(motion, V).coeffs).max() <= 1e-12


def test_incompatible_spaces():
    mesh = structured_generator(2, 2)
    with pytest.raises(fem.IncompatibleSpacesError):
        assemble_bilinear("mass", FunctionSpace("RT0", mesh), FunctionSpace("P0", mesh))
    with pytest.raises(fem.IncompatibleSpacesError):
        assemble_bilinear("dg_diffusion", FunctionSpace("P1", mesh))
    with pytest.raises(fem.IncompatibleSpacesError):
        assemble_bilinear("mass", FunctionSpace("P1", mesh), FunctionSpace("P1", structured_generator(2, 2)))
    with pytest.raises(ValueError, match="unknown form"):
        assemble_bilinear("curl", FunctionSpace("P1", mesh))


def test_lumped_projection_preserves_constants_and_mass():
    mesh = jittered()
    dg = FunctionSpace("dG-P1", mesh)
    assert np.allclose(fem.l2_project_lumped_p1(FieldVector(dg, np.ones(dg.ndofs))), 1.0)
    c = interpolate(lambda p: np.exp(p[:, 0]) * p[:, 1], dg)
    nodal = fem.l2_project_lumped_p1(c)
    lumped = np.zeros(mesh.n_vertices)
    np.add.at(lumped, mesh.elements, np.repeat(mesh.areas[:, None] / 3, 3, axis=1))
    assert lumped @ nodal == pytest.approx(mesh.areas @ c.coeffs.reshape(-1, 3).mean(axis=1))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_p1_mass_integrates_affines(seed, a, b, c):
    mesh = jittered(3, seed)
    V = FunctionSpace("P1", mesh)
    M = assemble_bilinear("mass", V)
    u = interpolate(lambda p: a + b * p[:, 0] + c * p[:, 1], V).coeffs
    assert np.ones(V.ndofs) @ M @ u == pytest.approx(a + 0.5 * b + 0.5 * c, abs=1e-12)
