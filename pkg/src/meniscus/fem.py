"""Quadrature, the five discrete spaces, and bilinear-form assembly.

Spaces: continuous ``P1``, broken ``dG-P1``, ``P1-bubble`` (mini element
velocity), lowest-order Raviart-Thomas ``RT0`` and piecewise constant
``P0``. Vector spaces use a component-blocked dof layout:
``dof = component * n_scalar + scalar_dof``.

The RT0 basis function of face ``F`` restricted to element ``T`` is
``s |F| / (2|T|) (x - x_F)`` with ``x_F`` the vertex opposite ``F`` and
``s = +1`` when ``T`` is the left element of ``F``. Its normal component
along the stored face normal is 1, so RT0 coefficients are face-normal
velocities and the total flux through ``F`` is ``coefficient * |F|``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mesh import INTERIOR, BoundaryTag, Mesh
from .sparse import scatter

KINDS = ("P1", "dG-P1", "P1-bubble", "RT0", "P0")


# --------------------------------------------------------------------------
# quadrature

@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # barycentric, (nq, 3)
    weights: np.ndarray  # sum to 1/2, the reference triangle area
    degree: int


def _orbit3(a, w):
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)], [w] * 3


def _orbit6(a, b, w):
    c = 1.0 - a - b
    pts = [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
    return pts, [w] * 6


def _rule(groups, degree):
    pts, wts = [], []
    for p, w in groups:
        pts += p
        wts += w
    return QuadratureRule(np.array(pts), 0.5 * np.array(wts), degree)


@lru_cache(maxsize=None)
def triangle_quadrature(degree: int) -> QuadratureRule:
    """Symmetric Gauss rules on the reference triangle (Strang-Fix / Dunavant)."""
    if degree <= 1:
        return QuadratureRule(np.full((1, 3), 1 / 3), np.array([0.5]), 1)
    if degree == 2:
        return _rule([_orbit3(1 / 6, 1 / 3)], 2)
    if degree <= 4:
        return _rule([_orbit3(0.445948490915965, 0.223381589678011),
                      _orbit3(0.091576213509771, 0.109951743655322)], 4)
    if degree == 5:
        return _rule([([(1 / 3, 1 / 3, 1 / 3)], [0.225]),
                      _orbit3(0.470142064105115, 0.132394152788506),
                      _orbit3(0.101286507323456, 0.125939180544827)], 5)
    if degree == 6:
        return _rule([_orbit3(0.063089014491502, 0.050844906370207),
                      _orbit3(0.249286745170910, 0.116786275726379),
                      _orbit6(0.053145049844817, 0.310352451033784, 0.082851075618374)], 6)
    raise ValueError(f"no triangle rule of degree {degree}")


@lru_cache(maxsize=None)
def line_quadrature(npoints: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre on [0, 1]; weights sum to 1."""
    x, w = np.polynomial.legendre.leggauss(npoints)
    return 0.5 * (x + 1.0), 0.5 * w


def physical_points(mesh: Mesh, bary: np.ndarray) -> np.ndarray:
    """Map barycentric points (nq, 3) to every element: (ne, nq, 2)."""
    return np.einsum("qj,ejd->eqd", bary, mesh.vertices[mesh.elements])


def face_barycentric(mesh: Mesh, faces, elems, s) -> np.ndarray:
    """Barycentric coordinates in ``elems`` of points ``s`` along ``faces``.

    ``s`` runs from ``faces[:, 0]`` to ``faces[:, 1]``; result (n, nq, 3).
    """
    verts = mesh.elements[elems]
    a = mesh.faces[faces, 0][:, None]
    b = mesh.faces[faces, 1][:, None]
    la = (verts == a).astype(float)
    lb = (verts == b).astype(float)
    s = np.asarray(s)
    return (1 - s)[None, :, None] * la[:, None, :] + s[None, :, None] * lb[:, None, :]


# --------------------------------------------------------------------------
# spaces

class FunctionSpace:
    """A finite element space on a mesh.

    ``element_dofs`` holds the scalar dofs of every element, ``ncomp`` the
    vector multiplicity (RT0 is intrinsically vector valued and has
    ``ncomp == 1``).
    """

    def __init__(self, kind: str, mesh: Mesh, ncomp: int = 1):
        if kind not in KINDS:
            raise ValueError(f"unknown space kind {kind!r}; expected one of {KINDS}")
        if kind == "RT0" and ncomp != 1:
            raise ValueError("RT0 is already vector valued")
        self.kind = kind
        self.mesh = mesh
        self.ncomp = ncomp
        ne, nv = mesh.n_elements, mesh.n_vertices
        if kind == "P1":
            self.n_scalar = nv
            self.element_dofs = mesh.elements
        elif kind == "dG-P1":
            self.n_scalar = 3 * ne
            self.element_dofs = np.arange(3 * ne).reshape(ne, 3)
        elif kind == "P1-bubble":
            self.n_scalar = nv + ne
            self.element_dofs = np.column_stack([mesh.elements, nv + np.arange(ne)])
        elif kind == "RT0":
            self.n_scalar = mesh.n_faces
            self.element_dofs = mesh.element_faces
        else:
            self.n_scalar = ne
            self.element_dofs = np.arange(ne)[:, None]

    def __repr__(self):
        return f"FunctionSpace({self.kind!r}, ne={self.mesh.n_elements}, ncomp={self.ncomp})"

    @property
    def ndofs(self) -> int:
        return self.ncomp * self.n_scalar

    @property
    def nloc(self) -> int:
        return self.element_dofs.shape[1]

    def component_dofs(self, c: int) -> np.ndarray:
        return self.element_dofs + c * self.n_scalar

    def vector_element_dofs(self) -> np.ndarray:
        """Element dofs of all components, component-major: (ne, ncomp * nloc)."""
        return np.hstack([self.component_dofs(c) for c in range(self.ncomp)])

    # -- tabulation -------------------------------------------------------
    def values(self, bary: np.ndarray) -> np.ndarray:
        """Scalar basis values at barycentric points: (nq, nloc)."""
        bary = np.atleast_2d(bary)
        if self.kind in ("P1", "dG-P1"):
            return bary.copy()
        if self.kind == "P1-bubble":
            bub = 27.0 * bary.prod(axis=1)
            return np.column_stack([bary, bub])
        if self.kind == "P0":
            return np.ones((len(bary), 1))
        raise TypeError("RT0 values depend on the element; use rt0_values")

    def gradients(self, bary: np.ndarray) -> np.ndarray:
        """Scalar basis gradients at barycentric points: (ne, nq, nloc, 2)."""
        bary = np.atleast_2d(bary)
        G = self.mesh.barycentric_gradients
        ne, nq = self.mesh.n_elements, len(bary)
        if self.kind in ("P1", "dG-P1"):
            return np.broadcast_to(G[:, None], (ne, nq, 3, 2))
        if self.kind == "P1-bubble":
            out = np.empty((ne, nq, 4, 2))
            out[:, :, :3] = G[:, None]
            l0, l1, l2 = bary.T
            out[:, :, 3] = 27.0 * (
                (l1 * l2)[None, :, None] * G[:, None, 0]
                + (l0 * l2)[None, :, None] * G[:, None, 1]
                + (l0 * l1)[None, :, None] * G[:, None, 2]
            )
            return out
        if self.kind == "P0":
            return np.zeros((ne, nq, 1, 2))
        raise TypeError("use rt0_divergence for RT0")

    def rt0_scale(self) -> np.ndarray:
        """Per element and local face: s |F| / (2 |T|), shape (ne, 3)."""
        m = self.mesh
        return m.element_face_signs * m.face_measures[m.element_faces] / (2 * m.areas[:, None])

    def rt0_values(self, bary: np.ndarray) -> np.ndarray:
        """RT0 basis vectors at barycentric points: (ne, nq, 3, 2)."""
        m = self.mesh
        X = m.vertices[m.elements]
        x = np.einsum("qj,ejd->eqd", np.atleast_2d(bary), X)
        diff = x[:, :, None, :] - X[:, None, :, :]
        return self.rt0_scale()[:, None, :, None] * diff

    def rt0_divergence(self) -> np.ndarray:
        """Constant divergence of each local RT0 basis function: (ne, 3)."""
        return 2.0 * self.rt0_scale()


@dataclass
class FieldVector:
    space: FunctionSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.ndofs,):
            raise ValueError(f"expected {self.space.ndofs} coefficients, got {self.coeffs.shape}")

    def local(self) -> np.ndarray:
        """Element-local coefficients: (ne, ncomp, nloc)."""
        sp_ = self.space
        return np.stack([self.coeffs[sp_.component_dofs(c)] for c in range(sp_.ncomp)], axis=1)


def evaluate(field: FieldVector, element: int, point) -> tuple[np.ndarray, np.ndarray]:
    """Value and gradient of ``field`` at a barycentric ``point`` of ``element``.

    A 2-vector ``point`` is read as reference coordinates ``(xi, eta)``.
    Scalar fields return ``(float, (2,))``, vector fields ``((ncomp,),
    (ncomp, 2))``. For RT0 the second entry is the (constant) Jacobian.
    """
    space = field.space
    mesh = space.mesh
    if not 0 <= element < mesh.n_elements:
        raise IndexError(f"element {element} out of range [0, {mesh.n_elements})")
    point = np.asarray(point, dtype=float)
    if point.shape == (2,):
        point = np.array([1.0 - point.sum(), point[0], point[1]])
    if point.min() < -1e-12:
        raise ValueError("point lies outside the reference element")
    bary = point[None, :]
    if space.kind == "RT0":
        coef = field.coeffs[space.element_dofs[element]]
        vals = space.rt0_values(bary)[element, 0]
        jac = np.eye(2) * float(space.rt0_scale()[element] @ coef)
        return coef @ vals, jac
    vals = space.values(bary)[0]
    grads = space.gradients(bary)[element, 0]
    coef = field.local()[element]  # (ncomp, nloc)
    value = coef @ vals
    grad = coef @ grads
    if space.ncomp == 1:
        return float(value[0]), grad[0]
    return value, grad


def element_values(field: FieldVector, bary) -> np.ndarray:
    """Field values at barycentric points on every element: (ne, nq[, ncomp])."""
    space = field.space
    bary = np.atleast_2d(bary)
    if space.kind == "RT0":
        coef = field.coeffs[space.element_dofs]
        return np.einsum("el,eqld->eqd", coef, space.rt0_values(bary))
    vals = np.einsum("ecl,ql->eqc", field.local(), space.values(bary))
    return vals[..., 0] if space.ncomp == 1 else vals


def element_gradients(field: FieldVector, bary) -> np.ndarray:
    """Gradients at barycentric points: (ne, nq, 2) or (ne, nq, ncomp, 2)."""
    space = field.space
    g = np.einsum("ecl,eqld->eqcd", field.local(), space.gradients(np.atleast_2d(bary)))
    return g[:, :, 0] if space.ncomp == 1 else g


def rt0_divergence(field: FieldVector) -> np.ndarray:
    space = field.space
    return (space.rt0_divergence() * field.coeffs[space.element_dofs]).sum(axis=1)


def interior_jumps(field: FieldVector, npoints: int = 2) -> np.ndarray:
    """Jump ``left - right`` of a scalar field at Gauss points of interior faces."""
    space = field.space
    mesh = space.mesh
    inner = mesh.interior_faces
    s, _ = line_quadrature(npoints)
    out = []
    for side in (0, 1):
        elems = mesh.face_elements[inner, side]
        bary = face_barycentric(mesh, inner, elems, s)  # (n, nq, 3)
        coef = field.coeffs[space.element_dofs[elems]]
        if space.kind in ("P1", "dG-P1"):
            out.append(np.einsum("nql,nl->nq", bary, coef))
        elif space.kind == "P0":
            out.append(np.repeat(coef, len(s), axis=1))
        else:
            raise TypeError(f"jumps not defined for {space.kind}")
    return out[0] - out[1]


def interpolate(f: Callable, space: FunctionSpace) -> FieldVector:
    """Nodal (or face-moment, for RT0) interpolation of ``f``.

    ``f`` takes an (n, 2) array of points and returns (n,) values, or
    (n, ncomp) for vector spaces and RT0.
    """
    mesh = space.mesh

    def call(x, ncomp):
        v = np.asarray(f(x), dtype=float)
        if v.ndim == 0:
            v = np.full(len(x), float(v))
        if ncomp == 1 and v.ndim == 2 and v.shape[1] == 1:
            v = v[:, 0]
        return v.reshape(len(x), ncomp) if ncomp > 1 else v.reshape(len(x))

    if space.kind == "RT0":
        s, w = line_quadrature(2)
        a = mesh.vertices[mesh.faces[:, 0]]
        b = mesh.vertices[mesh.faces[:, 1]]
        pts = a[:, None] + s[None, :, None] * (b - a)[:, None]
        vals = call(pts.reshape(-1, 2), 2).reshape(mesh.n_faces, len(s), 2)
        coeffs = np.einsum("fqd,fd,q->f", vals, mesh.face_normals, w)
        return FieldVector(space, coeffs)

    nc = space.ncomp
    if space.kind == "P1":
        vals = call(mesh.vertices, nc)
    elif space.kind == "dG-P1":
        vals = call(mesh.vertices[mesh.elements].reshape(-1, 2), nc)
    elif space.kind == "P0":
        vals = call(mesh.centroids, nc)
    else:  # P1-bubble: vertex values, then bubble fixes the centroid value
        nodal = call(mesh.vertices, nc)
        cent = call(mesh.centroids, nc)
        p1_at_centroid = nodal[mesh.elements].mean(axis=1)
        vals = np.concatenate([nodal, cent - p1_at_centroid])
    vals = vals.reshape(space.n_scalar, nc) if nc > 1 else vals
    coeffs = vals.T.ravel() if nc > 1 else vals
    return FieldVector(space, coeffs)


def l2_project_lumped_p1(field: FieldVector, p1: FunctionSpace | None = None) -> np.ndarray:
    """Lumped L2 projection of a dG-P1 or P0 field onto P1 nodal values."""
    space = field.space
    mesh = space.mesh
    weights = np.zeros(mesh.n_vertices)
    np.add.at(weights, mesh.elements, np.repeat(mesh.areas[:, None] / 3, 3, axis=1))
    if space.kind == "P0":
        vals = np.repeat(field.coeffs[:, None], 3, axis=1)
        contrib = vals * (mesh.areas[:, None] / 3)
    elif space.kind == "dG-P1":
        local = field.coeffs[space.element_dofs]
        # int_T c phi_i = |T|/12 (c_i + sum c)
        contrib = mesh.areas[:, None] / 12 * (local + local.sum(axis=1, keepdims=True))
    else:
        raise TypeError(f"cannot project {space.kind}")
    acc = np.zeros(mesh.n_vertices)
    np.add.at(acc, mesh.elements, contrib)
    return acc / weights


# --------------------------------------------------------------------------
# assembly

FORMS = ("mass", "stiffness", "elasticity", "divergence", "dg_diffusion",
         "advection", "boundary_penalty")


class IncompatibleSpacesError(TypeError):
    pass


def _per_element(coef, ne):
    if coef is None:
        return np.ones(ne)
    coef = np.asarray(coef, dtype=float)
    return np.broadcast_to(coef, (ne,) + coef.shape[1:] if coef.ndim else (ne,))


def _block_diag(space_trial, space_test, local, ncomp):
    """Replicate a scalar element matrix on every vector component."""
    mats = []
    for c in range(ncomp):
        mats.append(scatter(space_test.component_dofs(c), space_trial.component_dofs(c),
                            local, (space_test.ndofs, space_trial.ndofs)))
    return sum(mats[1:], mats[0]).tocsr()


def _default_degree(trial, test, order):
    deg = 0
    for s in (trial, test):
        deg += {"P0": 0, "P1": 1, "dG-P1": 1, "RT0": 1, "P1-bubble": 3}[s.kind] - order
    return max(deg, 1)


def assemble_bilinear(form: str, trial: FunctionSpace, test: FunctionSpace | None = None,
                      **kw) -> sp.csr_matrix:
    """Assemble one form from the catalogue ``FORMS`` (rows = test dofs).

    Keyword arguments by form:

    * ``mass``: ``coefficient`` (scalar or per element), ``degree``.
    * ``stiffness``: ``coefficient`` (scalar, per element, or (ne, 2, 2)).
    * ``elasticity``: ``lam``, ``mu`` for ``(sigma_e(u), D(v))``.
    * ``divergence``: ``(q, div u)``; trial vector P1/P1-bubble or RT0,
      test P0 or P1.
    * ``dg_diffusion``: NIP operator ``(a grad u, grad v) + ([u], {a grad v.n})
      - ([v], {a grad u.n}) + (eta [u], [v])`` on interior faces with
      ``eta = penalty * a_max / h_F``; keywords ``coefficient``,
      ``penalty``, ``a_max``.
    * ``advection``: ``-(u w, grad v) + ((w.n u)^up, [v])`` on interior
      faces for an element-wise constant ``velocity`` (ne, 2).
    * ``boundary_penalty``: ``(gamma / h_F) (u.d, v.d)`` on faces with
      ``tags``; ``gamma``, optional ``direction`` ``"normal"`` or
      ``"tangent"`` for vector spaces.
    """
    test = trial if test is None else test
    if trial.mesh is not test.mesh:
        raise IncompatibleSpacesError("trial and test spaces live on different meshes")
    mesh = trial.mesh
    ne = mesh.n_elements
    shape = (test.ndofs, trial.ndofs)

    if form == "mass":
        coef = _per_element(kw.get("coefficient"), ne)
        if trial.kind == "RT0" or test.kind == "RT0":
            if trial.kind != test.kind:
                raise IncompatibleSpacesError("RT0 mass needs RT0 on both sides")
            rule = triangle_quadrature(2)
            phi = trial.rt0_values(rule.points)
            local = np.einsum("eqid,eqjd,q->eij", phi, phi, rule.weights) * 2 * mesh.areas[:, None, None]
            return scatter(test.element_dofs, trial.element_dofs, local * coef[:, None, None], shape)
        if trial.ncomp != test.ncomp:
            raise IncompatibleSpacesError("component count mismatch")
        rule = triangle_quadrature(kw.get("degree") or _default_degree(trial, test, 0))
        local = np.einsum("qi,qj,q->ij", test.values(rule.points), trial.values(rule.points),
                          rule.weights)
        local = 2 * (mesh.areas * coef)[:, None, None] * local[None]
        return _block_diag(trial, test, local, trial.ncomp)

    if form == "stiffness":
        if "RT0" in (trial.kind, test.kind) or trial.ncomp != test.ncomp:
            raise IncompatibleSpacesError("stiffness needs matching scalar-type spaces")
        rule = triangle_quadrature(kw.get("degree") or _default_degree(trial, test, 1))
        gu = trial.gradients(rule.points)
        gv = test.gradients(rule.points)
        coef = kw.get("coefficient")
        coef = np.ones(ne) if coef is None else np.asarray(coef, dtype=float)
        if coef.ndim == 3 or (coef.ndim == 2 and coef.shape == (2, 2)):
            K = np.broadcast_to(coef, (ne, 2, 2))
            local = np.einsum("eqid,edf,eqjf,q->eij", gv, K, gu, rule.weights)
        else:
            c = np.broadcast_to(coef, (ne,))
            local = c[:, None, None] * np.einsum("eqid,eqjd,q->eij", gv, gu, rule.weights)
        local = 2 * mesh.areas[:, None, None] * local
        return _block_diag(trial, test, local, trial.ncomp)

    if form == "elasticity":
        if trial.ncomp != 2 or test.ncomp != 2:
            raise IncompatibleSpacesError("elasticity needs 2-component spaces")
        lam, mu = float(kw["lam"]), float(kw["mu"])
        rule = triangle_quadrature(kw.get("degree") or _default_degree(trial, test, 1))
        gu = trial.gradients(rule.points)
        gv = test.gradients(rule.points)
        w = rule.weights
        nl_u, nl_v = trial.nloc, test.nloc
        local = np.zeros((ne, 2 * nl_v, 2 * nl_u))
        for c in range(2):
            for d in range(2):
                # basis phi_i e_c against phi_j e_d
                blk = lam * np.einsum("eqi,eqj,q->eij", gv[..., c], gu[..., d], w)
                blk += mu * np.einsum("eqi,eqj,q->eij", gv[..., d], gu[..., c], w)
                if c == d:
                    blk += mu * np.einsum("eqik,eqjk,q->eij", gv, gu, w)
                local[:, c * nl_v:(c + 1) * nl_v, d * nl_u:(d + 1) * nl_u] = blk
        local *= 2 * mesh.areas[:, None, None]
        return scatter(test.vector_element_dofs(), trial.vector_element_dofs(), local, shape)

    if form == "divergence":
        if test.kind not in ("P0", "P1", "dG-P1") or test.ncomp != 1:
            raise IncompatibleSpacesError("divergence test space must be scalar P0/P1")
        if trial.kind == "RT0":
            if test.kind != "P0":
                rule = triangle_quadrature(1)
                q = test.values(rule.points)[0]
                local = trial.rt0_divergence()[:, None, :] * q[None, :, None] * mesh.areas[:, None, None]
            else:
                local = (trial.rt0_divergence() * mesh.areas[:, None])[:, None, :]
            return scatter(test.element_dofs, trial.element_dofs, local, shape)
        if trial.ncomp != 2 or trial.kind not in ("P1", "P1-bubble"):
            raise IncompatibleSpacesError("divergence trial space must be RT0 or vector P1/P1-bubble")
        rule = triangle_quadrature(kw.get("degree") or _default_degree(trial, test, 0) + 1)
        q = test.values(rule.points)
        g = trial.gradients(rule.points)
        blocks = [np.einsum("qi,eqj,q->eij", q, g[..., c], rule.weights) for c in range(2)]
        local = 2 * mesh.areas[:, None, None] * np.concatenate(blocks, axis=2)
        return scatter(test.element_dofs, trial.vector_element_dofs(), local, shape)

    if form == "dg_diffusion":
        if trial.kind != "dG-P1" or test.kind != "dG-P1":
            raise IncompatibleSpacesError("dg_diffusion needs dG-P1 on both sides")
        a = float(kw.get("coefficient", 1.0))
        eta0 = float(kw.get("penalty", 4.0))
        a_max = float(kw.get("a_max", a))
        return nip_diffusion(mesh, a, eta0 * a_max)

    if form == "advection":
        if trial.kind != "dG-P1" or test.kind != "dG-P1":
            raise IncompatibleSpacesError("advection needs dG-P1 on both sides")
        return upwind_advection(mesh, np.asarray(kw["velocity"], dtype=float))

    if form == "boundary_penalty":
        if trial.kind not in ("P1", "P1-bubble") or test.kind != trial.kind:
            raise IncompatibleSpacesError("boundary_penalty needs matching P1/P1-bubble spaces")
        faces = np.flatnonzero(np.isin(mesh.face_tags, [int(t) for t in kw["tags"]]))
        gamma = float(kw.get("gamma", 1.0))
        coef = gamma / mesh.face_measures[faces] * mesh.face_measures[faces] / 6.0
        local1 = coef[:, None, None] * np.array([[2.0, 1.0], [1.0, 2.0]])[None]
        direction = kw.get("direction")
        verts = mesh.faces[faces]
        if trial.ncomp == 1:
            return scatter(verts, verts, local1, shape)
        n = mesh.face_normals[faces]
        d = {"normal": n, "tangent": np.column_stack([-n[:, 1], n[:, 0]])}.get(direction)
        mats = []
        for c in range(trial.ncomp):
            for e in range(trial.ncomp):
                if d is None:
                    if c != e:
                        continue
                    w = np.ones(len(faces))
                else:
                    w = d[:, c] * d[:, e]
                mats.append(scatter(verts + c * test.n_scalar, verts + e * trial.n_scalar,
                                    local1 * w[:, None, None], shape))
        return sum(mats[1:], mats[0]).tocsr()

    raise ValueError(f"unknown form {form!r}; expected one of {FORMS}")


# --------------------------------------------------------------------------
# dG building blocks shared with the cell solver

def dg_face_data(mesh: Mesh, npoints: int = 2):
    """Traces of dG-P1 basis functions on interior faces.

    Returns ``(faces, L, R, phiL, phiR, w)`` with ``phiX`` (n, nq, 3) basis
    values of the left/right element at the Gauss points and ``w`` (n, nq)
    the physical quadrature weights.
    """
    key = ("dgfaces", npoints)
    if key not in mesh._cache:
        inner = mesh.interior_faces
        L = mesh.face_elements[inner, 0]
        R = mesh.face_elements[inner, 1]
        s, w = line_quadrature(npoints)
        phiL = face_barycentric(mesh, inner, L, s)
        phiR = face_barycentric(mesh, inner, R, s)
        wq = mesh.face_measures[inner, None] * w[None, :]
        mesh._cache[key] = (inner, L, R, phiL, phiR, wq)
    return mesh._cache[key]


def nip_diffusion(mesh: Mesh, a: float, eta_scale: float) -> sp.csr_matrix:
    """Non-symmetric interior penalty operator for ``-div(a grad u)``.

    Zero-flux boundaries carry no face terms. Penalty ``eta_scale / h_F``.
    """
    ne = mesh.n_elements
    n = 3 * ne
    dofs = np.arange(n).reshape(ne, 3)
    G = mesh.barycentric_gradients
    vol = a * mesh.areas[:, None, None] * np.einsum("eid,ejd->eij", G, G)
    mats = [scatter(dofs, dofs, vol, (n, n))]

    inner, L, R, phiL, phiR, wq = dg_face_data(mesh)
    nrm = mesh.face_normals[inner]
    gnL = np.einsum("fid,fd->fi", G[L], nrm)  # normal derivative of basis, left
    gnR = np.einsum("fid,fd->fi", G[R], nrm)
    eta = eta_scale / mesh.face_measures[inner]
    # jump of basis: +phiL on left, -phiR on right; average of normal flux: a/2 gn
    sides = ((L, phiL, gnL, 1.0), (R, phiR, gnR, -1.0))
    for (E1, ph1, g1, s1) in sides:  # test side
        for (E2, ph2, g2, s2) in sides:  # trial side
            jump_t = s1 * ph1  # [v] (n, nq, 3)
            jump_u = s2 * ph2  # [u]
            avg_gv = 0.5 * a * g1  # {a grad v . n}
            avg_gu = 0.5 * a * g2
            # ([u], {a grad v.n}) - ([v], {a grad u.n}) + eta ([u], [v])
            t1 = np.einsum("fqj,fi,fq->fij", jump_u, avg_gv, wq)
            t2 = np.einsum("fqi,fj,fq->fij", jump_t, avg_gu, wq)
            t3 = eta[:, None, None] * np.einsum("fqi,fqj,fq->fij", jump_t, jump_u, wq)
            mats.append(scatter(dofs[E1], dofs[E2], t1 - t2 + t3, (n, n)))
    return sum(mats[1:], mats[0]).tocsr()


def face_velocity(mesh: Mesh, element_velocity: np.ndarray) -> np.ndarray:
    """Average of the incident element values; boundary faces take the interior value."""
    left, right = mesh.face_elements.T
    v = element_velocity[left].copy()
    inner = right >= 0
    v[inner] = 0.5 * (v[inner] + element_velocity[right[inner]])
    return v


def upwind_advection(mesh: Mesh, velocity: np.ndarray) -> sp.csr_matrix:
    """``-(u w, grad v) + ((w.n u)^up, [v])`` for element-constant ``w``.

    Full upwinding on interior faces by the sign of ``w_F . n``; on ties the
    trace average is used. Boundary faces are skipped (zero flux).
    """
    ne = mesh.n_elements
    n = 3 * ne
    dofs = np.arange(n).reshape(ne, 3)
    G = mesh.barycentric_gradients
    # -(u w, grad v_i) = -(w . G_i) |T|/3 * sum_j u_j
    wg = np.einsum("ed,eid->ei", velocity, G)
    vol = -(wg * mesh.areas[:, None] / 3.0)[:, :, None] * np.ones((1, 1, 3))
    mats = [scatter(dofs, dofs, vol, (n, n))]

    inner, L, R, phiL, phiR, wq = dg_face_data(mesh)
    vn = np.einsum("fd,fd->f", face_velocity(mesh, velocity)[inner], mesh.face_normals[inner])
    wL = np.where(vn > 0, 1.0, np.where(vn < 0, 0.0, 0.5))
    wR = 1.0 - wL
    for (E1, ph1, s1) in ((L, phiL, 1.0), (R, phiR, -1.0)):
        for (E2, ph2, up) in ((L, phiL, wL), (R, phiR, wR)):
            loc = s1 * (vn * up)[:, None, None] * np.einsum("fqi,fqj,fq->fij", ph1, ph2, wq)
            mats.append(scatter(dofs[E1], dofs[E2], loc, (n, n)))
    return sum(mats[1:], mats[0]).tocsr()


def boundary_traction_vector(space: FunctionSpace, faces, traction) -> np.ndarray:
    """Load vector ``int_F t . v`` for a constant traction per face (n, 2).

    Only vertex (P1) components carry boundary loads; bubbles vanish on faces.
    """
    mesh = space.mesh
    out = np.zeros(space.ndofs)
    faces = np.asarray(faces)
    half = 0.5 * mesh.face_measures[faces]
    for c in range(space.ncomp):
        for end in (0, 1):
            np.add.at(out, mesh.faces[faces, end] + c * space.n_scalar, half * traction[:, c])
    return out


__all__ = [
    "BoundaryTag", "FieldVector", "FunctionSpace", "INTERIOR", "QuadratureRule",
    "assemble_bilinear", "element_gradients", "element_values", "evaluate",
    "interpolate", "interior_jumps", "l2_project_lumped_p1", "line_quadrature",
    "nip_diffusion", "rt0_divergence", "triangle_quadrature", "upwind_advection",
]
