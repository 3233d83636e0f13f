"""Unsteady Stokes flow (mini element) and its monolithic coupling to Biot.

Fluid unknowns: velocity in vector P1-bubble, pressure in P1. The fluid
block reads, after backward Euler,

    rho_f/dt (u, v) + 2 mu (D u, D v) - (p, div v) + (q, div u)

with the continuity row entering with a plus sign so that testing with the
solution itself cancels the pressure coupling.

Interface weak form (``n`` is the fluid outward normal on the interface,
``J`` the normal mass-balance defect, ``T`` the tangential slip)::

    J(u, xi_dot, w) = u.n - xi_dot.n + w.n_p
    T(u, xi_dot)    = (u - xi_dot).t

    - <sigma_f(u, p) n.n, J(v, xi, w)>          consistency
    + <sigma_f(v, q) n.n, J(u, eta_dot, u_p)>   adjoint, skew sign
    + gamma_N mu / h <J(u, eta_dot, u_p), J(v, xi, w)>
    + beta_bjs <T(u, eta_dot), T(v, xi)>

with ``eta_dot = (eta - eta_old) / dt``, ``w.n_p`` the porous RT0 dof and
``beta_bjs = bjs * mu / sqrt(kappa)``. The first term follows from
integrating both momentum balances and the Darcy law by parts and using
continuity of traction, ``sigma_f n.n = -p_p`` and the slip law, so a
smooth solution satisfies the discrete equations. Because the adjoint term
carries the opposite sign of the consistency term, testing with
``(u, p, eta_dot, u_p, p_p)`` cancels both and leaves

    E^{n+1} - E^n + dissipation = dt * work of the inflow traction

for ``E = rho_f/2 |u|^2 + 1/2 a(eta, eta) + S/2 |p_p|^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .mesh import BoundaryTag, Mesh, MeshError, Subdomain
from .poro import BiotBoundary, BiotSolver, MechParams, PoroState, inflow_pressure
from .sparse import factorize


@dataclass(frozen=True)
class InterfaceParams:
    gamma_N: float = 100.0
    bjs: float = 1.0

    def __post_init__(self):
        if not self.gamma_N > 0:
            raise ValueError(f"gamma_N must be > 0, got {self.gamma_N}")
        if self.bjs < 0:
            raise ValueError(f"bjs must be >= 0, got {self.bjs}")


@dataclass(frozen=True)
class StokesState:
    u: np.ndarray
    p: np.ndarray
    t: float = 0.0

    @classmethod
    def zeros(cls, mesh: Mesh) -> "StokesState":
        return cls(np.zeros(2 * (mesh.n_vertices + mesh.n_elements)), np.zeros(mesh.n_vertices))

    def vertex_velocity(self, mesh: Mesh) -> np.ndarray:
        n = mesh.n_vertices + mesh.n_elements
        return np.column_stack([self.u[:mesh.n_vertices], self.u[n:n + mesh.n_vertices]])


TANGENT_PENALTY = 1e8


class StokesSolver:
    """Fluid-only unsteady (or steady) Stokes with the inflow/outflow/wall conditions.

    ``inflow``: ``"traction"`` applies ``-p_in(t) n`` and penalizes the
    tangential velocity; ``"dirichlet"`` prescribes ``inflow_velocity(x)``.
    ``outflow``: ``"natural"`` (zero traction) or ``"traction"`` (zero
    normal traction plus the tangential penalty). ``interface_as_wall``
    treats Interface faces as no-slip walls.
    """

    def __init__(self, mesh: Mesh, params: MechParams, dt: float | None, *,
                 inflow: str = "traction", outflow: str = "natural",
                 inflow_velocity=None, interface_as_wall: bool = False,
                 pressure=None):
        tags = set(np.unique(mesh.face_tags[mesh.boundary_faces]).tolist())
        if int(BoundaryTag.Inflow) not in tags or int(BoundaryTag.Outflow) not in tags:
            raise MeshError("fluid mesh needs Inflow and Outflow faces")
        if dt is not None and not dt > 0:
            raise ValueError("dt must be > 0")
        if inflow == "dirichlet" and inflow_velocity is None:
            raise ValueError("dirichlet inflow needs inflow_velocity")
        self.mesh, self.params, self.dt = mesh, params, dt
        self.inflow, self.outflow = inflow, outflow
        self.inflow_velocity = inflow_velocity
        self.pressure = pressure or (lambda t: inflow_pressure(params, t))
        mu = params.mu_f

        self.V = fem.FunctionSpace("P1-bubble", mesh, 2)
        self.Q = fem.FunctionSpace("P1", mesh)
        self.A = fem.assemble_bilinear("elasticity", self.V, lam=0.0, mu=mu)
        self.M = fem.assemble_bilinear("mass", self.V)
        self.B = fem.assemble_bilinear("divergence", self.V, self.Q)
        pen_tags = [BoundaryTag.Inflow] if inflow == "traction" else []
        if outflow == "traction":
            pen_tags.append(BoundaryTag.Outflow)
        self.P = (fem.assemble_bilinear("boundary_penalty", self.V, tags=pen_tags,
                                        gamma=TANGENT_PENALTY * mu, direction="tangent")
                  if pen_tags else sp.csr_matrix((self.V.ndofs, self.V.ndofs)))
        self.sizes = (self.V.ndofs, self.Q.ndofs)

        wall = [BoundaryTag.FluidWall] + ([BoundaryTag.Interface] if interface_as_wall else [])
        if inflow == "dirichlet":
            wall.append(BoundaryTag.Inflow)
        self.wall_tags = wall
        verts = np.unique(mesh.faces[np.isin(mesh.face_tags, [int(t) for t in wall])])
        ns = self.V.n_scalar
        self.fixed = np.concatenate([verts, verts + ns])
        self.fixed_values = np.zeros(len(self.fixed))
        if inflow == "dirichlet":
            inflow_v = np.unique(mesh.faces[mesh.faces_with_tag(BoundaryTag.Inflow)])
            # walls win at shared corners
            other = np.unique(mesh.faces[np.isin(mesh.face_tags, [int(t) for t in wall[:-1]])])
            inflow_v = np.setdiff1d(inflow_v, other)
            vals = np.asarray(inflow_velocity(mesh.vertices[inflow_v]), dtype=float)
            vals = vals.reshape(len(inflow_v), 2)
            pos = np.searchsorted(verts, inflow_v)
            for c in range(2):
                self.fixed_values[c * len(verts) + pos] = vals[:, c]
        self._factor = None

    def matrix(self) -> sp.csr_matrix:
        K = self.A + self.P
        if self.dt is not None:
            K = K + (self.params.rho_f_code / self.dt) * self.M
        return sp.bmat([[K, -self.B.T], [self.B, None]], format="csr")

    def load_vector(self, t: float) -> np.ndarray:
        b = np.zeros(sum(self.sizes))
        if self.inflow == "traction":
            faces = self.mesh.faces_with_tag(BoundaryTag.Inflow)
            p_in = float(self.pressure(t))
            b[:self.V.ndofs] += fem.boundary_traction_vector(
                self.V, faces, -p_in * self.mesh.face_normals[faces])
        return b

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        n = len(rhs)
        free = np.setdiff1d(np.arange(n), self.fixed)
        if self._factor is None:
            self._A = self.matrix()
            self._free = free
            self._factor = factorize(self._A[free][:, free])
        x = np.zeros(n)
        x[self.fixed] = self.fixed_values
        rhs = rhs - self._A[:, self.fixed] @ self.fixed_values
        x[free] = self._factor.solve(rhs[free])
        return x

    def step(self, state: StokesState, t_new: float | None = None) -> StokesState:
        if self.dt is None:
            raise ValueError("steady solver has no time step; use steady()")
        t_new = state.t + self.dt if t_new is None else t_new
        rhs = self.load_vector(t_new)
        rhs[:self.V.ndofs] += (self.params.rho_f_code / self.dt) * (self.M @ state.u)
        x = self.solve(rhs)
        return StokesState(x[:self.V.ndofs], x[self.V.ndofs:], t_new)

    def steady(self, t: float = 0.0) -> StokesState:
        x = self.solve(self.load_vector(t))
        return StokesState(x[:self.V.ndofs], x[self.V.ndofs:], t)

    def divergence_residual(self, state: StokesState) -> float:
        """Discrete divergence tested against the pressure space."""
        return float(np.linalg.norm(self.B @ state.u))


def assemble_stokes(mesh: Mesh, params: MechParams, dt: float | None, **kw) -> StokesSolver:
    return StokesSolver(mesh, params, dt, **kw)


# --------------------------------------------------------------------------
# monolithic coupling

@dataclass
class InterfaceMap:
    """Matching of interface faces between the fluid and porous submeshes."""

    fluid_faces: np.ndarray
    porous_faces: np.ndarray
    fluid_elems: np.ndarray
    porous_elems: np.ndarray
    normals: np.ndarray        # fluid outward
    measures: np.ndarray


def match_interface(fluid: Mesh, fluid_verts: np.ndarray, porous: Mesh,
                    porous_verts: np.ndarray) -> InterfaceMap:
    def lookup(mesh, vmap):
        faces = mesh.faces_with_tag(BoundaryTag.Interface)
        faces = faces[mesh.face_elements[faces, 1] < 0]
        keys = np.sort(vmap[mesh.faces[faces]], axis=1)
        return {tuple(k): f for k, f in zip(keys.tolist(), faces)}

    fl = lookup(fluid, fluid_verts)
    po = lookup(porous, porous_verts)
    if not fl:
        raise MeshError("no Interface faces between the subdomains")
    if set(fl) != set(po):
        raise MeshError("interface faces do not match across the subdomains")
    keys = sorted(fl)
    ff = np.array([fl[k] for k in keys])
    pf = np.array([po[k] for k in keys])
    return InterfaceMap(ff, pf, fluid.face_elements[ff, 0], porous.face_elements[pf, 0],
                        fluid.face_normals[ff], fluid.face_measures[ff])


@dataclass
class CoupledState:
    fluid: StokesState
    poro: PoroState

    @property
    def t(self) -> float:
        return self.fluid.t


class CoupledSolver:
    """Monolithic Stokes-Biot system over ``[u_f, p_f, eta, u_p, p_p]``."""

    def __init__(self, mesh: Mesh, params: MechParams, iface: InterfaceParams, dt: float, *,
                 pressure=None, nq: int = 3):
        if not (mesh.has_subdomain(Subdomain.FLUID) and mesh.has_subdomain(Subdomain.POROUS)):
            raise MeshError("coupled mode needs both subdomains")
        self.mesh, self.params, self.iface, self.dt = mesh, params, iface, float(dt)
        self.fluid_mesh, self.fluid_elems, fverts = mesh.submesh(Subdomain.FLUID)
        self.porous_mesh, self.porous_elems, pverts = mesh.submesh(Subdomain.POROUS)
        self.fluid_verts, self.porous_verts = fverts, pverts
        self.imap = match_interface(self.fluid_mesh, fverts, self.porous_mesh, pverts)

        self.stokes = StokesSolver(self.fluid_mesh, params, dt, pressure=pressure)
        bc = BiotBoundary(coupled=(BoundaryTag.Interface,))
        self.biot = BiotSolver(self.porous_mesh, params, dt, boundary=bc)
        nf = sum(self.stokes.sizes)
        self.offsets = (0, self.stokes.sizes[0], nf, nf + self.biot.sizes[0],
                        nf + self.biot.sizes[0] + self.biot.sizes[1], nf + sum(self.biot.sizes))
        self.C = self._interface_matrix(nq)
        self.fixed = np.concatenate([self.stokes.fixed, nf + self.biot.dirichlet_dofs])
        self._factor = None

    @property
    def beta_bjs(self) -> float:
        p = self.params
        return self.iface.bjs * p.mu_f / np.sqrt(p.mobility * p.mu_f)

    def _interface_rows(self, s):
        """Per face and quadrature point: coefficient vectors of J, T and sigma_nn."""
        im, fm, pm = self.imap, self.fluid_mesh, self.porous_mesh
        Vf = self.stokes.V
        bf = fem.face_barycentric(fm, im.fluid_faces, im.fluid_elems, s)
        bp = fem.face_barycentric(pm, im.porous_faces, im.porous_elems, s)
        nF, nq = bf.shape[:2]
        n = im.normals
        t = np.column_stack([-n[:, 1], n[:, 0]])
        mu = self.params.mu_f

        # fluid velocity basis (4 scalar functions per component) on the face
        phi_f = np.empty((nF, nq, 4))
        phi_f[..., :3] = bf
        phi_f[..., 3] = 27.0 * bf.prod(axis=2)
        Gf = fm.barycentric_gradients[im.fluid_elems]  # (nF, 3, 2)
        grad_f = np.empty((nF, nq, 4, 2))
        grad_f[:, :, :3] = Gf[:, None]
        l0, l1, l2 = bf[..., 0], bf[..., 1], bf[..., 2]
        grad_f[:, :, 3] = 27.0 * ((l1 * l2)[..., None] * Gf[:, None, 0]
                                  + (l0 * l2)[..., None] * Gf[:, None, 1]
                                  + (l0 * l1)[..., None] * Gf[:, None, 2])
        gn = np.einsum("fqid,fd->fqi", grad_f, n)

        # dof index arrays
        fu = np.hstack([Vf.component_dofs(c)[im.fluid_elems] for c in range(2)])  # (nF, 8)
        fp = self.stokes.Q.element_dofs[im.fluid_elems] + self.offsets[1]           # (nF, 3)
        nvp = pm.n_vertices
        pe = pm.elements[im.porous_elems]
        pe = np.hstack([pe, pe + nvp]) + self.offsets[2]                            # (nF, 6)
        pw = im.porous_faces[:, None] + self.offsets[3]                             # (nF, 1)

        # J: u.n - eta_dot.n + w.n_p
        Ju = np.concatenate([phi_f * n[:, None, 0:1], phi_f * n[:, None, 1:2]], axis=2)
        Je = -np.concatenate([bp * n[:, None, 0:1], bp * n[:, None, 1:2]], axis=2)
        Jw = np.ones((nF, nq, 1))
        # T: (u - eta_dot).t
        Tu = np.concatenate([phi_f * t[:, None, 0:1], phi_f * t[:, None, 1:2]], axis=2)
        Te = -np.concatenate([bp * t[:, None, 0:1], bp * t[:, None, 1:2]], axis=2)
        # sigma_nn(u, p) = 2 mu (D u n).n - p = 2 mu sum_c n_c (grad u_c . n) - p
        Su = 2 * mu * np.concatenate([gn * n[:, None, 0:1], gn * n[:, None, 1:2]], axis=2)
        Sp = -bf
        return dict(fu=fu, fp=fp, pe=pe, pw=pw, Ju=Ju, Je=Je, Jw=Jw, Tu=Tu, Te=Te, Su=Su, Sp=Sp)

    def _interface_matrix(self, nq: int) -> sp.csr_matrix:
        s, w = fem.line_quadrature(nq)
        d = self._interface_rows(s)
        im = self.imap
        wq = im.measures[:, None] * w[None, :]
        dt = self.dt
        J_dofs = np.hstack([d["fu"], d["pe"], d["pw"]])
        J_test = np.concatenate([d["Ju"], d["Je"], d["Jw"]], axis=2)
        J_trial = np.concatenate([d["Ju"], d["Je"] / dt, d["Jw"]], axis=2)
        T_dofs = np.hstack([d["fu"], d["pe"]])
        T_test = np.concatenate([d["Tu"], d["Te"]], axis=2)
        T_trial = np.concatenate([d["Tu"], d["Te"] / dt], axis=2)
        S_dofs = np.hstack([d["fu"], d["fp"]])
        S = np.concatenate([d["Su"], d["Sp"]], axis=2)

        pen = self.iface.gamma_N * self.params.mu_f / im.measures
        N = self.offsets[-1]
        rows, cols, vals = [], [], []

        def add(rd, cd, a, b, weight):
            loc = np.einsum("fqi,fqj,fq->fij", a, b, weight)
            rows.append(np.broadcast_to(rd[:, :, None], loc.shape).ravel())
            cols.append(np.broadcast_to(cd[:, None, :], loc.shape).ravel())
            vals.append(loc.ravel())

        add(J_dofs, S_dofs, J_test, S, -wq)                       # consistency
        add(S_dofs, J_dofs, S, J_trial, wq)                       # adjoint
        add(J_dofs, J_dofs, J_test, J_trial, pen[:, None] * wq)   # penalty
        add(T_dofs, T_dofs, T_test, T_trial, self.beta_bjs * wq)  # slip
        return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(N, N)).tocsr()

    def matrix(self) -> sp.csr_matrix:
        return (sp.block_diag([self.stokes.matrix(), self.biot.matrix()], format="csr")
                + self.C).tocsr()

    def rhs(self, state: CoupledState, t_new: float) -> np.ndarray:
        o = self.offsets
        b = np.zeros(o[-1])
        st, bi = self.stokes, self.biot
        b[:o[2]] = st.load_vector(t_new)
        b[:o[1]] += (self.params.rho_f_code / self.dt) * (st.M @ state.fluid.u)
        b[o[2]:] = bi.load_vector(t_new) + bi.history_vector(state.poro)
        # eta_dot columns of the interface terms carry -eta_old / dt
        b += self.C[:, o[2]:o[3]] @ state.poro.eta
        return b

    def step(self, state: CoupledState, t_new: float | None = None) -> CoupledState:
        t_new = state.t + self.dt if t_new is None else t_new
        N = self.offsets[-1]
        if self._factor is None:
            self._A = self.matrix()
            self._free = np.setdiff1d(np.arange(N), self.fixed)
            self._factor = factorize(self._A[self._free][:, self._free])
        rhs = self.rhs(state, t_new)
        x = np.zeros(N)
        x[self._free] = self._factor.solve(rhs[self._free])
        o = self.offsets
        fluid = StokesState(x[:o[1]], x[o[1]:o[2]], t_new)
        poro = PoroState(x[o[2]:o[3]], x[o[3]:o[4]], x[o[4]:], t_new)
        return CoupledState(fluid, poro)

    def zeros(self) -> CoupledState:
        return CoupledState(StokesState.zeros(self.fluid_mesh), PoroState.zeros(self.porous_mesh))

    # -- diagnostics ------------------------------------------------------
    def energy(self, state: CoupledState) -> float:
        p = self.params
        u, eta, pp = state.fluid.u, state.poro.eta, state.poro.p
        return float(0.5 * p.rho_f_code * u @ (self.stokes.M @ u)
                     + 0.5 * eta @ (self.biot.K @ eta)
                     + 0.5 * p.inv_M * pp @ (self.biot.M_p @ pp))

    def interface_mismatch(self, new: CoupledState, old: CoupledState, nq: int = 3) -> float:
        """L2 norm over the interface of ``u_f.n - (eta_dot + u_p).n``."""
        s, w = fem.line_quadrature(nq)
        d = self._interface_rows(s)
        x = self._pack(new)
        x_old = np.zeros_like(x)
        o = self.offsets
        x_old[o[2]:o[3]] = old.poro.eta
        dofs = np.hstack([d["fu"], d["pe"], d["pw"]])
        coef = np.concatenate([d["Ju"], d["Je"] / self.dt, d["Jw"]], axis=2)
        vals = np.einsum("fqi,fi->fq", coef, x[dofs] - x_old[dofs])
        wq = self.imap.measures[:, None] * w[None, :]
        return float(np.sqrt((vals ** 2 * wq).sum()))

    def _pack(self, state: CoupledState) -> np.ndarray:
        return np.concatenate([state.fluid.u, state.fluid.p, state.poro.eta,
                               state.poro.u, state.poro.p])

    def seepage(self, state: CoupledState) -> np.ndarray:
        return state.poro.seepage(self.porous_mesh, self.params.Phi)


def assemble_coupled(mesh: Mesh, params: MechParams, iface: InterfaceParams | None,
                     dt: float, **kw) -> CoupledSolver:
    return CoupledSolver(mesh, params, iface or InterfaceParams(), dt, **kw)


def step_coupled(solver: CoupledSolver, state: CoupledState,
                 t_new: float | None = None) -> CoupledState:
    return solver.step(state, t_new)


@dataclass
class CoupledHistory:
    times: list[float] = field(default_factory=list)
    energy: list[float] = field(default_factory=list)
    mismatch: list[float] = field(default_factory=list)
    max_fluid_pressure: list[float] = field(default_factory=list)


def run_coupled(solver: CoupledSolver, n_steps: int, state: CoupledState | None = None,
                observer=None) -> tuple[CoupledState, CoupledHistory]:
    state = state or solver.zeros()
    hist = CoupledHistory()
    for _ in range(n_steps):
        new = solver.step(state)
        hist.times.append(new.t)
        hist.energy.append(solver.energy(new))
        hist.mismatch.append(solver.interface_mismatch(new, state))
        hist.max_fluid_pressure.append(float(np.abs(new.fluid.p).max()))
        if observer is not None:
            observer(new)
        state = new
    return state, hist
