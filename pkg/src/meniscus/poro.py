"""Biot poroelasticity with mixed Darcy flux (vector P1 / RT0 / P0).

Units inside the solver are mm, s, MPa and tonne, so forces come out in N
and densities in t/mm^3. :class:`MechParams` keeps the table units and
converts at its properties; ``mobility`` is the Darcy coefficient
``kappa / mu_f`` taken as the plain ratio of the tabulated numbers.

Unknown layout of the three-field system: ``[eta (2 nv), u (nf), p (ne)]``.
Rows, in order: momentum balance, Darcy law, mass balance

    K eta - alpha B_eta^T p                        = f
    (1/mobility) M_u u - B_u^T p                   = g - int_{Gamma_p} p_b w.n
    alpha B_eta eta / dt + B_u u + S M_p p / dt    = alpha B_eta eta_old / dt + S M_p p_old / dt

with storage ``S = 1/M`` and backward Euler for the mass balance.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from . import fem
from .mesh import BoundaryTag, Mesh
from .sparse import factorize

KG_M3_TO_T_MM3 = 1e-12


@dataclass(frozen=True)
class MechParams:
    """Poroelastic and fluid constants in tabulated units; defaults are the reference tissue values."""

    p_max: float = 10.0       # MPa
    mu_f: float = 1e-9        # MPa s
    rho_p: float = 1.1e3      # kg/m^3
    kappa: float = 1e-14      # m^4/(N s)
    rho_f: float = 1e3        # kg/m^3
    Phi: float = 0.8
    E: float = 80.0           # MPa
    inv_M: float = 68.9       # 1/MPa
    nu: float = 0.167
    alpha_biot: float = 1.0
    gravity: tuple[float, float] = (0.0, 0.0)  # mm/s^2

    def __post_init__(self):
        checks = {
            "E": (self.E > 0, "> 0"), "kappa": (self.kappa > 0, "> 0"),
            "mu_f": (self.mu_f > 0, "> 0"), "nu": (0 <= self.nu < 0.5, "in [0, 0.5)"),
            "Phi": (0 < self.Phi < 1, "in (0, 1)"),
            "alpha_biot": (0 < self.alpha_biot <= 1, "in (0, 1]"),
            "inv_M": (self.inv_M >= 0, ">= 0"), "rho_p": (self.rho_p >= 0, ">= 0"),
            "rho_f": (self.rho_f >= 0, ">= 0"), "p_max": (self.p_max >= 0, ">= 0"),
        }
        for name, (ok, bound) in checks.items():
            if not ok:
                raise ValueError(f"{name} must be {bound}, got {getattr(self, name)}")
        object.__setattr__(self, "gravity", tuple(float(g) for g in self.gravity))
        if len(self.gravity) != 2:
            raise ValueError("gravity must have two components")

    @property
    def lame(self) -> tuple[float, float]:
        return lame_from_table(self)

    @property
    def mobility(self) -> float:
        return self.kappa / self.mu_f

    @property
    def rho_s(self) -> float:
        return self.rho_p * KG_M3_TO_T_MM3

    @property
    def rho_f_code(self) -> float:
        return self.rho_f * KG_M3_TO_T_MM3


def lame_from_table(params: MechParams) -> tuple[float, float]:
    E, nu = params.E, params.nu
    if nu >= 0.5:
        raise ValueError(f"nu must be < 0.5, got {nu}")
    return E * nu / ((1 + nu) * (1 - 2 * nu)), E / (2 * (1 + nu))


Load = Callable[[float], float] | float


def _value(load: Load, t: float) -> float:
    return float(load(t)) if callable(load) else float(load)


@dataclass(frozen=True)
class BiotBoundary:
    """Boundary conditions keyed by tag.

    ``fixed``: displacement components clamped to zero. ``pressure``:
    prescribed pore pressure, imposed naturally in the Darcy equation.
    ``traction``: normal pressure load ``P(t)``, i.e. traction ``-P n``.
    Boundary faces with neither a pressure condition nor a tag in
    ``coupled`` are impermeable (``u.n = 0`` strongly).
    """

    fixed: Mapping[BoundaryTag, tuple[int, ...]] = field(
        default_factory=lambda: {BoundaryTag.PorousWall: (0, 1)})
    pressure: Mapping[BoundaryTag, Load] = field(
        default_factory=lambda: {BoundaryTag.PorousWall: 0.0})
    traction: Mapping[BoundaryTag, Load] = field(default_factory=dict)
    coupled: tuple[BoundaryTag, ...] = ()


def fallback_boundary(params: MechParams,
                      loaded: tuple[BoundaryTag, ...] = (BoundaryTag.Inflow,
                                                         BoundaryTag.Interface)) -> BiotBoundary:
    """Porous-only loading: faces with a ``loaded`` tag see the chamber pressure.

    The pressure acts both as normal traction and as pore pressure, which
    is what the fluid channel would impose on the scaffold surface.
    """

    def p_in(t):
        return inflow_pressure(params, t)

    pressure = {BoundaryTag.PorousWall: 0.0}
    pressure.update({tag: p_in for tag in loaded})
    return BiotBoundary(
        fixed={BoundaryTag.PorousWall: (0, 1)},
        pressure=pressure,
        traction={tag: p_in for tag in loaded},
    )


def inflow_pressure(params: MechParams, t: float) -> float:
    return params.p_max * np.sin(np.pi * t)


@dataclass(frozen=True)
class PoroState:
    eta: np.ndarray
    u: np.ndarray
    p: np.ndarray
    t: float = 0.0
    velocity: np.ndarray | None = None
    acceleration: np.ndarray | None = None

    @classmethod
    def zeros(cls, mesh: Mesh, dynamic: bool = False) -> "PoroState":
        eta = np.zeros(2 * mesh.n_vertices)
        extra = (np.zeros_like(eta), np.zeros_like(eta)) if dynamic else (None, None)
        return cls(eta, np.zeros(mesh.n_faces), np.zeros(mesh.n_elements), 0.0, *extra)

    def seepage(self, mesh: Mesh, Phi: float) -> np.ndarray:
        """Element-average seepage velocity ``u / Phi``: (ne, 2)."""
        return element_flux(mesh, self.u) / Phi


def element_flux(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """Element average of an RT0 field (its value at the centroid)."""
    W = fem.FunctionSpace("RT0", mesh)
    return fem.element_values(fem.FieldVector(W, u), np.full((1, 3), 1 / 3))[:, 0]


class BiotSolver:
    """Assembled three-field Biot system on a porous mesh."""

    def __init__(self, mesh: Mesh, params: MechParams, dt: float, *,
                 boundary: BiotBoundary | None = None, mode: str = "quasi-static",
                 stabilization: bool = False, newmark: tuple[float, float] = (0.25, 0.5),
                 rho_s: float | None = None, alpha: float | None = None):
        if not dt > 0:
            raise ValueError("dt must be > 0")
        if mode not in ("quasi-static", "dynamic"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mesh = mesh
        self.params = params
        self.dt = float(dt)
        self.bc = boundary or BiotBoundary()
        self.mode = mode
        self.newmark = newmark
        self.rho_s = params.rho_s if rho_s is None else float(rho_s)
        # override of the Biot-Willis coefficient, e.g. 0 to decouple flow
        self.alpha = params.alpha_biot if alpha is None else float(alpha)
        needed = set(self.bc.fixed) | set(self.bc.pressure) | set(self.bc.traction)
        present = {BoundaryTag(t) for t in np.unique(mesh.face_tags[mesh.boundary_faces])}
        if BoundaryTag.PorousWall in needed and BoundaryTag.PorousWall not in present:
            raise ValueError("mesh has no PorousWall faces")

        self.V = fem.FunctionSpace("P1", mesh, 2)
        self.W = fem.FunctionSpace("RT0", mesh)
        self.Q = fem.FunctionSpace("P0", mesh)
        nV, nW, nQ = self.V.ndofs, self.W.ndofs, self.Q.ndofs
        self.sizes = (nV, nW, nQ)
        self.offsets = (0, nV, nV + nW, nV + nW + nQ)

        lam, mu = params.lame
        self.K = fem.assemble_bilinear("elasticity", self.V, lam=lam, mu=mu)
        self.B_eta = fem.assemble_bilinear("divergence", self.V, self.Q)
        self.M_u = fem.assemble_bilinear("mass", self.W)
        self.B_u = fem.assemble_bilinear("divergence", self.W, self.Q)
        self.M_p = sp.diags(mesh.areas).tocsr()
        self.M_v = fem.assemble_bilinear("mass", self.V)
        self.L_p = _tpfa_laplacian(mesh) if stabilization else None
        self.stab_coef = 0.0
        if stabilization:
            hmax = np.sqrt(2 * mesh.areas).max()
            self.stab_coef = hmax ** 2 / (4 * (lam + 2 * mu))

        self._fixed_dofs = self._dirichlet_dofs()
        self._factor = None

    # -- boundary bookkeeping -------------------------------------------------
    def _faces(self, tag):
        f = self.mesh.faces_with_tag(tag)
        return f[self.mesh.face_elements[f, 1] < 0]

    def _dirichlet_dofs(self) -> np.ndarray:
        nv = self.mesh.n_vertices
        dofs = []
        for tag, comps in self.bc.fixed.items():
            verts = np.unique(self.mesh.faces[self._faces(tag)])
            for c in comps:
                dofs.append(verts + c * nv)
        open_tags = set(self.bc.pressure) | set(self.bc.coupled)
        bfaces = self.mesh.boundary_faces
        closed = bfaces[~np.isin(self.mesh.face_tags[bfaces], [int(t) for t in open_tags])]
        dofs.append(self.offsets[1] + closed)
        return np.unique(np.concatenate(dofs)) if dofs else np.zeros(0, dtype=int)

    @property
    def dirichlet_dofs(self) -> np.ndarray:
        return self._fixed_dofs

    # -- system ---------------------------------------------------------------
    def matrix(self) -> sp.csr_matrix:
        p, dt = self.params, self.dt
        K = self.K
        if self.mode == "dynamic":
            beta = self.newmark[0]
            K = K + (self.rho_s / (beta * dt * dt)) * self.M_v
        alpha, S = self.alpha, p.inv_M
        Cpp = (S / dt) * self.M_p
        if self.L_p is not None:
            Cpp = Cpp + (self.stab_coef / dt) * self.L_p
        return sp.bmat([
            [K, None, -alpha * self.B_eta.T],
            [None, self.M_u / p.mobility, -self.B_u.T],
            [(alpha / dt) * self.B_eta, self.B_u, Cpp],
        ], format="csr")

    def load_vector(self, t: float) -> np.ndarray:
        """Boundary and body loads at time ``t`` (without history terms)."""
        mesh, p = self.mesh, self.params
        b = np.zeros(self.offsets[-1])
        for tag, load in self.bc.traction.items():
            faces = self._faces(tag)
            P = _value(load, t)
            b[:self.offsets[1]] += fem.boundary_traction_vector(
                self.V, faces, -P * mesh.face_normals[faces])
        for tag, load in self.bc.pressure.items():
            faces = self._faces(tag)
            # -int_F p_b w.n with w.n = 1 on its own face
            b[self.offsets[1] + faces] -= _value(load, t) * mesh.face_measures[faces]
        g = np.asarray(p.gravity) * p.rho_f_code
        if np.any(g):
            rule = fem.triangle_quadrature(1)
            phi = self.W.rt0_values(rule.points)[:, 0]  # (ne, 3, 2)
            loc = np.einsum("eid,d->ei", phi, g) * mesh.areas[:, None]
            np.add.at(b, self.offsets[1] + self.W.element_dofs, loc)
        return b

    def history_vector(self, state: PoroState) -> np.ndarray:
        p, dt = self.params, self.dt
        b = np.zeros(self.offsets[-1])
        o1, o2 = self.offsets[1], self.offsets[2]
        b[o2:] += (self.alpha / dt) * (self.B_eta @ state.eta) + (p.inv_M / dt) * (self.M_p @ state.p)
        if self.L_p is not None:
            b[o2:] += (self.stab_coef / dt) * (self.L_p @ state.p)
        if self.mode == "dynamic":
            beta = self.newmark[0]
            v = state.velocity if state.velocity is not None else np.zeros_like(state.eta)
            a = state.acceleration if state.acceleration is not None else np.zeros_like(state.eta)
            pred = (state.eta + dt * v) / (beta * dt * dt) + (0.5 - beta) / beta * a
            b[:o1] += self.rho_s * (self.M_v @ pred)
        return b

    def solve_system(self, rhs: np.ndarray) -> np.ndarray:
        n = self.offsets[-1]
        free = np.setdiff1d(np.arange(n), self._fixed_dofs)
        if self._factor is None:
            A = self.matrix()
            self._free = free
            self._factor = factorize(A[free][:, free])
        x = np.zeros(n)
        x[free] = self._factor.solve(rhs[free])
        return x

    def split(self, x):
        o = self.offsets
        return x[o[0]:o[1]], x[o[1]:o[2]], x[o[2]:o[3]]

    def step(self, state: PoroState, t_new: float | None = None) -> PoroState:
        """One backward Euler step from ``state`` to ``t_new`` (default ``t + dt``)."""
        t_new = state.t + self.dt if t_new is None else t_new
        x = self.solve_system(self.load_vector(t_new) + self.history_vector(state))
        eta, u, pp = self.split(x)
        vel = acc = None
        if self.mode == "dynamic":
            beta, gamma = self.newmark
            dt = self.dt
            v0 = state.velocity if state.velocity is not None else np.zeros_like(eta)
            a0 = state.acceleration if state.acceleration is not None else np.zeros_like(eta)
            acc = (eta - state.eta - dt * v0) / (beta * dt * dt) - (0.5 - beta) / beta * a0
            vel = v0 + dt * ((1 - gamma) * a0 + gamma * acc)
        return PoroState(eta, u, pp, t_new, vel, acc)

    def mass_balance_residual(self, new: PoroState, old: PoroState) -> np.ndarray:
        """Per-element mass balance written out from the fields (should vanish)."""
        p, dt, mesh = self.params, self.dt, self.mesh
        div_eta = (self.B_eta @ (new.eta - old.eta)) / mesh.areas
        flux = fem.rt0_divergence(fem.FieldVector(self.W, new.u)) * mesh.areas
        return (p.inv_M * (new.p - old.p) * mesh.areas / dt
                + self.alpha * div_eta * mesh.areas / dt + flux)


def _tpfa_laplacian(mesh: Mesh) -> sp.csr_matrix:
    inner = mesh.interior_faces
    L, R = mesh.face_elements[inner].T
    c = mesh.centroids
    d = np.linalg.norm(c[L] - c[R], axis=1)
    w = mesh.face_measures[inner] / d
    ne = mesh.n_elements
    rows = np.concatenate([L, R, L, R])
    cols = np.concatenate([L, R, R, L])
    vals = np.concatenate([w, w, -w, -w])
    return sp.coo_matrix((vals, (rows, cols)), shape=(ne, ne)).tocsr()


@dataclass(frozen=True)
class StressField:
    strain: np.ndarray        # (ne, 2, 2)
    sigma_e: np.ndarray       # (ne, 2, 2) effective stress, in-plane
    sigma_p: np.ndarray       # (ne, 2, 2) total poroelastic stress
    sigma_zz_e: np.ndarray    # out-of-plane effective stress (plane strain)
    von_mises: np.ndarray
    octahedral_shear_strain: np.ndarray


def strain_tensor(mesh: Mesh, eta: np.ndarray) -> np.ndarray:
    nv = mesh.n_vertices
    G = mesh.barycentric_gradients
    comps = np.stack([eta[:nv][mesh.elements], eta[nv:][mesh.elements]], axis=1)  # (ne, 2, 3)
    grad = np.einsum("eci,eid->ecd", comps, G)
    return 0.5 * (grad + grad.transpose(0, 2, 1))


def octahedral_shear_strain(strain: np.ndarray) -> np.ndarray:
    """Plane-strain octahedral shear strain of in-plane strain tensors (n, 2, 2)."""
    exx, eyy, exy = strain[:, 0, 0], strain[:, 1, 1], strain[:, 0, 1]
    ezz = np.zeros_like(exx)
    s = (exx - eyy) ** 2 + (eyy - ezz) ** 2 + (ezz - exx) ** 2 + 6 * exy ** 2
    return (2.0 / 3.0) * np.sqrt(s)


def compute_stress(mesh: Mesh, state: PoroState, params: MechParams) -> StressField:
    lam, mu = params.lame
    eps = strain_tensor(mesh, state.eta)
    tr = eps[:, 0, 0] + eps[:, 1, 1]
    I = np.eye(2)[None]
    sig_e = lam * tr[:, None, None] * I + 2 * mu * eps
    sig_p = sig_e - params.alpha_biot * state.p[:, None, None] * I
    szz = lam * tr
    sxx, syy, sxy = sig_e[:, 0, 0], sig_e[:, 1, 1], sig_e[:, 0, 1]
    vm = np.sqrt(0.5 * ((sxx - syy) ** 2 + (syy - szz) ** 2 + (szz - sxx) ** 2) + 3 * sxy ** 2)
    return StressField(eps, sig_e, sig_p, szz, vm, octahedral_shear_strain(eps))


def assemble_biot_system(mesh: Mesh, params: MechParams, dt: float,
                         mode: str = "quasi-static", **kw) -> BiotSolver:
    return BiotSolver(mesh, params, dt, mode=mode, **kw)


def step_poro(solver: BiotSolver, old: PoroState, t_new: float | None = None) -> PoroState:
    return solver.step(old, t_new)


def with_time(state: PoroState, t: float) -> PoroState:
    return replace(state, t=t)
