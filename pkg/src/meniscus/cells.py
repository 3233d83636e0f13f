"""Cell-population solver: NIP dG in space, implicit Euler and Newton in time.

Unknowns are ordered ``[c1, c2, h, k]``: ADSC and chondrocyte densities
as dG-P1 coefficient vectors (3 per element), hyaluron and cartilage as P1
nodal vectors. The h and k equations are pointwise ODEs on the P1 nodes
(lumped mass) driven by the lumped L2 projection of the dG densities.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from . import fem
from .mesh import Mesh
from .sparse import LinearSolverConfig, scatter, solve

log = logging.getLogger(__name__)


class NewtonError(RuntimeError):
    def __init__(self, message: str, history: Sequence[float]):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class BiologyParams:
    """Dimensionless constants of the cell model; defaults are the published reference values."""

    a1: float = 0.015
    b1: float = 0.005
    b2: float = 0.001
    beta: float = 0.5
    gamma1: float = 0.01
    delta1: float = 0.01
    penalty: float = 4.0

    def __post_init__(self):
        for name in ("a1", "penalty"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("b1", "b2", "beta", "gamma1", "delta1"):
            v = getattr(self, name)
            if not (v >= 0 and np.isfinite(v)):
                raise ValueError(f"{name} must be >= 0, got {v}")


@dataclass(frozen=True)
class CellState:
    c1: np.ndarray
    c2: np.ndarray
    h: np.ndarray
    k: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("time must be >= 0")
        if len(self.c1) != len(self.c2) or len(self.h) != len(self.k):
            raise ValueError("field lengths do not match")

    def vector(self) -> np.ndarray:
        return np.concatenate([self.c1, self.c2, self.h, self.k])

    @classmethod
    def from_vector(cls, u: np.ndarray, n_dg: int, t: float) -> "CellState":
        nv = (len(u) - 2 * n_dg) // 2
        return cls(u[:n_dg].copy(), u[n_dg:2 * n_dg].copy(),
                   u[2 * n_dg:2 * n_dg + nv].copy(), u[2 * n_dg + nv:].copy(), t)

    @classmethod
    def zeros(cls, mesh: Mesh) -> "CellState":
        n = 3 * mesh.n_elements
        return cls(np.zeros(n), np.zeros(n), np.zeros(mesh.n_vertices), np.zeros(mesh.n_vertices))

    @classmethod
    def from_functions(cls, mesh: Mesh, c1, c2, h, k, t: float = 0.0) -> "CellState":
        """Nodal interpolation of callables ``f(points) -> values``."""
        dg = fem.FunctionSpace("dG-P1", mesh)
        p1 = fem.FunctionSpace("P1", mesh)
        return cls(fem.interpolate(c1, dg).coeffs, fem.interpolate(c2, dg).coeffs,
                   fem.interpolate(h, p1).coeffs, fem.interpolate(k, p1).coeffs, t)


@dataclass(frozen=True)
class RateField:
    """Element-wise constant differentiation rates."""

    alpha1: np.ndarray
    alpha2: np.ndarray

    @classmethod
    def constant(cls, n_elements: int, alpha1: float, alpha2: float | None = None) -> "RateField":
        alpha2 = alpha1 if alpha2 is None else alpha2
        return cls(np.full(n_elements, float(alpha1)), np.full(n_elements, float(alpha2)))


@dataclass(frozen=True)
class CellSources:
    """Extra right-hand sides ``f(points, t)`` for manufactured solutions."""

    c1: Callable | None = None
    c2: Callable | None = None
    h: Callable | None = None
    k: Callable | None = None


def taxis_velocity(mesh: Mesh, h: np.ndarray, k: np.ndarray, b1: float, b2: float):
    """``v = b1 grad h + b2 grad k`` per element, and its face average.

    Returns ``(element_velocity (ne, 2), face_velocity (nf, 2))``.
    """
    G = mesh.barycentric_gradients
    pot = b1 * np.asarray(h)[mesh.elements] + b2 * np.asarray(k)[mesh.elements]
    v = np.einsum("ei,eid->ed", pot, G)
    return v, fem.face_velocity(mesh, v)


class CellSolver:
    """Residual, Jacobian and Newton step for one mesh and time step."""

    def __init__(self, mesh: Mesh, params: BiologyParams, dt: float, *,
                 linear: LinearSolverConfig | None = None, tol: float = 1e-10,
                 max_it: int = 25, sources: CellSources | None = None):
        if not dt > 0:
            raise ValueError("dt must be > 0")
        if not tol > 0:
            raise ValueError("Newton tolerance must be > 0")
        self.mesh = mesh
        self.params = params
        self.dt = float(dt)
        self.linear = linear or LinearSolverConfig()
        self.tol = tol
        self.max_it = max_it
        self.sources = sources

        ne, nv = mesh.n_elements, mesh.n_vertices
        self.n_dg = 3 * ne
        self.nv = nv
        self.dofs = np.arange(self.n_dg).reshape(ne, 3)
        self.dg = fem.FunctionSpace("dG-P1", mesh)
        self.mass = fem.assemble_bilinear("mass", self.dg)
        a_max = max(params.a1, 1.0)
        self.diff1 = fem.nip_diffusion(mesh, params.a1, params.penalty * a_max)
        self.diff2 = fem.nip_diffusion(mesh, 1.0, params.penalty * a_max)

        # lumped projection: chat = B c / m,  B_ij = int c_j phi_i
        areas = mesh.areas
        loc = (areas[:, None, None] / 12.0) * (np.eye(3) + 1.0)[None]
        self.B = scatter(mesh.elements, self.dofs, loc, (nv, self.n_dg))
        self.lumped = np.zeros(nv)
        np.add.at(self.lumped, mesh.elements, np.repeat(areas[:, None] / 3.0, 3, axis=1))

        rule = fem.triangle_quadrature(4)
        self._lam = rule.points  # (nq, 3)
        self._w = 2.0 * areas[:, None] * rule.weights[None, :]  # (ne, nq)

    # -- helpers ------------------------------------------------------------
    def split(self, u):
        n, nv = self.n_dg, self.nv
        return u[:n], u[n:2 * n], u[2 * n:2 * n + nv], u[2 * n + nv:]

    def _weighted_mass(self, coef):
        loc = (self.mesh.areas * coef)[:, None, None] / 12.0 * (np.eye(3) + 1.0)[None]
        return scatter(self.dofs, self.dofs, loc, (self.n_dg, self.n_dg))

    def _at_quad(self, c_dg, k_p1):
        c = np.asarray(c_dg)[self.dofs] @ self._lam.T  # (ne, nq)
        kk = np.asarray(k_p1)[self.mesh.elements] @ self._lam.T
        return c, kk

    def _taxis_operator(self, h, k):
        p = self.params
        v, _ = taxis_velocity(self.mesh, h, k, p.b1, p.b2)
        return fem.upwind_advection(self.mesh, v), v

    def _taxis_potential_derivative(self, c1, v):
        """d(T(grad phi) c1)/d phi at fixed upwind directions: (n_dg, nv)."""
        mesh = self.mesh
        G = mesh.barycentric_gradients
        cbar = np.asarray(c1)[self.dofs].mean(axis=1)
        vol = -(mesh.areas * cbar)[:, None, None] * np.einsum("eid,eld->eil", G, G)
        mats = [scatter(self.dofs, mesh.elements, vol, (self.n_dg, self.nv))]

        inner, L, R, phiL, phiR, wq = fem.dg_face_data(mesh)
        nrm = mesh.face_normals[inner]
        vn = np.einsum("fd,fd->f", fem.face_velocity(mesh, v)[inner], nrm)
        wL = np.where(vn > 0, 1.0, np.where(vn < 0, 0.0, 0.5))
        cL = np.einsum("fqi,fi->fq", phiL, np.asarray(c1)[self.dofs[L]])
        cR = np.einsum("fqi,fi->fq", phiR, np.asarray(c1)[self.dofs[R]])
        cup = wL[:, None] * cL + (1.0 - wL)[:, None] * cR
        for E1, ph1, s1 in ((L, phiL, 1.0), (R, phiR, -1.0)):
            integ = s1 * np.einsum("fqi,fq,fq->fi", ph1, cup, wq)  # (n, 3)
            for E3 in (L, R):
                dvn = 0.5 * np.einsum("fld,fd->fl", G[E3], nrm)  # (n, 3)
                loc = integ[:, :, None] * dvn[:, None, :]
                mats.append(scatter(self.dofs[E1], mesh.elements[E3], loc, (self.n_dg, self.nv)))
        return sum(mats[1:], mats[0]).tocsr()

    def _source_vectors(self, t):
        src = self.sources
        out = [np.zeros(self.n_dg), np.zeros(self.n_dg), np.zeros(self.nv), np.zeros(self.nv)]
        if src is None:
            return out
        rule = fem.triangle_quadrature(5)
        pts = fem.physical_points(self.mesh, rule.points)
        w = 2.0 * self.mesh.areas[:, None] * rule.weights[None, :]
        for i, f in enumerate((src.c1, src.c2)):
            if f is not None:
                vals = np.asarray(f(pts.reshape(-1, 2), t)).reshape(pts.shape[:2])
                out[i] = np.einsum("eq,qi,eq->ei", vals, rule.points, w).ravel()
        for i, f in ((2, src.h), (3, src.k)):
            if f is not None:
                out[i] = self.lumped * np.asarray(f(self.mesh.vertices, t))
        return out

    # -- residual and Jacobian ------------------------------------------------
    def residual(self, u: np.ndarray, u_old: np.ndarray, rates: RateField, t_new: float) -> np.ndarray:
        p, dt = self.params, self.dt
        c1, c2, h, k = self.split(u)
        c1o, c2o, ho, ko = self.split(u_old)
        a1m = self._weighted_mass(rates.alpha1)
        a2m = self._weighted_mass(rates.alpha2)
        T, _ = self._taxis_operator(h, k)
        cq1, kq = self._at_quad(c1, k)
        cq2, _ = self._at_quad(c2, k)
        growth = -p.beta * cq1 * (1.0 - cq1 - cq2 - kq)
        r_growth = np.einsum("eq,qi->ei", growth * self._w, self._lam).ravel()
        exchange = a1m @ c1 - a2m @ c2
        f1, f2, fh, fk = self._source_vectors(t_new)

        r1 = self.mass @ (c1 - c1o) / dt + self.diff1 @ c1 + T @ c1 + exchange + r_growth - f1
        r2 = self.mass @ (c2 - c2o) / dt + self.diff2 @ c2 - exchange - f2
        m = self.lumped
        ch1 = self.B @ c1 / m
        ch2 = self.B @ c2 / m
        rh = m * ((h - ho) / dt + p.gamma1 * h * ch2 - ch2 / (1.0 + ch2)) - fh
        rk = m * ((k - ko) / dt + p.delta1 * k * ch1 - ch2) - fk
        return np.concatenate([r1, r2, rh, rk])

    def jacobian(self, u: np.ndarray, rates: RateField) -> sp.csr_matrix:
        p, dt = self.params, self.dt
        c1, c2, h, k = self.split(u)
        a1m = self._weighted_mass(rates.alpha1)
        a2m = self._weighted_mass(rates.alpha2)
        T, v = self._taxis_operator(h, k)
        cq1, kq = self._at_quad(c1, k)
        cq2, _ = self._at_quad(c2, k)
        lam = self._lam

        def local(deriv):
            return np.einsum("eq,qi,qj->eij", deriv * self._w, lam, lam)

        n, nv = self.n_dg, self.nv
        d11 = scatter(self.dofs, self.dofs, local(-p.beta * (1 - 2 * cq1 - cq2 - kq)), (n, n))
        d12 = scatter(self.dofs, self.dofs, local(p.beta * cq1), (n, n))
        d14 = scatter(self.dofs, self.mesh.elements, local(p.beta * cq1), (n, nv))
        D = self._taxis_potential_derivative(c1, v)

        J11 = self.mass / dt + self.diff1 + T + a1m + d11
        J12 = -a2m + d12
        J13 = p.b1 * D
        J14 = p.b2 * D + d14
        J21 = -a1m
        J22 = self.mass / dt + self.diff2 + a2m

        m = self.lumped
        ch1 = self.B @ c1 / m
        ch2 = self.B @ c2 / m
        Jh2 = sp.diags(p.gamma1 * h - 1.0 / (1.0 + ch2) ** 2) @ self.B
        Jh3 = sp.diags(m * (1.0 / dt + p.gamma1 * ch2))
        Jk1 = sp.diags(p.delta1 * k) @ self.B
        Jk2 = -self.B
        Jk4 = sp.diags(m * (1.0 / dt + p.delta1 * ch1))
        return sp.bmat([
            [J11, J12, J13, J14],
            [J21, J22, None, None],
            [None, Jh2, Jh3, None],
            [Jk1, Jk2, None, Jk4],
        ], format="csr")

    # -- Newton ---------------------------------------------------------------
    def step(self, old: CellState, rates: RateField) -> tuple[CellState, int]:
        """One implicit Euler step; returns the new state and Newton iteration count."""
        if len(rates.alpha1) != self.mesh.n_elements:
            raise ValueError("rate field does not match the mesh")
        u_old = old.vector()
        if len(u_old) != 2 * self.n_dg + 2 * self.nv:
            raise ValueError("state does not match the mesh")
        t_new = old.t + self.dt
        u = u_old.copy()
        r = self.residual(u, u_old, rates, t_new)
        r0 = float(np.linalg.norm(r))
        target = self.tol * max(1.0, r0)
        history = [r0]
        for it in range(1, self.max_it + 1):
            du = solve(self.jacobian(u, rates), -r, self.linear)
            u += du
            r = self.residual(u, u_old, rates, t_new)
            history.append(float(np.linalg.norm(r)))
            if history[-1] <= target:
                return CellState.from_vector(u, self.n_dg, t_new), it
        raise NewtonError(
            f"Newton did not converge in {self.max_it} iterations at t={t_new:g} "
            f"(residual history {', '.join(f'{x:.2e}' for x in history)})", history)

    # -- diagnostics ------------------------------------------------------------
    def integrals(self, state: CellState) -> dict[str, float]:
        areas = self.mesh.areas
        return {
            "int_c1": float(areas @ state.c1[self.dofs].mean(axis=1)),
            "int_c2": float(areas @ state.c2[self.dofs].mean(axis=1)),
            "int_h": float(self.lumped @ state.h),
            "int_k": float(self.lumped @ state.k),
            "min_c1": float(state.c1.min()),
            "min_c2": float(state.c2.min()),
        }


def residual(mesh: Mesh, new: CellState, old: CellState, rates: RateField,
             params: BiologyParams, dt: float) -> np.ndarray:
    return CellSolver(mesh, params, dt).residual(new.vector(), old.vector(), rates, new.t)


def newton_step_cells(mesh: Mesh, old: CellState, rates: RateField, params: BiologyParams,
                      dt: float, tol: float = 1e-10, max_it: int = 25) -> CellState:
    solver = CellSolver(mesh, params, dt, tol=tol, max_it=max_it)
    return solver.step(old, rates)[0]


SERIES_COLUMNS = ("step", "t", "int_c1", "int_c2", "int_h", "int_k", "min_c1", "min_c2",
                  "newton_its")


@dataclass
class TrajectorySummary:
    final: CellState
    rows: list[dict] = field(default_factory=list)
    newton_iterations: list[int] = field(default_factory=list)


def run_cells(mesh: Mesh, initial: CellState,
              rates: RateField | Callable[[int, float, CellState], RateField],
              params: BiologyParams, dt: float, n_steps: int,
              observers: Iterable[Callable[[int, CellState, dict], None]] = (),
              stride: int = 1, solver: CellSolver | None = None) -> TrajectorySummary:
    """Advance ``n_steps`` implicit Euler steps.

    Every observer receives ``(step, state, row)`` on steps divisible by
    ``stride`` and on the last step; ``row`` carries the per-step CSV values.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    solver = solver or CellSolver(mesh, params, dt)
    provider = rates if callable(rates) else (lambda step, t, state: rates)
    observers = list(observers)
    summary = TrajectorySummary(final=initial)
    state = initial
    for step in range(1, n_steps + 1):
        state, its = solver.step(state, provider(step, state.t, state))
        row = {"step": step, "t": state.t, **solver.integrals(state), "newton_its": its}
        summary.rows.append(row)
        summary.newton_iterations.append(its)
        if step % stride == 0 or step == n_steps:
            for obs in observers:
                obs(step, state, row)
    summary.final = state
    return summary


def with_time(state: CellState, t: float) -> CellState:
    return replace(state, t=t)
