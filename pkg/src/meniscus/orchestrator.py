"""Run lifecycle: mechanics, stimulus and biology in a staggered time loop.

Per biology step ``i`` (time ``t_i = i dt``):

1. solve mechanics if the coupler says it is due; mechanics advances in
   uniform steps of ``n_mech dt`` and leads the biology, so the solve at
   step ``i`` reaches ``t_{i-1} + n_mech dt``,
2. turn the latest mechanics snapshot into rates,
3. take one Newton step of the cell system,
4. write the CSV row, snapshots and checkpoints.

``mechanics-only`` runs step 1 alone for ``n_steps`` steps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import gmsh
from .cells import SERIES_COLUMNS, CellSolver, CellState, NewtonError
from .config import Config, RunPlan, compile_expression
from .mesh import Mesh, Subdomain, structured_generator
from .output import SeriesWriter, key_value_text, read_series, write_vtk
from .poro import BiotSolver, PoroState, compute_stress, fallback_boundary, inflow_pressure
from .sparse import SolverError
from .stimulus import Coupler
from .stokes import CoupledSolver, CoupledState, StokesState

__all__ = ["RunPlan", "RunReport", "RunError", "RestoreError", "Simulation", "run",
           "build_mesh", "initial_cells", "BIO_COLUMNS", "MECH_COLUMNS"]

BIO_COLUMNS = SERIES_COLUMNS + ("occupancy", "mech_solves")
MECH_COLUMNS = ("step", "t", "p_in", "max_abs_pp", "max_abs_pf", "energy", "mismatch")


class RunError(RuntimeError):
    """A module failed inside the time loop; names the step and phase."""

    def __init__(self, step: int, phase: str, cause: Exception):
        super().__init__(f"step {step}, phase {phase}: {cause}")
        self.step, self.phase, self.cause = step, phase, cause


class RestoreError(ValueError):
    pass


def build_mesh(config: Config) -> Mesh:
    spec = config.mesh
    if spec.file:
        path = Path(spec.file)
        if not path.is_absolute():
            path = config.base_dir / path
        return gmsh.read_msh(path)
    return structured_generator(spec.nx, spec.ny, spec.geometry, ny_fluid=spec.ny_fluid,
                                length=spec.length, height=spec.height,
                                fluid_height=spec.fluid_height)


def initial_cells(mesh: Mesh, config: Config) -> CellState:
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    L, H = hi - lo
    fns = []
    for name in ("c1", "c2", "h", "k"):
        f = compile_expression(getattr(config.initial, name))
        fns.append(lambda x, f=f: f(x, L=L, H=H))
    return CellState.from_functions(mesh, *fns)


@dataclass
class RunReport:
    mode: str
    steps: int
    wall_time: float = 0.0
    newton_total: int = 0
    newton_max: int = 0
    conservation_drift: float = float("nan")
    min_c1: float = float("nan")
    min_c2: float = float("nan")
    final: dict = field(default_factory=dict)
    mech_solves: int = 0
    occupancy: float = 0.0
    outputs: list[str] = field(default_factory=list)

    @property
    def newton_mean(self) -> float:
        return self.newton_total / self.steps if self.steps else 0.0

    def as_dict(self) -> dict:
        out = {"mode": self.mode, "steps": self.steps, "wall_time_s": self.wall_time,
               "newton_total": self.newton_total, "newton_max": self.newton_max,
               "newton_mean": self.newton_mean, "conservation_drift": self.conservation_drift,
               "min_c1": self.min_c1, "min_c2": self.min_c2, "mech_solves": self.mech_solves,
               "occupancy": self.occupancy}
        out.update({f"final_{k}": v for k, v in self.final.items()})
        return out

    def to_text(self) -> str:
        return key_value_text(self.as_dict())


class Simulation:
    """One configured run; ``run(until=...)`` may be called repeatedly."""

    def __init__(self, config: Config, *, mesh: Mesh | None = None,
                 out_dir: str | Path | None = None, initial: CellState | None = None,
                 stimulus_field: np.ndarray | None = None):
        self.config = config
        self.plan: RunPlan = config.run
        self.mesh = mesh if mesh is not None else build_mesh(config)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        plan, mech = self.plan, config.mechanics
        mode = plan.mode
        dt_mech = plan.dt if mode == "mechanics-only" else plan.dt * max(plan.n_mech, 1)
        has_fluid = self.mesh.has_subdomain(Subdomain.FLUID)
        has_porous = self.mesh.has_subdomain(Subdomain.POROUS)

        self.coupled = None
        self.biot = None
        if mode == "coupled" or (mode == "mechanics-only" and has_fluid and has_porous):
            self.coupled = CoupledSolver(self.mesh, mech, config.interface, dt_mech)
            self.bio_mesh = self.coupled.porous_mesh
        else:
            self.bio_mesh = (self.mesh.submesh(Subdomain.POROUS)[0] if has_fluid
                             else self.mesh)
            if mode in ("fallback", "mechanics-only"):
                self.biot = BiotSolver(self.bio_mesh, mech, dt_mech,
                                       boundary=fallback_boundary(mech), mode=plan.mech_mode)

        stim = config.stimulus
        if mode == "biology-only":
            stim = replace(stim, mode="constant-rates")
        self.coupler = Coupler(self.bio_mesh, mech, stim,
                               n_mech=None if plan.n_mech == 0 else plan.n_mech)
        if stimulus_field is not None:
            self.coupler.set_stimulus(stimulus_field)

        self.cells = CellSolver(self.bio_mesh, config.biology, plan.dt,
                                linear=config.solver.linear(), tol=config.solver.newton_tol,
                                max_it=config.solver.newton_max_it)
        self.cell_state = initial if initial is not None else initial_cells(self.bio_mesh, config)
        self.mech_state = self._zero_mech()
        self.mech_solves = 0
        self.step = 0
        ints = self.cells.integrals(self.cell_state)
        self.initial_total = ints["int_c1"] + ints["int_c2"]
        self.report = RunReport(mode, 0)

    # -- mechanics --------------------------------------------------------
    def _zero_mech(self):
        if self.coupled is not None:
            return self.coupled.zeros()
        if self.biot is not None:
            return PoroState.zeros(self.bio_mesh, dynamic=self.biot.mode == "dynamic")
        return None

    @property
    def poro_state(self) -> PoroState | None:
        if isinstance(self.mech_state, CoupledState):
            return self.mech_state.poro
        return self.mech_state

    def solve_mechanics(self, t: float | None = None):
        """Advance mechanics to ``t`` (default: one mechanics step); returns the old state."""
        old = self.mech_state
        if self.coupled is not None:
            self.mech_state = self.coupled.step(old, t)
        else:
            self.mech_state = self.biot.step(old, t)
        self.mech_solves += 1
        return old

    # -- outputs ----------------------------------------------------------
    def _path(self, name: str) -> Path | None:
        return None if self.out_dir is None else self.out_dir / name

    def _snapshot(self, step: int, rates) -> None:
        if self.out_dir is None:
            return
        cs = self.cell_state
        cell_data = {"alpha1": rates.alpha1, "alpha2": rates.alpha2}
        if self.coupler.S is not None:
            cell_data["S"] = self.coupler.S
        path = write_vtk(self.bio_mesh, self._path(f"cells_{step:05d}.vtk"),
                         point_data={"h": cs.h, "k": cs.k},
                         cell_data=cell_data, dg_data={"c1": cs.c1, "c2": cs.c2})
        self.report.outputs.append(path.name)
        if self.mech_solves:
            self._mech_snapshot(step)

    def _mech_snapshot(self, step: int) -> None:
        mech = self.config.mechanics
        ps = self.poro_state
        nv = self.bio_mesh.n_vertices
        stress = compute_stress(self.bio_mesh, ps, mech)
        path = write_vtk(self.bio_mesh, self._path(f"poro_{step:05d}.vtk"),
                         point_data={"eta": np.column_stack([ps.eta[:nv], ps.eta[nv:]])},
                         cell_data={"p_p": ps.p, "seepage": ps.seepage(self.bio_mesh, mech.Phi),
                                    "von_mises": stress.von_mises,
                                    "gamma_oct": stress.octahedral_shear_strain})
        self.report.outputs.append(path.name)
        if isinstance(self.mech_state, CoupledState):
            fm = self.coupled.fluid_mesh
            fs: StokesState = self.mech_state.fluid
            path = write_vtk(fm, self._path(f"fluid_{step:05d}.vtk"),
                             point_data={"u_f": fs.vertex_velocity(fm), "p_f": fs.p})
            self.report.outputs.append(path.name)

    # -- checkpoints ------------------------------------------------------
    def checkpoint(self, path: str | Path) -> Path:
        cs = self.cell_state
        arrays = {"c1": cs.c1, "c2": cs.c2, "h": cs.h, "k": cs.k, "t": np.float64(cs.t),
                  "step": np.int64(self.step), "mech_solves": np.int64(self.mech_solves),
                  "initial_total": np.float64(self.initial_total),
                  "config": np.array(self.config.digest()),
                  "mesh": np.array(self.mesh.fingerprint())}
        if self.coupler.S is not None:
            arrays["S"] = self.coupler.S
        ms = self.mech_state
        if isinstance(ms, CoupledState):
            arrays.update(fluid_u=ms.fluid.u, fluid_p=ms.fluid.p, mech_t=np.float64(ms.t))
            ms = ms.poro
        if ms is not None:
            arrays.update(eta=ms.eta, u_p=ms.u, p_p=ms.p, poro_t=np.float64(ms.t))
            if ms.velocity is not None:
                arrays.update(eta_v=ms.velocity, eta_a=ms.acceleration)
        path = Path(path)
        with path.open("wb") as fh:
            np.savez(fh, **arrays)
        return path

    def restore(self, path: str | Path) -> None:
        with np.load(path) as data:
            if str(data["mesh"]) != self.mesh.fingerprint():
                raise RestoreError("checkpoint was written for a different mesh")
            if str(data["config"]) != self.config.digest():
                raise RestoreError("checkpoint was written with a different configuration")
            self.cell_state = CellState(data["c1"], data["c2"], data["h"], data["k"],
                                        float(data["t"]))
            self.step = int(data["step"])
            self.mech_solves = int(data["mech_solves"])
            self.initial_total = float(data["initial_total"])
            if "S" in data:
                self.coupler.S = data["S"].copy()
            if "eta" in data:
                extra = ((data["eta_v"], data["eta_a"]) if "eta_v" in data else (None, None))
                poro = PoroState(data["eta"], data["u_p"], data["p_p"], float(data["poro_t"]),
                                 *extra)
                if self.coupled is not None:
                    fluid = StokesState(data["fluid_u"], data["fluid_p"], float(data["mech_t"]))
                    self.mech_state = CoupledState(fluid, poro)
                else:
                    self.mech_state = poro

    # -- main loop --------------------------------------------------------
    def run(self, observers: Iterable[Callable] = (), *, until: int | None = None) -> RunReport:
        plan = self.plan
        until = plan.n_steps if until is None else min(until, plan.n_steps)
        start = time.perf_counter()
        if plan.mode == "mechanics-only":
            self._run_mechanics(until)
        else:
            self._run_biology(until, list(observers))
        self.report.wall_time += time.perf_counter() - start
        self._finish()
        return self.report

    def _run_mechanics(self, until: int) -> None:
        append = self.step > 0
        writer = (SeriesWriter(self._path("mechanics.csv"), MECH_COLUMNS, append=append)
                  if self.out_dir is not None else None)
        try:
            while self.step < until:
                self.step += 1
                t = self.step * self.plan.dt
                try:
                    old = self.solve_mechanics(t)
                except (SolverError, ValueError, np.linalg.LinAlgError) as exc:
                    raise RunError(self.step, "mechanics", exc) from exc
                row = self._mech_row(old, t)
                if writer:
                    writer.write(row)
                self.report.steps += 1
                if self.out_dir is not None and (self.step % self.plan.output_stride == 0
                                                 or self.step == until):
                    self._mech_snapshot(self.step)
        finally:
            if writer:
                writer.close()

    def _mech_row(self, old, t) -> dict:
        pf = mismatch = energy = 0.0
        if self.coupled is not None:
            pf = float(np.abs(self.mech_state.fluid.p).max())
            mismatch = self.coupled.interface_mismatch(self.mech_state, old)
            energy = self.coupled.energy(self.mech_state)
        else:
            ps = self.mech_state
            energy = float(0.5 * ps.eta @ (self.biot.K @ ps.eta)
                           + 0.5 * self.config.mechanics.inv_M * ps.p @ (self.biot.M_p @ ps.p))
        return {"step": self.step, "t": t, "p_in": inflow_pressure(self.config.mechanics, t),
                "max_abs_pp": float(np.abs(self.poro_state.p).max()), "max_abs_pf": pf,
                "energy": energy, "mismatch": mismatch}

    def _run_biology(self, until: int, observers: list) -> None:
        plan = self.plan
        append = self.step > 0
        writer = (SeriesWriter(self._path("series.csv"), BIO_COLUMNS, append=append)
                  if self.out_dir is not None else None)
        has_mech = self.coupled is not None or self.biot is not None
        try:
            while self.step < until:
                step = self.step + 1
                t = step * plan.dt
                if has_mech and self.coupler.wants_mechanics(step):
                    try:
                        self.solve_mechanics()
                        self.coupler.update(self.poro_state)
                    except (SolverError, ValueError, np.linalg.LinAlgError) as exc:
                        raise RunError(step, "mechanics", exc) from exc
                try:
                    rates = self.coupler.rates()
                except Exception as exc:
                    raise RunError(step, "stimulus", exc) from exc
                try:
                    self.cell_state, its = self.cells.step(self.cell_state, rates)
                except (NewtonError, SolverError, ValueError) as exc:
                    raise RunError(step, "biology", exc) from exc
                self.step = step
                ints = self.cells.integrals(self.cell_state)
                row = {"step": step, "t": self.cell_state.t, **ints, "newton_its": its,
                       "occupancy": self.coupler.occupancy(), "mech_solves": self.mech_solves}
                if writer:
                    writer.write(row)
                rep = self.report
                rep.steps += 1
                rep.newton_total += its
                rep.newton_max = max(rep.newton_max, its)
                for obs in observers:
                    obs(step, self.cell_state, row)
                if step % plan.output_stride == 0 or step == until:
                    self._snapshot(step, rates)
                if (plan.checkpoint_stride and step % plan.checkpoint_stride == 0
                        and self.out_dir is not None):
                    self.checkpoint(self._path(f"checkpoint_{step:05d}.npz"))
        finally:
            if writer:
                writer.close()

    def _finish(self) -> None:
        rep = self.report
        if self.plan.mode != "mechanics-only":
            ints = self.cells.integrals(self.cell_state)
            total = ints["int_c1"] + ints["int_c2"]
            rep.conservation_drift = (abs(total - self.initial_total) / self.initial_total
                                      if self.initial_total else abs(total))
            rep.min_c1, rep.min_c2 = ints["min_c1"], ints["min_c2"]
            rep.final = {k: ints[k] for k in ("int_c1", "int_c2", "int_h", "int_k")}
            rep.occupancy = self.coupler.occupancy()
        rep.mech_solves = self.mech_solves
        if self.out_dir is None:
            return
        (self.out_dir / "report.txt").write_text(rep.to_text())
        from .plotting import field_figure, series_figure
        if self.plan.mode == "mechanics-only":
            header, data = read_series(self.out_dir / "mechanics.csv")
            series_figure(header, data, self.out_dir / "mechanics.png",
                          groups=[["p_in", "max_abs_pp", "max_abs_pf"], ["energy"], ["mismatch"]])
        else:
            header, data = read_series(self.out_dir / "series.csv")
            series_figure(header, data, self.out_dir / "series.png",
                          groups=[["int_c1", "int_c2"], ["int_h", "int_k"],
                                  ["min_c1", "min_c2"], ["occupancy"]])
            c2 = self.cell_state.c2.reshape(-1, 3).mean(axis=1)
            field_figure(self.bio_mesh, c2, self.out_dir / "c2_final.png", title="c2 (cell mean)")
            if self.coupler.S is not None:
                field_figure(self.bio_mesh, self.coupler.S, self.out_dir / "stimulus.png",
                             title="stimulus S")


def run(config: Config, out_dir: str | Path | None = None, *, mesh: Mesh | None = None,
        restore: str | Path | None = None, observers: Iterable[Callable] = (),
        **kw) -> RunReport:
    sim = Simulation(config, mesh=mesh, out_dir=out_dir, **kw)
    if restore is not None:
        sim.restore(restore)
    return sim.run(observers)
