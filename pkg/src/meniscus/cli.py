"""Command-line entry point: ``meniscus <subcommand> [options]``.

Exit codes: 0 success, 1 invalid input or usage, 2 solver failure.
"""

from __future__ import annotations

import argparse
import platform
import sys
from contextlib import nullcontext
from pathlib import Path

from . import __version__

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _version_text() -> str:
    import numpy
    import scipy
    return (f"meniscus {__version__} (python {platform.python_version()}, "
            f"numpy {numpy.__version__}, scipy {scipy.__version__}, {platform.machine()})")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="meniscus", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=_version_text())
    p.add_argument("--threads", type=int, default=None,
                   help="cap the worker threads of the linear algebra backend")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def run_opts(sp, modes, default_out):
        sp.add_argument("--config", type=Path, help="TOML file (default: shipped defaults)")
        sp.add_argument("--out", type=Path, default=Path(default_out))
        sp.add_argument("--steps", type=int, help="override run.n_steps")
        sp.add_argument("--dt", type=float, help="override run.dt")
        if modes:
            sp.add_argument("--mode", choices=modes, help="override run.mode")
        sp.add_argument("--restore", type=Path, help="resume from a checkpoint file")

    run_opts(sub.add_parser("run-cells", help="cell densities, optionally with mechanics"),
             ["biology-only", "fallback", "coupled"], "out/cells")
    run_opts(sub.add_parser("run-poro", help="mechanics only (porous or coupled)"), None,
             "out/poro")
    run_opts(sub.add_parser("run-coupled", help="mechanics driving the cell system"),
             ["coupled", "fallback"], "out/coupled")

    sp = sub.add_parser("mms", help="manufactured-solution convergence of the cell solver")
    sp.add_argument("--levels", type=int, default=3)
    sp.add_argument("--variant", default="diffusion-reaction",
                    choices=["diffusion", "diffusion-reaction", "taxis", "all"])
    sp.add_argument("--out", type=Path)

    sp = sub.add_parser("terzaghi", help="consolidation benchmark of the Biot solver")
    sp.add_argument("--levels", type=int, default=3)
    sp.add_argument("--out", type=Path)

    sp = sub.add_parser("check-config", help="validate a configuration file")
    sp.add_argument("config", type=Path)
    sp.add_argument("--print", action="store_true", help="print the normalized file")

    sp = sub.add_parser("mesh-info", help="summarize the mesh of a config or a Gmsh file")
    sp.add_argument("source", type=Path, nargs="?", help="config (.toml) or mesh (.msh)")
    return p


def _load(args):
    from .config import default_config, load_config
    cfg = load_config(args.config) if args.config else default_config()
    overrides = {}
    if getattr(args, "steps", None) is not None:
        overrides["n_steps"] = args.steps
    if getattr(args, "dt", None) is not None:
        overrides["dt"] = args.dt
    return cfg.override("run", **overrides) if overrides else cfg


def _run(args, mode_default) -> int:
    from .orchestrator import run
    cfg = _load(args)
    mode = getattr(args, "mode", None) or mode_default(cfg.run.mode)
    cfg = cfg.override("run", mode=mode)
    report = run(cfg, args.out, restore=args.restore)
    print(report.to_text(), end="")
    print(f"outputs: {args.out}")
    return EXIT_OK


def _report_out(report, out: Path | None, stem: str) -> None:
    print(report.table())
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.csv").write_text(report.table() + "\n")
    from .plotting import convergence_figure
    convergence_figure(report, out / f"{stem}.png")


def _mms(args) -> int:
    from .verification import mms_cells
    variants = (["diffusion", "diffusion-reaction", "taxis"] if args.variant == "all"
                else [args.variant])
    ok = True
    for v in variants:
        report = mms_cells(args.levels, v)
        _report_out(report, args.out, f"mms_{v}")
        ok &= report.passed
    return EXIT_OK if ok else EXIT_SOLVER


def _terzaghi(args) -> int:
    from .verification import terzaghi, terzaghi_figure
    report = terzaghi(args.levels)
    _report_out(report, args.out, "terzaghi")
    deg = report.extra["degree"][-1]
    print(f"degree of consolidation at T_v = {report.extra['T_v']}: {deg:.4f} "
          f"(series {report.extra['degree_exact']:.4f})")
    if args.out is not None:
        terzaghi_figure(args.out / "terzaghi_profiles.png")
    return EXIT_OK if report.passed else EXIT_SOLVER


def _check_config(args) -> int:
    from .config import dumps, load_config
    cfg = load_config(args.config)
    if args.print:
        print(dumps(cfg), end="")
    else:
        print(f"{args.config}: ok")
    return EXIT_OK


def _mesh_info(args) -> int:
    from .config import default_config, load_config
    from .gmsh import read_msh
    from .mesh import BoundaryTag, Subdomain
    from .orchestrator import build_mesh
    src = args.source
    if src is not None and src.suffix == ".msh":
        mesh = read_msh(src)
    else:
        mesh = build_mesh(load_config(src) if src else default_config())
    print(f"vertices: {mesh.n_vertices}")
    print(f"elements: {mesh.n_elements}")
    print(f"faces: {mesh.n_faces} ({len(mesh.boundary_faces)} boundary)")
    for label in Subdomain:
        n = int((mesh.subdomains == label).sum())
        if n:
            print(f"subdomain {label.name.lower()}: {n} elements")
    for tag in BoundaryTag:
        n = len(mesh.faces_with_tag(tag))
        if n:
            print(f"tag {tag.name}: {n} faces, length {mesh.tag_measure(tag):.6g}")
    print(f"max face diameter: {mesh.max_face_diameter():.6g}")
    print(f"fingerprint: {mesh.fingerprint()}")
    return EXIT_OK


def _dispatch(args) -> int:
    if args.command == "run-cells":
        return _run(args, lambda m: m if m != "mechanics-only" else "biology-only")
    if args.command == "run-poro":
        return _run(args, lambda m: "mechanics-only")
    if args.command == "run-coupled":
        return _run(args, lambda m: m if m in ("coupled", "fallback") else "coupled")
    if args.command == "mms":
        return _mms(args)
    if args.command == "terzaghi":
        return _terzaghi(args)
    if args.command == "check-config":
        return _check_config(args)
    return _mesh_info(args)


def main(argv=None) -> int:
    from .cells import NewtonError
    from .config import ConfigError
    from .mesh import MeshError
    from .orchestrator import RestoreError, RunError
    from .sparse import SolverError

    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.threads is not None and args.threads < 1:
        print("meniscus: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    if args.threads is not None:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(limits=args.threads)
    else:
        limiter = nullcontext()
    try:
        with limiter:
            return _dispatch(args)
    except (ConfigError, MeshError, RestoreError, FileNotFoundError) as exc:
        print(f"meniscus: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RunError as exc:
        print(f"meniscus: error: {exc}", file=sys.stderr)
        if isinstance(exc.cause, (SolverError, NewtonError)):
            return EXIT_SOLVER
        return EXIT_INPUT if isinstance(exc.cause, ValueError) else EXIT_SOLVER
    except (SolverError, NewtonError) as exc:
        print(f"meniscus: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"meniscus: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
