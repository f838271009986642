"""
Command line interface.

    phasecap run CONFIG            optimize, write VTK snapshots, history and figures
    phasecap mesh-only CONFIG      build and validate the mesh, write mesh.vtk
    phasecap check-gradient CONFIG adjoint vs finite-difference directional derivatives
    phasecap equilibrium-test CONFIG  zero-potential equilibrium solve

Exit codes: 0 success, 1 usage, 2 configuration, 3 solver failure,
4 check completed but out of tolerance. Diagnostics go to stderr; results
are printed to stdout as tab-separated ``key<TAB>value`` lines.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from .checks import FD_STEPS, equilibrium_check, gradient_check
from .config import ConfigError, RunConfig, load_config
from .export import write_history_csv, write_vtk_snapshot
from .fem import SolverError, lumped_mass
from .materials import double_well
from .mesh import validate_mesh
from .optimizer import initial_phase_field, run_optimization

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3, 4

log = logging.getLogger("phasecap")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="phasecap", description="Phase-field electrode optimization.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run the optimization")
    run.add_argument("config")
    run.add_argument("-o", "--output-dir", help="override run.output_dir")
    run.add_argument("--no-figures", action="store_true", help="skip PNG figures")

    mesh = sub.add_parser("mesh-only", help="generate and validate the mesh")
    mesh.add_argument("config")
    mesh.add_argument("-o", "--output-dir")

    grad = sub.add_parser("check-gradient", help="adjoint vs finite differences")
    grad.add_argument("config")
    grad.add_argument("--adjoint", choices=("discrete", "galerkin"),
                      help="sensitivity route (default: optim.adjoint)")

    eq = sub.add_parser("equilibrium-test", help="zero-potential equilibrium case")
    eq.add_argument("config")
    return p


def _emit(key, value):
    if isinstance(value, float):
        value = f"{value:.10g}"
    print(f"{key}\t{value}")


def _output_dir(cfg: RunConfig, override):
    path = override or cfg.output_dir
    os.makedirs(path, exist_ok=True)
    return path


def cmd_run(cfg: RunConfig, args) -> int:
    out = _output_dir(cfg, args.output_dir)
    mesh = cfg.geometry.build()
    phi0 = initial_phase_field(mesh, cfg.initial_m)
    stride = cfg.snapshot_stride

    def snapshot(n, phi, state):
        if n % stride:
            return
        write_vtk_snapshot(os.path.join(out, f"phi_{n:06d}.vtk"), mesh, [("phi", phi)])
        write_vtk_snapshot(os.path.join(out, f"state_{n:06d}.vtk"), mesh,
                           [("psi", state.psi), ("c1", state.c[0]), ("c2", state.c[1])])
        log.info("iteration %d written", n)

    res = run_optimization(mesh, cfg.physical, cfg.optim, cfg.tolerances, phi0,
                           callback=snapshot)
    st = res.state
    write_vtk_snapshot(os.path.join(out, "phi_final.vtk"), mesh, [("phi", res.phi)])
    write_vtk_snapshot(os.path.join(out, "state_final.vtk"), mesh,
                       [("phi", res.phi), ("psi", st.psi), ("c1", st.c[0]), ("c2", st.c[1]),
                        ("rho1", st.rho[0]), ("rho2", st.rho[1])])
    write_history_csv(os.path.join(out, "history.csv"), res.history)
    if not args.no_figures:
        from . import plotting
        plotting.plot_phase_field(os.path.join(out, "phase_field.png"), mesh, res.phi)
        plotting.plot_state(os.path.join(out, "state.png"), mesh, res.phi, st)
        plotting.plot_history(os.path.join(out, "history.png"), res.history)

    last = res.history[-1]
    w = lumped_mass(mesh)
    _emit("iterations", last.iter)
    _emit("initial_objective", res.initial_objective)
    _emit("final_objective", res.final_objective)
    _emit("improvement_factor", res.final_objective / res.initial_objective)
    _emit("volume", last.volume)
    _emit("volume_error", last.volume_error)
    _emit("mean_double_well", float(w @ double_well(res.phi)) / mesh.area())
    _emit("output_dir", out)
    return EXIT_OK


def cmd_mesh_only(cfg: RunConfig, args) -> int:
    out = _output_dir(cfg, args.output_dir)
    mesh = cfg.geometry.build()
    diag = validate_mesh(mesh)
    write_vtk_snapshot(os.path.join(out, "mesh.vtk"), mesh)
    _emit("vertices", mesh.n_vertices)
    _emit("triangles", mesh.n_triangles)
    _emit("area", mesh.area())
    _emit("h", diag.h)
    _emit("min_area", diag.min_area)
    _emit("max_angle_deg", float(np.degrees(diag.max_angle)))
    _emit("nonobtuse", str(diag.is_nonobtuse).lower())
    for tag, count in diag.tag_edge_counts.items():
        _emit(f"edges_{tag.lower()}", count)
    if not diag.ok:
        print(f"mesh has {diag.n_inverted} inverted elements and "
              f"{diag.untagged_boundary_edges} untagged boundary edges", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_check_gradient(cfg: RunConfig, args) -> int:
    mesh = cfg.geometry.build()
    phi = initial_phase_field(mesh, cfg.initial_m)
    mode = args.adjoint or cfg.optim.adjoint
    threshold = cfg.run.gradient_threshold
    results = gradient_check(mesh, phi, cfg.physical, cfg.tolerances,
                             cfg.run.gradient_directions, cfg.seed, FD_STEPS, mode)
    print("direction\tadjoint\tfinite_difference\tbest_step\trel_error")
    for k, r in enumerate(results):
        print(f"{k}\t{r.adjoint:.12e}\t{r.fd[r.best_step]:.12e}\t{r.best_step:g}\t"
              f"{r.rel_error:.3e}")
    worst = max(r.rel_error for r in results)
    ok = worst <= threshold
    print(f"gradient check ({mode}): max relative error {worst:.3e}, threshold "
          f"{threshold:.1e}: {'PASS' if ok else 'FAIL'}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_equilibrium(cfg: RunConfig, args) -> int:
    mesh = cfg.geometry.build()
    res = equilibrium_check(mesh, cfg.physical, cfg.tolerances)
    _emit("sweeps", res.sweeps)
    _emit("psi_max_abs", res.psi_error)
    _emit("c1_max_error", res.c_errors[0])
    _emit("c2_max_error", res.c_errors[1])
    ok = res.passed()
    print(f"equilibrium test: {'PASS' if ok else 'FAIL'}", file=sys.stderr)
    if not res.converged:
        return EXIT_SOLVER
    return EXIT_OK if ok else EXIT_CHECK


COMMANDS = {
    "run": cmd_run,
    "mesh-only": cmd_mesh_only,
    "check-gradient": cmd_check_gradient,
    "equilibrium-test": cmd_equilibrium,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        print(f"config file not found: {args.config}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, UnicodeDecodeError) as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg, args)
    except (SolverError, FloatingPointError, OverflowError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
