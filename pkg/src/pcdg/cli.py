"""Command-line driver.

Subcommands ``reconstruct``, ``solve``, ``eigen`` and ``convergence`` run
refinement studies and write CSV tables plus a ``run_manifest.json`` into
the output directory. Exit codes: 0 ok, 2 configuration or input error,
3 geometry failure, 4 solver failure.
"""
import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .errors import GeometryError, MeshError, PcdgError, SolverError
from .pipeline import ConfigError, RunConfig

EXIT_OK, EXIT_CONFIG, EXIT_GEOMETRY, EXIT_SOLVER = 0, 2, 3, 4

OUTPUTS = {"reconstruct": "geo_errors.csv", "solve": "solution_errors.csv",
           "eigen": "eigen_errors.csv"}


def _beta(text):
    return text if text == "auto" else float(text)


def _m(text):
    return text if text == "auto" else int(text)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pcdg", description="DG Laplace-Beltrami solver on point-cloud patches")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default settings")
    common.add_argument("--surface", choices=pipeline.SURFACES + ("none",))
    common.add_argument("--cloud", help="point cloud, XYZ format")
    common.add_argument("--mesh", help="initial reference mesh, OFF format")
    common.add_argument("--k", type=int, help="geometric degree")
    common.add_argument("--l", type=int, help="function degree")
    common.add_argument("--levels", type=int, help="number of refinement levels")
    common.add_argument("--beta", type=_beta, help="penalty, number or 'auto'")
    common.add_argument("--knn", type=int, help="neighbours for vertex projection")
    common.add_argument("--m", type=_m, help="fitting points per patch or 'auto'")
    common.add_argument("--newton-tol", type=float, dest="newton_tol")
    common.add_argument("--quad-boost", type=int, dest="quad_boost")
    common.add_argument("--count", type=int, help="number of eigenpairs")
    common.add_argument("--out", help="output directory")
    common.add_argument("--cloud-lattice", type=int, nargs=2, dest="cloud_lattice",
                        metavar=("N_THETA", "N_PHI"),
                        help="resolution of the synthetic sample lattice")
    common.add_argument("--jump-weight", choices=pipeline.JUMP_WEIGHTS, dest="jump_weight",
                        help="edge weighting of the consistency jumps")
    common.add_argument("--dat", action="store_true", default=None,
                        help="also write gnuplot .dat files")
    common.add_argument("--dump", action="store_true", default=None,
                        help="save per-level solution coefficients")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("reconstruct", parents=[common], help="nodal geometric errors")
    sub.add_parser("solve", parents=[common], help="manufactured source problem")
    sub.add_parser("eigen", parents=[common], help="eigenvalue problem")
    sub.add_parser("convergence", parents=[common], help="all three studies")
    return parser


def resolve_config(args):
    """Merge the JSON config file with command-line flags (flags win)."""
    values = {}
    if args.config:
        values.update(pipeline.load_config(args.config))
    for name in ("surface", "cloud", "mesh", "k", "l", "levels", "beta", "knn", "m",
                 "newton_tol", "quad_boost", "count", "out", "cloud_lattice", "dat",
                 "dump", "jump_weight"):
        val = getattr(args, name)
        if val is not None:
            values[name] = val
    if values.get("cloud_lattice") is not None:
        values["cloud_lattice"] = tuple(values["cloud_lattice"])
    try:
        return RunConfig(**values).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def run(command, config):
    """Run one subcommand; returns the written table paths."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "run_manifest.json", "w") as fh:
        json.dump({"command": command, "config": config.manifest()}, fh, indent=2,
                  sort_keys=True, default=list)
    for path in (config.cloud, config.mesh):
        if path and not Path(path).is_file():
            raise FileNotFoundError(f"input file not found: {path}")
    cloud = pipeline.make_cloud(config)
    meshes = pipeline.level_meshes(config, cloud)
    studies = ["reconstruct", "solve", "eigen"] if command == "convergence" else [command]
    written = []
    for study in studies:
        if study == "reconstruct":
            tab = pipeline.run_reconstruct(config, cloud, meshes)
        elif study == "solve":
            tab = pipeline.run_solve(config, cloud, meshes,
                                     dump_dir=out if config.dump else None)
        else:
            tab = pipeline.run_eigen(config, cloud, meshes)
        path = out / OUTPUTS[study]
        tab.to_csv(path)
        if config.dat:
            tab.to_dat(path.with_suffix(".dat"))
        written.append(path)
    return written


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
        written = run(args.command, config)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GeometryError, MeshError) as exc:
        print(f"geometry failure: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except PcdgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
