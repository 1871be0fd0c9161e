"""probe-ellipsoid, export-slices and linear-probe: analysis of a grid file."""

import argparse
import logging
from pathlib import Path

import numpy as np

from commands.common import AXES, add_config_option, common_options
from models.probes import LinearProbeReport
from services.errors import InvalidArgumentError
from services.field_grid import init_grid
from services.formats import (
    atomic_write_text,
    load_run_config,
    read_dataset,
    read_grid,
    write_matrix_csv,
    write_response_csv,
    write_slices,
)
from services.probes import (
    curvature_response,
    field_features,
    run_linear_probe,
    spearman_report,
    weight_slices,
)

logger = logging.getLogger(__name__)

PROBE_MODES = {"max_fc": "max_fc", "pointwise": "pointwise_fc_max_fc", "flatten": "flatten_fc"}


def register(subparsers) -> None:
    common = common_options()

    p = subparsers.add_parser(
        "probe-ellipsoid", parents=[common], help="peak embeddings over semi-ellipsoid sweeps"
    )
    p.add_argument("--grid", type=Path, required=True)
    p.add_argument("--axis", choices=AXES, required=True)
    p.add_argument("--out", type=Path, required=True, help="response CSV")
    p.add_argument("--n-theta", type=int)
    p.add_argument("--n-phi", type=int)
    add_config_option(p)
    p.set_defaults(handler=run_ellipsoid)

    p = subparsers.add_parser(
        "export-slices", parents=[common], help="max-projected grid channels as images"
    )
    p.add_argument("--grid", type=Path, required=True)
    p.add_argument("--axis", choices=AXES, required=True)
    p.add_argument("--outdir", type=Path, required=True)
    p.set_defaults(handler=run_slices)

    p = subparsers.add_parser(
        "linear-probe", parents=[common], help="linear classification over frozen features"
    )
    p.add_argument("--grid", type=Path, help="grid file (omit with --random-grid)")
    p.add_argument("--data", type=Path, required=True, help="labelled dataset directory")
    p.add_argument("--mode", choices=sorted(PROBE_MODES), help="default: flatten")
    p.add_argument("--out", type=Path, required=True, help="JSON report")
    p.add_argument("--random-grid", action="store_true", help="score a freshly initialized grid")
    p.add_argument("--resolution", type=int, help="random grid resolution")
    p.add_argument("--channels", type=int, help="random grid channels")
    p.add_argument("--k", type=int)
    p.add_argument("--epochs", type=int)
    add_config_option(p)
    p.set_defaults(handler=run_linear_probe_command, parser=p)


def run_ellipsoid(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, n_theta=args.n_theta, n_phi=args.n_phi)
    grid = read_grid(args.grid)
    response = curvature_response(grid, args.axis, n_theta=cfg.n_theta, n_phi=cfg.n_phi)
    write_response_csv(args.out, response)
    rho = spearman_report(response)
    spearman_path = args.out.with_name(f"{args.out.stem}.spearman.csv")
    table = np.column_stack([np.arange(rho.shape[0]), rho])
    write_matrix_csv(spearman_path, table, header=["channel", "spearman"])
    varying = int(np.sum(np.ptp(response.values, axis=0) > 0))
    print(
        f"Curvature response along {args.axis}: {response.n_shapes} shapes, "
        f"{varying}/{response.values.shape[1]} channels vary -> {args.out}, {spearman_path}"
    )
    return 0


def run_slices(args: argparse.Namespace) -> int:
    grid = read_grid(args.grid)
    written = write_slices(args.outdir, weight_slices(grid, args.axis), args.axis)
    print(f"Wrote {len(written)} files to {args.outdir}")
    return 0


def run_linear_probe_command(args: argparse.Namespace) -> int:
    if args.grid is None and not args.random_grid:
        args.parser.error("--grid is required unless --random-grid is given")
    cfg = load_run_config(
        args.config,
        resolution=args.resolution,
        channels=args.channels,
        k=args.k,
        seed=args.seed,
        probe_mode=PROBE_MODES[args.mode] if args.mode else None,
        probe_epochs=args.epochs,
    )
    seed = cfg.pretext.seed
    if args.random_grid:
        if args.grid is not None:
            given = read_grid(args.grid)
            r, c = given.resolution, given.channels
        else:
            r, c = cfg.resolution, cfg.channels
        grid = init_grid(r, c, seed=seed)
    else:
        grid = read_grid(args.grid)

    samples = read_dataset(args.data)
    if any(s.label is None for s in samples):
        raise InvalidArgumentError(f"every shape in {args.data} needs a label")
    labels = [int(s.label) for s in samples]
    clouds = [s.cloud for s in samples]
    mode = cfg.probe_mode

    field = field_features(grid, clouds, cfg.pretext.k)
    field_result = run_linear_probe(
        list(zip(field, labels)), mode, seed=seed, epochs=cfg.probe_epochs, features="field"
    )
    raw_result = run_linear_probe(
        [(c.points, y) for c, y in zip(clouds, labels)],
        mode,
        seed=seed,
        epochs=cfg.probe_epochs,
        features="raw",
    )
    report = LinearProbeReport(field=field_result, raw=raw_result, random_grid=args.random_grid)
    atomic_write_text(args.out, report.model_dump_json(indent=2) + "\n")
    print(
        f"Linear probe ({mode}): field {field_result.accuracy:.3f}, "
        f"raw {raw_result.accuracy:.3f} -> {args.out}"
    )
    return 0
