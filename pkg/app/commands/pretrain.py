"""
pretrain: learn a field grid on a dataset directory with one pretext task
and write the grid plus its training report.
"""

import argparse
import logging
from pathlib import Path

from commands.common import add_config_option, common_options
from services.field_grid import init_grid
from services.formats import (
    load_run_config,
    read_dataset,
    read_grid,
    write_grid,
    write_train_report,
    write_xyz,
)
from services.pretrain import reconstruct, train_pretext

logger = logging.getLogger(__name__)

TASKS = {"recon": "reconstruction", "normal": "normal_estimation", "supervised": "supervised"}


def register(subparsers) -> None:
    p = subparsers.add_parser(
        "pretrain", parents=[common_options()], help="pretrain a field grid on a pretext task"
    )
    p.add_argument("--task", choices=sorted(TASKS), required=True)
    p.add_argument("--data", type=Path, required=True, help="dataset directory")
    p.add_argument("--out", type=Path, required=True, help="output grid file")
    add_config_option(p)
    p.add_argument("--report", type=Path, help="epoch report (default: <out>.report.jsonl)")
    p.add_argument("--init-grid", type=Path, help="start from this grid instead of a random one")
    p.add_argument("--resolution", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, dest="base_lr")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--n-s", type=int)
    p.add_argument("--n-out", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--n-points", type=int, help="subsample every shape to this many points")
    p.add_argument("--freeze-grid", action="store_true", help="train only the head")
    p.add_argument("--sign-invariant", action="store_true", help="use the 1 - |cos| loss")
    p.add_argument("--precision", type=int, choices=(4, 8))
    p.add_argument("--recon-dir", type=Path, help="export held-out reconstructions here")
    p.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    cfg = load_run_config(
        args.config,
        task=TASKS[args.task],
        data_dir=args.data,
        out_grid=args.out,
        report_path=args.report,
        recon_dir=args.recon_dir,
        resolution=args.resolution,
        channels=args.channels,
        precision=args.precision,
        epochs=args.epochs,
        base_lr=args.base_lr,
        batch_size=args.batch_size,
        n_s=args.n_s,
        n_out=args.n_out,
        k=args.k,
        n_points=args.n_points,
        seed=args.seed,
        weight_mode="freeze_grid" if args.freeze_grid else None,
        sign_invariant_normals=True if args.sign_invariant else None,
    )
    pretext = cfg.pretext
    if args.init_grid is not None:
        grid = read_grid(args.init_grid)
    else:
        grid = init_grid(
            cfg.resolution, cfg.channels, cfg.init_scheme, cfg.init_scale, seed=pretext.seed
        )

    samples = read_dataset(cfg.data_dir)
    trained, head, report = train_pretext(samples, pretext, grid)

    write_grid(cfg.out_grid, trained, cfg.precision)
    report_path = cfg.report_path or cfg.out_grid.with_name(f"{cfg.out_grid.name}.report.jsonl")
    write_train_report(report_path, report)

    if cfg.recon_dir is not None:
        if pretext.task != "reconstruction":
            logger.warning("--recon-dir only applies to the reconstruction task; skipped")
        else:
            for i in report.eval_indices:
                cloud = samples[i].cloud
                predicted = reconstruct(trained, head, cloud, pretext, seed=pretext.seed + i)
                write_xyz(cfg.recon_dir / f"recon_{i:04d}_pred.xyz", predicted)
                write_xyz(cfg.recon_dir / f"recon_{i:04d}_gt.xyz", cloud)

    print(
        f"Pretrained {pretext.task} for {pretext.epochs} epochs: "
        f"{report.metric_name}={report.final_eval_metric:.6f}, grid -> {cfg.out_grid}, "
        f"report -> {report_path}"
    )
    return 0
