"""gen-synthetic: write a labelled sphere / cube / cylinder dataset directory."""

import argparse
from pathlib import Path

from commands.common import common_options, seed_of
from services.formats import write_dataset
from services.synthetic import gen_synthetic_dataset


def register(subparsers) -> None:
    p = subparsers.add_parser(
        "gen-synthetic", parents=[common_options()], help="generate a synthetic shape dataset"
    )
    p.add_argument("--n-per-class", type=int, required=True)
    p.add_argument("--points", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--outdir", type=Path, required=True)
    p.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    shapes = gen_synthetic_dataset(args.n_per_class, args.points, args.noise, seed_of(args))
    write_dataset(args.outdir, shapes)
    print(f"Wrote {len(shapes)} shapes to {args.outdir}")
    return 0
