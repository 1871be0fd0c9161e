"""embed: per-element shape embeddings of a cloud, mesh or voxel volume as CSV."""

import argparse
import logging
from pathlib import Path

import numpy as np

from commands.common import add_config_option, common_options
from services.adapters import (
    cloud_embeddings,
    mesh_element_embeddings,
    mesh_query_points,
    voxel_embeddings,
)
from services.formats import (
    load_run_config,
    read_grid,
    read_off,
    read_voxels,
    read_xyz,
    write_embeddings_csv,
)

logger = logging.getLogger(__name__)

MESH_KINDS = {
    "mesh-vertex": "vertex",
    "mesh-edge": "edge_midpoint",
    "mesh-face": "face_barycenter",
}
REPRS = ("cloud", *MESH_KINDS, "voxel")


def register(subparsers) -> None:
    p = subparsers.add_parser(
        "embed", parents=[common_options()], help="embed every element of a shape"
    )
    p.add_argument("--grid", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True, help=".xyz cloud, .off mesh or voxel file")
    p.add_argument("--repr", choices=REPRS, required=True)
    p.add_argument("--out", type=Path, required=True, help="output CSV")
    p.add_argument("--k", type=int, help="neighborhood size (default: scales with point count)")
    p.add_argument("--radius-voxels", type=int)
    p.add_argument("--samples", type=int, help="surface samples for meshes")
    p.add_argument("--with-coords", action="store_true", help="append element coordinates")
    add_config_option(p)
    p.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    cfg = load_run_config(
        args.config,
        k=args.k,
        radius_voxels=args.radius_voxels,
        n_samples=args.samples,
        seed=args.seed,
    )
    k = cfg.pretext.k
    grid = read_grid(args.grid)
    if args.repr == "cloud":
        cloud = read_xyz(args.input)
        emb = cloud_embeddings(grid, cloud, k)
        coords = cloud.points
    elif args.repr in MESH_KINDS:
        mesh = read_off(args.input)
        kind = MESH_KINDS[args.repr]
        emb = mesh_element_embeddings(
            grid, mesh, kind, n_samples=cfg.n_samples, k=k, seed=cfg.pretext.seed
        )
        coords = mesh_query_points(mesh, kind)
    else:
        vol = read_voxels(args.input)
        emb = voxel_embeddings(grid, vol, cfg.radius_voxels).reshape(-1, grid.channels)
        n = vol.size
        idx = np.stack(np.meshgrid(*[np.arange(n)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
        coords = -1.0 + (2.0 * idx + 1.0) / n

    table = np.concatenate([emb, coords], axis=1) if args.with_coords else emb
    write_embeddings_csv(args.out, table)
    print(
        f"Embedded {table.shape[0]} {args.repr} elements ({table.shape[1]} columns) -> {args.out}"
    )
    return 0
