"""
Synthetic three-class shape set (sphere, cube, cylinder) for desk-scale
pretraining and probing. Points are uniform on the surface, normals are the
analytic outward normals, and Gaussian noise is added to coordinates only.
"""

import logging

import numpy as np

from models.geometry import PointCloud
from models.probes import SHAPE_CLASSES, SyntheticShape
from services.errors import InvalidArgumentError

logger = logging.getLogger(__name__)


def sample_sphere(rng: np.random.Generator, n_points: int) -> tuple[np.ndarray, np.ndarray]:
    radius = rng.uniform(0.5, 1.0)
    directions = rng.normal(size=(n_points, 3))
    normals = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    return radius * normals, normals


def sample_cube(rng: np.random.Generator, n_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned cube; all six faces have equal area so the face is drawn uniformly."""
    half = rng.uniform(0.5, 1.0)
    face = rng.integers(0, 6, size=n_points)
    axis, sign = face // 2, np.where(face % 2 == 0, 1.0, -1.0)
    points = rng.uniform(-half, half, size=(n_points, 3))
    rows = np.arange(n_points)
    points[rows, axis] = sign * half
    normals = np.zeros((n_points, 3))
    normals[rows, axis] = sign
    return points, normals


def sample_cylinder(rng: np.random.Generator, n_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Closed cylinder along z; side and caps chosen in proportion to their area."""
    radius = rng.uniform(0.4, 0.8)
    half_height = rng.uniform(0.4, 1.0)
    side_area = 4.0 * np.pi * radius * half_height
    cap_area = 2.0 * np.pi * radius**2
    on_side = rng.random(n_points) < side_area / (side_area + cap_area)
    angle = rng.uniform(0.0, 2.0 * np.pi, size=n_points)
    height = rng.uniform(-half_height, half_height, size=n_points)
    cap_sign = np.where(rng.random(n_points) < 0.5, 1.0, -1.0)
    cap_radius = radius * np.sqrt(rng.random(n_points))

    rad = np.where(on_side, radius, cap_radius)
    z = np.where(on_side, height, cap_sign * half_height)
    points = np.stack([rad * np.cos(angle), rad * np.sin(angle), z], axis=1)
    side_normals = np.stack([np.cos(angle), np.sin(angle), np.zeros(n_points)], axis=1)
    cap_normals = np.zeros((n_points, 3))
    cap_normals[:, 2] = cap_sign
    normals = np.where(on_side[:, None], side_normals, cap_normals)
    return points, normals


_SAMPLERS = (sample_sphere, sample_cube, sample_cylinder)


def gen_synthetic_dataset(
    n_per_class: int, n_points: int, noise_sigma: float, seed: int
) -> list[SyntheticShape]:
    """
    n_per_class shapes of each class, class-major (all spheres, then cubes,
    then cylinders). Shape j of class c draws from a generator keyed by
    (seed, c, j), so counts can grow without changing earlier shapes.
    """
    if n_per_class < 1:
        raise InvalidArgumentError(f"n_per_class must be at least 1, got {n_per_class}")
    if n_points < 8:
        raise InvalidArgumentError(f"n_points must be at least 8, got {n_points}")
    if noise_sigma < 0:
        raise InvalidArgumentError(f"noise_sigma must be non-negative, got {noise_sigma}")
    shapes = []
    for label, sampler in enumerate(_SAMPLERS):
        for j in range(n_per_class):
            rng = np.random.default_rng([seed, label, j])
            points, normals = sampler(rng, n_points)
            if noise_sigma > 0:
                points = points + rng.normal(0.0, noise_sigma, size=points.shape)
            cloud = PointCloud(points=points, normals=normals)
            shapes.append(SyntheticShape(cloud=cloud, label=label))
    logger.info(
        f"Generated {len(shapes)} shapes ({', '.join(SHAPE_CLASSES)}) "
        f"with {n_points} points, noise {noise_sigma}"
    )
    return shapes
