"""Depth rendering of triangle meshes by ray casting."""

from typing import Tuple

import numpy as np

import bvh as bvh_module
import geometry
from geometry import DepthImage, PinholeCamera, TriangleMesh


def camera_rays(camera: PinholeCamera) -> Tuple[np.ndarray, np.ndarray]:
    """World-frame ray origins and directions, one per pixel, row-major.

    Directions have unit camera-frame z component, so the ray parameter of
    a hit is its z depth.
    """
    directions = camera.pose.apply_vectors(camera.pixel_directions())
    origins = np.broadcast_to(camera.pose.translation, directions.shape)
    return origins, directions


def render_depth(
        camera: PinholeCamera, mesh: TriangleMesh,
        tree: bvh_module.Bvh = None, threads: int = 1) -> DepthImage:
    """Nearest-hit depth per pixel; pixels with no hit are invalid."""
    if mesh.is_empty():
        raise ValueError("Cannot render an empty mesh")
    if tree is None:
        tree = bvh_module.build_bvh(mesh)

    origins, directions = camera_rays(camera)
    t, _ = bvh_module.raycast(mesh, tree, origins, directions, threads)
    t[~np.isfinite(t)] = np.nan
    return DepthImage(t.reshape(camera.height, camera.width))


def render_point_cloud(
        camera: PinholeCamera, mesh: TriangleMesh,
        tree: bvh_module.Bvh = None, threads: int = 1
) -> geometry.PointCloud:
    return geometry.backproject_depth(
        camera, render_depth(camera, mesh, tree, threads))
