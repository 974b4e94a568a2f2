"""Generalized winding numbers of triangle meshes.

w(q) = (1/4pi) * sum of the signed solid angles the faces subtend at q.  The
field is ~1 inside closed outward-oriented surfaces, ~0 outside, and varies
smoothly through openings of open or non-manifold meshes.

Two evaluation modes are provided: EXACT sums every face, ACCELERATED walks
the BVH and replaces well-separated nodes by a dipole.  With the default
opening ratio the accelerated result stays within 1e-3 of the exact one.
"""

import enum
from typing import Tuple, Union

import numpy as np

import bvh as bvh_module
import geometry
import kernels
import parallel
from geometry import PointCloud, TriangleMesh, VoxelGrid
from log import Log

# Queries closer than this to the surface are flagged as unreliable
NEAR_SURFACE_DISTANCE = 1e-12

# A BVH node is replaced by its dipole when radius < ratio * distance.
# Dipole errors grow with (radius / distance)^2 and add up over the tree;
# 0.05 keeps the sum within the bound on meshes of 10^5 faces.
DEFAULT_FAR_FIELD_RATIO = 0.05

# Documented worst-case deviation of ACCELERATED from EXACT
ACCELERATED_ERROR_BOUND = 1e-3

INSIDE_THRESHOLD = 0.5


class Mode(enum.Enum):
    EXACT = 0
    ACCELERATED = 1


class WnfGrid(VoxelGrid):
    """VoxelGrid whose scalar payload is a winding number per voxel center."""

    def __init__(self, origin, spacing: float, dims, data):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError("WNF payload must be scalar per voxel")
        if not np.all(np.isfinite(data)):
            raise ValueError("WNF grid has non-finite values")
        super(WnfGrid, self).__init__(origin, spacing, dims, data)

    @classmethod
    def from_flat_values(cls, grid_spec: VoxelGrid, values) -> "WnfGrid":
        return cls(grid_spec.origin, grid_spec.spacing, grid_spec.dims,
                   grid_spec.from_flat(np.asarray(values, dtype=np.float64)))

    def value_at(self, points) -> np.ndarray:
        """Trilinear interpolation between voxel centers."""
        idx, weights = self.trilinear(points)
        return (self.flat_data()[idx] * weights).sum(axis=1)

    def occupancy(self, threshold: float = INSIDE_THRESHOLD) -> np.ndarray:
        return self.data >= threshold


def _as_points(qs) -> np.ndarray:
    if isinstance(qs, PointCloud):
        qs = qs.points
    return np.ascontiguousarray(qs, dtype=np.float64).reshape(-1, 3)


def near_surface(mesh: TriangleMesh, points, threads: int = 1) -> np.ndarray:
    return geometry.point_mesh_distance(
        mesh, points, threads) <= NEAR_SURFACE_DISTANCE


def winding_number(
        mesh: TriangleMesh, q, return_flag: bool = False
) -> Union[float, Tuple[float, bool]]:
    """Exact winding number at a single point."""
    point = _as_points(q)
    out = np.empty(1)
    kernels.winding_exact(
        point, np.ascontiguousarray(mesh.vertices),
        np.ascontiguousarray(mesh.faces), out)
    flag = bool(near_surface(mesh, point)[0])
    if flag:
        Log("Winding", "query %s lies on the surface, value %g unreliable" % (
            point[0], out[0]))
    if return_flag:
        return float(out[0]), flag
    return float(out[0])


def winding_number_batch(
        mesh: TriangleMesh, tree: bvh_module.Bvh, qs,
        mode: Mode = Mode.EXACT, threads: int = 1,
        return_flags: bool = False,
        ratio: float = DEFAULT_FAR_FIELD_RATIO):
    """Winding numbers at many points.

    Results do not depend on the thread count.  With return_flags the
    near-surface mask is returned as well.
    """
    tree.check(mesh)
    points = _as_points(qs)
    vertices = np.ascontiguousarray(mesh.vertices)
    faces = np.ascontiguousarray(mesh.faces)

    if mode == Mode.EXACT:
        def _evaluate(chunk):
            out = np.empty(len(chunk))
            kernels.winding_exact(chunk, vertices, faces, out)
            return out
    elif mode == Mode.ACCELERATED:
        if not ratio > 0:
            raise ValueError("Far-field ratio must be positive: %r" % ratio)

        def _evaluate(chunk):
            out = np.empty(len(chunk))
            kernels.winding_far_field(
                chunk, vertices, faces, tree.order, tree.left, tree.right,
                tree.start, tree.count, tree.normal, tree.centroid,
                tree.radius, ratio, out)
            return out
    else:
        raise ValueError("Unknown winding number mode %r" % mode)

    values = parallel.chunked(_evaluate, points, threads, chunk_size=1024)
    if not return_flags:
        return values

    flags = near_surface(mesh, points, threads)
    if np.any(flags):
        Log("Winding", "%d of %d queries lie on the surface" % (
            np.count_nonzero(flags), len(points)))
    return values, flags


def evaluate_wnf_grid(
        mesh: TriangleMesh, grid_spec: VoxelGrid, mode: Mode = Mode.EXACT,
        tree: bvh_module.Bvh = None, threads: int = 1) -> WnfGrid:
    """Winding number at every voxel center."""
    if tree is None:
        tree = bvh_module.build_bvh(mesh)
    values = winding_number_batch(
        mesh, tree, grid_spec.centers(), mode, threads)
    return WnfGrid.from_flat_values(grid_spec, values)


def voxelize_occupancy(
        grid_spec: VoxelGrid, mesh: TriangleMesh,
        tree: bvh_module.Bvh = None, threads: int = 1) -> VoxelGrid:
    """Boolean grid, true where the voxel center has winding number >= 0.5.

    The field is evaluated in ACCELERATED mode; voxels whose value lies
    within the error bound of the threshold are re-evaluated exactly, so
    the result equals an exact evaluation.
    """
    if tree is None:
        tree = bvh_module.build_bvh(mesh)
    centers = grid_spec.centers()
    values = winding_number_batch(
        mesh, tree, centers, Mode.ACCELERATED, threads)
    close = np.abs(values - INSIDE_THRESHOLD) <= 2 * ACCELERATED_ERROR_BOUND
    if np.any(close):
        values[close] = winding_number_batch(
            mesh, tree, centers[close], Mode.EXACT, threads)
    occupied = grid_spec.from_flat(values >= INSIDE_THRESHOLD)
    return grid_spec.with_data(occupied)
