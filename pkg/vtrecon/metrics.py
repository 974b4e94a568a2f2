"""Reconstruction quality metrics.

  iou_volume  voxel occupancy IoU, occupancy = winding number >= 0.5
  chamfer     0.5 * (mean NN distance a->b + mean NN distance b->a),
              unsquared; reports multiply it by 100
  emd         mean distance under the optimal perfect matching, solved
              exactly as a linear assignment problem
"""

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

import geometry
import winding
from geometry import PointCloud, TriangleMesh, VoxelGrid

CHAMFER_REPORT_SCALE = 100.0

DEFAULT_EVAL_POINTS = 2048


def _points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=np.float64).reshape(-1, 3)


def iou_volume(
        a: TriangleMesh, b: TriangleMesh, grid_spec: VoxelGrid,
        threads: int = 1) -> float:
    """Intersection over union of the occupied voxels; 0 if both empty."""
    occ_a = winding.voxelize_occupancy(grid_spec, a, threads=threads).data \
        if not a.is_empty() else np.zeros(grid_spec.dims, dtype=bool)
    occ_b = winding.voxelize_occupancy(grid_spec, b, threads=threads).data \
        if not b.is_empty() else np.zeros(grid_spec.dims, dtype=bool)
    union = np.count_nonzero(occ_a | occ_b)
    if union == 0:
        return 0.0
    return np.count_nonzero(occ_a & occ_b) / union


def chamfer(a, b) -> float:
    a = _points(a)
    b = _points(b)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("Chamfer distance of an empty cloud (%d, %d)" % (
            len(a), len(b)))
    a_to_b, _ = cKDTree(b).query(a)
    b_to_a, _ = cKDTree(a).query(b)
    return 0.5 * (float(a_to_b.mean()) + float(b_to_a.mean()))


def emd(a, b) -> float:
    a = _points(a)
    b = _points(b)
    if len(a) != len(b):
        raise ValueError("EMD needs equal sizes, got %d and %d" % (
            len(a), len(b)))
    if len(a) == 0:
        raise ValueError("EMD of empty clouds")
    cost = cdist(a, b)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def sample_mesh_points(
        mesh: TriangleMesh, n: int = DEFAULT_EVAL_POINTS,
        seed: int = 0) -> PointCloud:
    return geometry.sample_surface(mesh, n, seed)
