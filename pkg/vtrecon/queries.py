"""Training query positions and their winding number targets.

A batch of M positions has two parts.  The first M1 are drawn from the
union of radius balls around the contact patches and carry the tactile
feature of their nearest patch.  The remaining M2 come from a pool of
uniform samples over the grid volume plus jittered surface samples, and
carry no tactile feature (index -1).
"""

from typing import List, Sequence

import numpy as np
from scipy.spatial import cKDTree

import bvh as bvh_module
import geometry
import hand
import winding
from geometry import PointCloud, TriangleMesh, VoxelGrid
from log import Log
from tactile import ContactPatch

DEFAULT_M = 2048
DEFAULT_POOL = 100000
DEFAULT_SURFACE = 20000

# Standard deviation of the normal noise added to surface samples
SURFACE_JITTER = 0.01


class QueryBatch:
    def __init__(self, positions, tactile_index, gt=None):
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        tactile_index = np.asarray(tactile_index, dtype=np.int64)
        if tactile_index.shape != (len(positions),):
            raise ValueError(
                "Got %d tactile indices for %d positions" % (
                    len(tactile_index), len(positions)))
        if gt is not None:
            gt = np.asarray(gt, dtype=np.float64)
            if gt.shape != (len(positions),):
                raise ValueError("Got %d targets for %d positions" % (
                    len(gt), len(positions)))
        self.positions = positions  # type: np.ndarray
        # Patch each position takes its tactile feature from; -1 for none
        self.tactile_index = tactile_index  # type: np.ndarray
        self.gt = gt  # type: np.ndarray

    def __len__(self):
        return len(self.positions)

    def __repr__(self):
        return "QueryBatch(%d positions, %d tactile)" % (
            len(self), self.num_tactile)

    @property
    def num_tactile(self) -> int:
        return int(np.count_nonzero(self.tactile_index >= 0))

    def without_tactile(self) -> "QueryBatch":
        return QueryBatch(
            self.positions, np.full(len(self), -1, dtype=np.int64), self.gt)


def nearest_patch(
        patches: Sequence[ContactPatch], positions: np.ndarray,
        radius: float = None) -> np.ndarray:
    """Index of the patch owning the nearest patch point to each position.

    With a radius, positions farther than it from every patch get -1.
    Equidistant points resolve to the lower patch index.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    owners = np.concatenate([
        np.full(len(p.points), i, dtype=np.int64)
        for i, p in enumerate(patches)] + [np.zeros(0, dtype=np.int64)])
    out = np.full(len(positions), -1, dtype=np.int64)
    if len(owners) == 0 or len(positions) == 0:
        return out

    points = PointCloud.concatenate([p.points for p in patches]).points
    distance, nearest = cKDTree(points).query(positions)
    out[:] = owners[nearest]

    # Ties between patches: prefer the lowest index among equally near ones
    for i in range(len(patches) - 1):
        if patches[i].is_empty():
            continue
        d_i, _ = cKDTree(patches[i].points.points).query(positions)
        better = (d_i <= distance) & (out > i)
        out[better] = i
    if radius is not None:
        out[distance > radius] = -1
    return out


def query_pool(
        mesh: TriangleMesh, bounds: VoxelGrid, rng: np.random.Generator,
        size: int = DEFAULT_POOL, surface: int = DEFAULT_SURFACE
) -> np.ndarray:
    """Uniform samples in the grid volume plus jittered surface samples."""
    if not 0 <= surface <= size:
        raise ValueError(
            "Surface sample count %d must lie in [0, %d]" % (surface, size))
    lo, hi = bounds.bounds()
    uniform = rng.uniform(lo, hi, size=(size - surface, 3))
    on_surface = geometry.sample_surface(
        mesh, surface, int(rng.integers(2 ** 31))).points
    on_surface = on_surface + rng.normal(
        scale=SURFACE_JITTER, size=on_surface.shape)
    return np.concatenate([uniform, on_surface])


def sample_query_batch(
        mesh: TriangleMesh, patches: List[ContactPatch], seed: int,
        bounds: VoxelGrid, target: winding.WnfGrid = None,
        m: int = DEFAULT_M, pool: int = DEFAULT_POOL,
        surface: int = DEFAULT_SURFACE,
        radius: float = hand.DEFAULT_QUERY_RADIUS,
        tree: bvh_module.Bvh = None, threads: int = 1) -> QueryBatch:
    """Draw M query positions with ground truth winding numbers.

    Ground truth is the exact winding number of mesh, or the trilinear
    interpolation of target when given.  Exact queries that land on the
    surface are dropped from the batch.
    """
    if m < 1:
        raise ValueError("Query count must be positive: %d" % m)
    rng = np.random.default_rng(seed)
    patch_points = sum(len(p.points) for p in patches)
    m1 = min(patch_points, m // 2)

    tactile_positions = hand.sphere_query_positions(
        patches, radius, m1, int(rng.integers(2 ** 31))).points
    tactile_index = nearest_patch(patches, tactile_positions)

    candidates = query_pool(mesh, bounds, rng, pool, surface)
    picks = rng.choice(len(candidates), size=m - m1, replace=False)
    positions = np.concatenate(
        [tactile_positions.reshape(-1, 3), candidates[picks]])
    index = np.concatenate(
        [tactile_index, np.full(m - m1, -1, dtype=np.int64)])

    if target is not None:
        return QueryBatch(positions, index, target.value_at(positions))

    if tree is None:
        tree = bvh_module.build_bvh(mesh)
    gt, flags = winding.winding_number_batch(
        mesh, tree, positions, winding.Mode.EXACT, threads,
        return_flags=True)
    if np.any(flags):
        Log("Queries", "dropping %d surface-coincident positions" % (
            np.count_nonzero(flags)))
    keep = ~flags
    return QueryBatch(positions[keep], index[keep], gt[keep])
