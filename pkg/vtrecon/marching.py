"""Isosurface extraction from winding number grids."""

import numpy as np
from skimage import measure

import geometry
from geometry import TriangleMesh, VoxelGrid

# Surface between inside (~1) and outside (~0)
DEFAULT_ISO = 0.5


def marching_cubes(grid: VoxelGrid, iso: float = DEFAULT_ISO) -> TriangleMesh:
    """Triangulate the iso-level set of a scalar grid.

    Vertices are in world coordinates, interpolated linearly along the
    edges between voxel centers.  Faces are oriented so that normals point
    towards decreasing values (outward for a winding number field).  A grid
    that never crosses iso gives an empty mesh.
    """
    if grid.data is None or grid.data.ndim != 3:
        raise ValueError("Marching cubes needs a scalar grid")
    if min(grid.dims) < 2:
        raise ValueError("Grid must have at least 2 voxels per axis: %s" % (
            grid.dims,))

    data = np.asarray(grid.data, dtype=np.float64)
    if not (data.min() < iso < data.max()):
        return geometry.empty_mesh()

    verts, faces, _, _ = measure.marching_cubes(
        data, level=iso, spacing=(grid.spacing,) * 3,
        allow_degenerate=False)
    verts = verts.astype(np.float64) + grid.origin + 0.5 * grid.spacing
    mesh = TriangleMesh(verts, faces.astype(np.int64))
    if mesh.is_empty():
        return mesh

    # Orient against the field gradient
    gradient = np.stack(np.gradient(data, grid.spacing), axis=-1)
    idx, weights = grid.trilinear(mesh.triangles().mean(axis=1))
    flat_gradient = gradient.reshape((-1, 3), order="F")
    g = (flat_gradient[idx] * weights[:, :, None]).sum(axis=1)
    if np.einsum("ij,ij->", mesh.face_area_vectors(), g) > 0:
        mesh = mesh.flipped()
    return mesh
