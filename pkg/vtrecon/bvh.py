"""Axis-aligned bounding volume hierarchy over the faces of a TriangleMesh.

Nodes are stored in flat arrays so that the compiled kernels can traverse
them.  Besides bounding boxes each node carries the data needed for a
first-order far-field winding number approximation: the sum of the area
vectors of its faces, their area-weighted centroid and the radius of a ball
about that centroid containing every vertex of the node.
"""

from typing import Tuple

import numpy as np

import geometry
import kernels
import parallel

DEFAULT_LEAF_SIZE = 8


class Bvh:
    def __init__(
            self, digest: str, leaf_size: int, order: np.ndarray,
            node_min: np.ndarray, node_max: np.ndarray, left: np.ndarray,
            right: np.ndarray, start: np.ndarray, count: np.ndarray,
            normal: np.ndarray, centroid: np.ndarray, radius: np.ndarray):
        self.digest = digest  # type: str
        self.leaf_size = leaf_size  # type: int

        # Face indices, permuted so that each node covers a contiguous range
        self.order = order  # type: np.ndarray
        self.node_min = node_min  # type: np.ndarray
        self.node_max = node_max  # type: np.ndarray
        # Child node indices, -1 for leaves
        self.left = left  # type: np.ndarray
        self.right = right  # type: np.ndarray
        self.start = start  # type: np.ndarray
        self.count = count  # type: np.ndarray

        self.normal = normal  # type: np.ndarray
        self.centroid = centroid  # type: np.ndarray
        self.radius = radius  # type: np.ndarray

        for a in (order, node_min, node_max, left, right, start, count,
                  normal, centroid, radius):
            a.flags.writeable = False

    def __repr__(self):
        return "Bvh(%d nodes, %d faces, leaf size %d)" % (
            self.num_nodes, len(self.order), self.leaf_size)

    @property
    def num_nodes(self) -> int:
        return len(self.left)

    def leaves(self) -> np.ndarray:
        return np.nonzero(self.left < 0)[0]

    def check(self, mesh: geometry.TriangleMesh) -> None:
        if mesh.digest() != self.digest:
            raise ValueError("BVH was built for a different mesh")


def build_bvh(
        mesh: geometry.TriangleMesh, leaf_size: int = DEFAULT_LEAF_SIZE
) -> Bvh:
    """Top-down build, splitting at the median centroid on the longest axis.

    Ties in the sort are broken by face index, so the tree depends only on
    the mesh.
    """
    if leaf_size < 1:
        raise ValueError("Leaf size must be positive: %d" % leaf_size)

    num_faces = mesh.num_faces
    tri = mesh.triangles()
    centers = tri.mean(axis=1) if num_faces else np.zeros((0, 3))
    area_vectors = mesh.face_area_vectors()
    areas = np.linalg.norm(area_vectors, axis=1)

    order = np.arange(num_faces, dtype=np.int64)
    # [lo, hi, left, right]
    nodes = [[0, num_faces, -1, -1]]
    stack = [0]
    while stack:
        node = stack.pop()
        lo, hi = nodes[node][:2]
        if hi - lo <= leaf_size:
            continue
        idx = order[lo:hi]
        c = centers[idx]
        extent = c.max(axis=0) - c.min(axis=0)
        axis = int(np.argmax(extent))
        if extent[axis] == 0:
            # Coincident centroids cannot be separated
            continue
        order[lo:hi] = idx[np.argsort(c[:, axis], kind="stable")]
        mid = lo + (hi - lo) // 2

        nodes[node][2] = len(nodes)
        nodes.append([lo, mid, -1, -1])
        nodes[node][3] = len(nodes)
        nodes.append([mid, hi, -1, -1])
        stack.append(nodes[node][3])
        stack.append(nodes[node][2])

    num_nodes = len(nodes)
    table = np.array(nodes, dtype=np.int64).reshape(num_nodes, 4)
    node_min = np.zeros((num_nodes, 3))
    node_max = np.zeros((num_nodes, 3))
    normal = np.zeros((num_nodes, 3))
    centroid = np.zeros((num_nodes, 3))
    radius = np.zeros(num_nodes)

    if num_faces:
        scale = np.abs(tri).max()
        pad = 1e-9 * (1.0 + scale)
        for n in range(num_nodes):
            idx = order[table[n, 0]:table[n, 1]]
            corners = tri[idx].reshape(-1, 3)
            node_min[n] = corners.min(axis=0) - pad
            node_max[n] = corners.max(axis=0) + pad

            normal[n] = area_vectors[idx].sum(axis=0)
            w = areas[idx]
            if w.sum() > 0:
                centroid[n] = (centers[idx] * w[:, None]).sum(
                    axis=0) / w.sum()
            else:
                centroid[n] = centers[idx].mean(axis=0)
            radius[n] = np.linalg.norm(corners - centroid[n], axis=1).max()

    return Bvh(
        digest=mesh.digest(), leaf_size=leaf_size, order=order,
        node_min=node_min, node_max=node_max,
        left=np.ascontiguousarray(table[:, 2]),
        right=np.ascontiguousarray(table[:, 3]),
        start=np.ascontiguousarray(table[:, 0]),
        count=np.ascontiguousarray(table[:, 1] - table[:, 0]),
        normal=normal, centroid=centroid, radius=radius)


def raycast(
        mesh: geometry.TriangleMesh, bvh: Bvh, origins, directions,
        threads: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest hit along each ray.

    Directions need not be normalized; t is measured in units of the
    direction vector.  Misses have t = inf and face = -1.
    """
    bvh.check(mesh)
    rays = np.ascontiguousarray(np.concatenate(
        [np.reshape(origins, (-1, 3)), np.reshape(directions, (-1, 3))],
        axis=1), dtype=np.float64)
    vertices = np.ascontiguousarray(mesh.vertices)
    faces = np.ascontiguousarray(mesh.faces)

    def _cast(chunk):
        t = np.empty(len(chunk))
        face = np.empty(len(chunk), dtype=np.int64)
        kernels.raycast_bvh(
            np.ascontiguousarray(chunk[:, :3]),
            np.ascontiguousarray(chunk[:, 3:]), vertices, faces, bvh.order,
            bvh.node_min, bvh.node_max, bvh.left, bvh.right, bvh.start,
            bvh.count, t, face)
        return np.column_stack([t, face.astype(np.float64)])

    hits = parallel.chunked(_cast, rays, threads)
    return hits[:, 0], hits[:, 1].astype(np.int64)
