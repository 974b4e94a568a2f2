"""Geometric primitives: triangle meshes, rigid transforms, cameras, depth
images, point clouds and voxel grids.

All lengths are in scene units (meters for file-based meshes, unit-cube
normalized units for generated scenes).  Arrays are float64 throughout and
the array-backed types are immutable once constructed, so they can be shared
freely between threads.
"""

import hashlib
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

import kernels
import parallel

# Allowed deviation of R^T R from I, and of det(R) from 1
ORTHONORMAL_TOLERANCE = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


class TriangleMesh:
    """A triangle soup.  May be open, non-manifold or empty."""

    def __init__(self, vertices, faces):
        vertices = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.array(faces, dtype=np.int64).reshape(-1, 3)

        if not np.all(np.isfinite(vertices)):
            raise ValueError("Mesh has non-finite vertex coordinates")
        if len(faces):
            if faces.min() < 0 or faces.max() >= len(vertices):
                raise ValueError(
                    "Face index out of range (%d vertices, max index %d)" % (
                        len(vertices), faces.max()))
            repeated = ((faces[:, 0] == faces[:, 1]) |
                        (faces[:, 1] == faces[:, 2]) |
                        (faces[:, 0] == faces[:, 2]))
            if np.any(repeated):
                raise ValueError(
                    "Face %d repeats a vertex index" % np.argmax(repeated))

        self.vertices = _frozen(vertices)  # type: np.ndarray
        self.faces = _frozen(faces)  # type: np.ndarray
        self._digest = None  # type: Optional[str]

    def __repr__(self):
        return "TriangleMesh(%d vertices, %d faces)" % (
            self.num_vertices, self.num_faces)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    def is_empty(self) -> bool:
        return self.num_faces == 0

    def digest(self) -> str:
        """Content hash, used to tie acceleration structures to a mesh."""
        if self._digest is None:
            h = hashlib.sha1()
            h.update(np.ascontiguousarray(self.vertices).tobytes())
            h.update(np.ascontiguousarray(self.faces).tobytes())
            self._digest = h.hexdigest()
        return self._digest

    def triangles(self) -> np.ndarray:
        """(F, 3, 3) array of face corner coordinates."""
        return self.vertices[self.faces]

    def face_area_vectors(self) -> np.ndarray:
        """Half the cross product of the edges, i.e. area times normal."""
        tri = self.triangles()
        return 0.5 * np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])

    def face_areas(self) -> np.ndarray:
        return np.linalg.norm(self.face_area_vectors(), axis=1)

    def face_normals(self) -> np.ndarray:
        """Unit normals; zero for degenerate faces."""
        av = self.face_area_vectors()
        n = np.linalg.norm(av, axis=1, keepdims=True)
        return np.divide(av, n, out=np.zeros_like(av), where=n > 0)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.num_vertices == 0:
            raise ValueError("Empty mesh has no bounds")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def flipped(self) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.faces[:, ::-1])

    def transformed(self, transform: "RigidTransform") -> "TriangleMesh":
        return TriangleMesh(transform.apply(self.vertices), self.faces)

    def scaled(self, scale: float, center=(0., 0., 0.)) -> "TriangleMesh":
        center = np.asarray(center, dtype=np.float64)
        return TriangleMesh(
            (self.vertices - center) * scale + center, self.faces)

    def with_vertices(self, vertices) -> "TriangleMesh":
        return TriangleMesh(vertices, self.faces)

    @staticmethod
    def concatenate(meshes: Sequence["TriangleMesh"]) -> "TriangleMesh":
        vertices = []
        faces = []
        offset = 0
        for m in meshes:
            vertices.append(m.vertices)
            faces.append(m.faces + offset)
            offset += m.num_vertices
        if not vertices:
            return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64))
        return TriangleMesh(np.concatenate(vertices), np.concatenate(faces))


def empty_mesh() -> TriangleMesh:
    return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64))


class RigidTransform:
    """x -> R x + t, with R a proper rotation."""

    def __init__(self, rotation=None, translation=None):
        r = np.eye(3) if rotation is None else np.array(
            rotation, dtype=np.float64).reshape(3, 3)
        t = np.zeros(3) if translation is None else np.array(
            translation, dtype=np.float64).reshape(3)

        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("Non-finite rigid transform")
        err = np.max(np.abs(r.T @ r - np.eye(3)))
        if err > ORTHONORMAL_TOLERANCE:
            raise ValueError("Rotation is not orthonormal (error %g)" % err)
        det = np.linalg.det(r)
        if abs(det - 1.0) > ORTHONORMAL_TOLERANCE:
            raise ValueError("Rotation has determinant %g, not +1" % det)

        self.rotation = _frozen(r)  # type: np.ndarray
        self.translation = _frozen(t)  # type: np.ndarray

    def __repr__(self):
        return "RigidTransform(rotvec=%s, translation=%s)" % (
            np.array2string(self.rotvec(), precision=4),
            np.array2string(self.translation, precision=4))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_translation(cls, translation) -> "RigidTransform":
        return cls(None, translation)

    @classmethod
    def from_rotvec(cls, rotvec, translation=None) -> "RigidTransform":
        r = Rotation.from_rotvec(np.array(rotvec, dtype=np.float64))
        return cls(r.as_matrix(), translation)

    @classmethod
    def from_matrix(cls, matrix) -> "RigidTransform":
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape == (3, 4):
            return cls(m[:, :3], m[:, 3])
        if m.shape != (4, 4) or np.any(m[3] != (0, 0, 0, 1)):
            raise ValueError("Not a rigid 4x4 matrix: %s" % (m.shape,))
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def rotvec(self) -> np.ndarray:
        return Rotation.from_matrix(self.rotation).as_rotvec()

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_vectors(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: x -> self(other(x))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation)

    __matmul__ = compose


class PinholeCamera:
    """Pinhole projection, z forward, pixel (u, v) = (column, row).

    The pose maps camera coordinates to world coordinates.
    """

    def __init__(
            self, fx: float, fy: float, cx: float, cy: float,
            width: int, height: int, pose: RigidTransform = None):
        if not (fx > 0 and fy > 0):
            raise ValueError("Focal lengths must be positive: %r, %r" % (
                fx, fy))
        if width < 1 or height < 1:
            raise ValueError("Bad resolution %dx%d" % (width, height))
        if not (0 <= cx < width and 0 <= cy < height):
            raise ValueError(
                "Principal point (%r, %r) outside %dx%d image" % (
                    cx, cy, width, height))

        self.fx = float(fx)  # type: float
        self.fy = float(fy)  # type: float
        self.cx = float(cx)  # type: float
        self.cy = float(cy)  # type: float
        self.width = int(width)  # type: int
        self.height = int(height)  # type: int
        self.pose = pose or RigidTransform.identity()  # type: RigidTransform

    def __repr__(self):
        return "PinholeCamera(%dx%d, f=(%g, %g), c=(%g, %g))" % (
            self.width, self.height, self.fx, self.fy, self.cx, self.cy)

    @classmethod
    def look_at(
            cls, eye, target, up, fx: float, fy: float, width: int,
            height: int, cx: float = None, cy: float = None
    ) -> "PinholeCamera":
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=np.float64))
        norm = np.linalg.norm(x)
        if norm < 1e-12:
            raise ValueError("Up vector is parallel to the view direction")
        x /= norm
        y = np.cross(z, x)
        pose = RigidTransform(np.stack([x, y, z], axis=1), eye)
        if cx is None:
            cx = width / 2
        if cy is None:
            cy = height / 2
        return cls(fx, fy, cx, cy, width, height, pose)

    def with_pose(self, pose: RigidTransform) -> "PinholeCamera":
        return PinholeCamera(
            self.fx, self.fy, self.cx, self.cy, self.width, self.height, pose)

    def pixel_directions(self) -> np.ndarray:
        """Camera-frame ray directions (z = 1), one per pixel, row-major."""
        v, u = np.mgrid[0:self.height, 0:self.width]
        d = np.empty((self.height * self.width, 3))
        d[:, 0] = (u.ravel() - self.cx) / self.fx
        d[:, 1] = (v.ravel() - self.cy) / self.fy
        d[:, 2] = 1.0
        return d

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "pose": self.pose.matrix()[:3].ravel().tolist()
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PinholeCamera":
        return cls(
            d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"],
            RigidTransform.from_matrix(np.reshape(d["pose"], (3, 4))))


class DepthImage:
    """Per-pixel z depth.  Invalid pixels hold NaN."""

    def __init__(self, values):
        values = np.array(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("Depth image must be 2D, got shape %s" % (
                values.shape,))
        valid = np.isfinite(values)
        values[~valid] = np.nan
        if np.any(values[valid] <= 0):
            raise ValueError("Valid depths must be positive")
        self.values = _frozen(values)  # type: np.ndarray

    @classmethod
    def invalid(cls, width: int, height: int) -> "DepthImage":
        return cls(np.full((height, width), np.nan))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.values)

    def num_valid(self) -> int:
        return int(np.count_nonzero(self.valid_mask()))


class PointCloud:
    def __init__(self, points=None):
        p = np.zeros((0, 3)) if points is None else np.array(
            points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("Point cloud has non-finite coordinates")
        self.points = _frozen(p)  # type: np.ndarray

    def __len__(self):
        return self.points.shape[0]

    def __repr__(self):
        return "PointCloud(%d points)" % len(self)

    def is_empty(self) -> bool:
        return len(self) == 0

    def subsample(self, n: int, seed: int) -> "PointCloud":
        """Random subset of n points without replacement, in index order.

        Clouds with at most n points are returned unchanged.
        """
        if len(self) <= n:
            return self
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(self), size=n, replace=False))
        return PointCloud(self.points[keep])

    @staticmethod
    def concatenate(clouds: Sequence["PointCloud"]) -> "PointCloud":
        if not clouds:
            return PointCloud()
        return PointCloud(np.concatenate([c.points for c in clouds]))


class VoxelGrid:
    """Regular isotropic grid of voxels with min-corner origin.

    data has shape (Dx, Dy, Dz) for scalar payloads or (Dx, Dy, Dz, C) for
    vector payloads.  Flattened voxel order is x fastest, then y, then z:
    flat = i + Dx * (j + Dy * k).  Voxel centers are at
    origin + (index + 0.5) * spacing.
    """

    def __init__(self, origin, spacing: float, dims, data=None):
        origin = np.array(origin, dtype=np.float64).reshape(3)
        dims = tuple(int(d) for d in dims)
        if not spacing > 0:
            raise ValueError("Voxel spacing must be positive: %r" % spacing)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError("Bad voxel grid dimensions %s" % (dims,))
        if data is not None:
            data = np.asarray(data)
            if data.shape[:3] != dims or data.ndim not in (3, 4):
                raise ValueError(
                    "Grid payload shape %s does not match dims %s" % (
                        data.shape, dims))

        self.origin = _frozen(origin)  # type: np.ndarray
        self.spacing = float(spacing)  # type: float
        self.dims = dims  # type: Tuple[int, int, int]
        self.data = data  # type: Optional[np.ndarray]

    def __repr__(self):
        return "%s(origin=%s, spacing=%g, dims=%s)" % (
            type(self).__name__, np.array2string(self.origin, precision=4),
            self.spacing, self.dims)

    @classmethod
    def cube(cls, origin, size: float, resolution: int, data=None):
        return cls(origin, size / resolution, (resolution,) * 3, data)

    @property
    def num_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def channels(self) -> int:
        if self.data is None or self.data.ndim == 3:
            return 1
        return self.data.shape[3]

    def spec(self) -> "VoxelGrid":
        """The same grid without a payload."""
        return VoxelGrid(self.origin, self.spacing, self.dims)

    def same_spec(self, other: "VoxelGrid") -> bool:
        return (self.dims == other.dims and self.spacing == other.spacing and
                np.array_equal(self.origin, other.origin))

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.origin, self.origin + np.array(self.dims) * self.spacing

    def indices(self) -> np.ndarray:
        """(N, 3) voxel indices in flat (x fastest) order."""
        i, j, k = np.meshgrid(
            np.arange(self.dims[0]), np.arange(self.dims[1]),
            np.arange(self.dims[2]), indexing="ij")
        return np.stack(
            [i.ravel(order="F"), j.ravel(order="F"), k.ravel(order="F")],
            axis=1)

    def centers(self) -> np.ndarray:
        return self.index_to_world(self.indices())

    def index_to_world(self, ijk) -> np.ndarray:
        return self.origin + (np.asarray(ijk) + 0.5) * self.spacing

    def world_to_index(self, points) -> np.ndarray:
        """Index of the voxel containing each point (may be out of bounds)."""
        p = np.asarray(points, dtype=np.float64)
        return np.floor((p - self.origin) / self.spacing).astype(np.int64)

    def in_bounds(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk)
        return np.all((ijk >= 0) & (ijk < np.array(self.dims)), axis=-1)

    def flat_index(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk)
        return ijk[..., 0] + self.dims[0] * (
            ijk[..., 1] + self.dims[1] * ijk[..., 2])

    def unflat_index(self, flat) -> np.ndarray:
        flat = np.asarray(flat)
        i = flat % self.dims[0]
        rest = flat // self.dims[0]
        return np.stack([i, rest % self.dims[1], rest // self.dims[1]],
                        axis=-1)

    def flat_data(self) -> np.ndarray:
        """Payload as (N,) or (N, C) in flat voxel order."""
        if self.data is None:
            raise ValueError("Grid has no payload")
        if self.data.ndim == 3:
            return self.data.ravel(order="F")
        return self.data.reshape((self.num_voxels, -1), order="F")

    def from_flat(self, values) -> np.ndarray:
        """Inverse of flat_data: reshape flat-ordered values to grid shape."""
        values = np.asarray(values)
        if values.ndim == 1:
            return values.reshape(self.dims, order="F")
        return values.reshape(self.dims + (values.shape[1],), order="F")

    def with_data(self, data) -> "VoxelGrid":
        return VoxelGrid(self.origin, self.spacing, self.dims, data)

    def trilinear(self, points) -> Tuple[np.ndarray, np.ndarray]:
        """Flat indices and weights of the 8 voxel centers around each point.

        Points outside the lattice of voxel centers are clamped onto it, so
        interpolation replicates the boundary voxels.
        """
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        dims = np.array(self.dims)
        f = np.clip((p - self.origin) / self.spacing - 0.5, 0, dims - 1)
        i0 = np.minimum(np.floor(f).astype(np.int64),
                        np.maximum(dims - 2, 0))
        t = f - i0
        i1 = np.minimum(i0 + 1, dims - 1)

        idx = np.empty((len(p), 8), dtype=np.int64)
        weights = np.empty((len(p), 8))
        for corner in range(8):
            upper = np.array([(corner >> a) & 1 for a in range(3)], dtype=bool)
            idx[:, corner] = self.flat_index(np.where(upper, i1, i0))
            weights[:, corner] = np.prod(np.where(upper, t, 1.0 - t), axis=1)
        return idx, weights


def transform_points(
        transform: RigidTransform, cloud: PointCloud) -> PointCloud:
    return PointCloud(transform.apply(cloud.points))


def backproject_depth(camera: PinholeCamera, depth: DepthImage) -> PointCloud:
    """Lift valid depth pixels to world-frame points, in row-major order."""
    if depth.width != camera.width or depth.height != camera.height:
        raise ValueError(
            "Depth image is %dx%d but camera is %dx%d" % (
                depth.width, depth.height, camera.width, camera.height))

    v, u = np.nonzero(depth.valid_mask())
    z = depth.values[v, u]
    local = np.empty((len(z), 3))
    local[:, 0] = (u - camera.cx) * z / camera.fx
    local[:, 1] = (v - camera.cy) * z / camera.fy
    local[:, 2] = z
    return PointCloud(camera.pose.apply(local))


def sample_surface_with_faces(
        mesh: TriangleMesh, n: int, seed: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Area-weighted surface samples and the face each was drawn from."""
    if n < 0:
        raise ValueError("Sample count must be non-negative: %d" % n)
    if mesh.is_empty():
        raise ValueError("Cannot sample the surface of an empty mesh")
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError("Mesh has zero surface area")

    rng = np.random.default_rng(seed)
    face = rng.choice(mesh.num_faces, size=n, p=areas / total)
    r1, r2 = rng.random((2, n))
    s = np.sqrt(r1)
    tri = mesh.triangles()[face]
    points = ((1.0 - s)[:, None] * tri[:, 0] +
              (s * (1.0 - r2))[:, None] * tri[:, 1] +
              (s * r2)[:, None] * tri[:, 2])
    return points, face


def sample_surface(mesh: TriangleMesh, n: int, seed: int) -> PointCloud:
    return PointCloud(sample_surface_with_faces(mesh, n, seed)[0])


def point_mesh_distance(
        mesh: TriangleMesh, points, threads: int = 1) -> np.ndarray:
    """Exact unsigned distance from each point to the nearest triangle."""
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    if mesh.is_empty():
        return np.full(len(points), np.inf)
    vertices = np.ascontiguousarray(mesh.vertices)
    faces = np.ascontiguousarray(mesh.faces)

    def _distance(chunk):
        out = np.empty(len(chunk))
        kernels.mesh_distance_brute(chunk, vertices, faces, out)
        return out

    return parallel.chunked(_distance, points, threads, chunk_size=1024)


def mesh_area(mesh: TriangleMesh) -> float:
    return float(mesh.face_areas().sum())


def mesh_volume(mesh: TriangleMesh) -> float:
    """Signed enclosed volume by the divergence theorem.

    Positive for closed, outward-oriented meshes.
    """
    tri = mesh.triangles()
    return float(np.einsum(
        "ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)


def mesh_edges(mesh: TriangleMesh) -> Tuple[np.ndarray, np.ndarray]:
    """Unique undirected edges (sorted index pairs) and their face counts."""
    if mesh.is_empty():
        return np.zeros((0, 2), np.int64), np.zeros(0, np.int64)
    f = mesh.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges.sort(axis=1)
    unique, counts = np.unique(edges, axis=0, return_counts=True)
    return unique, counts


def boundary_edges(mesh: TriangleMesh) -> np.ndarray:
    """Edges used by exactly one face."""
    edges, counts = mesh_edges(mesh)
    return edges[counts == 1]


def euler_characteristic(mesh: TriangleMesh) -> int:
    """V - E + F, counting only vertices referenced by a face."""
    edges, _ = mesh_edges(mesh)
    num_vertices = len(np.unique(mesh.faces))
    return num_vertices - len(edges) + mesh.num_faces


def compact(mesh: TriangleMesh) -> TriangleMesh:
    """Drop vertices that no face references, keeping their order."""
    used, inverse = np.unique(mesh.faces, return_inverse=True)
    return TriangleMesh(
        mesh.vertices[used], inverse.reshape(mesh.faces.shape))
