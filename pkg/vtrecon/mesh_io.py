"""Readers and writers for meshes, point clouds, grids, depth and tactile
images.

  OBJ   vertices and triangular faces only, 17 significant digits so that
        coordinates round trip exactly.
  PLY   ASCII point clouds.
  WNG1  voxel grid: magic, dims (3 x u32), origin (3 x f64), spacing (f64),
        then an f32 payload in x-fastest order.  Little-endian.
  DPT1  depth image: magic, width, height (u32), fx, fy, cx, cy (f64), the
        camera-to-world pose as a row-major 3x4 matrix (12 x f64), then f32
        depths in row-major order.  Invalid pixels are stored as 0.0.
  PGM   tactile intensity images as 16-bit greyscale, full scale = 1.0.
"""

import struct
from typing import Tuple

import numpy as np
from PIL import Image

from geometry import (
    DepthImage, PinholeCamera, PointCloud, RigidTransform, TriangleMesh,
    VoxelGrid)

WNG_MAGIC = b"WNG1"
WNG_HEADER = struct.Struct("<4s3I3dd")

DEPTH_MAGIC = b"DPT1"
DEPTH_HEADER = struct.Struct("<4s2I4d12d")

PGM_FULL_SCALE = 65535


class FormatError(Exception):
    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason

    def __str__(self):
        return "%s: %s" % (self.path, self.reason)


def write_obj(path: str, mesh: TriangleMesh) -> None:
    with open(path, "w") as f:
        for v in mesh.vertices:
            f.write("v %.17g %.17g %.17g\n" % tuple(v))
        for face in mesh.faces + 1:
            f.write("f %d %d %d\n" % tuple(face))


def read_obj(path: str) -> TriangleMesh:
    """Parse v and f records; texture/normal indices are ignored."""
    vertices = []
    faces = []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    vertices.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    if len(parts) != 4:
                        raise FormatError(
                            path, "line %d: face with %d corners" % (
                                lineno, len(parts) - 1))
                    face = []
                    for corner in parts[1:]:
                        idx = int(corner.split("/")[0])
                        # Negative indices count back from the latest vertex
                        face.append(
                            idx - 1 if idx > 0 else len(vertices) + idx)
                    faces.append(face)
            except ValueError:
                raise FormatError(
                    path, "line %d: cannot parse %r" % (lineno, line.strip())
                ) from None

    try:
        return TriangleMesh(
            np.array(vertices, dtype=np.float64).reshape(-1, 3),
            np.array(faces, dtype=np.int64).reshape(-1, 3))
    except ValueError as e:
        raise FormatError(path, str(e)) from None


def write_ply(path: str, cloud: PointCloud) -> None:
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write("element vertex %d\n" % len(cloud))
        for axis in "xyz":
            f.write("property double %s\n" % axis)
        f.write("end_header\n")
        for p in cloud.points:
            f.write("%.17g %.17g %.17g\n" % tuple(p))


def read_ply(path: str) -> PointCloud:
    with open(path, "r") as f:
        if f.readline().strip() != "ply":
            raise FormatError(path, "not a PLY file")
        count = None
        properties = []
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "format" and parts[1] != "ascii":
                raise FormatError(path, "only ASCII PLY is supported")
            if parts[:2] == ["element", "vertex"]:
                count = int(parts[2])
            elif parts[0] == "property" and count is not None:
                properties.append(parts[-1])
            elif parts[0] == "end_header":
                break
        if count is None or properties[:3] != ["x", "y", "z"]:
            raise FormatError(path, "missing x, y, z vertex properties")

        points = np.zeros((count, 3))
        for i in range(count):
            values = f.readline().split()
            if len(values) < 3:
                raise FormatError(path, "truncated at vertex %d" % i)
            points[i] = [float(x) for x in values[:3]]
    return PointCloud(points)


def write_wng(path: str, grid: VoxelGrid) -> None:
    with open(path, "wb") as f:
        f.write(WNG_HEADER.pack(
            WNG_MAGIC, *grid.dims, *grid.origin, grid.spacing))
        f.write(grid.flat_data().astype("<f4").tobytes())


def read_wng(path: str) -> Tuple[VoxelGrid, np.ndarray]:
    """Grid spec and its payload as float64 in grid shape."""
    with open(path, "rb") as f:
        header = f.read(WNG_HEADER.size)
        if len(header) != WNG_HEADER.size:
            raise FormatError(path, "truncated header")
        magic, dx, dy, dz, ox, oy, oz, spacing = WNG_HEADER.unpack(header)
        if magic != WNG_MAGIC:
            raise FormatError(path, "bad magic %r" % magic)
        payload = np.frombuffer(f.read(), dtype="<f4")

    try:
        spec = VoxelGrid((ox, oy, oz), spacing, (dx, dy, dz))
    except ValueError as e:
        raise FormatError(path, str(e)) from None
    if len(payload) != spec.num_voxels:
        raise FormatError(path, "expected %d values, found %d" % (
            spec.num_voxels, len(payload)))
    return spec, spec.from_flat(payload.astype(np.float64))


def write_depth(path: str, camera: PinholeCamera, depth: DepthImage) -> None:
    if depth.width != camera.width or depth.height != camera.height:
        raise ValueError("Depth image does not match camera resolution")
    pose = camera.pose.matrix()[:3].ravel()
    with open(path, "wb") as f:
        f.write(DEPTH_HEADER.pack(
            DEPTH_MAGIC, camera.width, camera.height, camera.fx, camera.fy,
            camera.cx, camera.cy, *pose))
        values = np.where(depth.valid_mask(), depth.values, 0.0)
        f.write(values.astype("<f4").tobytes())


def read_depth(path: str) -> Tuple[PinholeCamera, DepthImage]:
    with open(path, "rb") as f:
        header = f.read(DEPTH_HEADER.size)
        if len(header) != DEPTH_HEADER.size:
            raise FormatError(path, "truncated header")
        fields = DEPTH_HEADER.unpack(header)
        if fields[0] != DEPTH_MAGIC:
            raise FormatError(path, "bad magic %r" % fields[0])
        width, height = fields[1:3]
        payload = np.frombuffer(f.read(), dtype="<f4")

    if len(payload) != width * height:
        raise FormatError(path, "expected %d depths, found %d" % (
            width * height, len(payload)))
    try:
        pose = RigidTransform.from_matrix(np.reshape(fields[7:19], (3, 4)))
        camera = PinholeCamera(*fields[3:7], width, height, pose)
    except ValueError as e:
        raise FormatError(path, str(e)) from None

    values = payload.astype(np.float64).reshape(height, width)
    values[values <= 0] = np.nan
    return camera, DepthImage(values)


def write_pgm16(path: str, image: np.ndarray) -> None:
    """Store an image with values in [0, 1] as 16-bit PGM."""
    image = np.asarray(image, dtype=np.float64)
    if image.size and (image.min() < 0 or image.max() > 1):
        raise ValueError("Tactile intensities must lie in [0, 1]")
    levels = np.round(image * PGM_FULL_SCALE).astype(np.int32)
    Image.fromarray(levels).save(path, format="PPM")


def read_pgm16(path: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            levels = np.asarray(img, dtype=np.float64)
    except OSError as e:
        raise FormatError(path, str(e)) from None
    return levels / PGM_FULL_SCALE
