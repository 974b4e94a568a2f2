"""Analytic object meshes used as stand-ins for scanned object models.

All shapes are centered on the origin with faces oriented outward.  The
open cylinder ("bottle") and slotted plate ("foldingrack") are deliberately
not watertight so that their winding number fields have ~0.5 openings.
"""

import enum
import math
from typing import Dict

import numpy as np

from geometry import TriangleMesh, compact


class ShapeKind(enum.Enum):
    SPHERE = "sphere"
    BOX = "box"
    OPEN_CYLINDER = "open-cylinder"
    SLOTTED_PLATE = "slotted-plate"


# Object category names used in datasets
CATEGORY_ALIASES = {
    "bottle": ShapeKind.OPEN_CYLINDER,
    "foldingrack": ShapeKind.SLOTTED_PLATE,
}

DEFAULT_PARAMS = {
    ShapeKind.SPHERE: {"radius": 0.5},
    ShapeKind.BOX: {"extents": (0.8, 0.6, 0.4)},
    ShapeKind.OPEN_CYLINDER: {"radius": 0.3, "height": 0.9},
    ShapeKind.SLOTTED_PLATE: {
        "width": 0.9, "depth": 0.6, "thickness": 0.12, "slots": 3},
}

DEFAULT_RESOLUTION = {
    ShapeKind.SPHERE: 3,
    ShapeKind.BOX: 4,
    ShapeKind.OPEN_CYLINDER: 32,
    ShapeKind.SLOTTED_PLATE: 2,
}


def shape_kind(name: str) -> ShapeKind:
    if name in CATEGORY_ALIASES:
        return CATEGORY_ALIASES[name]
    try:
        return ShapeKind(name)
    except ValueError:
        raise ValueError("Unknown analytic shape %r" % name) from None


def _orient(vertices: np.ndarray, faces: np.ndarray, outward: np.ndarray):
    """Flip faces whose normal points against the given per-face direction."""
    tri = vertices[faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = np.einsum("ij,ij->i", n, outward) < 0
    faces = faces.copy()
    faces[flip] = faces[flip][:, ::-1]
    return faces


def _grid_faces(rows: int, cols: int, keep=None) -> np.ndarray:
    """Two triangles per cell of a (rows+1) x (cols+1) row-major lattice."""
    faces = []
    for r in range(rows):
        for c in range(cols):
            if keep is not None and not keep[r, c]:
                continue
            v00 = r * (cols + 1) + c
            v01 = v00 + 1
            v10 = v00 + cols + 1
            v11 = v10 + 1
            faces.append((v00, v01, v11))
            faces.append((v00, v11, v10))
    return np.array(faces, dtype=np.int64).reshape(-1, 3)


_ICOSAHEDRON_FACES = [
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]
]


def icosphere(radius: float, subdivisions: int) -> TriangleMesh:
    """Subdivided icosahedron with every vertex projected onto the sphere."""
    if not radius > 0:
        raise ValueError("Sphere radius must be positive: %r" % radius)
    if subdivisions < 0:
        raise ValueError("Bad subdivision count %d" % subdivisions)

    t = (1.0 + math.sqrt(5.0)) / 2.0
    vertices = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)
    ]
    vertices = [np.array(v, dtype=np.float64) for v in vertices]
    faces = _ICOSAHEDRON_FACES

    for _ in range(subdivisions):
        midpoints = {}  # type: Dict[tuple, int]

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoints:
                midpoints[key] = len(vertices)
                vertices.append((vertices[a] + vertices[b]) / 2)
            return midpoints[key]

        new_faces = []
        for a, b, c in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            new_faces.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc],
                              [ab, bc, ca]])
        faces = new_faces

    v = np.array(vertices)
    v = radius * v / np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array(faces, dtype=np.int64)
    return TriangleMesh(v, _orient(v, f, v[f].mean(axis=1)))


def hemisphere(
        radius: float = 1.0, segments: int = 32,
        rings: int = 8) -> TriangleMesh:
    """Open upper hemisphere whose rim lies exactly in z = 0.

    The rim is one boundary loop, so the winding number at the center of
    the opening is exactly 0.5.
    """
    if not radius > 0:
        raise ValueError("Hemisphere radius must be positive: %r" % radius)
    if segments < 3 or rings < 1:
        raise ValueError("Bad hemisphere resolution %d x %d" % (
            segments, rings))

    polar = 0.5 * math.pi * np.arange(1, rings + 1) / rings
    az = 2 * math.pi * np.arange(segments) / segments
    ring = np.stack([
        np.outer(np.sin(polar), np.cos(az)),
        np.outer(np.sin(polar), np.sin(az)),
        np.repeat(np.cos(polar)[:, None], segments, axis=1)], axis=-1)
    ring[-1, :, 2] = 0.0
    v = radius * np.concatenate([[[0.0, 0.0, 1.0]], ring.reshape(-1, 3)])

    faces = []
    for k in range(segments):
        faces.append((0, 1 + k, 1 + (k + 1) % segments))
    for r in range(1, rings):
        a = 1 + (r - 1) * segments
        b = 1 + r * segments
        for k in range(segments):
            k1 = (k + 1) % segments
            faces.append((a + k, b + k, b + k1))
            faces.append((a + k, b + k1, a + k1))
    f = np.array(faces, dtype=np.int64)
    return TriangleMesh(v, _orient(v, f, v[f].mean(axis=1)))


def box(extents, subdivisions: int = 1) -> TriangleMesh:
    """Closed box with each face split into a subdivisions^2 lattice."""
    extents = np.asarray(extents, dtype=np.float64).reshape(3)
    if np.any(extents <= 0):
        raise ValueError("Box extents must be positive: %s" % extents)
    if subdivisions < 1:
        raise ValueError("Bad subdivision count %d" % subdivisions)

    n = subdivisions
    coords = []
    faces = []
    outward = []
    offset = 0
    lattice = np.stack(np.meshgrid(
        np.arange(n + 1), np.arange(n + 1), indexing="ij"), axis=-1
    ).reshape(-1, 2)
    side_faces = _grid_faces(n, n)
    for axis in range(3):
        b, c = [a for a in range(3) if a != axis]
        for side in (0, 1):
            pts = np.zeros((len(lattice), 3), dtype=np.int64)
            pts[:, axis] = side * n
            pts[:, b] = lattice[:, 0]
            pts[:, c] = lattice[:, 1]
            coords.append(pts)
            faces.append(side_faces + offset)
            direction = np.zeros(3)
            direction[axis] = 1.0 if side else -1.0
            outward.append(np.tile(direction, (len(side_faces), 1)))
            offset += len(pts)

    # Merge lattice points shared between sides
    unique, inverse = np.unique(
        np.concatenate(coords), axis=0, return_inverse=True)
    f = inverse.reshape(-1)[np.concatenate(faces)]
    v = (unique / n - 0.5) * extents
    return TriangleMesh(v, _orient(v, f, np.concatenate(outward)))


def open_cylinder(
        radius: float, height: float, segments: int, rows: int = None
) -> TriangleMesh:
    """Tube along z with no caps; both rims are boundary loops."""
    if not (radius > 0 and height > 0):
        raise ValueError(
            "Cylinder radius and height must be positive: %r, %r" % (
                radius, height))
    if segments < 3:
        raise ValueError("Cylinder needs at least 3 segments: %d" % segments)
    if rows is None:
        rows = max(1, int(round(height * segments / (2 * math.pi * radius))))

    theta = 2 * math.pi * np.arange(segments) / segments
    z = np.linspace(-height / 2, height / 2, rows + 1)
    v = np.empty(((rows + 1) * segments, 3))
    v[:, 0] = np.tile(radius * np.cos(theta), rows + 1)
    v[:, 1] = np.tile(radius * np.sin(theta), rows + 1)
    v[:, 2] = np.repeat(z, segments)

    faces = []
    for r in range(rows):
        for k in range(segments):
            v00 = r * segments + k
            v01 = r * segments + (k + 1) % segments
            v10 = v00 + segments
            v11 = v01 + segments
            faces.append((v00, v01, v11))
            faces.append((v00, v11, v10))
    f = np.array(faces, dtype=np.int64)
    radial = v[f].mean(axis=1) * np.array([1.0, 1.0, 0.0])
    return TriangleMesh(v, _orient(v, f, radial))


def slotted_plate(
        width: float, depth: float, thickness: float, slots: int,
        subdivisions: int = 1) -> TriangleMesh:
    """Flat plate with through-slots, like a folding drying rack.

    The outer rim is walled but the slot sides are left open, so the top
    and bottom sheets each have one boundary loop per slot.
    """
    if not (width > 0 and depth > 0 and thickness > 0):
        raise ValueError("Plate dimensions must be positive")
    if slots < 1 or subdivisions < 1:
        raise ValueError("Bad slot count %d or subdivisions %d" % (
            slots, subdivisions))

    # Coarse cells: slots at odd columns, spanning all but the edge rows
    nx = 2 * slots + 1
    ny = 5
    cols = nx * subdivisions
    rows = ny * subdivisions
    coarse_x = np.arange(cols) // subdivisions
    coarse_y = np.arange(rows) // subdivisions
    slot = ((coarse_x[None, :] % 2 == 1) &
            (coarse_y[:, None] >= 1) & (coarse_y[:, None] <= ny - 2))
    sheet = _grid_faces(rows, cols, keep=~slot)

    ys, xs = np.mgrid[0:rows + 1, 0:cols + 1]
    x = (xs.ravel() / cols - 0.5) * width
    y = (ys.ravel() / rows - 0.5) * depth
    per_sheet = len(x)
    top = np.stack([x, y, np.full(per_sheet, thickness / 2)], axis=1)
    bottom = np.stack([x, y, np.full(per_sheet, -thickness / 2)], axis=1)
    v = np.concatenate([top, bottom])

    # Rim walls follow the lattice perimeter counterclockwise
    perimeter = (
        [(0, c) for c in range(cols)] +
        [(r, cols) for r in range(rows)] +
        [(rows, c) for c in range(cols, 0, -1)] +
        [(r, 0) for r in range(rows, 0, -1)])
    walls = []
    for i, (r, c) in enumerate(perimeter):
        r2, c2 = perimeter[(i + 1) % len(perimeter)]
        p = r * (cols + 1) + c
        q = r2 * (cols + 1) + c2
        walls.append((p, q, q + per_sheet))
        walls.append((p, q + per_sheet, p + per_sheet))
    walls = np.array(walls, dtype=np.int64)

    f = np.concatenate([sheet, sheet + per_sheet, walls])
    outward = np.zeros((len(f), 3))
    outward[:len(sheet), 2] = 1.0
    outward[len(sheet):2 * len(sheet), 2] = -1.0
    outward[2 * len(sheet):] = v[walls].mean(axis=1) * np.array(
        [1.0, 1.0, 0.0])
    return compact(TriangleMesh(v, _orient(v, f, outward)))


def make_analytic_mesh(
        kind, params: Dict = None, resolution: int = None) -> TriangleMesh:
    """Build an analytic shape.

    resolution is the subdivision level for spheres, per-edge subdivisions
    for boxes, ring segment count for cylinders and per-cell subdivisions
    for slotted plates.
    """
    if not isinstance(kind, ShapeKind):
        kind = shape_kind(kind)
    p = dict(DEFAULT_PARAMS[kind])
    p.update(params or {})
    if resolution is None:
        resolution = DEFAULT_RESOLUTION[kind]

    if kind == ShapeKind.SPHERE:
        return icosphere(p["radius"], resolution)
    if kind == ShapeKind.BOX:
        return box(p["extents"], resolution)
    if kind == ShapeKind.OPEN_CYLINDER:
        return open_cylinder(p["radius"], p["height"], resolution)
    return slotted_plate(
        p["width"], p["depth"], p["thickness"], int(p["slots"]), resolution)
