"""Compiled inner loops: ray/triangle hits, solid angles, BVH traversal.

All kernels take plain float64/int64 arrays so they can be shared between the
mesh, BVH and rendering modules, and release the GIL so that callers can run
them from several threads at once.
"""

import math

import numba
import numpy as np

# Slack on barycentric bounds when accepting hits on shared edges
EDGE_TOLERANCE = 1e-12

# BVH traversal stack.  Median splits keep trees far shallower than this.
MAX_STACK = 128

FOUR_PI = 4.0 * math.pi


@numba.njit(nogil=True, error_model="numpy")
def ray_triangle(o, d, vertices, ia, ib, ic) -> float:
    """Möller-Trumbore intersection.  Returns ray parameter t or inf."""
    ax = vertices[ia, 0]
    ay = vertices[ia, 1]
    az = vertices[ia, 2]
    e1x = vertices[ib, 0] - ax
    e1y = vertices[ib, 1] - ay
    e1z = vertices[ib, 2] - az
    e2x = vertices[ic, 0] - ax
    e2y = vertices[ic, 1] - ay
    e2z = vertices[ic, 2] - az

    px = d[1] * e2z - d[2] * e2y
    py = d[2] * e2x - d[0] * e2z
    pz = d[0] * e2y - d[1] * e2x
    det = e1x * px + e1y * py + e1z * pz
    if det == 0.0:
        return np.inf
    inv = 1.0 / det

    sx = o[0] - ax
    sy = o[1] - ay
    sz = o[2] - az
    u = (sx * px + sy * py + sz * pz) * inv
    if u < -EDGE_TOLERANCE or u > 1.0 + EDGE_TOLERANCE:
        return np.inf

    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    if v < -EDGE_TOLERANCE or u + v > 1.0 + EDGE_TOLERANCE:
        return np.inf

    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= 0.0:
        return np.inf
    return t


@numba.njit(nogil=True, error_model="numpy")
def solid_angle(q, vertices, ia, ib, ic) -> float:
    """Signed solid angle of a triangle at q (van Oosterom-Strackee)."""
    ax = vertices[ia, 0] - q[0]
    ay = vertices[ia, 1] - q[1]
    az = vertices[ia, 2] - q[2]
    bx = vertices[ib, 0] - q[0]
    by = vertices[ib, 1] - q[1]
    bz = vertices[ib, 2] - q[2]
    cx = vertices[ic, 0] - q[0]
    cy = vertices[ic, 1] - q[1]
    cz = vertices[ic, 2] - q[2]

    la = math.sqrt(ax * ax + ay * ay + az * az)
    lb = math.sqrt(bx * bx + by * by + bz * bz)
    lc = math.sqrt(cx * cx + cy * cy + cz * cz)

    det = (ax * (by * cz - bz * cy) + ay * (bz * cx - bx * cz) +
           az * (bx * cy - by * cx))
    den = (la * lb * lc + (ax * bx + ay * by + az * bz) * lc +
           (bx * cx + by * cy + bz * cz) * la +
           (cx * ax + cy * ay + cz * az) * lb)
    return 2.0 * math.atan2(det, den)


@numba.njit(nogil=True, error_model="numpy")
def _closest_sq(ax, ay, az, abx, aby, abz, acx, acy, acz, v, w, p) -> float:
    cx = ax + abx * v + acx * w - p[0]
    cy = ay + aby * v + acy * w - p[1]
    cz = az + abz * v + acz * w - p[2]
    return cx * cx + cy * cy + cz * cz


@numba.njit(nogil=True, error_model="numpy")
def point_triangle_sq(p, vertices, ia, ib, ic) -> float:
    """Squared distance from p to the closest point of a triangle.

    Voronoi-region walk; the closest point is a + v * ab + w * ac.
    """
    ax = vertices[ia, 0]
    ay = vertices[ia, 1]
    az = vertices[ia, 2]
    abx = vertices[ib, 0] - ax
    aby = vertices[ib, 1] - ay
    abz = vertices[ib, 2] - az
    acx = vertices[ic, 0] - ax
    acy = vertices[ic, 1] - ay
    acz = vertices[ic, 2] - az
    apx = p[0] - ax
    apy = p[1] - ay
    apz = p[2] - az

    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return _closest_sq(ax, ay, az, abx, aby, abz, acx, acy, acz,
                           0.0, 0.0, p)

    bpx = apx - abx
    bpy = apy - aby
    bpz = apz - abz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return _closest_sq(ax, ay, az, abx, aby, abz, acx, acy, acz,
                           1.0, 0.0, p)

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0 and d1 - d3 != 0.0:
        return _closest_sq(ax, ay, az, abx, aby, abz, acx, acy, acz,
                           d1 / (d1 - d3), 0.0, p)

    cpx = apx - acx
    cpy = apy - acy
    cpz = apz - acz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return _closest_sq(ax, ay, az, abx, aby, abz, acx, acy, acz,
                           0.0, 1.0, p)

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0 and d2 - d6 != 0.0:
        return _closest_sq(ax, ay, az, abx, aby, abz, acx, acy, acz,
                           0.0, d2 / (d2 - d6), p)

    va = d3 * d6 - d5 * d4
    e43 = d4 - d3
    e56 = d5 - d6
    if va <= 0.0 and e43 >= 0.0 and e56 >= 0.0 and e43 + e56 != 0.0:
        w = e43 / (e43 + e56)
        return _closest_sq(ax, ay, az, abx, aby, abz, acx, acy, acz,
                           1.0 - w, w, p)

    denom = va + vb + vc
    if denom == 0.0:
        # Degenerate triangle: fall back to the nearest vertex
        return min(
            _closest_sq(ax, ay, az, abx, aby, abz, acx, acy, acz,
                        0.0, 0.0, p),
            _closest_sq(ax, ay, az, abx, aby, abz, acx, acy, acz,
                        1.0, 0.0, p),
            _closest_sq(ax, ay, az, abx, aby, abz, acx, acy, acz,
                        0.0, 1.0, p))
    return _closest_sq(ax, ay, az, abx, aby, abz, acx, acy, acz,
                       vb / denom, vc / denom, p)


@numba.njit(nogil=True, error_model="numpy")
def ray_box(o, d, bmin, bmax, t_limit) -> float:
    """Slab test.  Returns entry parameter, or inf on a miss."""
    t0 = 0.0
    t1 = t_limit
    for a in range(3):
        if d[a] == 0.0:
            if o[a] < bmin[a] or o[a] > bmax[a]:
                return np.inf
        else:
            inv = 1.0 / d[a]
            ta = (bmin[a] - o[a]) * inv
            tb = (bmax[a] - o[a]) * inv
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
            if t0 > t1:
                return np.inf
    return t0


@numba.njit(nogil=True, error_model="numpy")
def raycast_bvh(
        origins, directions, vertices, faces, order,
        node_min, node_max, left, right, start, count,
        out_t, out_face):
    """Nearest hit per ray.  Equal-t hits resolve to the lowest face index."""
    stack = np.empty(MAX_STACK, np.int64)
    for r in range(origins.shape[0]):
        o = origins[r]
        d = directions[r]
        best_t = np.inf
        best_f = -1
        sp = 1
        stack[0] = 0
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if count[node] == 0 and left[node] < 0:
                continue
            entry = ray_box(o, d, node_min[node], node_max[node], np.inf)
            if entry > best_t:
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    f = order[k]
                    t = ray_triangle(o, d, vertices,
                                     faces[f, 0], faces[f, 1], faces[f, 2])
                    if t < best_t or (t == best_t and t < np.inf and
                                      f < best_f):
                        best_t = t
                        best_f = f
            else:
                stack[sp] = right[node]
                stack[sp + 1] = left[node]
                sp += 2
        out_t[r] = best_t
        out_face[r] = best_f


@numba.njit(nogil=True, error_model="numpy")
def winding_exact(queries, vertices, faces, out):
    for i in range(queries.shape[0]):
        q = queries[i]
        total = 0.0
        for f in range(faces.shape[0]):
            total += solid_angle(q, vertices, faces[f, 0], faces[f, 1],
                                 faces[f, 2])
        out[i] = total / FOUR_PI


@numba.njit(nogil=True, error_model="numpy")
def winding_far_field(
        queries, vertices, faces, order, left, right, start, count,
        normal, centroid, radius, ratio, out):
    """Winding numbers with dipole approximation for well-separated nodes.

    A node is approximated when radius < ratio * distance(q, centroid);
    otherwise it is opened, and leaves are summed exactly.
    """
    stack = np.empty(MAX_STACK, np.int64)
    for i in range(queries.shape[0]):
        q = queries[i]
        total = 0.0
        sp = 1
        stack[0] = 0
        while sp > 0:
            sp -= 1
            node = stack[sp]
            rx = centroid[node, 0] - q[0]
            ry = centroid[node, 1] - q[1]
            rz = centroid[node, 2] - q[2]
            dist = math.sqrt(rx * rx + ry * ry + rz * rz)
            if dist > 0.0 and radius[node] < ratio * dist:
                total += (normal[node, 0] * rx + normal[node, 1] * ry +
                          normal[node, 2] * rz) / (dist * dist * dist)
            elif left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    f = order[k]
                    total += solid_angle(q, vertices, faces[f, 0],
                                         faces[f, 1], faces[f, 2])
            else:
                stack[sp] = right[node]
                stack[sp + 1] = left[node]
                sp += 2
        out[i] = total / FOUR_PI


@numba.njit(nogil=True, error_model="numpy")
def mesh_distance_brute(points, vertices, faces, out):
    for i in range(points.shape[0]):
        p = points[i]
        best = np.inf
        for f in range(faces.shape[0]):
            d = point_triangle_sq(p, vertices, faces[f, 0], faces[f, 1],
                                  faces[f, 2])
            if d < best:
                best = d
        out[i] = math.sqrt(best)
