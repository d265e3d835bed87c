"""Triangle meshes, BVH construction and ray casting.

The BVH is stored as flat numpy arrays so traversal can run inside numba
kernels. Nodes are split with a binned surface-area heuristic; leaves are
formed once splitting stops paying off or ``LEAF_SIZE`` is reached.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numba
import numpy as np
from numba import njit, prange

from .errors import FormatError, GeometryError, ValidationError

# Numba may have been imported before the package set its environment default.
# The layer is only chosen at the first parallel launch, so re-reading still works.
numba.config.THREADING_LAYER_PRIORITY = os.environ.get(
    "NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb").split()

DET_EPS = 1e-9
BARY_EPS = 1e-9
MIN_HIT_DISTANCE = 1e-6
LEAF_SIZE = 4
SAH_BINS = 16
_CHUNK = 256


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    object_id: int = 0

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(self.vertices)):
            raise GeometryError("mesh vertices must be finite")
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise GeometryError("triangle index out of range")
        self.object_id = int(self.object_id)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def transformed(self, rotation: np.ndarray, translation) -> "TriangleMesh":
        v = self.vertices @ np.asarray(rotation).T + np.asarray(translation, dtype=np.float64)
        return TriangleMesh(v, self.triangles.copy(), self.object_id)


@dataclass(frozen=True)
class Ray:
    origin: tuple
    direction: tuple

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValidationError("ray direction must be a unit vector")


@dataclass(frozen=True)
class Hit:
    distance: float
    point: tuple
    object_id: int
    triangle: int


# -- mesh helpers -------------------------------------------------------------

def load_obj(path, scale: float = 1.0, object_id: int = 0) -> TriangleMesh:
    """Read the ``v``/``f`` subset of a Wavefront OBJ file.

    Faces may reference ``v/vt/vn`` triples and negative (relative) indices;
    polygons are fan-triangulated. Every other record is ignored.
    """
    vertices = []
    triangles = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                try:
                    xyz = [float(p) for p in parts[1:4]]
                except ValueError:
                    raise FormatError(f"{path}:{lineno}: unparsable vertex") from None
                if len(xyz) != 3:
                    raise FormatError(f"{path}:{lineno}: vertex needs 3 coordinates")
                if not all(math.isfinite(c) for c in xyz):
                    raise FormatError(f"{path}:{lineno}: non-finite vertex")
                vertices.append(xyz)
            elif parts[0] == "f":
                idx = []
                for token in parts[1:]:
                    try:
                        i = int(token.split("/")[0])
                    except ValueError:
                        raise FormatError(f"{path}:{lineno}: unparsable face index") from None
                    i = i - 1 if i > 0 else len(vertices) + i
                    if not 0 <= i < len(vertices):
                        raise FormatError(f"{path}:{lineno}: face index out of range")
                    idx.append(i)
                if len(idx) < 3:
                    raise FormatError(f"{path}:{lineno}: face needs at least 3 vertices")
                for k in range(1, len(idx) - 1):
                    triangles.append((idx[0], idx[k], idx[k + 1]))
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3) * float(scale)
    return TriangleMesh(v, np.asarray(triangles, dtype=np.int64).reshape(-1, 3), object_id)


def save_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {float(x)!r} {float(y)!r} {float(z)!r}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


_BOX_FACES = np.array([
    [0, 2, 1], [0, 3, 2],  # bottom (-z)
    [4, 5, 6], [4, 6, 7],  # top (+z)
    [0, 1, 5], [0, 5, 4],  # -y
    [2, 3, 7], [2, 7, 6],  # +y
    [1, 2, 6], [1, 6, 5],  # +x
    [3, 0, 4], [3, 4, 7],  # -x
], dtype=np.int64)


def box_mesh(center, dims, heading: float = 0.0, object_id: int = 0) -> TriangleMesh:
    """Closed 12-triangle box, yawed by ``heading`` radians about +z."""
    l, w, h = (float(d) / 2.0 for d in dims)
    local = np.array([
        [-l, -w, -h], [l, -w, -h], [l, w, -h], [-l, w, -h],
        [-l, -w, h], [l, -w, h], [l, w, h], [-l, w, h],
    ])
    return TriangleMesh(local, _BOX_FACES.copy(), object_id).transformed(
        yaw_matrix(heading), center)


def plane_mesh(half_size: float, z: float = 0.0, object_id: int = 0) -> TriangleMesh:
    """Horizontal square quad (two triangles) centred on the z axis."""
    s = float(half_size)
    v = [[-s, -s, z], [s, -s, z], [s, s, z], [-s, s, z]]
    return TriangleMesh(v, [[0, 1, 2], [0, 2, 3]], object_id)


def sphere_mesh(radius: float, center=(0.0, 0.0, 0.0), n_lat: int = 16, n_lon: int = 32,
                object_id: int = 0, lon_offset: float = 0.0) -> TriangleMesh:
    """Closed UV sphere."""
    verts = [[0.0, 0.0, 1.0]]
    for i in range(1, n_lat):
        theta = math.pi * i / n_lat
        for j in range(n_lon):
            phi = 2 * math.pi * j / n_lon + lon_offset
            verts.append([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi),
                          math.cos(theta)])
    verts.append([0.0, 0.0, -1.0])
    south = len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * n_lon + (j % n_lon)

    tris = []
    for j in range(n_lon):
        tris.append([0, ring(1, j), ring(1, j + 1)])
        tris.append([south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)])
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            tris.append([a, c, d])
            tris.append([a, d, b])
    v = np.asarray(verts) * float(radius) + np.asarray(center, dtype=np.float64)
    return TriangleMesh(v, tris, object_id)


def yaw_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# -- BVH ----------------------------------------------------------------------

class Bvh:
    """Immutable BVH over the triangles of one or more meshes.

    Triangle indices reported by queries are positions in the concatenation
    of the input meshes, in input order.
    """

    def __init__(self, node_min, node_max, node_left, node_right, node_start, node_count,
                 v0, e1, e2, tri_index, tri_object, depth):
        self.node_min = node_min
        self.node_max = node_max
        self.node_left = node_left
        self.node_right = node_right
        self.node_start = node_start
        self.node_count = node_count
        self.v0 = v0
        self.e1 = e1
        self.e2 = e2
        self.tri_index = tri_index
        self.tri_object = tri_object
        self.depth = depth
        for arr in (node_min, node_max, node_left, node_right, node_start, node_count,
                    v0, e1, e2, tri_index, tri_object):
            arr.setflags(write=False)

    @property
    def n_triangles(self) -> int:
        return len(self.tri_index)

    @property
    def n_nodes(self) -> int:
        return len(self.node_left)

    def leaves(self):
        """Yield ``(node, triangle_slots)`` for every leaf."""
        for n in range(self.n_nodes):
            if self.node_left[n] < 0:
                s = self.node_start[n]
                yield n, np.arange(s, s + self.node_count[n])

    def triangle_vertices(self, slots) -> np.ndarray:
        """Vertices (k, 3, 3) of the triangles at the given internal slots."""
        a = self.v0[slots]
        return np.stack([a, a + self.e1[slots], a + self.e2[slots]], axis=1)


def build_bvh(meshes: Sequence[TriangleMesh]) -> Bvh:
    """Build a BVH over every triangle of ``meshes``."""
    meshes = list(meshes)
    if not meshes or sum(m.n_triangles for m in meshes) == 0:
        raise GeometryError("no geometry")
    tri_vertices = np.concatenate([m.vertices[m.triangles] for m in meshes if m.n_triangles])
    tri_object = np.concatenate([np.full(m.n_triangles, m.object_id, dtype=np.int64)
                                 for m in meshes if m.n_triangles])
    lo = np.ascontiguousarray(tri_vertices.min(axis=1))
    hi = np.ascontiguousarray(tri_vertices.max(axis=1))
    centroids = np.ascontiguousarray(tri_vertices.mean(axis=1))
    # Padding keeps the slab test conservative for flat or grazing geometry.
    pad = 1e-7 * (1.0 + float(np.abs(tri_vertices).max()))
    (node_min, node_max, node_left, node_right, node_start, node_count,
     order, depth) = _build_sah(lo, hi, centroids, pad, LEAF_SIZE, SAH_BINS)
    tv = tri_vertices[order]
    return Bvh(
        node_min, node_max, node_left, node_right, node_start, node_count,
        np.ascontiguousarray(tv[:, 0]),
        np.ascontiguousarray(tv[:, 1] - tv[:, 0]),
        np.ascontiguousarray(tv[:, 2] - tv[:, 0]),
        order, tri_object[order], int(depth),
    )


@njit(cache=True)
def _half_area(mn, mx):
    dx = mx[0] - mn[0]
    dy = mx[1] - mn[1]
    dz = mx[2] - mn[2]
    return dx * dy + dy * dz + dz * dx


@njit(cache=True)
def _build_sah(lo, hi, cen, pad, leaf_size, n_bins):
    n = lo.shape[0]
    order = np.arange(n)
    max_nodes = 2 * n
    node_min = np.empty((max_nodes, 3))
    node_max = np.empty((max_nodes, 3))
    node_left = np.full(max_nodes, -1, dtype=np.int64)
    node_right = np.full(max_nodes, -1, dtype=np.int64)
    node_start = np.zeros(max_nodes, dtype=np.int64)
    node_count = np.zeros(max_nodes, dtype=np.int64)

    st_node = np.empty(max_nodes, dtype=np.int64)
    st_start = np.empty(max_nodes, dtype=np.int64)
    st_stop = np.empty(max_nodes, dtype=np.int64)
    st_level = np.empty(max_nodes, dtype=np.int64)
    bin_count = np.empty(n_bins, dtype=np.int64)
    bin_lo = np.empty((n_bins, 3))
    bin_hi = np.empty((n_bins, 3))
    right_area = np.empty(n_bins)
    right_count = np.empty(n_bins, dtype=np.int64)
    bmin = np.empty(3)
    bmax = np.empty(3)
    cmin = np.empty(3)
    cmax = np.empty(3)
    acc_lo = np.empty(3)
    acc_hi = np.empty(3)

    n_nodes = 1
    depth = 0
    sp = 1
    st_node[0] = 0
    st_start[0] = 0
    st_stop[0] = n
    st_level[0] = 1
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        stop = st_stop[sp]
        level = st_level[sp]
        if level > depth:
            depth = level
        for ax in range(3):
            bmin[ax] = np.inf
            bmax[ax] = -np.inf
            cmin[ax] = np.inf
            cmax[ax] = -np.inf
        for i in range(start, stop):
            t = order[i]
            for ax in range(3):
                bmin[ax] = min(bmin[ax], lo[t, ax])
                bmax[ax] = max(bmax[ax], hi[t, ax])
                cmin[ax] = min(cmin[ax], cen[t, ax])
                cmax[ax] = max(cmax[ax], cen[t, ax])
        for ax in range(3):
            node_min[node, ax] = bmin[ax] - pad
            node_max[node, ax] = bmax[ax] + pad
        count = stop - start
        if count <= leaf_size:
            node_start[node] = start
            node_count[node] = count
            continue

        parent_area = _half_area(bmin, bmax)
        best_cost = np.inf
        best_axis = -1
        best_split = -1
        for ax in range(3):
            ext = cmax[ax] - cmin[ax]
            if ext <= 0.0:
                continue
            for k in range(n_bins):
                bin_count[k] = 0
                for j in range(3):
                    bin_lo[k, j] = np.inf
                    bin_hi[k, j] = -np.inf
            scale = n_bins / ext
            for i in range(start, stop):
                t = order[i]
                k = int((cen[t, ax] - cmin[ax]) * scale)
                if k >= n_bins:
                    k = n_bins - 1
                bin_count[k] += 1
                for j in range(3):
                    bin_lo[k, j] = min(bin_lo[k, j], lo[t, j])
                    bin_hi[k, j] = max(bin_hi[k, j], hi[t, j])
            for j in range(3):
                acc_lo[j] = np.inf
                acc_hi[j] = -np.inf
            cnt = 0
            for k in range(n_bins - 1, 0, -1):
                cnt += bin_count[k]
                for j in range(3):
                    acc_lo[j] = min(acc_lo[j], bin_lo[k, j])
                    acc_hi[j] = max(acc_hi[j], bin_hi[k, j])
                right_count[k] = cnt
                right_area[k] = _half_area(acc_lo, acc_hi) if cnt > 0 else 0.0
            for j in range(3):
                acc_lo[j] = np.inf
                acc_hi[j] = -np.inf
            cnt = 0
            for k in range(1, n_bins):
                cnt += bin_count[k - 1]
                for j in range(3):
                    acc_lo[j] = min(acc_lo[j], bin_lo[k - 1, j])
                    acc_hi[j] = max(acc_hi[j], bin_hi[k - 1, j])
                if cnt == 0 or right_count[k] == 0:
                    continue
                cost = _half_area(acc_lo, acc_hi) * cnt + right_area[k] * right_count[k]
                if cost < best_cost:
                    best_cost = cost
                    best_axis = ax
                    best_split = k

        mid = -1
        if best_axis >= 0:
            if parent_area > 0.0 and count <= 2 * leaf_size:
                if 0.5 + best_cost / parent_area >= count:
                    node_start[node] = start
                    node_count[node] = count
                    continue
            scale = n_bins / (cmax[best_axis] - cmin[best_axis])
            i = start
            j = stop - 1
            while i <= j:
                t = order[i]
                k = int((cen[t, best_axis] - cmin[best_axis]) * scale)
                if k >= n_bins:
                    k = n_bins - 1
                if k < best_split:
                    i += 1
                else:
                    order[i] = order[j]
                    order[j] = t
                    j -= 1
            mid = i
        if mid <= start or mid >= stop:
            # Coincident centroids: split by position to bound leaf size.
            mid = start + count // 2

        left = n_nodes
        right = n_nodes + 1
        n_nodes += 2
        node_left[node] = left
        node_right[node] = right
        st_node[sp] = right
        st_start[sp] = mid
        st_stop[sp] = stop
        st_level[sp] = level + 1
        sp += 1
        st_node[sp] = left
        st_start[sp] = start
        st_stop[sp] = mid
        st_level[sp] = level + 1
        sp += 1

    return (node_min[:n_nodes].copy(), node_max[:n_nodes].copy(),
            node_left[:n_nodes].copy(), node_right[:n_nodes].copy(),
            node_start[:n_nodes].copy(), node_count[:n_nodes].copy(), order, depth)


@njit(cache=True, inline="always")
def _slab(ox, oy, oz, ix, iy, iz, bmin, bmax, node):
    t0 = (bmin[node, 0] - ox) * ix
    t1 = (bmax[node, 0] - ox) * ix
    tnear = min(t0, t1)
    tfar = max(t0, t1)
    t0 = (bmin[node, 1] - oy) * iy
    t1 = (bmax[node, 1] - oy) * iy
    tnear = max(tnear, min(t0, t1))
    tfar = min(tfar, max(t0, t1))
    t0 = (bmin[node, 2] - oz) * iz
    t1 = (bmax[node, 2] - oz) * iz
    tnear = max(tnear, min(t0, t1))
    tfar = min(tfar, max(t0, t1))
    if tfar < tnear or tfar < 0.0:
        return np.inf
    return max(tnear, 0.0)


@njit(cache=True, inline="always")
def _safe_inv(d):
    if abs(d) < 1e-30:
        return 1e30 if d >= 0.0 else -1e30
    return 1.0 / d


@njit(cache=True)
def _trace(ox, oy, oz, dx, dy, dz, tmax, bmin, bmax, left, right, start, count,
           v0, e1, e2, tri_index, stack, stack_t):
    ix = _safe_inv(dx)
    iy = _safe_inv(dy)
    iz = _safe_inv(dz)
    best_t = np.inf
    best_slot = -1
    best_idx = -1
    t_root = _slab(ox, oy, oz, ix, iy, iz, bmin, bmax, 0)
    if t_root > tmax:
        return best_t, best_slot
    stack[0] = 0
    stack_t[0] = t_root
    sp = 1
    while sp > 0:
        sp -= 1
        # Entry distance may be stale: a nearer hit could have been found
        # after this node was pushed.
        if stack_t[sp] > best_t:
            continue
        node = stack[sp]
        if left[node] < 0:
            s = start[node]
            for k in range(s, s + count[node]):
                e1x, e1y, e1z = e1[k, 0], e1[k, 1], e1[k, 2]
                e2x, e2y, e2z = e2[k, 0], e2[k, 1], e2[k, 2]
                px = dy * e2z - dz * e2y
                py = dz * e2x - dx * e2z
                pz = dx * e2y - dy * e2x
                det = e1x * px + e1y * py + e1z * pz
                if abs(det) < DET_EPS:
                    continue
                inv = 1.0 / det
                sx = ox - v0[k, 0]
                sy = oy - v0[k, 1]
                sz = oz - v0[k, 2]
                u = (sx * px + sy * py + sz * pz) * inv
                if u < -BARY_EPS or u > 1.0 + BARY_EPS:
                    continue
                qx = sy * e1z - sz * e1y
                qy = sz * e1x - sx * e1z
                qz = sx * e1y - sy * e1x
                v = (dx * qx + dy * qy + dz * qz) * inv
                if v < -BARY_EPS or u + v > 1.0 + BARY_EPS:
                    continue
                t = (e2x * qx + e2y * qy + e2z * qz) * inv
                if t <= MIN_HIT_DISTANCE or t > tmax:
                    continue
                idx = tri_index[k]
                if t < best_t or (t == best_t and idx < best_idx):
                    best_t = t
                    best_slot = k
                    best_idx = idx
            continue
        a = left[node]
        b = right[node]
        ta = _slab(ox, oy, oz, ix, iy, iz, bmin, bmax, a)
        tb = _slab(ox, oy, oz, ix, iy, iz, bmin, bmax, b)
        if ta > tb:
            a, b = b, a
            ta, tb = tb, ta
        limit = min(best_t, tmax)
        # Push the far child first so the near one is popped next.
        if tb <= limit:
            stack[sp] = b
            stack_t[sp] = tb
            sp += 1
        if ta <= limit:
            stack[sp] = a
            stack_t[sp] = ta
            sp += 1
    return best_t, best_slot


@njit(cache=True, parallel=True)
def _cast_kernel(origins, dirs, tmax, bmin, bmax, left, right, start, count,
                 v0, e1, e2, tri_index, stack_size, out_t, out_slot):
    n = origins.shape[0]
    n_chunks = (n + _CHUNK - 1) // _CHUNK
    for c in prange(n_chunks):
        stack = np.empty(stack_size, dtype=np.int64)
        stack_t = np.empty(stack_size)
        lo = c * _CHUNK
        hi = min(n, lo + _CHUNK)
        for i in range(lo, hi):
            t, slot = _trace(origins[i, 0], origins[i, 1], origins[i, 2],
                             dirs[i, 0], dirs[i, 1], dirs[i, 2], tmax,
                             bmin, bmax, left, right, start, count,
                             v0, e1, e2, tri_index, stack, stack_t)
            out_t[i] = t
            out_slot[i] = slot


def cast_rays(geometry: Union[Bvh, Sequence[Bvh], None], origins, directions,
              max_range: float):
    """Cast a batch of rays.

    ``geometry`` may be a single BVH or a sequence of them (e.g. static scene
    plus per-frame actors); on equal distances the earlier BVH wins.

    Returns ``(distance, triangle, object_id)`` arrays; misses carry
    ``inf``, ``-1`` and ``-1``.
    """
    directions = np.ascontiguousarray(directions, dtype=np.float64).reshape(-1, 3)
    origins = np.asarray(origins, dtype=np.float64)
    origins = np.ascontiguousarray(np.broadcast_to(origins, directions.shape))
    n = len(directions)
    best_t = np.full(n, np.inf)
    best_tri = np.full(n, -1, dtype=np.int64)
    best_obj = np.full(n, -1, dtype=np.int64)
    if max_range <= 0:
        raise ValidationError("max_range must be positive")
    if geometry is None:
        return best_t, best_tri, best_obj
    bvhs = [geometry] if isinstance(geometry, Bvh) else list(geometry)
    offset = 0
    for bvh in bvhs:
        t = np.empty(n)
        slot = np.empty(n, dtype=np.int64)
        _cast_kernel(origins, directions, float(max_range), bvh.node_min, bvh.node_max,
                     bvh.node_left, bvh.node_right, bvh.node_start, bvh.node_count,
                     bvh.v0, bvh.e1, bvh.e2, bvh.tri_index, bvh.depth + 2, t, slot)
        better = t < best_t
        best_t[better] = t[better]
        hit_slots = slot[better]
        best_tri[better] = bvh.tri_index[hit_slots] + offset
        best_obj[better] = bvh.tri_object[hit_slots]
        offset += bvh.n_triangles
    return best_t, best_tri, best_obj


def intersect(bvh: Union[Bvh, Sequence[Bvh]], ray: Ray, max_range: float) -> Optional[Hit]:
    """Nearest hit along ``ray`` within ``(0, max_range]``, or None."""
    o = np.asarray(ray.origin, dtype=np.float64)
    d = np.asarray(ray.direction, dtype=np.float64)
    t, tri, obj = cast_rays(bvh, o[None], d[None], max_range)
    if not np.isfinite(t[0]):
        return None
    return Hit(float(t[0]), tuple(o + t[0] * d), int(obj[0]), int(tri[0]))


def configure_threads(n: Optional[int] = None) -> int:
    """Cap kernel parallelism; defaults to ``$DT_LIDAR_THREADS`` or all cores."""
    if n is None:
        env = os.environ.get("DT_LIDAR_THREADS")
        n = int(env) if env else numba.config.NUMBA_NUM_THREADS
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n
