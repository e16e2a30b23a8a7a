"""Voxel grids, signed distance fields and surface point models.

Grid convention: ``origin`` is the lower corner of voxel ``(0, 0, 0)``; the
center of voxel ``(i, j, k)`` is ``origin + (idx + 0.5) * voxel_size``.
Arrays are indexed ``[i, j, k]`` along x, y, z.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .mechanics import RigidTransform, frame_from_z

DEFAULT_VOXEL_SIZE = 0.002
DEFAULT_MAX_DIM = 256
SURFACE_EPS_FACTOR = 0.75

SCVX_MAGIC = b"SCVX"
SCVX_VERSION = 1
_SCVX_FIELDS = "<I3dd3I"


class GeometryError(ValueError):
    pass


class InvalidMeshError(GeometryError):
    pass


class ResolutionError(GeometryError):
    pass


class DegenerateGridError(GeometryError):
    pass


class OutOfBoundsError(GeometryError):
    pass


class SurfaceThresholdError(GeometryError):
    pass


class MeshParseError(GeometryError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


# ---------------------------------------------------------------- meshes


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float)
        F = np.asarray(self.triangles)
        if V.ndim != 2 or V.shape[1] != 3:
            raise InvalidMeshError("vertices must have shape (N, 3)")
        if F.ndim != 2 or F.shape[1] != 3 or len(F) == 0:
            raise InvalidMeshError("triangles must have shape (M, 3) with M > 0")
        if not np.all(np.isfinite(V)):
            raise InvalidMeshError("non-finite vertex coordinates")
        if not np.issubdtype(F.dtype, np.integer):
            raise InvalidMeshError("triangle indices must be integers")
        F = F.astype(np.int64)
        if F.min() < 0 or F.max() >= len(V):
            raise InvalidMeshError("triangle index out of range")
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "triangles", F)
        bad = np.flatnonzero(self.areas() <= 0.0)
        if len(bad):
            raise InvalidMeshError(f"degenerate triangle (zero area) at index {bad[0]}")

    def areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def volume(self) -> float:
        """Signed volume by the divergence theorem (positive for outward winding)."""
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def translated(self, offset) -> TriangleMesh:
        return TriangleMesh(self.vertices + np.asarray(offset, dtype=float), self.triangles)


def load_obj(path) -> TriangleMesh:
    """ASCII OBJ subset: ``v x y z`` and triangular ``f`` lines."""
    path = Path(path)
    verts, faces = [], []
    with path.open("r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshParseError(path, lineno, "vertex needs 3 coordinates")
                try:
                    xyz = [float(s) for s in parts[1:4]]
                except ValueError:
                    raise MeshParseError(path, lineno, "bad vertex coordinate") from None
                if not all(np.isfinite(xyz)):
                    raise MeshParseError(path, lineno, "non-finite vertex coordinate")
                verts.append(xyz)
            elif tag == "f":
                if len(parts) != 4:
                    raise MeshParseError(path, lineno, "only triangular faces are supported")
                try:
                    idx = [int(s.split("/")[0]) for s in parts[1:]]
                except ValueError:
                    raise MeshParseError(path, lineno, "bad face index") from None
                # negative indices are relative to the vertices read so far
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                if min(idx) < 0 or max(idx) >= len(verts):
                    raise MeshParseError(path, lineno, "face index out of range")
                faces.append(idx)
            elif tag in ("vn", "vt", "o", "g", "s", "usemtl", "mtllib", "l"):
                continue
            else:
                raise MeshParseError(path, lineno, f"unsupported OBJ record {tag!r}")
    if not faces:
        raise MeshParseError(path, 0, "no faces")
    try:
        return TriangleMesh(np.array(verts), np.array(faces))
    except InvalidMeshError as err:
        raise MeshParseError(path, 0, str(err)) from None


def load_stl(path) -> TriangleMesh:
    """Binary STL; vertices are merged by exact coordinate match."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 84:
        raise MeshParseError(path, 0, "file too short for binary STL")
    (n,) = struct.unpack_from("<I", data, 80)
    if len(data) != 84 + 50 * n:
        raise MeshParseError(path, 0, f"size mismatch for {n} triangles")
    rec = np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    tris = np.frombuffer(data, dtype=rec, count=n, offset=84)["v"].astype(float)
    if not np.all(np.isfinite(tris)):
        raise MeshParseError(path, 0, "non-finite vertex coordinate")
    verts, inv = np.unique(tris.reshape(-1, 3), axis=0, return_inverse=True)
    try:
        return TriangleMesh(verts, inv.reshape(-1, 3))
    except InvalidMeshError as err:
        raise MeshParseError(path, 0, str(err)) from None


def load_mesh(path) -> TriangleMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        return load_obj(path)
    if suffix == ".stl":
        return load_stl(path)
    raise GeometryError(f"unsupported mesh format {suffix!r}")


def save_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def save_stl(mesh: TriangleMesh, path) -> None:
    tris = mesh.vertices[mesh.triangles].astype("<f4")
    normals = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    rec = np.zeros(len(tris), dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    rec["n"] = normals
    rec["v"] = tris
    with open(path, "wb") as fh:
        fh.write(b"\0" * 80)
        fh.write(struct.pack("<I", len(tris)))
        fh.write(rec.tobytes())


# ---------------------------------------------------------------- grids


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    origin: np.ndarray
    voxel_size: float
    dims: tuple
    occupancy: np.ndarray

    def __post_init__(self):
        if not self.voxel_size > 0:
            raise GeometryError("voxel_size must be positive")
        dims = tuple(int(d) for d in self.dims)
        occ = np.asarray(self.occupancy, dtype=bool).reshape(dims)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "occupancy", occ)

    def centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * self.voxel_size

    def center_of(self, index) -> np.ndarray:
        return self.origin + (np.asarray(index, dtype=float) + 0.5) * self.voxel_size

    @property
    def occupied_count(self) -> int:
        return int(self.occupancy.sum())


# irrational sub-voxel ray offsets so rays never hit shared edges or vertices exactly
_RAY_JITTER = {
    0: (1.4142135e-5, 2.6457513e-5),
    1: (1.7320508e-5, 3.1622777e-5),
    2: (2.2360679e-5, 3.6055512e-5),
}


def _parity_along(mesh: TriangleMesh, origin, vs, dims, axis) -> np.ndarray:
    """Inside mask from crossing parity of rays cast along ``axis``."""
    b, c = [ax for ax in range(3) if ax != axis]
    jb, jc = _RAY_JITTER[axis]
    yb = origin[b] + (np.arange(dims[b]) + 0.5 + jb) * vs
    yc = origin[c] + (np.arange(dims[c]) + 0.5 + jc) * vs
    diff = np.zeros((dims[b], dims[c], dims[axis] + 1), dtype=np.int32)
    tris = mesh.vertices[mesh.triangles]
    for tri in tris:
        P = tri[:, [b, c]]
        lo, hi = P.min(axis=0), P.max(axis=0)
        ib = np.flatnonzero((yb >= lo[0]) & (yb <= hi[0]))
        ic = np.flatnonzero((yc >= lo[1]) & (yc <= hi[1]))
        if len(ib) == 0 or len(ic) == 0:
            continue
        (x0, y0), (x1, y1), (x2, y2) = P
        det = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
        if det == 0.0:
            continue  # parallel to the ray
        QX, QY = np.meshgrid(yb[ib], yc[ic], indexing="ij")
        l0 = ((y1 - y2) * (QX - x2) + (x2 - x1) * (QY - y2)) / det
        l1 = ((y2 - y0) * (QX - x2) + (x0 - x2) * (QY - y2)) / det
        l2 = 1.0 - l0 - l1
        hit = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
        if not hit.any():
            continue
        coord = l0 * tri[0, axis] + l1 * tri[1, axis] + l2 * tri[2, axis]
        n_below = np.ceil((coord - origin[axis]) / vs - 0.5).astype(np.int64)
        n_below = np.clip(n_below, 0, dims[axis])
        hb, hc = np.nonzero(hit)
        gb, gc = ib[hb], ic[hc]
        np.add.at(diff, (gb, gc, np.zeros_like(gb)), 1)
        np.add.at(diff, (gb, gc, n_below[hb, hc]), -1)
    above = np.cumsum(diff[:, :, :-1], axis=2)
    inside = (above % 2) == 1
    return np.moveaxis(inside, 2, axis)


def voxelize(
    mesh: TriangleMesh,
    voxel_size: float = DEFAULT_VOXEL_SIZE,
    padding: int = 1,
    max_dim: int = DEFAULT_MAX_DIM,
) -> VoxelGrid:
    """Occupancy of voxel centers by majority vote of three axis-aligned ray-parity tests."""
    if not voxel_size > 0:
        raise GeometryError("voxel_size must be positive")
    if not np.all(np.isfinite(mesh.vertices)):
        raise InvalidMeshError("non-finite vertices")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    core = np.maximum(np.ceil((hi - lo) / voxel_size - 1e-9).astype(int), 1)
    dims = tuple(int(d) + 2 * padding for d in core)
    if max(dims) > max_dim:
        raise ResolutionError(f"grid dims {dims} exceed cap {max_dim} per axis")
    origin = lo - padding * voxel_size
    votes = np.zeros(dims, dtype=np.int8)
    for axis in range(3):
        votes += _parity_along(mesh, origin, voxel_size, dims, axis).astype(np.int8)
    return VoxelGrid(origin, voxel_size, dims, votes >= 2)


# ---------------------------------------------------------------- SDF


@dataclass(frozen=True, eq=False)
class SignedDistanceField:
    origin: np.ndarray
    voxel_size: float
    dims: tuple
    values: np.ndarray  # float32, meters, negative inside

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        vals = np.asarray(self.values, dtype=np.float32).reshape(dims)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "values", vals)

    @cached_property
    def _values64(self) -> np.ndarray:
        return self.values.astype(np.float64)

    @property
    def lower(self) -> np.ndarray:
        """Lowest voxel center (sampling domain lower bound)."""
        return self.origin + 0.5 * self.voxel_size

    @property
    def upper(self) -> np.ndarray:
        return self.origin + (np.asarray(self.dims) - 0.5) * self.voxel_size

    def in_bounds(self, points, margin: float = 0.0) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        tol = 1e-12 + 1e-9 * self.voxel_size
        return np.all((p >= self.lower + margin - tol) & (p <= self.upper - margin + tol), axis=1)

    def sample_many(self, points, fill: float | None = None) -> np.ndarray:
        """Trilinear interpolation at (N, 3) points.

        Points outside the sampling domain raise :class:`OutOfBoundsError`
        unless ``fill`` is given, in which case they get ``fill``.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        ok = self.in_bounds(p)
        if not ok.all() and fill is None:
            raise OutOfBoundsError("query point outside the SDF grid")
        out = np.full(len(p), np.nan if fill is None else fill, dtype=float)
        q = p[ok]
        if len(q) == 0:
            return out
        dims = np.asarray(self.dims)
        g = (q - self.lower) / self.voxel_size
        g = np.clip(g, 0.0, dims - 1)
        # snap queries sitting on a voxel center so stored values come back exactly
        r = np.round(g)
        g = np.where(np.abs(g - r) <= 1e-9, r, g)
        i0 = np.minimum(np.floor(g).astype(np.int64), np.maximum(dims - 2, 0))
        t = g - i0
        i1 = np.minimum(i0 + 1, dims - 1)
        V = self._values64
        x0, y0, z0 = i0.T
        x1, y1, z1 = i1.T
        tx, ty, tz = t.T
        c00 = V[x0, y0, z0] * (1 - tx) + V[x1, y0, z0] * tx
        c01 = V[x0, y0, z1] * (1 - tx) + V[x1, y0, z1] * tx
        c10 = V[x0, y1, z0] * (1 - tx) + V[x1, y1, z0] * tx
        c11 = V[x0, y1, z1] * (1 - tx) + V[x1, y1, z1] * tx
        c0 = c00 * (1 - ty) + c10 * ty
        c1 = c01 * (1 - ty) + c11 * ty
        out[ok] = c0 * (1 - tz) + c1 * tz
        return out

    def gradient_many(self, points, h: float | None = None) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        h = 0.25 * self.voxel_size if h is None else h
        if not self.in_bounds(p, margin=h).all():
            raise OutOfBoundsError("gradient stencil leaves the SDF grid")
        grad = np.empty_like(p)
        for ax in range(3):
            e = np.zeros(3)
            e[ax] = h
            grad[:, ax] = (self.sample_many(p + e) - self.sample_many(p - e)) / (2 * h)
        return grad


def boundary_mask(occupancy: np.ndarray) -> np.ndarray:
    """Occupied voxels with at least one empty (or off-grid) 6-neighbor."""
    padded = np.pad(occupancy, 1, constant_values=False)
    interior = np.ones_like(occupancy)
    for ax in range(3):
        for shift in (-1, 1):
            interior &= np.roll(padded, shift, axis=ax)[1:-1, 1:-1, 1:-1]
    return occupancy & ~interior


def compute_sdf(grid: VoxelGrid) -> SignedDistanceField:
    """Exact Euclidean signed distance to the boundary voxel centers.

    Outside voxels get the distance to the nearest occupied voxel, occupied
    voxels minus the distance to the nearest boundary voxel (zero on the
    boundary shell itself).
    """
    occ = grid.occupancy
    if occ.all() or not occ.any():
        raise DegenerateGridError("grid must contain both occupied and empty voxels")
    shell = boundary_mask(occ)
    outside = ndimage.distance_transform_edt(~occ)
    inside = ndimage.distance_transform_edt(~shell)
    values = np.where(occ, -inside, outside) * grid.voxel_size
    return SignedDistanceField(grid.origin, grid.voxel_size, grid.dims, values.astype(np.float32))


def sdf_sample(sdf: SignedDistanceField, p) -> float:
    return float(sdf.sample_many(np.asarray(p, dtype=float)[None])[0])


def sdf_gradient(sdf: SignedDistanceField, p, h: float | None = None) -> np.ndarray:
    """Central finite-difference gradient of the trilinear field."""
    return sdf.gradient_many(np.asarray(p, dtype=float)[None], h)[0]


# ---------------------------------------------------------------- surfaces


@dataclass(frozen=True, eq=False)
class SurfaceModel:
    points: np.ndarray  # (N, 3) object frame
    normals: np.ndarray  # (N, 3) outward unit
    voxel_index: np.ndarray  # (N, 3) int
    eps_s: float

    def __len__(self) -> int:
        return len(self.points)

    @cached_property
    def kdtree(self) -> cKDTree:
        return cKDTree(self.points)

    @cached_property
    def contact_frames(self) -> np.ndarray:
        """(N, 3, 3) rotations with columns (t1, t2, inward normal)."""
        return np.stack([frame_from_z(-n) for n in self.normals])

    @cached_property
    def spacing(self) -> float:
        """Largest nearest-neighbor distance between surface points."""
        if len(self.points) < 2:
            return 0.0
        d, _ = self.kdtree.query(self.points, k=2)
        return float(d[:, 1].max())

    def nearest(self, points) -> np.ndarray:
        _, idx = self.kdtree.query(np.atleast_2d(points))
        return idx


def _occupancy_normals(occ: np.ndarray, idx: np.ndarray) -> np.ndarray:
    offsets = np.array([(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1) if (a, b, c) != (0, 0, 0)])
    padded = np.pad(occ, 1, constant_values=False)
    out = np.zeros((len(idx), 3))
    for off in offsets:
        nb = idx + 1 + off
        empty = ~padded[nb[:, 0], nb[:, 1], nb[:, 2]]
        out += empty[:, None] * (off / np.linalg.norm(off))
    return out


def extract_surface(sdf: SignedDistanceField, eps_s: float | None = None) -> SurfaceModel:
    """Boundary voxel centers with ``|sdf| <= eps_s`` and their outward normals."""
    eps_s = SURFACE_EPS_FACTOR * sdf.voxel_size if eps_s is None else float(eps_s)
    if not eps_s > 0:
        raise SurfaceThresholdError("eps_s must be positive")
    v = sdf.values
    mask = (v <= 0) & (np.abs(v) <= eps_s)
    idx = np.argwhere(mask)
    if len(idx) == 0:
        raise SurfaceThresholdError(
            f"no voxels with |sdf| <= {eps_s:g}; try eps_s = {SURFACE_EPS_FACTOR * sdf.voxel_size:g}"
        )
    points = sdf.origin + (idx + 0.5) * sdf.voxel_size
    h = 0.25 * sdf.voxel_size
    inside = sdf.in_bounds(points, margin=h)
    grad = np.zeros_like(points)
    if inside.any():
        grad[inside] = sdf.gradient_many(points[inside], h)
    norm = np.linalg.norm(grad, axis=1)
    weak = norm < 1e-6
    if weak.any():
        grad[weak] = _occupancy_normals(v <= 0, idx[weak])
        norm = np.linalg.norm(grad, axis=1)
        still = norm < 1e-12
        grad[still] = (0.0, 0.0, 1.0)
        norm[still] = 1.0
    normals = grad / norm[:, None]
    return SurfaceModel(points, normals, idx, eps_s)


def count_penetrating(
    sdf_a: SignedDistanceField,
    pose_a: RigidTransform,
    surface_b: SurfaceModel,
    pose_b: RigidTransform,
) -> int:
    """Points of ``surface_b`` strictly inside object ``a`` (out-of-grid counts as free)."""
    rel = pose_a.inverse() @ pose_b
    vals = sdf_a.sample_many(rel.apply(surface_b.points), fill=np.inf)
    return int(np.count_nonzero(vals < 0))


def count_penetrating_batch(sdf_a: SignedDistanceField, rel_rot, rel_trans, points) -> np.ndarray:
    """Penetration counts for K relative transforms (frame b -> frame a) at once."""
    P = np.einsum("kij,nj->kni", rel_rot, points) + rel_trans[:, None, :]
    vals = sdf_a.sample_many(P.reshape(-1, 3), fill=np.inf).reshape(len(rel_rot), -1)
    return np.count_nonzero(vals < 0, axis=1)


# ---------------------------------------------------------------- SCVX files


def _write_scvx(path, origin, voxel_size, dims, payload: bytes) -> None:
    header = SCVX_MAGIC + struct.pack(_SCVX_FIELDS, SCVX_VERSION, *origin, voxel_size, *dims)
    Path(path).write_bytes(header + payload)


def save_voxels(grid: VoxelGrid, path) -> None:
    payload = np.packbits(grid.occupancy.ravel(), bitorder="little").tobytes()
    _write_scvx(path, grid.origin, grid.voxel_size, grid.dims, payload)


def save_sdf(sdf: SignedDistanceField, path) -> None:
    payload = sdf.values.astype("<f4").ravel().tobytes()
    _write_scvx(path, sdf.origin, sdf.voxel_size, sdf.dims, payload)


def load_scvx(path) -> VoxelGrid | SignedDistanceField:
    """Read a SCVX file; the payload length tells occupancy bits from f32 values."""
    data = Path(path).read_bytes()
    hsize = 4 + struct.calcsize(_SCVX_FIELDS)
    if len(data) < hsize or data[:4] != SCVX_MAGIC:
        raise GeometryError(f"{path}: not a SCVX file")
    version, ox, oy, oz, vs, nx, ny, nz = struct.unpack_from(_SCVX_FIELDS, data, 4)
    if version != SCVX_VERSION:
        raise GeometryError(f"{path}: unsupported SCVX version {version}")
    dims = (nx, ny, nz)
    n = nx * ny * nz
    payload = data[hsize:]
    if len(payload) == 4 * n:
        vals = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
        return SignedDistanceField((ox, oy, oz), vs, dims, vals)
    if len(payload) == (n + 7) // 8:
        bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=n, bitorder="little")
        return VoxelGrid((ox, oy, oz), vs, dims, bits.astype(bool).reshape(dims))
    raise GeometryError(f"{path}: payload size {len(payload)} does not match dims {dims}")
