"""Built-in tool meshes and preprocessed object models.

All tools are 1 cm thick along the object y axis (the gripper closing
direction) and lie in the object x-z plane, which is the plane in which
in-hand pose offsets are estimated.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (
    DEFAULT_VOXEL_SIZE,
    SignedDistanceField,
    SurfaceModel,
    TriangleMesh,
    VoxelGrid,
    compute_sdf,
    extract_surface,
    load_mesh,
    load_scvx,
    save_sdf,
    save_voxels,
    voxelize,
)

HEX_INRADIUS = 0.005
HEX_LONG = 0.07
HEX_SHORT = 0.04
HEX_GRASP_FROM_END = 0.02

# radii of gyration (cm) used in the aggregate error
R_GYRATION_POKER = 5.25
R_GYRATION_WRENCH = 5.0


def box_mesh(extents, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    ex = np.asarray(extents, dtype=float) / 2.0
    c = np.asarray(center, dtype=float)
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
    V = c + corners * ex
    # vertex index = 4*ix + 2*iy + iz
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    tris = []
    for a, b, cc, d in quads:
        tris += [(a, b, cc), (a, cc, d)]
    return TriangleMesh(V, np.array(tris))


def cube_mesh(size: float, corner=(0.0, 0.0, 0.0)) -> TriangleMesh:
    corner = np.asarray(corner, dtype=float)
    return box_mesh((size, size, size), corner + size / 2.0)


def _polygon_area(P) -> float:
    x, y = P[:, 0], P[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _polygon_centroid(P) -> np.ndarray:
    x, y = P[:, 0], P[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    A = cr.sum() / 2.0
    return np.array([((x + xn) * cr).sum(), ((y + yn) * cr).sum()]) / (6.0 * A)


def ear_clip(P) -> list[tuple[int, int, int]]:
    """Triangulate a simple counter-clockwise polygon."""
    P = np.asarray(P, dtype=float)
    idx = list(range(len(P)))
    tris = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * len(P) ** 2:
            raise ValueError("polygon is not simple")
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = P[i0], P[i1], P[i2]
            if cross(a, b, c) <= 1e-15:
                continue
            others = [j for j in idx if j not in (i0, i1, i2)]
            if any(
                cross(a, b, P[j]) >= 0 and cross(b, c, P[j]) >= 0 and cross(c, a, P[j]) >= 0
                for j in others
            ):
                continue
            tris.append((i0, i1, i2))
            idx.pop(k)
            break
    tris.append(tuple(idx))
    return tris


def _orient(V, tris, outward) -> list:
    """Flip triangles whose normal disagrees with ``outward(centroid, normal)``."""
    out = []
    for t in tris:
        a, b, c = V[list(t)]
        n = np.cross(b - a, c - a)
        if outward((a + b + c) / 3.0, n):
            out.append(tuple(t))
        else:
            out.append((t[0], t[2], t[1]))
    return out


def extrude_polygon(poly_xz, y_min: float, y_max: float) -> TriangleMesh:
    """Prism over a simple polygon given in (x, z), extruded along y."""
    P = np.asarray(poly_xz, dtype=float)
    if _polygon_area(P) < 0:
        P = P[::-1]
    n = len(P)
    lo = np.column_stack([P[:, 0], np.full(n, y_min), P[:, 1]])
    hi = np.column_stack([P[:, 0], np.full(n, y_max), P[:, 1]])
    V = np.vstack([lo, hi])
    cap = ear_clip(P)
    tris = _orient(V, cap, lambda c, nrm: nrm[1] < 0)
    tris += _orient(V, [(a + n, b + n, c + n) for a, b, c in cap], lambda c, nrm: nrm[1] > 0)
    for i in range(n):
        j = (i + 1) % n
        du, dv = P[j] - P[i]
        # outward normal of a CCW edge (du, dv) is (dv, -du) in (x, z)
        want = np.array([dv, 0.0, -du])
        tris += _orient(V, [(i, j, j + n), (i, j + n, i + n)], lambda c, nrm, w=want: nrm @ w > 0)
    return TriangleMesh(V, np.array(tris))


def hex_key_mesh(
    long_side: float = HEX_LONG,
    short_side: float = HEX_SHORT,
    inradius: float = HEX_INRADIUS,
    grasp_from_end: float = HEX_GRASP_FROM_END,
) -> TriangleMesh:
    """L-shaped hexagonal key with a 45 degree mitred corner.

    The long arm runs along +x, the short arm along +z; hexagon flats face
    +-y. Outer extents equal ``long_side`` and ``short_side``. The object
    origin sits on the long-arm axis ``grasp_from_end`` from its end.
    """
    R = inradius / np.cos(np.pi / 6)
    ang = np.arange(6) * np.pi / 3
    u, yk = R * np.cos(ang), R * np.sin(ang)
    L1, L2 = long_side - R, short_side - R
    ring_x = np.column_stack([np.full(6, L1), yk, u])
    ring_m = np.column_stack([u, yk, u])
    ring_z = np.column_stack([u, yk, np.full(6, L2)])
    V = np.vstack([ring_x, ring_m, ring_z])
    tris = []
    cap_x = [(0, k, k + 1) for k in range(1, 5)]
    tris += _orient(V, cap_x, lambda c, n: n[0] > 0)
    cap_z = [(12, 12 + k, 13 + k) for k in range(1, 5)]
    tris += _orient(V, cap_z, lambda c, n: n[2] > 0)
    for k in range(6):
        j = (k + 1) % 6
        long_q = [(k, j, 6 + j), (k, 6 + j, 6 + k)]
        tris += _orient(V, long_q, lambda c, n: n[1] * c[1] + n[2] * c[2] > 0)
        short_q = [(6 + k, 6 + j, 12 + j), (6 + k, 12 + j, 12 + k)]
        tris += _orient(V, short_q, lambda c, n: n[0] * c[0] + n[1] * c[1] > 0)
    mesh = TriangleMesh(V, np.array(tris))
    return mesh.translated([-(L1 - grasp_from_end), 0.0, 0.0])


def hex_key_volume(
    long_side: float = HEX_LONG, short_side: float = HEX_SHORT, inradius: float = HEX_INRADIUS
) -> float:
    """Hexagon area times mitred centerline length."""
    R = inradius / np.cos(np.pi / 6)
    return 2.0 * np.sqrt(3.0) * inradius**2 * (long_side + short_side - 2 * R)


WRENCH_OUTLINE_CM = [
    (-5.0, -1.25), (-3.5, -1.25), (-3.5, -0.6), (3.0, -0.6), (3.0, -1.25), (5.0, -1.25),
    (5.0, -0.45), (4.0, -0.45), (4.0, 0.45), (5.0, 0.45), (5.0, 1.25), (3.0, 1.25),
    (3.0, 0.6), (-3.5, 0.6), (-3.5, 1.25), (-5.0, 1.25),
]  # fmt: skip

POKER_OUTLINE_CM = [
    (-3.0, -0.5), (6.0, -0.5), (7.0, -0.15), (7.0, 0.15), (6.0, 0.5), (-3.0, 0.5),
]  # fmt: skip


def wrench_mesh(thickness: float = 0.01) -> TriangleMesh:
    """Open-end wrench, 10 x 2.5 x 1 cm, origin at the outline centroid."""
    P = np.array(WRENCH_OUTLINE_CM) / 100.0
    P = P - _polygon_centroid(P)
    return extrude_polygon(P, -thickness / 2, thickness / 2)


def poker_mesh(thickness: float = 0.01) -> TriangleMesh:
    """Square bar with a tapered tip pointing along +x; origin at the grasp."""
    P = np.array(POKER_OUTLINE_CM) / 100.0
    return extrude_polygon(P, -thickness / 2, thickness / 2)


@dataclass(frozen=True, eq=False)
class GripperSpec:
    """Finger-pad center in the end-effector frame and the validity tolerance (m)."""

    finger_center: np.ndarray
    tolerance: float = 0.001

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        object.__setattr__(self, "finger_center", np.asarray(self.finger_center, dtype=float).reshape(3))


@dataclass(frozen=True, eq=False)
class ObjectModel:
    name: str
    grid: VoxelGrid
    sdf: SignedDistanceField
    surface: SurfaceModel
    gripper: GripperSpec
    r_gyration_cm: float = 5.0


def finger_center_for(surface: SurfaceModel, hint=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Surface point on the +y face closest to the object origin's projection."""
    pts = surface.points
    top = pts[:, 1] >= pts[:, 1].max() - 1e-9
    cand = pts[top]
    return cand[np.argmin(np.linalg.norm(cand[:, [0, 2]], axis=1))].copy()


def build_model(
    name: str,
    mesh: TriangleMesh,
    voxel_size: float = DEFAULT_VOXEL_SIZE,
    eps_s: float | None = None,
    tolerance: float = 0.001,
    r_gyration_cm: float = 5.0,
) -> ObjectModel:
    grid = voxelize(mesh, voxel_size)
    sdf = compute_sdf(grid)
    surface = extract_surface(sdf, eps_s)
    gripper = GripperSpec(finger_center_for(surface), tolerance)
    return ObjectModel(name, grid, sdf, surface, gripper, r_gyration_cm)


def from_parts(name, grid, sdf, surface, tolerance=0.001, r_gyration_cm=5.0) -> ObjectModel:
    return ObjectModel(name, grid, sdf, surface, GripperSpec(finger_center_for(surface), tolerance), r_gyration_cm)


BUILTIN_MESHES = {
    "hex_key": hex_key_mesh,
    "wrench": wrench_mesh,
    "poker": poker_mesh,
}

_CACHE: dict = {}


def builtin_model(name: str, voxel_size: float = DEFAULT_VOXEL_SIZE) -> ObjectModel:
    """Preprocessed built-in model (memoized per name and resolution)."""
    key = (name, float(voxel_size))
    if key not in _CACHE:
        r_g = {"poker": R_GYRATION_POKER, "wrench": R_GYRATION_WRENCH}.get(name, 5.0)
        _CACHE[key] = build_model(name, BUILTIN_MESHES[name](), voxel_size, r_gyration_cm=r_g)
    return _CACHE[key]


# ------------------------------------------------------------ bundles on disk

BUNDLE_FILES = ("voxels.scvx", "sdf.scvx", "surface.npz")


def bundle_paths(directory, name: str) -> dict:
    d = Path(directory)
    return {k: d / f"{name}.{k}" for k in BUNDLE_FILES}


def save_bundle(model: ObjectModel, directory) -> dict:
    paths = bundle_paths(directory, model.name)
    save_voxels(model.grid, paths["voxels.scvx"])
    save_sdf(model.sdf, paths["sdf.scvx"])
    s = model.surface
    with paths["surface.npz"].open("wb") as fh:
        np.savez(fh, points=s.points, normals=s.normals, voxel_index=s.voxel_index, eps_s=s.eps_s)
    return paths


def load_bundle(directory, name: str, tolerance: float = 0.001, r_gyration_cm: float = 5.0) -> ObjectModel:
    paths = bundle_paths(directory, name)
    grid = load_scvx(paths["voxels.scvx"])
    sdf = load_scvx(paths["sdf.scvx"])
    with np.load(paths["surface.npz"]) as z:
        surface = SurfaceModel(z["points"], z["normals"], z["voxel_index"], float(z["eps_s"]))
    return from_parts(name, grid, sdf, surface, tolerance, r_gyration_cm)


def resolve_model(spec: str, voxel_size: float = DEFAULT_VOXEL_SIZE) -> ObjectModel:
    """Built-in name, mesh file (OBJ/STL) or a directory holding one preprocessed bundle."""
    if spec in BUILTIN_MESHES:
        return builtin_model(spec, voxel_size)
    path = Path(spec)
    if path.is_dir():
        names = sorted(p.name[: -len(".surface.npz")] for p in path.glob("*.surface.npz"))
        if len(names) != 1:
            raise FileNotFoundError(f"{path}: expected exactly one preprocessed bundle, found {len(names)}")
        return load_bundle(path, names[0])
    return build_model(path.stem, load_mesh(path), voxel_size)
