"""Spatial algebra: rigid transforms, wrenches, contact adjoints and friction cones.

Wrenches are stored force-first, ``[fx, fy, fz, mx, my, mz]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-9


class InvalidTransformError(ValueError):
    pass


class FrameError(ValueError):
    pass


class DegenerateNormalError(ValueError):
    pass


def hat(v) -> np.ndarray:
    """Skew-symmetric matrix with ``hat(v) @ w == cross(v, w)``."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rot_y(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    K = hat(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * K @ K


def _check_rotation(R: np.ndarray, tol: float = ORTHO_TOL) -> None:
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise InvalidTransformError("rotation must be a finite 3x3 matrix")
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol:
        raise InvalidTransformError("rotation is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise InvalidTransformError("rotation has det != +1")


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Element of SE(3): ``x -> rotation @ x + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        p = np.array(self.translation, dtype=float).reshape(3)
        _check_rotation(R)
        if not np.all(np.isfinite(p)):
            raise InvalidTransformError("translation must be finite")
        R.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", p)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_matrix(cls, T) -> RigidTransform:
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def planar(cls, x: float, z: float, theta: float) -> RigidTransform:
        """Offset in the x-z plane with rotation ``theta`` about +y."""
        return cls(rot_y(theta), np.array([x, 0.0, z]))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> RigidTransform:
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points) -> np.ndarray:
        """Map points of shape (3,) or (N, 3)."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def apply_vector(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation.T


def rotation_angle(Ra, Rb) -> float:
    """Geodesic angle (rad) of the relative rotation ``Ra^T Rb``."""
    c = (np.trace(np.asarray(Ra).T @ np.asarray(Rb)) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


@dataclass(frozen=True, eq=False)
class Wrench:
    force: np.ndarray
    moment: np.ndarray
    frame: str = "ee"

    def __post_init__(self):
        f = np.array(self.force, dtype=float).reshape(3)
        m = np.array(self.moment, dtype=float).reshape(3)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(m))):
            raise ValueError("wrench components must be finite")
        f.flags.writeable = False
        m.flags.writeable = False
        object.__setattr__(self, "force", f)
        object.__setattr__(self, "moment", m)

    @classmethod
    def from_vector(cls, v, frame: str = "ee") -> Wrench:
        v = np.asarray(v, dtype=float).reshape(6)
        return cls(v[:3], v[3:], frame)

    @classmethod
    def zero(cls, frame: str = "ee") -> Wrench:
        return cls(np.zeros(3), np.zeros(3), frame)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.moment])


@dataclass(frozen=True, eq=False)
class ContactAdjoint:
    matrix: np.ndarray
    source: str = "contact"
    target: str = "ee"


def adjoint_matrix(rotation, translation) -> np.ndarray:
    """Block form ``[[R^T, 0], [-R^T hat(p), R^T]]``."""
    Rt = np.asarray(rotation, dtype=float).T
    A = np.zeros((6, 6))
    A[:3, :3] = Rt
    A[3:, 3:] = Rt
    A[3:, :3] = -Rt @ hat(translation)
    return A


def contact_adjoint(
    ee_in_contact: RigidTransform, source: str = "contact", target: str = "ee"
) -> ContactAdjoint:
    """Wrench map from the contact frame to the end-effector frame.

    ``ee_in_contact`` is the pose of the end-effector frame expressed in the
    contact frame; the block form below transports a wrench whose reference
    point is the contact origin to one referenced at the end-effector origin.
    Use :func:`contact_adjoint_from_contact_pose` when the contact frame pose
    in the end-effector frame is what you have.
    """
    if not isinstance(ee_in_contact, RigidTransform):
        raise InvalidTransformError("expected a RigidTransform")
    _check_rotation(ee_in_contact.rotation)
    return ContactAdjoint(
        adjoint_matrix(ee_in_contact.rotation, ee_in_contact.translation), source, target
    )


def contact_adjoint_from_contact_pose(
    contact_in_ee: RigidTransform, source: str = "contact", target: str = "ee"
) -> ContactAdjoint:
    return contact_adjoint(contact_in_ee.inverse(), source, target)


def transform_wrench(adj: ContactAdjoint, w: Wrench) -> Wrench:
    if w.frame != adj.source:
        raise FrameError(f"wrench is in frame {w.frame!r}, adjoint expects {adj.source!r}")
    return Wrench.from_vector(adj.matrix @ w.vector, adj.target)


def tangent_basis(normal) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal tangents ``(t1, t2)`` with ``t1 x t2 = n``.

    ``t1 = normalize(n x e)`` where ``e`` is the coordinate axis least aligned
    with ``n`` (lowest index on ties).
    """
    n = np.asarray(normal, dtype=float)
    e = np.zeros(3)
    e[int(np.argmin(np.abs(n)))] = 1.0
    t1 = np.cross(n, e)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return t1, t2


def frame_from_z(z_axis) -> np.ndarray:
    """Rotation whose columns are ``(t1, t2, z)`` from :func:`tangent_basis`."""
    z = np.asarray(z_axis, dtype=float)
    z = z / np.linalg.norm(z)
    t1, t2 = tangent_basis(z)
    return np.column_stack([t1, t2, z])


@dataclass(frozen=True, eq=False)
class FrictionCone:
    apex: np.ndarray
    normal: np.ndarray  # inward (pushing) direction
    mu: float
    edges: np.ndarray  # (n_f, 3) unit generators

    @property
    def n_f(self) -> int:
        return len(self.edges)

    def contains(self, force, tol: float = 1e-9) -> bool:
        f = np.asarray(force, dtype=float)
        mag = np.linalg.norm(f)
        if mag <= tol:
            return True
        cos_half = 1.0 / np.sqrt(1.0 + self.mu**2)
        return float(f @ self.normal) >= cos_half * mag - tol


def cone_edges(inward, mu: float, n_f: int) -> np.ndarray:
    t1, t2 = tangent_basis(inward)
    beta = np.arctan(mu)
    phi = 2.0 * np.pi * np.arange(n_f) / n_f
    radial = np.cos(phi)[:, None] * t1 + np.sin(phi)[:, None] * t2
    return np.cos(beta) * inward + np.sin(beta) * radial


def build_friction_cone(r_c, outward_normal, mu: float = 0.5, n_f: int = 8) -> FrictionCone:
    """Polyhedral cone of forces that push into the surface at ``r_c``."""
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    if n_f < 3:
        raise ValueError("n_f must be at least 3")
    n = np.asarray(outward_normal, dtype=float)
    norm = np.linalg.norm(n)
    if not np.isfinite(norm) or norm < 1e-12:
        raise DegenerateNormalError("normal has zero length")
    inward = -n / norm
    return FrictionCone(np.asarray(r_c, dtype=float), inward, float(mu), cone_edges(inward, mu, n_f))
