"""Joint in-hand pose and contact estimation for two grasped tools from wrench measurements."""

from .cpf import ContactParticleSet, CpfParams, cpfgrasp, cpfgrasp_batch
from .geometry import SignedDistanceField, SurfaceModel, TriangleMesh, VoxelGrid
from .mechanics import RigidTransform, Wrench
from .qp import SensorNoise, solve_contact_qp
from .scope import PlanarGraspPose, ScopeParams, ScopeResult, scope

__all__ = [
    "ContactParticleSet",
    "CpfParams",
    "PlanarGraspPose",
    "RigidTransform",
    "ScopeParams",
    "ScopeResult",
    "SensorNoise",
    "SignedDistanceField",
    "SurfaceModel",
    "TriangleMesh",
    "VoxelGrid",
    "Wrench",
    "cpfgrasp",
    "cpfgrasp_batch",
    "scope",
    "solve_contact_qp",
]
