"""Joint estimation of two in-hand poses and their mutual contact.

Each pose particle is a planar offset ``(x, z, theta)`` of an object frame
inside its end-effector frame. Every iteration perturbs the pose particles,
runs one contact particle filter per pose and side, scores all poker/tool
pairings, and resamples from the best of them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cpf import ContactParticleSet, CpfParams, _systematic_rows, cpfgrasp_batch
from .geometry import SignedDistanceField, SurfaceModel, count_penetrating_batch
from .mechanics import RigidTransform, Wrench, rot_y
from .models import GripperSpec, ObjectModel
from .qp import SensorNoise

LOSSES = ("P", "C", "F")
MAX_PROPOSALS = 1_000_000
MIN_ACCEPTANCE = 1e-4
NOISE_REDRAWS = 20
_VALIDITY_SLACK = 1e-12


class InfeasibleGraspError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlanarGraspPose:
    x: float = 0.0
    z: float = 0.0
    theta: float = 0.0

    @classmethod
    def from_array(cls, a) -> PlanarGraspPose:
        x, z, t = np.asarray(a, dtype=float).reshape(3)
        return cls(float(x), float(z), float(t))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.z, self.theta])

    def transform(self) -> RigidTransform:
        return RigidTransform.planar(self.x, self.z, self.theta)


def planar_rotations(poses) -> np.ndarray:
    th = _pose_array(poses)[:, 2]
    c, s = np.cos(th), np.sin(th)
    R = np.zeros((len(th), 3, 3))
    R[:, 0, 0] = c
    R[:, 0, 2] = s
    R[:, 1, 1] = 1.0
    R[:, 2, 0] = -s
    R[:, 2, 2] = c
    return R


def planar_translations(poses) -> np.ndarray:
    P = _pose_array(poses)
    return np.column_stack([P[:, 0], np.zeros(len(P)), P[:, 1]])


def world_poses(ee: RigidTransform, poses) -> tuple[np.ndarray, np.ndarray]:
    """Object-to-world rotations and translations for ``ee`` composed with planar offsets."""
    R = ee.rotation @ planar_rotations(poses)
    t = planar_translations(poses) @ ee.rotation.T + ee.translation
    return R, t


def _pose_array(poses) -> np.ndarray:
    if isinstance(poses, PlanarGraspPose):
        return poses.as_array()[None]
    if len(poses) and isinstance(poses[0], PlanarGraspPose):
        return np.array([p.as_array() for p in poses])
    return np.atleast_2d(np.asarray(poses, dtype=float))


def nearest_finger_distance(poses, surface: SurfaceModel, gripper: GripperSpec) -> np.ndarray:
    """Distance from the finger center to the closest transformed surface point, per pose."""
    P = _pose_array(poses)
    R = planar_rotations(P)
    q = np.einsum("kji,kj->ki", R, gripper.finger_center - planar_translations(P))
    d, _ = surface.kdtree.query(q)
    return d


def grasp_validity(pose, surface: SurfaceModel, gripper: GripperSpec) -> bool:
    """True iff some transformed surface point is within ``gripper.tolerance`` of the finger center."""
    return bool(nearest_finger_distance(pose, surface, gripper)[0] <= gripper.tolerance + _VALIDITY_SLACK)


def _valid(P, surface, gripper) -> np.ndarray:
    if np.isinf(gripper.tolerance):
        return np.ones(len(P), dtype=bool)
    return nearest_finger_distance(P, surface, gripper) <= gripper.tolerance + _VALIDITY_SLACK


def _within_caps(P, caps) -> np.ndarray:
    t_max, r_max = caps
    return (np.abs(P[:, 0]) <= t_max) & (np.abs(P[:, 1]) <= t_max) & (np.abs(P[:, 2]) <= r_max)


def sample_grasp_poses(
    surface: SurfaceModel, gripper: GripperSpec, n: int, caps, rng, chunk: int = 4096
) -> np.ndarray:
    """Rejection-sample ``n`` valid poses uniform in the cap box; returns (n, 3) ``[x, z, theta]``."""
    if n < 1:
        raise ValueError("n must be positive")
    t_max, r_max = caps
    lo = np.array([-t_max, -t_max, -r_max])
    out, proposed = [], 0
    while sum(len(o) for o in out) < n:
        P = rng.uniform(lo, -lo, size=(chunk, 3))
        proposed += chunk
        out.append(P[_valid(P, surface, gripper)])
        accepted = sum(len(o) for o in out)
        if proposed >= MAX_PROPOSALS and accepted < MIN_ACCEPTANCE * proposed:
            raise InfeasibleGraspError(f"accepted {accepted} of {proposed} grasp proposals")
    return np.concatenate(out)[:n]


def pose_noise_model(poses, sigmas, caps, surface: SurfaceModel, gripper: GripperSpec, rng) -> np.ndarray:
    """Gaussian perturbation in ``(x, z, theta)``; invalid draws are retried, then left unperturbed."""
    P = _pose_array(poses).copy()
    sig = np.asarray(sigmas, dtype=float)
    if not np.any(sig > 0):
        return P
    todo = np.arange(len(P))
    for _ in range(NOISE_REDRAWS):
        if len(todo) == 0:
            break
        cand = P[todo] + rng.normal(size=(len(todo), 3)) * sig
        ok = _within_caps(cand, caps) & _valid(cand, surface, gripper)
        P[todo[ok]] = cand[ok]
        todo = todo[~ok]
    return P


# ------------------------------------------------------------------- losses


def penetration_loss(n_pp, eps_pp: int):
    return np.maximum(0, np.asarray(n_pp) - eps_pp)


def penetration_counts(sdf_tool: SignedDistanceField, tool_R, tool_t, surface_poker, poker_R, poker_t) -> np.ndarray:
    """Poker points inside the tool for every (poker i, tool j) world pose pair; shape (I, J)."""
    I, J = len(poker_R), len(tool_R)
    rel_R = np.einsum("jba,ibc->ijac", tool_R, poker_R).reshape(I * J, 3, 3)
    rel_t = np.einsum("jba,ijb->ija", tool_R, poker_t[:, None, :] - tool_t[None]).reshape(I * J, 3)
    return count_penetrating_batch(sdf_tool, rel_R, rel_t, surface_poker.points).reshape(I, J)


def _pairwise_expected_distance(wa, A, wb, B) -> np.ndarray:
    """``sum_ab wa[i,a] wb[j,b] |A[i,a] - B[j,b]|`` for all i, j."""
    D = np.linalg.norm(A[:, None, :, None, :] - B[None, :, None, :, :], axis=-1)
    return np.einsum("ia,jb,ijab->ij", wa, wb, D)


def contact_world(cps: ContactParticleSet, R, t) -> np.ndarray:
    return cps.locations @ R.T + t


def contact_consistency_loss(cp: ContactParticleSet, ct: ContactParticleSet, poker_world, tool_world) -> float:
    """Likelihood-weighted expected world distance between the two contact beliefs (m)."""
    A = contact_world(cp, *poker_world)
    B = contact_world(ct, *tool_world)
    return float(_pairwise_expected_distance(cp.likelihood[None], A[None], ct.likelihood[None], B[None])[0, 0])


def force_alignment_loss(cp: ContactParticleSet, ct: ContactParticleSet, poker_ee: RigidTransform, tool_ee: RigidTransform) -> float:
    """Likelihood-weighted deviation from equal and opposite world contact forces (N)."""
    A = -(cp.force @ poker_ee.rotation.T)
    B = ct.force @ tool_ee.rotation.T
    return float(_pairwise_expected_distance(cp.likelihood[None], A[None], ct.likelihood[None], B[None])[0, 0])


def score_opp(losses, eta_p: float, eta_c: float, mask=LOSSES):
    """Weighted sum ``eta_p L_P + eta_c L_C + L_F`` over the losses in ``mask``."""
    lp, lc, lf = (np.asarray(v, dtype=float) for v in losses)
    s = np.zeros(np.broadcast(lp, lc, lf).shape)
    if "P" in mask:
        s = s + eta_p * lp
    if "C" in mask:
        s = s + eta_c * lc
    if "F" in mask:
        s = s + lf
    return s if s.ndim else float(s)


def selection_weights(scores, lam: float) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    w = np.exp(-lam * (s - s.min()))
    return w / w.sum()


def pair_and_select(scores, n_select: int, lam: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Keep the best ``n_select`` pairs of an (I, J) score table and resample among them.

    Returns ``(poker_idx, tool_idx)`` of the survivors.
    """
    S = np.asarray(scores, dtype=float)
    flat = S.ravel()
    order = np.argsort(flat, kind="stable")[:n_select]
    w = selection_weights(flat[order], lam)
    pick = order[_systematic_rows(w[None], rng)[0]]
    return np.unravel_index(pick, S.shape)


# ---------------------------------------------------------------- the filter


@dataclass(frozen=True)
class ScopeParams:
    n_opp: int = 10
    n_os: int = 10
    # wider, slower-annealed motion than the single-arm default: with 30 inner
    # rounds a 5 mm / 0.8 schedule freezes particles after about ten of them
    cpf: CpfParams = field(
        default_factory=lambda: CpfParams(n_clp=20, n_cs=30, n_f=8, motion_sigma=0.02, motion_anneal=0.9)
    )
    eta_p: float = 0.005
    eta_c: float = 20.0
    eps_pp: int = 144
    pose_noise: tuple = (0.003, 0.003, np.deg2rad(3.0))
    t_max: float = 0.03
    r_max: float = np.deg2rad(45.0)
    likelihood_temperature: float = 1.0
    loss_mask: frozenset = frozenset(LOSSES)

    def __post_init__(self):
        if self.n_opp < 1 or self.n_os < 0:
            raise ValueError("n_opp must be positive and n_os nonnegative")
        if min(self.eta_p, self.eta_c, self.likelihood_temperature) < 0:
            raise ValueError("weights must be nonnegative")
        mask = frozenset(self.loss_mask)
        if not mask or not mask <= set(LOSSES):
            raise ValueError(f"loss mask must be a non-empty subset of {LOSSES}")
        object.__setattr__(self, "loss_mask", mask)
        object.__setattr__(self, "pose_noise", tuple(float(s) for s in self.pose_noise))

    @property
    def caps(self) -> tuple[float, float]:
        return (self.t_max, self.r_max)


@dataclass(frozen=True, eq=False)
class PosePairParticle:
    poker_pose: PlanarGraspPose
    tool_pose: PlanarGraspPose
    contact_poker: ContactParticleSet
    contact_tool: ContactParticleSet
    losses: tuple[float, float, float]
    score: float


@dataclass(frozen=True, eq=False)
class ScopeResult:
    pose_pairs: list[PosePairParticle]
    history: list[dict]

    def poker_poses(self) -> np.ndarray:
        return np.array([p.poker_pose.as_array() for p in self.pose_pairs])

    def tool_poses(self) -> np.ndarray:
        return np.array([p.tool_pose.as_array() for p in self.pose_pairs])


def _transforms(P) -> list[RigidTransform]:
    return [RigidTransform.planar(*p) for p in P]


def score_pairs(
    poker: ObjectModel,
    tool: ObjectModel,
    ee_poker: RigidTransform,
    ee_tool: RigidTransform,
    poker_poses,
    tool_poses,
    sets_poker: list[ContactParticleSet],
    sets_tool: list[ContactParticleSet],
    params: ScopeParams,
) -> dict:
    """All three losses and the score for every (poker i, tool j) pairing."""
    Rp, tp = world_poses(ee_poker, poker_poses)
    Rt, tt = world_poses(ee_tool, tool_poses)
    mask = params.loss_mask
    I, J = len(Rp), len(Rt)
    nan = np.full((I, J), np.nan)
    n_pp, lp, lc, lf = nan, nan, nan, nan
    if "P" in mask:
        n_pp = penetration_counts(tool.sdf, Rt, tt, poker.surface, Rp, tp)
        lp = penetration_loss(n_pp, params.eps_pp).astype(float)
    wp = np.stack([s.likelihood for s in sets_poker])
    wt = np.stack([s.likelihood for s in sets_tool])
    if "C" in mask:
        A = np.einsum("iab,inb->ina", Rp, np.stack([s.locations for s in sets_poker])) + tp[:, None]
        B = np.einsum("jab,jnb->jna", Rt, np.stack([s.locations for s in sets_tool])) + tt[:, None]
        lc = _pairwise_expected_distance(wp, A, wt, B)
    if "F" in mask:
        A = -np.stack([s.force for s in sets_poker]) @ ee_poker.rotation.T
        B = np.stack([s.force for s in sets_tool]) @ ee_tool.rotation.T
        lf = _pairwise_expected_distance(wp, A, wt, B)
    score = score_opp((np.nan_to_num(lp), np.nan_to_num(lc), np.nan_to_num(lf)), params.eta_p, params.eta_c, mask)
    return {"n_pp": n_pp, "L_P": lp, "L_C": lc, "L_F": lf, "score": score}


def scope(
    gamma_p: Wrench,
    gamma_t: Wrench,
    poker: ObjectModel,
    tool: ObjectModel,
    ee_poker: RigidTransform,
    ee_tool: RigidTransform,
    noise_p: SensorNoise,
    noise_t: SensorNoise,
    params: ScopeParams,
    rng,
    truth: tuple | None = None,
    record=None,
    initial_poses: tuple | None = None,
) -> ScopeResult:
    """Simultaneous contact and pose estimation for a poker and a tool.

    ``truth``, when given as ``(poker_pose, tool_pose)``, adds pose errors to
    the history. ``record`` is an optional callable receiving one JSON-ready
    dict per iteration. ``initial_poses`` replaces the sampled starting
    particles with given ``(poker, tool)`` pose arrays of length ``n_opp``.
    """
    from .synth import aggregate_error, pose_errors  # metrics live with the oracle

    n = params.n_opp
    if initial_poses is None:
        P = sample_grasp_poses(poker.surface, poker.gripper, n, params.caps, rng)
        T = sample_grasp_poses(tool.surface, tool.gripper, n, params.caps, rng)
    else:
        P, T = (np.array(_pose_array(x), dtype=float) for x in initial_poses)
        if len(P) != n or len(T) != n:
            raise ValueError(f"initial poses must hold n_opp={n} entries per side")
    history: list[dict] = []
    pairs: list[PosePairParticle] = []
    for it in range(params.n_os):
        P = pose_noise_model(P, params.pose_noise, params.caps, poker.surface, poker.gripper, rng)
        T = pose_noise_model(T, params.pose_noise, params.caps, tool.surface, tool.gripper, rng)
        sp = cpfgrasp_batch(np.tile(gamma_p.vector, (n, 1)), _transforms(P), poker.surface, noise_p, params.cpf, rng)
        st = cpfgrasp_batch(np.tile(gamma_t.vector, (n, 1)), _transforms(T), tool.surface, noise_t, params.cpf, rng)
        table = score_pairs(poker, tool, ee_poker, ee_tool, P, T, sp, st, params)
        pi, tj = pair_and_select(table["score"], n, params.likelihood_temperature, rng)
        pairs = [
            PosePairParticle(
                PlanarGraspPose.from_array(P[i]),
                PlanarGraspPose.from_array(T[j]),
                sp[i],
                st[j],
                (float(table["L_P"][i, j]), float(table["L_C"][i, j]), float(table["L_F"][i, j])),
                float(table["score"][i, j]),
            )
            for i, j in zip(pi, tj)
        ]
        entry = {
            "iteration": it,
            "pairs_scored": int(table["score"].size),
            "poker_poses": P.tolist(),
            "tool_poses": T.tolist(),
            "survivors": [[int(i), int(j)] for i, j in zip(pi, tj)],
            "survivor_scores": [p.score for p in pairs],
            "mean_L_P": _nanmean(table["L_P"][pi, tj]),
            "mean_L_C": _nanmean(table["L_C"][pi, tj]),
            "mean_L_F": _nanmean(table["L_F"][pi, tj]),
            "mean_score": float(table["score"][pi, tj].mean()),
        }
        P, T = P[pi], T[tj]
        if truth is not None:
            ep = [pose_errors(PlanarGraspPose.from_array(p), truth[0]) for p in P]
            et = [pose_errors(PlanarGraspPose.from_array(t), truth[1]) for t in T]
            entry["trans_error_p_cm"] = float(np.mean([e[0] for e in ep]))
            entry["trans_error_t_cm"] = float(np.mean([e[0] for e in et]))
            entry["rot_error_p_deg"] = float(np.mean([e[1] for e in ep]))
            entry["rot_error_t_deg"] = float(np.mean([e[1] for e in et]))
            entry["e_agg_cm"] = aggregate_error(
                (entry["trans_error_p_cm"], entry["trans_error_t_cm"]),
                (np.deg2rad(entry["rot_error_p_deg"]), np.deg2rad(entry["rot_error_t_deg"])),
                poker.r_gyration_cm,
                tool.r_gyration_cm,
            )
        history.append(entry)
        if record is not None:
            record(entry)
    return ScopeResult(pairs, history)


def _nanmean(a) -> float | None:
    a = np.asarray(a, dtype=float)
    return None if np.isnan(a).all() else float(np.nanmean(a))


def jsonl_recorder(path):
    """Callable appending each record as one JSON line to ``path``."""
    path = Path(path)

    def write(entry: dict) -> None:
        with path.open("a") as fh:
            fh.write(json.dumps(entry) + "\n")

    return write


def ee_rotation_for_axis(direction, theta: float) -> np.ndarray:
    """End-effector rotation that points an object's +x axis along ``direction`` (x-z plane)."""
    a = np.arctan2(-direction[2], direction[0])
    return rot_y(a - theta)
