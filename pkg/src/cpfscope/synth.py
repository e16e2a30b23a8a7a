"""Synthetic ground truth, wrench logs, noise calibration and error metrics."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import count_penetrating
from .mechanics import RigidTransform, Wrench, cone_edges
from .models import ObjectModel
from .qp import SensorNoise, nnls
from .scope import PlanarGraspPose, ee_rotation_for_axis, sample_grasp_poses

FORCE_RANGE = (2.0, 15.0)
TRAVEL = 0.20
STEP = 0.001
BISECT_TOL = 1e-4
ATTEMPTS = 50


class ScenarioError(RuntimeError):
    pass


def _wrench_at(F, point, ee: RigidTransform) -> np.ndarray:
    """Wrench at the end-effector origin, in its frame, of force ``F`` applied at ``point`` (world)."""
    f = ee.rotation.T @ F
    r = ee.rotation.T @ (point - ee.translation)
    return np.concatenate([f, np.cross(r, f)])


def _noisy(w: np.ndarray, noise: SensorNoise | None, rng) -> Wrench:
    if noise is not None:
        w = w + rng.normal(size=6) * np.sqrt(noise.sigma_diag)
    return Wrench.from_vector(w)


@dataclass(frozen=True, eq=False)
class ArmContact:
    """Single-arm ground truth: a contact at ``surface.points[index]`` under a known grasp."""

    pose: RigidTransform
    index: int
    force_contact: np.ndarray  # in the particle's contact frame
    wrench_clean: Wrench
    wrench: Wrench


def generate_arm_contact(
    model: ObjectModel,
    pose: RigidTransform,
    rng,
    mu: float = 0.5,
    n_f: int = 8,
    noise: SensorNoise | None = None,
    force_range=FORCE_RANGE,
    index: int | None = None,
) -> ArmContact:
    """Contact force drawn from the polyhedral cone at a surface point, seen at the end effector."""
    S = model.surface
    i = int(rng.integers(len(S))) if index is None else int(index)
    fc = cone_edges(np.array([0.0, 0.0, 1.0]), mu, n_f).T @ rng.dirichlet(np.ones(n_f)) * rng.uniform(*force_range)
    f = pose.rotation @ S.contact_frames[i] @ fc
    p = pose.apply(S.points[i])
    clean = np.concatenate([f, np.cross(p, f)])
    return ArmContact(pose, i, fc, Wrench.from_vector(clean), _noisy(clean, noise, rng))


@dataclass(frozen=True, eq=False)
class Scenario:
    poker_pose_gt: PlanarGraspPose
    tool_pose_gt: PlanarGraspPose
    ee_poker: RigidTransform
    ee_tool: RigidTransform
    contact_point: np.ndarray  # world
    contact_normal: np.ndarray  # outward from the tool, world
    applied_force: np.ndarray  # on the tool, world (N)
    wrench_poker: Wrench
    wrench_tool: Wrench
    wrench_poker_clean: Wrench
    wrench_tool_clean: Wrench
    poker_index: int
    tool_index: int
    poker_normal: np.ndarray  # outward from the poker, world
    n_pp: int

    @property
    def poker_world(self) -> RigidTransform:
        return self.ee_poker @ self.poker_pose_gt.transform()

    @property
    def tool_world(self) -> RigidTransform:
        return self.ee_tool @ self.tool_pose_gt.transform()


def _in_cone(F, edges) -> bool:
    _, r, _ = nnls(edges.T, F)
    return r <= 1e-18 * max(1.0, F @ F)


def _slide(poker: ObjectModel, tool: ObjectModel, tool_world, Rw, start, d):
    """Advance the poker along ``d`` to first contact; returns the free-side offset or None."""
    pts = poker.surface.points @ Rw.T
    inv = tool_world.inverse()

    def gap(s):
        v = tool.sdf.sample_many(inv.apply(pts + start + s * d), fill=np.inf)
        return float(v.min())

    if gap(0.0) <= 0:
        return None
    lo = 0.0
    for s in np.arange(STEP, TRAVEL + STEP / 2, STEP):
        if gap(s) <= 0:
            hi = s
            while hi - lo > BISECT_TOL:
                mid = 0.5 * (lo + hi)
                lo, hi = (mid, hi) if gap(mid) > 0 else (lo, mid)
            return lo
        lo = s
    return None


def generate_scenario(
    poker: ObjectModel,
    tool: ObjectModel,
    caps,
    mu: float,
    rng,
    noise_p: SensorNoise | None = None,
    noise_t: SensorNoise | None = None,
    n_f: int = 8,
    force_range=FORCE_RANGE,
    eps_pp: int = 144,
    max_tilt: float = np.deg2rad(20.0),
    standoff: float = 0.03,
) -> Scenario:
    """Random poke of the tool by the poker's tip with both arms in the world x-z plane.

    The tool end effector sits at the world origin. The poker approaches a
    random rim point of the tool, tilted up to ``max_tilt`` from its normal,
    and slides until first contact. Its pose is then nudged by under one
    voxel so that a poker surface point coincides with a tool surface point.
    """
    St, Sp = tool.surface, poker.surface
    rim_t = np.flatnonzero(np.abs(St.normals[:, 1]) < 0.5)
    tip_x = Sp.points[:, 0].max()
    tip = np.array([tip_x, 0.0, 0.0])
    ee_tool = RigidTransform.identity()
    for _ in range(ATTEMPTS):
        P_gt = PlanarGraspPose.from_array(sample_grasp_poses(Sp, poker.gripper, 1, caps, rng)[0])
        T_gt = PlanarGraspPose.from_array(sample_grasp_poses(St, tool.gripper, 1, caps, rng)[0])
        tool_world = ee_tool @ T_gt.transform()
        j0 = rng.choice(rim_t)
        target = tool_world.apply(St.points[j0])
        n = tool_world.apply_vector(St.normals[j0])
        n = np.array([n[0], 0.0, n[2]]) / np.hypot(n[0], n[2])
        phi = rng.uniform(-max_tilt, max_tilt)
        d = -(RigidTransform.planar(0, 0, phi).apply_vector(n))
        Rw = ee_rotation_for_axis(d, 0.0)
        start = target - d * standoff - Rw @ tip
        s = _slide(poker, tool, tool_world, Rw, start, d)
        if s is None:
            continue
        t_w = start + s * d
        pw = poker.surface.points @ Rw.T + t_w
        vals = tool.sdf.sample_many(tool_world.inverse().apply(pw), fill=np.inf)
        # among the closest poker points prefer the mid-plane: slab edges carry diagonal normals
        near = np.flatnonzero(vals <= vals.min() + 0.5 * tool.sdf.voxel_size)
        k = int(near[np.lexsort((vals[near], np.round(np.abs(pw[near, 1]), 9)))[0]])
        j = int(St.nearest(tool_world.inverse().apply(pw[k]))[0])
        c = tool_world.apply(St.points[j])
        t_w = t_w + (c - pw[k])
        poker_world = RigidTransform(Rw, t_w)
        n_pp = count_penetrating(tool.sdf, tool_world, Sp, poker_world)
        if n_pp > eps_pp:
            continue
        n_t = tool_world.apply_vector(St.normals[j])
        n_p = poker_world.apply_vector(Sp.normals[k])
        frame_t = tool_world.rotation @ St.contact_frames[j]
        # forces the poker can receive: its cone, in world
        poker_edges = cone_edges(-n_p, mu, n_f)
        tool_edges = cone_edges(np.array([0.0, 0.0, 1.0]), mu, n_f)
        F = None
        for _ in range(200):
            cand = frame_t @ (tool_edges.T @ rng.dirichlet(np.ones(n_f))) * rng.uniform(*force_range)
            if _in_cone(-cand, poker_edges):
                F = cand
                break
        if F is None:
            continue
        ee_poker = poker_world @ P_gt.transform().inverse()
        wp = _wrench_at(-F, c, ee_poker)
        wt = _wrench_at(F, c, ee_tool)
        return Scenario(
            P_gt,
            T_gt,
            ee_poker,
            ee_tool,
            c,
            n_t,
            F,
            _noisy(wp, noise_p, rng),
            _noisy(wt, noise_t, rng),
            Wrench.from_vector(wp),
            Wrench.from_vector(wt),
            k,
            j,
            n_p,
            n_pp,
        )
    raise ScenarioError(f"no admissible contact after {ATTEMPTS} attempts")


# ------------------------------------------------------------- wrench logs


class LogParseError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.path, self.line = path, line


class LogOrderError(ValueError):
    pass


_FORCE_UNITS = {"N": 1.0, "mN": 1e-3, "kN": 1e3}
_MOMENT_UNITS = {"N·m": 1.0, "N*m": 1.0, "Nm": 1.0, "N·mm": 1e-3, "N*mm": 1e-3, "Nmm": 1e-3, "mN·m": 1e-3, "mN*m": 1e-3}
_TIME_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6}
_HEADER = re.compile(r"#\s*units:\s*([^,;]+),\s*([^,;]+),\s*([^,;]+);\s*frame:\s*(\S+)\s*$")


@dataclass(frozen=True, eq=False)
class WrenchLog:
    timestamps: np.ndarray  # s
    samples: np.ndarray  # (n, 6) in N and N m
    frame: str = "ee"

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        x = np.asarray(self.samples, dtype=float).reshape(len(t), 6)
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise LogOrderError("timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "samples", x)

    def __len__(self) -> int:
        return len(self.timestamps)

    def window(self, t0: float, t1: float) -> np.ndarray:
        m = (self.timestamps >= t0) & (self.timestamps <= t1)
        return self.samples[m]


def load_wrench_log(path) -> WrenchLog:
    """Read ``# units: N, N·m, s; frame: <id>`` followed by ``t,fx,fy,fz,mx,my,mz`` rows."""
    path = Path(path)
    scale = np.ones(7)
    frame = "ee"
    rows = []
    last_t, last_line = None, 0
    with path.open(encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                m = _HEADER.match(line)
                if m:
                    fu, mu_, tu, frame = (g.strip() for g in m.groups())
                    try:
                        scale[0] = _TIME_UNITS[tu]
                        scale[1:4] = _FORCE_UNITS[fu]
                        scale[4:] = _MOMENT_UNITS[mu_]
                    except KeyError as e:
                        raise LogParseError(path, ln, f"unknown unit {e.args[0]!r}") from None
                continue
            fields = [f.strip() for f in line.split(",")]
            if fields[0] == "t":
                continue
            if len(fields) != 7:
                raise LogParseError(path, ln, f"expected 7 fields, got {len(fields)}")
            try:
                vals = np.array([float(f) for f in fields])
            except ValueError:
                raise LogParseError(path, ln, "non-numeric field") from None
            if not np.all(np.isfinite(vals)):
                raise LogParseError(path, ln, "non-finite value")
            if last_t is not None and vals[0] <= last_t:
                raise LogOrderError(f"{path}:{ln}: timestamp {vals[0]} not after line {last_line}")
            last_t, last_line = vals[0], ln
            rows.append(vals)
    data = np.array(rows).reshape(-1, 7) * scale
    return WrenchLog(data[:, 0], data[:, 1:], frame)


def save_wrench_log(log: WrenchLog, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"# units: N, N·m, s; frame: {log.frame}\n")
        fh.write("t,fx,fy,fz,mx,my,mz\n")
        for t, x in zip(log.timestamps, log.samples):
            fh.write(",".join(repr(float(v)) for v in (t, *x)) + "\n")


MIN_CALIBRATION_SAMPLES = 30


def calibrate_sigma(log: WrenchLog, window=None) -> SensorNoise:
    """Per-component unbiased variance of the bias-removed samples in ``window`` (t0, t1)."""
    x = log.samples if window is None else log.window(*window)
    if len(x) < MIN_CALIBRATION_SAMPLES:
        raise ValueError(f"window holds {len(x)} samples, need {MIN_CALIBRATION_SAMPLES}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite samples in window")
    x = x - x.mean(axis=0)
    return SensorNoise(x.var(axis=0, ddof=1))


def steady_window(log: WrenchLog, duration: float = 2.0) -> tuple[float, float]:
    """Suggest the ``duration``-long window with the lowest total normalized variance."""
    t = log.timestamps
    if len(t) == 0 or t[-1] - t[0] < duration:
        raise ValueError("log shorter than the requested window")
    ref = log.samples.var(axis=0)
    ref[ref <= 0] = 1.0
    best, best_t0 = np.inf, t[0]
    ends = np.searchsorted(t, t + duration, side="right")
    for i, e in enumerate(ends):
        if t[i] + duration > t[-1] + 1e-12:
            break
        if e - i < 2:
            continue
        v = float((log.samples[i:e].var(axis=0) / ref).sum())
        if v < best:
            best, best_t0 = v, t[i]
    return (float(best_t0), float(best_t0 + duration))


# ------------------------------------------------------------------ metrics


def pose_errors(estimate: PlanarGraspPose, truth: PlanarGraspPose) -> tuple[float, float]:
    """Planar translation error (cm) and wrapped rotation error (deg)."""
    trans = 100.0 * float(np.hypot(estimate.x - truth.x, estimate.z - truth.z))
    d = np.rad2deg(estimate.theta - truth.theta) % 360.0
    return trans, float(min(d, 360.0 - d))


def aggregate_error(trans_cm, rot_rad, r_g_p: float, r_g_t: float) -> float:
    """Translation errors plus gyration-scaled rotation errors, in cm."""
    (tp, tt), (rp, rt) = trans_cm, rot_rad
    return float(tp + tt + r_g_p * rp + r_g_t * rt)


@dataclass(frozen=True)
class ErrorReport:
    trans_error_p: float  # cm
    trans_error_t: float
    rot_error_p: float  # deg
    rot_error_t: float
    e_agg: float  # cm

    @property
    def rot_error_p_rad(self) -> float:
        return float(np.deg2rad(self.rot_error_p))

    @property
    def rot_error_t_rad(self) -> float:
        return float(np.deg2rad(self.rot_error_t))

    @classmethod
    def from_estimates(cls, poker_est, tool_est, truth_p, truth_t, r_g_p: float, r_g_t: float) -> ErrorReport:
        """Mean per-particle errors over the supplied pose estimates."""
        ep = np.array([pose_errors(PlanarGraspPose.from_array(p), truth_p) for p in np.atleast_2d(poker_est)])
        et = np.array([pose_errors(PlanarGraspPose.from_array(p), truth_t) for p in np.atleast_2d(tool_est)])
        tp, rp = ep.mean(axis=0)
        tt, rt = et.mean(axis=0)
        e = aggregate_error((tp, tt), (np.deg2rad(rp), np.deg2rad(rt)), r_g_p, r_g_t)
        return cls(float(tp), float(tt), float(rp), float(rt), e)


ERROR_COLUMNS = [
    ("trans_error_p", "trans_error_p_cm"),
    ("trans_error_t", "trans_error_t_cm"),
    ("rot_error_p", "rot_error_p_deg"),
    ("rot_error_t", "rot_error_t_deg"),
    ("e_agg", "e_agg_cm"),
]


def write_error_csv(reports: list[ErrorReport], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial"] + [h for _, h in ERROR_COLUMNS])
        for i, r in enumerate(reports):
            w.writerow([i] + [repr(getattr(r, a)) for a, _ in ERROR_COLUMNS])
