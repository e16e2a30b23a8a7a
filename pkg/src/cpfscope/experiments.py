"""Seeded trial runners shared by the CLI and the scripts."""

from __future__ import annotations

import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .config import ExperimentConfig
from .cpf import cpfgrasp
from .mechanics import RigidTransform
from .models import resolve_model
from .scope import LOSSES, scope
from .synth import ErrorReport, generate_arm_contact, generate_scenario

LOSS_SUBSETS = [
    "".join(c) for r in (1, 2, 3) for c in itertools.combinations(LOSSES, r)
]  # P, C, F, PC, PF, CF, PCF

ERROR_KEYS = ["trans_error_p_cm", "trans_error_t_cm", "rot_error_p_deg", "rot_error_t_deg", "e_agg_cm"]


def trial_seed(cfg: ExperimentConfig, index: int) -> int:
    return cfg.seed + index


def cpf_trial(cfg: ExperimentConfig, index: int) -> dict:
    """Single-arm contact localization on ``cfg.cpf_model`` with a random in-hand offset."""
    model = resolve_model(cfg.cpf_model, cfg.voxel_size)
    seed = trial_seed(cfg, index)
    rng = np.random.default_rng(seed)
    params = cfg.cpf_params()
    x, z = rng.uniform(-0.01, 0.01, size=2)
    pose = RigidTransform.planar(x, z, rng.uniform(-0.3, 0.3))
    truth = generate_arm_contact(
        model, pose, rng, params.mu, params.n_f, cfg.noise(), cfg.force_range
    )
    t0 = time.perf_counter()
    cps = cpfgrasp(truth.wrench, pose, model.surface, cfg.noise(), params, rng)
    wall = time.perf_counter() - t0
    err = float(np.linalg.norm(cps.weighted_mean() - model.surface.points[truth.index]))
    return {"trial": index, "seed": seed, "contact_error_mm": 1e3 * err, "wall_time_s": wall}


def scope_trial(cfg: ExperimentConfig, index: int, with_history: bool = False) -> dict:
    """One SCOPE run on a fresh synthetic scenario; errors are means over the final pose pairs."""
    poker = resolve_model(cfg.poker_model, cfg.voxel_size)
    tool = resolve_model(cfg.tool_model, cfg.voxel_size)
    params = cfg.scope_params()
    noise = cfg.noise()
    seed = trial_seed(cfg, index)
    rng = np.random.default_rng(seed)
    sc = generate_scenario(
        poker, tool, params.caps, params.cpf.mu, rng, noise, noise, params.cpf.n_f, cfg.force_range, params.eps_pp
    )
    t0 = time.perf_counter()
    res = scope(
        sc.wrench_poker, sc.wrench_tool, poker, tool, sc.ee_poker, sc.ee_tool, noise, noise, params, rng,
        truth=(sc.poker_pose_gt, sc.tool_pose_gt),
    )  # fmt: skip
    wall = time.perf_counter() - t0
    rep = ErrorReport.from_estimates(
        res.poker_poses(), res.tool_poses(), sc.poker_pose_gt, sc.tool_pose_gt, poker.r_gyration_cm, tool.r_gyration_cm
    )
    losses = np.array([p.losses for p in res.pose_pairs]).mean(axis=0)
    row = {
        "trial": index,
        "seed": seed,
        "trans_error_p_cm": rep.trans_error_p,
        "trans_error_t_cm": rep.trans_error_t,
        "rot_error_p_deg": rep.rot_error_p,
        "rot_error_t_deg": rep.rot_error_t,
        "e_agg_cm": rep.e_agg,
    }
    for name, key, v in zip(LOSSES, ("L_P", "L_C_m", "L_F_N"), losses):
        row[key] = float(v) if name in params.loss_mask else None
    row["wall_time_s"] = wall
    if with_history:
        row["history"] = res.history
    return row


def _call(args):
    fn, cfg, i, kw = args
    return fn(cfg, i, **kw)


def run_trials(fn, cfg: ExperimentConfig, progress=None, **kw) -> list[dict]:
    """Run ``cfg.trials`` trials; rows come back ordered by trial index."""
    jobs = [(fn, cfg, i, kw) for i in range(cfg.trials)]
    if cfg.jobs <= 1:
        rows = []
        for j in jobs:
            rows.append(_call(j))
            if progress:
                progress(rows[-1])
        return rows
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        rows = list(pool.map(_call, jobs))
    if progress:
        for r in rows:
            progress(r)
    return rows


def summarize(rows: list[dict], keys=ERROR_KEYS) -> dict:
    out = {}
    for k in keys:
        v = np.array([r[k] for r in rows if r.get(k) is not None], dtype=float)
        out[k + "_mean"] = float(v.mean()) if len(v) else None
        out[k + "_std"] = float(v.std(ddof=1)) if len(v) > 1 else (0.0 if len(v) else None)
    return out


def ablation(cfg: ExperimentConfig, subsets=LOSS_SUBSETS, progress=None) -> list[dict]:
    rows = []
    for mask in subsets:
        trials = run_trials(scope_trial, replace(cfg, loss_mask=mask), progress)
        rows.append({"losses": mask, "trials": len(trials), **summarize(trials)})
    return rows


def sweep(cfg: ExperimentConfig, progress=None) -> list[dict]:
    rows = []
    for n_clp, n_opp in itertools.product(cfg.sweep_n_clp, cfg.sweep_n_opp):
        trials = run_trials(scope_trial, replace(cfg, n_clp=int(n_clp), n_opp=int(n_opp)), progress)
        rows.append({"n_clp": int(n_clp), "n_opp": int(n_opp), "trials": len(trials), **summarize(trials)})
    return rows
