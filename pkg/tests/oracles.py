"""Slow, independent reference implementations used to check the fast code paths."""

import itertools

import numpy as np


def nnls_enumerate(A, b):
    """Exact NNLS by trying every support set: feasible stationary points only."""
    n = A.shape[1]
    best_x, best_f = np.zeros(n), float(b @ b)
    for k in range(1, n + 1):
        for S in itertools.combinations(range(n), k):
            cols = list(S)
            xs, *_ = np.linalg.lstsq(A[:, cols], b, rcond=None)
            if np.any(xs < 0):
                continue
            x = np.zeros(n)
            x[cols] = xs
            f = float(np.sum((A @ x - b) ** 2))
            if f < best_f:
                best_x, best_f = x, f
    return best_x, best_f


def nnls_grid_polish(A, b, alpha_max, steps=15, sweeps=2000, rng=None):
    """Coarse grid over one coordinate at a time, then projected coordinate descent.

    A full 15^8 grid is out of reach, so the grid is laid per axis from the
    zero start and the convex objective is then polished to convergence.
    """
    n = A.shape[1]
    x = np.zeros(n)
    grid = np.linspace(0.0, alpha_max, steps)
    for j in range(n):
        vals = [np.sum((A @ np.where(np.arange(n) == j, g, x) - b) ** 2) for g in grid]
        x[j] = grid[int(np.argmin(vals))]
    G = A.T @ A
    h = A.T @ b
    for _ in range(sweeps):
        x_old = x.copy()
        for j in range(n):
            if G[j, j] <= 0:
                continue
            r = h[j] - G[j] @ x + G[j, j] * x[j]
            x[j] = max(0.0, r / G[j, j])
        if np.max(np.abs(x - x_old)) <= 1e-15 * (1 + np.max(np.abs(x))):
            break
    return x, float(np.sum((A @ x - b) ** 2))


def pairwise_loss_naive(wa, A, wb, B):
    total = 0.0
    for i in range(len(wa)):
        for j in range(len(wb)):
            total += wa[i] * wb[j] * np.sqrt(np.sum((A[i] - B[j]) ** 2))
    return total


def point_in_box(points, lo, hi):
    return np.all((points > lo) & (points < hi), axis=1)


def nearest_bruteforce(points, queries):
    d = np.linalg.norm(queries[:, None, :] - points[None, :, :], axis=-1)
    return d.argmin(axis=1), d.min(axis=1)


def shift_planar(pose, ee, delta):
    """Planar grasp pose whose object frame is moved by world vector ``delta`` (x-z plane)."""
    from cpfscope.scope import PlanarGraspPose

    d = ee.rotation.T @ np.asarray(delta, dtype=float)
    return PlanarGraspPose(pose.x + d[0], pose.z + d[2], pose.theta)


def exhaustive_posterior(surface, pose, wrench, noise, params):
    """Contact belief over every surface point: the limit the particle filter approximates."""
    from cpfscope.cpf import _make_set, score_contact_particles

    n = len(surface)
    return score_contact_particles(_make_set(surface, np.arange(n), np.full(n, 1.0 / n)), pose, wrench, noise, params)


def contact_line_loss(scenario, poker, tool, shift, noise, params, direction=None):
    """L_C of exhaustive posteriors after moving both objects by ``shift`` along ``direction``.

    The applied force is projected into the x-z plane so that the contact
    line (its line of action) is reachable by planar grasp offsets; the
    default direction is that line.
    """
    from cpfscope.mechanics import Wrench
    from cpfscope.scope import contact_consistency_loss
    from cpfscope.synth import _wrench_at

    sc = scenario
    F = sc.applied_force * np.array([1.0, 0.0, 1.0])
    u = F / np.linalg.norm(F) if direction is None else np.asarray(direction, dtype=float)
    wp = Wrench.from_vector(_wrench_at(-F, sc.contact_point, sc.ee_poker))
    wt = Wrench.from_vector(_wrench_at(F, sc.contact_point, sc.ee_tool))
    pp = shift_planar(sc.poker_pose_gt, sc.ee_poker, shift * u)
    tp = shift_planar(sc.tool_pose_gt, sc.ee_tool, shift * u)
    cp = exhaustive_posterior(poker.surface, pp.transform(), wp, noise, params)
    ct = exhaustive_posterior(tool.surface, tp.transform(), wt, noise, params)
    pw, tw = sc.ee_poker @ pp.transform(), sc.ee_tool @ tp.transform()
    return contact_consistency_loss(cp, ct, (pw.rotation, pw.translation), (tw.rotation, tw.translation))
