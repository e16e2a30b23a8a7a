"""Contact-line ambiguity: L_C as both objects slide along the force's line of action.

Each arm's belief is the exhaustive posterior over its whole surface, so the
numbers reflect the loss itself rather than particle sampling luck.
"""

import argparse

import numpy as np

from cpfscope.cpf import _make_set, score_contact_particles
from cpfscope.mechanics import Wrench
from cpfscope.models import builtin_model
from cpfscope.qp import SensorNoise
from cpfscope.scope import PlanarGraspPose, ScopeParams, contact_consistency_loss
from cpfscope.synth import _wrench_at, generate_scenario


def posterior(surface, pose, wrench, noise, params):
    n = len(surface)
    return score_contact_particles(_make_set(surface, np.arange(n), np.full(n, 1.0 / n)), pose, wrench, noise, params)


def shifted(pose, ee, delta):
    d = ee.rotation.T @ delta
    return PlanarGraspPose(pose.x + d[0], pose.z + d[2], pose.theta)


def loss_after_shift(sc, poker, tool, h, u, noise, params):
    F = sc.applied_force * np.array([1.0, 0.0, 1.0])
    wp = Wrench.from_vector(_wrench_at(-F, sc.contact_point, sc.ee_poker))
    wt = Wrench.from_vector(_wrench_at(F, sc.contact_point, sc.ee_tool))
    pp, tp = shifted(sc.poker_pose_gt, sc.ee_poker, h * u), shifted(sc.tool_pose_gt, sc.ee_tool, h * u)
    cp = posterior(poker.surface, pp.transform(), wp, noise, params)
    ct = posterior(tool.surface, tp.transform(), wt, noise, params)
    pw, tw = sc.ee_poker @ pp.transform(), sc.ee_tool @ tp.transform()
    return contact_consistency_loss(cp, ct, (pw.rotation, pw.translation), (tw.rotation, tw.translation))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--shifts", default="-0.01,-0.005,0.005,0.01", help="metres")
    args = p.parse_args()
    poker, tool = builtin_model("poker"), builtin_model("wrench")
    noise = SensorNoise.isotropic(0.1, 0.005)
    params = ScopeParams().cpf
    shifts = [float(v) for v in args.shifts.split(",")]
    print(f"{'seed':>4} {'L_C base (cm)':>14} {'along/shift':>12} {'across/shift':>13}")
    for seed in range(args.seeds):
        sc = generate_scenario(poker, tool, (0.03, np.deg2rad(45)), 0.5, np.random.default_rng(seed))
        F = sc.applied_force * np.array([1.0, 0.0, 1.0])
        u = F / np.linalg.norm(F)
        perp = np.cross([0.0, 1.0, 0.0], u)
        base = loss_after_shift(sc, poker, tool, 0.0, u, noise, params)
        along = max(abs(loss_after_shift(sc, poker, tool, h, u, noise, params) - base) / abs(h) for h in shifts)
        across = max(abs(loss_after_shift(sc, poker, tool, h, perp, noise, params) - base) / abs(h) for h in shifts)
        print(f"{seed:>4} {100 * base:>14.2f} {along:>12.3f} {across:>13.3f}")


if __name__ == "__main__":
    main()
