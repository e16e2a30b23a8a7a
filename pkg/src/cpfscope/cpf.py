"""Contact particle filter over the surface of a grasped object."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .geometry import SurfaceModel
from .mechanics import RigidTransform, Wrench, cone_edges
from .qp import ContactQpResult, SensorNoise, nnls_batch

# contact-frame cone generators are the same for every particle: the contact
# frame's z axis is the inward normal and its x, y axes the deterministic tangents
_Z = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class CpfParams:
    n_clp: int = 40
    n_cs: int = 10
    n_f: int = 8
    mu: float = 0.5
    motion_sigma: float = 0.005
    motion_anneal: float = 0.8
    resample_threshold: float = 1.0

    def __post_init__(self):
        if self.n_clp < 1:
            raise ValueError("n_clp must be positive")
        if self.n_cs < 0:
            raise ValueError("n_cs must be nonnegative")
        if self.n_f < 3:
            raise ValueError("n_f must be at least 3")
        if self.mu < 0 or self.motion_sigma < 0:
            raise ValueError("mu and motion_sigma must be nonnegative")


@dataclass(frozen=True)
class ContactParticle:
    location: np.ndarray
    normal: np.ndarray
    likelihood: float
    qp: ContactQpResult | None


@dataclass(frozen=True, eq=False)
class ContactParticleSet:
    """Particles as parallel arrays; ``index`` points into the surface model.

    ``force`` and ``moment`` are the QP's predicted end-effector wrench for
    each particle (the force part equals the contact force on the object,
    expressed in the end-effector frame). Unscored sets carry NaN there.
    """

    surface: SurfaceModel
    index: np.ndarray
    likelihood: np.ndarray
    alpha: np.ndarray
    force: np.ndarray
    moment: np.ndarray
    residual: np.ndarray
    kkt_gap: np.ndarray
    iteration: int = 0
    mu: float = 0.5

    def __len__(self) -> int:
        return len(self.index)

    @property
    def locations(self) -> np.ndarray:
        return self.surface.points[self.index]

    @property
    def normals(self) -> np.ndarray:
        return self.surface.normals[self.index]

    @property
    def scored(self) -> bool:
        return not np.isnan(self.residual).any()

    def weighted_mean(self) -> np.ndarray:
        return self.likelihood @ self.locations

    def contact_forces(self) -> np.ndarray:
        """Forces ``B alpha`` in each particle's contact frame."""
        return self.alpha @ cone_edges(_Z, self.mu, self.alpha.shape[1])

    @property
    def particles(self) -> list[ContactParticle]:
        fc = self.contact_forces()
        out = []
        for k in range(len(self)):
            qp = None
            if self.scored:
                qp = ContactQpResult(
                    self.alpha[k],
                    Wrench(fc[k], np.zeros(3), "contact"),
                    Wrench(self.force[k], self.moment[k], "ee"),
                    float(self.residual[k]),
                    float(self.kkt_gap[k]),
                )
            out.append(ContactParticle(self.locations[k], self.normals[k], float(self.likelihood[k]), qp))
        return out


def _empty_qp(n: int, n_f: int) -> dict:
    return dict(
        alpha=np.full((n, n_f), np.nan),
        force=np.full((n, 3), np.nan),
        moment=np.full((n, 3), np.nan),
        residual=np.full(n, np.nan),
        kkt_gap=np.full(n, np.nan),
    )


def _init_rows(surface: SurfaceModel, k: int, n: int, rng) -> np.ndarray:
    if len(surface) == 0:
        raise ValueError("surface model is empty")
    if n < 1:
        raise ValueError("n_clp must be positive")
    return np.stack([rng.choice(len(surface), size=n, replace=n > len(surface)) for _ in range(k)])


def _motion_rows(surface: SurfaceModel, idx: np.ndarray, sigma: float, rng) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return idx
    moved = surface.points[idx] + rng.normal(scale=sigma, size=idx.shape + (3,))
    return surface.nearest(moved.reshape(-1, 3)).reshape(idx.shape)


def _score_rows(surface, idx, rot, trans, gammas, noise: SensorNoise, mu: float, n_f: int):
    """QP scoring of K particle rows; row k uses pose ``(rot[k], trans[k])`` and wrench ``gammas[k]``."""
    K, N = idx.shape
    edges = cone_edges(_Z, mu, n_f)
    R = np.einsum("kab,knbc->knac", rot, surface.contact_frames[idx])  # contact frames in EE
    p = np.einsum("kab,knb->kna", rot, surface.points[idx]) + trans[:, None, :]
    F = R @ edges.T  # (K, N, 3, n_f)
    px, py, pz = (p[..., i, None] for i in range(3))
    fx, fy, fz = F[..., 0, :], F[..., 1, :], F[..., 2, :]
    Mom = np.stack([py * fz - pz * fy, pz * fx - px * fz, px * fy - py * fx], axis=2)
    M = np.concatenate([F, Mom], axis=2).reshape(K * N, 6, n_f)
    W = noise.whitening
    rhs = np.repeat(gammas * W, N, axis=0)
    alpha, resid, kkt = nnls_batch(W[None, :, None] * M, rhs)
    wrench = np.einsum("kij,kj->ki", M, alpha).reshape(K, N, 6)
    resid = resid.reshape(K, N)
    lik = np.exp(-0.5 * (resid - resid.min(axis=1, keepdims=True)))
    lik /= lik.sum(axis=1, keepdims=True)
    return alpha.reshape(K, N, n_f), wrench, resid, kkt.reshape(K, N), lik


def _systematic_rows(weights: np.ndarray, rng) -> np.ndarray:
    K, N = weights.shape
    w = np.array(weights, dtype=float)
    total = w.sum(axis=1, keepdims=True)
    bad = ~np.isfinite(total[:, 0]) | (total[:, 0] <= 0)
    w[bad] = 1.0
    c = np.cumsum(w / w.sum(axis=1, keepdims=True), axis=1)
    c[:, -1] = 1.0
    u = rng.uniform(0.0, 1.0 / N, size=(K, 1)) + np.arange(N) / N
    idx = np.stack([np.searchsorted(c[k], u[k], side="right") for k in range(K)])
    return np.minimum(idx, N - 1)


def _make_set(surface, idx, lik, qp=None, iteration=0, mu=0.5) -> ContactParticleSet:
    n = len(idx)
    if qp is None:
        return ContactParticleSet(surface, idx, lik, **_empty_qp(n, 8), iteration=iteration, mu=mu)
    alpha, wrench, resid, kkt = qp
    return ContactParticleSet(
        surface, idx, lik, alpha, wrench[:, :3], wrench[:, 3:], resid, kkt, iteration=iteration, mu=mu
    )


def init_contact_particles(surface: SurfaceModel, n_clp: int, rng, n_f: int = 8) -> ContactParticleSet:
    """Uniform draw of surface points (without replacement when possible)."""
    idx = _init_rows(surface, 1, n_clp, rng)[0]
    return ContactParticleSet(surface, idx, np.full(n_clp, 1.0 / n_clp), **_empty_qp(n_clp, n_f))


def motion_model(cps: ContactParticleSet, surface: SurfaceModel, sigma: float, rng) -> ContactParticleSet:
    """Isotropic Gaussian jitter followed by projection onto the nearest surface point."""
    idx = _motion_rows(surface, cps.index[None], sigma, rng)[0]
    if sigma == 0:
        return cps
    return replace(cps, surface=surface, index=idx, **_empty_qp(len(cps), cps.alpha.shape[1]))


def score_contact_particles(
    cps: ContactParticleSet,
    pose: RigidTransform,
    gamma_e: Wrench,
    noise: SensorNoise,
    params: CpfParams,
) -> ContactParticleSet:
    """Solve the contact QP for every particle and attach normalized likelihoods.

    Likelihoods are ``exp(-residual / 2)`` normalized over the set; they are
    evaluated relative to the smallest residual so that large residuals
    cannot underflow the whole set to zero.
    """
    alpha, wrench, resid, kkt, lik = _score_rows(
        cps.surface,
        cps.index[None],
        pose.rotation[None],
        pose.translation[None],
        gamma_e.vector[None],
        noise,
        params.mu,
        params.n_f,
    )
    return _make_set(cps.surface, cps.index, lik[0], (alpha[0], wrench[0], resid[0], kkt[0]), cps.iteration, params.mu)


def systematic_indices(weights, n: int, rng) -> np.ndarray:
    """Low-variance resampling: one uniform offset, ``n`` evenly spaced pointers."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    w = np.full(len(w), 1.0 / len(w)) if not np.isfinite(total) or total <= 0 else w / total
    c = np.cumsum(w)
    c[-1] = 1.0
    u = rng.uniform(0.0, 1.0 / n)
    idx = np.searchsorted(c, u + np.arange(n) / n, side="right")
    return np.minimum(idx, len(w) - 1)


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w**2))


def _take(cps: ContactParticleSet, pick) -> ContactParticleSet:
    n = len(pick)
    return replace(
        cps,
        index=cps.index[pick],
        likelihood=np.full(n, 1.0 / n),
        alpha=cps.alpha[pick],
        force=cps.force[pick],
        moment=cps.moment[pick],
        residual=cps.residual[pick],
        kkt_gap=cps.kkt_gap[pick],
    )


def low_variance_resample(cps: ContactParticleSet, rng) -> ContactParticleSet:
    """Systematic resampling; output likelihoods are reset to uniform."""
    return _take(cps, _systematic_rows(cps.likelihood[None], rng)[0])


def cpfgrasp_batch(
    gammas,
    poses: list[RigidTransform],
    surface: SurfaceModel,
    noise: SensorNoise,
    params: CpfParams,
    rng,
    history: list | None = None,
) -> list[ContactParticleSet]:
    """Run independent filters on one surface in lockstep, one per (wrench, pose)."""
    gammas = np.atleast_2d(np.asarray(gammas, dtype=float))
    K, N = len(poses), params.n_clp
    rot = np.stack([p.rotation for p in poses])
    trans = np.stack([p.translation for p in poses])
    idx = _init_rows(surface, K, N, rng)
    sigma = params.motion_sigma
    for it in range(params.n_cs):
        idx = _motion_rows(surface, idx, sigma, rng)
        alpha, wrench, resid, kkt, lik = _score_rows(surface, idx, rot, trans, gammas, noise, params.mu, params.n_f)
        if history is not None:
            history.append([_make_set(surface, idx[k], lik[k], (alpha[k], wrench[k], resid[k], kkt[k]), it, params.mu) for k in range(K)])
        ess = 1.0 / np.sum(lik**2, axis=1)
        do = ess <= params.resample_threshold * N
        if do.any():
            pick = _systematic_rows(lik, rng)
            idx = np.where(do[:, None], np.take_along_axis(idx, pick, axis=1), idx)
        sigma *= params.motion_anneal
    alpha, wrench, resid, kkt, lik = _score_rows(surface, idx, rot, trans, gammas, noise, params.mu, params.n_f)
    return [
        _make_set(surface, idx[k], lik[k], (alpha[k], wrench[k], resid[k], kkt[k]), params.n_cs, params.mu)
        for k in range(K)
    ]


def cpfgrasp(
    gamma_e: Wrench,
    pose: RigidTransform,
    surface: SurfaceModel,
    noise: SensorNoise,
    params: CpfParams,
    rng,
    history: list | None = None,
) -> ContactParticleSet:
    """Contact particle filter for a grasped object with known in-hand pose.

    Runs ``n_cs`` rounds of motion, scoring and resampling, then scores the
    final particle positions. ``history``, when given, receives the scored
    set of every round.
    """
    hist = [] if history is not None else None
    out = cpfgrasp_batch(gamma_e.vector[None], [pose], surface, noise, params, rng, hist)[0]
    if history is not None:
        history.extend(h[0] for h in hist)
    return out


def dump_particles(cps: ContactParticleSet, path, append: bool = False) -> None:
    """JSON lines: one particle per line."""
    mode = "a" if append else "w"
    with Path(path).open(mode) as fh:
        for loc, nrm, lik, res in zip(cps.locations, cps.normals, cps.likelihood, cps.residual):
            rec = {
                "iteration": cps.iteration,
                "location": loc.tolist(),
                "normal": nrm.tolist(),
                "likelihood": float(lik),
                "residual": None if np.isnan(res) else float(res),
            }
            fh.write(json.dumps(rec) + "\n")
