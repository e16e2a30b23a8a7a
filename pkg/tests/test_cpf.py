import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cpfscope.cpf import (
    CpfParams,
    _make_set,
    cpfgrasp,
    dump_particles,
    effective_sample_size,
    init_contact_particles,
    low_variance_resample,
    motion_model,
    score_contact_particles,
    systematic_indices,
)
from cpfscope.mechanics import RigidTransform, Wrench
from cpfscope.qp import SensorNoise
from cpfscope.synth import generate_arm_contact
from oracles import nearest_bruteforce

NOISE = SensorNoise.isotropic(0.1, 0.005)
TABLE_I = CpfParams(n_clp=40, n_cs=10, n_f=8)


def uniform_set(surface, idx):
    idx = np.asarray(idx)
    return _make_set(surface, idx, np.full(len(idx), 1.0 / len(idx)))


def weighted_set(surface, idx, w):
    w = np.asarray(w, float)
    return _make_set(surface, np.asarray(idx), w / w.sum())


def random_contact(model, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    pose = RigidTransform.planar(*rng.uniform(-0.01, 0.01, 2), rng.uniform(-0.3, 0.3))
    ac = generate_arm_contact(model, pose, rng)
    return pose, ac, Wrench.from_vector(scale * ac.wrench_clean.vector)


def test_params_validation():
    with pytest.raises(ValueError):
        CpfParams(n_clp=0)
    with pytest.raises(ValueError):
        CpfParams(n_f=2)
    with pytest.raises(ValueError):
        CpfParams(motion_sigma=-1.0)


def test_init_examples(cube, rng):
    _, _, surface = cube
    one = init_contact_particles(surface, 1, rng)
    assert one.likelihood.tolist() == [1.0]
    every = init_contact_particles(surface, 56, rng)
    assert sorted(every.index.tolist()) == list(range(56))
    np.testing.assert_array_equal(every.likelihood, 1 / 56)
    more = init_contact_particles(surface, 100, rng)
    assert len(more) == 100
    a = init_contact_particles(surface, 20, np.random.default_rng(5))
    b = init_contact_particles(surface, 20, np.random.default_rng(5))
    np.testing.assert_array_equal(a.index, b.index)


def test_init_empty_surface(cube, rng):
    _, _, surface = cube
    empty = type(surface)(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3), int), surface.eps_s)
    with pytest.raises(ValueError):
        init_contact_particles(empty, 5, rng)


def test_motion_zero_sigma_is_identity(hex_key, rng):
    cps = init_contact_particles(hex_key.surface, 40, rng)
    assert motion_model(cps, hex_key.surface, 0.0, rng) is cps
    with pytest.raises(ValueError):
        motion_model(cps, hex_key.surface, -1.0, rng)


def test_motion_stays_on_surface(hex_key, rng):
    S = hex_key.surface
    cps = init_contact_particles(S, 40, rng)
    for sigma in (0.001, 0.005, 0.02):
        cps = motion_model(cps, S, sigma, rng)
        assert len(cps) == 40
        assert np.all(np.abs(hex_key.sdf.sample_many(cps.locations)) <= S.eps_s)
        np.testing.assert_array_equal(cps.normals, S.normals[cps.index])


def test_motion_rms_matches_brute_force_sampler(hex_key):
    S = hex_key.surface
    sigma, n = 0.004, 10_000
    start = np.random.default_rng(0).choice(len(S), size=n)
    moved = motion_model(uniform_set(S, start), S, sigma, np.random.default_rng(1))
    rms = np.sqrt(np.mean(np.sum((moved.locations - S.points[start]) ** 2, axis=1)))
    # independent sampler: own noise stream, brute-force projection
    rng = np.random.default_rng(2)
    q = S.points[start] + rng.normal(scale=sigma, size=(n, 3))
    ref_idx = np.concatenate([nearest_bruteforce(S.points, c)[0] for c in np.array_split(q, 20)])
    ref = np.sqrt(np.mean(np.sum((S.points[ref_idx] - S.points[start]) ** 2, axis=1)))
    assert abs(rms - ref) <= 0.2 * ref


def test_true_contact_gets_maximal_likelihood(hex_key):
    S = hex_key.surface
    for seed in range(20):
        pose, ac, w = random_contact(hex_key, seed)
        others = np.random.default_rng(seed + 100).choice(len(S), size=39, replace=False)
        idx = np.r_[ac.index, others[others != ac.index][:39]]
        scored = score_contact_particles(uniform_set(S, idx), pose, w, NOISE, TABLE_I)
        assert scored.residual[0] <= 1e-12
        assert scored.likelihood[0] >= scored.likelihood.max() - 1e-12
        assert scored.likelihood.sum() == pytest.approx(1.0, abs=1e-9)


def test_pulling_wrench_gives_uniform_likelihoods(cube):
    _, _, surface = cube
    face = np.flatnonzero(surface.normals[:, 0] > 0.95)
    assert len(face) >= 4
    gamma = Wrench([5.0, 0, 0], [0, 0, 0])  # pulls along the outward normal
    scored = score_contact_particles(uniform_set(surface, face), RigidTransform.identity(), gamma, NOISE, TABLE_I)
    floor = float(np.sum((NOISE.whitening * gamma.vector) ** 2))
    np.testing.assert_allclose(scored.residual, floor, rtol=1e-12)
    np.testing.assert_allclose(scored.likelihood, 1 / len(face), rtol=1e-9)


def entropy(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def test_doubling_noise_halves_residuals_and_flattens(hex_key):
    S = hex_key.surface
    pose, ac, w = random_contact(hex_key, 3)
    idx = np.random.default_rng(7).choice(len(S), 40, replace=False)
    a = score_contact_particles(uniform_set(S, idx), pose, ac.wrench, NOISE, TABLE_I)
    b = score_contact_particles(uniform_set(S, idx), pose, ac.wrench, NOISE.scaled(2.0), TABLE_I)
    np.testing.assert_allclose(b.residual, a.residual / 2, rtol=1e-9, atol=1e-12)
    assert entropy(b.likelihood) > entropy(a.likelihood)


def test_resample_delta_and_uniform(hex_key, rng):
    S = hex_key.surface
    idx = np.arange(10)
    delta = low_variance_resample(weighted_set(S, idx, np.eye(10)[3]), rng)
    assert np.all(delta.index == 3)
    np.testing.assert_array_equal(delta.likelihood, 0.1)
    same = low_variance_resample(uniform_set(S, idx), rng)
    assert sorted(same.index.tolist()) == idx.tolist()


class FixedOffset:
    """Stand-in generator that pins the sampler's single uniform offset."""

    def __init__(self, u):
        self.u = u

    def uniform(self, lo, hi, size=None):
        assert lo <= self.u < hi
        return self.u


def test_resample_hand_enumerated():
    w = np.array([0.5, 0.25, 0.25])
    for u in np.linspace(0, 0.2499, 7):
        pick = systematic_indices(w, 4, FixedOffset(u))
        assert np.bincount(pick, minlength=3).tolist() == [2, 1, 1]


def test_resample_degenerate_weights(hex_key, rng):
    cps = _make_set(hex_key.surface, np.arange(8), np.zeros(8))
    out = low_variance_resample(cps, rng)
    assert sorted(out.index.tolist()) == list(range(8))


@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=40), st.integers(0, 2**31))
def test_resample_keeps_count_and_support(w, seed):
    w = np.asarray(w)
    pick = systematic_indices(w, len(w), np.random.default_rng(seed))
    assert len(pick) == len(w)
    if w.sum() > 0:
        assert np.all(w[pick] > 0)
        # each particle is copied floor or ceil of its expected count
        counts = np.bincount(pick, minlength=len(w))
        expected = w / w.sum() * len(w)
        assert np.all(counts >= np.floor(expected - 1e-9)) and np.all(counts <= np.ceil(expected + 1e-9))


def test_resampling_preserves_weighted_mean(hex_key):
    S = hex_key.surface
    rng = np.random.default_rng(11)
    idx = rng.choice(len(S), 40, replace=False)
    w = rng.dirichlet(np.ones(40))
    before = weighted_set(S, idx, w)
    target = before.weighted_mean()
    means = [low_variance_resample(before, np.random.default_rng(s)).locations.mean(axis=0) for s in range(100)]
    dev = np.linalg.norm(np.asarray(means) - target, axis=1)
    assert np.all(dev <= 2 * S.spacing)
    assert np.linalg.norm(np.mean(means, axis=0) - target) <= 0.1 * S.spacing


def test_ess():
    assert effective_sample_size(np.full(4, 0.25)) == pytest.approx(4.0)
    assert effective_sample_size([1.0, 0, 0]) == pytest.approx(1.0)


def test_cpfgrasp_hex_key_accuracy(hex_key):
    ok = 0
    for seed in range(10):
        pose, ac, w = random_contact(hex_key, seed)
        out = cpfgrasp(w, pose, hex_key.surface, NOISE, TABLE_I, np.random.default_rng(seed))
        ok += np.linalg.norm(out.weighted_mean() - hex_key.surface.points[ac.index]) <= 0.005
    assert ok >= 9


def test_cpfgrasp_magnitude_insensitive(hex_key):
    vs = hex_key.sdf.voxel_size
    for seed in range(5):
        pose, _, w1 = random_contact(hex_key, seed)
        _, _, w10 = random_contact(hex_key, seed, scale=10.0)
        a = cpfgrasp(w1, pose, hex_key.surface, NOISE, TABLE_I, np.random.default_rng(seed))
        b = cpfgrasp(w10, pose, hex_key.surface, NOISE, TABLE_I, np.random.default_rng(seed))
        assert np.linalg.norm(a.weighted_mean() - b.weighted_mean()) < 2 * vs


def test_cpfgrasp_zero_iterations(hex_key):
    pose, _, w = random_contact(hex_key, 0)
    params = CpfParams(n_clp=40, n_cs=0)
    out = cpfgrasp(w, pose, hex_key.surface, NOISE, params, np.random.default_rng(4))
    init = init_contact_particles(hex_key.surface, 40, np.random.default_rng(4))
    np.testing.assert_array_equal(out.index, init.index)
    assert out.scored and out.likelihood.sum() == pytest.approx(1.0)


def test_cpfgrasp_invariants_and_determinism(hex_key):
    S = hex_key.surface
    pose, ac, w = random_contact(hex_key, 1)
    runs = []
    for _ in range(2):
        hist = []
        out = cpfgrasp(ac.wrench, pose, S, NOISE, TABLE_I, np.random.default_rng(9), history=hist)
        runs.append((out, hist))
        assert len(hist) == TABLE_I.n_cs
        for h in hist + [out]:
            assert len(h) == TABLE_I.n_clp
            assert h.likelihood.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(np.abs(hex_key.sdf.sample_many(h.locations)) <= S.eps_s)
    (a, ha), (b, hb) = runs
    assert a.index.tobytes() == b.index.tobytes() and a.likelihood.tobytes() == b.likelihood.tobytes()
    assert all(x.index.tobytes() == y.index.tobytes() for x, y in zip(ha, hb))


def test_best_particle_likelihood_improves(hex_key):
    # unnormalized likelihood of the best particle, exp(-r_min / 2); the
    # normalized maximum drifts toward 1/N as the cloud concentrates
    good = 0
    for seed in range(30):
        pose, _, w = random_contact(hex_key, seed)
        hist = []
        out = cpfgrasp(w, pose, hex_key.surface, NOISE, TABLE_I, np.random.default_rng(seed), history=hist)
        r = np.array([h.residual.min() for h in hist] + [out.residual.min()])
        good += bool(np.all(np.diff(r) <= 1e-12))
    assert good >= 0.8 * 30


def test_dump_particles(hex_key, tmp_path):
    import json

    pose, _, w = random_contact(hex_key, 0)
    out = cpfgrasp(w, pose, hex_key.surface, NOISE, CpfParams(n_clp=5, n_cs=1), np.random.default_rng(0))
    path = tmp_path / "p.jsonl"
    dump_particles(out, path)
    dump_particles(init_contact_particles(hex_key.surface, 3, np.random.default_rng(0)), path, append=True)
    recs = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(recs) == 8
    assert set(recs[0]) == {"iteration", "location", "normal", "likelihood", "residual"}
    assert recs[-1]["residual"] is None
