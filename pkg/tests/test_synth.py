import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cpfscope.mechanics import RigidTransform, build_friction_cone, contact_adjoint_from_contact_pose
from cpfscope.qp import FORCE_VAR_FLOOR, MOMENT_VAR_FLOOR, SensorNoise, solve_contact_qp
from cpfscope.scope import PlanarGraspPose, ScopeParams, scope
from cpfscope.synth import (
    ErrorReport,
    LogOrderError,
    LogParseError,
    WrenchLog,
    aggregate_error,
    calibrate_sigma,
    generate_arm_contact,
    generate_scenario,
    load_wrench_log,
    pose_errors,
    save_wrench_log,
    steady_window,
    write_error_csv,
)

NOISE = SensorNoise.isotropic(0.1, 0.005)
CAPS = (0.03, np.deg2rad(45))


@pytest.fixture(scope="module")
def scenarios(poker, wrench_model):
    return [generate_scenario(poker, wrench_model, CAPS, 0.5, np.random.default_rng(s), NOISE, NOISE) for s in range(6)]


def residual_at_truth(model, pose: PlanarGraspPose, index, wrench):
    S = model.surface
    frame = RigidTransform(S.contact_frames[index], S.points[index])
    adj = contact_adjoint_from_contact_pose(pose.transform() @ frame)
    cone = build_friction_cone(np.zeros(3), [0, 0, -1.0], 0.5, 8)
    return solve_contact_qp(wrench, adj, cone, NOISE).residual


def test_noiseless_scenarios_are_exact(scenarios, poker, wrench_model):
    for sc in scenarios:
        assert residual_at_truth(poker, sc.poker_pose_gt, sc.poker_index, sc.wrench_poker_clean) <= 1e-10
        assert residual_at_truth(wrench_model, sc.tool_pose_gt, sc.tool_index, sc.wrench_tool_clean) <= 1e-10


def test_contact_point_on_both_surfaces(scenarios, poker, wrench_model):
    for sc in scenarios:
        for model, world in ((poker, sc.poker_world), (wrench_model, sc.tool_world)):
            d = model.sdf.sample_many(world.inverse().apply(sc.contact_point)[None])[0]
            assert abs(d) <= model.surface.eps_s
        assert sc.n_pp <= 144


def test_force_balance(scenarios):
    for sc in scenarios:
        fp = sc.ee_poker.rotation @ sc.wrench_poker_clean.force
        ft = sc.ee_tool.rotation @ sc.wrench_tool_clean.force
        np.testing.assert_allclose(fp, -ft, atol=1e-9)
        np.testing.assert_allclose(ft, sc.applied_force, atol=1e-9)
        assert 2.0 - 1e-9 <= np.linalg.norm(sc.applied_force) <= 15.0 + 1e-9
        # noisy pair agrees within three standard deviations of the summed noise
        gap = sc.ee_poker.rotation @ sc.wrench_poker.force + sc.ee_tool.rotation @ sc.wrench_tool.force
        assert np.all(np.abs(gap) <= 3 * np.sqrt(2) * 0.1 * np.sqrt(3))


def test_applied_force_in_tool_cone(scenarios):
    for sc in scenarios:
        cone = build_friction_cone(sc.contact_point, sc.contact_normal, 0.5, 8)
        f = sc.applied_force
        cos = (f @ cone.normal) / np.linalg.norm(f)
        assert cos >= np.cos(np.arctan(0.5)) - 1e-9


def test_scenario_determinism(poker, wrench_model):
    a = generate_scenario(poker, wrench_model, CAPS, 0.5, np.random.default_rng(9), NOISE, NOISE)
    b = generate_scenario(poker, wrench_model, CAPS, 0.5, np.random.default_rng(9), NOISE, NOISE)
    assert a.wrench_tool.vector.tobytes() == b.wrench_tool.vector.tobytes()


def test_arm_contact_generator(hex_key, rng):
    pose = RigidTransform.planar(0.003, -0.004, 0.2)
    ac = generate_arm_contact(hex_key, pose, rng, noise=NOISE)
    assert residual_at_truth(hex_key, PlanarGraspPose(0.003, -0.004, 0.2), ac.index, ac.wrench_clean) <= 1e-12
    assert not np.array_equal(ac.wrench.vector, ac.wrench_clean.vector)


def _diffusion_envelope(k, params, r_g):
    """Mean E_agg of a pure random walk of the pose noise after ``k`` steps, no selection."""
    sx, _, sth = params.pose_noise
    trans = 100 * sx * np.sqrt(np.pi / 2)  # mean norm of a 2D Gaussian, cm
    rot = sth * np.sqrt(2 / np.pi)
    return np.sqrt(k) * (2 * trans + sum(r_g) * rot)


def _gt_initialized_errors(poker, tool, seeds=range(10)):
    params = ScopeParams(n_os=3)
    E = []
    for s in seeds:
        rng = np.random.default_rng(s)
        sc = generate_scenario(poker, tool, params.caps, 0.5, rng, NOISE, NOISE)
        init = (np.tile(sc.poker_pose_gt.as_array(), (10, 1)), np.tile(sc.tool_pose_gt.as_array(), (10, 1)))
        res = scope(
            sc.wrench_poker, sc.wrench_tool, poker, tool, sc.ee_poker, sc.ee_tool, NOISE, NOISE, params, rng,
            truth=(sc.poker_pose_gt, sc.tool_pose_gt), initial_poses=init,
        )
        E.append([h["e_agg_cm"] for h in res.history])
    return params, np.array(E).mean(axis=0)


@pytest.fixture(scope="module")
def gt_run(poker, wrench_model):
    return _gt_initialized_errors(poker, wrench_model)


def test_ground_truth_start_stays_within_diffusion(gt_run, poker, wrench_model):
    params, mean_e = gt_run
    for k, e in enumerate(mean_e, start=1):
        assert e < _diffusion_envelope(k, params, (poker.r_gyration_cm, wrench_model.r_gyration_cm))


@pytest.mark.xfail(
    strict=True,
    reason="pose noise random-walks along directions the losses cannot see (contact line, rim tangent)",
)
def test_ground_truth_start_error_non_increasing(gt_run):
    _, mean_e = gt_run
    assert np.all(np.diff(mean_e) <= 0)


# ------------------------------------------------------------- logs


def write(tmp_path, text, name="log.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_log_three_rows(tmp_path):
    p = write(
        tmp_path,
        "# units: N, N·m, s; frame: ee_left\nt,fx,fy,fz,mx,my,mz\n"
        "0.0,1,2,3,0.1,0.2,0.3\n0.1,1,2,3,0.1,0.2,0.3\n0.2,1,2,3,0.1,0.2,0.3\n",
    )
    log = load_wrench_log(p)
    assert len(log) == 3 and log.frame == "ee_left"
    np.testing.assert_allclose(log.samples[0], [1, 2, 3, 0.1, 0.2, 0.3])


def test_log_short_row_reports_line(tmp_path):
    p = write(tmp_path, "# units: N, N·m, s; frame: ee\n0.0,1,2,3,4,5,6\n0.1,1,2,3,4\n")
    with pytest.raises(LogParseError) as e:
        load_wrench_log(p)
    assert e.value.line == 3


def test_log_units(tmp_path):
    p = write(tmp_path, "# units: mN, N·mm, ms; frame: ee\n0,1000,0,0,1000,0,0\n5,0,0,0,0,0,0\n")
    log = load_wrench_log(p)
    np.testing.assert_allclose(log.samples[0], [1, 0, 0, 1, 0, 0])
    np.testing.assert_allclose(log.timestamps, [0, 0.005])
    with pytest.raises(LogParseError):
        load_wrench_log(write(tmp_path, "# units: lbf, N·m, s; frame: ee\n0,1,0,0,0,0,0\n", "bad.csv"))


def test_log_ordering_and_values(tmp_path):
    with pytest.raises(LogOrderError):
        load_wrench_log(write(tmp_path, "0.1,0,0,0,0,0,0\n0.1,0,0,0,0,0,0\n"))
    with pytest.raises(LogParseError):
        load_wrench_log(write(tmp_path, "0.0,a,0,0,0,0,0\n", "nan.csv"))
    with pytest.raises(LogParseError):
        load_wrench_log(write(tmp_path, "0.0,inf,0,0,0,0,0\n", "inf.csv"))
    with pytest.raises(LogOrderError):
        WrenchLog([0.2, 0.1], np.zeros((2, 6)))


def test_log_round_trip(tmp_path, rng):
    log = WrenchLog(np.arange(50) * 0.01, rng.normal(size=(50, 6)), "tool")
    save_wrench_log(log, tmp_path / "r.csv")
    back = load_wrench_log(tmp_path / "r.csv")
    assert back.frame == "tool"
    np.testing.assert_array_equal(back.samples, log.samples)


# ------------------------------------------------------------- calibration


def test_calibration_recovers_variance(rng):
    var = np.array([0.04, 0.04, 0.04, 1e-4, 2e-4, 4e-4])
    log = WrenchLog(np.arange(10_000) * 1e-3, rng.normal(size=(10_000, 6)) * np.sqrt(var))
    np.testing.assert_allclose(calibrate_sigma(log).sigma_diag, var, rtol=0.05)


@given(st.lists(st.floats(-50, 50), min_size=6, max_size=6))
def test_calibration_bias_invariant(offset):
    x = np.random.default_rng(0).normal(size=(200, 6)) * 0.1
    a = calibrate_sigma(WrenchLog(np.arange(200.0), x)).sigma_diag
    b = calibrate_sigma(WrenchLog(np.arange(200.0), x + np.asarray(offset))).sigma_diag
    np.testing.assert_allclose(a, b, rtol=1e-6)


def test_calibration_floor_and_errors():
    const = WrenchLog(np.arange(100.0), np.ones((100, 6)))
    np.testing.assert_array_equal(calibrate_sigma(const).sigma_diag, [FORCE_VAR_FLOOR] * 3 + [MOMENT_VAR_FLOOR] * 3)
    with pytest.raises(ValueError):
        calibrate_sigma(const, window=(0, 10))
    bad = WrenchLog(np.arange(100.0), np.where(np.arange(600).reshape(100, 6) == 7, np.nan, 0.0))
    with pytest.raises(ValueError):
        calibrate_sigma(bad)


def test_steady_window_finds_quiet_segment(rng):
    t = np.arange(0, 10, 0.01)
    x = rng.normal(size=(len(t), 6))
    quiet = (t >= 6) & (t < 8.5)
    x[quiet] *= 0.01
    t0, t1 = steady_window(WrenchLog(t, x), 2.0)
    assert 6 - 1e-9 <= t0 and t1 <= 8.5 + 1e-9
    with pytest.raises(ValueError):
        steady_window(WrenchLog(t[:10], x[:10]), 2.0)


# ------------------------------------------------------------- metrics


def test_pose_error_examples():
    p = PlanarGraspPose(0.01, 0.02, 0.1)
    assert pose_errors(p, p) == (0.0, 0.0)
    trans, _ = pose_errors(PlanarGraspPose(0.003, 0.004, 0.0), PlanarGraspPose(0, 0, 0))
    assert trans == pytest.approx(0.5)
    _, rot = pose_errors(PlanarGraspPose(0, 0, np.deg2rad(350)), PlanarGraspPose(0, 0, 0))
    assert rot == pytest.approx(10.0)


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_rotation_error_wrapped(a, b):
    _, rot = pose_errors(PlanarGraspPose(0, 0, a), PlanarGraspPose(0, 0, b))
    assert 0.0 <= rot <= 180.0


def test_aggregate_error_spot_checks():
    assert aggregate_error((0, 0), (0, 0), 5.25, 5.0) == 0.0
    full = aggregate_error((1.03, 1.16), np.deg2rad([4.94, 6.44]), 5.25, 5.0)
    poke = aggregate_error((0.71, 1.88), np.deg2rad([26.68, 25.57]), 5.25, 5.0)
    assert full == pytest.approx(3.20, abs=0.02)
    assert poke == pytest.approx(7.27, abs=0.02)


def test_builtin_radii_of_gyration(poker, wrench_model):
    assert (poker.r_gyration_cm, wrench_model.r_gyration_cm) == (5.25, 5.0)


def test_error_report_and_csv(tmp_path):
    truth = PlanarGraspPose(0, 0, 0)
    rep = ErrorReport.from_estimates([[0.003, 0.004, 0.0]], [[0.0, 0.0, np.deg2rad(10)]], truth, truth, 5.25, 5.0)
    assert rep.trans_error_p == pytest.approx(0.5) and rep.rot_error_t == pytest.approx(10.0)
    assert rep.rot_error_t_rad == pytest.approx(np.deg2rad(10))
    assert rep.e_agg == pytest.approx(0.5 + 5.0 * np.deg2rad(10))
    write_error_csv([rep, rep], tmp_path / "e.csv")
    rows = list(csv.reader((tmp_path / "e.csv").open()))
    assert rows[0][0] == "trial" and len(rows) == 3
