import math

import numpy as np
import pytest

from tendonhand.hand_model import ACTUATOR_ORDER, Digit, JointAngles, JointId, Slot
from tendonhand.hand_spec_io import default_hand_spec
from tendonhand.retargeting import (
    CalibrationProfile,
    FrameRejected,
    KeypointFrame,
    OperatorRange,
    ProfileError,
    RetargetingError,
    calibrate_operator,
    default_profile,
    keypoints_to_angles,
    load_profile,
    merge_ranges,
    read_keypoint_stream,
    retarget,
    retarget_wrist,
    robot_limits_from_spec,
    save_profile,
    smooth,
    synthesize_landmarks,
    synthetic_frame,
    synthetic_sweep,
    write_keypoint_stream,
)


@pytest.fixture(scope="module")
def spec():
    return default_hand_spec()


def make_range(lo=0.1, hi=0.9) -> OperatorRange:
    return OperatorRange({j: (lo, hi) for j in ACTUATOR_ORDER})


def make_profile(spec, op_lo=0.1, op_hi=0.9, alpha=0.3) -> CalibrationProfile:
    profile = CalibrationProfile(
        robot_limits={j: spec.joint(j).limits for j in ACTUATOR_ORDER},
        operator_range=make_range(op_lo, op_hi),
        workspace_map=np.eye(4),
        workspace_box=(np.array([-0.5, -0.5, 0.0]), np.array([0.5, 0.5, 1.0])),
        ema_alpha=alpha,
    )
    profile.validate()
    return profile


class TestKeypointExtraction:
    def test_straight_fingers_zero_flexion(self):
        frame = synthetic_frame({}, t=0.0)
        angles = keypoints_to_angles(frame)
        for jid, value in angles.items():
            assert abs(value) < 1e-12, jid.name

    def test_right_angle_bend_recovered(self):
        target = {JointId(Digit.INDEX, Slot.PIP): math.pi / 2}
        frame = synthetic_frame(target, t=0.0)
        angles = keypoints_to_angles(frame)
        assert abs(angles[JointId(Digit.INDEX, Slot.PIP)] - math.pi / 2) < 1e-9

    def test_roundtrip_identity_on_random_angles(self):
        rng = np.random.default_rng(71)
        for _ in range(50):
            truth = {}
            for digit in Digit:
                truth[JointId(digit, Slot.MCP_ABD)] = rng.uniform(-0.5, 0.5)
                truth[JointId(digit, Slot.MCP_FLEX)] = rng.uniform(0.0, 1.4)
                truth[JointId(digit, Slot.PIP)] = rng.uniform(0.0, 1.5)
            angles = keypoints_to_angles(synthetic_frame(truth, t=0.0))
            for jid, value in truth.items():
                assert abs(angles[jid] - value) < 1e-9, jid.name

    def test_coincident_points_rejected(self):
        lm = synthesize_landmarks({})
        lm[6] = lm[5]  # index proximal segment collapses
        frame = KeypointFrame(0.0, lm, np.eye(4))
        with pytest.raises(FrameRejected):
            keypoints_to_angles(frame)

    def test_landmark_count_enforced(self):
        with pytest.raises(ValueError):
            KeypointFrame(0.0, np.zeros((20, 3)), np.eye(4))


class TestCalibration:
    def test_single_frame_flags_everything(self):
        with pytest.warns(UserWarning, match="under-calibrated"):
            out = calibrate_operator([synthetic_frame({}, t=0.0)])
        assert set(out.under_calibrated) == set(ACTUATOR_ORDER)
        for jid in ACTUATOR_ORDER:
            lo, hi = out.ranges[jid]
            assert lo == hi

    def test_sweep_recovers_known_envelope(self):
        jid = JointId(Digit.MIDDLE, Slot.PIP)
        frames = [
            synthetic_frame({jid: value}, t=i / 30.0)
            for i, value in enumerate(np.linspace(0.1, 0.9, 30))
        ]
        with pytest.warns(UserWarning):
            out = calibrate_operator(frames)
        lo, hi = out.ranges[jid]
        assert abs(lo - 0.1) < 1e-9
        assert abs(hi - 0.9) < 1e-9
        assert jid not in out.under_calibrated

    def test_low_confidence_frames_discarded(self):
        jid = JointId(Digit.INDEX, Slot.MCP_FLEX)
        frames = [synthetic_frame({jid: 0.2}, t=0.0),
                  synthetic_frame({jid: 0.6}, t=0.1),
                  synthetic_frame({jid: 1.4}, t=0.2, confidence=0.2)]
        with pytest.warns(UserWarning):
            out = calibrate_operator(frames)
        assert out.ranges[jid][1] < 1.0
        assert out.frames_used == 2

    def test_appending_never_shrinks(self):
        sweep = synthetic_sweep(n_frames=40)
        base = calibrate_operator(sweep[:14])   # partial sweep
        extra = calibrate_operator(sweep[14:])
        merged = merge_ranges(base, extra)
        for jid in ACTUATOR_ORDER:
            assert merged.ranges[jid][0] <= base.ranges[jid][0]
            assert merged.ranges[jid][1] >= base.ranges[jid][1]

    def test_empty_stream_rejected(self):
        with pytest.raises(RetargetingError):
            calibrate_operator([])


class TestRetarget:
    def test_endpoints_exact(self, spec):
        profile = make_profile(spec)
        lows = retarget(profile, {j: 0.1 for j in ACTUATOR_ORDER})
        highs = retarget(profile, {j: 0.9 for j in ACTUATOR_ORDER})
        for jid in ACTUATOR_ORDER:
            rlo, rhi = profile.robot_limits[jid]
            assert lows[jid] == rlo
            assert highs[jid] == rhi

    def test_midpoint_example(self, spec):
        profile = CalibrationProfile(
            robot_limits={j: (0.0, 1.571) for j in ACTUATOR_ORDER},
            operator_range=make_range(0.1, 0.9),
            workspace_map=np.eye(4),
            workspace_box=(np.zeros(3), np.ones(3)),
        )
        out = retarget(profile, {j: 0.5 for j in ACTUATOR_ORDER})
        for jid in ACTUATOR_ORDER:
            assert abs(out[jid] - 0.7855) < 1e-12

    def test_clamped_beyond_operator_range(self, spec):
        profile = make_profile(spec)
        out = retarget(profile, {j: 1.2 for j in ACTUATOR_ORDER})
        for jid in ACTUATOR_ORDER:
            assert out[jid] == profile.robot_limits[jid][1]

    def test_monotone_and_spans_robot_range(self, spec):
        profile = make_profile(spec)
        jid = JointId(Digit.RING, Slot.PIP)
        prev = -math.inf
        for value in np.linspace(0.0, 1.0, 21):
            out = retarget(profile, {j: value for j in ACTUATOR_ORDER})
            assert out[jid] >= prev
            prev = out[jid]
        rlo, rhi = profile.robot_limits[jid]
        assert retarget(profile, {j: 0.1 for j in ACTUATOR_ORDER})[jid] == rlo
        assert retarget(profile, {j: 0.9 for j in ACTUATOR_ORDER})[jid] == rhi

    def test_followers_coupled(self, spec):
        profile = make_profile(spec)
        out = retarget(profile, {j: 0.7 for j in ACTUATOR_ORDER})
        for digit in Digit:
            assert out[JointId(digit, Slot.DIP)] == out[JointId(digit, Slot.PIP)]

    def test_zero_width_range_rejected(self, spec):
        profile = CalibrationProfile(
            robot_limits={j: spec.joint(j).limits for j in ACTUATOR_ORDER},
            operator_range=make_range(0.5, 0.5),
            workspace_map=np.eye(4),
            workspace_box=(np.zeros(3), np.ones(3)),
        )
        with pytest.raises(ProfileError):
            retarget(profile, {j: 0.5 for j in ACTUATOR_ORDER})


class TestSmooth:
    def test_alpha_one_passthrough(self):
        prev = JointAngles.zeros()
        new = JointAngles.from_active([0.3] * 15)
        assert smooth(prev, new, 1.0) is new

    def test_half_step(self):
        prev = JointAngles.zeros()
        new = JointAngles.from_array(np.ones(20))
        out = smooth(prev, new, 0.5)
        assert all(v == 0.5 for v in out.values())

    @pytest.mark.parametrize("alpha", [0.1, 0.3, 1.0])
    def test_contraction_and_geometric_decay(self, alpha):
        target = JointAngles.from_array(np.full(20, 0.8))
        state = JointAngles.zeros()
        err0 = 0.8
        for n in range(1, 12):
            prev_err = float(np.max(np.abs(state.array() - target.array())))
            state = smooth(state, target, alpha)
            err = float(np.max(np.abs(state.array() - target.array())))
            assert err <= (1 - alpha) * prev_err + 1e-15
            assert abs(err - (1 - alpha) ** n * err0) < 1e-12

    def test_alpha_validation(self):
        q = JointAngles.zeros()
        with pytest.raises(ValueError):
            smooth(q, q, 0.0)
        with pytest.raises(ValueError):
            smooth(q, q, 1.5)


class TestWristRetarget:
    def test_identity_map(self, spec):
        profile = make_profile(spec)
        pose, clamped = retarget_wrist(profile, np.eye(4))
        np.testing.assert_allclose(pose, np.eye(4))
        assert not clamped

    def test_pure_translation(self, spec):
        profile = make_profile(spec)
        shifted = CalibrationProfile(
            robot_limits=profile.robot_limits,
            operator_range=profile.operator_range,
            workspace_map=np.array([[1, 0, 0, 0.1], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1.0]]),
            workspace_box=profile.workspace_box,
        )
        pose, clamped = retarget_wrist(shifted, np.eye(4))
        np.testing.assert_allclose(pose[:3, 3], [0.1, 0.0, 0.0])
        assert not clamped

    def test_outside_box_clamped_with_flag(self, spec):
        profile = make_profile(spec)
        wrist = np.eye(4)
        wrist[:3, 3] = [2.0, 0.0, 0.5]
        pose, clamped = retarget_wrist(profile, wrist)
        assert clamped
        assert pose[0, 3] == profile.workspace_box[1][0]


class TestProfileAndStreamIO:
    def test_profile_roundtrip_byte_exact(self, spec, tmp_path):
        profile = make_profile(spec)
        p1 = tmp_path / "a.profile.json"
        p2 = tmp_path / "b.profile.json"
        save_profile(profile, p1)
        loaded = load_profile(p1)
        save_profile(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert loaded.content_hash() == profile.content_hash()

    def test_keypoint_stream_roundtrip(self, tmp_path):
        frames = synthetic_sweep(n_frames=10)
        path = tmp_path / "sweep.jsonl"
        write_keypoint_stream(path, frames)
        back = list(read_keypoint_stream(path))
        assert len(back) == 10
        for a, b in zip(frames, back):
            assert a.timestamp == b.timestamp
            np.testing.assert_allclose(a.landmarks, b.landmarks, atol=1e-15)

    def test_stream_requires_increasing_timestamps(self, tmp_path):
        frames = synthetic_sweep(n_frames=3)
        path = tmp_path / "bad.jsonl"
        write_keypoint_stream(path, [frames[0], frames[2], frames[1]])
        with pytest.raises(RetargetingError):
            list(read_keypoint_stream(path))

    def test_robot_limits_sweep_matches_spec(self, spec):
        limits = robot_limits_from_spec(spec)
        for jid in ACTUATOR_ORDER:
            lo, hi = spec.joint(jid).limits
            assert limits[jid][0] == pytest.approx(lo, abs=1e-9)
            assert limits[jid][1] == pytest.approx(hi, abs=1e-9)

    def test_calibration_replay_spans_robot_range(self, spec):
        sweep = synthetic_sweep(n_frames=90)
        out = calibrate_operator(sweep)
        assert not out.under_calibrated
        profile = default_profile(spec, out)
        lo = {j: math.inf for j in ACTUATOR_ORDER}
        hi = {j: -math.inf for j in ACTUATOR_ORDER}
        for frame in sweep:
            target = retarget(profile, keypoints_to_angles(frame))
            for j in ACTUATOR_ORDER:
                lo[j] = min(lo[j], target[j])
                hi[j] = max(hi[j], target[j])
        for j in ACTUATOR_ORDER:
            rlo, rhi = profile.robot_limits[j]
            coverage = (hi[j] - lo[j]) / (rhi - rlo)
            assert coverage >= 0.99, f"{j.name} covered {coverage:.3f}"
