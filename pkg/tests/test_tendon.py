import dataclasses
import math

import numpy as np
import pytest

from tendonhand.hand_model import ACTUATOR_ORDER, Digit, JointAngles, JointId, Slot
from tendonhand.hand_spec_io import default_hand_spec
from tendonhand.tendon import (
    RATCHET_STEP,
    RouteFunction,
    TransmissionError,
    excursion,
    joint_to_motor,
    motor_to_joint,
    retension,
    spool_box,
    static_hold_torque,
    validate_transmission,
)


@pytest.fixture(scope="module")
def spec():
    return default_hand_spec()


def route_for(spec, digit, function):
    return next(r for r in spec.routes if r.digit == digit and r.function == function)


def random_pose(rng, spec, margin=0.0) -> JointAngles:
    active = []
    for jid in ACTUATOR_ORDER:
        lo, hi = spec.joint(jid).limits
        active.append(rng.uniform(lo + margin, hi - margin))
    return JointAngles.from_active(active)


class TestExcursion:
    def test_zero_at_neutral(self, spec):
        for route in spec.routes:
            assert excursion(route, JointAngles.zeros()) == 0.0

    def test_linear_sum_example(self, spec):
        route = route_for(spec, Digit.INDEX, RouteFunction.PIP_DIP_FLEX)
        assert route.moment_arms[JointId(Digit.INDEX, Slot.PIP)] == 0.005
        assert route.moment_arms[JointId(Digit.INDEX, Slot.DIP)] == 0.005
        q = JointAngles.zeros().replace({
            JointId(Digit.INDEX, Slot.PIP): 1.0,
            JointId(Digit.INDEX, Slot.DIP): 1.0,
        })
        assert abs(excursion(route, q) - 0.010) < 1e-15

    def test_linearity(self, spec):
        rng = np.random.default_rng(31)
        for _ in range(200):
            a1 = rng.uniform(-1, 1, size=20)
            a2 = rng.uniform(-1, 1, size=20)
            q1 = JointAngles.from_array(a1)
            q2 = JointAngles.from_array(a2)
            q12 = JointAngles.from_array(a1 + a2)
            for route in spec.routes[:6]:
                lhs = excursion(route, q12)
                rhs = excursion(route, q1) + excursion(route, q2)
                assert abs(lhs - rhs) < 1e-12


class TestJointMotorMaps:
    def test_zero_pose_zero_spools(self, spec):
        spools = joint_to_motor(spec, JointAngles.zeros())
        assert set(spools) == set(range(1, 16))
        assert all(v == 0.0 for v in spools.values())

    def test_spool_angle_is_excursion_over_radius(self, spec):
        q = JointAngles.zeros().replace({
            JointId(Digit.INDEX, Slot.PIP): 1.0,
            JointId(Digit.INDEX, Slot.DIP): 1.0,
        })
        route = route_for(spec, Digit.INDEX, RouteFunction.PIP_DIP_FLEX)
        spools = joint_to_motor(spec, q)
        assert abs(spools[route.motor] - 2.0) < 1e-12  # 0.010 m / 0.005 m

    def test_roundtrip_thousand_poses(self, spec):
        rng = np.random.default_rng(37)
        worst = 0.0
        for _ in range(1000):
            q = random_pose(rng, spec)
            back, saturated = motor_to_joint(spec, joint_to_motor(spec, q))
            assert not saturated
            worst = max(worst, float(np.max(np.abs(back.array() - q.array()))))
        assert worst < 1e-9

    def test_slack_offsets_shift_neutral(self, spec):
        routes = tuple(dataclasses.replace(r, slack_offset=0.3) for r in spec.routes)
        spec2 = dataclasses.replace(spec, routes=routes)
        spools = joint_to_motor(spec2, JointAngles.zeros())
        assert all(abs(v - 0.3) < 1e-15 for v in spools.values())
        back, saturated = motor_to_joint(spec2, spools)
        assert not saturated
        assert np.max(np.abs(back.array())) < 1e-12

    def test_out_of_range_clamped_with_flag(self, spec):
        spools = joint_to_motor(spec, JointAngles.zeros())
        box = spool_box(spec)
        route = route_for(spec, Digit.PINKY, RouteFunction.PIP_DIP_FLEX)
        spools[route.motor] = box[route.motor][1] + 1.0
        back, saturated = motor_to_joint(spec, spools)
        assert saturated
        hi = spec.joint(JointId(Digit.PINKY, Slot.PIP)).limits[1]
        assert back[JointId(Digit.PINKY, Slot.PIP)] == hi

    def test_monotone_in_coupled_flexion(self, spec):
        route = route_for(spec, Digit.MIDDLE, RouteFunction.PIP_DIP_FLEX)
        last = -math.inf
        for theta in np.linspace(0, 1.7, 9):
            q = JointAngles.zeros().replace({
                JointId(Digit.MIDDLE, Slot.PIP): theta,
                JointId(Digit.MIDDLE, Slot.DIP): theta,
            })
            val = joint_to_motor(spec, q)[route.motor]
            assert val > last
            last = val

    def test_total_on_reachable_spool_box(self, spec):
        rng = np.random.default_rng(41)
        box = spool_box(spec)
        for _ in range(200):
            spools = {m: rng.uniform(lo, hi) for m, (lo, hi) in box.items()}
            back, _ = motor_to_joint(spec, spools)  # never raises: backdrivable
            spec.check_limits(back)

    def test_duplicate_motor_binding_rejected(self, spec):
        routes = list(spec.routes)
        routes[0] = dataclasses.replace(routes[0], motor=routes[1].motor)
        bad = dataclasses.replace(spec, routes=tuple(routes))
        with pytest.raises(TransmissionError):
            validate_transmission(bad)

    def test_mismatched_antagonist_arms_rejected(self, spec):
        from tendonhand.tendon import TendonRoute

        jid = JointId(Digit.INDEX, Slot.MCP_FLEX)
        with pytest.raises(TransmissionError, match="antagonist"):
            TendonRoute(
                id="bad", digit=Digit.INDEX, function=RouteFunction.MCP_FLEX_EXT,
                moment_arms={jid: 0.01}, antagonist_arms={jid: -0.008},
                wrap_angle=math.pi, friction_mu=0.1, motor=5, spool_radius=0.005)

    def test_singular_arm_matrix_rejected_at_load(self, spec):
        routes = []
        for r in spec.routes:
            if r.digit == Digit.RING and r.function == RouteFunction.MCP_ABD_ADD:
                routes.append(dataclasses.replace(
                    r, moment_arms={JointId(Digit.RING, Slot.MCP_ABD): 0.0}))
            else:
                routes.append(r)
        bad = dataclasses.replace(spec, routes=tuple(routes))
        with pytest.raises(TransmissionError):
            validate_transmission(bad)


class TestStaticHoldTorque:
    def test_zero_force_zero_pose_zero_torque(self, spec):
        hold = static_hold_torque(spec, JointAngles.zeros(), {})
        assert all(v == 0.0 for v in hold.motor_torques.values())
        assert not hold.slack_routes

    def test_frictionless_equals_tension_times_radius(self, spec):
        routes = tuple(dataclasses.replace(r, friction_mu=0.0) for r in spec.routes)
        spec0 = dataclasses.replace(spec, routes=routes)
        q = JointAngles.from_active([0.1, 0.6, 0.9] * 5)
        force = {Digit.INDEX: np.array([0.0, -2.0, 0.0])}
        hold = static_hold_torque(spec0, q, force)
        for route in spec0.routes:
            expected = hold.tensions[route.id] * route.spool_radius
            assert abs(hold.motor_torques[route.motor] - expected) < 1e-12

    def test_capstan_attenuation_ratio(self, spec):
        q = JointAngles.from_active([0.0, 0.3, 0.4] * 5)
        force = {Digit.INDEX: np.array([0.0, -2.0, 0.0])}
        mu0 = dataclasses.replace(
            spec, routes=tuple(dataclasses.replace(r, friction_mu=0.0) for r in spec.routes))
        mu15 = dataclasses.replace(
            spec, routes=tuple(dataclasses.replace(r, friction_mu=0.15, wrap_angle=math.pi)
                               for r in spec.routes))
        base = static_hold_torque(mu0, q, force)
        assisted = static_hold_torque(mu15, q, force, assist_friction=True)
        expected = math.exp(-0.15 * math.pi)
        route = route_for(spec, Digit.INDEX, RouteFunction.PIP_DIP_FLEX)
        ratio = assisted.motor_torques[route.motor] / base.motor_torques[route.motor]
        assert abs(ratio - expected) < 1e-12

    def test_assisted_below_frictionless_below_opposed(self, spec):
        q = JointAngles.from_active([0.05, 0.5, 0.8] * 5)
        force = {d: np.array([0.0, -1.5, 0.5]) for d in Digit}
        frictionless = dataclasses.replace(
            spec, routes=tuple(dataclasses.replace(r, friction_mu=0.0) for r in spec.routes))
        assisted = static_hold_torque(spec, q, force, assist_friction=True)
        neutral = static_hold_torque(frictionless, q, force, assist_friction=True)
        opposed = static_hold_torque(spec, q, force, assist_friction=False)
        for motor in assisted.motor_torques:
            a, n, o = (assisted.motor_torques[motor], neutral.motor_torques[motor],
                       opposed.motor_torques[motor])
            if n > 0:
                assert a < n < o

    def test_slack_flag_when_load_flexes_for_free(self, spec):
        # At mild flexion a palmar push curls the finger further; the single
        # flexor tendon cannot push back, so it goes slack.
        q = JointAngles.from_active([0.0, 0.3, 0.4] * 5)
        hold = static_hold_torque(spec, q, {Digit.INDEX: np.array([0.0, 20.0, -0.5])})
        pip_route = route_for(spec, Digit.INDEX, RouteFunction.PIP_DIP_FLEX)
        assert pip_route.id in hold.slack_routes
        assert hold.motor_torques[pip_route.motor] == 0.0
        assert hold.tensions[pip_route.id] == 0.0

    def test_no_negative_tension_without_slack_flag(self, spec):
        rng = np.random.default_rng(43)
        for _ in range(50):
            q = random_pose(rng, spec)
            forces = {d: rng.normal(0, 3.0, size=3) for d in Digit}
            hold = static_hold_torque(spec, q, forces)
            for rid, tension in hold.tensions.items():
                assert tension >= 0.0 or rid in hold.slack_routes

    def test_rejects_non_finite_force(self, spec):
        with pytest.raises(ValueError):
            static_hold_torque(spec, JointAngles.zeros(), {Digit.INDEX: np.array([np.nan, 0, 0])})


class TestRetension:
    def test_zero_slack_unchanged(self, spec):
        route = spec.routes[0]
        assert retension(route, 0.0) is route

    def test_quantized_to_whole_clicks(self, spec):
        route = route_for(spec, Digit.INDEX, RouteFunction.PIP_DIP_FLEX)
        # 0.0005 m over a 0.005 m spool needs 0.1 rad; the ratchet engages
        # at the next detent, two 5-degree clicks (never leaves slack).
        out = retension(route, 0.0005)
        assert abs((out.slack_offset - route.slack_offset) - 2 * RATCHET_STEP) < 1e-12
        exact = retension(route, 0.005 * RATCHET_STEP)  # exactly one click of slack
        assert abs((exact.slack_offset - route.slack_offset) - RATCHET_STEP) < 1e-12

    def test_never_loosens_and_superadditive(self, spec):
        rng = np.random.default_rng(47)
        route = spec.routes[3]
        for _ in range(200):
            a, b = rng.uniform(0, 0.002, size=2)
            combined = retension(route, a + b).slack_offset
            split = retension(retension(route, a), b).slack_offset
            assert split >= combined - 1e-12
            assert retension(route, a).slack_offset >= route.slack_offset

    def test_negative_slack_rejected(self, spec):
        with pytest.raises(ValueError):
            retension(spec.routes[0], -1e-4)
