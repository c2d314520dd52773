"""Quasi-static hand simulator and the structural-test harnesses.

The rolling-contact pairs are treated as revolute joints under an
equality constraint (the follower always copies the leader), resolved by
projection after every step. No inertia: each step settles motors, maps
spools to joints, adds compliance deflection from external loads, and
re-projects the coupling. Joint compliance is a per-joint torsional
stiffness standing in for the soft joint material; only ratios and
monotonic trends are asserted against it, never absolute values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping

import numpy as np

from .hand_model import (
    ACTIVE_SLOTS,
    ACTUATOR_ORDER,
    DIGITS,
    Digit,
    HandSpec,
    JointAngles,
    JointId,
    Slot,
    digit_jacobian,
    digit_joint_torques,
    fingertip_position,
    project_coupling,
)
from .motor_bus import VirtualMotor
from .tendon import joint_to_motor, motor_to_joint, static_hold_torque

GRAVITY = 9.80665
DEFLECTION_LIMIT = math.radians(15.0)


@dataclass(frozen=True)
class SimParams:
    dt: float = 0.02
    joint_stiffness: float = 2.0          # N*m/rad torsional give per joint
    snap_fit_threshold: float = 0.8       # N*m at a base joint pops the snap fit
    motor_max_velocity: float = 8.0       # rad/s at the spool

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")


@dataclass(frozen=True)
class SimFlags:
    saturation: bool = False
    snap_fit_fault: frozenset = frozenset()   # digits with a popped base joint
    slack: frozenset = frozenset()            # route ids that went slack


@dataclass(frozen=True)
class SimState:
    q: JointAngles
    spools: Mapping[int, float]
    tip_forces: Mapping[Digit, np.ndarray]
    time: float = 0.0
    flags: SimFlags = SimFlags()


class QuasiStaticSim:
    """Deterministic stepper: same state and inputs give identical output."""

    def __init__(self, spec: HandSpec, params: SimParams = SimParams()):
        self.spec = spec
        self.params = params

    def initial_state(self, q: JointAngles | None = None) -> SimState:
        q = project_coupling(q if q is not None else JointAngles.zeros())
        return SimState(q=q, spools=joint_to_motor(self.spec, q),
                        tip_forces={d: np.zeros(3) for d in DIGITS})

    def step(
        self,
        state: SimState,
        motor_commands: Mapping[int, float],
        tip_forces: Mapping[Digit, np.ndarray] | None = None,
        dt: float | None = None,
    ) -> SimState:
        dt = self.params.dt if dt is None else dt
        if dt <= 0:
            raise ValueError("dt must be > 0")
        forces = dict(state.tip_forces)
        if tip_forces is not None:
            forces.update({d: np.asarray(f, dtype=float) for d, f in tip_forces.items()})

        max_step = self.params.motor_max_velocity * dt
        spools = {}
        for motor, present in state.spools.items():
            goal = motor_commands.get(motor, present)
            spools[motor] = present + max(-max_step, min(max_step, goal - present))

        q_cmd, saturated = motor_to_joint(self.spec, spools)

        # compliance: external load deflects each joint by tau / k
        k = self.params.joint_stiffness
        deflections: dict[JointId, float] = {}
        faults = set(state.flags.snap_fit_fault)
        for d in DIGITS:
            force = forces.get(d)
            if force is None or not np.any(force):
                continue
            torques = digit_joint_torques(self.spec, q_cmd, d, force)
            pair = (torques[JointId(d, Slot.PIP)] + torques[JointId(d, Slot.DIP)]) / (2 * k)
            deflections[JointId(d, Slot.PIP)] = pair
            deflections[JointId(d, Slot.DIP)] = pair
            for slot in (Slot.MCP_ABD, Slot.MCP_FLEX):
                jid = JointId(d, slot)
                deflections[jid] = torques[jid] / k
                if abs(torques[jid]) > self.params.snap_fit_threshold:
                    faults.add(d)

        values = dict(q_cmd)
        for jid, delta in deflections.items():
            values[jid] = values[jid] + delta
        q_next = project_coupling(JointAngles(values))
        q_next, clamped = self.spec.clamp_to_limits(q_next)
        q_next = project_coupling(q_next)

        # a popped snap fit freezes that digit's base joints until reset
        if faults:
            frozen = {}
            for d in faults:
                for slot in (Slot.MCP_ABD, Slot.MCP_FLEX):
                    frozen[JointId(d, slot)] = state.q[JointId(d, slot)]
            q_next = project_coupling(q_next.replace(frozen))

        hold = static_hold_torque(self.spec, q_next, forces)
        return SimState(
            q=q_next,
            spools=spools,
            tip_forces=forces,
            time=state.time + dt,
            flags=SimFlags(
                saturation=saturated or clamped,
                snap_fit_fault=frozenset(faults),
                slack=hold.slack_routes,
            ),
        )

    def reset_faults(self, state: SimState) -> SimState:
        return replace(state, flags=replace(state.flags, snap_fit_fault=frozenset()))


# --------------------------------------------------------------------------
# Test reports
# --------------------------------------------------------------------------

REPORT_SCHEMA = "test-report/1"


@dataclass(frozen=True)
class TestReport:
    kind: str
    config: dict
    logs: tuple[dict, ...]
    summary: dict

    def verify_self(self) -> bool:
        """Recompute the summary from the logs; must match bit-exactly."""
        from .serialization import dumps_canonical

        recomputed = _SUMMARIZERS[self.kind](self.config, list(self.logs))
        return dumps_canonical(recomputed) == dumps_canonical(self.summary)


_SUMMARIZERS: dict[str, Callable[[dict, list[dict]], dict]] = {}


def _summarizer(kind: str):
    def register(fn):
        _SUMMARIZERS[kind] = fn
        return fn
    return register


# --------------------------------------------------------------------------
# Pull-out test
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PulloutConfig:
    digit: Digit = Digit.INDEX
    force_step: float = 0.1
    force_cap: float = 50.0
    joint_stiffness: float = 2.0
    motor_torque_limit: float = 0.3       # N*m, identical for both drive models
    deflection_limit: float = DEFLECTION_LIMIT

    def to_dict(self) -> dict:
        return {
            "digit": self.digit.value,
            "force_step": self.force_step,
            "force_cap": self.force_cap,
            "joint_stiffness": self.joint_stiffness,
            "motor_torque_limit": self.motor_torque_limit,
            "deflection_limit": self.deflection_limit,
        }


def _fully_flexed(spec: HandSpec, digit: Digit) -> JointAngles:
    updates = {}
    for slot in (Slot.MCP_FLEX, Slot.PIP, Slot.DIP):
        jid = JointId(digit, slot)
        updates[jid] = spec.joint(jid).limits[1]
    return project_coupling(JointAngles.zeros().replace(updates))


def _pullout_direction(spec: HandSpec, q: JointAngles, digit: Digit) -> np.ndarray:
    """Unit force direction opposing the flexion motion at the fingertip."""
    J = digit_jacobian(spec, q, digit)
    flexion_motion = J[:, ACTIVE_SLOTS.index(Slot.MCP_FLEX)] + J[:, ACTIVE_SLOTS.index(Slot.PIP)]
    return -flexion_motion / np.linalg.norm(flexion_motion)


def _drive_demands(spec: HandSpec, q: JointAngles, digit: Digit, force: np.ndarray) -> tuple[float, float, float]:
    """(max tendon motor torque, max direct motor torque, max joint torque)."""
    hold = static_hold_torque(spec, q, {digit: force}, assist_friction=True)
    digit_motors = [r.motor for r in spec.routes if r.digit == digit]
    tendon = max(abs(hold.motor_torques[m]) for m in digit_motors)

    # direct-drive reference: the same motors sit at the joints, one per
    # active DoF, follower slaved 1:1, no transmission advantage or friction
    torques = digit_joint_torques(spec, q, digit, force)
    per_dof = {
        Slot.MCP_ABD: abs(torques[JointId(digit, Slot.MCP_ABD)]),
        Slot.MCP_FLEX: abs(torques[JointId(digit, Slot.MCP_FLEX)]),
        Slot.PIP: abs(torques[JointId(digit, Slot.PIP)] + torques[JointId(digit, Slot.DIP)]),
    }
    direct = max(per_dof.values())
    joint_max = max(abs(t) for t in torques.values())
    return tendon, direct, joint_max


def run_pullout_test(spec: HandSpec, config: PulloutConfig = PulloutConfig()) -> TestReport:
    """Ramp an opposing fingertip force on a fully flexed finger.

    Reports, for the tendon drive and a direct-drive reference with the
    same motor torque limit, the largest force at which no joint deflects
    past the limit and no motor saturates.
    """
    q = _fully_flexed(spec, config.digit)
    direction = _pullout_direction(spec, q, config.digit)
    logs: list[dict] = []
    force = 0.0
    while force <= config.force_cap + 1e-9:
        f = direction * force
        tendon_torque, direct_torque, _ = _drive_demands(spec, q, config.digit, f)
        torques = digit_joint_torques(spec, q, config.digit, f)
        pair = abs(torques[JointId(config.digit, Slot.PIP)] + torques[JointId(config.digit, Slot.DIP)]) / 2
        deflection = max(
            abs(torques[JointId(config.digit, Slot.MCP_ABD)]),
            abs(torques[JointId(config.digit, Slot.MCP_FLEX)]),
            pair,
        ) / config.joint_stiffness
        logs.append({
            "force": round(force, 6),
            "max_deflection": deflection,
            "tendon_motor_torque": tendon_torque,
            "direct_motor_torque": direct_torque,
            "tendon_holds": bool(deflection <= config.deflection_limit
                                 and tendon_torque <= config.motor_torque_limit),
            "direct_holds": bool(deflection <= config.deflection_limit
                                 and direct_torque <= config.motor_torque_limit),
        })
        force += config.force_step
    summary = _summarize_pullout(config.to_dict(), logs)
    return TestReport("pullout", config.to_dict(), tuple(logs), summary)


@_summarizer("pullout")
def _summarize_pullout(config: dict, logs: list[dict]) -> dict:
    def largest(key: str) -> float:
        held = 0.0
        for entry in logs:
            if entry[key]:
                held = entry["force"]
            else:
                break
        return held

    return {
        "tendon_pullout_force": largest("tendon_holds"),
        "direct_pullout_force": largest("direct_holds"),
        "force_cap_reached": bool(logs and logs[-1]["tendon_holds"]),
        "samples": len(logs),
    }


# --------------------------------------------------------------------------
# Repeatability test
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RepeatabilityConfig:
    cycles: int = 1000
    steps_per_cycle: int = 20
    dt: float = 0.05
    backlash: float = 0.002           # rad, full hysteresis width
    encoder_noise: float = 0.001      # rad, sigma
    grasp_flex: float = 0.9
    grasp_coupled: float = 1.2
    object_stiffness: float = 0.4     # N*m/rad past contact
    contact_angle: float = 0.7        # coupled angle where the object is met
    seed: int = 0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "cycles", "steps_per_cycle", "dt", "backlash", "encoder_noise",
            "grasp_flex", "grasp_coupled", "object_stiffness", "contact_angle", "seed")}


def run_repeatability_test(spec: HandSpec, config: RepeatabilityConfig = RepeatabilityConfig()) -> TestReport:
    """Grasp-release cycles against a compliant object.

    Tracking error is commanded minus achieved active-joint angle as a
    motor encoder would report it: backlash hysteresis plus Gaussian
    encoder noise (compliance is invisible to the encoders, as on the
    real transmission). Logs are per-cycle aggregates.
    """
    if config.cycles < 1:
        raise ValueError("cycle count must be >= 1")
    rng = np.random.default_rng(config.seed)
    steps = config.steps_per_cycle
    # commanded waveform per step for (abd, flex, coupled): close then open
    level = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(steps) / steps)
    waveforms = {
        Slot.MCP_ABD: np.zeros(steps),
        Slot.MCP_FLEX: config.grasp_flex * level,
        Slot.PIP: config.grasp_coupled * level,
    }
    direction = {slot: np.sign(np.diff(w, append=w[:1])) for slot, w in waveforms.items()}
    kt = float((spec.motor_params or {}).get("torque_constant_nm_per_a", 0.85))

    logs = []
    for cycle in range(config.cycles):
        abs_err_sum = 0.0
        abs_err_max = 0.0
        current_sum = 0.0
        samples = 0
        for slot in ACTIVE_SLOTS:
            cmd = waveforms[slot]
            lash = -direction[slot] * config.backlash / 2.0
            for digit_idx in range(len(DIGITS)):
                noise = rng.normal(0.0, config.encoder_noise, size=steps)
                achieved = cmd + lash + noise
                err = np.abs(cmd - achieved)
                abs_err_sum += float(err.sum())
                abs_err_max = max(abs_err_max, float(err.max()))
                samples += steps
        # contact load current on coupled flexors once past the object surface
        penetration = np.maximum(waveforms[Slot.PIP] - config.contact_angle, 0.0)
        load = config.object_stiffness * penetration      # N*m generalized
        current_sum = float(np.sum(load / 2.0 / kt * 1000.0))  # spool advantage 2
        logs.append({
            "cycle": cycle,
            "mean_error": abs_err_sum / samples,
            "max_error": abs_err_max,
            "mean_current": current_sum / steps,
        })
    summary = _summarize_repeatability(config.to_dict(), logs)
    return TestReport("repeatability", config.to_dict(), tuple(logs), summary)


@_summarizer("repeatability")
def _summarize_repeatability(config: dict, logs: list[dict]) -> dict:
    means = [entry["mean_error"] for entry in logs]
    half = len(means) // 2
    first = sum(means[:half]) / half if half else 0.0
    second = sum(means[half:]) / (len(means) - half)
    return {
        "mean_tracking_error": sum(means) / len(means),
        "max_tracking_error": max(entry["max_error"] for entry in logs),
        "first_half_mean": first,
        "second_half_mean": second,
        "cycles": len(logs),
    }


# --------------------------------------------------------------------------
# Holding test
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HoldingConfig:
    mass: float = 2.27                 # kg (a 5 lb weight)
    duration: float = 1800.0           # simulated seconds
    dt: float = 0.5
    sample_every: float = 10.0
    grasp_flex: float = 0.9
    grasp_coupled: float = 1.2
    contact_digits: tuple[str, ...] = ("thumb", "index", "middle", "ring", "pinky")

    def to_dict(self) -> dict:
        return {
            "mass": self.mass, "duration": self.duration, "dt": self.dt,
            "sample_every": self.sample_every, "grasp_flex": self.grasp_flex,
            "grasp_coupled": self.grasp_coupled, "contact_digits": list(self.contact_digits),
        }


def _grasp_pose(spec: HandSpec, flex: float, coupled: float) -> JointAngles:
    updates = {}
    for d in DIGITS:
        updates[JointId(d, Slot.MCP_FLEX)] = min(flex, spec.joint(JointId(d, Slot.MCP_FLEX)).limits[1])
        cap = spec.joint(JointId(d, Slot.PIP)).limits[1]
        updates[JointId(d, Slot.PIP)] = min(coupled, cap)
        updates[JointId(d, Slot.DIP)] = min(coupled, cap)
    return project_coupling(JointAngles.zeros().replace(updates))


def _motor_bank(spec: HandSpec, ids) -> dict[int, VirtualMotor]:
    params = spec.motor_params or {}
    return {
        i: VirtualMotor(
            id=i,
            current_limit=float(params.get("current_limit_ma", 600.0)),
            torque_constant=float(params.get("torque_constant_nm_per_a", 0.85)),
            max_velocity=float(params.get("max_velocity_rad_s", 8.0)),
        )
        for i in ids
    }


def run_holding_test(spec: HandSpec, config: HoldingConfig = HoldingConfig()) -> TestReport:
    """Hold a vertical load and compare current draw of the two drive models.

    The same load torques act on a tendon-drive motor bank (capstan assist
    plus spool advantage) and a direct-drive reference bank (motors at the
    joints, follower slaved); both banks use identical virtual motors.
    """
    if config.mass < 0:
        raise ValueError("load mass must be >= 0")
    digits = [Digit(d) for d in config.contact_digits]
    q = _grasp_pose(spec, config.grasp_flex, config.grasp_coupled)
    per_digit = config.mass * GRAVITY / len(digits)
    forces = {d: np.array([0.0, -per_digit, 0.0]) for d in digits}

    hold = static_hold_torque(spec, q, forces, assist_friction=True)
    tendon_loads = dict(hold.motor_torques)

    # direct-drive reference: per active DoF, coupled pair on one motor
    direct_loads: dict[int, float] = {}
    for idx, jid in enumerate(ACTUATOR_ORDER):
        tau = 0.0
        if jid.digit in digits:
            torques = digit_joint_torques(spec, q, jid.digit, forces[jid.digit])
            tau = torques[jid]
            if jid.slot is Slot.PIP:
                tau += torques[JointId(jid.digit, Slot.DIP)]
        direct_loads[idx + 1] = abs(tau)

    tendon_bank = _motor_bank(spec, tendon_loads)
    direct_bank = _motor_bank(spec, direct_loads)
    for mid, m in tendon_bank.items():
        m.load_torque = tendon_loads[mid]
    for mid, m in direct_bank.items():
        m.load_torque = direct_loads[mid]

    logs = []
    steps = int(round(config.duration / config.dt))
    sample_stride = max(1, int(round(config.sample_every / config.dt)))
    for i in range(steps):
        for m in tendon_bank.values():
            m.step(config.dt)
        for m in direct_bank.values():
            m.step(config.dt)
        if i % sample_stride == 0 or i == steps - 1:
            logs.append({
                "time": round((i + 1) * config.dt, 9),
                "tendon_current": sum(abs(m.present_current) for m in tendon_bank.values()),
                "direct_current": sum(abs(m.present_current) for m in direct_bank.values()),
                "tendon_max_motor_current": max(abs(m.present_current) for m in tendon_bank.values()),
                "max_sag": max(abs(m.present_position) for m in tendon_bank.values()),
                "tendon_saturated": any(m.saturated for m in tendon_bank.values()),
            })
    summary = _summarize_holding(config.to_dict(), logs)
    return TestReport("holding", config.to_dict(), tuple(logs), summary)


@_summarizer("holding")
def _summarize_holding(config: dict, logs: list[dict]) -> dict:
    tendon = [entry["tendon_current"] for entry in logs]
    direct = [entry["direct_current"] for entry in logs]
    avg_t = sum(tendon) / len(tendon)
    avg_d = sum(direct) / len(direct)
    return {
        "tendon_avg_current": avg_t,
        "direct_avg_current": avg_d,
        "current_ratio": avg_t / avg_d if avg_d else 0.0,
        "tendon_peak_current": max(tendon),
        "tendon_max_motor_current": max(entry["tendon_max_motor_current"] for entry in logs),
        "hold_failed": bool(any(entry["tendon_saturated"] for entry in logs)),
        "final_sag": logs[-1]["max_sag"],
        "samples": len(logs),
    }


# --------------------------------------------------------------------------
# Sphere grasp check
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ContactSummary:
    distances: Mapping[Digit, float]   # signed fingertip-to-surface distance
    contacts: tuple[Digit, ...]
    closed: bool
    spanning: bool


def check_sphere_grasp(
    spec: HandSpec,
    q: JointAngles,
    center,
    radius: float,
    tolerance: float = 0.002,
    min_contacts: int = 3,
) -> ContactSummary:
    """Fingertip contact test against a sphere.

    Closed when at least min_contacts digits touch the surface (within
    tolerance) and the contact normals positively span the palm-horizontal
    plane (a force-closure proxy).
    """
    if radius <= 0:
        raise ValueError("sphere radius must be > 0")
    center = np.asarray(center, dtype=float)
    distances = {}
    normals = []
    contacts = []
    for d in DIGITS:
        tip = fingertip_position(spec, q, d)
        dist = float(np.linalg.norm(tip - center) - radius)
        distances[d] = dist
        if abs(dist) <= tolerance:
            contacts.append(d)
            normals.append((center - tip) / max(np.linalg.norm(center - tip), 1e-12))
    spanning = _positively_spans_horizontal(normals)
    return ContactSummary(
        distances=distances,
        contacts=tuple(contacts),
        closed=len(contacts) >= min_contacts and spanning,
        spanning=spanning,
    )


def fit_sphere(points) -> tuple[np.ndarray, float]:
    """Least-squares sphere through 4+ points: |p|^2 = 2 c.p + (r^2 - |c|^2)."""
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] < 4:
        raise ValueError("sphere fit needs at least 4 points")
    A = np.column_stack([2 * pts, np.ones(len(pts))])
    b = np.sum(pts**2, axis=1)
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    center = sol[:3]
    radius = math.sqrt(max(sol[3] + center @ center, 0.0))
    return center, radius


def _positively_spans_horizontal(normals: list[np.ndarray]) -> bool:
    """True when the horizontal projections leave no open half-plane."""
    angles = []
    for n in normals:
        h = np.array([n[0], n[2]])
        if np.linalg.norm(h) > 1e-6:
            angles.append(math.atan2(h[1], h[0]))
    if len(angles) < 2:
        return False
    angles.sort()
    gaps = [b - a for a, b in zip(angles, angles[1:])]
    gaps.append(2 * math.pi - (angles[-1] - angles[0]))
    return max(gaps) < math.pi
