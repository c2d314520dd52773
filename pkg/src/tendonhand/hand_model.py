"""Kinematic description of the 20-joint, 15-actuator hand.

The hand has five digits. Every digit carries the same mechanical chain:
a 2-DoF universal base joint (abduction axis, then flexion axis), then two
rolling-contact joints whose rotations are mechanically coupled so the
distal one always follows the proximal one with equal angle. The thumb
uses anatomical names (CMC/MP/IP) for the same slots.

Actuator order (fixed, used everywhere a flat vector appears):
digits thumb, index, middle, ring, pinky; within a digit
(abduction, base flexion, coupled distal flexion). Motor bus ids are
assigned 1..15 in this order.

Frames: palm frame has +z distal (toward fingertips), +y palmar
(flexion side), +x radial (thumb side). Flexion is rotation about the
local -x axis so positive angles curl a digit toward +y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Iterator, Mapping, TYPE_CHECKING

import numpy as np

from . import transforms as tf

if TYPE_CHECKING:
    from .tendon import ReturnSpring, TendonRoute


class Digit(str, Enum):
    THUMB = "thumb"
    INDEX = "index"
    MIDDLE = "middle"
    RING = "ring"
    PINKY = "pinky"


class Slot(str, Enum):
    MCP_ABD = "mcp_abd"
    MCP_FLEX = "mcp_flex"
    PIP = "pip"
    DIP = "dip"


class Segment(str, Enum):
    METACARPAL = "metacarpal"
    PROXIMAL = "proximal"
    MIDDLE = "middle"
    DISTAL = "distal"


DIGITS = tuple(Digit)
ACTIVE_SLOTS = (Slot.MCP_ABD, Slot.MCP_FLEX, Slot.PIP)

# Thumb anatomical aliases map one-to-one onto the mechanical slots.
THUMB_ALIASES = {
    "cmc_abd": Slot.MCP_ABD,
    "cmc_flex": Slot.MCP_FLEX,
    "mp": Slot.PIP,
    "ip": Slot.DIP,
}
_THUMB_ALIAS_NAMES = {v: k for k, v in THUMB_ALIASES.items()}


class HandModelError(Exception):
    """Base for kinematic-model errors."""


class LimitError(HandModelError):
    def __init__(self, joint: "JointId", value: float, limits: tuple[float, float]):
        self.joint = joint
        self.value = value
        self.limits = limits
        super().__init__(
            f"joint {joint.name} angle {value:.4f} rad outside "
            f"[{limits[0]:.4f}, {limits[1]:.4f}]"
        )


class CouplingError(HandModelError):
    pass


class UnreachableError(HandModelError):
    def __init__(self, digit: Digit, residual: float, best_q: "JointAngles | None" = None):
        self.digit = digit
        self.residual = residual
        self.best_q = best_q   # closest in-limit pose found, if any
        super().__init__(f"{digit.value} fingertip target unreachable, best residual {residual:.6f} m")


@dataclass(frozen=True, order=True)
class JointId:
    digit: Digit
    slot: Slot

    @property
    def name(self) -> str:
        slot = self.slot.value
        if self.digit is Digit.THUMB:
            slot = _THUMB_ALIAS_NAMES[self.slot]
        return f"{self.digit.value}.{slot}"

    @classmethod
    def parse(cls, text: str) -> "JointId":
        digit_name, _, slot_name = text.partition(".")
        digit = Digit(digit_name)
        if slot_name in THUMB_ALIASES:
            if digit is not Digit.THUMB:
                raise ValueError(f"{slot_name!r} is a thumb-only joint name")
            return cls(digit, THUMB_ALIASES[slot_name])
        return cls(digit, Slot(slot_name))

    def __repr__(self) -> str:
        return f"JointId({self.name})"


ALL_JOINT_IDS: tuple[JointId, ...] = tuple(
    JointId(d, s) for d in DIGITS for s in Slot
)
ACTUATOR_ORDER: tuple[JointId, ...] = tuple(
    JointId(d, s) for d in DIGITS for s in ACTIVE_SLOTS
)
_INDEX_OF = {jid: i for i, jid in enumerate(ALL_JOINT_IDS)}
_ACTIVE_INDEX_OF = {jid: i for i, jid in enumerate(ACTUATOR_ORDER)}


def follower_leader(jid: JointId) -> JointId | None:
    """Leader of a passive follower joint, or None for active joints."""
    if jid.slot is Slot.DIP:
        return JointId(jid.digit, Slot.PIP)
    return None


class JointAngles(Mapping):
    """Immutable map JointId -> angle (rad) over all 20 joints."""

    __slots__ = ("_values",)

    def __init__(self, values: Mapping[JointId, float] | "JointAngles"):
        if isinstance(values, JointAngles):
            object.__setattr__(self, "_values", values._values)
            return
        missing = [j for j in ALL_JOINT_IDS if j not in values]
        if missing:
            raise KeyError(f"missing joints: {[j.name for j in missing]}")
        if len(values) != len(ALL_JOINT_IDS):
            extra = [k for k in values if k not in _INDEX_OF]
            raise KeyError(f"unknown joints: {extra}")
        object.__setattr__(
            self, "_values", tuple(float(values[j]) for j in ALL_JOINT_IDS)
        )

    def __setattr__(self, name, value):
        raise AttributeError("JointAngles is immutable")

    @classmethod
    def zeros(cls) -> "JointAngles":
        return cls.from_array(np.zeros(len(ALL_JOINT_IDS)))

    @classmethod
    def from_array(cls, values) -> "JointAngles":
        vals = tuple(float(v) for v in values)
        if len(vals) != len(ALL_JOINT_IDS):
            raise ValueError(f"expected {len(ALL_JOINT_IDS)} angles, got {len(vals)}")
        obj = object.__new__(cls)
        object.__setattr__(obj, "_values", vals)
        return obj

    @classmethod
    def from_active(cls, active_values) -> "JointAngles":
        """Build from the 15 active angles (actuator order); followers copy leaders."""
        vals = [0.0] * len(ALL_JOINT_IDS)
        active = list(active_values)
        if len(active) != len(ACTUATOR_ORDER):
            raise ValueError(f"expected {len(ACTUATOR_ORDER)} active angles")
        for jid, v in zip(ACTUATOR_ORDER, active):
            vals[_INDEX_OF[jid]] = float(v)
        for jid in ALL_JOINT_IDS:
            leader = follower_leader(jid)
            if leader is not None:
                vals[_INDEX_OF[jid]] = vals[_INDEX_OF[leader]]
        return cls.from_array(vals)

    def __getitem__(self, jid: JointId) -> float:
        return self._values[_INDEX_OF[jid]]

    def __iter__(self) -> Iterator[JointId]:
        return iter(ALL_JOINT_IDS)

    def __len__(self) -> int:
        return len(ALL_JOINT_IDS)

    def __eq__(self, other) -> bool:
        return isinstance(other, JointAngles) and self._values == other._values

    def __hash__(self) -> int:
        return hash(self._values)

    def __repr__(self) -> str:
        body = ", ".join(f"{j.name}={v:.3f}" for j, v in self.items())
        return f"JointAngles({body})"

    def array(self) -> np.ndarray:
        """All 20 angles in ALL_JOINT_IDS order."""
        return np.array(self._values)

    def active_array(self) -> np.ndarray:
        """The 15 active angles in actuator order."""
        return np.array([self._values[_INDEX_OF[j]] for j in ACTUATOR_ORDER])

    def replace(self, updates: Mapping[JointId, float]) -> "JointAngles":
        vals = list(self._values)
        for jid, v in updates.items():
            vals[_INDEX_OF[jid]] = float(v)
        return JointAngles.from_array(vals)


def project_coupling(q: JointAngles) -> JointAngles:
    """Enforce the equal-rotation linkage: each distal follower copies its leader.

    Leader wins; all non-follower entries are preserved bit-exactly.
    """
    vals = list(q.array())
    for jid in ALL_JOINT_IDS:
        leader = follower_leader(jid)
        if leader is not None:
            vals[_INDEX_OF[jid]] = vals[_INDEX_OF[leader]]
    return JointAngles.from_array(vals)


def coupling_residual(q: JointAngles) -> float:
    """Max |follower - leader| over all coupled pairs."""
    worst = 0.0
    for jid in ALL_JOINT_IDS:
        leader = follower_leader(jid)
        if leader is not None:
            worst = max(worst, abs(q[jid] - q[leader]))
    return worst


class JointKind(str, Enum):
    REVOLUTE = "revolute"
    ROLLING = "rolling"


@dataclass(frozen=True)
class JointSpec:
    id: JointId
    kind: JointKind
    limits: tuple[float, float]
    rolling_radius: float | None = None
    follower_of: JointId | None = None

    def __post_init__(self):
        lo, hi = self.limits
        if not lo < hi:
            raise ValueError(f"{self.id.name}: limit min {lo} must be < max {hi}")
        if self.kind is JointKind.ROLLING:
            if self.rolling_radius is None or self.rolling_radius <= 0:
                raise ValueError(f"{self.id.name}: rolling joint needs radius > 0")

    @property
    def active(self) -> bool:
        return self.follower_of is None


@dataclass(frozen=True)
class LinkSpec:
    digit: Digit
    segment: Segment
    length: float

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError(f"{self.digit.value} {self.segment.value}: length must be > 0")


@dataclass(frozen=True)
class HandSpec:
    """Static description of the hand: links, joints, routing, motor bindings."""

    name: str
    version: str
    links: tuple[LinkSpec, ...]
    joints: tuple[JointSpec, ...]
    palm_frame: np.ndarray
    thumb_mount: np.ndarray
    finger_bases: Mapping[Digit, np.ndarray]
    routes: tuple["TendonRoute", ...]
    springs: Mapping[Digit, "ReturnSpring"]
    mass: float = 0.8
    palm_length: float = 0.095
    finger_length: float = 0.103
    motor_params: Mapping[str, float] | None = None

    @cached_property
    def joint_table(self) -> dict[JointId, JointSpec]:
        return {j.id: j for j in self.joints}

    @cached_property
    def link_table(self) -> dict[tuple[Digit, Segment], LinkSpec]:
        return {(l.digit, l.segment): l for l in self.links}

    def joint(self, jid: JointId) -> JointSpec:
        return self.joint_table[jid]

    def link_length(self, digit: Digit, segment: Segment) -> float:
        return self.link_table[(digit, segment)].length

    def base_transform(self, digit: Digit) -> np.ndarray:
        if digit is Digit.THUMB:
            return self.palm_frame @ self.thumb_mount
        return self.palm_frame @ self.finger_bases[digit]

    def reach(self, digit: Digit) -> float:
        """Base-to-fingertip distance cap (straight chain)."""
        return sum(self.link_length(digit, s) for s in Segment)

    def validate(self) -> None:
        if len(self.joint_table) != len(ALL_JOINT_IDS):
            raise ValueError(f"expected {len(ALL_JOINT_IDS)} joints, got {len(self.joint_table)}")
        active = [j for j in self.joints if j.active]
        followers = [j for j in self.joints if not j.active]
        if len(active) != 15 or len(followers) != 5:
            raise ValueError(f"expected 15 active / 5 follower joints, got {len(active)}/{len(followers)}")
        for j in followers:
            if j.id.slot is not Slot.DIP or j.follower_of != JointId(j.id.digit, Slot.PIP):
                raise ValueError(f"{j.id.name}: follower must track the same digit's coupled leader")
        for d in DIGITS:
            total = sum(self.link_length(d, s) for s in (Segment.PROXIMAL, Segment.MIDDLE, Segment.DISTAL))
            if abs(total - self.finger_length) > 1e-9:
                raise ValueError(
                    f"{d.value}: proximal+middle+distal = {total:.4f} m != finger length {self.finger_length:.4f} m"
                )
            for slot in (Slot.PIP, Slot.DIP):
                spec = self.joint(JointId(d, slot))
                before = Segment.PROXIMAL if slot is Slot.PIP else Segment.MIDDLE
                if spec.kind is JointKind.ROLLING and self.link_length(d, before) <= 2 * spec.rolling_radius:
                    raise ValueError(f"{d.value} {before.value} link too short for rolling joint span")
        thumb_pos = self.base_transform(Digit.THUMB)[:3, 3]
        for d, frame in self.finger_bases.items():
            if np.allclose(thumb_pos, (self.palm_frame @ frame)[:3, 3]):
                raise ValueError(f"thumb mount coincides with {d.value} base")

    def check_limits(self, q: JointAngles) -> None:
        for jid, spec in self.joint_table.items():
            lo, hi = spec.limits
            v = q[jid]
            if v < lo - 1e-12 or v > hi + 1e-12:
                raise LimitError(jid, v, spec.limits)

    def clamp_to_limits(self, q: JointAngles) -> tuple[JointAngles, bool]:
        """Clamp every joint into its limits; second value reports saturation."""
        vals = list(q.array())
        saturated = False
        for i, jid in enumerate(ALL_JOINT_IDS):
            lo, hi = self.joint_table[jid].limits
            clamped = min(max(vals[i], lo), hi)
            if clamped != vals[i]:
                saturated = True
                vals[i] = clamped
        return JointAngles.from_array(vals), saturated


def rolling_joint_transform(theta: float, r: float) -> np.ndarray:
    """Pose of the distal rolling surface in the proximal circle frame (2D).

    Two equal circles of radius ``r`` roll on each other without slipping.
    In the joint plane (u = flexion direction, v = link axis) the distal
    circle center sits at 2r*(sin(theta/2), cos(theta/2)) and the distal
    frame is rotated by theta. Returns a 3x3 homogeneous 2D transform.
    """
    if r <= 0:
        raise ValueError(f"rolling radius must be > 0, got {r}")
    if abs(theta) > math.pi:
        raise ValueError(f"rolling joint angle {theta} outside [-pi, pi]")
    h = theta / 2.0
    return tf.planar(theta, 2 * r * math.sin(h), 2 * r * math.cos(h))


def _rolling_transform_3d(theta: float, r: float) -> np.ndarray:
    """Embed the planar rolling transform: u -> +y, v -> +z, flex about -x."""
    h = theta / 2.0
    T = tf.rot_x(-theta)
    T[1, 3] = 2 * r * math.sin(h)
    T[2, 3] = 2 * r * math.cos(h)
    return T


@dataclass(frozen=True)
class _JointFrame:
    """World-frame info for one joint, for Jacobian assembly."""

    id: JointId
    axis: np.ndarray     # world rotation axis (positive joint direction)
    center: np.ndarray   # world point the motion instantaneously rotates about


@dataclass(frozen=True)
class DigitPose:
    digit: Digit
    tip: np.ndarray                     # 4x4 world fingertip pose
    frames: Mapping[Segment, np.ndarray]  # world frame at each link base
    joint_frames: tuple[_JointFrame, ...]

    @property
    def tip_position(self) -> np.ndarray:
        return self.tip[:3, 3]


def _digit_pose(spec: HandSpec, q: JointAngles, digit: Digit) -> DigitPose:
    frames: dict[Segment, np.ndarray] = {}
    joint_frames: list[_JointFrame] = []

    T = spec.base_transform(digit)
    frames[Segment.METACARPAL] = T
    T = T @ tf.translation(0, 0, spec.link_length(digit, Segment.METACARPAL))

    # Universal base joint: abduction about +y, then flexion about -x.
    abd = JointId(digit, Slot.MCP_ABD)
    flex = JointId(digit, Slot.MCP_FLEX)
    center = T[:3, 3].copy()
    joint_frames.append(_JointFrame(abd, T[:3, :3] @ np.array([0.0, 1.0, 0.0]), center))
    T = T @ tf.rot_y(q[abd])
    joint_frames.append(_JointFrame(flex, T[:3, :3] @ np.array([-1.0, 0.0, 0.0]), center))
    T = T @ tf.rot_x(-q[flex])
    frames[Segment.PROXIMAL] = T

    for slot, seg_before, seg_after in (
        (Slot.PIP, Segment.PROXIMAL, Segment.MIDDLE),
        (Slot.DIP, Segment.MIDDLE, Segment.DISTAL),
    ):
        jid = JointId(digit, slot)
        jspec = spec.joint(jid)
        theta = q[jid]
        if jspec.kind is JointKind.ROLLING:
            r = jspec.rolling_radius
            T = T @ tf.translation(0, 0, spec.link_length(digit, seg_before) - 2 * r)
            # A rolling contact instantaneously rotates about the contact point.
            contact_local = np.array([0.0, r * math.sin(theta / 2), r * math.cos(theta / 2)])
            joint_frames.append(
                _JointFrame(jid, T[:3, :3] @ np.array([-1.0, 0.0, 0.0]), tf.apply(T, contact_local))
            )
            T = T @ _rolling_transform_3d(theta, r)
        else:
            T = T @ tf.translation(0, 0, spec.link_length(digit, seg_before))
            joint_frames.append(_JointFrame(jid, T[:3, :3] @ np.array([-1.0, 0.0, 0.0]), T[:3, 3].copy()))
            T = T @ tf.rot_x(-theta)
        frames[seg_after] = T

    tip = T @ tf.translation(0, 0, spec.link_length(digit, Segment.DISTAL))
    return DigitPose(digit, tip, frames, tuple(joint_frames))


def forward_kinematics(
    spec: HandSpec, q: JointAngles, check_limits: bool = True
) -> dict[Digit, DigitPose]:
    """Fingertip pose and per-link frames for every digit.

    Requires q to satisfy the coupling constraint; raises LimitError naming
    the offending joint when angles violate their limits.
    """
    if coupling_residual(q) > 1e-9:
        raise CouplingError(f"coupling violated by {coupling_residual(q):.2e} rad")
    if check_limits:
        spec.check_limits(q)
    return {d: _digit_pose(spec, q, d) for d in DIGITS}


def fingertip_position(spec: HandSpec, q: JointAngles, digit: Digit) -> np.ndarray:
    return _digit_pose(spec, q, digit).tip_position


def digit_jacobian(spec: HandSpec, q: JointAngles, digit: Digit) -> np.ndarray:
    """3x3 fingertip position Jacobian over the digit's active DoF.

    Columns follow (abduction, base flexion, coupled flexion); the coupled
    column sums the leader and the equal-rotation follower contributions.
    """
    pose = _digit_pose(spec, q, digit)
    tip = pose.tip_position
    cols = {s: np.zeros(3) for s in ACTIVE_SLOTS}
    for jf in pose.joint_frames:
        slot = jf.id.slot
        target = Slot.PIP if slot is Slot.DIP else slot
        cols[target] += np.cross(jf.axis, tip - jf.center)
    return np.column_stack([cols[s] for s in ACTIVE_SLOTS])


def digit_joint_torques(spec: HandSpec, q: JointAngles, digit: Digit, force) -> dict[JointId, float]:
    """Per-joint torque produced by a force applied at the fingertip.

    Unlike digit_jacobian this keeps the coupled leader and follower
    separate, which compliance models need.
    """
    pose = _digit_pose(spec, q, digit)
    tip = pose.tip_position
    f = np.asarray(force, dtype=float)
    return {jf.id: float(np.cross(jf.axis, tip - jf.center) @ f) for jf in pose.joint_frames}


IK_DAMPING = 1e-3
IK_MAX_ITERS = 200
IK_TOLERANCE = 1e-4


def fingertip_ik(
    spec: HandSpec,
    digit: Digit,
    target,
    seed: JointAngles,
    damping: float = IK_DAMPING,
    max_iters: int = IK_MAX_ITERS,
    tolerance: float = IK_TOLERANCE,
) -> JointAngles:
    """Damped least-squares IK for one digit's fingertip position.

    Deterministic: fixed damping, seed required, no restarts. Raises
    UnreachableError (carrying the best residual) when the target lies
    outside the digit workspace or the iteration fails to converge.
    """
    target = np.asarray(target, dtype=float)
    base = spec.base_transform(digit)[:3, 3]
    if np.linalg.norm(target - base) > spec.reach(digit) + 1e-6:
        raise UnreachableError(digit, float(np.linalg.norm(target - base) - spec.reach(digit)))

    dofs = [JointId(digit, s) for s in ACTIVE_SLOTS]
    limits = np.array([spec.joint(j).limits for j in dofs])
    theta = np.array([seed[j] for j in dofs])
    q = project_coupling(seed)
    best_q, best_res = q, float("inf")

    for _ in range(max_iters):
        q = project_coupling(q.replace(dict(zip(dofs, theta))))
        err = target - fingertip_position(spec, q, digit)
        res = float(np.linalg.norm(err))
        if res < best_res:
            best_q, best_res = q, res
        if res < tolerance:
            return best_q
        J = digit_jacobian(spec, q, digit)
        JJt = J @ J.T + damping**2 * np.eye(3)
        theta = theta + J.T @ np.linalg.solve(JJt, err)
        theta = np.clip(theta, limits[:, 0], limits[:, 1])

    if best_res < tolerance:
        return best_q
    raise UnreachableError(digit, best_res, best_q)
