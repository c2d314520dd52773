"""Joint space <-> motor (spool) space mapping and static force propagation.

Linear moment-arm model: tendon excursion is sum(arm_j * theta_j) over the
joints a route crosses. Each digit has three routes (one motor each):
a single flexor tendon over the coupled distal pair (return springs are
its antagonist), and two antagonistic pairs sharing one spool each for
base flexion/extension and abduction/adduction. Capstan friction over the
dowel pins attenuates the motor-side tension by exp(-mu*phi) when friction
assists holding and amplifies it by exp(+mu*phi) when opposing motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Mapping, NamedTuple

import numpy as np

from .hand_model import (
    ACTIVE_SLOTS,
    DIGITS,
    Digit,
    HandSpec,
    JointAngles,
    JointId,
    Slot,
    digit_jacobian,
    project_coupling,
)


class TransmissionError(Exception):
    """Route/motor configuration problem, detected at load time."""


class RouteFunction(str, Enum):
    PIP_DIP_FLEX = "pip_dip_flex"
    MCP_FLEX_EXT = "mcp_flex_ext"
    MCP_ABD_ADD = "mcp_abd_add"


# Which active DoF each route function drives.
_FUNCTION_SLOT = {
    RouteFunction.PIP_DIP_FLEX: Slot.PIP,
    RouteFunction.MCP_FLEX_EXT: Slot.MCP_FLEX,
    RouteFunction.MCP_ABD_ADD: Slot.MCP_ABD,
}

RATCHET_STEP = math.radians(5.0)


@dataclass(frozen=True)
class TendonRoute:
    id: str
    digit: Digit
    function: RouteFunction
    moment_arms: Mapping[JointId, float]   # signed, m
    wrap_angle: float                      # total dowel wrap (rad)
    friction_mu: float
    motor: int                             # bus id 1..15
    spool_radius: float
    slack_offset: float = 0.0
    antagonist_arms: Mapping[JointId, float] | None = None

    def __post_init__(self):
        if self.spool_radius <= 0:
            raise TransmissionError(f"route {self.id}: spool radius must be > 0")
        if self.friction_mu < 0:
            raise TransmissionError(f"route {self.id}: friction mu must be >= 0")
        if not 1 <= self.motor <= 15:
            raise TransmissionError(f"route {self.id}: motor id {self.motor} outside 1..15")
        if self.function is RouteFunction.PIP_DIP_FLEX:
            for slot in (Slot.PIP, Slot.DIP):
                if not self.moment_arms.get(JointId(self.digit, slot)):
                    raise TransmissionError(
                        f"route {self.id}: coupled flexor needs nonzero arms at pip and dip"
                    )
        if self.antagonist_arms is not None:
            for jid, arm in self.moment_arms.items():
                if abs(self.antagonist_arms.get(jid, 0.0) + arm) > 1e-9:
                    raise TransmissionError(
                        f"route {self.id}: antagonist arm at {jid.name} is not the "
                        f"negated agonist arm"
                    )

    @property
    def generalized_arm(self) -> float:
        """Moment arm about the route's single generalized coordinate.

        For the coupled flexor this sums the leader and follower arms since
        both joints rotate equally.
        """
        return sum(self.moment_arms.values())


@dataclass(frozen=True)
class ReturnSpring:
    """Elastic band returning the coupled distal pair to neutral.

    Stiffness is generalized over the coupled coordinate (both joints
    move together), in N*m/rad.
    """

    digit: Digit
    stiffness: float
    rest_angle: float = 0.0

    def __post_init__(self):
        if self.stiffness <= 0:
            raise TransmissionError(f"{self.digit.value} spring stiffness must be > 0")


def validate_transmission(spec: HandSpec) -> None:
    """Load-time route checks: coverage, unique motors, invertible maps."""
    by_digit: dict[Digit, dict[RouteFunction, TendonRoute]] = {d: {} for d in DIGITS}
    motors_seen: dict[int, str] = {}
    for route in spec.routes:
        if route.function in by_digit[route.digit]:
            raise TransmissionError(f"{route.digit.value}: duplicate {route.function.value} route")
        by_digit[route.digit][route.function] = route
        if route.motor in motors_seen:
            raise TransmissionError(
                f"motor {route.motor} bound to both {motors_seen[route.motor]} and {route.id}"
            )
        motors_seen[route.motor] = route.id
    for d, routes in by_digit.items():
        if len(routes) != len(RouteFunction):
            missing = [f.value for f in RouteFunction if f not in routes]
            raise TransmissionError(f"{d.value}: missing routes {missing}")
        M = _digit_matrix(spec, d)
        if abs(np.linalg.det(M)) < 1e-12:
            raise TransmissionError(f"{d.value}: singular moment-arm matrix")


def _digit_routes(spec: HandSpec, digit: Digit) -> list[TendonRoute]:
    routes = sorted(
        (r for r in spec.routes if r.digit == digit),
        key=lambda r: list(RouteFunction).index(r.function),
    )
    return routes


def _digit_matrix(spec: HandSpec, digit: Digit) -> np.ndarray:
    """Rows: routes (function order); cols: active DoF (abd, flex, pip).

    M[r, k] such that spool_r - slack_r = sum_k M[r, k] * theta_k, with the
    follower's arm folded into the leader column (equal rotation).
    """
    routes = _digit_routes(spec, digit)
    M = np.zeros((3, 3))
    for i, route in enumerate(routes):
        for jid, arm in route.moment_arms.items():
            slot = Slot.PIP if jid.slot is Slot.DIP else jid.slot
            M[i, ACTIVE_SLOTS.index(slot)] += arm / route.spool_radius
    return M


def excursion(route: TendonRoute, q: JointAngles) -> float:
    """Tendon length change (m) from neutral; linear in the joint angles."""
    return sum(arm * q[jid] for jid, arm in route.moment_arms.items())


def joint_to_motor(spec: HandSpec, q: JointAngles) -> dict[int, float]:
    """Spool angle (rad) per motor id for a coupled-consistent pose."""
    out: dict[int, float] = {}
    for route in spec.routes:
        out[route.motor] = excursion(route, q) / route.spool_radius + route.slack_offset
    return dict(sorted(out.items()))


class MotorToJointResult(NamedTuple):
    q: JointAngles
    saturated: bool


def motor_to_joint(spec: HandSpec, spool_angles: Mapping[int, float]) -> MotorToJointResult:
    """Unique pose reaching the given spool angles; followers projected.

    Total on the reachable spool box (backdrivable): out-of-limit solutions
    are clamped per joint and flagged.
    """
    updates: dict[JointId, float] = {}
    for d in DIGITS:
        routes = _digit_routes(spec, d)
        rhs = np.array([spool_angles[r.motor] - r.slack_offset for r in routes])
        theta = np.linalg.solve(_digit_matrix(spec, d), rhs)
        for slot, value in zip(ACTIVE_SLOTS, theta):
            updates[JointId(d, slot)] = float(value)
    q = project_coupling(JointAngles.zeros().replace(updates))
    q = project_coupling(q)
    clamped, saturated = spec.clamp_to_limits(q)
    return MotorToJointResult(project_coupling(clamped), saturated)


def spool_box(spec: HandSpec) -> dict[int, tuple[float, float]]:
    """Reachable spool-angle interval per motor (image of the joint limit box)."""
    out: dict[int, tuple[float, float]] = {}
    for route in spec.routes:
        lo = hi = route.slack_offset
        for jid, arm in route.moment_arms.items():
            jlo, jhi = spec.joint(jid).limits
            a, b = arm * jlo / route.spool_radius, arm * jhi / route.spool_radius
            lo += min(a, b)
            hi += max(a, b)
        out[route.motor] = (lo, hi)
    return dict(sorted(out.items()))


class HoldTorques(NamedTuple):
    motor_torques: dict[int, float]   # N*m at each spool
    tensions: dict[str, float]        # required tendon tension per route id (N)
    slack_routes: frozenset[str]      # routes that would need to push


def static_hold_torque(
    spec: HandSpec,
    q: JointAngles,
    tip_forces: Mapping[Digit, np.ndarray],
    assist_friction: bool = True,
) -> HoldTorques:
    """Motor torques that hold the pose against external fingertip forces.

    Joint torques come from the fingertip Jacobian transpose plus the
    return-spring load; tension is torque over the generalized arm; the
    capstan factor exp(-mu*phi) applies when friction assists holding,
    exp(+mu*phi) when the motor must move against it.
    """
    motor_torques: dict[int, float] = {}
    tensions: dict[str, float] = {}
    slack: set[str] = set()

    for d in DIGITS:
        force = np.asarray(tip_forces.get(d, np.zeros(3)), dtype=float)
        if not np.all(np.isfinite(force)):
            raise ValueError(f"{d.value}: tip force must be finite")
        # tau[k]: external generalized torque per active DoF (abd, flex, pip+dip)
        tau_ext = digit_jacobian(spec, q, d).T @ force
        spring = spec.springs.get(d)
        for route in _digit_routes(spec, d):
            slot = _FUNCTION_SLOT[route.function]
            need = -tau_ext[ACTIVE_SLOTS.index(slot)]
            if route.function is RouteFunction.PIP_DIP_FLEX:
                if spring is not None:
                    need += spring.stiffness * (q[JointId(d, Slot.PIP)] - spring.rest_angle)
                tension = need / route.generalized_arm
                if tension < 0:
                    slack.add(route.id)
                    tension = 0.0
            else:
                # Antagonistic pair: either side can pull, tension is the magnitude.
                tension = abs(need) / abs(route.generalized_arm)
            tensions[route.id] = tension
            factor = math.exp(-route.friction_mu * route.wrap_angle) if assist_friction \
                else math.exp(route.friction_mu * route.wrap_angle)
            motor_torques[route.motor] = tension * route.spool_radius * factor

    return HoldTorques(dict(sorted(motor_torques.items())), tensions, frozenset(slack))


def retension(route: TendonRoute, measured_slack: float, step: float = RATCHET_STEP) -> TendonRoute:
    """Take up measured tendon slack via the ratchet spool.

    The offset advances by whole ratchet clicks, rounded up so the tendon
    is never left loose; zero slack leaves the route unchanged.
    """
    if measured_slack < 0:
        raise ValueError(f"measured slack must be >= 0, got {measured_slack}")
    if measured_slack == 0:
        return route
    needed = measured_slack / route.spool_radius
    clicks = math.ceil(needed / step - 1e-12)
    return replace(route, slack_offset=route.slack_offset + clicks * step)
