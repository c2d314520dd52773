"""Independent oracles the test suite checks the implementation against.

These deliberately avoid the closed forms and table-driven code used by
the package: the rolling oracle reconstructs the joint pose from stepwise
contact-point advancement and tangency, and the CRC oracle shifts bits
one at a time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class RolledState:
    center_u: float
    center_v: float
    orientation: float
    arc_proximal: float
    arc_distal: float


def roll_by_arc(arc: float, r: float, steps: int = 10_000, start: RolledState | None = None) -> RolledState:
    """Roll the distal circle along the fixed proximal circle by a contact arc.

    Advances the contact point in equal increments, accumulating the contact
    angle on the proximal surface and the material-marker angle on the distal
    surface (equal arcs on both sides: rolling without slipping). The pose is
    reconstructed from tangency (centers 2r apart through the contact point)
    and from requiring the distal material marker to sit at the contact.

    Angles measure from the +v axis toward +u; the marker starts at pi
    (the distal point initially touching the proximal circle). Passing a
    previous state continues rolling from that configuration.
    """
    dphi = (arc / r) / steps
    if start is None:
        phi, marker, arc_p, arc_d = 0.0, math.pi, 0.0, 0.0
    else:
        phi = math.atan2(start.center_u, start.center_v)
        marker = (phi + math.pi) - start.orientation
        arc_p, arc_d = start.arc_proximal, start.arc_distal
    for _ in range(steps):
        phi += dphi
        marker -= dphi
        arc_p += r * abs(dphi)
        arc_d += r * abs(dphi)
    center_u = 2 * r * math.sin(phi)
    center_v = 2 * r * math.cos(phi)
    # world direction center->contact is -e(phi), i.e. angle phi + pi;
    # the body marker must point there after rotating by the orientation.
    orientation = (phi + math.pi) - marker
    return RolledState(center_u, center_v, orientation, arc_p, arc_d)


def rolling_pose_for_angle(theta: float, r: float, steps: int = 10_000) -> RolledState:
    """Distal pose once the accumulated orientation reaches theta.

    The contact arc needed for a given orientation is discovered by
    linear calibration (orientation is exactly linear in arc), not taken
    from any closed-form half-angle relation.
    """
    if theta == 0.0:
        return RolledState(0.0, 2 * r, 0.0, 0.0, 0.0)
    # orientation is linear in arc, so a short probe fixes the scale
    probe = roll_by_arc(r * theta, r, min(steps, 64))
    arc = r * theta * (theta / probe.orientation)
    state = roll_by_arc(arc, r, steps)
    assert abs(state.orientation - theta) < 1e-9
    return state


def crc16_bitwise(data: bytes, poly: int = 0x8005, init: int = 0) -> int:
    """Bit-at-a-time CRC-16, MSB first."""
    crc = init
    for b in data:
        crc ^= b << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ poly) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
    return crc
