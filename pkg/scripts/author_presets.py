#!/usr/bin/env python3
"""Author the 33 grasp presets and write src/tendonhand/data/feix_presets.yaml.

Poses are constructed against the default hand description: wrap poses by
direct joint recipes, pinches and sphere wraps by fingertip IK. The output
file is committed data; rerun this script only when the default hand
geometry changes, then re-run the validation tests.
"""

from __future__ import annotations

import math
import sys
from pathlib import Path

import numpy as np
import yaml

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from tendonhand.hand_model import (
    DIGITS,
    Digit,
    JointAngles,
    JointId,
    Segment,
    Slot,
    UnreachableError,
    fingertip_ik,
    fingertip_position,
    forward_kinematics,
    project_coupling,
)
from tendonhand.hand_spec_io import default_hand_spec
from tendonhand.grasps import GraspCategory, evaluate_predicate

SPEC = default_hand_spec()
FINGERS = [Digit.INDEX, Digit.MIDDLE, Digit.RING, Digit.PINKY]
OUT = Path(__file__).resolve().parents[1] / "src" / "tendonhand" / "data" / "feix_presets.yaml"


def pose(**by_name: float) -> JointAngles:
    """Pose from joint-name keywords, e.g. index_mcp_flex=0.5; coupled pairs follow."""
    updates = {}
    for key, value in by_name.items():
        digit, _, slot = key.partition("_")
        updates[JointId.parse(f"{digit}.{slot}")] = value
    return project_coupling(JointAngles.zeros().replace(updates))


def curl(flex: float, coupled: float, abd: dict[Digit, float] | None = None,
         thumb=(0.0, 0.0, 0.0), digits=FINGERS) -> JointAngles:
    updates = {}
    for d in digits:
        updates[JointId(d, Slot.MCP_FLEX)] = flex
        updates[JointId(d, Slot.PIP)] = coupled
    for d, a in (abd or {}).items():
        updates[JointId(d, Slot.MCP_ABD)] = a
    t_abd, t_flex, t_mp = thumb
    updates[JointId(Digit.THUMB, Slot.MCP_ABD)] = t_abd
    updates[JointId(Digit.THUMB, Slot.MCP_FLEX)] = t_flex
    updates[JointId(Digit.THUMB, Slot.PIP)] = t_mp
    return project_coupling(JointAngles.zeros().replace(updates))


def thumb_to(q: JointAngles, target, seed_thumb=(0.0, 0.7, 0.8)) -> JointAngles:
    """IK the thumb tip to the target, backing off toward the seed tip if the
    exact point is outside the limit-constrained workspace."""
    seed = project_coupling(q.replace({
        JointId(Digit.THUMB, Slot.MCP_ABD): seed_thumb[0],
        JointId(Digit.THUMB, Slot.MCP_FLEX): seed_thumb[1],
        JointId(Digit.THUMB, Slot.PIP): seed_thumb[2],
    }))
    target = np.asarray(target, dtype=float)
    seed_tip = fingertip_position(SPEC, seed, Digit.THUMB)
    for blend in np.linspace(0.0, 1.0, 21):
        t = (1 - blend) * target + blend * seed_tip
        try:
            return fingertip_ik(SPEC, Digit.THUMB, t, seed)
        except UnreachableError:
            continue
    raise UnreachableError(Digit.THUMB, float(np.linalg.norm(target - seed_tip)))


# graded opposition curls: ulnar fingers flex deeper and abduct toward the thumb
GRADED = {
    Digit.INDEX: (0.10, 0.55, 0.85),
    Digit.MIDDLE: (0.05, 0.60, 0.95),
    Digit.RING: (0.22, 0.75, 1.10),
    Digit.PINKY: (0.30, 0.90, 1.30),
}


def graded_curl(digits=FINGERS, scale=1.0, base: JointAngles | None = None) -> JointAngles:
    q = base if base is not None else JointAngles.zeros()
    updates = {}
    for d in digits:
        abd, flex, pip = GRADED[d]
        updates[JointId(d, Slot.MCP_ABD)] = abd
        updates[JointId(d, Slot.MCP_FLEX)] = flex * scale
        updates[JointId(d, Slot.PIP)] = pip * scale
    return project_coupling(q.replace(updates))


def digit_to(q: JointAngles, digit: Digit, target) -> JointAngles:
    return fingertip_ik(SPEC, digit, target, q)


def tips(q: JointAngles) -> dict[Digit, np.ndarray]:
    poses = forward_kinematics(SPEC, q, check_limits=False)
    return {d: poses[d].tip_position for d in DIGITS}


def wrap_on_sphere(center, radius, digits, base: JointAngles, passes=4,
                   thumb_under=True) -> JointAngles:
    """IK fingertips onto the sphere surface; the thumb goes to the proximal
    underside so its contact opposes the finger wrap."""
    center = np.asarray(center, dtype=float)
    q = base
    under = center + radius * np.array([0.1, -0.2, -0.97]) / np.linalg.norm([0.1, -0.2, -0.97])
    for _ in range(passes):
        for d in digits:
            if d is Digit.THUMB and thumb_under:
                target = under
            else:
                tip = fingertip_position(SPEC, q, d)
                direction = tip - center
                target = center + direction / np.linalg.norm(direction) * radius
            try:
                q = digit_to(q, d, target)
            except UnreachableError as err:
                if err.best_q is not None:
                    q = err.best_q
    return q


def rim_pose(center_xz, r, y, angles_by_digit, seed: JointAngles) -> JointAngles:
    q = seed
    cx, cz = center_xz
    for d, phi in angles_by_digit.items():
        target = np.array([cx + r * math.cos(phi), y, cz + r * math.sin(phi)])
        try:
            q = digit_to(q, d, target)
        except UnreachableError as err:
            if err.best_q is not None:
                q = err.best_q
    return q


def centroid(q: JointAngles, digits) -> np.ndarray:
    t = tips(q)
    return np.mean([t[d] for d in digits], axis=0)


def seg_point(q: JointAngles, digit: Digit, segment: Segment, t: float) -> np.ndarray:
    poses = forward_kinematics(SPEC, q, check_limits=False)
    frames = poses[digit].frames
    order = [Segment.METACARPAL, Segment.PROXIMAL, Segment.MIDDLE, Segment.DISTAL]
    idx = order.index(segment)
    a = frames[segment][:3, 3]
    b = poses[digit].tip_position if idx + 1 == len(order) else frames[order[idx + 1]][:3, 3]
    return a + t * (b - a)


def build_presets():
    presets = []

    def add(name, category, q, predicates):
        presets.append((name, category, q, predicates))

    halfspace = lambda digits, lo: {"kind": "halfspace", "digits": [d.value for d in digits],
                                    "axis": "y", "min": round(lo, 4)}
    opposition = lambda digit, targets, dist=0.005: {
        "kind": "opposition", "digit": digit.value,
        "targets": [t.value for t in targets], "max_distance": dist}

    def palm_margin(q, digits, factor=0.55, floor=0.004):
        t = tips(q)
        return float(max(floor, round(min(float(t[d][1]) for d in digits) * factor, 4)))

    # ----- power wraps -------------------------------------------------
    q = curl(0.6, 0.75, thumb=(0.15, 0.55, 0.65))
    add("Large Diameter", GraspCategory.POWER, q,
        [halfspace(FINGERS, palm_margin(q, FINGERS)),
         halfspace([Digit.THUMB], palm_margin(q, [Digit.THUMB]))])

    q = curl(0.95, 1.2, thumb=(0.1, 0.75, 0.95))
    add("Small Diameter", GraspCategory.POWER, q,
        [halfspace(FINGERS, palm_margin(q, FINGERS)),
         halfspace([Digit.THUMB], palm_margin(q, [Digit.THUMB]))])

    q = curl(0.8, 1.0, thumb=(0.12, 0.65, 0.8))
    add("Medium Wrap", GraspCategory.POWER, q,
        [halfspace(FINGERS, palm_margin(q, FINGERS))])

    q = curl(0.7, 0.9, thumb=(-0.8, 0.5, 0.55))
    add("Adducted Thumb", GraspCategory.POWER, q,
        [halfspace(FINGERS, palm_margin(q, FINGERS)),
         {"kind": "segment_distance", "digit": "thumb", "target": "index",
          "segment": "proximal", "max_distance": 0.03}])

    q = curl(0.9, 1.15, thumb=(0.05, 0.6, 0.75))
    add("Light Tool", GraspCategory.POWER, q,
        [halfspace(FINGERS, palm_margin(q, FINGERS))])

    # ----- prismatic / pad pinches ------------------------------------
    q = graded_curl()
    q = thumb_to(q, centroid(q, FINGERS))
    add("Prismatic 4 Finger", GraspCategory.PRECISION, q,
        [opposition(Digit.THUMB, FINGERS, 0.006)])

    q = graded_curl([Digit.INDEX, Digit.MIDDLE, Digit.RING],
                    base=curl(1.1, 1.4, digits=[Digit.PINKY]))
    q = thumb_to(q, centroid(q, [Digit.INDEX, Digit.MIDDLE, Digit.RING]))
    add("Prismatic 3 Finger", GraspCategory.PRECISION, q,
        [opposition(Digit.THUMB, [Digit.INDEX, Digit.MIDDLE, Digit.RING], 0.006)])

    q = graded_curl([Digit.INDEX, Digit.MIDDLE],
                    base=curl(1.1, 1.4, digits=[Digit.RING, Digit.PINKY]))
    q = thumb_to(q, tips(q)[Digit.INDEX])
    add("Prismatic 2 Finger", GraspCategory.PRECISION, q,
        [opposition(Digit.THUMB, [Digit.INDEX], 0.005),
         {"kind": "mutual_proximity", "digits": ["index", "middle"], "max_distance": 0.03}])

    q = pose(index_mcp_abd=0.15, index_mcp_flex=0.58, index_pip=0.9)
    q = project_coupling(curl(0.55, 0.75, digits=[Digit.MIDDLE, Digit.RING, Digit.PINKY]).replace(
        {j: q[j] for j in q if j.digit in (Digit.THUMB, Digit.INDEX)}))
    q = thumb_to(q, tips(q)[Digit.INDEX])
    add("Palmar Pinch", GraspCategory.PRECISION, q,
        [opposition(Digit.THUMB, [Digit.INDEX], 0.005)])

    # ----- disks and spheres ------------------------------------------
    spread_mild = {Digit.INDEX: 0.12, Digit.MIDDLE: 0.04, Digit.RING: -0.04, Digit.PINKY: -0.12}
    spread_wide = {Digit.INDEX: 0.3, Digit.MIDDLE: 0.1, Digit.RING: -0.1, Digit.PINKY: -0.3}
    rim_angles = {Digit.INDEX: math.radians(45), Digit.MIDDLE: math.radians(80),
                  Digit.RING: math.radians(115), Digit.PINKY: math.radians(150),
                  Digit.THUMB: math.radians(265)}
    q = curl(0.45, 0.6, abd=spread_wide, thumb=(0.2, 0.6, 0.7))
    q = rim_pose((0.012, 0.125), 0.038, 0.05, rim_angles, q)
    add("Power Disk", GraspCategory.POWER, q,
        [{"kind": "disk_rim", "digits": [d.value for d in DIGITS],
          "plane_tolerance": 0.008, "radius_range": [0.018, 0.058]}])

    q = curl(0.4, 0.55, abd=spread_mild, thumb=(0.1, 0.5, 0.6))
    q = wrap_on_sphere([0.0, 0.05, 0.128], 0.042, DIGITS, q)
    add("Power Sphere", GraspCategory.POWER, q,
        [{"kind": "sphere_fit", "digits": [d.value for d in DIGITS], "min_contacts": 4,
          "tolerance": 0.002, "radius_range": [0.028, 0.06]}])

    q = curl(0.42, 0.55, abd=spread_wide, thumb=(0.3, 0.42, 0.5))
    q = wrap_on_sphere([0.0, 0.062, 0.12], 0.055, DIGITS, q)
    add("Precision Disk", GraspCategory.PRECISION, q,
        [{"kind": "sphere_fit", "digits": [d.value for d in DIGITS], "min_contacts": 4,
          "tolerance": 0.002, "radius_range": [0.038, 0.08]}])

    q = curl(0.42, 0.55, abd=spread_mild, thumb=(0.15, 0.5, 0.55))
    q = wrap_on_sphere([0.0, 0.05, 0.125], 0.036, DIGITS, q)
    add("Precision Sphere", GraspCategory.PRECISION, q,
        [{"kind": "sphere_fit", "digits": [d.value for d in DIGITS], "min_contacts": 4,
          "tolerance": 0.002, "radius_range": [0.024, 0.052]}])

    q = curl(0.38, 0.5, abd={Digit.INDEX: 0.18, Digit.MIDDLE: 0.06,
                             Digit.RING: -0.06, Digit.PINKY: -0.18},
             thumb=(0.1, 0.5, 0.6))
    q = wrap_on_sphere([0.0, 0.05, 0.13], 0.045,
                       [Digit.THUMB, Digit.INDEX, Digit.MIDDLE, Digit.RING, Digit.PINKY], q)
    add("Sphere 4 Finger", GraspCategory.POWER, q,
        [{"kind": "sphere_fit", "digits": [d.value for d in DIGITS], "min_contacts": 4,
          "tolerance": 0.002, "radius_range": [0.03, 0.062]}])

    q = curl(0.55, 0.75, abd={Digit.INDEX: 0.12, Digit.MIDDLE: -0.05},
             digits=[Digit.INDEX, Digit.MIDDLE], thumb=(0.1, 0.55, 0.65))
    q = curl(1.0, 1.3, digits=[Digit.RING, Digit.PINKY]).replace(
        {j: q[j] for j in q if j.digit in (Digit.THUMB, Digit.INDEX, Digit.MIDDLE)})
    q = project_coupling(q)
    q = wrap_on_sphere([0.012, 0.055, 0.108], 0.033,
                       [Digit.THUMB, Digit.INDEX, Digit.MIDDLE], q)
    add("Sphere 3 Finger", GraspCategory.POWER, q,
        [{"kind": "mutual_proximity", "digits": ["thumb", "index", "middle"],
          "min_distance": 0.012, "max_distance": 0.068},
         opposition(Digit.THUMB, [Digit.INDEX, Digit.MIDDLE], 0.06)])

    # ----- tripods -----------------------------------------------------
    q = graded_curl([Digit.INDEX, Digit.MIDDLE],
                    base=curl(1.05, 1.35, digits=[Digit.RING, Digit.PINKY]))
    q = thumb_to(q, centroid(q, [Digit.INDEX, Digit.MIDDLE]))
    add("Tripod", GraspCategory.PRECISION, q,
        [opposition(Digit.THUMB, [Digit.INDEX, Digit.MIDDLE], 0.005),
         {"kind": "mutual_proximity", "digits": ["index", "middle"], "max_distance": 0.03}])

    q = graded_curl([Digit.INDEX, Digit.MIDDLE],
                    base=curl(0.9, 1.2, digits=[Digit.RING, Digit.PINKY]))
    target = 0.65 * tips(q)[Digit.INDEX] + 0.35 * tips(q)[Digit.MIDDLE]
    q = thumb_to(q, target)
    add("Writing Tripod", GraspCategory.INTERMEDIATE, q,
        [opposition(Digit.THUMB, [Digit.INDEX], 0.012),
         {"kind": "segment_distance", "digit": "thumb", "target": "middle",
          "segment": "distal", "max_distance": 0.02}])

    q = graded_curl([Digit.INDEX, Digit.MIDDLE],
                    base=curl(1.0, 1.3, digits=[Digit.RING, Digit.PINKY]))
    q = thumb_to(q, tips(q)[Digit.MIDDLE])
    add("Tripod Variation", GraspCategory.PRECISION, q,
        [opposition(Digit.THUMB, [Digit.MIDDLE], 0.006),
         {"kind": "mutual_proximity", "digits": ["index", "middle"], "max_distance": 0.035}])

    q = graded_curl([Digit.INDEX, Digit.MIDDLE, Digit.RING], scale=0.95,
                    base=curl(1.1, 1.4, digits=[Digit.PINKY]))
    q = thumb_to(q, centroid(q, [Digit.INDEX, Digit.MIDDLE, Digit.RING]))
    add("Quadpod", GraspCategory.PRECISION, q,
        [opposition(Digit.THUMB, [Digit.INDEX, Digit.MIDDLE, Digit.RING], 0.007),
         {"kind": "mutual_proximity", "digits": ["index", "middle", "ring"],
          "max_distance": 0.06}])

    # ----- hooks, extensions, side grips -------------------------------
    q = curl(0.35, 1.5, thumb=(0.6, 0.05, 0.1))
    add("Fixed Hook", GraspCategory.POWER, q,
        [halfspace(FINGERS, palm_margin(q, FINGERS))])

    q = curl(0.8, 1.2, digits=[Digit.INDEX])
    q = thumb_to(q, seg_point(q, Digit.INDEX, Segment.MIDDLE, 0.5) + np.array([0.003, 0.002, 0.0]),
                 seed_thumb=(-0.6, 0.5, 0.6))
    add("Lateral", GraspCategory.INTERMEDIATE, q,
        [{"kind": "segment_distance", "digit": "thumb", "target": "index",
          "segment": "middle", "max_distance": 0.01}])

    q = curl(0.8, 1.1, digits=[Digit.MIDDLE, Digit.RING, Digit.PINKY],
             thumb=(0.1, 0.55, 0.7))
    q = project_coupling(q.replace({JointId(Digit.INDEX, Slot.MCP_FLEX): 0.05,
                                    JointId(Digit.INDEX, Slot.PIP): 0.08,
                                    JointId(Digit.INDEX, Slot.DIP): 0.08}))
    add("Index Finger Extension", GraspCategory.POWER, q,
        [halfspace([Digit.MIDDLE, Digit.RING, Digit.PINKY],
                   palm_margin(q, [Digit.MIDDLE, Digit.RING, Digit.PINKY])),
         {"kind": "halfspace", "digits": ["index"], "axis": "z", "min": 0.15}])

    q = curl(0.3, 0.06)
    plane_y = float(np.mean([tips(q)[d][1] for d in FINGERS]))
    target = tips(q)[Digit.INDEX] + np.array([0.02, 0.0, -0.025])
    target[1] = plane_y
    q = thumb_to(q, target, seed_thumb=(0.6, 0.25, 0.3))
    add("Extension Type", GraspCategory.POWER, q,
        [{"kind": "common_plane", "digits": [d.value for d in DIGITS], "tolerance": 0.003}])

    q = curl(0.55, 0.1, abd={Digit.INDEX: 0.08, Digit.MIDDLE: 0.02,
                             Digit.RING: -0.02, Digit.PINKY: -0.08},
             thumb=(-0.5, 0.4, 0.45))
    add("Parallel Extension", GraspCategory.PRECISION, q,
        [{"kind": "common_plane", "digits": [d.value for d in FINGERS], "tolerance": 0.003},
         {"kind": "halfspace", "digits": ["thumb"], "axis": "y", "min": 0.045}])

    q = pose(index_mcp_abd=-0.15, middle_mcp_abd=0.15,
             index_mcp_flex=0.15, middle_mcp_flex=0.15,
             index_pip=0.25, middle_pip=0.25,
             ring_mcp_flex=0.9, ring_pip=1.2, pinky_mcp_flex=0.9, pinky_pip=1.2,
             thumb_cmc_flex=0.5, thumb_mp=0.6)
    add("Adduction Grip", GraspCategory.INTERMEDIATE, q,
        [{"kind": "lateral_gap", "digits": ["index", "middle"],
          "segment": "proximal", "max_gap": 0.008}])

    q = curl(0.45, 0.7, abd={Digit.INDEX: -0.12, Digit.MIDDLE: 0.12},
             digits=[Digit.INDEX, Digit.MIDDLE], thumb=(0.5, 0.1, 0.15))
    q = curl(1.0, 1.3, digits=[Digit.RING, Digit.PINKY]).replace(
        {j: q[j] for j in q if j.digit in (Digit.THUMB, Digit.INDEX, Digit.MIDDLE)})
    q = project_coupling(q)
    add("Distal Type", GraspCategory.POWER, q,
        [{"kind": "lateral_gap", "digits": ["index", "middle"],
          "segment": "distal", "max_gap": 0.01}])

    q = curl(0.8, 1.2, digits=[Digit.MIDDLE], abd={Digit.INDEX: 0.1, Digit.MIDDLE: -0.02})
    q = project_coupling(curl(0.55, 0.85, digits=[Digit.INDEX]).replace(
        {j: q[j] for j in q if j.digit is not Digit.INDEX}))
    q = project_coupling(curl(0.95, 1.25, digits=[Digit.RING, Digit.PINKY]).replace(
        {j: q[j] for j in q if j.digit in (Digit.THUMB, Digit.INDEX, Digit.MIDDLE)}))
    q = thumb_to(q, seg_point(q, Digit.MIDDLE, Segment.MIDDLE, 0.5) + np.array([0.003, 0.002, 0.0]))
    add("Lateral Tripod", GraspCategory.INTERMEDIATE, q,
        [{"kind": "segment_distance", "digit": "thumb", "target": "middle",
          "segment": "middle", "max_distance": 0.01}])

    # ----- remaining power/intermediate forms ---------------------------
    q = curl(0.85, 1.1, thumb=(-0.8, 0.15, 0.2))
    add("Stick", GraspCategory.INTERMEDIATE, q,
        [halfspace(FINGERS, palm_margin(q, FINGERS)),
         {"kind": "halfspace", "digits": ["thumb"], "axis": "z", "min": 0.07}])

    q = curl(0.5, 0.55, thumb=(0.55, 0.2, 0.25))
    add("Palmar", GraspCategory.POWER, q,
        [halfspace(FINGERS, palm_margin(q, FINGERS))])

    q = curl(0.62, 1.0, digits=[Digit.INDEX])
    q = curl(0.85, 1.15, digits=[Digit.MIDDLE, Digit.RING, Digit.PINKY]).replace(
        {j: q[j] for j in q if j.digit in (Digit.THUMB, Digit.INDEX)})
    q = project_coupling(q)
    q = thumb_to(q, tips(q)[Digit.INDEX])
    add("Ring", GraspCategory.POWER, q,
        [opposition(Digit.THUMB, [Digit.INDEX], 0.006)])

    q = curl(1.0, 1.25, thumb=(0.3, 0.5, 0.6))
    add("Ventral", GraspCategory.POWER, q,
        [halfspace(FINGERS, palm_margin(q, FINGERS))])

    q = pose(index_mcp_abd=0.05, index_mcp_flex=0.62, index_pip=1.0)
    q = project_coupling(curl(0.2, 0.25, digits=[Digit.MIDDLE, Digit.RING, Digit.PINKY]).replace(
        {j: q[j] for j in q if j.digit in (Digit.THUMB, Digit.INDEX)}))
    q = thumb_to(q, tips(q)[Digit.INDEX])
    add("Inferior Pincer", GraspCategory.PRECISION, q,
        [opposition(Digit.THUMB, [Digit.INDEX], 0.005)])

    q = graded_curl([Digit.INDEX],
                    base=curl(1.05, 1.35, digits=[Digit.MIDDLE, Digit.RING, Digit.PINKY]))
    q = thumb_to(q, tips(q)[Digit.INDEX])
    add("Tip Pinch", GraspCategory.PRECISION, q,
        [opposition(Digit.THUMB, [Digit.INDEX], 0.005)])

    return presets


def main():
    presets = build_presets()
    assert len(presets) == 33, f"authored {len(presets)} presets"
    doc = {"schema": "grasp-presets/1", "presets": []}
    failures = []
    for name, category, q, predicates in presets:
        clamped, saturated = SPEC.clamp_to_limits(q)
        if saturated:
            q = project_coupling(clamped)
        angles = {jid.name: round(value, 6) for jid, value in q.items()}
        q_round = JointAngles({JointId.parse(k): v for k, v in angles.items()})
        for node in predicates:
            result = evaluate_predicate(SPEC, q_round, node)
            status = "ok" if result.passed else "FAIL"
            if not result.passed:
                failures.append((name, result))
            print(f"[{status}] {name}: {result.description} (residual {result.residual * 1000:+.2f} mm)")
        doc["presets"].append({
            "name": name,
            "category": category.value,
            "angles": angles,
            "predicates": predicates,
        })
    if failures:
        print(f"\n{len(failures)} predicate failures; file not written")
        sys.exit(1)
    OUT.write_text(yaml.safe_dump(doc, sort_keys=False, width=100), encoding="utf-8")
    print(f"\nwrote {OUT} with {len(doc['presets'])} presets")


if __name__ == "__main__":
    main()
