"""Named joint-angle presets for the 33 grasp-taxonomy poses.

Every preset is repo-authored data: joint angles built against the default
hand description and validated geometrically through forward kinematics.
Validity predicates make each pose checkable (pinch distances, palm-side
curl, lateral opposition, flat-platform planarity, sphere wraps), and a
perturbed hand spec can re-validate the whole library with relaxed
tolerances.

All angles are in radians, distances in meters. Predicate residuals are
measured-minus-allowed: zero or negative means the predicate holds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from .hand_model import (
    DIGITS,
    Digit,
    HandSpec,
    JointAngles,
    JointId,
    Segment,
    coupling_residual,
    forward_kinematics,
)
from .sim_engine import check_sphere_grasp, fit_sphere

PRESET_SCHEMA = "grasp-presets/1"
PRESET_COUNT = 33
PINCH_TOLERANCE = 0.005
ADDUCTION_GAP = 0.008


class GraspLibraryError(Exception):
    pass


class GraspCategory(str, Enum):
    POWER = "power"
    INTERMEDIATE = "intermediate"
    PRECISION = "precision"


@dataclass(frozen=True)
class PredicateResult:
    description: str
    residual: float

    @property
    def passed(self) -> bool:
        return self.residual <= 0.0


@dataclass(frozen=True)
class ValidationResult:
    preset: str
    results: tuple[PredicateResult, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def worst(self) -> PredicateResult:
        return max(self.results, key=lambda r: r.residual)


def _tips(spec: HandSpec, q: JointAngles) -> dict[Digit, np.ndarray]:
    poses = forward_kinematics(spec, q)
    return {d: poses[d].tip_position for d in DIGITS}


def _segment_endpoints(spec: HandSpec, q: JointAngles, digit: Digit, segment: Segment) -> tuple[np.ndarray, np.ndarray]:
    poses = forward_kinematics(spec, q)
    frames = poses[digit].frames
    order = [Segment.METACARPAL, Segment.PROXIMAL, Segment.MIDDLE, Segment.DISTAL]
    idx = order.index(segment)
    start = frames[segment][:3, 3]
    if idx + 1 < len(order):
        end = frames[order[idx + 1]][:3, 3]
    else:
        end = poses[digit].tip_position
    return start, end


def _point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    t = float(np.clip((p - a) @ ab / max(ab @ ab, 1e-12), 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def _segment_segment_distance(a0, a1, b0, b1, samples: int = 32) -> float:
    ts = np.linspace(0.0, 1.0, samples)
    pts_a = a0[None, :] + ts[:, None] * (a1 - a0)[None, :]
    best = math.inf
    for p in pts_a:
        best = min(best, _point_segment_distance(p, b0, b1))
    return best


def evaluate_predicate(spec: HandSpec, q: JointAngles, node: Mapping, tol_scale: float = 1.0) -> PredicateResult:
    kind = node["kind"]
    tips = _tips(spec, q)

    if kind == "opposition":
        digit = Digit(node["digit"])
        targets = [Digit(t) for t in node["targets"]]
        centroid = np.mean([tips[t] for t in targets], axis=0)
        dist = float(np.linalg.norm(tips[digit] - centroid))
        allowed = node["max_distance"] * tol_scale
        label = f"{digit.value} tip to {'+'.join(t.value for t in targets)} centroid"
        return PredicateResult(f"{label} <= {allowed * 1000:.1f} mm", dist - allowed)

    if kind == "segment_distance":
        digit = Digit(node["digit"])
        other = Digit(node["target"])
        seg = Segment(node["segment"])
        a, b = _segment_endpoints(spec, q, other, seg)
        dist = _point_segment_distance(tips[digit], a, b)
        allowed = node["max_distance"] * tol_scale
        return PredicateResult(
            f"{digit.value} tip to {other.value} {seg.value} <= {allowed * 1000:.1f} mm",
            dist - allowed,
        )

    if kind == "lateral_gap":
        a_digit, b_digit = (Digit(d) for d in node["digits"])
        seg = Segment(node.get("segment", "proximal"))
        a0, a1 = _segment_endpoints(spec, q, a_digit, seg)
        b0, b1 = _segment_endpoints(spec, q, b_digit, seg)
        gap = _segment_segment_distance(a0, a1, b0, b1)
        allowed = node["max_gap"] * tol_scale
        return PredicateResult(
            f"{a_digit.value}/{b_digit.value} {seg.value} gap <= {allowed * 1000:.1f} mm",
            gap - allowed,
        )

    if kind == "halfspace":
        axis = {"x": 0, "y": 1, "z": 2}[node.get("axis", "y")]
        worst = -math.inf
        for d in (Digit(x) for x in node["digits"]):
            value = tips[d][axis]
            if "min" in node:
                worst = max(worst, node["min"] / tol_scale - value)
            if "max" in node:
                worst = max(worst, value - node["max"] * tol_scale)
        bound = node.get("min", node.get("max"))
        return PredicateResult(
            f"{','.join(node['digits'])} tip {node.get('axis', 'y')} vs {bound}", worst)

    if kind == "common_plane":
        digits = [Digit(d) for d in node["digits"]]
        pts = np.array([tips[d] for d in digits])
        centered = pts - pts.mean(axis=0)
        _, _, vt = np.linalg.svd(centered)
        residual = float(np.max(np.abs(centered @ vt[2])))
        allowed = node["tolerance"] * tol_scale
        return PredicateResult(
            f"{'+'.join(d.value for d in digits)} tips coplanar within {allowed * 1000:.1f} mm",
            residual - allowed,
        )

    if kind == "mutual_proximity":
        digits = [Digit(d) for d in node["digits"]]
        worst = -math.inf
        lo = node.get("min_distance", 0.0) / tol_scale
        hi = node["max_distance"] * tol_scale
        for i, a in enumerate(digits):
            for b in digits[i + 1:]:
                dist = float(np.linalg.norm(tips[a] - tips[b]))
                worst = max(worst, dist - hi, lo - dist)
        return PredicateResult(
            f"{'+'.join(d.value for d in digits)} pairwise distance in "
            f"[{lo * 1000:.0f}, {hi * 1000:.0f}] mm", worst)

    if kind == "disk_rim":
        digits = [Digit(d) for d in node["digits"]]
        pts = np.array([tips[d] for d in digits])
        center = pts.mean(axis=0)
        centered = pts - center
        _, _, vt = np.linalg.svd(centered)
        plane_residual = float(np.max(np.abs(centered @ vt[2])))
        plane_tol = node.get("plane_tolerance", 0.008) * tol_scale
        uv = centered @ np.column_stack([vt[0], vt[1]])
        radii = np.linalg.norm(uv, axis=1)
        r_lo, r_hi = node["radius_range"]
        radius_violation = max(float(r_lo / tol_scale - radii.min()),
                               float(radii.max() - r_hi * tol_scale))
        inward = np.arctan2(-uv[:, 1], -uv[:, 0])
        inward.sort()
        gaps = np.diff(inward, append=inward[0] + 2 * math.pi)
        spans = bool(gaps.max() < math.pi)
        residual = max(plane_residual - plane_tol, radius_violation,
                       0.0 if spans else 1e-3)
        return PredicateResult(
            f"{'+'.join(d.value for d in digits)} tips ring a rim "
            f"(r in [{r_lo * 1000:.0f}, {r_hi * 1000:.0f}] mm)", residual)

    if kind == "sphere_fit":
        digits = [Digit(d) for d in node["digits"]]
        pts = [tips[d] for d in digits]
        center, radius = fit_sphere(pts)
        tol = node.get("tolerance", 0.002) * tol_scale
        summary = check_sphere_grasp(
            spec, q, center, radius,
            tolerance=tol, min_contacts=node.get("min_contacts", 3))
        contact_deficit = node.get("min_contacts", 3) - len(
            [d for d in digits if d in summary.contacts])
        r_lo, r_hi = node["radius_range"]
        radius_violation = max(r_lo / tol_scale - radius, radius - r_hi * tol_scale)
        residual = max(float(contact_deficit) * 1e-3,
                       radius_violation,
                       0.0 if summary.spanning else 1e-3)
        if contact_deficit <= 0 and summary.spanning and radius_violation <= 0:
            residual = min(residual, max(abs(summary.distances[d]) for d in digits) - tol)
        return PredicateResult(
            f"{'+'.join(d.value for d in digits)} wrap a sphere "
            f"(r in [{r_lo * 1000:.0f}, {r_hi * 1000:.0f}] mm)", residual)

    raise GraspLibraryError(f"unknown predicate kind {kind!r}")


@dataclass(frozen=True)
class GraspPreset:
    name: str
    category: GraspCategory
    q: JointAngles
    predicates: tuple[dict, ...]

    def __post_init__(self):
        if not self.predicates:
            raise GraspLibraryError(f"{self.name}: every preset needs at least one predicate")


def _default_text() -> str:
    return resources.files("tendonhand.data").joinpath("feix_presets.yaml").read_text()


def load_presets(path: str | Path | None = None, spec: HandSpec | None = None) -> tuple[GraspPreset, ...]:
    """Load all presets; enforces the full 33-grasp roster and pose sanity."""
    text = _default_text() if path is None else Path(path).read_text(encoding="utf-8")
    doc = yaml.safe_load(text)
    if doc.get("schema") != PRESET_SCHEMA:
        raise GraspLibraryError(f"unsupported preset schema {doc.get('schema')!r}")
    presets = []
    seen = set()
    for node in doc.get("presets", []):
        name = node["name"]
        if name in seen:
            raise GraspLibraryError(f"duplicate preset name {name!r}")
        seen.add(name)
        angles = {JointId.parse(k): float(v) for k, v in node["angles"].items()}
        q = JointAngles(angles)
        if coupling_residual(q) > 1e-9:
            raise GraspLibraryError(f"{name}: coupled joints disagree")
        presets.append(GraspPreset(
            name=name,
            category=GraspCategory(node["category"]),
            q=q,
            predicates=tuple(dict(p) for p in node["predicates"]),
        ))
    if len(presets) != PRESET_COUNT:
        raise GraspLibraryError(
            f"expected {PRESET_COUNT} presets, found {len(presets)}: "
            f"{sorted(seen)}")
    if spec is not None:
        for preset in presets:
            spec.check_limits(preset.q)
    return tuple(presets)


def preset_by_name(name: str, path: str | Path | None = None) -> GraspPreset:
    for preset in load_presets(path):
        if preset.name == name:
            return preset
    raise KeyError(name)


def validate_preset(spec: HandSpec, preset: GraspPreset, tol_scale: float = 1.0) -> ValidationResult:
    """Evaluate every predicate through forward kinematics."""
    spec.check_limits(preset.q)
    results = tuple(
        evaluate_predicate(spec, preset.q, node, tol_scale) for node in preset.predicates
    )
    return ValidationResult(preset.name, results)


def validate_all(spec: HandSpec, presets: Sequence[GraspPreset] | None = None,
                 tol_scale: float = 1.0) -> dict[str, ValidationResult]:
    presets = presets if presets is not None else load_presets()
    return {p.name: validate_preset(spec, p, tol_scale) for p in presets}
