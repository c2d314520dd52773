"""Hand-spec file loading (versioned YAML; schema documented in docs/formats.md).

The file defines links, joints, limits, rolling radii, tendon routes,
motor bindings, return springs and servo parameters. Compact defaults
sections keep the per-digit and per-route blocks short; explicit values
always win over defaults.
"""

from __future__ import annotations

import math
import os
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from . import transforms as tf
from .hand_model import (
    DIGITS,
    Digit,
    HandSpec,
    JointId,
    JointKind,
    JointSpec,
    LinkSpec,
    Segment,
    Slot,
    THUMB_ALIASES,
)
from .serialization import content_hash
from .tendon import ReturnSpring, RouteFunction, TendonRoute, validate_transmission

SCHEMA = "hand-spec/1"
SPEC_PATH_ENV = "TENDONHAND_SPEC"

_SLOT_FOR_ARM_KEY = {
    "mcp_abd": Slot.MCP_ABD,
    "mcp_flex": Slot.MCP_FLEX,
    "pip": Slot.PIP,
    "dip": Slot.DIP,
}


class HandSpecFileError(Exception):
    pass


def _frame(node: Mapping[str, Any] | None) -> np.ndarray:
    if node is None:
        return tf.identity()
    return tf.from_xyz_rpy(node.get("xyz", (0, 0, 0)), node.get("rpy", (0, 0, 0)))


def _slot_key(digit: Digit, key: str) -> Slot:
    if key in THUMB_ALIASES:
        if digit is not Digit.THUMB:
            raise HandSpecFileError(f"{key!r} limits apply to the thumb only")
        return THUMB_ALIASES[key]
    try:
        return Slot(key)
    except ValueError as exc:
        raise HandSpecFileError(f"unknown joint slot {key!r}") from exc


def hand_spec_from_dict(doc: Mapping[str, Any]) -> HandSpec:
    if doc.get("schema") != SCHEMA:
        raise HandSpecFileError(f"unsupported hand-spec schema {doc.get('schema')!r}, want {SCHEMA}")

    joint_defaults = doc.get("joint_defaults", {})
    default_radius = float(joint_defaults.get("rolling_radius_m", 0.005))
    default_limits = {
        Slot(k): tuple(map(float, v))
        for k, v in joint_defaults.get("limits_rad", {}).items()
    }

    links: list[LinkSpec] = []
    joints: list[JointSpec] = []
    finger_bases: dict[Digit, np.ndarray] = {}
    digit_nodes: dict[Digit, Mapping[str, Any]] = {}

    for node in doc.get("digits", []):
        digit = Digit(node["name"])
        digit_nodes[digit] = node
        if digit is not Digit.THUMB:
            finger_bases[digit] = _frame(node.get("base"))
        for seg_name, length in node["links_m"].items():
            links.append(LinkSpec(digit, Segment(seg_name), float(length)))

        limits = dict(default_limits)
        for key, pair in node.get("limits_rad", {}).items():
            limits[_slot_key(digit, key)] = tuple(map(float, pair))
        radius = float(node.get("rolling_radius_m", default_radius))

        for slot in Slot:
            jid = JointId(digit, slot)
            if slot in (Slot.PIP, Slot.DIP):
                kind, r = JointKind.ROLLING, radius
            else:
                kind, r = JointKind.REVOLUTE, None
            lim = limits.get(Slot.PIP if slot is Slot.DIP else slot)
            if lim is None:
                raise HandSpecFileError(f"no limits for {jid.name}")
            follower = JointId(digit, Slot.PIP) if slot is Slot.DIP else None
            joints.append(JointSpec(jid, kind, lim, rolling_radius=r, follower_of=follower))

    if set(digit_nodes) != set(DIGITS):
        missing = [d.value for d in DIGITS if d not in digit_nodes]
        raise HandSpecFileError(f"missing digits: {missing}")

    route_defaults = doc.get("route_defaults", {})
    default_arms = route_defaults.get("moment_arms_m", {})
    routes = []
    for node in doc.get("routes", []):
        digit = Digit(node["digit"])
        function = RouteFunction(node["function"])
        arm_node = node.get("moment_arms_m", default_arms)
        arms: dict[JointId, float] = {}
        for key, value in arm_node.items():
            slot = _SLOT_FOR_ARM_KEY[key]
            keep = {
                RouteFunction.PIP_DIP_FLEX: (Slot.PIP, Slot.DIP),
                RouteFunction.MCP_FLEX_EXT: (Slot.MCP_FLEX,),
                RouteFunction.MCP_ABD_ADD: (Slot.MCP_ABD,),
            }[function]
            if slot in keep:
                arms[JointId(digit, slot)] = float(value)
        routes.append(
            TendonRoute(
                id=node.get("id", f"{digit.value}_{function.value}"),
                digit=digit,
                function=function,
                moment_arms=arms,
                wrap_angle=float(node.get("wrap_angle_rad", route_defaults.get("wrap_angle_rad", math.pi))),
                friction_mu=float(node.get("friction_mu", route_defaults.get("friction_mu", 0.1))),
                motor=int(node["motor"]),
                spool_radius=float(node.get("spool_radius_m", route_defaults.get("spool_radius_m", 0.005))),
                slack_offset=float(node.get("slack_offset_rad", 0.0)),
            )
        )

    spring_defaults = doc.get("spring_defaults", {})
    springs: dict[Digit, ReturnSpring] = {}
    for node in doc.get("springs", []):
        digit = Digit(node["digit"])
        springs[digit] = ReturnSpring(
            digit=digit,
            stiffness=float(node.get("stiffness_nm_per_rad", spring_defaults.get("stiffness_nm_per_rad", 0.02))),
            rest_angle=float(node.get("rest_angle_rad", 0.0)),
        )

    spec = HandSpec(
        name=str(doc.get("name", "unnamed")),
        version=str(doc.get("schema")),
        links=tuple(links),
        joints=tuple(joints),
        palm_frame=_frame(doc.get("palm_frame")),
        thumb_mount=_frame(doc.get("thumb_mount")),
        finger_bases=finger_bases,
        routes=tuple(routes),
        springs=springs,
        mass=float(doc.get("mass_kg", 0.8)),
        palm_length=float(doc.get("palm_length_m", 0.095)),
        finger_length=float(doc.get("finger_length_m", 0.103)),
        motor_params=dict(doc.get("motors", {})),
    )
    spec.validate()
    validate_transmission(spec)
    return spec


def _default_text() -> str:
    return resources.files("tendonhand.data").joinpath("default_hand.yaml").read_text()


def load_hand_spec(path: str | Path | None = None) -> HandSpec:
    """Load a hand-spec file; falls back to $TENDONHAND_SPEC, then the built-in."""
    if path is None:
        path = os.environ.get(SPEC_PATH_ENV) or None
    if path is None:
        return hand_spec_from_dict(yaml.safe_load(_default_text()))
    with open(path, "r", encoding="utf-8") as fh:
        return hand_spec_from_dict(yaml.safe_load(fh))


@lru_cache(maxsize=1)
def default_hand_spec() -> HandSpec:
    return hand_spec_from_dict(yaml.safe_load(_default_text()))


def hand_spec_document(path: str | Path | None = None) -> dict:
    """Raw spec document (for hashing and the read-only spec endpoint)."""
    if path is None:
        path = os.environ.get(SPEC_PATH_ENV) or None
    text = _default_text() if path is None else Path(path).read_text(encoding="utf-8")
    return yaml.safe_load(text)


def hand_spec_hash(doc: Mapping[str, Any]) -> str:
    return content_hash(doc)


def perturb_link_lengths(doc: Mapping[str, Any], scale: float) -> dict:
    """Copy of a hand-spec document with every link length scaled."""
    out = yaml.safe_load(yaml.safe_dump(dict(doc)))
    for node in out.get("digits", []):
        node["links_m"] = {k: float(v) * scale for k, v in node["links_m"].items()}
    out["finger_length_m"] = float(out.get("finger_length_m", 0.103)) * scale
    out["palm_length_m"] = float(out.get("palm_length_m", 0.095)) * scale
    return out
