// Forward kinematics mirroring the service's chain, driven entirely by the
// /spec document, so the rendered skeleton is the FK of the displayed
// angles (never cached geometry).

import { DigitInfo, SpecDoc } from "./types.js";

type Vec3 = [number, number, number];
type Mat3 = number[][];

interface Frame {
  r: Mat3;
  p: Vec3;
}

const IDENTITY: Mat3 = [
  [1, 0, 0],
  [0, 1, 0],
  [0, 0, 1],
];

function matMul(a: Mat3, b: Mat3): Mat3 {
  const out: Mat3 = [
    [0, 0, 0],
    [0, 0, 0],
    [0, 0, 0],
  ];
  for (let i = 0; i < 3; i++)
    for (let j = 0; j < 3; j++)
      out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
  return out;
}

function matVec(a: Mat3, v: Vec3): Vec3 {
  return [
    a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
    a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
    a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
  ];
}

function compose(a: Frame, b: Frame): Frame {
  const p = matVec(a.r, b.p);
  return { r: matMul(a.r, b.r), p: [a.p[0] + p[0], a.p[1] + p[1], a.p[2] + p[2]] };
}

function rotX(theta: number): Mat3 {
  const c = Math.cos(theta);
  const s = Math.sin(theta);
  return [
    [1, 0, 0],
    [0, c, -s],
    [0, s, c],
  ];
}

function rotY(theta: number): Mat3 {
  const c = Math.cos(theta);
  const s = Math.sin(theta);
  return [
    [c, 0, s],
    [0, 1, 0],
    [-s, 0, c],
  ];
}

function transZ(z: number): Frame {
  return { r: IDENTITY, p: [0, 0, z] };
}

// Two equal circles rolling without slipping: distal center at
// 2r*(sin(t/2), cos(t/2)) in the joint plane (u -> +y, v -> +z),
// orientation flexed about -x by t.
function rollingTransform(theta: number, radius: number): Frame {
  const h = theta / 2;
  return {
    r: rotX(-theta),
    p: [0, 2 * radius * Math.sin(h), 2 * radius * Math.cos(h)],
  };
}

export interface DigitSkeleton {
  digit: string;
  // base, knuckle, mid joint, distal joint, fingertip (world, meters)
  points: Vec3[];
}

export function digitSkeleton(
  spec: SpecDoc,
  digit: DigitInfo,
  angles: Record<string, number>,
): DigitSkeleton {
  const joint = (slot: string) =>
    spec.joints.find((j) => j.digit === digit.name && j.slot === slot);
  const angle = (slot: string) => {
    const info = joint(slot);
    return info ? angles[info.name] ?? 0 : 0;
  };

  let frame: Frame = { r: digit.base_rotation as Mat3, p: [...digit.base_origin] as Vec3 };
  const points: Vec3[] = [[...frame.p]];

  frame = compose(frame, transZ(digit.links.metacarpal));
  points.push([...frame.p]);

  frame = compose(frame, { r: rotY(angle("mcp_abd")), p: [0, 0, 0] });
  frame = compose(frame, { r: rotX(-angle("mcp_flex")), p: [0, 0, 0] });

  for (const [slot, link] of [
    ["pip", "proximal"],
    ["dip", "middle"],
  ] as const) {
    const info = joint(slot);
    const r = info?.rolling_radius ?? 0;
    if (info && info.kind === "rolling" && r) {
      frame = compose(frame, transZ(digit.links[link] - 2 * r));
      frame = compose(frame, rollingTransform(angle(slot), r));
    } else {
      frame = compose(frame, transZ(digit.links[link]));
      frame = compose(frame, { r: rotX(-angle(slot)), p: [0, 0, 0] });
    }
    points.push([...frame.p]);
  }

  frame = compose(frame, transZ(digit.links.distal));
  points.push([...frame.p]);
  return { digit: digit.name, points };
}

export function handSkeleton(
  spec: SpecDoc,
  angles: Record<string, number>,
): DigitSkeleton[] {
  return spec.digits.map((d) => digitSkeleton(spec, d, angles));
}
