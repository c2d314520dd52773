// Wire schemas served by the hand service (see docs/formats.md).

export interface JointInfo {
  name: string;
  digit: string;
  slot: string;
  active: boolean;
  kind: string;
  limits: [number, number];
  rolling_radius: number | null;
}

export interface DigitInfo {
  name: string;
  links: Record<string, number>;
  base_origin: [number, number, number];
  base_rotation: number[][];
}

export interface SpecDoc {
  name: string;
  palm_length: number;
  finger_length: number;
  actuator_order: string[];
  joints: JointInfo[];
  digits: DigitInfo[];
}

export interface GraspInfo {
  name: string;
  category: string;
  angles: Record<string, number>;
}

export interface StateMessage {
  schema: string;
  t: number;
  joints: Record<string, number>;
  motor_positions: Record<string, number>;
  motor_currents: Record<string, number>;
  flags: { stale: boolean; saturated: boolean; fault: boolean };
  latency_ms: number;
}

export type CommandMessage =
  | { kind: "joints"; targets: Record<string, number> }
  | { kind: "grasp"; name: string }
  | { kind: "replay"; action: "start" | "stop"; path?: string };

export interface CommandAck {
  ok: boolean;
  error?: string;
  applied?: Record<string, number>;
  valid_names?: string[];
  [key: string]: unknown;
}
