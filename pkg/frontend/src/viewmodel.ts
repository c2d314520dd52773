// Console state: socket lifecycle with backoff, inbound message buffering
// decoupled from rendering, command drafts clamped to the served limits,
// and the plot series. No DOM access here, so it all runs under vitest.

import { PlotSeries, RingBuffer } from "./ringbuffer.js";
import { CommandAck, CommandMessage, SpecDoc, StateMessage } from "./types.js";

export type ConnectionStatus = "connecting" | "connected" | "disconnected";

export interface SocketLike {
  send(text: string): void;
  close(): void;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
  onmessage: ((event: { data: string }) => void) | null;
}

export interface Timers {
  setTimeout(fn: () => void, ms: number): unknown;
  clearTimeout(handle: unknown): void;
}

const DEFAULT_TIMERS: Timers = {
  setTimeout: (fn, ms) => setTimeout(fn, ms),
  clearTimeout: (h) => clearTimeout(h as Parameters<typeof clearTimeout>[0]),
};

export class ReconnectingSocket {
  status: ConnectionStatus = "connecting";
  attempts = 0;
  onstatus: ((status: ConnectionStatus) => void) | null = null;
  onmessage: ((text: string) => void) | null = null;

  private socket: SocketLike | null = null;
  private pending: unknown = null;
  private closed = false;

  constructor(
    private factory: () => SocketLike,
    private baseMs = 250,
    private maxMs = 5000,
    private timers: Timers = DEFAULT_TIMERS,
  ) {
    this.open();
  }

  private setStatus(status: ConnectionStatus): void {
    if (this.status !== status) {
      this.status = status;
      this.onstatus?.(status);
    }
  }

  private open(): void {
    if (this.closed) return;
    this.setStatus(this.attempts === 0 ? "connecting" : this.status);
    const socket = this.factory();
    this.socket = socket;
    socket.onopen = () => {
      this.attempts = 0;
      this.setStatus("connected");
    };
    socket.onmessage = (event) => this.onmessage?.(event.data);
    socket.onclose = () => {
      this.socket = null;
      this.setStatus("disconnected");
      const delay = Math.min(this.baseMs * 2 ** this.attempts, this.maxMs);
      this.attempts++;
      this.pending = this.timers.setTimeout(() => this.open(), delay);
    };
  }

  send(text: string): boolean {
    if (this.status !== "connected" || !this.socket) return false;
    this.socket.send(text);
    return true;
  }

  close(): void {
    this.closed = true;
    if (this.pending) this.timers.clearTimeout(this.pending);
    this.socket?.close();
  }
}

export interface ViewModelOptions {
  plotWindowS?: number;
  inboundCapacity?: number;
  aliveTimeoutMs?: number;
}

export class ConsoleViewModel {
  spec: SpecDoc | null = null;
  latest: StateMessage | null = null;
  draft: Record<string, number> = {};
  lastAck: CommandAck | null = null;
  lastError: string | null = null;
  status: ConnectionStatus = "connecting";
  framesProcessed = 0;

  readonly totalCurrent: PlotSeries;
  readonly trackingError: PlotSeries;

  private inbound: RingBuffer<StateMessage>;
  private lastMessageAt: number | null = null;
  private lastCommandedTargets: Record<string, number> | null = null;
  private aliveTimeoutMs: number;

  constructor(private clock: () => number = () => Date.now(), options: ViewModelOptions = {}) {
    this.totalCurrent = new PlotSeries(options.plotWindowS ?? 30);
    this.trackingError = new PlotSeries(options.plotWindowS ?? 30);
    this.inbound = new RingBuffer<StateMessage>(options.inboundCapacity ?? 8);
    this.aliveTimeoutMs = options.aliveTimeoutMs ?? 2000;
  }

  setSpec(spec: SpecDoc): void {
    this.spec = spec;
    for (const joint of spec.joints) {
      if (joint.active) this.draft[joint.name] = 0;
    }
  }

  limitsFor(joint: string): [number, number] {
    const info = this.spec?.joints.find((j) => j.name === joint);
    if (!info) throw new Error(`unknown joint ${joint}`);
    return info.limits;
  }

  // Slider edits land here; the draft can never leave the served limits.
  setDraft(joint: string, value: number): number {
    const [lo, hi] = this.limitsFor(joint);
    const clamped = Math.min(Math.max(value, lo), hi);
    this.draft[joint] = clamped;
    return clamped;
  }

  draftCommand(): CommandMessage {
    return { kind: "joints", targets: { ...this.draft } };
  }

  // Socket reader path: parse and buffer only. Rendering drains separately,
  // so a slow canvas never blocks this.
  ingestState(text: string): void {
    const message = JSON.parse(text) as StateMessage;
    this.inbound.push(message);
    this.lastMessageAt = this.clock();
  }

  get backlog(): number {
    return this.inbound.length;
  }

  get droppedFrames(): number {
    return this.inbound.dropped;
  }

  // Render-loop path: take the newest buffered state, update plots.
  drainLatest(): StateMessage | null {
    const message = this.inbound.takeNewest();
    if (!message) return null;
    this.latest = message;
    this.framesProcessed++;
    let current = 0;
    for (const value of Object.values(message.motor_currents)) current += Math.abs(value);
    this.totalCurrent.push(message.t, current);
    if (this.lastCommandedTargets) {
      let worst = 0;
      for (const [joint, target] of Object.entries(this.lastCommandedTargets)) {
        const achieved = message.joints[joint];
        if (achieved !== undefined) worst = Math.max(worst, Math.abs(achieved - target));
      }
      this.trackingError.push(message.t, worst);
    }
    return message;
  }

  noteCommandSent(command: CommandMessage): void {
    if (command.kind === "joints") {
      this.lastCommandedTargets = { ...command.targets };
    }
  }

  handleAck(text: string): void {
    const ack = JSON.parse(text) as CommandAck;
    this.lastAck = ack;
    if (!ack.ok) {
      // rejected command: surface the reason, keep the draft untouched
      this.lastError = ack.error ?? "command rejected";
    } else {
      this.lastError = null;
      if (ack.applied) this.lastCommandedTargets = { ...ack.applied };
    }
  }

  setStatus(status: ConnectionStatus): void {
    this.status = status;
  }

  // Liveness: disconnected when the socket dropped or the stream went
  // silent for longer than the alive window.
  isLive(now?: number): boolean {
    if (this.status !== "connected") return false;
    if (this.lastMessageAt === null) return false;
    return (now ?? this.clock()) - this.lastMessageAt < this.aliveTimeoutMs;
  }
}
