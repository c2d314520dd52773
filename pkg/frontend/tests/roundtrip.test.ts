// Integration against the real service: spawns `tendonhand sim`, talks to
// it over the actual websocket endpoints, and checks the acceptance-level
// behavior (grasp round-trip, live stream handling, disconnect detection).

import { ChildProcess, spawn } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { GraspInfo, SpecDoc, StateMessage } from "../src/types.js";
import { ConsoleViewModel } from "../src/viewmodel.js";

const PORT = 8720 + (process.pid % 200);
const API = `127.0.0.1:${PORT}`;

let server: ChildProcess;
let spec: SpecDoc;
let grasps: GraspInfo[];

async function waitForServer(timeoutMs = 20000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const res = await fetch(`http://${API}/spec`);
      if (res.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error("service did not come up");
}

function connect(path: string): Promise<WebSocket> {
  return new Promise((resolve, reject) => {
    const socket = new WebSocket(`ws://${API}${path}`);
    socket.once("open", () => resolve(socket));
    socket.once("error", reject);
  });
}

beforeAll(async () => {
  server = spawn("tendonhand", ["sim", "--bind", API], { stdio: "ignore" });
  await waitForServer();
  spec = (await (await fetch(`http://${API}/spec`)).json()) as SpecDoc;
  grasps = (await (await fetch(`http://${API}/grasps`)).json()) as GraspInfo[];
}, 30000);

afterAll(() => {
  server?.kill();
});

describe("service round-trip", () => {
  it("serves the spec and the full grasp roster", () => {
    expect(spec.joints).toHaveLength(20);
    expect(spec.actuator_order).toHaveLength(15);
    expect(grasps).toHaveLength(33);
  });

  it("grasp command round-trips to an echoed pose within 1e-3 rad", async () => {
    const command = await connect("/command");
    const state = await connect("/state");
    const grasp = grasps.find((g) => g.name === "Writing Tripod")!;

    const ack = await new Promise<Record<string, unknown>>((resolve) => {
      command.once("message", (data) => resolve(JSON.parse(String(data))));
      command.send(JSON.stringify({ kind: "grasp", name: grasp.name }));
    });
    expect(ack.ok).toBe(true);

    // wait for the echoed pose to settle onto the preset
    const active = spec.actuator_order;
    const settled = await new Promise<StateMessage>((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error("did not settle")), 15000);
      state.on("message", (data) => {
        const message = JSON.parse(String(data)) as StateMessage;
        let worst = 0;
        for (const joint of active) {
          worst = Math.max(worst, Math.abs(message.joints[joint] - grasp.angles[joint]));
        }
        if (worst < 1e-3) {
          clearTimeout(timer);
          resolve(message);
        }
      });
    });
    expect(settled.flags.fault).toBe(false);
    command.close();
    state.close();
  }, 20000);

  it("rejects unknown grasps with the roster", async () => {
    const command = await connect("/command");
    const ack = await new Promise<Record<string, unknown>>((resolve) => {
      command.once("message", (data) => resolve(JSON.parse(String(data))));
      command.send(JSON.stringify({ kind: "grasp", name: "Nope Grip" }));
    });
    expect(ack.ok).toBe(false);
    expect((ack.valid_names as string[]).length).toBe(33);
    command.close();
  });

  it("handles the 30 Hz stream at >= 20 Hz with bounded backlog", async () => {
    const vm = new ConsoleViewModel(() => Date.now());
    vm.setSpec(spec);
    const state = await connect("/state");
    state.on("message", (data) => vm.ingestState(String(data)));

    const drains: number[] = [];
    const start = Date.now();
    while (Date.now() - start < 2000) {
      await new Promise((r) => setTimeout(r, 50)); // ~20 Hz render loop
      if (vm.drainLatest()) drains.push(Date.now());
      expect(vm.backlog).toBeLessThanOrEqual(8);
    }
    state.close();
    // rendered at >= 20 Hz equivalent: nearly every 50 ms drain had a frame
    expect(drains.length).toBeGreaterThanOrEqual(35);
    expect(vm.framesProcessed).toBe(drains.length);
  }, 15000);

  it("detects a killed server within 2 seconds", async () => {
    const state = await connect("/state");
    let closedAt: number | null = null;
    state.on("close", () => {
      closedAt = Date.now();
    });
    const killedAt = Date.now();
    server.kill("SIGKILL");
    await new Promise((r) => setTimeout(r, 2200));
    expect(closedAt).not.toBeNull();
    expect((closedAt as unknown as number) - killedAt).toBeLessThan(2000);
  }, 10000);
});
