// Console entry point: fetch the spec and grasp roster, wire sliders,
// grasp buttons and replay controls to the command socket, and render
// the skeleton and plots from the state stream.

import { handSkeleton } from "./fk.js";
import { drawSeries, drawSkeleton, SIDE_VIEW, TOP_VIEW } from "./render.js";
import { CommandMessage, GraspInfo, SpecDoc } from "./types.js";
import { ConsoleViewModel, ReconnectingSocket } from "./viewmodel.js";

// Served by the hand service itself (`tendonhand sim --console frontend/`)
// the page talks to its own origin; override with ?api=host:port otherwise.
const params = new URLSearchParams(location.search);
const API = params.get("api") ?? (location.host || "127.0.0.1:8720");

const vm = new ConsoleViewModel();

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setStatus(text: string, cls: string): void {
  const badge = el<HTMLSpanElement>("status");
  badge.textContent = text;
  badge.className = `badge ${cls}`;
}

let commandSocket: ReconnectingSocket | null = null;

function sendCommand(command: CommandMessage): void {
  if (!commandSocket?.send(JSON.stringify(command))) {
    vm.lastError = "not connected";
    return;
  }
  vm.noteCommandSent(command);
}

function buildSliders(spec: SpecDoc): void {
  const host = el<HTMLDivElement>("sliders");
  host.innerHTML = "";
  for (const joint of spec.joints.filter((j) => j.active)) {
    const row = document.createElement("label");
    row.className = "slider-row";
    const name = document.createElement("span");
    name.textContent = joint.name;
    const value = document.createElement("span");
    value.className = "value";
    value.textContent = "0.00";
    const input = document.createElement("input");
    input.type = "range";
    input.min = String(joint.limits[0]);
    input.max = String(joint.limits[1]);
    input.step = "0.01";
    input.value = "0";
    input.dataset.joint = joint.name;
    input.addEventListener("input", () => {
      const clamped = vm.setDraft(joint.name, Number(input.value));
      value.textContent = clamped.toFixed(2);
      sendCommand(vm.draftCommand());
    });
    row.append(name, input, value);
    host.append(row);
  }
}

function syncSliders(targets: Record<string, number>): void {
  for (const input of document.querySelectorAll<HTMLInputElement>("#sliders input")) {
    const joint = input.dataset.joint;
    if (joint && targets[joint] !== undefined) {
      vm.draft[joint] = targets[joint];
      input.value = String(targets[joint]);
      const value = input.parentElement?.querySelector(".value");
      if (value) value.textContent = targets[joint].toFixed(2);
    }
  }
}

function buildGraspButtons(grasps: GraspInfo[]): void {
  const host = el<HTMLDivElement>("grasps");
  host.innerHTML = "";
  for (const grasp of grasps) {
    const button = document.createElement("button");
    button.textContent = grasp.name;
    button.title = grasp.category;
    button.addEventListener("click", () => sendCommand({ kind: "grasp", name: grasp.name }));
    host.append(button);
  }
}

function wireReplayControls(): void {
  el<HTMLButtonElement>("replay-start").addEventListener("click", () => {
    const path = el<HTMLInputElement>("replay-path").value.trim();
    if (path) sendCommand({ kind: "replay", action: "start", path });
  });
  el<HTMLButtonElement>("replay-stop").addEventListener("click", () =>
    sendCommand({ kind: "replay", action: "stop" }),
  );
}

async function start(): Promise<void> {
  const spec = (await (await fetch(`http://${API}/spec`)).json()) as SpecDoc;
  const grasps = (await (await fetch(`http://${API}/grasps`)).json()) as GraspInfo[];
  vm.setSpec(spec);
  buildSliders(spec);
  buildGraspButtons(grasps);
  wireReplayControls();

  const stateSocket = new ReconnectingSocket(
    () => new WebSocket(`ws://${API}/state`) as unknown as import("./viewmodel.js").SocketLike,
  );
  stateSocket.onmessage = (text) => vm.ingestState(text);
  stateSocket.onstatus = (status) => vm.setStatus(status);

  commandSocket = new ReconnectingSocket(
    () => new WebSocket(`ws://${API}/command`) as unknown as import("./viewmodel.js").SocketLike,
  );
  commandSocket.onmessage = (text) => {
    vm.handleAck(text);
    const error = el<HTMLDivElement>("error");
    error.textContent = vm.lastError ?? "";
    if (vm.lastAck?.ok && vm.lastAck.applied) syncSliders(vm.lastAck.applied);
  };

  const topCtx = el<HTMLCanvasElement>("skeleton-top").getContext("2d")!;
  const sideCtx = el<HTMLCanvasElement>("skeleton-side").getContext("2d")!;
  const currentCtx = el<HTMLCanvasElement>("plot-current").getContext("2d")!;
  const errorCtx = el<HTMLCanvasElement>("plot-error").getContext("2d")!;

  const renderLoop = () => {
    vm.drainLatest();
    if (vm.isLive()) {
      setStatus("connected", "ok");
    } else if (vm.status === "connected") {
      setStatus("stalled", "warn");
    } else {
      setStatus(vm.status, "bad");
    }
    if (vm.latest && vm.spec) {
      const skeletons = handSkeleton(vm.spec, vm.latest.joints);
      drawSkeleton(topCtx, skeletons, TOP_VIEW);
      drawSkeleton(sideCtx, skeletons, SIDE_VIEW);
    }
    drawSeries(currentCtx, vm.totalCurrent, "total current (mA)", "#e6a23c");
    drawSeries(errorCtx, vm.trackingError, "tracking error (rad)", "#e57373");
    el<HTMLSpanElement>("stats").textContent =
      `frames ${vm.framesProcessed} | backlog ${vm.backlog} | dropped ${vm.droppedFrames}`;
    requestAnimationFrame(renderLoop);
  };
  requestAnimationFrame(renderLoop);
}

start().catch((err) => {
  setStatus("failed to load spec", "bad");
  el<HTMLDivElement>("error").textContent = String(err);
});
