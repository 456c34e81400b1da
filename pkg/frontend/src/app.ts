/**
 * Browser shell for the operator console.
 *
 * Wires the websocket, pedal button, wrist/finger sliders, trace transport,
 * and the camera switcher to the pure rendering/view modules. All robot
 * state lives on the server; this file only sends protocol messages and
 * draws the latest snapshot.
 */

import { Transform, identity, quatFromEuler, rotationAngle, transformFromJson } from "./math.js";
import { RobotModel, forwardKinematics, linkCapsulesWorld, parseModel } from "./model.js";
import {
  GLOVE_CHANNELS,
  StateMessage,
  inputMessage,
  parseServerMessage,
  pedalMessage,
  viewMessage,
} from "./protocol.js";
import { Camera, PHANTOM_STYLE, ROBOT_STYLE, composite, renderLayer } from "./render.js";
import { ViewState, acceptSnapshot, deriveFloatingPose, initialView, pedalBusy, phantomVisible, switchCamera } from "./view.js";

const FK_HANDSHAKE_TOL = 1e-6;

interface SceneInfo {
  rate_hz: number;
  cameras: { name: string; pose_source: string; intrinsics: { fx: number; fy: number; cx: number; cy: number } }[];
  frames: Record<string, { quat: number[]; pos: number[] }>;
  trace_frames: number;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function handshake(model: RobotModel): Promise<string> {
  const doc = await (await fetch("/handshake")).json();
  const frames = forwardKinematics(model, doc.probe_q);
  let worstPos = 0;
  let worstRot = 0;
  doc.frames.forEach((got: { quat: number[]; pos: number[] }, i: number) => {
    const server = transformFromJson(got);
    worstPos = Math.max(
      worstPos,
      Math.hypot(
        server.pos[0] - frames[i].pos[0],
        server.pos[1] - frames[i].pos[1],
        server.pos[2] - frames[i].pos[2],
      ),
    );
    worstRot = Math.max(worstRot, rotationAngle(server.quat, frames[i].quat));
  });
  if (worstPos > FK_HANDSHAKE_TOL || worstRot > FK_HANDSHAKE_TOL) {
    throw new Error(`client FK drifts from server: pos ${worstPos}, rot ${worstRot}`);
  }
  return `FK handshake ok (pos ${worstPos.toExponential(1)}, rot ${worstRot.toExponential(1)})`;
}

function cameraFor(view: ViewState, scene: SceneInfo, floatingPose: Transform): Camera {
  if (view.activeCamera === "top_down") {
    return { kind: "ortho", center: [0.35, 0], scale: 420 };
  }
  const name = view.activeCamera === "floating" ? "third" : "top";
  const info = scene.cameras.find((c) => (view.activeCamera === "floating" ? c.pose_source === "floating" : c.pose_source === "fixed"));
  const intr = info?.intrinsics ?? { fx: 420, fy: 420, cx: 320, cy: 240 };
  const pose =
    view.activeCamera === "floating"
      ? floatingPose
      : transformFromJson(scene.frames[info?.name ?? name] ?? { quat: [1, 0, 0, 0], pos: [0, 0, 1.2] });
  return { kind: "pinhole", pose, fx: intr.fx, fy: intr.fy, cx: intr.cx, cy: intr.cy };
}

export async function main() {
  const status = el<HTMLDivElement>("status");
  const canvas = el<HTMLCanvasElement>("scene");
  const ctx = canvas.getContext("2d")!;

  const model = parseModel(await (await fetch("/model")).json());
  const scene: SceneInfo = await (await fetch("/scene")).json();
  try {
    status.textContent = await handshake(model);
  } catch (err) {
    status.textContent = String(err);
    status.classList.add("error");
    return;
  }

  let view = initialView();
  let floatingPose: Transform = scene.frames["third"]
    ? transformFromJson(scene.frames["third"])
    : identity();

  const ws = new WebSocket(`ws://${location.host}/ws`);
  ws.onmessage = (ev) => {
    const msg = parseServerMessage(ev.data);
    if (msg.type === "error") {
      status.textContent = `server: ${msg.code} ${msg.msg}`;
      return;
    }
    view = acceptSnapshot(view, msg);
    draw();
  };
  ws.onclose = () => {
    view = { ...view, connection: "lost" };
    status.textContent = "connection lost; reconnect to resume";
    status.classList.add("error");
  };

  // -- pedal -----------------------------------------------------------
  const pedalBtn = el<HTMLButtonElement>("pedal");
  const sendPedal = (state: "down" | "up") => {
    if (ws.readyState === WebSocket.OPEN) ws.send(pedalMessage(state));
  };
  pedalBtn.addEventListener("mousedown", () => sendPedal("down"));
  pedalBtn.addEventListener("mouseup", () => sendPedal("up"));
  pedalBtn.addEventListener("mouseleave", () => sendPedal("up"));
  let spaceHeld = false;
  window.addEventListener("keydown", (e) => {
    if (e.code === "Space" && !spaceHeld) {
      spaceHeld = true;
      sendPedal("down");
      e.preventDefault();
    }
  });
  window.addEventListener("keyup", (e) => {
    if (e.code === "Space") {
      spaceHeld = false;
      sendPedal("up");
    }
  });

  // -- input panel ------------------------------------------------------
  const glove = new Array<number>(GLOVE_CHANNELS).fill(0);
  const wristSliders = ["wx", "wy", "wz", "yaw", "pitch", "roll"].map((id) => el<HTMLInputElement>(id));
  const fingerBox = el<HTMLDivElement>("fingers");
  const fingerNames = ["thumb", "index", "middle", "ring", "pinky"];
  const channelNames = ["mcp", "pip", "dip", "abd"];
  fingerNames.forEach((finger, f) => {
    channelNames.forEach((ch, c) => {
      const wrap = document.createElement("label");
      wrap.textContent = `${finger} ${ch}`;
      const slider = document.createElement("input");
      slider.type = "range";
      slider.min = ch === "abd" ? "-0.5" : "-0.3";
      slider.max = ch === "abd" ? "0.5" : "2.3";
      slider.step = "0.01";
      slider.value = "0";
      slider.addEventListener("input", () => {
        glove[4 * f + c] = Number(slider.value);
      });
      wrap.appendChild(slider);
      fingerBox.appendChild(wrap);
    });
  });

  let t = 0;
  const dt = 1 / (scene.rate_hz || 60);
  setInterval(() => {
    if (ws.readyState !== WebSocket.OPEN) return;
    t += dt;
    const [wx, wy, wz, yaw, pitch, roll] = wristSliders.map((s) => Number(s.value));
    const quat = quatFromEuler(yaw, pitch, roll);
    ws.send(inputMessage(t, { quat: [...quat], pos: [wx, wy, wz] }, glove));
  }, 1000 * dt);

  // -- transport --------------------------------------------------------
  const post = (body: object) =>
    fetch("/transport", { method: "POST", headers: { "content-type": "application/json" }, body: JSON.stringify(body) });
  el<HTMLButtonElement>("play").addEventListener("click", () => post({ action: "play" }));
  el<HTMLButtonElement>("pause").addEventListener("click", () => post({ action: "pause" }));
  el<HTMLInputElement>("seek").addEventListener("change", (e) =>
    post({ action: "seek", t: Number((e.target as HTMLInputElement).value) }));

  // -- view switching ---------------------------------------------------
  for (const name of ["third_person", "top_down", "floating"] as const) {
    el<HTMLButtonElement>(`cam-${name}`).addEventListener("click", () => {
      view = switchCamera(view, name);
      ws.send(viewMessage(name));
      draw();
    });
  }
  canvas.addEventListener("mousemove", (e) => {
    if (view.activeCamera !== "floating" || !(e.buttons & 1) || !view.snapshot) return;
    // orbit the floating camera and re-derive its pose through the tag chain
    const yaw = (e.offsetX / canvas.width - 0.5) * Math.PI * 2;
    const radius = 1.4;
    const proposed: Transform = {
      quat: quatFromEuler(yaw + Math.PI, 0.5, 0),
      pos: [0.4 + radius * Math.cos(yaw), radius * Math.sin(yaw), 0.7],
    };
    floatingPose = deriveFloatingPose(view.snapshot, proposed);
    el<HTMLDivElement>("float-pose").textContent =
      `floating camera: pos [${floatingPose.pos.map((v) => v.toFixed(2)).join(", ")}]`;
    draw();
  });

  // -- drawing ----------------------------------------------------------
  function draw() {
    const snap = view.snapshot;
    if (!snap) return;
    const cam = cameraFor(view, scene, floatingPose);
    const robotCaps = linkCapsulesWorld(model, forwardKinematics(model, snap.robot_q));
    const robot = renderLayer(robotCaps, cam, canvas.width, canvas.height, ROBOT_STYLE, snap.collision);
    let frame = robot;
    if (phantomVisible(view)) {
      const phantomCaps = linkCapsulesWorld(model, forwardKinematics(model, snap.phantom_q));
      const phantom = renderLayer(phantomCaps, cam, canvas.width, canvas.height, PHANTOM_STYLE);
      frame = composite(robot, phantom, view.overlayAlpha);
    }
    ctx.fillStyle = "#181c20";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    const img = ctx.createImageData(frame.width, frame.height);
    img.data.set(frame.data);
    ctx.putImageData(img, 0, 0);

    pedalBtn.disabled = pedalBusy(view);
    pedalBtn.textContent = pedalBusy(view) ? "executing..." : "hold to preview";
    el<HTMLDivElement>("fsm").textContent =
      `${snap.fsm} | seq ${snap.seq} | gate ${snap.gate ? "on" : "off"}` +
      (snap.error ? ` | ${snap.error}` : "");

    // frame-graph inspector: every base-rooted frame in the latest snapshot
    const rows = Object.entries(snap.frames)
      .map(([name, tf]) => `${name}: [${tf.pos.map((v) => v.toFixed(3)).join(", ")}]`)
      .sort();
    el<HTMLDivElement>("frame-graph").textContent = rows.join("\n");
  }

  el<HTMLInputElement>("alpha").addEventListener("input", (e) => {
    view = { ...view, overlayAlpha: Number((e.target as HTMLInputElement).value) };
    draw();
  });
}

main().catch((err) => {
  const status = document.getElementById("status");
  if (status) status.textContent = String(err);
});
