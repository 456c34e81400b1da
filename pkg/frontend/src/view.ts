/**
 * View state: which camera is active, overlay alpha, connection status, and
 * the latest snapshot. Rendering is stateless over the newest snapshot, so
 * a reconnect recovers the scene from the next state frame; stale or
 * out-of-order snapshots are dropped by sequence number.
 */

import { Transform, compose, invert, transformFromJson } from "./math.js";
import { StateMessage } from "./protocol.js";

export type CameraName = "third_person" | "top_down" | "floating";

export interface ViewState {
  activeCamera: CameraName;
  overlayAlpha: number;
  connection: "connecting" | "connected" | "lost";
  lastSeq: number;
  snapshot: StateMessage | null;
}

export function initialView(): ViewState {
  return {
    activeCamera: "third_person",
    overlayAlpha: 0.5,
    connection: "connecting",
    lastSeq: -1,
    snapshot: null,
  };
}

/** Accept a snapshot only if its sequence number advances. */
export function acceptSnapshot(view: ViewState, msg: StateMessage): ViewState {
  if (msg.seq <= view.lastSeq) return view;
  return { ...view, snapshot: msg, lastSeq: msg.seq, connection: "connected" };
}

/** The phantom is drawn only while previewing (and only with a visible alpha). */
export function phantomVisible(view: ViewState): boolean {
  return view.snapshot?.fsm === "PREVIEW" && view.overlayAlpha > 0;
}

/** Pedal control is disabled while a committed trajectory executes. */
export function pedalBusy(view: ViewState): boolean {
  return view.snapshot?.fsm === "EXECUTING";
}

export function switchCamera(view: ViewState, camera: CameraName): ViewState {
  return { ...view, activeCamera: camera };
}

/**
 * Re-derive a dragged floating camera's pose through the calibration chain:
 * the drag proposes a pose, the tag observation it would produce is
 * simulated, and the chain returns the pose anchored to the robot base.
 */
export function deriveFloatingPose(snapshot: StateMessage, proposed: Transform): Transform {
  const tagDoc = snapshot.frames["tag"];
  if (!tagDoc) return proposed;
  const baseToTag = transformFromJson(tagDoc);
  const observation = compose(invert(proposed), baseToTag); // float_cam sees tag
  return compose(baseToTag, invert(observation));
}
