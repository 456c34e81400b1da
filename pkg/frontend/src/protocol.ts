/**
 * Wire protocol frames exchanged with the session endpoint.
 *
 * client -> server: input, pedal, view
 * server -> client: state, error
 */

export interface StateMessage {
  type: "state";
  seq: number;
  fsm: "LIVE" | "PREVIEW" | "EXECUTING";
  t: number;
  robot_q: number[];
  phantom_q: number[];
  frames: Record<string, { quat: number[]; pos: number[] }>;
  gate: boolean;
  collision: boolean[];
  pedal?: string;
  error?: string | null;
  camera?: string | null;
}

export interface ErrorMessage {
  type: "error";
  code: string;
  msg: string;
}

export type ServerMessage = StateMessage | ErrorMessage;

export function parseServerMessage(raw: string): ServerMessage {
  const doc = JSON.parse(raw);
  if (doc.type === "state") {
    if (typeof doc.seq !== "number" || !Array.isArray(doc.robot_q) || !Array.isArray(doc.phantom_q)) {
      throw new Error("malformed state message");
    }
    return doc as StateMessage;
  }
  if (doc.type === "error") {
    if (typeof doc.code !== "string") throw new Error("malformed error message");
    return doc as ErrorMessage;
  }
  throw new Error(`unknown message type '${doc.type}'`);
}

export function inputMessage(t: number, wrist: { quat: number[]; pos: number[] }, glove: number[]): string {
  return JSON.stringify({ type: "input", t, wrist, glove });
}

export function pedalMessage(state: "down" | "up"): string {
  return JSON.stringify({ type: "pedal", state });
}

export function viewMessage(camera: string): string {
  return JSON.stringify({ type: "view", camera });
}

export const GLOVE_CHANNELS = 27;
