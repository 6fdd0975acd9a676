/**
 * Teleop wire protocol: the message shapes exchanged with the harness
 * websocket, plus parsing of inbound text and builders for every message
 * this panel is allowed to originate.  Mirrors schema/teleop_wire.schema.json.
 */

export type Vec2 = [number, number];

export interface Limits {
  theta_lo: Vec2;
  theta_hi: Vec2;
  k_lo: number;
  k_hi: number;
}

export interface ArmGeometry {
  base: Vec2;
  link_lengths: Vec2;
}

export interface CameraGeometry {
  center: Vec2;
  pitch: number;
  width: number;
  height: number;
}

export interface HelloMsg {
  type: "hello";
  schema_version: number;
  dt: number;
  limits: Limits;
  arm?: ArmGeometry;
  camera?: CameraGeometry;
}

export interface StateMsg {
  type: "state";
  t: number;
  theta: Vec2;
  cloth: Vec2[];
  frame?: string;
}

export interface RecordAckMsg {
  type: "record_ack";
  action: "start" | "stop";
  episode: string | null;
  steps: number;
  flagged: boolean;
}

export interface ErrorMsg {
  type: "error";
  msg: string;
}

export type ServerMsg = HelloMsg | StateMsg | RecordAckMsg | ErrorMsg;

export interface Material {
  c_damp: number;
  c_mass: number;
}

export interface CommandMsg {
  type: "command";
  theta_ref: Vec2;
  k_ref: number;
}

export interface RecordMsg {
  type: "record";
  action: "start" | "stop";
  material?: Material;
}

export type ClientMsg = CommandMsg | RecordMsg;

function isFiniteNumber(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

function isVec2(v: unknown): v is Vec2 {
  return Array.isArray(v) && v.length === 2 && v.every(isFiniteNumber);
}

function isLimits(v: unknown): v is Limits {
  if (typeof v !== "object" || v === null) return false;
  const o = v as Record<string, unknown>;
  return isVec2(o.theta_lo) && isVec2(o.theta_hi)
    && isFiniteNumber(o.k_lo) && isFiniteNumber(o.k_hi);
}

function isArm(v: unknown): v is ArmGeometry {
  if (typeof v !== "object" || v === null) return false;
  const o = v as Record<string, unknown>;
  return isVec2(o.base) && isVec2(o.link_lengths);
}

function isCamera(v: unknown): v is CameraGeometry {
  if (typeof v !== "object" || v === null) return false;
  const o = v as Record<string, unknown>;
  return isVec2(o.center) && isFiniteNumber(o.pitch) && o.pitch > 0
    && Number.isInteger(o.width) && Number.isInteger(o.height);
}

/**
 * Parse one inbound websocket message.  Returns null for anything that is
 * not a well-formed server message; the caller treats that as noise rather
 * than tearing the session down.
 */
export function parseServerMessage(text: string): ServerMsg | null {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof raw !== "object" || raw === null) return null;
  const msg = raw as Record<string, unknown>;
  switch (msg.type) {
    case "hello": {
      if (!Number.isInteger(msg.schema_version) || !isFiniteNumber(msg.dt)
        || !isLimits(msg.limits)) return null;
      const hello: HelloMsg = {
        type: "hello",
        schema_version: msg.schema_version as number,
        dt: msg.dt,
        limits: msg.limits,
      };
      if (isArm(msg.arm)) hello.arm = msg.arm;
      if (isCamera(msg.camera)) hello.camera = msg.camera;
      return hello;
    }
    case "state": {
      if (!isFiniteNumber(msg.t) || !isVec2(msg.theta)
        || !Array.isArray(msg.cloth) || !msg.cloth.every(isVec2)) return null;
      const state: StateMsg = {
        type: "state", t: msg.t, theta: msg.theta, cloth: msg.cloth,
      };
      if (typeof msg.frame === "string") state.frame = msg.frame;
      return state;
    }
    case "record_ack": {
      if ((msg.action !== "start" && msg.action !== "stop")
        || (msg.episode !== null && typeof msg.episode !== "string")
        || !Number.isInteger(msg.steps)
        || typeof msg.flagged !== "boolean") return null;
      return {
        type: "record_ack", action: msg.action,
        episode: msg.episode as string | null,
        steps: msg.steps as number, flagged: msg.flagged,
      };
    }
    case "error":
      return typeof msg.msg === "string" ? { type: "error", msg: msg.msg } : null;
    default:
      return null;
  }
}

export function clamp(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}

/** Build a command message with every value clamped to the advertised limits. */
export function commandMessage(limits: Limits, thetaRef: Vec2, kRef: number): CommandMsg {
  return {
    type: "command",
    theta_ref: [
      clamp(thetaRef[0], limits.theta_lo[0], limits.theta_hi[0]),
      clamp(thetaRef[1], limits.theta_lo[1], limits.theta_hi[1]),
    ],
    k_ref: clamp(kRef, limits.k_lo, limits.k_hi),
  };
}

export function recordStartMessage(material: Material): RecordMsg {
  return { type: "record", action: "start", material };
}

export function recordStopMessage(): RecordMsg {
  return { type: "record", action: "stop" };
}
