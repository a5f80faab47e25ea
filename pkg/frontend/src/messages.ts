/** Line-delimited JSON messages exchanged with the device gateway. */

export const MODE_AUTOMATIC = 0;
export const MODE_MANUAL = 1;

export const CMD_SET_MODE = 1;
export const CMD_SPRAY_ON = 2;
export const CMD_SPRAY_OFF = 3;
export const CMD_ACK_ALERT = 4;
export const CMD_SET_PARAMS = 5;

export const ACK_OK = 0;
export const ACK_REJECTED = 1;
export const ACK_ERROR = 2;

export const ALERT_RECHARGE = 1;
export const ALERT_REFILL = 2;
export const ALERT_DECONTAMINATE = 3;

export const ALERT_NAMES: Record<number, string> = {
  [ALERT_RECHARGE]: "Recharge",
  [ALERT_REFILL]: "Refill",
  [ALERT_DECONTAMINATE]: "Decontaminate",
};

export const RISK_NAMES = ["low", "moderate", "high", "very-high"];

export interface Telemetry {
  type: "telemetry";
  frame_seq: number;
  timestamp_ms: number;
  number_bins: number[];
  mass_bins: number[];
  temperature: number;
  rh: number;
  risk: number;
}

export interface Status {
  type: "status";
  frame_seq: number;
  battery_pct: number;
  liquid_pct: number;
  mode: number;
  spraying: number;
  cumulative_exposure: number;
}

export interface Alert {
  type: "alert";
  frame_seq: number;
  code: number;
}

export interface Ack {
  type: "ack";
  frame_seq: number;
  seq: number;
  status: number;
}

export interface GroundTruth {
  type: "ground_truth";
  sim_time: number;
  breathing_number: number[];
  breathing_mist: number[];
  ground_number: number[];
  ground_mist: number[];
  liquid_ml: number;
  battery_mah: number;
  mode: number;
  spraying: boolean;
}

export interface OkReply {
  type: "ok";
  [key: string]: unknown;
}

export interface ErrorReply {
  type: "error";
  error: string;
}

export type GatewayMessage =
  | Telemetry
  | Status
  | Alert
  | Ack
  | GroundTruth
  | OkReply
  | ErrorReply;

export interface Command {
  type: "command";
  frame_seq: number;
  code: number;
  mode?: number;
  duration?: number;
  intensity?: number;
  angle_factor?: number;
  alert_code?: number;
}

/** Split a byte stream into complete JSON lines, keeping the remainder. */
export function splitLines(buffer: string): { lines: string[]; rest: string } {
  const parts = buffer.split("\n");
  const rest = parts.pop() ?? "";
  return { lines: parts.filter((l) => l.trim().length > 0), rest };
}

export function parseMessage(line: string): GatewayMessage | null {
  let obj: unknown;
  try {
    obj = JSON.parse(line);
  } catch {
    return null;
  }
  if (typeof obj !== "object" || obj === null) return null;
  const type = (obj as { type?: unknown }).type;
  if (typeof type !== "string") return null;
  return obj as GatewayMessage;
}

export function fineCount(t: Telemetry): number {
  return t.number_bins[0] + t.number_bins[1];
}
