/** One device session over the NDJSON gateway.
 *
 * State rules:
 *  - the displayed mode/spraying state only changes on ACK + STATUS from the
 *    device, never optimistically on send;
 *  - the telemetry buffer is bounded (default 300 ticks);
 *  - alerts stay pending until an ACK_ALERT command is acknowledged;
 *  - the socket reconnects with exponential backoff after a drop.
 */

import { EventEmitter } from "node:events";
import * as net from "node:net";
import {
  Ack,
  ACK_OK,
  Command,
  CMD_ACK_ALERT,
  CMD_SET_MODE,
  CMD_SPRAY_OFF,
  CMD_SPRAY_ON,
  GatewayMessage,
  parseMessage,
  splitLines,
  Status,
  Telemetry,
} from "./messages.js";

export type ConnectionState = "connecting" | "connected" | "retrying" | "closed";

export interface SessionOptions {
  host?: string;
  port?: number;
  bufferSize?: number;
  commandTimeoutMs?: number;
  reconnectBaseMs?: number;
  reconnectMaxMs?: number;
}

export interface CommandResult {
  seq: number;
  status: number;
  accepted: boolean;
}

interface Pending {
  resolve: (r: CommandResult) => void;
  reject: (e: Error) => void;
  timer: NodeJS.Timeout;
  onAccept?: () => void;
}

export class DeviceSession extends EventEmitter {
  readonly host: string;
  readonly port: number;
  readonly bufferSize: number;

  connection: ConnectionState = "closed";
  telemetry: Telemetry[] = [];
  status: Status | null = null;
  /** Last device-confirmed mode (from STATUS frames). */
  mode: number | null = null;
  /** Alert codes received and not yet acknowledged by the operator. */
  pendingAlerts = new Set<number>();
  /** Human-readable notices (rejections, errors); consumer drains them. */
  notices: string[] = [];

  private sock: net.Socket | null = null;
  private rx = "";
  private seq = 1;
  private pending = new Map<number, Pending>();
  private retryMs: number;
  private closedByUser = false;
  private retryTimer: NodeJS.Timeout | null = null;
  private readonly commandTimeoutMs: number;
  private readonly reconnectMaxMs: number;
  private readonly reconnectBaseMs: number;

  constructor(opts: SessionOptions = {}) {
    super();
    this.host = opts.host ?? "127.0.0.1";
    this.port = opts.port ?? 7451;
    this.bufferSize = opts.bufferSize ?? 300;
    this.commandTimeoutMs = opts.commandTimeoutMs ?? 2000;
    this.reconnectBaseMs = opts.reconnectBaseMs ?? 250;
    this.reconnectMaxMs = opts.reconnectMaxMs ?? 5000;
    this.retryMs = this.reconnectBaseMs;
  }

  connect(): void {
    this.closedByUser = false;
    this.openSocket();
  }

  close(): void {
    this.closedByUser = true;
    if (this.retryTimer) clearTimeout(this.retryTimer);
    this.sock?.destroy();
    this.sock = null;
    this.setConnection("closed");
    for (const [, p] of this.pending) {
      clearTimeout(p.timer);
      p.reject(new Error("session closed"));
    }
    this.pending.clear();
  }

  private openSocket(): void {
    this.setConnection(this.connection === "closed" ? "connecting" : "retrying");
    const sock = net.createConnection({ host: this.host, port: this.port });
    this.sock = sock;
    sock.setNoDelay(true);
    sock.on("connect", () => {
      this.retryMs = this.reconnectBaseMs;
      this.setConnection("connected");
    });
    sock.on("data", (chunk) => this.onData(chunk.toString("utf8")));
    const drop = () => {
      if (this.sock !== sock) return;
      this.sock = null;
      if (this.closedByUser) return;
      this.setConnection("retrying");
      this.retryTimer = setTimeout(() => this.openSocket(), this.retryMs);
      this.retryMs = Math.min(this.retryMs * 2, this.reconnectMaxMs);
    };
    sock.on("error", () => {
      /* 'close' always follows; drop handled there */
    });
    sock.on("close", drop);
  }

  private setConnection(state: ConnectionState): void {
    if (this.connection !== state) {
      this.connection = state;
      this.emit("connection", state);
    }
  }

  private onData(text: string): void {
    this.rx += text;
    const { lines, rest } = splitLines(this.rx);
    this.rx = rest;
    for (const line of lines) {
      const msg = parseMessage(line);
      if (msg) this.dispatch(msg);
    }
  }

  private dispatch(msg: GatewayMessage): void {
    switch (msg.type) {
      case "telemetry":
        this.telemetry.push(msg);
        if (this.telemetry.length > this.bufferSize) {
          this.telemetry.splice(0, this.telemetry.length - this.bufferSize);
        }
        break;
      case "status":
        this.status = msg;
        this.mode = msg.mode;
        break;
      case "alert":
        this.pendingAlerts.add(msg.code);
        break;
      case "ack":
        this.onAck(msg);
        break;
      case "error":
        this.notices.push(`gateway error: ${msg.error}`);
        break;
      default:
        break;
    }
    this.emit("message", msg);
  }

  private onAck(ack: Ack): void {
    const p = this.pending.get(ack.seq);
    if (!p) return;
    this.pending.delete(ack.seq);
    clearTimeout(p.timer);
    const accepted = ack.status === ACK_OK;
    if (accepted && p.onAccept) p.onAccept();
    p.resolve({ seq: ack.seq, status: ack.status, accepted });
  }

  /** Send a command; resolves on ACK, rejects on timeout. */
  sendCommand(
    cmd: Omit<Command, "type" | "frame_seq">,
    onAccept?: () => void,
  ): Promise<CommandResult> {
    const seq = this.seq;
    this.seq = (this.seq + 1) % 0x10000;
    const full: Command = { type: "command", frame_seq: seq, ...cmd };
    return new Promise((resolve, reject) => {
      if (!this.sock || this.connection !== "connected") {
        reject(new Error("not connected"));
        return;
      }
      const timer = setTimeout(() => {
        this.pending.delete(seq);
        this.notices.push(`command ${cmd.code} timed out; retry?`);
        reject(new Error("command timeout"));
      }, this.commandTimeoutMs);
      this.pending.set(seq, { resolve, reject, timer, onAccept });
      this.sock.write(JSON.stringify(full) + "\n");
    });
  }

  async setMode(mode: number): Promise<CommandResult> {
    const r = await this.sendCommand({ code: CMD_SET_MODE, mode });
    if (!r.accepted) this.notices.push("mode change rejected by device");
    return r;
  }

  async sprayOn(duration?: number, intensity?: number): Promise<CommandResult> {
    const r = await this.sendCommand({ code: CMD_SPRAY_ON, duration, intensity });
    if (!r.accepted) {
      this.notices.push("spray rejected (device is in automatic mode?)");
    }
    return r;
  }

  async sprayOff(): Promise<CommandResult> {
    return this.sendCommand({ code: CMD_SPRAY_OFF });
  }

  /** Acknowledge an alert; the badge clears only once the device ACKs. */
  async acknowledgeAlert(code: number): Promise<CommandResult> {
    return this.sendCommand({ code: CMD_ACK_ALERT, alert_code: code }, () => {
      this.pendingAlerts.delete(code);
    });
  }

  private sendRaw(obj: object): void {
    if (!this.sock || this.connection !== "connected") {
      throw new Error("not connected");
    }
    this.sock.write(JSON.stringify(obj) + "\n");
  }

  injectEvent(kind: string, rate?: number, duration?: number): void {
    this.sendRaw({ type: "inject_event", kind, rate, duration });
  }

  setSpeed(speed: number): void {
    this.sendRaw({ type: "set_speed", speed });
  }

  requestGroundTruth(): void {
    this.sendRaw({ type: "ground_truth" });
  }

  drainNotices(): string[] {
    const out = this.notices;
    this.notices = [];
    return out;
  }
}
