/** Minimal scripted gateway for unit tests: accepts one client at a time,
 * records received lines, and lets tests push NDJSON messages. */

import { AddressInfo } from "node:net";
import * as net from "node:net";

export class MockGateway {
  server: net.Server;
  socket: net.Socket | null = null;
  received: Record<string, unknown>[] = [];
  port = 0;
  private waiting: Array<() => void> = [];
  private rx = "";

  async start(): Promise<void> {
    this.server = net.createServer((sock) => {
      this.socket = sock;
      sock.on("data", (chunk) => {
        this.rx += chunk.toString("utf8");
        const parts = this.rx.split("\n");
        this.rx = parts.pop() ?? "";
        for (const line of parts) {
          if (line.trim()) this.received.push(JSON.parse(line));
        }
        for (const w of this.waiting.splice(0)) w();
      });
      for (const w of this.waiting.splice(0)) w();
    });
    await new Promise<void>((resolve) =>
      this.server.listen(0, "127.0.0.1", resolve),
    );
    this.port = (this.server.address() as AddressInfo).port;
  }

  send(obj: object): void {
    this.socket?.write(JSON.stringify(obj) + "\n");
  }

  async waitFor(pred: () => boolean, timeoutMs = 3000): Promise<void> {
    const deadline = Date.now() + timeoutMs;
    while (!pred()) {
      if (Date.now() > deadline) throw new Error("mock gateway wait timeout");
      await new Promise<void>((resolve) => {
        const t = setTimeout(resolve, 20);
        this.waiting.push(() => {
          clearTimeout(t);
          resolve();
        });
      });
    }
  }

  dropClient(): void {
    this.socket?.destroy();
    this.socket = null;
  }

  async stop(): Promise<void> {
    this.dropClient();
    await new Promise<void>((resolve) => this.server.close(() => resolve()));
  }
}

export function telemetry(t: number, fine: number) {
  return {
    type: "telemetry",
    frame_seq: t,
    timestamp_ms: t * 1000,
    number_bins: [fine / 2, fine / 2, 1, 0.5, 0.1],
    mass_bins: [1, 2, 3, 4, 5],
    temperature: 22,
    rh: 45,
    risk: fine >= 300 ? 2 : 0,
  };
}

export function status(mode: number, spraying = 0) {
  return {
    type: "status",
    frame_seq: 0,
    battery_pct: 90,
    liquid_pct: 80,
    mode,
    spraying,
    cumulative_exposure: 10,
  };
}
