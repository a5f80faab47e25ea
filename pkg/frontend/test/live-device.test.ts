/** End-to-end checks against a real served device instance.
 *
 * Spawns the device CLI (`smartmask serve`) at 10x speed with risk
 * thresholds scaled to the diluted single-sneeze concentration and a low
 * decontamination threshold, then drives the dashboard session exactly as
 * the UI would.  Test order matters: once the mist actuator has fired, the
 * sensor sees the mask's own mist for a long time, so the quiet-baseline
 * checks run first.
 */

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import * as net from "node:net";
import { tmpdir } from "node:os";
import * as path from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { fineCount, MODE_MANUAL } from "../src/messages.js";
import { DeviceSession } from "../src/session.js";

const HERE = path.dirname(fileURLToPath(import.meta.url));
const REPO_ROOT = path.resolve(HERE, "..", "..");

function freePort(): Promise<number> {
  return new Promise((resolve) => {
    const srv = net.createServer();
    srv.listen(0, "127.0.0.1", () => {
      const port = (srv.address() as net.AddressInfo).port;
      srv.close(() => resolve(port));
    });
  });
}

async function waitFor(
  pred: () => boolean,
  timeoutMs: number,
  what: string,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!pred()) {
    if (Date.now() > deadline) throw new Error(`timeout waiting for ${what}`);
    await new Promise((r) => setTimeout(r, 25));
  }
}

let proc: ChildProcess | null = null;
let session: DeviceSession;

const lastTick = () => session.telemetry[session.telemetry.length - 1];

beforeAll(async () => {
  const dir = mkdtempSync(path.join(tmpdir(), "smartmask-ui-"));
  const cfgPath = path.join(dir, "scenario.json");
  writeFileSync(
    cfgPath,
    JSON.stringify({
      schema_version: 1,
      duration: 1e6,
      noise_sigma: 0.0,
      controller: {
        // a single sneeze dilutes to ~0.02 #/cm^3 total, of which ~5e-4
        // lands in the fine bins; scale the risk thresholds to that
        risk_thresholds: [0.00005, 0.0001, 0.0003],
        decontamination_threshold: 0.05,
      },
    }),
  );
  const port = await freePort();
  const gatewayPort = await freePort();
  proc = spawn(
    "python3",
    [
      "-m", "smartmask.cli", "serve",
      "--config", cfgPath,
      "--port", String(port),
      "--gateway-port", String(gatewayPort),
      "--speed", "10",
    ],
    {
      cwd: REPO_ROOT,
      env: { ...process.env, PYTHONPATH: path.join(REPO_ROOT, "src") },
      stdio: ["ignore", "inherit", "inherit"],
    },
  );
  session = new DeviceSession({ port: gatewayPort, commandTimeoutMs: 5000 });
  // the server needs a moment to import and bind; retry until telemetry flows
  const deadline = Date.now() + 20000;
  while (Date.now() < deadline && session.telemetry.length === 0) {
    if (session.connection === "closed") session.connect();
    await new Promise((r) => setTimeout(r, 200));
  }
  expect(session.telemetry.length).toBeGreaterThan(0);
}, 30000);

afterAll(() => {
  session?.close();
  proc?.kill("SIGTERM");
});

describe("live device", () => {
  it("streams chart updates at 1 Hz or better", async () => {
    const t0 = lastTick().timestamp_ms;
    let updates = 0;
    let prev = t0;
    const until = Date.now() + 2000;
    while (Date.now() < until) {
      await new Promise((r) => setTimeout(r, 25));
      if (lastTick().timestamp_ms !== prev) {
        prev = lastTick().timestamp_ms;
        updates += 1;
      }
    }
    expect(updates).toBeGreaterThanOrEqual(2); // >= 1 chart update per second
  }, 10000);

  it("rejects manual spray in automatic mode with a visible notice", async () => {
    const result = await session.sprayOn(10, 0.5);
    expect(result.accepted).toBe(false);
    expect(session.drainNotices().join(" ")).toContain("rejected");
    expect(session.status?.spraying ?? 0).toBe(0);
  }, 20000);

  it("shows a sneeze spike followed by an automatic spray episode", async () => {
    const baseline = fineCount(lastTick());
    session.injectEvent("sneeze");
    await waitFor(
      () => fineCount(lastTick()) > baseline + 0.0003,
      20000,
      "sneeze spike on the chart",
    );
    await waitFor(
      () => session.status?.spraying === 1,
      60000,
      "automatic spray episode",
    );
  }, 90000);

  it("reflects SET_MODE and manual SPRAY_ON within 2 control ticks", async () => {
    // slow the sim so one network round trip spans well under a tick
    session.setSpeed(2);
    await new Promise((r) => setTimeout(r, 500));

    let before = lastTick().timestamp_ms;
    const modeResult = await session.setMode(MODE_MANUAL);
    expect(modeResult.accepted).toBe(true);
    expect(lastTick().timestamp_ms - before).toBeLessThanOrEqual(2000);
    await waitFor(() => session.mode === MODE_MANUAL, 5000, "manual status");

    // manual mode: wait out the running automatic episode, then spray
    await waitFor(() => session.status?.spraying === 0, 30000, "idle actuator");
    before = lastTick().timestamp_ms;
    const sprayResult = await session.sprayOn(30, 1.0);
    expect(sprayResult.accepted).toBe(true);
    expect(lastTick().timestamp_ms - before).toBeLessThanOrEqual(2000);
    await waitFor(() => session.status?.spraying === 1, 10000, "spray gauge");

    await session.sprayOff();
    await waitFor(() => session.status?.spraying === 0, 10000, "spray stop");
    session.setSpeed(10);
  }, 60000);

  it("keeps the Decontaminate badge until acknowledged", async () => {
    const DECONTAMINATE = 3;
    await waitFor(
      () => session.pendingAlerts.has(DECONTAMINATE),
      60000,
      "decontaminate alert",
    );
    const t0 = lastTick().timestamp_ms;
    await waitFor(
      () => lastTick().timestamp_ms > t0 + 3000,
      10000,
      "chart ticks",
    );
    expect(session.pendingAlerts.has(DECONTAMINATE)).toBe(true); // persists

    const ackResult = await session.acknowledgeAlert(DECONTAMINATE);
    expect(ackResult.accepted).toBe(true);
    expect(session.pendingAlerts.has(DECONTAMINATE)).toBe(false);
  }, 90000);
});
