/** Terminal dashboard for one or more device gateways.
 *
 *   node dist/cli.js [host:port ...]      (default 127.0.0.1:7451)
 *
 * Keys: m toggle mode, s spray on, o spray off, a acknowledge first alert,
 *       i inject sneeze, h inject humidifier pulse, g ground truth, q quit.
 */

import { MODE_AUTOMATIC, MODE_MANUAL } from "./messages.js";
import { renderDashboard } from "./render.js";
import { DeviceSession } from "./session.js";

function parseTarget(arg: string): { host: string; port: number } {
  const [host, port] = arg.includes(":") ? arg.split(":") : [arg, "7451"];
  return { host: host || "127.0.0.1", port: Number(port) };
}

function main(): void {
  const targets = process.argv.slice(2);
  if (targets.length === 0) targets.push("127.0.0.1:7451");
  const sessions = targets.map((t) => {
    const s = new DeviceSession(parseTarget(t));
    s.connect();
    return s;
  });
  let active = 0;

  const redraw = () => {
    const parts = sessions.map((s, i) => {
      const head =
        sessions.length > 1
          ? `--- device ${i}${i === active ? " (active)" : ""} @ ${s.host}:${s.port} ---\n`
          : "";
      return head + renderDashboard(s, 70);
    });
    process.stdout.write("\x1b[2J\x1b[H" + parts.join("\n\n") + "\n");
  };
  const timer = setInterval(redraw, 1000); // >= 1 Hz refresh

  const quit = () => {
    clearInterval(timer);
    for (const s of sessions) s.close();
    process.stdin.setRawMode?.(false);
    process.exit(0);
  };

  process.stdin.setRawMode?.(true);
  process.stdin.resume();
  process.stdin.on("data", (key) => {
    const s = sessions[active];
    const k = key.toString();
    const swallow = (p: Promise<unknown>) => p.catch(() => undefined);
    if (k === "q" || k === "\x03") quit();
    else if (k === "m") {
      const next = s.mode === MODE_MANUAL ? MODE_AUTOMATIC : MODE_MANUAL;
      swallow(s.setMode(next));
    } else if (k === "s") swallow(s.sprayOn(15, 1.0));
    else if (k === "o") swallow(s.sprayOff());
    else if (k === "a") {
      const first = [...s.pendingAlerts].sort()[0];
      if (first !== undefined) swallow(s.acknowledgeAlert(first));
    } else if (k === "i") s.injectEvent("sneeze");
    else if (k === "h") s.injectEvent("humidifier", 4e8, 15);
    else if (k === "g") s.requestGroundTruth();
    else if (k === "\t") active = (active + 1) % sessions.length;
  });
}

main();
