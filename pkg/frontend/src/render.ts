/** Pure text rendering for the terminal dashboard: sparkline charts,
 * resource gauges, alert badges.  No I/O here so everything is testable. */

import {
  ALERT_NAMES,
  fineCount,
  RISK_NAMES,
  Status,
  Telemetry,
} from "./messages.js";
import { ConnectionState } from "./session.js";

const TICKS = "▁▂▃▄▅▆▇█";

export function sparkline(values: number[], width = 60): string {
  if (values.length === 0) return "";
  const tail = values.slice(-width);
  const max = Math.max(...tail, 1e-12);
  return tail
    .map((v) => TICKS[Math.min(7, Math.floor((Math.max(v, 0) / max) * 7.999))])
    .join("");
}

export function gauge(label: string, pct: number, width = 20): string {
  const filled = Math.round((Math.max(0, Math.min(100, pct)) / 100) * width);
  const bar = "#".repeat(filled) + "-".repeat(width - filled);
  return `${label} [${bar}] ${pct.toFixed(0).padStart(3)}%`;
}

export function alertBadges(pending: Iterable<number>): string {
  const names = [...pending].sort().map((c) => ALERT_NAMES[c] ?? `alert ${c}`);
  return names.length === 0
    ? "alerts: none"
    : `alerts: ${names.map((n) => `[! ${n} !]`).join(" ")}  (press a to acknowledge)`;
}

export interface DashboardView {
  connection: ConnectionState;
  telemetry: Telemetry[];
  status: Status | null;
  mode: number | null;
  pendingAlerts: Set<number>;
  notices: string[];
}

export function renderDashboard(view: DashboardView, width = 60): string {
  const lines: string[] = [];
  lines.push(`connection: ${view.connection}`);
  const last = view.telemetry[view.telemetry.length - 1];
  if (last) {
    const fine = view.telemetry.map(fineCount);
    lines.push(
      `t=${(last.timestamp_ms / 1000).toFixed(0)}s  ` +
        `fine=${fineCount(last).toFixed(1)} #/cm3  ` +
        `risk=${RISK_NAMES[last.risk] ?? last.risk}`,
    );
    lines.push(`fine 0.3-1.0um  ${sparkline(fine, width)}`);
    for (let b = 2; b < 5; b++) {
      const series = view.telemetry.map((t) => t.number_bins[b]);
      lines.push(`bin ${b}          ${sparkline(series, width)}`);
    }
  } else {
    lines.push("waiting for telemetry...");
  }
  if (view.status) {
    const s = view.status;
    lines.push(
      gauge("battery", s.battery_pct) +
        "   " +
        gauge("liquid ", s.liquid_pct) +
        `   mode=${view.mode === 1 ? "MANUAL" : "AUTO"}` +
        `   ${s.spraying ? "SPRAYING" : "idle"}`,
    );
  }
  lines.push(alertBadges(view.pendingAlerts));
  for (const n of view.notices) lines.push(`notice: ${n}`);
  return lines.join("\n");
}
