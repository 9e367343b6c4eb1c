/**
 * HTML renderers: pure string builders over the view models, kept free of
 * DOM handles so they test under plain node. main.ts mounts the output.
 */

import { DebriefModel } from "./debrief.js";
import { AlertToast, LiveViewModel, VitalsPoint } from "./viewmodel.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function fmtClock(ms: number): string {
  const totalS = Math.floor(ms / 1000);
  const m = Math.floor(totalS / 60);
  const s = totalS % 60;
  return `${m}:${String(s).padStart(2, "0")}`;
}

export function renderVitalsMonitor(vm: LiveViewModel): string {
  const point = vm.vitalsSeries.last();
  if (point === undefined) {
    return `<div class="monitor" data-empty="true">awaiting vitals</div>`;
  }
  const v = point.vitals;
  const rows = [
    ["HR", v.heart_rate.toFixed(0), "bpm"],
    ["SpO2", v.spo2.toFixed(0), "%"],
    ["EtCO2", v.etco2.toFixed(0), "mmHg"],
    ["BP", `${v.bp_sys.toFixed(0)}/${v.bp_dia.toFixed(0)}`, "mmHg"],
    ["RR", v.resp_rate.toFixed(0), "/min"],
  ];
  const cells = rows
    .map(([name, value, unit]) => `<div class="vital"><span class="name">${name}</span><span class="value">${value}</span><span class="unit">${unit}</span></div>`)
    .join("");
  const rhythm = vm.rhythm !== null ? `<div class="rhythm">${escapeHtml(vm.rhythm)}</div>` : "";
  return `<div class="monitor" data-time="${point.time}">${rhythm}${cells}<div class="clock">${fmtClock(vm.clock)}</div></div>`;
}

export function renderAlertToasts(alerts: AlertToast[]): string {
  // server-side modulation already rate-limited these; render verbatim
  const items = alerts
    .map(
      (t) =>
        `<div class="toast severity-${t.alert.severity.toLowerCase()}" data-rule="${escapeHtml(t.alert.rule_id)}">` +
        `<strong>${escapeHtml(t.alert.category)}</strong> ${escapeHtml(t.alert.message)}` +
        `<span class="at">${fmtClock(t.time)}</span></div>`,
    )
    .join("");
  return `<div class="toasts">${items}</div>`;
}

export function renderPalette(vm: LiveViewModel): string {
  const buttons = vm.palette
    .map((kind) => `<button class="action" data-kind="${escapeHtml(kind)}">${escapeHtml(kind)}</button>`)
    .join("");
  return `<div class="palette" data-role="${vm.role ?? ""}">${buttons}</div>`;
}

export function renderRejections(vm: LiveViewModel): string {
  const items = vm.rejections
    .toArray()
    .map((r) => `<li class="rejection">${escapeHtml(r.action)}: ${escapeHtml(r.reason)} (${fmtClock(r.time)})</li>`)
    .join("");
  return `<ul class="rejections">${items}</ul>`;
}

export function renderVitalsSparkline(points: VitalsPoint[], field: keyof VitalsPoint["vitals"]): string {
  if (points.length === 0) {
    return `<svg class="spark" viewBox="0 0 100 20"></svg>`;
  }
  const values = points.map((p) => p.vitals[field]);
  const max = Math.max(...values, 1);
  const coords = values
    .map((v, i) => `${((i / Math.max(values.length - 1, 1)) * 100).toFixed(1)},${(20 - (v / max) * 18).toFixed(1)}`)
    .join(" ");
  return `<svg class="spark" viewBox="0 0 100 20"><polyline fill="none" stroke="currentColor" points="${coords}"/></svg>`;
}

// -- debrief ------------------------------------------------------------

function panel(id: string, title: string, body: string): string {
  return `<section class="panel" data-panel="${id}"><h3>${escapeHtml(title)}</h3>${body}</section>`;
}

function renderCommFrequency(model: DebriefModel): string {
  const cf = model.report.comm_frequency;
  const rows = Object.entries(cf.per_role)
    .map(([role, rate]) => `<tr><td>${escapeHtml(role)}</td><td>${rate.toFixed(2)}/min</td></tr>`)
    .join("");
  return panel(
    "comm-frequency",
    "Communication frequency",
    `<table>${rows}<tr class="total"><td>Team</td><td>${cf.team_total.toFixed(2)}/min</td></tr></table>`,
  );
}

function renderTaskDistribution(model: DebriefModel): string {
  const td = model.report.task_distribution;
  const rows = Object.entries(td.per_role)
    .map(
      ([role, entry]) =>
        `<tr><td>${escapeHtml(role)}</td><td>${entry.count}</td><td>${(entry.share * 100).toFixed(0)}%</td></tr>`,
    )
    .join("");
  return panel(
    "task-distribution",
    "Task distribution",
    `<table>${rows}</table><p class="balance">balance ${td.balance.toFixed(3)}</p>`,
  );
}

function renderResponseTimes(model: DebriefModel): string {
  const rt = model.report.response_times;
  const stateRows = rt.state_required
    .map((row) => {
      const latency = row["latency_ms"] === null ? "missed" : `${row["latency_ms"]} ms`;
      return `<tr><td>${escapeHtml(String(row["rhythm"]))} #${row["episode"]}</td><td>${escapeHtml(
        String(row["action"]),
      )}</td><td>${latency}</td><td>${escapeHtml(String(row["status"]))}</td></tr>`;
    })
    .join("");
  const orderRows = rt.order_to_action
    .map((row) => {
      const latency = row["latency_ms"] === null ? "never executed" : `${row["latency_ms"]} ms`;
      return `<tr><td>${escapeHtml(String(row["action"]))}</td><td>${latency}</td></tr>`;
    })
    .join("");
  return panel(
    "response-times",
    "Response times",
    `<h4>state onset to required action</h4><table>${stateRows}</table>` +
      `<h4>order to execution</h4><table>${orderRows}</table>`,
  );
}

function renderClosedLoop(model: DebriefModel): string {
  const cl = model.report.closed_loop;
  if (cl.vacuous) {
    return panel("closed-loop", "Closed-loop communication", `<p class="vacuous">no directives issued</p>`);
  }
  const items = cl.loops
    .map((loop) => {
      const directive = loop["directive"] as Record<string, unknown>;
      const closed = loop["closed"] ? "closed" : "open";
      return `<li class="loop loop-${closed}">${escapeHtml(String(directive["text"]))} — ${closed}</li>`;
    })
    .join("");
  return panel(
    "closed-loop",
    "Closed-loop communication",
    `<p>${cl.closed}/${cl.directives} loops closed (rate ${cl.rate.toFixed(2)})</p><ul>${items}</ul>`,
  );
}

export function renderCoverageGrid(model: DebriefModel): string {
  const episodes = model.report.coverage
    .map((ep) => {
      const cells = ep.cells
        .map(
          (cell) =>
            `<td class="cell status-${cell.status.toLowerCase()}" data-action="${escapeHtml(cell.action)}">` +
            `${escapeHtml(cell.action)}<br>${cell.status}</td>`,
        )
        .join("");
      return `<tr><th>#${ep.episode} ${escapeHtml(ep.rhythm)}<br>${fmtClock(ep.onset_ms)}–${fmtClock(ep.end_ms)}</th>${cells}</tr>`;
    })
    .join("");
  return `<table class="coverage">${episodes}</table>`;
}

export function renderTimeline(model: DebriefModel): string {
  const span = Math.max(model.report.session_ms, 1);
  const items = model
    .markers()
    .map((marker) => {
      const left = ((marker.time_ms / span) * 100).toFixed(2);
      return (
        `<div class="marker lane-${marker.kind}" style="left:${left}%" data-time="${marker.time_ms}" ` +
        `title="${escapeHtml(marker.label)}">${escapeHtml(marker.label)}</div>`
      );
    })
    .join("");
  return `<div class="timeline" data-span="${span}">${items}</div>`;
}

function renderTranscript(model: DebriefModel): string {
  const lines = model
    .transcript()
    .map(
      (line) =>
        `<li class="line"><span class="at">${fmtClock(line.time)}</span> <strong>${escapeHtml(
          line.speaker,
        )}</strong> ${escapeHtml(line.text)}${line.tags.length ? ` <em>[${line.tags.join(", ")}]</em>` : ""}</li>`,
    )
    .join("");
  return `<ul class="transcript">${lines}</ul>`;
}

function renderLearningPoints(model: DebriefModel): string {
  const items = model.report.learning_points
    .map(
      (lp) =>
        `<li class="learning-point reason-${lp.reason}"><strong>${escapeHtml(lp.state)}</strong> ${escapeHtml(lp.text)}</li>`,
    )
    .join("");
  return `<ul class="learning-points">${items}</ul>`;
}

function renderErrorSummary(model: DebriefModel): string {
  const items = model.report.error_summary
    .map((err) => {
      const label = err["message"] ?? `${err["action"]} (${err["reason"]})`;
      return `<li class="error">${fmtClock(Number(err["time_ms"]))} [${escapeHtml(String(err["type"]))}] ${escapeHtml(String(label))}</li>`;
    })
    .join("");
  return `<ul class="errors">${items}</ul>`;
}

function renderTelemetryLanes(model: DebriefModel): string {
  const lanes = model
    .telemetryChannels()
    .map((channel) => {
      const points = model.telemetrySeries(channel);
      const max = Math.max(...points.map((p) => p.value), 1);
      const span = Math.max(model.report.session_ms, 1);
      const coords = points
        .map((p) => `${((p.time / span) * 100).toFixed(1)},${(20 - (p.value / max) * 18).toFixed(1)}`)
        .join(" ");
      return (
        `<div class="lane" data-channel="${escapeHtml(channel)}"><span>${escapeHtml(channel)}</span>` +
        `<svg viewBox="0 0 100 20"><polyline fill="none" stroke="currentColor" points="${coords}"/></svg></div>`
      );
    })
    .join("");
  return `<div class="telemetry">${lanes}</div>`;
}

/** The full instructor view; works offline from report + log files. */
export function renderDebrief(model: DebriefModel): string {
  const header =
    `<header><h2>${escapeHtml(model.report.scenario_id)}</h2>` +
    `<p>seed ${model.report.seed}, ${fmtClock(model.report.session_ms)} session</p></header>`;
  const parts = [
    header,
    renderCommFrequency(model),
    renderTaskDistribution(model),
    renderResponseTimes(model),
    renderClosedLoop(model),
    panel("coverage", "Actions per patient state", renderCoverageGrid(model)),
    panel("timeline", "Timeline", renderTimeline(model)),
    panel("transcript", "Transcript", renderTranscript(model)),
    panel("learning-points", "Learning points", renderLearningPoints(model)),
    panel("errors", "Critical errors", renderErrorSummary(model)),
  ];
  if (model.telemetryChannels().length > 0) {
    parts.push(panel("telemetry", "Biometric overlays", renderTelemetryLanes(model)));
  }
  return `<div class="debrief">${parts.join("")}</div>`;
}
