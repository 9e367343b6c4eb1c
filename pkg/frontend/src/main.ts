/**
 * Browser entry point: mounts the trainee console and the debrief view.
 * All state flows through LiveViewModel.apply / DebriefModel; this file is
 * DOM plumbing only.
 */

import { JoinDenied, SessionClient } from "./client.js";
import { DebriefModel } from "./debrief.js";
import {
  renderAlertToasts,
  renderDebrief,
  renderPalette,
  renderRejections,
  renderVitalsMonitor,
} from "./render.js";
import { Role, TRAINEE_ROLES } from "./protocol.js";
import { LiveViewModel } from "./viewmodel.js";

const vm = new LiveViewModel();
let client: SessionClient | null = null;

function $(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (el === null) {
    throw new Error(`missing element #${id}`);
  }
  return el;
}

function repaintLive(): void {
  $("monitor").innerHTML = renderVitalsMonitor(vm);
  $("toasts").innerHTML = renderAlertToasts(vm.alerts.toArray());
  $("palette").innerHTML = renderPalette(vm);
  $("rejections").innerHTML = renderRejections(vm);
  $("status").textContent =
    vm.connection === "joined"
      ? `${vm.role} in ${vm.sessionId} (${vm.rhythm ?? "?"})`
      : vm.connection + (vm.lastError ? `: ${vm.lastError}` : "");
  for (const button of $("palette").querySelectorAll<HTMLButtonElement>("button.action")) {
    button.addEventListener("click", () => dispatchFromPalette(button.dataset["kind"] ?? ""));
  }
}

function dispatchFromPalette(kind: string): void {
  if (client === null) {
    return;
  }
  let params: Record<string, unknown> = {};
  if (kind === "SetCompressionRate") {
    params = { rate: Number(($("rate-slider") as HTMLInputElement).value) };
  } else if (kind === "ChargeDefibrillator") {
    params = { energy_j: 200 };
  } else if (kind === "AdministerDrug") {
    params = {
      drug: ($("drug-name") as HTMLInputElement).value || "epinephrine",
      dose_mg: Number(($("drug-dose") as HTMLInputElement).value || "1"),
    };
  } else if (kind === "PushFluids") {
    params = { ml: 500 };
  }
  client.dispatchAction(kind, params);
}

async function connect(): Promise<void> {
  const url = ($("server-url") as HTMLInputElement).value;
  const role = ($("role-select") as HTMLSelectElement).value as Role;
  client = new SessionClient(url);
  client.onMessage((message) => {
    vm.apply(message);
    repaintLive();
  });
  client.onClose(() => {
    if (vm.connection !== "ended") {
      vm.connection = "closed";
    }
    repaintLive();
  });
  try {
    const joined = await client.connectAndJoin(role);
    vm.apply({ type: "joined", role: joined.role, session_id: joined.sessionId, client_id: joined.clientId });
  } catch (err) {
    if (err instanceof JoinDenied && client !== null) {
      // the protocol's fallback path: observe instead
      $("status").textContent = `${err.reason}; joining as spectator`;
      const joined = await client.joinAsSpectator();
      vm.apply({ type: "joined", role: joined.role, session_id: joined.sessionId, client_id: joined.clientId });
    } else {
      $("status").textContent = String(err);
    }
  }
  repaintLive();
}

function wireLiveView(): void {
  const select = $("role-select") as HTMLSelectElement;
  for (const role of [...TRAINEE_ROLES, "Spectator"]) {
    const option = document.createElement("option");
    option.value = role;
    option.textContent = role;
    select.appendChild(option);
  }
  $("connect").addEventListener("click", () => void connect());
  $("say").addEventListener("click", () => {
    const text = ($("utterance-text") as HTMLInputElement).value;
    if (client !== null && text) {
      client.sendUtterance(text);
      ($("utterance-text") as HTMLInputElement).value = "";
    }
  });
}

function wireDebriefView(): void {
  let reportText: string | null = null;
  let logText: string | undefined;

  const tryRender = (): void => {
    if (reportText === null) {
      return;
    }
    try {
      const model = new DebriefModel(reportText, logText);
      $("debrief").innerHTML = renderDebrief(model);
      const scrubber = $("scrubber") as HTMLInputElement;
      scrubber.max = String(model.report.session_ms);
      scrubber.addEventListener("input", () => {
        const view = model.scrub(Number(scrubber.value));
        $("scrub-state").textContent = view.vitals
          ? `${view.rhythm} @ ${view.time} ms — HR ${view.vitals.heart_rate.toFixed(0)}, ` +
            `SpO2 ${view.vitals.spo2.toFixed(0)}, EtCO2 ${view.vitals.etco2.toFixed(0)}`
          : `${view.rhythm} @ ${view.time} ms`;
      });
    } catch (err) {
      // schema mismatch and parse failures block the render entirely
      $("debrief").innerHTML = `<p class="error">${String(err)}</p>`;
    }
  };

  ($("report-file") as HTMLInputElement).addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (file) {
      reportText = await file.text();
      tryRender();
    }
  });
  ($("log-file") as HTMLInputElement).addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (file) {
      logText = await file.text();
      tryRender();
    }
  });
}

window.addEventListener("load", () => {
  wireLiveView();
  wireDebriefView();
});
