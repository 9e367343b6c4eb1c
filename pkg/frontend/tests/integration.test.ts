/**
 * End-to-end against a live engine: spawn the Python server, drive a
 * scripted session through the console's dispatch path with four trainee
 * clients plus one spectator, then download the report and render the
 * debrief from the same artifacts an instructor would use.
 */

import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { SessionClient, SocketLike } from "../src/client.js";
import { DebriefModel } from "../src/debrief.js";
import { renderDebrief, renderTimeline } from "../src/render.js";
import { Role, ServerMessage } from "../src/protocol.js";

const HOST = "127.0.0.1";
const PORT = 8917;
const BASE = `http://${HOST}:${PORT}`;
const WS_URL = `ws://${HOST}:${PORT}/ws`;

const wsFactory = (url: string): SocketLike => new WebSocket(url) as unknown as SocketLike;

let server: ChildProcess;

async function waitForServer(timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${BASE}/healthz`);
      if (response.ok) {
        return;
      }
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 100));
  }
  throw new Error("engine server did not come up");
}

function waitFor(predicate: () => boolean, what: string, timeoutMs = 20_000): Promise<void> {
  return new Promise((resolve, reject) => {
    const started = Date.now();
    const poll = setInterval(() => {
      if (predicate()) {
        clearInterval(poll);
        resolve();
      } else if (Date.now() - started > timeoutMs) {
        clearInterval(poll);
        reject(new Error(`timed out waiting for ${what}`));
      }
    }, 25);
  });
}

beforeAll(async () => {
  const logDir = mkdtempSync(join(tmpdir(), "codeteam-it-"));
  server = spawn(
    "python3",
    [
      "-m", "codeteam.cli", "serve",
      "--scenario", "vf-megacode",
      "--bind", `${HOST}:${PORT}`,
      "--seed", "7",
      "--realtime-scale", "60",
      "--out", join(logDir, "live.cts"),
    ],
    { stdio: ["ignore", "pipe", "pipe"], cwd: join(__dirname, "..", "..") },
  );
  server.stderr?.on("data", () => undefined);
  await waitForServer();
}, 40_000);

afterAll(() => {
  server?.kill("SIGTERM");
});

describe("console against a live engine", () => {
  it("drives a scripted session through the UI dispatch path and renders the debrief", async () => {
    const clients = new Map<Role, SessionClient>();
    const received = new Map<Role, ServerMessage[]>();
    const trainees: Role[] = ["TeamLeader", "Compressor", "Airway", "DefibMeds"];

    for (const role of trainees) {
      const client = new SessionClient(WS_URL, wsFactory);
      const inbox: ServerMessage[] = [];
      client.onMessage((message) => inbox.push(message));
      clients.set(role, client);
      received.set(role, inbox);
      const outcome = await client.connectAndJoin(role, `it-${role}`);
      expect(outcome.role).toBe(role);
    }

    // one spectator observing the same stream
    const spectator = new SessionClient(WS_URL, wsFactory);
    const spectatorInbox: ServerMessage[] = [];
    spectator.onMessage((message) => spectatorInbox.push(message));
    const spectatorOutcome = await spectator.connectAndJoin("Spectator", "it-viewer");
    expect(spectatorOutcome.role).toBe("Spectator");

    const leaderInbox = received.get("TeamLeader")!;
    const sawEvent = (kind: string, match?: (payload: Record<string, unknown>) => boolean) => () =>
      leaderInbox.some(
        (m) => m.type === "event" && m.event.kind === kind && (match === undefined || match(m.event.payload)),
      );
    await waitFor(sawEvent("SessionStart"), "SessionStart broadcast");

    // the scripted sequence, via the console's dispatch path
    const leader = clients.get("TeamLeader")!;
    const compressor = clients.get("Compressor")!;
    const airway = clients.get("Airway")!;
    const defib = clients.get("DefibMeds")!;

    leader.dispatchAction("CheckResponsiveness");
    leader.dispatchAction("CallForHelp");
    leader.dispatchAction("CheckPulse");
    compressor.dispatchAction("StartCompressions");
    airway.dispatchAction("InsertOralAirway");
    defib.dispatchAction("AttachPads");
    defib.dispatchAction("ObtainIvAccess");
    defib.dispatchAction("ChargeDefibrillator", { energy_j: 200 });
    leader.sendUtterance("Clear the patient and shock.", ["Directive"], "DefibMeds", "DeliverShock");
    defib.sendUtterance("Copy, clearing.", ["Acknowledgement"], "TeamLeader", null);
    defib.dispatchAction("ClearPatient");
    defib.dispatchAction("DeliverShock");
    defib.sendUtterance("Shock delivered.", ["Report"], "TeamLeader", null);

    await waitFor(
      sawEvent("ActionPerformed", (p) => p["action"] === "DeliverShock"),
      "shock broadcast",
    );
    // spectators receive the same broadcasts
    await waitFor(
      () => spectatorInbox.some((m) => m.type === "event" && m.event.kind === "ActionPerformed"),
      "spectator mirror",
    );

    // wrong-role dispatch is rejected and unicast back
    compressor.dispatchAction("DeliverShock");
    await waitFor(
      () => received.get("Compressor")!.some((m) => m.type === "rejected" && m.reason === "RoleNotPermitted"),
      "rejection notice",
    );

    leader.endSession("Completed");
    await waitFor(
      () => leaderInbox.some((m) => m.type === "session_ended"),
      "session end",
    );

    // download the artifacts exactly as the instructor view would
    const reportResponse = await fetch(`${BASE}/report`);
    expect(reportResponse.status).toBe(200);
    const reportText = await reportResponse.text();
    const logResponse = await fetch(`${BASE}/log`);
    expect(logResponse.status).toBe(200);
    const logText = await logResponse.text();

    const model = new DebriefModel(reportText, logText);
    const html = renderDebrief(model);
    for (const panel of ["comm-frequency", "task-distribution", "response-times", "closed-loop"]) {
      expect(html).toContain(`data-panel="${panel}"`);
    }
    const markerCount = renderTimeline(model).match(/class="marker /g)?.length ?? 0;
    expect(markerCount).toBe(model.report.timeline_markers.length);
    expect(model.report.closed_loop.directives).toBeGreaterThanOrEqual(1);
    expect(model.transcript().length).toBe(3);

    for (const client of clients.values()) {
      client.close();
    }
    spectator.close();
  }, 60_000);
});
