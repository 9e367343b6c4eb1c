/**
 * Wire protocol and file schemas shared with the engine: server messages,
 * log event records (one JSON object per line in a .cts file), and the CRM
 * report document. The console renders only what arrives through these
 * shapes; it never simulates patient state locally.
 */

export const PROTOCOL_VERSION = 1;
export const LOG_SCHEMA_VERSION = 1;
export const REPORT_SCHEMA_VERSION = 1;

export type Role = "TeamLeader" | "Compressor" | "Airway" | "DefibMeds" | "Spectator";
export const TRAINEE_ROLES: Role[] = ["TeamLeader", "Compressor", "Airway", "DefibMeds"];

export interface VitalsPayload {
  heart_rate: number;
  spo2: number;
  etco2: number;
  bp_sys: number;
  bp_dia: number;
  resp_rate: number;
}

export interface LogEvent {
  seq: number;
  time: number;
  actor: string;
  kind: string;
  origin: "External" | "Internal";
  payload: Record<string, unknown>;
}

export interface AlertPayload {
  rule_id: string;
  category: string;
  severity: "Info" | "Warning" | "Critical";
  message: string;
  target: string;
}

export interface Snapshot {
  protocol: number;
  phase: "Running" | "Ended";
  clock: number;
  scenario_id: string;
  patient: Record<string, unknown>;
  vitals: VitalsPayload;
  roster: Record<string, string>;
  spectator_count: number;
  state_hash: string;
  role_matrix: Record<string, string[]>;
  recent_events: LogEvent[];
}

export type ServerMessage =
  | { type: "hello_ok"; protocol: number; session_id: string }
  | { type: "joined"; role: Role; session_id: string; client_id: string }
  | { type: "join_denied"; reason: string }
  | { type: "snapshot"; snapshot: Snapshot }
  | { type: "event"; event: LogEvent }
  | { type: "alert"; time_ms: number; alert: AlertPayload }
  | { type: "vitals"; time_ms: number; vitals: VitalsPayload }
  | { type: "rejected"; action: string; reason: string; time_ms: number }
  | { type: "session_ended"; reason: string }
  | { type: "error"; message: string };

export type ClientMessage =
  | { type: "hello"; protocol: number }
  | { type: "join"; role: Role; client_id?: string }
  | { type: "action"; kind: string; params: Record<string, unknown> }
  | {
      type: "utterance";
      text: string;
      tags: string[];
      addressee: Role | null;
      orders_action: string | null;
    }
  | { type: "end"; reason: string };

const SERVER_TYPES = new Set([
  "hello_ok", "joined", "join_denied", "snapshot", "event", "alert",
  "vitals", "rejected", "session_ended", "error",
]);

export function parseServerMessage(raw: string): ServerMessage {
  let parsed: unknown;
  try {
    parsed = JSON.parse(raw);
  } catch (err) {
    throw new Error(`unparseable server frame: ${(err as Error).message}`);
  }
  if (typeof parsed !== "object" || parsed === null || Array.isArray(parsed)) {
    throw new Error("server frame must be a JSON object");
  }
  const message = parsed as { type?: unknown };
  if (typeof message.type !== "string" || !SERVER_TYPES.has(message.type)) {
    throw new Error(`unknown server message type ${String(message.type)}`);
  }
  return parsed as ServerMessage;
}

export interface LogHeader {
  schema_version: number;
  scenario_id: string;
  seed: number;
  tick_ms: number;
  vitals_sample_every_ms: number;
  roster: Record<string, string>;
  started_at: string;
  scenario: { initial_rhythm: string; [key: string]: unknown };
}

export interface ParsedLog {
  header: LogHeader;
  events: LogEvent[];
}

/** Parse .cts text: one header line, then one canonical event per line. */
export function parseLogText(text: string): ParsedLog {
  const lines = text.split("\n").filter((line) => line.length > 0);
  if (lines.length === 0) {
    throw new Error("empty log file");
  }
  const header = JSON.parse(lines[0]) as LogHeader;
  if (header.schema_version !== LOG_SCHEMA_VERSION) {
    throw new Error(`unsupported log schema_version ${header.schema_version}`);
  }
  const events: LogEvent[] = [];
  for (let i = 1; i < lines.length; i++) {
    const event = JSON.parse(lines[i]) as LogEvent;
    if (event.seq !== i - 1) {
      throw new Error(`seq gap at line ${i + 1}: expected ${i - 1}, got ${event.seq}`);
    }
    events.push(event);
  }
  return { header, events };
}

export interface CoverageCell {
  action: string;
  status: "Done" | "DoneLate" | "Missed";
  latency_ms: number | null;
  window_ms: number | null;
}

export interface CoverageEpisode {
  episode: number;
  rhythm: string;
  onset_ms: number;
  end_ms: number;
  cells: CoverageCell[];
}

export interface TimelineMarker {
  time_ms: number;
  kind: "transition" | "alert" | "directive" | "missed_deadline";
  label: string;
}

export interface CrmReport {
  schema_version: number;
  scenario_id: string;
  seed: number;
  session_ms: number;
  comm_frequency: { per_role: Record<string, number>; team_total: number; window_ms: number[] };
  task_distribution: {
    per_role: Record<string, { count: number; share: number }>;
    total_actions: number;
    balance: number;
    vacuous?: boolean;
  };
  response_times: {
    state_required: Array<Record<string, unknown>>;
    order_to_action: Array<Record<string, unknown>>;
  };
  closed_loop: {
    loops: Array<Record<string, unknown>>;
    rate: number;
    vacuous: boolean;
    directives: number;
    closed: number;
  };
  coverage: CoverageEpisode[];
  learning_points: Array<{ state: string; linked_action: string | null; text: string; reason: string }>;
  error_summary: Array<Record<string, unknown>>;
  timeline_markers: TimelineMarker[];
  params: { w1_ack_ms: number; w2_report_ms: number };
}

/** Parse and schema-check a report document; refuses partial renders. */
export function parseReport(text: string): CrmReport {
  const doc = JSON.parse(text) as CrmReport;
  if (doc.schema_version !== REPORT_SCHEMA_VERSION) {
    throw new Error(`unsupported report schema_version ${doc.schema_version}`);
  }
  return doc;
}
