/**
 * Live trainee view state. Every field is derived from received server
 * messages: the client never simulates or predicts patient state, so each
 * rendered fact traces to a message (auditable by intercepting the stream).
 */

import {
  AlertPayload,
  LogEvent,
  Role,
  ServerMessage,
  Snapshot,
  VitalsPayload,
} from "./protocol.js";

export class RingBuffer<T> {
  private items: T[] = [];

  constructor(readonly capacity: number) {}

  push(item: T): void {
    this.items.push(item);
    if (this.items.length > this.capacity) {
      this.items.shift();
    }
  }

  toArray(): T[] {
    return [...this.items];
  }

  get length(): number {
    return this.items.length;
  }

  last(): T | undefined {
    return this.items[this.items.length - 1];
  }
}

export interface VitalsPoint {
  time: number;
  vitals: VitalsPayload;
}

export interface AlertToast {
  time: number;
  alert: AlertPayload;
}

export interface RejectionNotice {
  time: number;
  action: string;
  reason: string;
}

export type ConnectionState = "idle" | "joined" | "denied" | "ended" | "closed";

export class LiveViewModel {
  connection: ConnectionState = "idle";
  role: Role | null = null;
  sessionId: string | null = null;
  clock = 0;
  rhythm: string | null = null;
  phase: string | null = null;
  palette: string[] = [];
  roster: Record<string, string> = {};
  spectatorCount = 0;
  stateHash: string | null = null;
  endReason: string | null = null;
  lastError: string | null = null;
  readonly vitalsSeries = new RingBuffer<VitalsPoint>(600);
  readonly alerts = new RingBuffer<AlertToast>(20);
  readonly eventFeed = new RingBuffer<LogEvent>(200);
  readonly rejections = new RingBuffer<RejectionNotice>(20);

  /** The single mutation entry point: apply one received server message. */
  apply(message: ServerMessage): void {
    switch (message.type) {
      case "joined":
        this.connection = "joined";
        this.role = message.role;
        this.sessionId = message.session_id;
        break;
      case "join_denied":
        this.connection = "denied";
        this.lastError = message.reason;
        break;
      case "snapshot":
        this.applySnapshot(message.snapshot);
        break;
      case "event":
        this.applyEvent(message.event);
        break;
      case "alert":
        // server-side modulation decides what arrives; no client rate limiting
        this.alerts.push({ time: message.time_ms, alert: message.alert });
        break;
      case "vitals":
        this.vitalsSeries.push({ time: message.time_ms, vitals: message.vitals });
        this.clock = Math.max(this.clock, message.time_ms);
        break;
      case "rejected":
        this.rejections.push({ time: message.time_ms, action: message.action, reason: message.reason });
        break;
      case "session_ended":
        this.connection = "ended";
        this.endReason = message.reason;
        break;
      case "error":
        this.lastError = message.message;
        break;
      case "hello_ok":
        break;
    }
  }

  private applySnapshot(snapshot: Snapshot): void {
    this.clock = snapshot.clock;
    this.phase = snapshot.phase;
    this.rhythm = String(snapshot.patient["rhythm"] ?? "");
    this.roster = snapshot.roster;
    this.spectatorCount = snapshot.spectator_count;
    this.stateHash = snapshot.state_hash;
    // the action palette is exactly this role's permission-matrix row
    if (this.role !== null && this.role !== "Spectator") {
      this.palette = snapshot.role_matrix[this.role] ?? [];
    } else {
      this.palette = [];
    }
    for (const event of snapshot.recent_events) {
      this.eventFeed.push(event);
    }
  }

  private applyEvent(event: LogEvent): void {
    this.eventFeed.push(event);
    this.clock = Math.max(this.clock, event.time);
    if (event.kind === "StateTransition") {
      this.rhythm = String(event.payload["to"]);
    } else if (event.kind === "SessionStart") {
      this.phase = "Running";
    } else if (event.kind === "SessionEnd") {
      this.phase = "Ended";
    } else if (event.kind === "VitalsSample") {
      const vitals = event.payload["vitals"] as VitalsPayload;
      const last = this.vitalsSeries.last();
      if (last === undefined || last.time !== event.time) {
        this.vitalsSeries.push({ time: event.time, vitals });
      }
    }
  }
}
