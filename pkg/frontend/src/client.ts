/**
 * Session client: the hello/join handshake and the outbound dispatch path.
 * The transport is injectable so the browser uses the native WebSocket and
 * tests use the `ws` package.
 */

import {
  ClientMessage,
  PROTOCOL_VERSION,
  Role,
  ServerMessage,
  parseServerMessage,
} from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface JoinOutcome {
  role: Role;
  sessionId: string;
  clientId: string;
}

export class JoinDenied extends Error {
  constructor(public reason: string) {
    super(`join denied: ${reason}`);
  }
}

export class SessionClient {
  private socket: SocketLike | null = null;
  private handlers: Array<(message: ServerMessage) => void> = [];
  private closeHandlers: Array<() => void> = [];

  constructor(
    private url: string,
    private socketFactory: SocketFactory = (u) => new WebSocket(u) as unknown as SocketLike,
  ) {}

  onMessage(handler: (message: ServerMessage) => void): void {
    this.handlers.push(handler);
  }

  onClose(handler: () => void): void {
    this.closeHandlers.push(handler);
  }

  private sendRaw(message: ClientMessage): void {
    if (this.socket === null) {
      throw new Error("not connected");
    }
    this.socket.send(JSON.stringify(message));
  }

  /**
   * Open the socket, complete hello -> hello_ok -> join -> joined.
   * Rejects with JoinDenied (reason VersionMismatch, RoleTaken, ...) so the
   * caller can offer the spectator fallback.
   */
  connectAndJoin(role: Role, clientId?: string): Promise<JoinOutcome> {
    return new Promise((resolve, reject) => {
      const socket = this.socketFactory(this.url);
      this.socket = socket;
      let settled = false;

      socket.onopen = () => {
        this.sendRaw({ type: "hello", protocol: PROTOCOL_VERSION });
      };
      socket.onerror = (ev) => {
        if (!settled) {
          settled = true;
          reject(new Error(`connection failed: ${String(ev)}`));
        }
      };
      socket.onclose = () => {
        for (const handler of this.closeHandlers) {
          handler();
        }
        if (!settled) {
          settled = true;
          reject(new Error("connection closed during handshake"));
        }
      };
      socket.onmessage = (ev) => {
        const message = parseServerMessage(String(ev.data));
        if (!settled) {
          if (message.type === "hello_ok") {
            this.sendRaw({ type: "join", role, ...(clientId ? { client_id: clientId } : {}) });
            return;
          }
          if (message.type === "joined") {
            settled = true;
            resolve({ role: message.role, sessionId: message.session_id, clientId: message.client_id });
          } else if (message.type === "join_denied") {
            settled = true;
            reject(new JoinDenied(message.reason));
            return;
          }
        }
        for (const handler of this.handlers) {
          handler(message);
        }
      };
    });
  }

  /** Request a role change to spectator after a denial (new join on the same socket). */
  joinAsSpectator(clientId?: string): Promise<JoinOutcome> {
    return new Promise((resolve, reject) => {
      const socket = this.socket;
      if (socket === null) {
        reject(new Error("not connected"));
        return;
      }
      const previous = socket.onmessage;
      socket.onmessage = (ev) => {
        const message = parseServerMessage(String(ev.data));
        if (message.type === "joined") {
          socket.onmessage = previous;
          resolve({ role: message.role, sessionId: message.session_id, clientId: message.client_id });
          previous?.(ev);
          return;
        }
        if (message.type === "join_denied") {
          socket.onmessage = previous;
          reject(new JoinDenied(message.reason));
          return;
        }
        previous?.(ev);
      };
      this.sendRaw({ type: "join", role: "Spectator", ...(clientId ? { client_id: clientId } : {}) });
    });
  }

  /**
   * Send an action request. Deliberately no optimistic UI: state changes
   * render only when the resulting EventBroadcast arrives.
   */
  dispatchAction(kind: string, params: Record<string, unknown> = {}): void {
    this.sendRaw({ type: "action", kind, params });
  }

  sendUtterance(
    text: string,
    tags: string[] = [],
    addressee: Role | null = null,
    ordersAction: string | null = null,
  ): void {
    this.sendRaw({ type: "utterance", text, tags, addressee, orders_action: ordersAction });
  }

  endSession(reason = "Completed"): void {
    this.sendRaw({ type: "end", reason });
  }

  close(): void {
    this.socket?.close();
    this.socket = null;
  }
}
