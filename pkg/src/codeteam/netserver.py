"""The wire boundary: WebSocket session protocol plus HTTP retrieval endpoints.

One connection handler per client feeds the single session writer through an
asyncio lock; broadcasts are fan-out copies of immutable events pushed onto
per-client queues (a client whose queue overflows is disconnected rather than
allowed to stall the session). Client-supplied timestamps never reach the log.

Wire messages are single-frame JSON objects with a "type" tag:
  client -> server: hello{protocol}, join{role, client_id?},
                    action{kind, params}, utterance{text, tags, addressee,
                    orders_action}, end{reason}
  server -> client: hello_ok, joined, join_denied, snapshot, event, alert,
                    vitals, rejected, session_ended, error
"""

from __future__ import annotations

import asyncio
import contextlib
import json
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, PlainTextResponse, Response

from . import analytics, logstore
from .errors import CodeTeamError, SessionOver
from .model import ActionKind, Event, EventKind, Role, event_to_dict
from .scenario import ScenarioDef, scenario_to_doc
from .session import PROTOCOL_VERSION, Phase, Session, SessionConfig

OUTBOUND_QUEUE_DEPTH = 512


class ClientConn:
    def __init__(self, ws: WebSocket, client_id: str):
        self.ws = ws
        self.client_id = client_id
        self.role: Role | None = None
        self.queue: asyncio.Queue = asyncio.Queue(maxsize=OUTBOUND_QUEUE_DEPTH)
        self.alive = True

    def push(self, message: dict) -> bool:
        """Queue an outbound message; False means the client is too slow."""
        try:
            self.queue.put_nowait(message)
            return True
        except asyncio.QueueFull:
            self.alive = False
            return False


class SessionHub:
    """Owns the session, the log writer, and the connected clients."""

    def __init__(self, scenario: ScenarioDef, seed: int, tick_ms: int,
                 vitals_sample_every_ms: int, duration_ms: int, log_path: Path | None):
        started_at = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        self.session = Session(
            SessionConfig(
                scenario=scenario,
                seed=seed,
                tick_ms=tick_ms,
                vitals_sample_every_ms=vitals_sample_every_ms,
                started_at=started_at,
            )
        )
        self.duration_ms = duration_ms
        self.log_path = log_path
        self.writer = logstore.LogWriter(log_path) if log_path else None
        self.lock = asyncio.Lock()
        self.clients: list[ClientConn] = []
        self._client_counter = 0
        self.session_id = f"{scenario.id}-seed{seed}"

    def next_client_id(self) -> str:
        self._client_counter += 1
        return f"client-{self._client_counter}"

    def sink_events(self, events: list[Event]) -> None:
        """Persist then broadcast every appended event, in seq order."""
        if self.writer is not None:
            if not self.writer._wrote_header and any(e.kind is EventKind.SESSION_START for e in events):
                self.writer.write_header(self.session.header_dict())
            if self.writer._wrote_header:
                self.writer.write_events(events)
        for e in events:
            message = {"type": "event", "event": event_to_dict(e)}
            extra = None
            if e.kind is EventKind.ALERT_EMITTED:
                extra = {"type": "alert", "time_ms": e.time, "alert": dict(e.payload)}
            elif e.kind is EventKind.VITALS_SAMPLE:
                extra = {"type": "vitals", "time_ms": e.time, "vitals": dict(e.payload["vitals"])}
            for client in list(self.clients):
                if client.role is None:
                    continue
                if not client.push(message):
                    continue
                if extra is not None:
                    client.push(extra)
            if e.kind is EventKind.SESSION_END:
                for client in list(self.clients):
                    if client.role is not None:
                        client.push({"type": "session_ended", "reason": e.payload["reason"]})

    async def end_session(self, reason: str) -> None:
        async with self.lock:
            if self.session.phase is Phase.RUNNING:
                self.sink_events(self.session.end(reason))
            if self.writer is not None:
                self.writer.close()

    async def tick_forever(self, realtime_scale: float) -> None:
        interval = self.session.cfg.tick_ms / 1000.0 / max(realtime_scale, 1e-9)
        while True:
            await asyncio.sleep(interval)
            async with self.lock:
                if self.session.phase is not Phase.RUNNING:
                    if self.session.phase is Phase.ENDED:
                        return
                    continue
                self.sink_events(self.session.tick())
                if self.duration_ms and self.session.clock >= self.duration_ms:
                    self.sink_events(self.session.end("Completed"))
                    if self.writer is not None:
                        self.writer.close()
                    return


def build_app(
    scenario: ScenarioDef,
    seed: int = 42,
    tick_ms: int = 100,
    vitals_sample_every_ms: int = 1000,
    duration_ms: int = 0,
    realtime_scale: float = 1.0,
    log_path: Path | None = None,
) -> FastAPI:
    hub = SessionHub(scenario, seed, tick_ms, vitals_sample_every_ms, duration_ms, log_path)

    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        ticker = asyncio.create_task(hub.tick_forever(realtime_scale))
        yield
        ticker.cancel()
        with contextlib.suppress(asyncio.CancelledError):
            await ticker
        await hub.end_session("Aborted")

    app = FastAPI(lifespan=lifespan)
    app.state.hub = hub

    @app.get("/healthz")
    async def healthz():
        return {"ok": True, "phase": hub.session.phase.value, "clock": hub.session.clock}

    @app.get("/scenario")
    async def get_scenario():
        return JSONResponse(scenario_to_doc(hub.session.scenario))

    @app.get("/snapshot")
    async def get_snapshot():
        async with hub.lock:
            if hub.session.phase is Phase.LOBBY:
                return JSONResponse({"error": "NotStarted"}, status_code=409)
            return JSONResponse(hub.session.snapshot())

    @app.get("/log")
    async def get_log():
        async with hub.lock:
            log = logstore.build_log(hub.session.header_dict(), hub.session.events) \
                if hub.session.phase is not Phase.LOBBY else None
        if log is None:
            return JSONResponse({"error": "NotStarted"}, status_code=409)
        return PlainTextResponse(logstore.dumps_log(log), media_type="text/plain; charset=utf-8")

    @app.get("/report")
    async def get_report():
        async with hub.lock:
            if hub.session.phase is not Phase.ENDED:
                return JSONResponse({"error": "SessionNotEnded"}, status_code=409)
            log = logstore.build_log(hub.session.header_dict(), hub.session.events)
        try:
            report = analytics.build_report(log)
        except CodeTeamError as exc:
            return JSONResponse({"error": str(exc)}, status_code=422)
        return Response(content=report.to_json(), media_type="application/json")

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        conn = ClientConn(ws, hub.next_client_id())
        sender = asyncio.create_task(_sender_loop(conn))
        try:
            await _client_loop(hub, conn)
        except WebSocketDisconnect:
            pass
        finally:
            sender.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await sender
            await _handle_departure(hub, conn)

    return app


async def _sender_loop(conn: ClientConn) -> None:
    while True:
        message = await conn.queue.get()
        try:
            await conn.ws.send_text(json.dumps(message))
        except Exception:
            conn.alive = False
            return


async def _handle_departure(hub: SessionHub, conn: ClientConn) -> None:
    if conn in hub.clients:
        hub.clients.remove(conn)
    async with hub.lock:
        hub.session.spectators.discard(conn.client_id)
    # A trainee disconnect mid-session aborts: roles are a hard requirement.
    if conn.role is not None and conn.role is not Role.SPECTATOR:
        if hub.session.phase is Phase.RUNNING:
            await hub.end_session("Aborted")


async def _client_loop(hub: SessionHub, conn: ClientConn) -> None:
    said_hello = False
    while True:
        raw = await conn.ws.receive_text()
        try:
            message = json.loads(raw)
            if not isinstance(message, dict) or "type" not in message:
                raise ValueError("message must be an object with a type")
        except ValueError as exc:
            await conn.ws.send_text(json.dumps({"type": "error", "message": f"bad message: {exc}"}))
            await conn.ws.close(code=1002)
            return
        mtype = message["type"]

        if not said_hello:
            if mtype != "hello":
                await conn.ws.send_text(json.dumps({"type": "error", "message": "hello required first"}))
                await conn.ws.close(code=1002)
                return
            if message.get("protocol") != PROTOCOL_VERSION:
                conn.push({"type": "join_denied", "reason": "VersionMismatch"})
                await asyncio.sleep(0)  # let the sender flush
                await conn.ws.close(code=1002)
                return
            said_hello = True
            conn.push({"type": "hello_ok", "protocol": PROTOCOL_VERSION, "session_id": hub.session_id})
            continue

        if mtype == "join":
            await _handle_join(hub, conn, message)
        elif mtype == "action":
            await _handle_action(hub, conn, message)
        elif mtype == "utterance":
            await _handle_utterance(hub, conn, message)
        elif mtype == "end":
            await _handle_end(hub, conn, message)
        else:
            conn.push({"type": "error", "message": f"unknown message type {mtype!r}"})


async def _handle_join(hub: SessionHub, conn: ClientConn, message: dict) -> None:
    try:
        role = Role(message.get("role", ""))
    except ValueError:
        conn.push({"type": "join_denied", "reason": f"UnknownRole:{message.get('role')}"})
        return
    if message.get("client_id"):
        conn.client_id = str(message["client_id"])
    async with hub.lock:
        try:
            result, emitted = hub.session.join(conn.client_id, role)
        except SessionOver:
            conn.push({"type": "join_denied", "reason": "SessionOver"})
            return
        if not result.granted:
            conn.push({"type": "join_denied", "reason": result.reason})
            return
        conn.role = result.role
        if conn not in hub.clients:
            hub.clients.append(conn)
        conn.push({"type": "joined", "role": result.role.value, "session_id": hub.session_id,
                   "client_id": conn.client_id})
        if emitted:
            hub.sink_events(emitted)
        if hub.session.phase is not Phase.LOBBY:
            conn.push({"type": "snapshot", "snapshot": hub.session.snapshot()})


async def _handle_action(hub: SessionHub, conn: ClientConn, message: dict) -> None:
    if conn.role is None:
        conn.push({"type": "error", "message": "join before acting"})
        return
    try:
        kind = ActionKind(message.get("kind", ""))
    except ValueError:
        conn.push({"type": "error", "message": f"unknown action kind {message.get('kind')!r}"})
        return
    params = message.get("params", {})
    async with hub.lock:
        try:
            emitted = hub.session.submit_action(conn.client_id, kind, params)
        except CodeTeamError as exc:
            conn.push({"type": "error", "message": str(exc)})
            return
        hub.sink_events(emitted)
    for e in emitted:
        if e.kind is EventKind.ACTION_REJECTED:
            conn.push({"type": "rejected", "action": e.payload["action"], "reason": e.payload["reason"],
                       "time_ms": e.time})


async def _handle_utterance(hub: SessionHub, conn: ClientConn, message: dict) -> None:
    if conn.role is None or conn.role is Role.SPECTATOR:
        conn.push({"type": "error", "message": "only rostered trainees speak on the record"})
        return
    async with hub.lock:
        try:
            emitted = hub.session.add_utterance(
                conn.role,
                str(message.get("text", "")),
                tags=tuple(message.get("tags", ())),
                addressee=Role(message["addressee"]) if message.get("addressee") else None,
                orders_action=ActionKind(message["orders_action"]) if message.get("orders_action") else None,
            )
        except (CodeTeamError, ValueError) as exc:
            conn.push({"type": "error", "message": str(exc)})
            return
        hub.sink_events(emitted)


async def _handle_end(hub: SessionHub, conn: ClientConn, message: dict) -> None:
    if conn.role is not Role.TEAM_LEADER:
        conn.push({"type": "error", "message": "only the team leader ends the session"})
        return
    reason = str(message.get("reason", "Completed"))
    await hub.end_session(reason)


def run_server(
    scenario: ScenarioDef,
    host: str,
    port: int,
    seed: int,
    tick_ms: int,
    duration_ms: int,
    realtime_scale: float,
    log_path: Path,
) -> None:
    import uvicorn

    app = build_app(
        scenario,
        seed=seed,
        tick_ms=tick_ms,
        duration_ms=duration_ms,
        realtime_scale=realtime_scale,
        log_path=log_path,
    )
    uvicorn.run(app, host=host, port=port, log_level="warning")
