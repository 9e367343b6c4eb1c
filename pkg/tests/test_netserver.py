import json
import time

import pytest
from fastapi.testclient import TestClient

from codeteam.logstore import loads_log
from codeteam.netserver import build_app
from codeteam.session import PROTOCOL_VERSION

from conftest import make_scenario


ROLES = ["TeamLeader", "Compressor", "Airway", "DefibMeds"]


@pytest.fixture()
def app(tmp_path):
    # fast ticking so sim time visibly advances during the test
    return build_app(make_scenario(), seed=21, realtime_scale=50.0, log_path=tmp_path / "live.cts")


def hello(ws, protocol=PROTOCOL_VERSION):
    ws.send_text(json.dumps({"type": "hello", "protocol": protocol}))
    return json.loads(ws.receive_text())


def join(ws, role, client_id=None):
    message = {"type": "join", "role": role}
    if client_id:
        message["client_id"] = client_id
    ws.send_text(json.dumps(message))
    return json.loads(ws.receive_text())


def recv_until(ws, mtype, limit=200):
    for _ in range(limit):
        message = json.loads(ws.receive_text())
        if message["type"] == mtype:
            return message
    raise AssertionError(f"no {mtype} within {limit} messages")


class TestHandshake:
    def test_hello_join_joined(self, app):
        with TestClient(app) as client:
            with client.websocket_connect("/ws") as ws:
                ok = hello(ws)
                assert ok["type"] == "hello_ok"
                assert ok["protocol"] == PROTOCOL_VERSION
                reply = join(ws, "TeamLeader", "alice")
                assert reply["type"] == "joined"
                assert reply["role"] == "TeamLeader"

    def test_version_mismatch_denied(self, app):
        with TestClient(app) as client:
            with client.websocket_connect("/ws") as ws:
                reply = hello(ws, protocol=99)
                assert reply["type"] == "join_denied"
                assert reply["reason"] == "VersionMismatch"

    def test_message_before_hello_closes(self, app):
        with TestClient(app) as client:
            with client.websocket_connect("/ws") as ws:
                ws.send_text(json.dumps({"type": "join", "role": "TeamLeader"}))
                reply = json.loads(ws.receive_text())
                assert reply["type"] == "error"


class TestSessionFlow:
    def test_four_join_starts_and_broadcasts(self, app):
        with TestClient(app) as client:
            sockets = []
            try:
                for role in ROLES:
                    ws = client.websocket_connect("/ws").__enter__()
                    sockets.append(ws)
                    hello(ws)
                    reply = join(ws, role)
                    assert reply["type"] == "joined", reply
                # everyone receives SessionStart broadcast
                for ws in sockets:
                    ev = recv_until(ws, "event")
                    assert ev["event"]["kind"] == "SessionStart"
            finally:
                for ws in sockets:
                    ws.__exit__(None, None, None)

    def test_fifth_trainee_denied_spectators_unlimited(self, app):
        with TestClient(app) as client:
            sockets = []
            try:
                for role in ROLES:
                    ws = client.websocket_connect("/ws").__enter__()
                    sockets.append(ws)
                    hello(ws)
                    join(ws, role)
                late = client.websocket_connect("/ws").__enter__()
                sockets.append(late)
                hello(late)
                denied = join(late, "TeamLeader")
                assert denied["type"] == "join_denied"
                assert denied["reason"] == "RoleTaken"
                spectator = join(late, "Spectator")
                assert spectator["type"] == "joined"
                # a late spectator gets a snapshot immediately
                snap = recv_until(late, "snapshot")
                assert snap["snapshot"]["phase"] in ("Running", "Ended")
                assert len(snap["snapshot"]["state_hash"]) == 16
            finally:
                for ws in sockets:
                    ws.__exit__(None, None, None)

    def test_action_round_trip_and_rejection_unicast(self, app):
        with TestClient(app) as client:
            sockets = {}
            try:
                for role in ROLES:
                    ws = client.websocket_connect("/ws").__enter__()
                    sockets[role] = ws
                    hello(ws)
                    join(ws, role)
                comp = sockets["Compressor"]
                comp.send_text(json.dumps({"type": "action", "kind": "StartCompressions", "params": {}}))
                ev = recv_until(comp, "event")
                while ev["event"]["kind"] != "ActionPerformed":
                    ev = recv_until(comp, "event")
                assert ev["event"]["payload"]["action"] == "StartCompressions"
                assert ev["event"]["actor"] == "Compressor"
                # a not-permitted action comes back as a rejected unicast
                comp.send_text(json.dumps({"type": "action", "kind": "DeliverShock", "params": {}}))
                rejected = recv_until(comp, "rejected")
                assert rejected["reason"] == "RoleNotPermitted"
            finally:
                for ws in sockets.values():
                    ws.__exit__(None, None, None)

    def test_utterance_lands_in_log(self, app, tmp_path):
        with TestClient(app) as client:
            sockets = {}
            try:
                for role in ROLES:
                    ws = client.websocket_connect("/ws").__enter__()
                    sockets[role] = ws
                    hello(ws)
                    join(ws, role)
                leader = sockets["TeamLeader"]
                leader.send_text(json.dumps({
                    "type": "utterance", "text": "pads on now", "tags": ["Directive"],
                    "addressee": "DefibMeds", "orders_action": "AttachPads",
                }))
                ev = recv_until(leader, "event")
                while ev["event"]["kind"] != "Utterance":
                    ev = recv_until(leader, "event")
                assert ev["event"]["payload"]["text"] == "pads on now"
                # and in the downloadable log
                response = client.get("/log")
                assert response.status_code == 200
                log = loads_log(response.text.rstrip("\n") + "\n")
                texts = [e.payload["text"] for e in log.events if e.kind.value == "Utterance"]
                assert "pads on now" in texts
            finally:
                for ws in sockets.values():
                    ws.__exit__(None, None, None)

    def test_leader_ends_session_report_available(self, app):
        with TestClient(app) as client:
            sockets = {}
            try:
                for role in ROLES:
                    ws = client.websocket_connect("/ws").__enter__()
                    sockets[role] = ws
                    hello(ws)
                    join(ws, role)
                assert client.get("/report").status_code == 409  # not ended yet
                deadline = time.time() + 5.0
                while time.time() < deadline:  # let the ticker advance sim time
                    if client.get("/healthz").json()["clock"] >= 1000:
                        break
                    time.sleep(0.02)
                sockets["TeamLeader"].send_text(json.dumps({"type": "end", "reason": "Completed"}))
                ended = recv_until(sockets["TeamLeader"], "session_ended")
                assert ended["reason"] == "Completed"
                response = client.get("/report")
                assert response.status_code == 200
                doc = response.json()
                assert doc["schema_version"] == 1
                assert "coverage" in doc and "closed_loop" in doc
            finally:
                for ws in sockets.values():
                    ws.__exit__(None, None, None)

    def test_snapshot_hash_matches_live(self, app):
        with TestClient(app) as client:
            sockets = []
            try:
                for role in ROLES:
                    ws = client.websocket_connect("/ws").__enter__()
                    sockets.append(ws)
                    hello(ws)
                    join(ws, role)
                snap = client.get("/snapshot").json()
                hub = app.state.hub
                assert snap["state_hash"] == f"{hub.session.state_hash_now():016x}"
                assert sorted(snap["roster"]) == sorted(ROLES)
            finally:
                for ws in sockets:
                    ws.__exit__(None, None, None)


class TestBroadcastCompleteness:
    def test_events_arrive_exactly_once_in_seq_order(self, app):
        with TestClient(app) as client:
            sockets = {}
            try:
                for role in ROLES:
                    ws = client.websocket_connect("/ws").__enter__()
                    sockets[role] = ws
                    hello(ws)
                    join(ws, role)
                leader = sockets["TeamLeader"]
                for kind in ("CheckPulse", "CheckRhythm", "OrderEkg", "OrderXray"):
                    leader.send_text(json.dumps({"type": "action", "kind": kind, "params": {}}))
                leader.send_text(json.dumps({"type": "end", "reason": "Completed"}))
                seqs = []
                while True:
                    message = json.loads(leader.receive_text())
                    if message["type"] == "event":
                        seqs.append(message["event"]["seq"])
                        if message["event"]["kind"] == "SessionEnd":
                            break
                # exactly once, gapless, in order, from the first event on
                assert seqs == list(range(len(seqs)))
            finally:
                for ws in sockets.values():
                    ws.__exit__(None, None, None)

    def test_four_trainees_plus_ten_spectators_end_to_end(self, app):
        with TestClient(app) as client:
            sockets = []
            try:
                for role in ROLES:
                    ws = client.websocket_connect("/ws").__enter__()
                    sockets.append(ws)
                    hello(ws)
                    assert join(ws, role)["type"] == "joined"
                for i in range(10):
                    ws = client.websocket_connect("/ws").__enter__()
                    sockets.append(ws)
                    hello(ws)
                    assert join(ws, "Spectator", f"viewer-{i}")["type"] == "joined"
                hub = app.state.hub
                assert len(hub.session.spectators) == 10
                assert len(hub.session.roster) == 4
                # one more trainee claim still bounces
                extra = client.websocket_connect("/ws").__enter__()
                sockets.append(extra)
                hello(extra)
                assert join(extra, "Compressor")["type"] == "join_denied"
            finally:
                for ws in sockets:
                    ws.__exit__(None, None, None)


class TestHttp:
    def test_healthz(self, app):
        with TestClient(app) as client:
            doc = client.get("/healthz").json()
            assert doc["ok"] is True
            assert doc["phase"] == "Lobby"

    def test_scenario_endpoint(self, app):
        with TestClient(app) as client:
            doc = client.get("/scenario").json()
            assert doc["id"] == "test-vf"

    def test_snapshot_in_lobby_409(self, app):
        with TestClient(app) as client:
            assert client.get("/snapshot").status_code == 409
