"""Scripted bot trainees: timed action/utterance entries per role, so full
sessions run headless and reproducibly with no humans or UI attached."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ParseError
from .logstore import SessionLog, build_log
from .model import ActionKind, Role, SimTime, TRAINEE_ROLES
from .scenario import ScenarioDef
from .session import Session, SessionConfig

BOT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class BotEntry:
    role: Role
    time_ms: SimTime
    action: ActionKind | None = None
    params: dict | None = None
    utterance: dict | None = None  # {text, tags, addressee, orders_action}


@dataclass(frozen=True)
class BotScript:
    entries: tuple[BotEntry, ...]
    duration_ms: SimTime


def _parse_entry(role: Role, item: dict, path: str) -> BotEntry:
    time_ms = item.get("time_ms")
    if not isinstance(time_ms, int) or time_ms < 0:
        raise ParseError("time_ms must be a non-negative integer", path=f"{path}.time_ms")
    has_action = "action" in item
    has_utterance = "utterance" in item
    if has_action == has_utterance:
        raise ParseError("entry needs exactly one of action/utterance", path=path)
    if has_action:
        spec = item["action"]
        try:
            kind = ActionKind(spec["kind"])
        except (KeyError, ValueError):
            raise ParseError(f"unknown action kind {spec.get('kind')!r}", path=f"{path}.action")
        params = spec.get("params", {})
        if not isinstance(params, dict):
            raise ParseError("params must be an object", path=f"{path}.action.params")
        return BotEntry(role=role, time_ms=time_ms, action=kind, params=params)
    spec = item["utterance"]
    if not isinstance(spec, dict) or not spec.get("text"):
        raise ParseError("utterance needs non-empty text", path=f"{path}.utterance")
    return BotEntry(role=role, time_ms=time_ms, utterance=spec)


def load_botscript(doc: str | dict) -> BotScript:
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", path=f"offset {exc.pos}")
    if not isinstance(doc, dict):
        raise ParseError("bot script must be a JSON object")
    if doc.get("schema_version", BOT_SCHEMA_VERSION) != BOT_SCHEMA_VERSION:
        raise ParseError(f"unsupported schema_version {doc.get('schema_version')!r}", path="schema_version")
    bots = doc.get("bots", {})
    if not isinstance(bots, dict):
        raise ParseError("bots must be an object keyed by role", path="bots")
    entries: list[BotEntry] = []
    for role_name, items in bots.items():
        try:
            role = Role(role_name)
        except ValueError:
            raise ParseError(f"unknown role {role_name!r}", path=f"bots.{role_name}")
        last = None
        for i, item in enumerate(items):
            entry = _parse_entry(role, item, f"bots.{role_name}[{i}]")
            if last is not None and entry.time_ms < last:
                raise ParseError("entry times must be non-decreasing per role", path=f"bots.{role_name}[{i}]")
            last = entry.time_ms
            entries.append(entry)
    duration = doc.get("duration_ms", 0)
    if not isinstance(duration, int) or duration < 0:
        raise ParseError("duration_ms must be a non-negative integer", path="duration_ms")
    role_order = {role: i for i, role in enumerate(TRAINEE_ROLES)}
    ordered = sorted(
        enumerate(entries), key=lambda pair: (pair[1].time_ms, role_order[pair[1].role], pair[0])
    )
    return BotScript(entries=tuple(e for _, e in ordered), duration_ms=duration)


def load_botscript_file(path: str | Path) -> BotScript:
    return load_botscript(Path(path).read_text(encoding="utf-8"))


def builtin_botscript_names() -> list[str]:
    root = resources.files("codeteam") / "botscripts"
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def load_builtin_botscript(name: str) -> BotScript:
    path = resources.files("codeteam") / "botscripts" / f"{name}.json"
    return load_botscript(path.read_text(encoding="utf-8"))


def bot_client_id(role: Role) -> str:
    return f"bot:{role.value}"


def run_scripted_session(
    scenario: ScenarioDef,
    script: BotScript,
    seed: int,
    tick_ms: int = 100,
    vitals_sample_every_ms: int = 1000,
) -> SessionLog:
    """Run a full headless session as fast as logical time allows: join four
    bots, submit each entry at the first tick at or past its time, tick out the
    remaining duration, end, and return the closed log."""
    cfg = SessionConfig(
        scenario=scenario,
        seed=seed,
        tick_ms=tick_ms,
        vitals_sample_every_ms=vitals_sample_every_ms,
    )
    sess = Session(cfg)
    for role in TRAINEE_ROLES:
        result, _ = sess.join(bot_client_id(role), role)
        assert result.granted
    for entry in script.entries:
        while sess.clock < entry.time_ms:
            sess.tick()
        if entry.action is not None:
            sess.submit_action(bot_client_id(entry.role), entry.action, entry.params or {})
        else:
            spec = entry.utterance or {}
            sess.add_utterance(
                entry.role,
                spec["text"],
                tags=tuple(spec.get("tags", ())),
                addressee=Role(spec["addressee"]) if spec.get("addressee") else None,
                orders_action=ActionKind(spec["orders_action"]) if spec.get("orders_action") else None,
            )
    while sess.clock < script.duration_ms:
        sess.tick()
    sess.end("Completed")
    return build_log(sess.header_dict(), sess.events)
