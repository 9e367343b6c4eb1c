"""Event-sourced persistence and replay substrate.

A session log is one header line followed by newline-delimited canonical
event records (`.cts` file): greppable, streamable, append-only. The log is
the sole input to state reconstruction (state_at), determinism verification
(verify_determinism), and all CRM analytics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

from . import physiology
from .errors import (
    IncompleteLog,
    IntegrityError,
    RangeError,
    ValidationError,
)
from .model import (
    ActionKind,
    Event,
    EventKind,
    Origin,
    Rhythm,
    Role,
    SimTime,
    Vitals,
    canonical_json,
    decode_event,
    encode_event,
)
from .scenario import ScenarioDef, load_scenario

LOG_SCHEMA_VERSION = 1

TELEMETRY_CHANNELS = frozenset(
    {"gaze_x", "gaze_y", "heart_rate", "pupil_diameter", "cognitive_load"}
)
# "temperature" is reserved: the sensor exists upstream but nothing in scope
# consumes it yet.

UTTERANCE_TAGS = frozenset({"Directive", "Acknowledgement", "Report"})


@dataclass(frozen=True)
class LogHeader:
    scenario_id: str
    seed: int
    tick_ms: int
    vitals_sample_every_ms: int
    roster: dict  # role value -> client id
    started_at: str  # wall-clock ISO-8601, bookkeeping only
    scenario: dict  # embedded normalized scenario document
    schema_version: int = LOG_SCHEMA_VERSION

    def to_line(self) -> str:
        return canonical_json(
            {
                "schema_version": self.schema_version,
                "scenario_id": self.scenario_id,
                "seed": self.seed,
                "tick_ms": self.tick_ms,
                "vitals_sample_every_ms": self.vitals_sample_every_ms,
                "roster": self.roster,
                "started_at": self.started_at,
                "scenario": self.scenario,
            }
        )

    @classmethod
    def from_line(cls, line: str) -> "LogHeader":
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IntegrityError(f"bad header line: {exc.msg}")
        if not isinstance(doc, dict):
            raise IntegrityError("header must be a JSON object")
        if doc.get("schema_version") != LOG_SCHEMA_VERSION:
            raise IntegrityError(f"unsupported log schema_version {doc.get('schema_version')!r}")
        try:
            return cls(
                scenario_id=doc["scenario_id"],
                seed=doc["seed"],
                tick_ms=doc["tick_ms"],
                vitals_sample_every_ms=doc["vitals_sample_every_ms"],
                roster=doc["roster"],
                started_at=doc["started_at"],
                scenario=doc["scenario"],
            )
        except KeyError as exc:
            raise IntegrityError(f"header missing field {exc.args[0]!r}")


@dataclass(frozen=True)
class SessionLog:
    header: LogHeader
    events: tuple[Event, ...] = ()

    def end_time(self) -> SimTime | None:
        for e in reversed(self.events):
            if e.kind is EventKind.SESSION_END:
                return e.time
        return None

    def last_time(self) -> SimTime:
        return self.events[-1].time if self.events else 0


@dataclass(frozen=True)
class TelemetrySample:
    user: Role
    channel: str
    time: SimTime
    value: float

    def validate(self) -> None:
        if self.channel not in TELEMETRY_CHANNELS:
            raise ValidationError(f"unknown telemetry channel {self.channel!r}")
        if not math.isfinite(self.value):
            raise ValidationError(f"telemetry value must be finite ({self.user.value}/{self.channel})")
        if self.channel == "cognitive_load" and not 0.0 <= self.value <= 1.0:
            raise ValidationError(f"cognitive_load must be in [0, 1], got {self.value}")


@dataclass(frozen=True)
class Utterance:
    speaker: Role
    time: SimTime
    text: str
    tags: tuple[str, ...] = ()
    addressee: Role | None = None
    orders_action: ActionKind | None = None

    def validate(self) -> None:
        if not self.text:
            raise ValidationError("utterance text must be non-empty")
        bad = set(self.tags) - UTTERANCE_TAGS
        if bad:
            raise ValidationError(f"unknown utterance tags {sorted(bad)}")


def append(log: SessionLog, e: Event) -> SessionLog:
    """Append one event, enforcing gapless seq and non-decreasing time."""
    expected = log.events[-1].seq + 1 if log.events else 0
    if e.seq != expected:
        raise IntegrityError(f"seq gap: expected {expected}, got {e.seq}")
    if log.events and e.time < log.events[-1].time:
        raise IntegrityError(f"time regression: {e.time} after {log.events[-1].time}")
    return replace(log, events=log.events + (e,))


def _check_structure(events: tuple[Event, ...]) -> None:
    starts = sum(1 for e in events if e.kind is EventKind.SESSION_START)
    ends = sum(1 for e in events if e.kind is EventKind.SESSION_END)
    if starts != 1:
        raise IntegrityError(f"log must contain exactly one SessionStart, found {starts}")
    if ends > 1:
        raise IntegrityError(f"log must contain at most one SessionEnd, found {ends}")


def build_log(header_dict: dict, events: list[Event]) -> SessionLog:
    header = LogHeader.from_line(canonical_json(header_dict))
    log = SessionLog(header=header)
    for e in events:
        log = append(log, e)
    _check_structure(log.events)
    return log


# -- file io -------------------------------------------------------------


def dumps_log(log: SessionLog) -> str:
    lines = [log.header.to_line()]
    lines.extend(encode_event(e).decode("utf-8") for e in log.events)
    return "\n".join(lines) + "\n"


def loads_log(text: str) -> SessionLog:
    lines = text.splitlines()
    if not lines:
        raise IntegrityError("empty log")
    header = LogHeader.from_line(lines[0])
    log = SessionLog(header=header)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        try:
            event = decode_event(line.encode("utf-8"))
        except Exception as exc:
            raise IntegrityError(f"line {lineno}: {exc}")
        log = append(log, event)
    _check_structure(log.events)
    return log


def write_log(log: SessionLog, path: str | Path) -> None:
    Path(path).write_text(dumps_log(log), encoding="utf-8")


def read_log(path: str | Path) -> SessionLog:
    return loads_log(Path(path).read_text(encoding="utf-8"))


class LogWriter:
    """Streaming appender for live sessions: one flush per event batch."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = None
        self._wrote_header = False

    def write_header(self, header_dict: dict) -> None:
        self._fh = self.path.open("w", encoding="utf-8")
        self._fh.write(canonical_json(header_dict) + "\n")
        self._fh.flush()
        self._wrote_header = True

    def write_events(self, events: list[Event]) -> None:
        if not self._wrote_header:
            raise IntegrityError("header must be written before events")
        for e in events:
            self._fh.write(encode_event(e).decode("utf-8") + "\n")
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


# -- multi-modal ingestion -------------------------------------------------


def _merge(log: SessionLog, new_events: list[Event]) -> SessionLog:
    """Stable time-ordered merge: existing events first at equal times, then
    ingested ones in their (already deterministic) batch order. Re-sequences."""
    merged: list[Event] = []
    existing = list(log.events)
    i = j = 0
    while i < len(existing) or j < len(new_events):
        if j >= len(new_events):
            merged.append(existing[i])
            i += 1
        elif i >= len(existing):
            merged.append(new_events[j])
            j += 1
        elif existing[i].time <= new_events[j].time:
            merged.append(existing[i])
            i += 1
        else:
            merged.append(new_events[j])
            j += 1
    resequenced = tuple(replace(e, seq=k) for k, e in enumerate(merged))
    return replace(log, events=resequenced)


def ingest_telemetry(log: SessionLog, samples: list[TelemetrySample]) -> SessionLog:
    """Merge biometric samples as TelemetrySample events at their timestamps.

    Rejects duplicates by (user, channel, time) -- including duplicates against
    samples already in the log, so re-ingesting a batch is an error rather than
    a silent double-merge.
    """
    if not samples:
        return log
    end = log.end_time()
    horizon = end if end is not None else log.last_time()
    seen: set[tuple[str, str, int]] = set()
    for e in log.events:
        if e.kind is EventKind.TELEMETRY_SAMPLE:
            seen.add((e.actor, e.payload["channel"], e.time))
    for s in samples:
        s.validate()
        if not 0 <= s.time <= horizon:
            raise RangeError(
                f"sample ({s.user.value}/{s.channel} at {s.time} ms) outside session [0, {horizon}]"
            )
        key = (s.user.value, s.channel, s.time)
        if key in seen:
            raise IntegrityError(f"duplicate telemetry sample {key}")
        seen.add(key)
    ordered = sorted(samples, key=lambda s: (s.time, s.channel, s.user.value))
    new_events = [
        Event(
            seq=0,  # re-assigned by merge
            time=s.time,
            actor=s.user.value,
            kind=EventKind.TELEMETRY_SAMPLE,
            payload={"channel": s.channel, "value": float(s.value)},
            origin=Origin.EXTERNAL,
        )
        for s in ordered
    ]
    return _merge(log, new_events)


def ingest_transcript(log: SessionLog, utterances: list[Utterance]) -> SessionLog:
    """Merge transcribed speech as Utterance events; same semantics as
    ingest_telemetry with duplicates keyed by (speaker, time, text)."""
    if not utterances:
        return log
    end = log.end_time()
    horizon = end if end is not None else log.last_time()
    seen: set[tuple[str, int, str]] = set()
    for e in log.events:
        if e.kind is EventKind.UTTERANCE:
            seen.add((e.actor, e.time, e.payload["text"]))
    for u in utterances:
        u.validate()
        if not 0 <= u.time <= horizon:
            raise RangeError(f"utterance at {u.time} ms outside session [0, {horizon}]")
        key = (u.speaker.value, u.time, u.text)
        if key in seen:
            raise IntegrityError(f"duplicate utterance {key}")
        seen.add(key)
    ordered = sorted(utterances, key=lambda u: (u.time, u.speaker.value, u.text))
    new_events = [
        Event(
            seq=0,
            time=u.time,
            actor=u.speaker.value,
            kind=EventKind.UTTERANCE,
            payload={
                "text": u.text,
                "tags": sorted(set(u.tags)),
                "addressee": u.addressee.value if u.addressee else None,
                "orders_action": u.orders_action.value if u.orders_action else None,
            },
            origin=Origin.EXTERNAL,
        )
        for u in ordered
    ]
    return _merge(log, new_events)


def utterances_from_log(log: SessionLog) -> list[Utterance]:
    out = []
    for e in log.events:
        if e.kind is not EventKind.UTTERANCE:
            continue
        p = e.payload
        out.append(
            Utterance(
                speaker=Role(e.actor),
                time=e.time,
                text=p["text"],
                tags=tuple(p.get("tags", ())),
                addressee=Role(p["addressee"]) if p.get("addressee") else None,
                orders_action=ActionKind(p["orders_action"]) if p.get("orders_action") else None,
            )
        )
    return out


# -- state reconstruction ----------------------------------------------------


def scenario_from_log(log: SessionLog) -> ScenarioDef:
    return load_scenario(log.header.scenario)


def state_at(log: SessionLog, t: SimTime) -> tuple[physiology.PatientState, Vitals, dict]:
    """Fold events up to and including time t through the same flag reducers
    the live session used. Rhythm comes from recorded StateTransitions, vitals
    from recorded VitalsSamples (step-function semantics between samples), so
    no RNG is consulted and the result at the end time hashes identically to
    the live final state."""
    if not 0 <= t <= log.last_time():
        raise RangeError(f"t={t} outside log range [0, {log.last_time()}]")
    scenario = scenario_from_log(log)
    params = scenario.physio
    patient = physiology.initial_state(scenario.initial_rhythm, params)
    vitals = physiology.rhythm_profile(scenario.initial_rhythm)
    last_transition: SimTime = 0
    for e in log.events:
        if e.time > t:
            break
        if e.kind is EventKind.ACTION_PERFORMED:
            kind = ActionKind(e.payload["action"])
            patient = physiology.apply_flags(patient, kind, e.payload["params"], e.time, params)
        elif e.kind is EventKind.STATE_TRANSITION:
            patient = replace(patient, rhythm=Rhythm(e.payload["to"]), time_in_state=0)
            last_transition = e.time
        elif e.kind is EventKind.VITALS_SAMPLE:
            vitals = Vitals.from_payload(e.payload["vitals"])
        elif e.kind is EventKind.SCRIPTED_EVENT and e.payload.get("effect") == "vitals":
            vitals = replace(vitals, **{k: float(v) for k, v in e.payload["vitals"].items()})
    window_ms = int(params.cpr_window_s * 1000)
    timeline = physiology.prune_timeline(patient.compression_timeline, t, window_ms)
    patient = replace(
        patient,
        time_in_state=t - last_transition,
        compression_timeline=timeline,
        cpr_fraction=physiology.cpr_fraction_at(timeline, t, window_ms),
    )
    return patient, vitals, dict(log.header.roster)


# -- determinism verification -------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    ok: bool
    first_divergent_seq: int | None = None
    detail: str = ""


def verify_determinism(log: SessionLog, scenario: ScenarioDef | None = None) -> Verdict:
    """Re-simulate from (scenario, seed), feeding the recorded external events
    at their recorded times, and compare every regenerated event byte-for-byte
    against the log. External inputs are fed verbatim, so any internal event
    that fails to reproduce marks the first divergence."""
    from .session import Session, SessionConfig  # deferred: session depends on this module's types

    if log.end_time() is None:
        raise IncompleteLog("log has no SessionEnd; cannot verify")
    scenario = scenario or scenario_from_log(log)
    header = log.header
    cfg = SessionConfig(
        scenario=scenario,
        seed=header.seed,
        tick_ms=header.tick_ms,
        vitals_sample_every_ms=header.vitals_sample_every_ms,
        started_at=header.started_at,
    )
    regenerated: list[Event] = []
    try:
        sess = Session(cfg)
        for role in (Role.TEAM_LEADER, Role.COMPRESSOR, Role.AIRWAY, Role.DEFIB_MEDS):
            client = header.roster.get(role.value)
            if client is None:
                return Verdict(ok=False, first_divergent_seq=0, detail=f"header roster missing {role.value}")
            _, emitted = sess.join(client, role)
            regenerated.extend(emitted)

        def advance_to(t: SimTime):
            while sess.clock + cfg.tick_ms <= t:
                regenerated.extend(sess.tick())

        for e in log.events:
            if e.kind in (EventKind.ACTION_PERFORMED, EventKind.ACTION_REJECTED):
                advance_to(e.time)
                kind = ActionKind(e.payload["action"])
                client = header.roster.get(e.actor, e.actor)
                if e.actor == Role.SPECTATOR.value:
                    client = e.actor  # spectator rejections carry no roster entry
                    if sess.role_of(client) is None:
                        sess.join(client, Role.SPECTATOR)
                regenerated.extend(sess.submit_action(client, kind, e.payload["params"]))
            elif e.kind is EventKind.UTTERANCE:
                advance_to(e.time)
                p = e.payload
                regenerated.extend(
                    sess.add_utterance(
                        Role(e.actor),
                        p["text"],
                        tags=tuple(p.get("tags", ())),
                        addressee=Role(p["addressee"]) if p.get("addressee") else None,
                        orders_action=ActionKind(p["orders_action"]) if p.get("orders_action") else None,
                        at=e.time,
                    )
                )
            elif e.kind is EventKind.TELEMETRY_SAMPLE:
                advance_to(e.time)
                regenerated.extend(
                    sess.add_telemetry(Role(e.actor), e.payload["channel"], e.payload["value"], at=e.time)
                )
            elif e.kind is EventKind.SESSION_END:
                advance_to(e.time)
                regenerated.extend(sess.end(e.payload.get("reason", "Completed")))
    except Exception as exc:  # re-simulation itself failed: treat as divergence
        seq = min(len(regenerated), len(log.events) - 1)
        return Verdict(ok=False, first_divergent_seq=seq, detail=f"re-simulation error: {exc}")

    for original, candidate in zip(log.events, regenerated):
        if encode_event(original) != encode_event(candidate):
            return Verdict(
                ok=False,
                first_divergent_seq=original.seq,
                detail=f"event {original.seq} differs: recorded {original.kind.value}, regenerated {candidate.kind.value}",
            )
    if len(regenerated) != len(log.events):
        return Verdict(
            ok=False,
            first_divergent_seq=min(len(regenerated), len(log.events)),
            detail=f"length mismatch: log has {len(log.events)} events, re-simulation produced {len(regenerated)}",
        )
    return Verdict(ok=True)
