"""Domain vocabulary, logical time, event schema, and the canonical event encoding.

Every other module speaks these types. The encoding defined here is the log
line format and the wire broadcast format: one JSON object per event with a
fixed top-level key order (seq, time, actor, kind, origin, payload) and
recursively sorted payload keys, so structurally equal events are always
byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from enum import Enum

from .errors import DecodeError, EncodingError, ValidationError

# Logical milliseconds since session start. The engine never reads wall clock
# inside simulation logic; all times enter via events.
SimTime = int

SYSTEM_ACTOR = "System"


class Role(str, Enum):
    TEAM_LEADER = "TeamLeader"
    COMPRESSOR = "Compressor"
    AIRWAY = "Airway"
    DEFIB_MEDS = "DefibMeds"
    SPECTATOR = "Spectator"


TRAINEE_ROLES = (Role.TEAM_LEADER, Role.COMPRESSOR, Role.AIRWAY, Role.DEFIB_MEDS)


class ActionKind(str, Enum):
    CHECK_RESPONSIVENESS = "CheckResponsiveness"
    CALL_FOR_HELP = "CallForHelp"
    CHECK_PULSE = "CheckPulse"
    CHECK_RHYTHM = "CheckRhythm"
    ATTACH_MONITOR = "AttachMonitor"
    ATTACH_PADS = "AttachPads"
    START_COMPRESSIONS = "StartCompressions"
    STOP_COMPRESSIONS = "StopCompressions"
    SET_COMPRESSION_RATE = "SetCompressionRate"
    CHARGE_DEFIBRILLATOR = "ChargeDefibrillator"
    DELIVER_SHOCK = "DeliverShock"
    CLEAR_PATIENT = "ClearPatient"
    INSERT_ORAL_AIRWAY = "InsertOralAirway"
    BAG_VALVE_MASK_VENTILATE = "BagValveMaskVentilate"
    INTUBATE = "Intubate"
    OBTAIN_IV_ACCESS = "ObtainIvAccess"
    ADMINISTER_DRUG = "AdministerDrug"
    PUSH_FLUIDS = "PushFluids"
    AUSCULTATE = "Auscultate"
    ORDER_EKG = "OrderEkg"
    ORDER_XRAY = "OrderXray"
    ANNOUNCE_RHYTHM = "AnnounceRhythm"


# Fixed parameter arity per action kind: name -> required JSON type.
ACTION_PARAMS: dict[ActionKind, dict[str, type]] = {
    kind: {} for kind in ActionKind
}
ACTION_PARAMS[ActionKind.SET_COMPRESSION_RATE] = {"rate": (int, float)}  # type: ignore[dict-item]
ACTION_PARAMS[ActionKind.CHARGE_DEFIBRILLATOR] = {"energy_j": (int, float)}  # type: ignore[dict-item]
ACTION_PARAMS[ActionKind.ADMINISTER_DRUG] = {"drug": str, "dose_mg": (int, float)}  # type: ignore[dict-item]
ACTION_PARAMS[ActionKind.PUSH_FLUIDS] = {"ml": (int, float)}  # type: ignore[dict-item]


def validate_action_params(kind: ActionKind, params: dict) -> None:
    """Check a params dict against the kind's fixed arity. Raises ValidationError."""
    expected = ACTION_PARAMS[kind]
    missing = set(expected) - set(params)
    extra = set(params) - set(expected)
    if missing:
        raise ValidationError(f"{kind.value}: missing params {sorted(missing)}")
    if extra:
        raise ValidationError(f"{kind.value}: unexpected params {sorted(extra)}")
    for name, typ in expected.items():
        value = params[name]
        if isinstance(value, bool) or not isinstance(value, typ):
            raise ValidationError(f"{kind.value}: param {name!r} has wrong type")
        if isinstance(value, float) and not math.isfinite(value):
            raise ValidationError(f"{kind.value}: param {name!r} is not finite")


class Rhythm(str, Enum):
    VF = "VentricularFibrillation"
    PULSELESS_VTACH = "PulselessVTach"
    ASYSTOLE = "Asystole"
    PEA = "PEA"
    SINUS_ROSC = "SinusROSC"


SHOCKABLE_RHYTHMS = frozenset({Rhythm.VF, Rhythm.PULSELESS_VTACH})
NON_SHOCKABLE_RHYTHMS = frozenset({Rhythm.ASYSTOLE, Rhythm.PEA})
ARREST_RHYTHMS = frozenset(
    {Rhythm.VF, Rhythm.PULSELESS_VTACH, Rhythm.ASYSTOLE, Rhythm.PEA}
)


@dataclass(frozen=True)
class Vitals:
    """Monitored vital signs. All fields float; invariants are enforced by the
    physiology step, not the constructor, so events can transport any values."""

    heart_rate: float
    spo2: float
    etco2: float
    bp_sys: float
    bp_dia: float
    resp_rate: float

    def to_payload(self) -> dict:
        return {
            "heart_rate": float(self.heart_rate),
            "spo2": float(self.spo2),
            "etco2": float(self.etco2),
            "bp_sys": float(self.bp_sys),
            "bp_dia": float(self.bp_dia),
            "resp_rate": float(self.resp_rate),
        }

    @classmethod
    def from_payload(cls, d: dict) -> "Vitals":
        return cls(
            heart_rate=float(d["heart_rate"]),
            spo2=float(d["spo2"]),
            etco2=float(d["etco2"]),
            bp_sys=float(d["bp_sys"]),
            bp_dia=float(d["bp_dia"]),
            resp_rate=float(d["resp_rate"]),
        )

    def is_valid(self) -> bool:
        fields = (self.heart_rate, self.spo2, self.etco2, self.bp_sys, self.bp_dia, self.resp_rate)
        if not all(math.isfinite(x) and x >= 0.0 for x in fields):
            return False
        return self.spo2 <= 100.0 and self.bp_dia <= self.bp_sys


class EventKind(str, Enum):
    ACTION_PERFORMED = "ActionPerformed"
    ACTION_REJECTED = "ActionRejected"
    STATE_TRANSITION = "StateTransition"
    VITALS_SAMPLE = "VitalsSample"
    UTTERANCE = "Utterance"
    TELEMETRY_SAMPLE = "TelemetrySample"
    ALERT_EMITTED = "AlertEmitted"
    SCRIPTED_EVENT = "ScriptedEvent"
    SESSION_START = "SessionStart"
    SESSION_END = "SessionEnd"


class Origin(str, Enum):
    # External events are inputs (actions, utterances, telemetry); Internal
    # events are reproducible engine outputs (transitions, samples, alerts).
    EXTERNAL = "External"
    INTERNAL = "Internal"


# Kinds whose payload records an input rather than an engine computation.
# A rejected action is the logged form of an external attempt: replay re-feeds
# the attempt and regenerates the (deterministic) rejection reason. SessionEnd
# carries the operator's end command (its reason exists nowhere else), so it
# is an input too; SessionStart is regenerable from the log header and stays
# internal.
EXTERNAL_KINDS = frozenset(
    {
        EventKind.ACTION_PERFORMED,
        EventKind.ACTION_REJECTED,
        EventKind.UTTERANCE,
        EventKind.TELEMETRY_SAMPLE,
        EventKind.SESSION_END,
    }
)

_VALID_ACTORS = frozenset(r.value for r in Role) | {SYSTEM_ACTOR}


@dataclass(frozen=True)
class Event:
    """One time-stamped thing that happened. seq is gapless within a log."""

    seq: int
    time: SimTime
    actor: str  # a Role value or "System"
    kind: EventKind
    payload: dict
    origin: Origin

    def role(self) -> Role | None:
        return None if self.actor == SYSTEM_ACTOR else Role(self.actor)


def event_to_dict(e: Event) -> dict:
    """Plain-dict form of an event, field names matching the canonical encoding."""
    return {
        "seq": e.seq,
        "time": e.time,
        "actor": e.actor,
        "kind": e.kind.value,
        "origin": e.origin.value,
        "payload": _canon(e.payload),
    }


def _canon(value):
    """Recursively sort dict keys so structurally equal payloads serialize identically."""
    if isinstance(value, dict):
        return {k: _canon(value[k]) for k in sorted(value)}
    if isinstance(value, (list, tuple)):
        return [_canon(v) for v in value]
    return value


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys at every level, no whitespace, no NaN."""
    try:
        return json.dumps(_canon(obj), separators=(",", ":"), allow_nan=False, ensure_ascii=True)
    except (ValueError, TypeError) as exc:
        raise EncodingError(str(exc)) from exc


def encode_event(e: Event) -> bytes:
    """Canonical single-line encoding. Equal events give identical bytes."""
    if not isinstance(e.seq, int) or isinstance(e.seq, bool) or e.seq < 0:
        raise EncodingError(f"seq must be a non-negative integer, got {e.seq!r}")
    if not isinstance(e.time, int) or isinstance(e.time, bool) or e.time < 0:
        raise EncodingError(f"time must be non-negative integer millis, got {e.time!r}")
    if e.actor not in _VALID_ACTORS:
        raise EncodingError(f"unknown actor {e.actor!r}")
    body = (
        '{"seq":%d,"time":%d,"actor":%s,"kind":%s,"origin":%s,"payload":%s}'
        % (
            e.seq,
            e.time,
            json.dumps(e.actor),
            json.dumps(e.kind.value),
            json.dumps(e.origin.value),
            canonical_json(e.payload),
        )
    )
    return body.encode("utf-8")


_TOP_KEYS = ["seq", "time", "actor", "kind", "origin", "payload"]


def decode_event(data: bytes) -> Event:
    """Inverse of encode_event. Rejects anything that is not the canonical form."""
    if not data:
        raise DecodeError("empty input", offset=0)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError(f"invalid utf-8: {exc}", offset=exc.start) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DecodeError(f"malformed JSON: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(raw, dict):
        raise DecodeError("event must be a JSON object", offset=0)
    if sorted(raw.keys()) != sorted(_TOP_KEYS):
        raise DecodeError(f"expected keys {_TOP_KEYS}, got {sorted(raw.keys())}", offset=0)
    kind_tag = raw["kind"]
    try:
        kind = EventKind(kind_tag)
    except ValueError:
        raise DecodeError(f"unknown kind tag {kind_tag!r}", offset=text.find(str(kind_tag)))
    try:
        origin = Origin(raw["origin"])
    except ValueError:
        raise DecodeError(f"unknown origin {raw['origin']!r}", offset=0)
    if not isinstance(raw["payload"], dict):
        raise DecodeError("payload must be an object", offset=0)
    if raw["actor"] not in _VALID_ACTORS:
        raise DecodeError(f"unknown actor {raw['actor']!r}", offset=0)
    event = Event(
        seq=raw["seq"],
        time=raw["time"],
        actor=raw["actor"],
        kind=kind,
        payload=raw["payload"],
        origin=origin,
    )
    try:
        reencoded = encode_event(event)
    except EncodingError as exc:
        raise DecodeError(f"non-encodable event: {exc}", offset=0) from exc
    if reencoded != data:
        raise DecodeError("bytes are not in canonical form", offset=0)
    return event


def state_hash(patient, vitals: Vitals) -> int:
    """64-bit digest of (patient state, vitals): the first 8 bytes of the
    SHA-256 of their canonical JSON, big-endian. Stable across processes."""
    doc = {"patient": patient.to_payload(), "vitals": vitals.to_payload()}
    digest = hashlib.sha256(canonical_json(doc).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
