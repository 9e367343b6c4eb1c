"""Authoritative session: roster enforcement, role-permission checks,
fixed-tick physiology advancement, scripted-event injection, and feedback
evaluation. The session is the sole writer of the event log and the only
place seq numbers and timestamps are assigned; client-supplied times are
ignored so there is exactly one logical clock.

Concurrency model: a Session instance is a single logical writer. Callers
(network handlers, timers, bot drivers) must serialize their calls -- the
netserver does this with one command queue. Emitted events and snapshots are
immutable values and may be shared freely.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

from . import physiology
from .errors import ActionInvalid, ClientUnknown, ConfigError, DomainError, SessionOver, ValidationError
from .feedback import Modulator, active_rules, evaluate, modulate
from .model import (
    SYSTEM_ACTOR,
    TRAINEE_ROLES,
    ActionKind,
    Event,
    EventKind,
    Origin,
    Role,
    SimTime,
    Vitals,
    event_to_dict,
    state_hash,
    validate_action_params,
)
from .rng import Prng
from .scenario import ScenarioDef, validate_scenario
from .physiology import PatientState

PROTOCOL_VERSION = 1

# Actions any trainee may perform.
SHARED_ACTIONS = frozenset({ActionKind.CALL_FOR_HELP, ActionKind.CHECK_RESPONSIVENESS})

# Who may do what, mirroring the four clinical roles. Scenario documents can
# override this entire table.
DEFAULT_ROLE_MATRIX: dict[Role, frozenset[ActionKind]] = {
    Role.TEAM_LEADER: frozenset(
        {
            ActionKind.CHECK_PULSE,
            ActionKind.CHECK_RHYTHM,
            ActionKind.ORDER_EKG,
            ActionKind.ORDER_XRAY,
            ActionKind.ANNOUNCE_RHYTHM,
        }
    ),
    Role.COMPRESSOR: frozenset(
        {
            ActionKind.START_COMPRESSIONS,
            ActionKind.STOP_COMPRESSIONS,
            ActionKind.SET_COMPRESSION_RATE,
            ActionKind.CHECK_PULSE,
        }
    ),
    Role.AIRWAY: frozenset(
        {
            ActionKind.INSERT_ORAL_AIRWAY,
            ActionKind.BAG_VALVE_MASK_VENTILATE,
            ActionKind.INTUBATE,
            ActionKind.AUSCULTATE,
        }
    ),
    Role.DEFIB_MEDS: frozenset(
        {
            ActionKind.ATTACH_MONITOR,
            ActionKind.ATTACH_PADS,
            ActionKind.CHARGE_DEFIBRILLATOR,
            ActionKind.DELIVER_SHOCK,
            ActionKind.CLEAR_PATIENT,
            ActionKind.OBTAIN_IV_ACCESS,
            ActionKind.ADMINISTER_DRUG,
            ActionKind.PUSH_FLUIDS,
        }
    ),
}

UTTERANCE_TAGS = frozenset({"Directive", "Acknowledgement", "Report"})

# Deterministic placeholder so headless runs are byte-identical; live serving
# passes the real wall clock, which is bookkeeping only and never replayed.
EPOCH_ISO = "1970-01-01T00:00:00Z"


class Phase(str, Enum):
    LOBBY = "Lobby"
    RUNNING = "Running"
    ENDED = "Ended"


@dataclass(frozen=True)
class SessionConfig:
    scenario: ScenarioDef
    seed: int
    tick_ms: int = 100
    vitals_sample_every_ms: int = 1000
    started_at: str = EPOCH_ISO


@dataclass(frozen=True)
class JoinResult:
    granted: bool
    role: Role | None = None
    reason: str | None = None


class Session:
    """One live session. Construct in Lobby, fill the four trainee roles to
    start, then drive with tick()/submit_action()/add_utterance()/end()."""

    def __init__(self, cfg: SessionConfig):
        issues = validate_scenario(cfg.scenario)
        errors = [i for i in issues if i.severity == "Error"]
        if errors:
            detail = "; ".join(f"{i.path}: {i.message}" for i in errors)
            raise ConfigError(f"scenario {cfg.scenario.id!r} failed validation: {detail}")
        if cfg.tick_ms <= 0:
            raise ConfigError(f"tick_ms must be > 0, got {cfg.tick_ms}")
        if cfg.vitals_sample_every_ms % cfg.tick_ms != 0:
            raise ConfigError(
                f"vitals_sample_every_ms ({cfg.vitals_sample_every_ms}) must be a multiple of tick_ms ({cfg.tick_ms})"
            )
        self.cfg = cfg
        self.scenario = cfg.scenario
        self.phase = Phase.LOBBY
        self.clock: SimTime = 0
        self.patient: PatientState = physiology.initial_state(cfg.scenario.initial_rhythm, cfg.scenario.physio)
        self.vitals: Vitals = physiology.rhythm_profile(cfg.scenario.initial_rhythm)
        self.rng = Prng.from_seed(cfg.seed)
        self.roster: dict[Role, str] = {}
        self.spectators: set[str] = set()
        self.events: list[Event] = []
        self.end_reason: str | None = None
        self.role_matrix = cfg.scenario.role_matrix or DEFAULT_ROLE_MATRIX
        self.rules = active_rules(cfg.scenario.feedback)
        self.modulator = Modulator(
            cooldown_ms=cfg.scenario.feedback.cooldown_ms,
            max_concurrent=cfg.scenario.feedback.max_concurrent,
        )
        self._next_seq = 0
        self._feedback_cursor = 0

    # -- event emission -------------------------------------------------

    def _emit(self, kind: EventKind, payload: dict, actor: str = SYSTEM_ACTOR,
              origin: Origin = Origin.INTERNAL, time: SimTime | None = None) -> Event:
        event = Event(
            seq=self._next_seq,
            time=self.clock if time is None else time,
            actor=actor,
            kind=kind,
            payload=payload,
            origin=origin,
        )
        self._next_seq += 1
        self.events.append(event)
        return event

    # -- roster ----------------------------------------------------------

    def join(self, client_id: str, requested: Role) -> tuple[JoinResult, list[Event]]:
        if self.phase is Phase.ENDED:
            raise SessionOver("session has ended")
        if requested is Role.SPECTATOR:
            if any(cid == client_id for cid in self.roster.values()):
                return JoinResult(granted=False, reason="AlreadyRostered"), []
            self.spectators.add(client_id)
            return JoinResult(granted=True, role=Role.SPECTATOR), []
        if self.roster.get(requested) == client_id:
            return JoinResult(granted=True, role=requested), []
        if requested in self.roster:
            return JoinResult(granted=False, reason="RoleTaken"), []
        if any(cid == client_id for cid in self.roster.values()):
            return JoinResult(granted=False, reason="AlreadyRostered"), []
        self.roster[requested] = client_id
        self.spectators.discard(client_id)
        emitted: list[Event] = []
        if self.phase is Phase.LOBBY and all(r in self.roster for r in TRAINEE_ROLES):
            self.phase = Phase.RUNNING
            emitted.append(
                self._emit(
                    EventKind.SESSION_START,
                    {
                        "scenario_id": self.scenario.id,
                        "seed": self.cfg.seed,
                        "roster": {r.value: self.roster[r] for r in TRAINEE_ROLES},
                    },
                )
            )
            emitted.append(self._emit(EventKind.VITALS_SAMPLE, {"vitals": self.vitals.to_payload()}))
        return JoinResult(granted=True, role=requested), emitted

    def role_of(self, client_id: str) -> Role | None:
        for role, cid in self.roster.items():
            if cid == client_id:
                return role
        if client_id in self.spectators:
            return Role.SPECTATOR
        return None

    # -- commands ---------------------------------------------------------

    def submit_action(self, client_id: str, kind: ActionKind, params: dict | None = None) -> list[Event]:
        """Validate against the role matrix and execute. Rejections are logged
        as events, not dropped: they are data for CRM analysis."""
        if self.phase is Phase.ENDED:
            raise SessionOver("session has ended")
        if self.phase is not Phase.RUNNING:
            raise DomainError("session is not running")
        params = params or {}
        validate_action_params(kind, params)
        role = self.role_of(client_id)
        if role is None:
            raise ClientUnknown(f"client {client_id!r} has not joined")
        if role is Role.SPECTATOR:
            return [self._reject(role, kind, params, "SpectatorReadOnly")]
        if kind not in SHARED_ACTIONS and kind not in self.role_matrix.get(role, frozenset()):
            return [self._reject(role, kind, params, "RoleNotPermitted")]
        try:
            patient, vitals, internal = physiology.apply_action(
                self.patient, self.vitals, kind, params, self.clock, self.rng, self.scenario.physio
            )
        except ActionInvalid as exc:
            return [self._reject(role, kind, params, exc.reason)]
        emitted = [
            self._emit(
                EventKind.ACTION_PERFORMED,
                {"action": kind.value, "params": params},
                actor=role.value,
                origin=Origin.EXTERNAL,
            )
        ]
        self.patient, self.vitals = patient, vitals
        for ev_kind, payload in internal:
            emitted.append(self._emit(ev_kind, payload))
        return emitted

    def _reject(self, role: Role, kind: ActionKind, params: dict, reason: str) -> Event:
        return self._emit(
            EventKind.ACTION_REJECTED,
            {"action": kind.value, "params": params, "reason": reason},
            actor=role.value,
            origin=Origin.EXTERNAL,
        )

    def add_utterance(
        self,
        speaker: Role,
        text: str,
        tags: tuple[str, ...] = (),
        addressee: Role | None = None,
        orders_action: ActionKind | None = None,
        at: SimTime | None = None,
    ) -> list[Event]:
        """Append a spoken line (live text stand-in for transcribed speech)."""
        if self.phase is Phase.ENDED:
            raise SessionOver("session has ended")
        if speaker is Role.SPECTATOR:
            raise ValidationError("spectators are observers; they do not speak on the record")
        if not text:
            raise ValidationError("utterance text must be non-empty")
        bad = set(tags) - UTTERANCE_TAGS
        if bad:
            raise ValidationError(f"unknown utterance tags {sorted(bad)}")
        payload = {
            "text": text,
            "tags": sorted(set(tags)),
            "addressee": addressee.value if addressee else None,
            "orders_action": orders_action.value if orders_action else None,
        }
        return [self._emit(EventKind.UTTERANCE, payload, actor=speaker.value, origin=Origin.EXTERNAL, time=at)]

    def add_telemetry(self, user: Role, channel: str, value: float, at: SimTime | None = None) -> list[Event]:
        """Append a biometric sample; used by replay to re-insert ingested data."""
        payload = {"channel": channel, "value": value}
        return [self._emit(EventKind.TELEMETRY_SAMPLE, payload, actor=user.value, origin=Origin.EXTERNAL, time=at)]

    def tick(self) -> list[Event]:
        """Advance one tick: inject scripted events, step physiology, sample
        vitals on schedule, then evaluate and modulate feedback."""
        if self.phase is Phase.ENDED:
            raise SessionOver("session has ended")
        if self.phase is not Phase.RUNNING:
            raise DomainError("session is not running")
        prev = self.clock
        self.clock = prev + self.cfg.tick_ms
        emitted: list[Event] = []
        scripted_transition = False

        for scripted in self.scenario.scripted:
            if not (prev < scripted.time_ms <= self.clock):
                continue
            payload: dict = {"scheduled_ms": scripted.time_ms, "effect": scripted.effect_kind()}
            if scripted.transition_to is not None:
                payload["transition_to"] = scripted.transition_to.value
            if scripted.vitals is not None:
                payload["vitals"] = dict(scripted.vitals)
            if scripted.cue is not None:
                payload["cue"] = scripted.cue
            emitted.append(self._emit(EventKind.SCRIPTED_EVENT, payload))
            if scripted.transition_to is not None:
                emitted.append(
                    self._emit(
                        EventKind.STATE_TRANSITION,
                        {"from": self.patient.rhythm.value, "to": scripted.transition_to.value, "cause": "scripted"},
                    )
                )
                self.patient = replace(self.patient, rhythm=scripted.transition_to, time_in_state=0)
                scripted_transition = True
            elif scripted.vitals is not None:
                self.vitals = replace(self.vitals, **scripted.vitals)

        self.patient, self.vitals, internal = physiology.step(
            self.patient, self.vitals, self.cfg.tick_ms, self.clock, self.rng, self.scenario.physio
        )
        for ev_kind, payload in internal:
            emitted.append(self._emit(ev_kind, payload))
        if scripted_transition:
            # The transition event is stamped at this tick's clock, so the new
            # rhythm is 0 ms old at tick end; undo the step's dt accrual (a
            # step-emitted transition in the same tick already leaves 0).
            self.patient = replace(self.patient, time_in_state=0)

        if self.clock % self.cfg.vitals_sample_every_ms == 0:
            emitted.append(self._emit(EventKind.VITALS_SAMPLE, {"vitals": self.vitals.to_payload()}))

        emitted.extend(self._run_feedback())
        return emitted

    def _run_feedback(self) -> list[Event]:
        new_events = self.events[self._feedback_cursor:]
        candidates = evaluate(
            self.rules,
            self.patient,
            self.vitals,
            new_events,
            self.scenario.formulary,
            self.scenario.feedback,
            self.clock,
        )
        chosen, self.modulator = modulate(candidates, self.modulator, self.clock)
        emitted = [self._emit(EventKind.ALERT_EMITTED, alert.to_payload()) for alert in chosen]
        self._feedback_cursor = len(self.events)
        return emitted

    def end(self, reason: str = "Completed") -> list[Event]:
        if self.phase is Phase.ENDED:
            raise SessionOver("session already ended")
        if self.phase is not Phase.RUNNING:
            raise DomainError("session is not running")
        # Final sample pins the exact closing vitals so state reconstruction
        # at the end time hashes identically to the live state. SessionEnd is
        # External: it records the end command, an input replay must re-feed.
        emitted = [
            self._emit(EventKind.VITALS_SAMPLE, {"vitals": self.vitals.to_payload()}),
            self._emit(EventKind.SESSION_END, {"reason": reason}, origin=Origin.EXTERNAL),
        ]
        self.phase = Phase.ENDED
        self.end_reason = reason
        return emitted

    # -- readers -----------------------------------------------------------

    def state_hash_now(self) -> int:
        return state_hash(self.patient, self.vitals)

    def header_dict(self) -> dict:
        from .scenario import scenario_to_doc

        return {
            "schema_version": 1,
            "scenario_id": self.scenario.id,
            "seed": self.cfg.seed,
            "tick_ms": self.cfg.tick_ms,
            "vitals_sample_every_ms": self.cfg.vitals_sample_every_ms,
            "roster": {r.value: cid for r, cid in sorted(self.roster.items(), key=lambda kv: kv[0].value)},
            "started_at": self.cfg.started_at,
            "scenario": scenario_to_doc(self.scenario),
        }

    def snapshot(self, recent: int = 50) -> dict:
        """Late-joiner view: enough to render immediately, hash included so
        clients can audit that they mirror the authoritative state."""
        if self.phase is Phase.LOBBY:
            raise DomainError("session not started")
        return {
            "protocol": PROTOCOL_VERSION,
            "phase": self.phase.value,
            "clock": self.clock,
            "scenario_id": self.scenario.id,
            "patient": self.patient.to_payload(),
            "vitals": self.vitals.to_payload(),
            "roster": {r.value: cid for r, cid in sorted(self.roster.items(), key=lambda kv: kv[0].value)},
            "spectator_count": len(self.spectators),
            "state_hash": f"{self.state_hash_now():016x}",
            "role_matrix": {
                role.value: sorted(k.value for k in (self.role_matrix.get(role, frozenset()) | SHARED_ACTIONS))
                for role in TRAINEE_ROLES
            },
            "recent_events": [event_to_dict(e) for e in self.events[-recent:]],
        }
