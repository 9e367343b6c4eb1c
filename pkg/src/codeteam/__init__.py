"""codeteam: deterministic, event-sourced cardiac-arrest team training engine.

Four role-assigned trainees treat a non-linearly evolving simulated patient
over a WebSocket protocol; every modality lands in one time-stamped event log;
the log replays bit-exactly and feeds the CRM analytics report.
"""

from .model import (
    ActionKind,
    Event,
    EventKind,
    Origin,
    Rhythm,
    Role,
    SimTime,
    Vitals,
    decode_event,
    encode_event,
    state_hash,
)
from .physiology import PatientState, PhysioParams, cpr_quality, rhythm_profile
from .scenario import ScenarioDef, load_scenario, load_scenario_file, validate_scenario
from .session import Session, SessionConfig
from .logstore import SessionLog, read_log, write_log, state_at, verify_determinism
from .analytics import build_report, detect_closed_loops

__version__ = "0.1.0"

__all__ = [
    "ActionKind",
    "Event",
    "EventKind",
    "Origin",
    "PatientState",
    "PhysioParams",
    "Rhythm",
    "Role",
    "ScenarioDef",
    "Session",
    "SessionConfig",
    "SessionLog",
    "SimTime",
    "Vitals",
    "build_report",
    "cpr_quality",
    "decode_event",
    "detect_closed_loops",
    "encode_event",
    "load_scenario",
    "load_scenario_file",
    "read_log",
    "rhythm_profile",
    "state_at",
    "state_hash",
    "validate_scenario",
    "verify_determinism",
    "write_log",
]
