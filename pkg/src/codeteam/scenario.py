"""Authorable scenario definitions: initial condition, scripted events,
required actions per state, learning points, drug formulary, and validation.

Scenarios are single JSON documents with a schema version. Loading applies
defaults for every omitted physiology field and normalizes the document, so
load -> serialize -> load is a fixed point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import DomainError, ParseError
from .feedback import FeedbackSettings
from .model import (
    NON_SHOCKABLE_RHYTHMS,
    SHOCKABLE_RHYTHMS,
    TRAINEE_ROLES,
    ActionKind,
    Rhythm,
    Role,
    SimTime,
)
from .physiology import DETERIORATION_TARGET, PhysioParams

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ScriptedEvent:
    """A pre-programmed event: exactly one of transition_to, vitals, cue."""

    time_ms: SimTime
    transition_to: Rhythm | None = None
    vitals: dict | None = None  # partial vitals override, field -> value
    cue: str | None = None

    def effect_kind(self) -> str:
        if self.transition_to is not None:
            return "transition"
        if self.vitals is not None:
            return "vitals"
        return "cue"

    def to_doc(self) -> dict:
        d: dict = {"time_ms": self.time_ms}
        if self.transition_to is not None:
            d["transition_to"] = self.transition_to.value
        if self.vitals is not None:
            d["vitals"] = dict(self.vitals)
        if self.cue is not None:
            d["cue"] = self.cue
        return d


@dataclass(frozen=True)
class RequiredAction:
    state: Rhythm
    action: ActionKind
    window_ms: int | None = None

    def to_doc(self) -> dict:
        d: dict = {"state": self.state.value, "action": self.action.value}
        if self.window_ms is not None:
            d["window_ms"] = self.window_ms
        return d


@dataclass(frozen=True)
class LearningPoint:
    state: Rhythm
    text: str
    linked_action: ActionKind | None = None

    def to_doc(self) -> dict:
        d: dict = {"state": self.state.value, "text": self.text}
        if self.linked_action is not None:
            d["linked_action"] = self.linked_action.value
        return d


@dataclass(frozen=True)
class DrugRule:
    drug: str
    dose_mg: float
    min_repeat_interval_ms: int
    indicated_rhythms: frozenset[Rhythm]

    def to_doc(self) -> dict:
        return {
            "drug": self.drug,
            "dose_mg": self.dose_mg,
            "min_repeat_interval_ms": self.min_repeat_interval_ms,
            "indicated_rhythms": sorted(r.value for r in self.indicated_rhythms),
        }


DEFAULT_FORMULARY: tuple[DrugRule, ...] = (
    DrugRule(
        drug="epinephrine",
        dose_mg=1.0,
        min_repeat_interval_ms=180_000,
        indicated_rhythms=frozenset(SHOCKABLE_RHYTHMS | NON_SHOCKABLE_RHYTHMS),
    ),
    DrugRule(
        drug="amiodarone",
        dose_mg=300.0,
        min_repeat_interval_ms=300_000,
        indicated_rhythms=frozenset(SHOCKABLE_RHYTHMS),
    ),
)


@dataclass(frozen=True)
class ScenarioDef:
    id: str
    title: str = ""
    initial_rhythm: Rhythm = Rhythm.VF
    physio: PhysioParams = field(default_factory=PhysioParams)
    scripted: tuple[ScriptedEvent, ...] = ()
    required: tuple[RequiredAction, ...] = ()
    learning_points: tuple[LearningPoint, ...] = ()
    formulary: tuple[DrugRule, ...] = DEFAULT_FORMULARY
    feedback: FeedbackSettings = field(default_factory=FeedbackSettings)
    role_matrix: dict | None = None  # Role -> frozenset[ActionKind] override


@dataclass(frozen=True)
class Issue:
    severity: str  # "Error" | "Warning"
    path: str
    message: str


def _require(doc: dict, key: str, path: str):
    if key not in doc:
        raise ParseError("missing required field", path=f"{path}.{key}" if path else key)
    return doc[key]


def _parse_enum(enum_cls, token, path: str):
    try:
        return enum_cls(token)
    except (ValueError, KeyError):
        raise ParseError(f"unknown {enum_cls.__name__} name {token!r}", path=path)


def _parse_scripted(items, path: str) -> tuple[ScriptedEvent, ...]:
    out = []
    last_time = None
    for i, item in enumerate(items):
        p = f"{path}[{i}]"
        if not isinstance(item, dict):
            raise ParseError("scripted event must be an object", path=p)
        time_ms = _require(item, "time_ms", p)
        if not isinstance(time_ms, int) or time_ms < 0:
            raise ParseError("time_ms must be a non-negative integer", path=f"{p}.time_ms")
        if last_time is not None and time_ms <= last_time:
            raise ParseError(
                f"scripted times must be strictly increasing ({time_ms} after {last_time})",
                path=f"{p}.time_ms",
            )
        last_time = time_ms
        effects = [k for k in ("transition_to", "vitals", "cue") if k in item]
        if len(effects) != 1:
            raise ParseError("exactly one of transition_to/vitals/cue required", path=p)
        transition_to = None
        vitals = None
        cue = None
        if "transition_to" in item:
            transition_to = _parse_enum(Rhythm, item["transition_to"], f"{p}.transition_to")
        elif "vitals" in item:
            vitals = item["vitals"]
            if not isinstance(vitals, dict) or not vitals:
                raise ParseError("vitals override must be a non-empty object", path=f"{p}.vitals")
            valid = {"heart_rate", "spo2", "etco2", "bp_sys", "bp_dia", "resp_rate"}
            for k, v in vitals.items():
                if k not in valid:
                    raise ParseError(f"unknown vitals field {k!r}", path=f"{p}.vitals")
                if not isinstance(v, (int, float)) or isinstance(v, bool):
                    raise ParseError(f"vitals field {k!r} must be a number", path=f"{p}.vitals.{k}")
            vitals = {k: float(v) for k, v in vitals.items()}
        else:
            cue = item["cue"]
            if not isinstance(cue, str) or not cue:
                raise ParseError("cue must be a non-empty string", path=f"{p}.cue")
        out.append(ScriptedEvent(time_ms=time_ms, transition_to=transition_to, vitals=vitals, cue=cue))
    return tuple(out)


def _parse_required(items, path: str) -> tuple[RequiredAction, ...]:
    out = []
    for i, item in enumerate(items):
        p = f"{path}[{i}]"
        state = _parse_enum(Rhythm, _require(item, "state", p), f"{p}.state")
        action = _parse_enum(ActionKind, _require(item, "action", p), f"{p}.action")
        window = item.get("window_ms")
        if window is not None and (not isinstance(window, int) or isinstance(window, bool)):
            raise ParseError("window_ms must be an integer", path=f"{p}.window_ms")
        out.append(RequiredAction(state=state, action=action, window_ms=window))
    return tuple(out)


def _parse_learning_points(items, path: str) -> tuple[LearningPoint, ...]:
    out = []
    for i, item in enumerate(items):
        p = f"{path}[{i}]"
        state = _parse_enum(Rhythm, _require(item, "state", p), f"{p}.state")
        text = _require(item, "text", p)
        if not isinstance(text, str):
            raise ParseError("text must be a string", path=f"{p}.text")
        linked = item.get("linked_action")
        linked_action = _parse_enum(ActionKind, linked, f"{p}.linked_action") if linked is not None else None
        out.append(LearningPoint(state=state, text=text, linked_action=linked_action))
    return tuple(out)


def _parse_formulary(items, path: str) -> tuple[DrugRule, ...]:
    out = []
    for i, item in enumerate(items):
        p = f"{path}[{i}]"
        drug = _require(item, "drug", p)
        if not isinstance(drug, str) or not drug:
            raise ParseError("drug must be a non-empty string", path=f"{p}.drug")
        dose = _require(item, "dose_mg", p)
        if not isinstance(dose, (int, float)) or isinstance(dose, bool):
            raise ParseError("dose_mg must be a number", path=f"{p}.dose_mg")
        interval = _require(item, "min_repeat_interval_ms", p)
        if not isinstance(interval, int) or isinstance(interval, bool):
            raise ParseError("min_repeat_interval_ms must be an integer", path=f"{p}.min_repeat_interval_ms")
        rhythms = _require(item, "indicated_rhythms", p)
        if not isinstance(rhythms, list):
            raise ParseError("indicated_rhythms must be a list", path=f"{p}.indicated_rhythms")
        indicated = frozenset(
            _parse_enum(Rhythm, r, f"{p}.indicated_rhythms[{j}]") for j, r in enumerate(rhythms)
        )
        out.append(
            DrugRule(
                drug=drug.lower(),
                dose_mg=float(dose),
                min_repeat_interval_ms=interval,
                indicated_rhythms=indicated,
            )
        )
    return tuple(out)


def _parse_role_matrix(doc: dict, path: str) -> dict:
    matrix = {}
    for role_name, kinds in doc.items():
        role = _parse_enum(Role, role_name, f"{path}.{role_name}")
        if not isinstance(kinds, list):
            raise ParseError("role entry must be a list of action kinds", path=f"{path}.{role_name}")
        matrix[role] = frozenset(
            _parse_enum(ActionKind, k, f"{path}.{role_name}[{i}]") for i, k in enumerate(kinds)
        )
    return matrix


def load_scenario(doc: str | dict) -> ScenarioDef:
    """Parse a scenario document (JSON text or an already-parsed object),
    applying defaults for every omitted field."""
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", path=f"offset {exc.pos}")
    if not isinstance(doc, dict):
        raise ParseError("scenario document must be a JSON object")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema_version {version!r}", path="schema_version")

    scenario_id = _require(doc, "id", "")
    if not isinstance(scenario_id, str) or not scenario_id:
        raise ParseError("id must be a non-empty string", path="id")
    initial = _parse_enum(Rhythm, _require(doc, "initial_rhythm", ""), "initial_rhythm")

    physio_doc = doc.get("physio", {})
    if not isinstance(physio_doc, dict):
        raise ParseError("physio must be an object", path="physio")
    try:
        physio = PhysioParams.from_payload(physio_doc)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad physio params: {exc}", path="physio")

    feedback_doc = doc.get("feedback", {})
    if not isinstance(feedback_doc, dict):
        raise ParseError("feedback must be an object", path="feedback")
    try:
        fb = FeedbackSettings.from_payload(feedback_doc)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad feedback settings: {exc}", path="feedback")

    role_matrix = None
    if "role_matrix" in doc:
        if not isinstance(doc["role_matrix"], dict):
            raise ParseError("role_matrix must be an object", path="role_matrix")
        role_matrix = _parse_role_matrix(doc["role_matrix"], "role_matrix")

    formulary = DEFAULT_FORMULARY
    if "formulary" in doc:
        formulary = _parse_formulary(doc["formulary"], "formulary")

    return ScenarioDef(
        id=scenario_id,
        title=doc.get("title", ""),
        initial_rhythm=initial,
        physio=physio,
        scripted=_parse_scripted(doc.get("scripted", []), "scripted"),
        required=_parse_required(doc.get("required", []), "required"),
        learning_points=_parse_learning_points(doc.get("learning_points", []), "learning_points"),
        formulary=formulary,
        feedback=fb,
        role_matrix=role_matrix,
    )


def scenario_to_doc(s: ScenarioDef) -> dict:
    """Normalized document form; load(scenario_to_doc(s)) == s."""
    doc: dict = {
        "schema_version": SCHEMA_VERSION,
        "id": s.id,
        "title": s.title,
        "initial_rhythm": s.initial_rhythm.value,
        "physio": s.physio.to_payload(),
        "scripted": [e.to_doc() for e in s.scripted],
        "required": [r.to_doc() for r in s.required],
        "learning_points": [lp.to_doc() for lp in s.learning_points],
        "formulary": [f.to_doc() for f in s.formulary],
        "feedback": s.feedback.to_payload(),
    }
    if s.role_matrix is not None:
        doc["role_matrix"] = {
            role.value: sorted(k.value for k in kinds) for role, kinds in sorted(s.role_matrix.items(), key=lambda kv: kv[0].value)
        }
    return doc


def load_scenario_file(path: str | Path) -> ScenarioDef:
    return load_scenario(Path(path).read_text(encoding="utf-8"))


def builtin_scenario_names() -> list[str]:
    root = resources.files("codeteam") / "scenarios"
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def load_builtin_scenario(name: str) -> ScenarioDef:
    path = resources.files("codeteam") / "scenarios" / f"{name}.json"
    return load_scenario(path.read_text(encoding="utf-8"))


def reachable_rhythms(s: ScenarioDef) -> set[Rhythm]:
    """Breadth-first search over the transition model plus scripted
    transitions. Conditional edges count only when their enabling parameters
    make them possible."""
    params = s.physio
    amio_bonus = params.amiodarone_shock_bonus if any(f.drug == "amiodarone" for f in s.formulary) else 0.0
    shock_possible = params.shock_success_base + params.shock_success_cpr_bonus + amio_bonus > 0.0

    def edges(r: Rhythm) -> set[Rhythm]:
        out: set[Rhythm] = set()
        timeout = params.deterioration_timeout_s.get(r)
        if timeout is not None:
            out.add(DETERIORATION_TARGET[r])
        if r in SHOCKABLE_RHYTHMS and shock_possible:
            out.add(Rhythm.SINUS_ROSC)
        if r in NON_SHOCKABLE_RHYTHMS and params.nonshockable_rosc_rate_per_min > 0.0:
            out.add(Rhythm.SINUS_ROSC)
        if r is Rhythm.SINUS_ROSC:
            out.add(Rhythm.VF)
        return out

    reachable = {s.initial_rhythm} | {e.transition_to for e in s.scripted if e.transition_to is not None}
    frontier = list(reachable)
    while frontier:
        r = frontier.pop()
        for nxt in edges(r):
            if nxt not in reachable:
                reachable.add(nxt)
                frontier.append(nxt)
    return reachable


def validate_scenario(s: ScenarioDef) -> list[Issue]:
    """Semantic checks beyond parsing. Empty result means the scenario is
    usable; Error-severity issues block session creation."""
    issues: list[Issue] = []
    p = s.physio
    for name, value in (
        ("shock_success_base", p.shock_success_base),
        ("shock_success_cpr_bonus", p.shock_success_cpr_bonus),
        ("amiodarone_shock_bonus", p.amiodarone_shock_bonus),
        ("rosc_cpr_fraction_min", p.rosc_cpr_fraction_min),
    ):
        if not 0.0 <= value <= 1.0:
            issues.append(Issue("Error", f"physio.{name}", f"probability {value} outside [0, 1]"))
    for name in ("tau_heart_rate_s", "tau_spo2_s", "tau_etco2_s", "tau_bp_s", "tau_resp_rate_s"):
        if getattr(p, name) <= 0:
            issues.append(Issue("Error", f"physio.{name}", "time constant must be > 0"))
    for rhythm, timeout in p.deterioration_timeout_s.items():
        if rhythm not in DETERIORATION_TARGET:
            issues.append(Issue("Error", "physio.deterioration_timeout_s", f"{rhythm.value} has no deterioration target"))
        if timeout <= 0:
            issues.append(Issue("Error", "physio.deterioration_timeout_s", f"{rhythm.value} timeout must be > 0"))

    last = None
    for i, ev in enumerate(s.scripted):
        if last is not None and ev.time_ms <= last:
            issues.append(Issue("Error", f"scripted[{i}]", "scripted times must be strictly increasing"))
        last = ev.time_ms

    reachable = reachable_rhythms(s)
    seen: set[tuple[Rhythm, ActionKind]] = set()
    for i, req in enumerate(s.required):
        if req.window_ms is not None and req.window_ms <= 0:
            issues.append(Issue("Error", f"required[{i}].window_ms", "window must be > 0 when present"))
        if req.state not in reachable:
            issues.append(
                Issue("Error", f"required[{i}].state", f"{req.state.value} is unreachable from {s.initial_rhythm.value}")
            )
        key = (req.state, req.action)
        if key in seen:
            issues.append(Issue("Warning", f"required[{i}]", f"duplicate required action {req.action.value} for {req.state.value}"))
        seen.add(key)

    for i, lp in enumerate(s.learning_points):
        if not lp.text.strip():
            issues.append(Issue("Error", f"learning_points[{i}].text", "learning point text must be non-empty"))

    drugs: set[str] = set()
    for i, rule in enumerate(s.formulary):
        if rule.dose_mg <= 0:
            issues.append(Issue("Error", f"formulary[{i}].dose_mg", "dose must be > 0"))
        if rule.min_repeat_interval_ms < 0:
            issues.append(Issue("Error", f"formulary[{i}].min_repeat_interval_ms", "interval must be >= 0"))
        if rule.drug in drugs:
            issues.append(Issue("Error", f"formulary[{i}].drug", f"duplicate formulary entry for {rule.drug}"))
        drugs.add(rule.drug)

    if s.feedback.cooldown_ms < 0:
        issues.append(Issue("Error", "feedback.cooldown_ms", "cooldown must be >= 0"))
    if s.feedback.max_concurrent < 1:
        issues.append(Issue("Error", "feedback.max_concurrent", "max_concurrent must be >= 1"))

    if s.role_matrix is not None:
        covered = set(s.role_matrix)
        for role in TRAINEE_ROLES:
            if role not in covered:
                issues.append(Issue("Warning", f"role_matrix.{role.value}", "trainee role has no action entry"))
    return issues


def scripted_events_due(s: ScenarioDef, t0: SimTime, t1: SimTime) -> list[ScriptedEvent]:
    """Scripted events with time in (t0, t1], in order."""
    if t0 > t1:
        raise DomainError(f"t0 ({t0}) must be <= t1 ({t1})")
    return [e for e in s.scripted if t0 < e.time_ms <= t1]
