"""Real-time clinical-error rules with modulation.

`evaluate` turns the patient state plus the events appended since the last
evaluation into candidate alerts; `modulate` rate-limits and prioritizes them
so trainees see at most a trickle of the most important ones. Both are pure:
the session owns the small Modulator value and threads it through.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Sequence

from .model import (
    ARREST_RHYTHMS,
    NON_SHOCKABLE_RHYTHMS,
    ActionKind,
    Event,
    EventKind,
    Rhythm,
    Role,
    SimTime,
    Vitals,
)
from .physiology import PatientState

TEAM_TARGET = "Team"


class Severity(str, Enum):
    INFO = "Info"
    WARNING = "Warning"
    CRITICAL = "Critical"


_SEVERITY_RANK = {Severity.CRITICAL: 0, Severity.WARNING: 1, Severity.INFO: 2}


class Category(str, Enum):
    MEDICATION = "Medication"
    CPR = "Cpr"
    DEFIBRILLATION = "Defibrillation"
    PROTOCOL = "Protocol"


@dataclass(frozen=True)
class Alert:
    rule_id: str
    category: Category
    severity: Severity
    message: str
    target: str  # a Role value or "Team"

    def to_payload(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "category": self.category.value,
            "severity": self.severity.value,
            "message": self.message,
            "target": self.target,
        }


@dataclass(frozen=True)
class FeedbackSettings:
    """Thresholds for the built-in rules plus modulator defaults. The numbers
    are configuration, not clinical constants; scenarios may override them."""

    cooldown_ms: int = 10_000
    max_concurrent: int = 2
    cpr_rate_low: float = 100.0
    cpr_rate_high: float = 120.0
    interruption_threshold_ms: int = 10_000
    clear_before_shock_window_ms: int = 5_000
    enabled_rules: tuple[str, ...] | None = None  # None = all built-ins

    def to_payload(self) -> dict:
        d = {
            "cooldown_ms": self.cooldown_ms,
            "max_concurrent": self.max_concurrent,
            "cpr_rate_low": self.cpr_rate_low,
            "cpr_rate_high": self.cpr_rate_high,
            "interruption_threshold_ms": self.interruption_threshold_ms,
            "clear_before_shock_window_ms": self.clear_before_shock_window_ms,
        }
        if self.enabled_rules is not None:
            d["enabled_rules"] = list(self.enabled_rules)
        return d

    @classmethod
    def from_payload(cls, d: dict) -> "FeedbackSettings":
        kwargs = dict(d)
        if "enabled_rules" in kwargs and kwargs["enabled_rules"] is not None:
            kwargs["enabled_rules"] = tuple(kwargs["enabled_rules"])
        return cls(**kwargs)


@dataclass(frozen=True)
class EvalContext:
    state: PatientState
    vitals: Vitals
    new_events: tuple[Event, ...]
    formulary: tuple  # of scenario.DrugRule (duck-typed to avoid a cycle)
    settings: FeedbackSettings
    now: SimTime


@dataclass(frozen=True)
class FeedbackRule:
    id: str
    category: Category
    severity: Severity
    target: str
    predicate: Callable[[EvalContext], list[str]]  # returns alert messages

    def run(self, ctx: EvalContext) -> list[Alert]:
        return [
            Alert(rule_id=self.id, category=self.category, severity=self.severity, message=m, target=self.target)
            for m in self.predicate(ctx)
        ]


def _new_actions(ctx: EvalContext, kind: ActionKind) -> list[Event]:
    return [
        e
        for e in ctx.new_events
        if e.kind is EventKind.ACTION_PERFORMED and e.payload.get("action") == kind.value
    ]


def _rhythm_at(ctx: EvalContext, seq: int) -> Rhythm:
    """Rhythm in effect when event `seq` happened: unwind any transitions that
    were appended after it in this batch."""
    for e in ctx.new_events:
        if e.kind is EventKind.STATE_TRANSITION and e.seq > seq:
            return Rhythm(e.payload["from"])
    return ctx.state.rhythm


def _formulary_rule(ctx: EvalContext, drug: str):
    for rule in ctx.formulary:
        if rule.drug == drug:
            return rule
    return None


def _drug_events(ctx: EvalContext) -> list[tuple[Event, str, float]]:
    out = []
    for e in _new_actions(ctx, ActionKind.ADMINISTER_DRUG):
        out.append((e, str(e.payload["params"]["drug"]).lower(), float(e.payload["params"]["dose_mg"])))
    return out


def _not_indicated(ctx: EvalContext) -> list[str]:
    msgs = []
    for e, drug, _ in _drug_events(ctx):
        rule = _formulary_rule(ctx, drug)
        if rule is not None and _rhythm_at(ctx, e.seq) not in rule.indicated_rhythms:
            msgs.append(f"{drug} is not indicated for {_rhythm_at(ctx, e.seq).value}")
    return msgs


def _unknown_drug(ctx: EvalContext) -> list[str]:
    return [
        f"{drug} is not in the scenario formulary"
        for _, drug, _ in _drug_events(ctx)
        if _formulary_rule(ctx, drug) is None
    ]


def _repeat_too_soon(ctx: EvalContext) -> list[str]:
    msgs = []
    for e, drug, _ in _drug_events(ctx):
        rule = _formulary_rule(ctx, drug)
        if rule is None:
            continue
        doses = [d for d in ctx.state.drug_history if d.drug == drug and d.time <= e.time]
        if len(doses) >= 2:
            gap = e.time - doses[-2].time
            if gap < rule.min_repeat_interval_ms:
                msgs.append(f"{drug} repeated after {gap} ms (minimum {rule.min_repeat_interval_ms} ms)")
    return msgs


def _wrong_dose(ctx: EvalContext) -> list[str]:
    msgs = []
    for _, drug, dose in _drug_events(ctx):
        rule = _formulary_rule(ctx, drug)
        if rule is not None and dose != rule.dose_mg:
            msgs.append(f"{drug} dose {dose:g} mg differs from formulary dose {rule.dose_mg:g} mg")
    return msgs


def _rate_out_of_band(ctx: EvalContext) -> list[str]:
    s, cfg = ctx.state, ctx.settings
    if s.compressions_active and not (cfg.cpr_rate_low <= s.compression_rate <= cfg.cpr_rate_high):
        return [
            f"compression rate {s.compression_rate:g}/min outside "
            f"{cfg.cpr_rate_low:g}-{cfg.cpr_rate_high:g}/min"
        ]
    return []


def _compressions_interrupted(ctx: EvalContext) -> list[str]:
    s = ctx.state
    if s.rhythm not in ARREST_RHYTHMS or s.compressions_active:
        return []
    last_active = 0
    for start, end in s.compression_timeline:
        last_active = max(last_active, end if end is not None else ctx.now)
    idle = ctx.now - last_active
    if idle > ctx.settings.interruption_threshold_ms:
        return [f"no compressions for {idle // 1000} s during {s.rhythm.value}"]
    return []


def _shock_nonshockable(ctx: EvalContext) -> list[str]:
    msgs = []
    for e in _new_actions(ctx, ActionKind.DELIVER_SHOCK):
        rhythm = _rhythm_at(ctx, e.seq)
        if rhythm in NON_SHOCKABLE_RHYTHMS:
            msgs.append(f"shock delivered on non-shockable rhythm {rhythm.value}")
    return msgs


def _shock_without_clear(ctx: EvalContext) -> list[str]:
    msgs = []
    window = ctx.settings.clear_before_shock_window_ms
    for e in _new_actions(ctx, ActionKind.DELIVER_SHOCK):
        last = ctx.state.last_clear_ms
        if last is None or not (0 <= e.time - last <= window):
            msgs.append("shock delivered without clearing the patient in the last 5 s")
    return msgs


BUILTIN_RULES: tuple[FeedbackRule, ...] = (
    FeedbackRule("medication.not-indicated", Category.MEDICATION, Severity.WARNING, Role.DEFIB_MEDS.value, _not_indicated),
    FeedbackRule("medication.repeat-too-soon", Category.MEDICATION, Severity.WARNING, Role.DEFIB_MEDS.value, _repeat_too_soon),
    FeedbackRule("medication.unknown-drug", Category.MEDICATION, Severity.WARNING, Role.DEFIB_MEDS.value, _unknown_drug),
    FeedbackRule("medication.wrong-dose", Category.MEDICATION, Severity.CRITICAL, Role.DEFIB_MEDS.value, _wrong_dose),
    FeedbackRule("cpr.rate-out-of-band", Category.CPR, Severity.WARNING, Role.COMPRESSOR.value, _rate_out_of_band),
    FeedbackRule("cpr.interrupted", Category.CPR, Severity.WARNING, TEAM_TARGET, _compressions_interrupted),
    FeedbackRule("defib.shock-nonshockable", Category.DEFIBRILLATION, Severity.CRITICAL, Role.DEFIB_MEDS.value, _shock_nonshockable),
    FeedbackRule("defib.shock-without-clear", Category.DEFIBRILLATION, Severity.CRITICAL, Role.DEFIB_MEDS.value, _shock_without_clear),
)


def active_rules(settings: FeedbackSettings) -> tuple[FeedbackRule, ...]:
    if settings.enabled_rules is None:
        return BUILTIN_RULES
    wanted = set(settings.enabled_rules)
    return tuple(r for r in BUILTIN_RULES if r.id in wanted)


def evaluate(
    rules: Sequence[FeedbackRule],
    state: PatientState,
    vitals: Vitals,
    new_events: Sequence[Event],
    formulary: Sequence,
    settings: FeedbackSettings,
    now: SimTime,
) -> list[Alert]:
    """Run every rule and return candidates sorted by severity then rule id --
    the total order modulate relies on."""
    ctx = EvalContext(
        state=state,
        vitals=vitals,
        new_events=tuple(new_events),
        formulary=tuple(formulary),
        settings=settings,
        now=now,
    )
    candidates: list[Alert] = []
    for rule in rules:
        candidates.extend(rule.run(ctx))
    candidates.sort(key=lambda a: (_SEVERITY_RANK[a.severity], a.rule_id, a.message))
    return candidates


@dataclass(frozen=True)
class Modulator:
    """Per-category rate limiter. history holds (category value, emit time)
    pairs from prior calls; entries older than the cooldown are pruned."""

    cooldown_ms: int = 10_000
    max_concurrent: int = 2
    history: tuple[tuple[str, SimTime], ...] = ()


def modulate(candidates: Sequence[Alert], m: Modulator, now: SimTime) -> tuple[list[Alert], Modulator]:
    """Filter candidates: drop categories that fired within the cooldown, cap
    emissions per call at max_concurrent. Critical alerts bypass the cap (but
    still count toward it and still honor the cooldown). Never invents alerts."""
    ordered = sorted(candidates, key=lambda a: (_SEVERITY_RANK[a.severity], a.rule_id, a.message))
    last_fire: dict[str, SimTime] = {}
    for category, t in m.history:
        last_fire[category] = max(t, last_fire.get(category, t))
    emitted: list[Alert] = []
    count = 0
    fired_categories: set[str] = set()
    for alert in ordered:
        cat = alert.category.value
        last = last_fire.get(cat)
        if last is not None and now - last < m.cooldown_ms:
            continue
        if alert.severity is not Severity.CRITICAL and count >= m.max_concurrent:
            continue
        emitted.append(alert)
        count += 1
        fired_categories.add(cat)
    kept = tuple((c, t) for c, t in m.history if now - t < m.cooldown_ms and c not in fired_categories)
    new_history = kept + tuple((c, now) for c in sorted(fired_categories))
    return emitted, replace(m, history=new_history)
