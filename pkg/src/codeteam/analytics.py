"""Post-session CRM computation over a closed session log.

Every function here is a pure read of (log, scenario): same inputs give a
byte-identical report. Two response-time notions are computed and labeled
separately, because "response time" is ambiguous: latency from state onset to
each required action, and latency from a spoken directive to its execution.
Biometric telemetry never feeds these metrics; it exists for console overlays.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import DomainError, IncompleteLog
from .logstore import SessionLog, Utterance, scenario_from_log, utterances_from_log
from .model import ActionKind, EventKind, Rhythm, Role, SimTime, TRAINEE_ROLES
from .scenario import LearningPoint, ScenarioDef

REPORT_SCHEMA_VERSION = 1

DONE = "Done"
DONE_LATE = "DoneLate"
MISSED = "Missed"


@dataclass(frozen=True)
class Episode:
    """One contiguous interval spent in a rhythm; the scoring unit."""

    index: int
    rhythm: Rhythm
    onset_ms: SimTime
    end_ms: SimTime


def episodes_of(log: SessionLog, scenario: ScenarioDef) -> list[Episode]:
    end = log.end_time()
    if end is None:
        raise IncompleteLog("log has no SessionEnd")
    episodes: list[Episode] = []
    current = scenario.initial_rhythm
    onset: SimTime = 0
    idx = 0
    for e in log.events:
        if e.kind is EventKind.STATE_TRANSITION:
            episodes.append(Episode(index=idx, rhythm=current, onset_ms=onset, end_ms=e.time))
            idx += 1
            current = Rhythm(e.payload["to"])
            onset = e.time
    episodes.append(Episode(index=idx, rhythm=current, onset_ms=onset, end_ms=end))
    return episodes


# -- the four CRM metrics ------------------------------------------------------


def comm_frequency(log: SessionLog, window: tuple[SimTime, SimTime] | None = None) -> dict:
    """Utterances per minute, per speaker and for the team. `window` restricts
    to [t0, t1); default is the whole session."""
    end = log.end_time()
    if end is None:
        raise IncompleteLog("log has no SessionEnd")
    t0, t1 = window if window is not None else (0, end)
    if t1 <= t0:
        raise DomainError(f"window [{t0}, {t1}) has non-positive length")
    minutes = (t1 - t0) / 60000.0
    counts = {role.value: 0 for role in TRAINEE_ROLES}
    total = 0
    for e in log.events:
        if e.kind is EventKind.UTTERANCE and t0 <= e.time < t1:
            counts[e.actor] = counts.get(e.actor, 0) + 1
            total += 1
    return {
        "per_role": {actor: n / minutes for actor, n in sorted(counts.items())},
        "team_total": total / minutes,
        "window_ms": [t0, t1],
    }


def task_distribution(log: SessionLog) -> dict:
    """Share of performed actions per trainee role plus a balance score: the
    Shannon entropy of the shares normalized by log(4), so 1.0 is a perfectly
    even split and 0.0 is a single role doing everything."""
    counts = {role.value: 0 for role in TRAINEE_ROLES}
    for e in log.events:
        if e.kind is EventKind.ACTION_PERFORMED and e.actor in counts:
            counts[e.actor] += 1
    total = sum(counts.values())
    if total == 0:
        raise DomainError("no performed actions in log")
    entropy = 0.0
    for n in counts.values():
        if n > 0:
            p = n / total
            entropy -= p * math.log(p)
    return {
        "per_role": {
            actor: {"count": n, "share": n / total} for actor, n in sorted(counts.items())
        },
        "total_actions": total,
        "balance": entropy / math.log(len(TRAINEE_ROLES)),
    }


@dataclass(frozen=True)
class RequiredLatency:
    episode: int
    rhythm: Rhythm
    onset_ms: SimTime
    action: ActionKind
    window_ms: int | None
    latency_ms: int | None  # None = Missed
    status: str

    def to_doc(self) -> dict:
        return {
            "episode": self.episode,
            "rhythm": self.rhythm.value,
            "onset_ms": self.onset_ms,
            "action": self.action.value,
            "window_ms": self.window_ms,
            "latency_ms": self.latency_ms,
            "status": self.status,
        }


def _episode_cells(log: SessionLog, scenario: ScenarioDef) -> list[RequiredLatency]:
    performed = [
        (e.time, ActionKind(e.payload["action"]))
        for e in log.events
        if e.kind is EventKind.ACTION_PERFORMED
    ]
    cells: list[RequiredLatency] = []
    for ep in episodes_of(log, scenario):
        for req in scenario.required:
            if req.state is not ep.rhythm:
                continue
            first: SimTime | None = None
            for t, kind in performed:
                if kind is req.action and ep.onset_ms <= t < ep.end_ms:
                    first = t
                    break
                # an action exactly at the final episode's end counts for it
                if kind is req.action and t == ep.end_ms == log.end_time():
                    first = t
                    break
            if first is None:
                status, latency = MISSED, None
            else:
                latency = first - ep.onset_ms
                if req.window_ms is not None and latency > req.window_ms:
                    status = DONE_LATE
                else:
                    status = DONE
            cells.append(
                RequiredLatency(
                    episode=ep.index,
                    rhythm=ep.rhythm,
                    onset_ms=ep.onset_ms,
                    action=req.action,
                    window_ms=req.window_ms,
                    latency_ms=latency,
                    status=status,
                )
            )
    return cells


def response_times(log: SessionLog, scenario: ScenarioDef) -> dict:
    """Both response-time notions, labeled distinctly: state-onset-to-action
    for every required action per episode, and directive-to-execution for
    every Directive utterance that names an action."""
    state_required = [c.to_doc() for c in _episode_cells(log, scenario)]
    performed = [
        (e.time, ActionKind(e.payload["action"]))
        for e in log.events
        if e.kind is EventKind.ACTION_PERFORMED
    ]
    order_to_action = []
    for u in utterances_from_log(log):
        if "Directive" not in u.tags or u.orders_action is None:
            continue
        latency = None
        for t, kind in performed:
            if kind is u.orders_action and t > u.time:
                latency = t - u.time
                break
        order_to_action.append(
            {
                "directive_time_ms": u.time,
                "speaker": u.speaker.value,
                "action": u.orders_action.value,
                "latency_ms": latency,
            }
        )
    return {"state_required": state_required, "order_to_action": order_to_action}


@dataclass(frozen=True)
class ClosedLoop:
    directive: Utterance
    ack: Utterance
    report: Utterance | None
    closed: bool

    def to_doc(self) -> dict:
        def u_doc(u: Utterance | None):
            if u is None:
                return None
            return {"speaker": u.speaker.value, "time_ms": u.time, "text": u.text}

        return {
            "directive": u_doc(self.directive),
            "ack": u_doc(self.ack),
            "report": u_doc(self.report),
            "closed": self.closed,
        }


def detect_closed_loops(
    utterances: list[Utterance],
    w1_ack_ms: int = 5000,
    w2_report_ms: int = 60000,
) -> tuple[list[ClosedLoop], float]:
    """Greedy earliest-directive-first matching of directive -> acknowledgement
    -> completion report. The acknowledgement must come from the addressee (or,
    with no addressee, any other speaker) within w1; the report must come from
    the acknowledging speaker within w2 of the directive. Each utterance is
    consumed by at most one loop. Rate = closed loops / directives; with no
    directives the rate is vacuously 1.0."""
    for a, b in zip(utterances, utterances[1:]):
        if b.time < a.time:
            raise DomainError("utterances must be time-ordered")
    consumed: set[int] = set()
    loops: list[ClosedLoop] = []
    directives = [u for u in utterances if "Directive" in u.tags]
    for directive in directives:
        ack = None
        ack_idx = None
        for i, u in enumerate(utterances):
            if i in consumed or "Acknowledgement" not in u.tags:
                continue
            if not directive.time < u.time <= directive.time + w1_ack_ms:
                continue
            if directive.addressee is not None:
                if u.speaker is not directive.addressee:
                    continue
            elif u.speaker is directive.speaker:
                continue
            ack, ack_idx = u, i
            break
        if ack is None:
            continue
        consumed.add(ack_idx)
        report = None
        for i, u in enumerate(utterances):
            if i in consumed or "Report" not in u.tags:
                continue
            if u.speaker is not ack.speaker:
                continue
            if ack.time < u.time <= directive.time + w2_report_ms:
                report = u
                consumed.add(i)
                break
        loops.append(ClosedLoop(directive=directive, ack=ack, report=report, closed=report is not None))
    if not directives:
        return [], 1.0
    closed = sum(1 for lp in loops if lp.closed)
    return loops, closed / len(directives)


# -- coverage and report --------------------------------------------------------


def coverage(log: SessionLog, scenario: ScenarioDef) -> list[dict]:
    """Per state-episode x required-action matrix: Done within the window,
    DoneLate inside the episode but past the window, else Missed."""
    by_episode: dict[int, dict] = {}
    for ep in episodes_of(log, scenario):
        by_episode[ep.index] = {
            "episode": ep.index,
            "rhythm": ep.rhythm.value,
            "onset_ms": ep.onset_ms,
            "end_ms": ep.end_ms,
            "cells": [],
        }
    for cell in _episode_cells(log, scenario):
        by_episode[cell.episode]["cells"].append(
            {
                "action": cell.action.value,
                "status": cell.status,
                "latency_ms": cell.latency_ms,
                "window_ms": cell.window_ms,
            }
        )
    return [by_episode[k] for k in sorted(by_episode)]


def _selected_learning_points(scenario: ScenarioDef, cells: list[RequiredLatency], visited: set[Rhythm]) -> list[dict]:
    flagged = {(c.rhythm, c.action) for c in cells if c.status in (MISSED, DONE_LATE)}
    statuses = {}
    for c in cells:
        key = (c.rhythm, c.action)
        # worst status across episodes drives the reason label
        order = {MISSED: 2, DONE_LATE: 1, DONE: 0}
        if key not in statuses or order[c.status] > order[statuses[key]]:
            statuses[key] = c.status
    out = []
    for lp in scenario.learning_points:
        if lp.linked_action is not None:
            key = (lp.state, lp.linked_action)
            if key in flagged:
                reason = "missed" if statuses[key] == MISSED else "late"
                out.append(_lp_doc(lp, reason))
        elif lp.state in visited:
            out.append(_lp_doc(lp, "state_visited"))
    return out


def _lp_doc(lp: LearningPoint, reason: str) -> dict:
    return {
        "state": lp.state.value,
        "linked_action": lp.linked_action.value if lp.linked_action else None,
        "text": lp.text,
        "reason": reason,
    }


def error_summary(log: SessionLog) -> list[dict]:
    out = []
    for e in log.events:
        if e.kind is EventKind.ALERT_EMITTED:
            out.append(
                {
                    "time_ms": e.time,
                    "type": "alert",
                    "rule_id": e.payload["rule_id"],
                    "severity": e.payload["severity"],
                    "message": e.payload["message"],
                    "target": e.payload["target"],
                }
            )
        elif e.kind is EventKind.ACTION_REJECTED:
            out.append(
                {
                    "time_ms": e.time,
                    "type": "rejected_action",
                    "actor": e.actor,
                    "action": e.payload["action"],
                    "reason": e.payload["reason"],
                }
            )
    return out


def timeline_markers(log: SessionLog, scenario: ScenarioDef) -> list[dict]:
    """Ordered marker lanes for the debrief timeline: state transitions,
    alerts, spoken directives, and missed required-action deadlines."""
    markers: list[dict] = []
    for e in log.events:
        if e.kind is EventKind.STATE_TRANSITION:
            markers.append(
                {
                    "time_ms": e.time,
                    "kind": "transition",
                    "label": f"{e.payload['from']} -> {e.payload['to']} ({e.payload['cause']})",
                }
            )
        elif e.kind is EventKind.ALERT_EMITTED:
            markers.append({"time_ms": e.time, "kind": "alert", "label": e.payload["rule_id"]})
        elif e.kind is EventKind.UTTERANCE and "Directive" in e.payload.get("tags", []):
            markers.append({"time_ms": e.time, "kind": "directive", "label": e.payload["text"]})
    for ep_doc in coverage(log, scenario):
        for cell in ep_doc["cells"]:
            if cell["status"] != MISSED:
                continue
            deadline = (
                ep_doc["onset_ms"] + cell["window_ms"]
                if cell["window_ms"] is not None
                else ep_doc["end_ms"]
            )
            markers.append(
                {
                    "time_ms": deadline,
                    "kind": "missed_deadline",
                    "label": f"{cell['action']} missed in {ep_doc['rhythm']} episode {ep_doc['episode']}",
                }
            )
    markers.sort(key=lambda m: (m["time_ms"], m["kind"], m["label"]))
    return markers


@dataclass(frozen=True)
class CrmReport:
    doc: dict = field(repr=False)

    def to_json(self) -> str:
        return json.dumps(self.doc, indent=2, sort_keys=True, allow_nan=False) + "\n"

    def to_text(self) -> str:
        d = self.doc
        lines = [
            f"CRM report for scenario {d['scenario_id']} (seed {d['seed']})",
            f"session length: {d['session_ms'] / 1000.0:.1f} s over {len(d['coverage'])} state episode(s)",
            "",
            "communication frequency (utterances/min):",
        ]
        for role, rate in d["comm_frequency"]["per_role"].items():
            lines.append(f"  {role}: {rate:.2f}")
        lines.append(f"  team: {d['comm_frequency']['team_total']:.2f}")
        lines.append("")
        td = d["task_distribution"]
        lines.append(f"task distribution (balance {td['balance']:.3f}):")
        for role, entry in td["per_role"].items():
            lines.append(f"  {role}: {entry['count']} actions ({entry['share']:.0%})")
        lines.append("")
        cl = d["closed_loop"]
        if cl["vacuous"]:
            lines.append("closed-loop communication: no directives issued")
        else:
            lines.append(
                f"closed-loop communication: {cl['closed']}/{cl['directives']} loops closed (rate {cl['rate']:.2f})"
            )
        lines.append("")
        lines.append("coverage:")
        for ep in d["coverage"]:
            lines.append(f"  episode {ep['episode']} {ep['rhythm']} [{ep['onset_ms']}-{ep['end_ms']} ms]")
            for cell in ep["cells"]:
                latency = f"{cell['latency_ms']} ms" if cell["latency_ms"] is not None else "-"
                lines.append(f"    {cell['status']:8s} {cell['action']} ({latency})")
        if d["error_summary"]:
            lines.append("")
            lines.append("errors:")
            for err in d["error_summary"]:
                label = err.get("message") or f"{err.get('action')} ({err.get('reason')})"
                lines.append(f"  {err['time_ms']} ms [{err['type']}] {label}")
        if d["learning_points"]:
            lines.append("")
            lines.append("learning points:")
            for lp in d["learning_points"]:
                lines.append(f"  [{lp['state']}] {lp['text']}")
        return "\n".join(lines) + "\n"


def build_report(
    log: SessionLog,
    scenario: ScenarioDef | None = None,
    w1_ack_ms: int = 5000,
    w2_report_ms: int = 60000,
) -> CrmReport:
    """Assemble the full CRM report. Pure: byte-identical for equal inputs."""
    end = log.end_time()
    if end is None:
        raise IncompleteLog("log has no SessionEnd; cannot build a report")
    scenario = scenario or scenario_from_log(log)
    cells = _episode_cells(log, scenario)
    visited = {ep.rhythm for ep in episodes_of(log, scenario)}
    loops, rate = detect_closed_loops(utterances_from_log(log), w1_ack_ms, w2_report_ms)
    directives = sum(1 for u in utterances_from_log(log) if "Directive" in u.tags)
    # degenerate sessions (no actions, zero length) still get a renderable
    # report; the per-metric functions keep their strict contracts
    try:
        dist = task_distribution(log)
    except DomainError:
        dist = {
            "per_role": {r.value: {"count": 0, "share": 0.0} for r in TRAINEE_ROLES},
            "total_actions": 0,
            "balance": 0.0,
            "vacuous": True,
        }
    if end > 0:
        freq = comm_frequency(log)
    else:
        freq = {"per_role": {r.value: 0.0 for r in TRAINEE_ROLES}, "team_total": 0.0, "window_ms": [0, 0]}
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "scenario_id": log.header.scenario_id,
        "seed": log.header.seed,
        "session_ms": end,
        "comm_frequency": freq,
        "task_distribution": dist,
        "response_times": response_times(log, scenario),
        "closed_loop": {
            "loops": [lp.to_doc() for lp in loops],
            "rate": rate,
            "vacuous": directives == 0,
            "directives": directives,
            "closed": sum(1 for lp in loops if lp.closed),
        },
        "coverage": coverage(log, scenario),
        "learning_points": _selected_learning_points(scenario, cells, visited),
        "error_summary": error_summary(log),
        "timeline_markers": timeline_markers(log, scenario),
        "params": {"w1_ack_ms": w1_ack_ms, "w2_report_ms": w2_report_ms},
    }
    return CrmReport(doc=doc)
