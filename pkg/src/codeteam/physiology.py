"""Non-linear patient model: a rhythm state machine that responds to
interventions, timers, and seeded randomness, plus first-order vitals dynamics.

All functions are pure state transitions: they take values and return new
values plus a list of internal event specs (kind, payload) for the session to
stamp and append. Randomness is confined to two draw sites -- shock success on
a shockable rhythm, and the per-step ROSC chance for a treated non-shockable
rhythm -- each drawing exactly one value per opportunity, in that order, which
is what makes replay byte-exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

from .errors import ActionInvalid, DomainError
from .model import (
    ARREST_RHYTHMS,
    NON_SHOCKABLE_RHYTHMS,
    SHOCKABLE_RHYTHMS,
    ActionKind,
    EventKind,
    Rhythm,
    SimTime,
    Vitals,
)
from .rng import Prng

EPINEPHRINE = "epinephrine"
AMIODARONE = "amiodarone"

# Where each decaying rhythm lands when its timer runs out.
DETERIORATION_TARGET = {
    Rhythm.VF: Rhythm.ASYSTOLE,
    Rhythm.PULSELESS_VTACH: Rhythm.VF,
    Rhythm.PEA: Rhythm.ASYSTOLE,
}


class AirwayStatus(str, Enum):
    NONE = "None"
    ORAL_AIRWAY = "OralAirway"
    INTUBATED = "Intubated"


_AIRWAY_RANK = {AirwayStatus.NONE: 0, AirwayStatus.ORAL_AIRWAY: 1, AirwayStatus.INTUBATED: 2}


@dataclass(frozen=True)
class DrugDose:
    drug: str
    dose_mg: float
    time: SimTime


@dataclass(frozen=True)
class PhysioParams:
    """Tunable quantities of the patient model. The engine treats them as data;
    scenarios may override any field. bp_sys and bp_dia share one time constant
    so relaxation can never cross them."""

    tau_heart_rate_s: float = 5.0
    tau_spo2_s: float = 30.0
    tau_etco2_s: float = 10.0
    tau_bp_s: float = 8.0
    tau_resp_rate_s: float = 6.0
    deterioration_timeout_s: dict = field(
        default_factory=lambda: {
            Rhythm.VF: 300.0,
            Rhythm.PULSELESS_VTACH: 240.0,
            Rhythm.PEA: 360.0,
        }
    )
    shock_success_base: float = 0.3
    shock_success_cpr_bonus: float = 0.5
    amiodarone_shock_bonus: float = 0.1
    rosc_rearrest_timeout_s: float = 180.0
    epi_effect_window_s: float = 180.0
    cpr_window_s: float = 60.0
    nonshockable_rosc_rate_per_min: float = 0.5
    rosc_cpr_fraction_min: float = 0.6
    cpr_etco2_gain: float = 18.0
    cpr_bp_sys_gain: float = 80.0
    cpr_bp_dia_gain: float = 30.0
    spo2_bonus_intubated: float = 30.0
    spo2_bonus_bvm: float = 20.0
    spo2_bonus_oral_airway: float = 5.0
    bvm_effect_window_s: float = 15.0
    default_compression_rate: float = 110.0

    def to_payload(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "deterioration_timeout_s"}
        d["deterioration_timeout_s"] = {
            r.value: t for r, t in sorted(self.deterioration_timeout_s.items(), key=lambda kv: kv[0].value)
        }
        return d

    @classmethod
    def from_payload(cls, d: dict) -> "PhysioParams":
        kwargs = dict(d)
        if "deterioration_timeout_s" in kwargs:
            kwargs["deterioration_timeout_s"] = {
                Rhythm(name): float(t) for name, t in kwargs["deterioration_timeout_s"].items()
            }
        return cls(**kwargs)


@dataclass(frozen=True)
class PatientState:
    """The dynamic clinical condition. compression_timeline keeps the raw
    on/off segments inside the trailing CPR window ((start_ms, end_ms), end
    None while active) so cpr_fraction stays recomputable from first
    principles; last_bvm_ms / last_clear_ms back the ventilation effect and the
    clear-before-shock feedback rule."""

    rhythm: Rhythm
    time_in_state: SimTime = 0
    pads_attached: bool = False
    iv_access: bool = False
    airway: AirwayStatus = AirwayStatus.NONE
    compressions_active: bool = False
    compression_rate: float = 110.0
    cpr_fraction: float = 0.0
    shock_count: int = 0
    defib_charged_energy: float | None = None
    drug_history: tuple[DrugDose, ...] = ()
    compression_timeline: tuple[tuple[int, int | None], ...] = ()
    last_bvm_ms: SimTime | None = None
    last_clear_ms: SimTime | None = None

    def to_payload(self) -> dict:
        return {
            "rhythm": self.rhythm.value,
            "time_in_state": self.time_in_state,
            "pads_attached": self.pads_attached,
            "iv_access": self.iv_access,
            "airway": self.airway.value,
            "compressions_active": self.compressions_active,
            "compression_rate": float(self.compression_rate),
            "cpr_fraction": float(self.cpr_fraction),
            "shock_count": self.shock_count,
            "defib_charged_energy": None
            if self.defib_charged_energy is None
            else float(self.defib_charged_energy),
            "drug_history": [
                {"drug": d.drug, "dose_mg": float(d.dose_mg), "time": d.time}
                for d in self.drug_history
            ],
            "compression_timeline": [[s, e] for s, e in self.compression_timeline],
            "last_bvm_ms": self.last_bvm_ms,
            "last_clear_ms": self.last_clear_ms,
        }


def initial_state(rhythm: Rhythm, params: PhysioParams | None = None) -> PatientState:
    rate = params.default_compression_rate if params else 110.0
    return PatientState(rhythm=rhythm, compression_rate=rate)


def rhythm_profile(rhythm: Rhythm) -> Vitals:
    """Target vitals the patient drifts toward in each rhythm, before any
    intervention effect. Arrest rhythms generate no blood pressure."""
    if rhythm is Rhythm.VF:
        return Vitals(heart_rate=0.0, spo2=45.0, etco2=5.0, bp_sys=0.0, bp_dia=0.0, resp_rate=0.0)
    if rhythm is Rhythm.PULSELESS_VTACH:
        return Vitals(heart_rate=180.0, spo2=45.0, etco2=5.0, bp_sys=0.0, bp_dia=0.0, resp_rate=0.0)
    if rhythm is Rhythm.ASYSTOLE:
        return Vitals(heart_rate=0.0, spo2=30.0, etco2=2.0, bp_sys=0.0, bp_dia=0.0, resp_rate=0.0)
    if rhythm is Rhythm.PEA:
        return Vitals(heart_rate=40.0, spo2=35.0, etco2=4.0, bp_sys=0.0, bp_dia=0.0, resp_rate=0.0)
    return Vitals(heart_rate=95.0, spo2=94.0, etco2=38.0, bp_sys=110.0, bp_dia=70.0, resp_rate=12.0)


def cpr_quality(rate: float) -> float:
    """Compression-rate quality in [0, 1]: zero at <=60 or >=160 per minute,
    full credit on the 100-120 guideline band, linear ramps between."""
    if rate < 0:
        raise DomainError(f"compression rate must be >= 0, got {rate}")
    if rate <= 60.0 or rate >= 160.0:
        return 0.0
    if 100.0 <= rate <= 120.0:
        return 1.0
    if rate < 100.0:
        return (rate - 60.0) / 40.0
    return (160.0 - rate) / 40.0


# -- compression timeline ----------------------------------------------------


def timeline_start(
    timeline: tuple[tuple[int, int | None], ...], t: SimTime
) -> tuple[tuple[int, int | None], ...]:
    if timeline and timeline[-1][1] is None:
        return timeline
    return timeline + ((t, None),)


def timeline_stop(
    timeline: tuple[tuple[int, int | None], ...], t: SimTime
) -> tuple[tuple[int, int | None], ...]:
    if not timeline or timeline[-1][1] is not None:
        return timeline
    start = timeline[-1][0]
    if start == t:
        return timeline[:-1]
    return timeline[:-1] + ((start, t),)


def prune_timeline(
    timeline: tuple[tuple[int, int | None], ...], t: SimTime, window_ms: int
) -> tuple[tuple[int, int | None], ...]:
    cutoff = t - window_ms
    return tuple(seg for seg in timeline if seg[1] is None or seg[1] > cutoff)


def cpr_fraction_at(
    timeline: tuple[tuple[int, int | None], ...], t: SimTime, window_ms: int
) -> float:
    """Fraction of the trailing window covered by active compressions. Early in
    the session the window is the elapsed time, so continuous CPR reads 1.0."""
    if t <= 0:
        return 0.0
    lo = max(0, t - window_ms)
    span = t - lo
    covered = 0
    for start, end in timeline:
        hi = t if end is None else min(end, t)
        covered += max(0, min(hi, t) - max(start, lo))
    return covered / span


# -- action application ------------------------------------------------------


def apply_flags(s: PatientState, kind: ActionKind, params: dict, t: SimTime, physio: PhysioParams) -> PatientState:
    """The deterministic, draw-free part of an action: flag and timeline
    updates. Shared verbatim by live execution and by log folding so replayed
    state is bit-equal to live state."""
    if kind is ActionKind.ATTACH_PADS:
        s = replace(s, pads_attached=True)
    elif kind is ActionKind.OBTAIN_IV_ACCESS:
        s = replace(s, iv_access=True)
    elif kind is ActionKind.INSERT_ORAL_AIRWAY:
        if _AIRWAY_RANK[s.airway] < _AIRWAY_RANK[AirwayStatus.ORAL_AIRWAY]:
            s = replace(s, airway=AirwayStatus.ORAL_AIRWAY)
    elif kind is ActionKind.INTUBATE:
        s = replace(s, airway=AirwayStatus.INTUBATED)
    elif kind is ActionKind.BAG_VALVE_MASK_VENTILATE:
        s = replace(s, last_bvm_ms=t)
    elif kind is ActionKind.START_COMPRESSIONS:
        s = replace(s, compressions_active=True, compression_timeline=timeline_start(s.compression_timeline, t))
    elif kind is ActionKind.STOP_COMPRESSIONS:
        s = replace(s, compressions_active=False, compression_timeline=timeline_stop(s.compression_timeline, t))
    elif kind is ActionKind.SET_COMPRESSION_RATE:
        s = replace(s, compression_rate=float(params["rate"]))
    elif kind is ActionKind.CHARGE_DEFIBRILLATOR:
        s = replace(s, defib_charged_energy=float(params["energy_j"]))
    elif kind is ActionKind.DELIVER_SHOCK:
        s = replace(s, shock_count=s.shock_count + 1, defib_charged_energy=None)
    elif kind is ActionKind.CLEAR_PATIENT:
        s = replace(s, last_clear_ms=t)
    elif kind is ActionKind.ADMINISTER_DRUG:
        dose = DrugDose(drug=str(params["drug"]).lower(), dose_mg=float(params["dose_mg"]), time=t)
        s = replace(s, drug_history=s.drug_history + (dose,))
    # CheckResponsiveness/CallForHelp/CheckPulse/CheckRhythm/AttachMonitor/
    # PushFluids/Auscultate/OrderEkg/OrderXray/AnnounceRhythm are log-only.
    window_ms = int(physio.cpr_window_s * 1000)
    timeline = prune_timeline(s.compression_timeline, t, window_ms)
    return replace(s, compression_timeline=timeline, cpr_fraction=cpr_fraction_at(timeline, t, window_ms))


def _transition(s: PatientState, to: Rhythm) -> PatientState:
    return replace(s, rhythm=to, time_in_state=0)


def _transition_payload(from_rhythm: Rhythm, to: Rhythm, cause: str) -> dict:
    return {"from": from_rhythm.value, "to": to.value, "cause": cause}


def effective_shock_base(s: PatientState, params: PhysioParams) -> float:
    bonus = params.amiodarone_shock_bonus if any(d.drug == AMIODARONE for d in s.drug_history) else 0.0
    return params.shock_success_base + bonus


def apply_action(
    s: PatientState,
    v: Vitals,
    kind: ActionKind,
    params: dict,
    t: SimTime,
    rng: Prng,
    physio: PhysioParams,
) -> tuple[PatientState, Vitals, list[tuple[EventKind, dict]]]:
    """Execute an already-permitted action against the patient.

    Raises ActionInvalid when the action is physically impossible (shock
    without charge or pads, negative quantities). Shocking a non-shockable
    rhythm is permitted -- trainees may err; flagging it is the feedback
    module's job -- and consumes the charge without a transition or a draw.
    """
    if kind is ActionKind.DELIVER_SHOCK:
        if s.defib_charged_energy is None:
            raise ActionInvalid("NotCharged")
        if not s.pads_attached:
            raise ActionInvalid("NoPads")
    if kind is ActionKind.SET_COMPRESSION_RATE and float(params["rate"]) < 0:
        raise ActionInvalid("NegativeRate")
    if kind is ActionKind.CHARGE_DEFIBRILLATOR and float(params["energy_j"]) <= 0:
        raise ActionInvalid("NonPositiveEnergy")
    if kind is ActionKind.ADMINISTER_DRUG and float(params["dose_mg"]) <= 0:
        raise ActionInvalid("NonPositiveDose")
    if kind is ActionKind.PUSH_FLUIDS and float(params["ml"]) <= 0:
        raise ActionInvalid("NonPositiveVolume")

    shockable = s.rhythm in SHOCKABLE_RHYTHMS
    from_rhythm = s.rhythm
    s = apply_flags(s, kind, params, t, physio)

    events: list[tuple[EventKind, dict]] = []
    if kind is ActionKind.DELIVER_SHOCK and shockable:
        p = max(0.0, min(1.0, effective_shock_base(s, physio) + physio.shock_success_cpr_bonus * s.cpr_fraction))
        if rng.u01() < p:
            s = _transition(s, Rhythm.SINUS_ROSC)
            events.append(
                (EventKind.STATE_TRANSITION, _transition_payload(from_rhythm, Rhythm.SINUS_ROSC, "shock"))
            )
    return s, v, events


# -- time advancement --------------------------------------------------------


def _ventilation_bonus(s: PatientState, t: SimTime, params: PhysioParams) -> float:
    if s.airway is AirwayStatus.INTUBATED:
        return params.spo2_bonus_intubated
    if s.last_bvm_ms is not None and t - s.last_bvm_ms <= params.bvm_effect_window_s * 1000:
        return params.spo2_bonus_bvm
    if s.airway is AirwayStatus.ORAL_AIRWAY:
        return params.spo2_bonus_oral_airway
    return 0.0


def effective_targets(s: PatientState, t: SimTime, params: PhysioParams) -> Vitals:
    """Rhythm profile adjusted by current interventions: active compressions
    generate etco2 and blood pressure in arrest; ventilation raises the spo2
    target, scaled by whatever circulation exists to carry the oxygen."""
    base = rhythm_profile(s.rhythm)
    in_arrest = s.rhythm in ARREST_RHYTHMS
    q = cpr_quality(s.compression_rate) if s.compressions_active else 0.0
    circulation = 1.0 if not in_arrest else q
    spo2 = min(100.0, base.spo2 + _ventilation_bonus(s, t, params) * circulation)
    if in_arrest and s.compressions_active:
        return Vitals(
            heart_rate=base.heart_rate,
            spo2=spo2,
            etco2=base.etco2 + q * params.cpr_etco2_gain,
            bp_sys=base.bp_sys + q * params.cpr_bp_sys_gain,
            bp_dia=base.bp_dia + q * params.cpr_bp_dia_gain,
            resp_rate=base.resp_rate,
        )
    return replace(base, spo2=spo2)


def _relax(value: float, target: float, dt_ms: int, tau_s: float) -> float:
    # Exact solution of dv/dt = (target - value) / tau over the step.
    return target + (value - target) * math.exp(-dt_ms / (tau_s * 1000.0))


def relax_vitals(v: Vitals, target: Vitals, dt_ms: int, params: PhysioParams) -> Vitals:
    hr = _relax(v.heart_rate, target.heart_rate, dt_ms, params.tau_heart_rate_s)
    spo2 = _relax(v.spo2, target.spo2, dt_ms, params.tau_spo2_s)
    etco2 = _relax(v.etco2, target.etco2, dt_ms, params.tau_etco2_s)
    bp_sys = _relax(v.bp_sys, target.bp_sys, dt_ms, params.tau_bp_s)
    bp_dia = _relax(v.bp_dia, target.bp_dia, dt_ms, params.tau_bp_s)
    rr = _relax(v.resp_rate, target.resp_rate, dt_ms, params.tau_resp_rate_s)
    return Vitals(
        heart_rate=max(0.0, hr),
        spo2=min(100.0, max(0.0, spo2)),
        etco2=max(0.0, etco2),
        bp_sys=max(0.0, bp_sys),
        bp_dia=max(0.0, min(bp_dia, bp_sys)),
        resp_rate=max(0.0, rr),
    )


def epinephrine_active(s: PatientState, t: SimTime, params: PhysioParams) -> bool:
    window_ms = params.epi_effect_window_s * 1000
    return any(d.drug == EPINEPHRINE and 0 <= t - d.time <= window_ms for d in s.drug_history)


def step(
    s: PatientState,
    v: Vitals,
    dt: int,
    t: SimTime,
    rng: Prng,
    params: PhysioParams,
) -> tuple[PatientState, Vitals, list[tuple[EventKind, dict]]]:
    """Advance the patient by dt milliseconds, ending at logical time t.

    Vitals relax exponentially toward the effective targets held at the start
    of the interval. Transition checks run in a fixed order -- deterioration
    timer, then the treated-non-shockable ROSC draw, then untreated-ROSC
    re-arrest -- and at most one fires per step.
    """
    if dt < 0:
        raise DomainError(f"dt must be >= 0, got {dt}")
    if dt == 0:
        return s, v, []

    v = relax_vitals(v, effective_targets(s, t - dt, params), dt, params)

    window_ms = int(params.cpr_window_s * 1000)
    timeline = prune_timeline(s.compression_timeline, t, window_ms)
    s = replace(
        s,
        time_in_state=s.time_in_state + dt,
        compression_timeline=timeline,
        cpr_fraction=cpr_fraction_at(timeline, t, window_ms),
    )

    events: list[tuple[EventKind, dict]] = []
    timeout_s = params.deterioration_timeout_s.get(s.rhythm)
    if timeout_s is not None and s.time_in_state >= timeout_s * 1000:
        target = DETERIORATION_TARGET[s.rhythm]
        events.append((EventKind.STATE_TRANSITION, _transition_payload(s.rhythm, target, "deterioration")))
        s = _transition(s, target)
    elif (
        s.rhythm in NON_SHOCKABLE_RHYTHMS
        and params.nonshockable_rosc_rate_per_min > 0.0
        and epinephrine_active(s, t, params)
        and s.cpr_fraction >= params.rosc_cpr_fraction_min
    ):
        p = 1.0 - math.exp(-params.nonshockable_rosc_rate_per_min * dt / 60000.0)
        if rng.u01() < p:
            events.append(
                (EventKind.STATE_TRANSITION, _transition_payload(s.rhythm, Rhythm.SINUS_ROSC, "epinephrine"))
            )
            s = _transition(s, Rhythm.SINUS_ROSC)
    elif (
        s.rhythm is Rhythm.SINUS_ROSC
        and s.airway is AirwayStatus.NONE
        and s.time_in_state >= params.rosc_rearrest_timeout_s * 1000
    ):
        events.append((EventKind.STATE_TRANSITION, _transition_payload(s.rhythm, Rhythm.VF, "rearrest")))
        s = _transition(s, Rhythm.VF)
    return s, v, events
