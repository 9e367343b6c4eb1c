"""Operator entry point: serve live sessions, run headless scripted sessions,
replay and verify logs, and emit CRM reports. Machine output goes to files or
stdout; diagnostics go to stderr. Exit codes: 0 success, 1 validation or
verification failure, 2 usage error."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from . import analytics, bots, logstore, scenario as scenario_mod
from .errors import CodeTeamError
from .model import state_hash


def _load_scenario_arg(value: str) -> scenario_mod.ScenarioDef:
    path = Path(value)
    if path.exists():
        return scenario_mod.load_scenario_file(path)
    builtin = scenario_mod.builtin_scenario_names()
    if value in builtin:
        return scenario_mod.load_builtin_scenario(value)
    raise click.UsageError(f"scenario {value!r} is neither a file nor a built-in ({', '.join(builtin)})")


def _load_botscript_arg(value: str) -> bots.BotScript:
    path = Path(value)
    if path.exists():
        return bots.load_botscript_file(path)
    builtin = bots.builtin_botscript_names()
    if value in builtin:
        return bots.load_builtin_botscript(value)
    raise click.UsageError(f"bot script {value!r} is neither a file nor a built-in ({', '.join(builtin)})")


def _default_log_path(scenario_id: str, seed: int) -> Path:
    log_dir = Path(os.environ.get("CODETEAM_LOG_DIR", "."))
    log_dir.mkdir(parents=True, exist_ok=True)
    return log_dir / f"{scenario_id}-seed{seed}.cts"


@click.group()
def main() -> None:
    """Deterministic cardiac-arrest team training engine."""


@main.command()
@click.option("--scenario", "scenario_arg", required=True, help="Scenario file or built-in name.")
@click.option("--bind", default="127.0.0.1:8776", show_default=True, help="host:port to listen on.")
@click.option("--seed", default=42, show_default=True, type=int)
@click.option("--tick-ms", default=100, show_default=True, type=int)
@click.option("--duration-ms", default=0, type=int, help="Auto-end the session at this sim time (0 = run until ended).")
@click.option("--realtime-scale", default=1.0, show_default=True, type=float, help="Sim speed multiplier.")
@click.option("--out", "out_path", default=None, help="Log file path (default: CODETEAM_LOG_DIR).")
def serve(scenario_arg, bind, seed, tick_ms, duration_ms, realtime_scale, out_path):
    """Serve a live session over WebSocket."""
    from .netserver import run_server

    sc = _load_scenario_arg(scenario_arg)
    host, _, port = bind.partition(":")
    if not port:
        raise click.UsageError(f"--bind must be host:port, got {bind!r}")
    log_path = Path(out_path) if out_path else _default_log_path(sc.id, seed)
    click.echo(f"serving scenario {sc.id!r} on {bind}, log -> {log_path}", err=True)
    run_server(
        sc,
        host=host,
        port=int(port),
        seed=seed,
        tick_ms=tick_ms,
        duration_ms=duration_ms,
        realtime_scale=realtime_scale,
        log_path=log_path,
    )


@main.command()
@click.option("--scenario", "scenario_arg", required=True, help="Scenario file or built-in name.")
@click.option("--bots", "bots_arg", required=True, help="Bot script file or built-in name.")
@click.option("--seed", required=True, type=int)
@click.option("--out", "out_path", default=None, help="Output .cts path (default: CODETEAM_LOG_DIR).")
@click.option("--tick-ms", default=100, show_default=True, type=int)
def simulate(scenario_arg, bots_arg, seed, out_path, tick_ms):
    """Run a headless scripted session, faster than real time, and write the log."""
    sc = _load_scenario_arg(scenario_arg)
    script = _load_botscript_arg(bots_arg)
    try:
        log = bots.run_scripted_session(sc, script, seed=seed, tick_ms=tick_ms)
    except CodeTeamError as exc:
        click.echo(f"simulation failed: {exc}", err=True)
        sys.exit(1)
    path = Path(out_path) if out_path else _default_log_path(sc.id, seed)
    logstore.write_log(log, path)
    click.echo(str(path))


@main.command()
@click.option("--log", "log_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--at", "at_ms", default=None, type=int, help="Reconstruct state at this sim time (ms).")
@click.option("--verify", is_flag=True, help="Re-simulate and compare every event byte-for-byte.")
@click.option("--scenario", "scenario_arg", default=None, help="Override the scenario embedded in the log header.")
def replay(log_path, at_ms, verify, scenario_arg):
    """Inspect a log: summary by default, state at a time, or full verification."""
    try:
        log = logstore.read_log(log_path)
    except CodeTeamError as exc:
        click.echo(f"cannot read log: {exc}", err=True)
        sys.exit(1)
    sc = _load_scenario_arg(scenario_arg) if scenario_arg else None
    if verify:
        try:
            verdict = logstore.verify_determinism(log, sc)
        except CodeTeamError as exc:
            click.echo(f"verification failed: {exc}", err=True)
            sys.exit(1)
        if verdict.ok:
            click.echo("OK")
            return
        click.echo(f"DIVERGED seq={verdict.first_divergent_seq}")
        click.echo(verdict.detail, err=True)
        sys.exit(1)
    if at_ms is not None:
        try:
            patient, vitals, roster = logstore.state_at(log, at_ms)
        except CodeTeamError as exc:
            click.echo(f"cannot reconstruct: {exc}", err=True)
            sys.exit(1)
        click.echo(
            json.dumps(
                {
                    "time_ms": at_ms,
                    "patient": patient.to_payload(),
                    "vitals": vitals.to_payload(),
                    "roster": roster,
                    "state_hash": f"{state_hash(patient, vitals):016x}",
                },
                indent=2,
                sort_keys=True,
            )
        )
        return
    counts: dict[str, int] = {}
    for e in log.events:
        counts[e.kind.value] = counts.get(e.kind.value, 0) + 1
    summary = {
        "scenario_id": log.header.scenario_id,
        "seed": log.header.seed,
        "events": len(log.events),
        "end_ms": log.end_time(),
        "by_kind": dict(sorted(counts.items())),
        "transitions": [
            {"time_ms": e.time, "from": e.payload["from"], "to": e.payload["to"], "cause": e.payload["cause"]}
            for e in log.events
            if e.kind.value == "StateTransition"
        ],
    }
    click.echo(json.dumps(summary, indent=2, sort_keys=True))


@main.command()
@click.option("--log", "log_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--scenario", "scenario_arg", default=None, help="Override the scenario embedded in the log header.")
@click.option("--out", "out_path", default=None, help="Report JSON path (default: <log>.report.json).")
@click.option("--w1", "w1_ms", default=5000, show_default=True, type=int, help="Acknowledgement window (ms).")
@click.option("--w2", "w2_ms", default=60000, show_default=True, type=int, help="Completion-report window (ms).")
def analyze(log_path, scenario_arg, out_path, w1_ms, w2_ms):
    """Build the post-session CRM report (JSON to file, summary to stdout)."""
    try:
        log = logstore.read_log(log_path)
        sc = _load_scenario_arg(scenario_arg) if scenario_arg else None
        report = analytics.build_report(log, sc, w1_ack_ms=w1_ms, w2_report_ms=w2_ms)
    except CodeTeamError as exc:
        click.echo(f"analysis failed: {exc}", err=True)
        sys.exit(1)
    path = Path(out_path) if out_path else Path(str(log_path) + ".report.json")
    path.write_text(report.to_json(), encoding="utf-8")
    click.echo(report.to_text())
    click.echo(f"report written to {path}", err=True)


@main.command("validate-scenario")
@click.argument("scenario_arg")
def validate_scenario_cmd(scenario_arg):
    """Parse and validate a scenario document; exit 1 on Error issues."""
    try:
        sc = _load_scenario_arg(scenario_arg)
    except CodeTeamError as exc:
        click.echo(f"Error: {exc}")
        sys.exit(1)
    issues = scenario_mod.validate_scenario(sc)
    for issue in issues:
        click.echo(f"{issue.severity}: {issue.path}: {issue.message}")
    if any(i.severity == "Error" for i in issues):
        sys.exit(1)
    click.echo(f"scenario {sc.id!r} is valid ({len(issues)} warning(s))")


@main.command()
@click.option("--log", "log_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--telemetry", "telemetry_path", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Newline-delimited JSON: {user, channel, time, value}.")
@click.option("--transcript", "transcript_path", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Newline-delimited JSON: {speaker, time, text, tags, addressee, orders_action}.")
@click.option("--out", "out_path", required=True)
def ingest(log_path, telemetry_path, transcript_path, out_path):
    """Merge post-session telemetry/transcript records into a log."""
    from .model import ActionKind, Role

    try:
        log = logstore.read_log(log_path)
        if telemetry_path:
            samples = []
            for line in Path(telemetry_path).read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                d = json.loads(line)
                samples.append(
                    logstore.TelemetrySample(
                        user=Role(d["user"]), channel=d["channel"], time=d["time"], value=float(d["value"])
                    )
                )
            log = logstore.ingest_telemetry(log, samples)
        if transcript_path:
            utterances = []
            for line in Path(transcript_path).read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                d = json.loads(line)
                utterances.append(
                    logstore.Utterance(
                        speaker=Role(d["speaker"]),
                        time=d["time"],
                        text=d["text"],
                        tags=tuple(d.get("tags", ())),
                        addressee=Role(d["addressee"]) if d.get("addressee") else None,
                        orders_action=ActionKind(d["orders_action"]) if d.get("orders_action") else None,
                    )
                )
            log = logstore.ingest_transcript(log, utterances)
    except CodeTeamError as exc:
        click.echo(f"ingest failed: {exc}", err=True)
        sys.exit(1)
    logstore.write_log(log, out_path)
    click.echo(str(out_path))


if __name__ == "__main__":
    main()
