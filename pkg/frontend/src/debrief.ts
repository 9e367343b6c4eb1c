/**
 * Instructor debrief model: built entirely from the downloaded report
 * document plus (optionally) the raw .cts log, so it works fully offline.
 * The scrubber is display-only: it reads the recorded VitalsSamples and
 * StateTransitions, never re-running physiology.
 */

import {
  CrmReport,
  LogEvent,
  ParsedLog,
  TimelineMarker,
  VitalsPayload,
  parseLogText,
  parseReport,
} from "./protocol.js";

export interface ScrubView {
  time: number;
  rhythm: string;
  vitals: VitalsPayload | null;
  sampleTime: number | null;
}

export interface TranscriptLine {
  time: number;
  speaker: string;
  text: string;
  tags: string[];
}

export interface SeriesPoint {
  time: number;
  value: number;
}

export class DebriefModel {
  readonly report: CrmReport;
  readonly log: ParsedLog | null;
  scrubPosition = 0;

  constructor(reportText: string, logText?: string) {
    this.report = parseReport(reportText);
    this.log = logText !== undefined ? parseLogText(logText) : null;
  }

  markers(): TimelineMarker[] {
    return this.report.timeline_markers;
  }

  transcript(): TranscriptLine[] {
    if (this.log === null) {
      return [];
    }
    return this.log.events
      .filter((e) => e.kind === "Utterance")
      .map((e) => ({
        time: e.time,
        speaker: e.actor,
        text: String(e.payload["text"]),
        tags: (e.payload["tags"] as string[]) ?? [],
      }));
  }

  vitalsSamples(): Array<{ time: number; vitals: VitalsPayload }> {
    if (this.log === null) {
      return [];
    }
    return this.log.events
      .filter((e) => e.kind === "VitalsSample")
      .map((e) => ({ time: e.time, vitals: e.payload["vitals"] as VitalsPayload }));
  }

  telemetrySeries(channel: string): SeriesPoint[] {
    if (this.log === null) {
      return [];
    }
    return this.log.events
      .filter((e) => e.kind === "TelemetrySample" && e.payload["channel"] === channel)
      .map((e) => ({ time: e.time, value: Number(e.payload["value"]) }));
  }

  telemetryChannels(): string[] {
    if (this.log === null) {
      return [];
    }
    const channels = new Set<string>();
    for (const e of this.log.events) {
      if (e.kind === "TelemetrySample") {
        channels.add(String(e.payload["channel"]));
      }
    }
    return [...channels].sort();
  }

  /** Move the scrubber: state shown is the log's record at or before t. */
  scrub(t: number): ScrubView {
    this.scrubPosition = t;
    let rhythm = this.log?.header.scenario.initial_rhythm ?? "";
    let vitals: VitalsPayload | null = null;
    let sampleTime: number | null = null;
    if (this.log !== null) {
      for (const e of this.log.events) {
        if (e.time > t) {
          break;
        }
        if (e.kind === "StateTransition") {
          rhythm = String(e.payload["to"]);
        } else if (e.kind === "VitalsSample") {
          vitals = e.payload["vitals"] as VitalsPayload;
          sampleTime = e.time;
        }
      }
    }
    return { time: t, rhythm, vitals, sampleTime };
  }

  events(): LogEvent[] {
    return this.log?.events ?? [];
  }
}
