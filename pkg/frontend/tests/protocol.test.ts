import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { parseLogText, parseReport, parseServerMessage } from "../src/protocol.js";

const FIXTURES = join(__dirname, "fixtures");
const reportText = readFileSync(join(FIXTURES, "vf-megacode-seed42.report.json"), "utf-8");
const logText = readFileSync(join(FIXTURES, "vf-megacode-seed42.cts"), "utf-8");

describe("parseServerMessage", () => {
  it("accepts tagged frames", () => {
    const message = parseServerMessage('{"type":"vitals","time_ms":1000,"vitals":{"heart_rate":0}}');
    expect(message.type).toBe("vitals");
  });

  it("rejects unknown tags", () => {
    expect(() => parseServerMessage('{"type":"telepathy"}')).toThrow(/unknown server message type/);
  });

  it("rejects non-objects", () => {
    expect(() => parseServerMessage("[1,2]")).toThrow(/JSON object/);
  });
});

describe("parseLogText", () => {
  it("parses the golden fixture", () => {
    const log = parseLogText(logText);
    expect(log.header.scenario_id).toBe("vf-megacode");
    expect(log.header.seed).toBe(42);
    expect(log.events.length).toBeGreaterThan(600);
    expect(log.events[0].kind).toBe("SessionStart");
    expect(log.events[log.events.length - 1].kind).toBe("SessionEnd");
  });

  it("enforces gapless seq", () => {
    const lines = logText.split("\n").filter((l) => l.length > 0);
    const broken = [lines[0], lines[1], lines[3]].join("\n");
    expect(() => parseLogText(broken)).toThrow(/seq gap/);
  });

  it("rejects a wrong schema version", () => {
    const lines = logText.split("\n");
    const header = JSON.parse(lines[0]);
    header.schema_version = 99;
    expect(() => parseLogText([JSON.stringify(header), ...lines.slice(1)].join("\n"))).toThrow(
      /schema_version/,
    );
  });
});

describe("parseReport", () => {
  it("parses the golden report", () => {
    const report = parseReport(reportText);
    expect(report.scenario_id).toBe("vf-megacode");
    expect(report.coverage.length).toBe(3);
    expect(report.closed_loop.rate).toBe(1.0);
  });

  it("refuses version mismatches outright", () => {
    const doc = JSON.parse(reportText);
    doc.schema_version = 2;
    expect(() => parseReport(JSON.stringify(doc))).toThrow(/schema_version 2/);
  });
});
