import fs from "node:fs";
import os from "node:os";
import path from "node:path";
import { afterEach, describe, expect, it } from "vitest";

import { formatLossLine, readSamples, writeLosses } from "../src/records.js";

const tmpFiles: string[] = [];

function tmpFile(name: string, content?: string): string {
  const file = path.join(fs.mkdtempSync(path.join(os.tmpdir(), "adapter-")), name);
  if (content !== undefined) fs.writeFileSync(file, content);
  tmpFiles.push(file);
  return file;
}

afterEach(() => {
  tmpFiles.length = 0;
});

describe("readSamples", () => {
  it("parses well-formed lines in order", () => {
    const file = tmpFile(
      "samples.jsonl",
      [
        JSON.stringify({ id: "a", question: "q1", answer: "ans one" }),
        JSON.stringify({ id: "b", question: "q2", answer: "ans two", image_ref: "x.png" }),
        "",
      ].join("\n")
    );
    const samples = readSamples(file);
    expect(samples.map((s) => s.id)).toEqual(["a", "b"]);
    expect(samples[1].image_ref).toBe("x.png");
  });

  it("names the line number of malformed JSON", () => {
    const file = tmpFile(
      "samples.jsonl",
      JSON.stringify({ id: "a", question: "q", answer: "x" }) + "\nnot json\n"
    );
    expect(() => readSamples(file)).toThrow(/:2/);
  });

  it("rejects duplicate ids", () => {
    const line = JSON.stringify({ id: "dup", question: "q", answer: "x" });
    const file = tmpFile("samples.jsonl", line + "\n" + line + "\n");
    expect(() => readSamples(file)).toThrow(/dup/);
  });

  it("rejects empty answers and unknown keys", () => {
    const empty = tmpFile(
      "samples.jsonl",
      JSON.stringify({ id: "a", question: "q", answer: "" }) + "\n"
    );
    expect(() => readSamples(empty)).toThrow(/answer/);
    const unknown = tmpFile(
      "samples.jsonl",
      JSON.stringify({ id: "a", question: "q", answer: "x", extra: 1 }) + "\n"
    );
    expect(() => readSamples(unknown)).toThrow();
  });
});

describe("loss output", () => {
  it("round-trips float values through shortest-decimal JSON", () => {
    const loss = 2.0656228784027951;
    const line = formatLossLine({ sample_id: "a", loss, scorer_id: "m" });
    expect(JSON.parse(line).loss).toBe(loss);
  });

  it("rejects non-finite and negative losses", () => {
    expect(() => formatLossLine({ sample_id: "a", loss: NaN, scorer_id: "m" })).toThrow(/a/);
    expect(() => formatLossLine({ sample_id: "a", loss: -0.5, scorer_id: "m" })).toThrow(/a/);
  });

  it("writes a comment header line first", () => {
    const file = tmpFile("losses.jsonl");
    writeLosses([{ sample_id: "a", loss: 1.5, scorer_id: "m" }], file, "template v1");
    const lines = fs.readFileSync(file, "utf8").trimEnd().split("\n");
    expect(lines[0]).toBe("# template v1");
    expect(JSON.parse(lines[1]).sample_id).toBe("a");
  });
});
