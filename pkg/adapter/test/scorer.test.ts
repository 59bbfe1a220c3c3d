import fs from "node:fs";
import os from "node:os";
import path from "node:path";
import { describe, expect, it } from "vitest";

import type { ModelBackend } from "../src/backends.js";
import { LocalNgramBackend } from "../src/backends.js";
import type { SampleRecord } from "../src/records.js";
import { adapterScore } from "../src/scorer.js";

function tmpDir(): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), "adapter-scorer-"));
}

function writeSamples(dir: string, samples: SampleRecord[]): string {
  const file = path.join(dir, "samples.jsonl");
  fs.writeFileSync(file, samples.map((s) => JSON.stringify(s) + "\n").join(""));
  return file;
}

const SAMPLES: SampleRecord[] = [
  { id: "s1", question: "q1", answer: "first answer text" },
  { id: "s2", question: "q2", answer: "second answer text" },
  { id: "s3", question: "q3", answer: "third answer text" },
];

describe("adapterScore", () => {
  it("writes one record per sample with a header comment", async () => {
    const dir = tmpDir();
    const out = path.join(dir, "losses.jsonl");
    const result = await adapterScore(
      {
        model: "local:ngram-v1",
        samplesPath: writeSamples(dir, SAMPLES),
        outPath: out,
        batchSize: 2,
        device: "cpu",
      },
      new LocalNgramBackend()
    );
    expect(result.scored).toBe(3);
    expect(result.skipped).toEqual([]);
    const lines = fs.readFileSync(out, "utf8").trimEnd().split("\n");
    expect(lines[0]).toMatch(/^# scorer=local:ngram-v1 device=cpu unit=nats-per-answer-token/);
    const ids = lines.slice(1).map((l) => JSON.parse(l).sample_id);
    expect(ids).toEqual(["s1", "s2", "s3"]);
  });

  it("skips failing samples with a warning and keeps going", async () => {
    const flaky: ModelBackend = {
      scorerId: "flaky-model",
      templateNote: "test backend",
      async score(sample) {
        if (sample.id === "s2") throw new Error("inference exploded");
        return 1.5;
      },
    };
    const dir = tmpDir();
    const out = path.join(dir, "losses.jsonl");
    const warnings: string[] = [];
    const result = await adapterScore(
      {
        model: "flaky-model",
        samplesPath: writeSamples(dir, SAMPLES),
        outPath: out,
        batchSize: 8,
        device: "cpu",
      },
      flaky,
      (m) => warnings.push(m)
    );
    expect(result.scored).toBe(2);
    expect(result.skipped).toEqual(["s2"]);
    expect(warnings.join("\n")).toMatch(/s2.*inference exploded/);
    const ids = fs
      .readFileSync(out, "utf8")
      .trimEnd()
      .split("\n")
      .slice(1)
      .map((l) => JSON.parse(l).sample_id);
    expect(ids).toEqual(["s1", "s3"]);
  });

  it("fails outright when nothing can be scored", async () => {
    const dead: ModelBackend = {
      scorerId: "dead-model",
      templateNote: "test backend",
      async score() {
        throw new Error("model not loadable");
      },
    };
    const dir = tmpDir();
    await expect(
      adapterScore(
        {
          model: "dead-model",
          samplesPath: writeSamples(dir, SAMPLES),
          outPath: path.join(dir, "losses.jsonl"),
          batchSize: 4,
          device: "cpu",
        },
        dead,
        () => {}
      )
    ).rejects.toThrow(/scored no samples/);
  });

  it("rejects invalid batch sizes", async () => {
    const dir = tmpDir();
    await expect(
      adapterScore(
        {
          model: "local:ngram-v1",
          samplesPath: writeSamples(dir, SAMPLES),
          outPath: path.join(dir, "out.jsonl"),
          batchSize: 0,
          device: "cpu",
        },
        new LocalNgramBackend()
      )
    ).rejects.toThrow(/batch/);
  });

  it("two runs produce identical loss values", async () => {
    const dir = tmpDir();
    const samplesPath = writeSamples(dir, SAMPLES);
    const outputs: string[] = [];
    for (const name of ["a.jsonl", "b.jsonl"]) {
      const out = path.join(dir, name);
      await adapterScore(
        { model: "local:ngram-v1", samplesPath, outPath: out, batchSize: 2, device: "cpu" },
        new LocalNgramBackend()
      );
      outputs.push(fs.readFileSync(out, "utf8"));
    }
    expect(outputs[0]).toBe(outputs[1]);
  });
});
