/**
 * End-to-end acceptance for the adapter: score the bundled toy dataset
 * through the built CLI, then feed the losses file to the curation
 * pipeline's own validator and filter and require a clean exit.
 */

import { execFileSync, spawnSync } from "node:child_process";
import fs from "node:fs";
import os from "node:os";
import path from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

const HERE = path.dirname(fileURLToPath(import.meta.url));
const ADAPTER_ROOT = path.resolve(HERE, "..");
const REPO_ROOT = path.resolve(ADAPTER_ROOT, "..");
const TOY_SAMPLES = path.join(REPO_ROOT, "data", "toy_samples.jsonl");
const CLI = path.join(ADAPTER_ROOT, "dist", "cli.js");

function pythonAvailable(): boolean {
  const probe = spawnSync("python3", ["-c", "import beecurate"], { encoding: "utf8" });
  return probe.status === 0;
}

describe("adapter CLI on the bundled toy dataset", () => {
  const workDir = fs.mkdtempSync(path.join(os.tmpdir(), "adapter-int-"));
  const lossesPath = path.join(workDir, "adapter_losses.jsonl");

  it("scores all 200 samples with finite non-negative losses", () => {
    const stdout = execFileSync(
      process.execPath,
      [CLI, "--model", "local:ngram-v1", "--samples", TOY_SAMPLES, "--out", lossesPath],
      { encoding: "utf8" }
    );
    expect(stdout).toMatch(/scored 200 samples/);
    const lines = fs.readFileSync(lossesPath, "utf8").trimEnd().split("\n");
    expect(lines[0].startsWith("#")).toBe(true);
    const records = lines.slice(1).map((l) => JSON.parse(l));
    expect(records).toHaveLength(200);
    for (const record of records) {
      expect(Number.isFinite(record.loss)).toBe(true);
      expect(record.loss).toBeGreaterThanOrEqual(0);
      expect(record.scorer_id).toBe("local:ngram-v1");
    }
  });

  it("exits non-zero for an unknown model or missing samples file", () => {
    const badModel = spawnSync(
      process.execPath,
      [CLI, "--model", "mystery", "--samples", TOY_SAMPLES, "--out", lossesPath],
      { encoding: "utf8" }
    );
    expect(badModel.status).not.toBe(0);
    expect(badModel.stderr).toMatch(/unknown model/);

    const badSamples = spawnSync(
      process.execPath,
      [CLI, "--model", "local:ngram-v1", "--samples", "nowhere.jsonl", "--out", lossesPath],
      { encoding: "utf8" }
    );
    expect(badSamples.status).not.toBe(0);
  });

  it.skipIf(!pythonAvailable())(
    "losses validate and filter cleanly through the curation pipeline",
    () => {
      execFileSync(
        process.execPath,
        [CLI, "--model", "local:ngram-v1", "--samples", TOY_SAMPLES, "--out", lossesPath],
        { encoding: "utf8" }
      );
      const outDir = path.join(workDir, "pipeline");
      const score = spawnSync(
        "python3",
        [
          "-m",
          "beecurate.cli",
          "score",
          "--samples",
          TOY_SAMPLES,
          "--scorer",
          `external:${lossesPath}`,
          "--out",
          outDir,
        ],
        { encoding: "utf8" }
      );
      expect(score.status, score.stderr).toBe(0);
      const filter = spawnSync(
        "python3",
        ["-m", "beecurate.cli", "filter", "--samples", TOY_SAMPLES, "--out", outDir, "--n", "2"],
        { encoding: "utf8" }
      );
      expect(filter.status, filter.stderr).toBe(0);
      const report = JSON.parse(fs.readFileSync(path.join(outDir, "report.json"), "utf8"));
      expect(report.kept_count + report.discarded_count).toBe(200);
    }
  );
});
