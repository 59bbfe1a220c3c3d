/**
 * Record I/O for the sample and loss wire formats shared with the
 * curation pipeline: line-delimited JSON, one object per line, with
 * `#`-prefixed comment lines allowed in loss files.
 */

import fs from "node:fs";
import { z } from "zod";

export const sampleSchema = z
  .object({
    id: z.string().min(1),
    question: z.string(),
    answer: z.string().min(1),
    image_ref: z.string().optional(),
    metadata: z.record(z.string()).optional(),
  })
  .strict();

export type SampleRecord = z.infer<typeof sampleSchema>;

export interface LossRecord {
  sample_id: string;
  loss: number;
  scorer_id: string;
}

export function readSamples(path: string): SampleRecord[] {
  const text = fs.readFileSync(path, "utf8");
  const records: SampleRecord[] = [];
  const seen = new Set<string>();
  text.split("\n").forEach((line, index) => {
    const trimmed = line.trim();
    if (!trimmed || trimmed.startsWith("#")) return;
    let parsed: unknown;
    try {
      parsed = JSON.parse(trimmed);
    } catch {
      throw new Error(`${path}:${index + 1}: malformed JSON line`);
    }
    const result = sampleSchema.safeParse(parsed);
    if (!result.success) {
      const issue = result.error.issues[0];
      throw new Error(`${path}:${index + 1}: ${issue.path.join(".")} ${issue.message}`);
    }
    if (seen.has(result.data.id)) {
      throw new Error(`${path}: duplicate sample id ${result.data.id}`);
    }
    seen.add(result.data.id);
    records.push(result.data);
  });
  return records;
}

export function formatLossLine(record: LossRecord): string {
  if (!Number.isFinite(record.loss)) {
    throw new Error(`refusing to write non-finite loss for ${record.sample_id}`);
  }
  if (record.loss < 0) {
    throw new Error(`refusing to write negative loss for ${record.sample_id}`);
  }
  return JSON.stringify({
    sample_id: record.sample_id,
    loss: record.loss,
    scorer_id: record.scorer_id,
  });
}

/** Writes a losses file; the header becomes a leading `#` comment line. */
export function writeLosses(records: LossRecord[], path: string, header?: string): void {
  const lines: string[] = [];
  if (header) lines.push(`# ${header.replace(/\n/g, " ")}`);
  for (const record of records) lines.push(formatLossLine(record));
  fs.writeFileSync(path, lines.map((l) => l + "\n").join(""), "utf8");
}
