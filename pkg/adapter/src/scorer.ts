/**
 * Batch scoring loop: read samples, score each with the backend, write
 * the losses file.  A failed sample is skipped with a warning and the
 * run continues; downstream validation will then flag the missing id,
 * which is the intended failure surface.
 */

import type { ModelBackend } from "./backends.js";
import { LossRecord, readSamples, writeLosses } from "./records.js";

export interface AdapterConfig {
  model: string;
  samplesPath: string;
  outPath: string;
  batchSize: number;
  device: string;
}

export interface AdapterResult {
  scored: number;
  skipped: string[];
}

export async function adapterScore(
  config: AdapterConfig,
  backend: ModelBackend,
  warn: (message: string) => void = (m) => console.error(m)
): Promise<AdapterResult> {
  if (config.batchSize < 1) {
    throw new Error(`batch size must be >= 1, got ${config.batchSize}`);
  }
  const samples = readSamples(config.samplesPath);
  await backend.prepare?.(samples);

  const losses: LossRecord[] = [];
  const skipped: string[] = [];
  for (let start = 0; start < samples.length; start += config.batchSize) {
    const batch = samples.slice(start, start + config.batchSize);
    const settled = await Promise.allSettled(batch.map((sample) => backend.score(sample)));
    settled.forEach((result, i) => {
      const sample = batch[i];
      if (result.status === "fulfilled" && Number.isFinite(result.value) && result.value >= 0) {
        losses.push({ sample_id: sample.id, loss: result.value, scorer_id: backend.scorerId });
      } else {
        const reason =
          result.status === "rejected" ? String(result.reason) : `invalid loss ${result.value}`;
        warn(`warning: skipping sample ${sample.id}: ${reason}`);
        skipped.push(sample.id);
      }
    });
  }

  if (samples.length > 0 && losses.length === 0) {
    throw new Error(`model ${backend.scorerId} scored no samples; first failure left above`);
  }
  const header =
    `scorer=${backend.scorerId} device=${config.device} ` +
    `unit=nats-per-answer-token template=${backend.templateNote}`;
  writeLosses(losses, config.outPath, header);
  return { scored: losses.length, skipped };
}
