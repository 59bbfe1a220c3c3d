#!/usr/bin/env node
/**
 * adapter --model <id> --samples <path> --out <path> [--batch <k>] [--device <d>]
 *
 * Scores every sample in a samples file with the chosen model backend
 * and writes a losses file in the pipeline's wire format.
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { makeBackend } from "./backends.js";
import { adapterScore } from "./scorer.js";

export async function main(argv: string[]): Promise<number> {
  const args = yargs(argv)
    .scriptName("adapter")
    .option("model", {
      type: "string",
      demandOption: true,
      describe: "model id: 'local:ngram-v1' or 'openai:<served model>'",
    })
    .option("samples", { type: "string", demandOption: true, describe: "samples .jsonl file" })
    .option("out", { type: "string", demandOption: true, describe: "losses .jsonl to write" })
    .option("batch", { type: "number", default: 8, describe: "samples per scoring batch" })
    .option("device", { type: "string", default: "cpu", describe: "device hint for the backend" })
    .strict()
    .help()
    .parseSync();

  try {
    const backend = makeBackend(args.model);
    const result = await adapterScore(
      {
        model: args.model,
        samplesPath: args.samples,
        outPath: args.out,
        batchSize: args.batch,
        device: args.device,
      },
      backend
    );
    const skippedNote = result.skipped.length ? ` (skipped ${result.skipped.length})` : "";
    console.log(`scored ${result.scored} samples with ${backend.scorerId}${skippedNote} -> ${args.out}`);
    return 0;
  } catch (error) {
    console.error(`error: ${error instanceof Error ? error.message : error}`);
    return 1;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url.endsWith(process.argv[1].split("/").pop() ?? "");
if (invokedDirectly) {
  main(hideBin(process.argv)).then((code) => {
    process.exitCode = code;
  });
}
