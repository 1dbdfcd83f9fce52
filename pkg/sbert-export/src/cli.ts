#!/usr/bin/env node
import { parseArgs } from "node:util";
import { exportEmbeddings } from "./export.js";

const USAGE =
  "usage: sbert-export export --in CORPUS.jsonl --out VECTORS.jsonl " +
  "--model NAME [--batch 32]";

export async function main(argv: string[]): Promise<number> {
  if (argv[0] !== "export") {
    console.error(USAGE);
    return 2;
  }
  let parsed;
  try {
    parsed = parseArgs({
      args: argv.slice(1),
      options: {
        in: { type: "string" },
        out: { type: "string" },
        model: { type: "string" },
        batch: { type: "string", default: "32" },
      },
    });
  } catch (exc) {
    console.error(`error: ${(exc as Error).message}`);
    console.error(USAGE);
    return 2;
  }
  const { in: inPath, out: outPath, model, batch } = parsed.values;
  if (!inPath || !outPath || !model) {
    console.error("error: --in, --out, and --model are all required");
    console.error(USAGE);
    return 2;
  }
  try {
    const n = await exportEmbeddings({
      inPath,
      outPath,
      model,
      batchSize: Number(batch),
    });
    console.error(`exported ${n} conversations to ${outPath}`);
    return 0;
  } catch (exc) {
    console.error(`error: ${(exc as Error).message}`);
    return 1;
  }
}

if (import.meta.url === `file://${process.argv[1]}`) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
