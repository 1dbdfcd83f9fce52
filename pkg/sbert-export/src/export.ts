import * as fs from "node:fs";
import { parseCorpus } from "./corpus.js";
import { Encoder, loadEncoder } from "./encoder.js";

export interface ExportOptions {
  inPath: string;
  outPath: string;
  model: string;
  batchSize: number;
}

async function encodeAll(enc: Encoder, texts: string[], batchSize: number): Promise<number[][]> {
  const rows: number[][] = [];
  for (let i = 0; i < texts.length; i += batchSize) {
    const got = await enc.encodeBatch(texts.slice(i, i + batchSize));
    rows.push(...got);
  }
  return rows;
}

// One output record per conversation, vectors in utterance order, written
// unnormalized; the consumer normalizes on load. Returns the record count.
export async function exportEmbeddings(opts: ExportOptions): Promise<number> {
  if (!Number.isInteger(opts.batchSize) || opts.batchSize < 1) {
    throw new Error(`batch size must be a positive integer, got ${opts.batchSize}`);
  }
  const convs = parseCorpus(opts.inPath);
  const enc = await loadEncoder(opts.model);
  const lines: string[] = [];
  for (const conv of convs) {
    const vectors = await encodeAll(enc, conv.texts, opts.batchSize);
    lines.push(JSON.stringify({ id: conv.id, dim: vectors[0].length, vectors }));
  }
  fs.writeFileSync(opts.outPath, lines.map((l) => l + "\n").join(""));
  return convs.length;
}
