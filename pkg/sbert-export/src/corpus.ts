// Reader for the canonical conversation JSONL this tool consumes:
// {"id": ..., "dialogue": [{"speaker": ..., "text": ...}, ...], "summary"?}.
// Only id and utterance texts matter here; summaries pass through untouched.
import * as fs from "node:fs";

export interface Conversation {
  id: string;
  texts: string[];
}

function fail(path: string, line: number, msg: string): never {
  throw new Error(`${path}:${line}: ${msg}`);
}

export function parseCorpus(path: string): Conversation[] {
  const raw = fs.readFileSync(path, "utf-8");
  const out: Conversation[] = [];
  const seen = new Set<string>();
  const lines = raw.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    const ln = i + 1;
    let rec: unknown;
    try {
      rec = JSON.parse(line);
    } catch (exc) {
      fail(path, ln, `invalid JSON: ${(exc as Error).message}`);
    }
    if (typeof rec !== "object" || rec === null || Array.isArray(rec)) {
      fail(path, ln, "record is not an object");
    }
    const obj = rec as Record<string, unknown>;
    if (obj.id === undefined || obj.id === null) fail(path, ln, "record missing 'id'");
    const id = String(obj.id);
    if (seen.has(id)) fail(path, ln, `duplicate id '${id}'`);
    seen.add(id);
    if (!Array.isArray(obj.dialogue) || obj.dialogue.length === 0) {
      fail(path, ln, "record missing a nonempty 'dialogue' array");
    }
    const texts: string[] = [];
    for (const [j, turn] of obj.dialogue.entries()) {
      if (typeof turn !== "object" || turn === null) {
        fail(path, ln, `dialogue[${j}] is not an object`);
      }
      const text = (turn as Record<string, unknown>).text;
      if (typeof text !== "string") {
        fail(path, ln, `dialogue[${j}] missing string 'text'`);
      }
      texts.push(text);
    }
    out.push({ id, texts });
  }
  return out;
}
