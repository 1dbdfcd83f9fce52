// Sentence encoders. "test" is a fully deterministic hash-projection encoder
// used for plumbing and CI; any other name is treated as a pretrained
// sentence-transformer checkpoint and needs the optional runtime installed
// plus the weights available, otherwise loading fails with a clear error.

export interface Encoder {
  encodeBatch(texts: string[]): Promise<number[][]>;
}

export const TEST_MODEL = "test";
const TEST_DIM = 768;

// 32-bit FNV-1a over UTF-16 code units; cheap and stable across platforms.
function fnv1a(s: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < s.length; i++) {
    h ^= s.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}

// mulberry32: tiny deterministic PRNG, one 32-bit word of state.
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function tokenVector(token: string): number[] {
  const next = mulberry32(fnv1a(token));
  const v = new Array<number>(TEST_DIM);
  for (let d = 0; d < TEST_DIM; d++) v[d] = 2 * next() - 1;
  return v;
}

// Mean of per-token hash projections. Tokens are lowercase word/number runs;
// a text with no such runs hashes whole so no input ever maps to the zero
// vector. Output is intentionally left unnormalized.
export function testEncode(text: string): number[] {
  const tokens = text.toLowerCase().match(/[a-z0-9']+/g) ?? [text];
  const acc = new Array<number>(TEST_DIM).fill(0);
  for (const tok of tokens) {
    const v = tokenVector(tok);
    for (let d = 0; d < TEST_DIM; d++) acc[d] += v[d];
  }
  for (let d = 0; d < TEST_DIM; d++) {
    acc[d] = Math.round((acc[d] / tokens.length) * 1e6) / 1e6;
  }
  return acc;
}

async function transformersEncoder(name: string): Promise<Encoder> {
  let mod: any;
  try {
    mod = await import("@xenova/transformers");
  } catch {
    throw new Error(
      `model '${name}' is unavailable: optional dependency @xenova/transformers ` +
        "is not installed; run 'npm install @xenova/transformers' and make sure " +
        "the model weights are present locally",
    );
  }
  let pipe: any;
  try {
    pipe = await mod.pipeline("feature-extraction", name);
  } catch (exc) {
    throw new Error(`failed to load model '${name}': ${(exc as Error).message}`);
  }
  return {
    async encodeBatch(texts: string[]): Promise<number[][]> {
      const out = await pipe(texts, { pooling: "mean", normalize: false });
      return out.tolist();
    },
  };
}

export async function loadEncoder(name: string): Promise<Encoder> {
  if (name === TEST_MODEL) {
    return { encodeBatch: async (texts) => texts.map(testEncode) };
  }
  return transformersEncoder(name);
}
