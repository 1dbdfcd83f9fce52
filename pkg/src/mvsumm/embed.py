"""Per-utterance sentence vectors.

Two sources share one output type: a TF-IDF bag projected to a small dense
space through a seeded random matrix (self-contained, no trained weights),
or vectors computed elsewhere and imported from JSONL. Rows are unit L2
length; an utterance with no in-vocabulary tokens keeps the zero vector and
its cosine against anything is defined as 0.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus import Conversation, tokenize


@dataclass
class EmbeddingMatrix:
    id: str
    matrix: np.ndarray  # (m, d) float64, rows unit-norm or zero

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ValueError(f"embedding matrix for {self.id!r} must be 2-d")


@dataclass
class TfidfModel:
    token_index: dict[str, int]
    idf: np.ndarray         # (n_tokens,)
    dim: int
    seed: int
    projection: np.ndarray  # (n_tokens, dim), regenerable from seed

    def save(self, path: str) -> None:
        tokens = sorted(self.token_index, key=self.token_index.get)
        blob = {
            "tokens": tokens,
            "idf": self.idf.tolist(),
            "dim": self.dim,
            "seed": self.seed,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(blob, fh, ensure_ascii=False)

    @classmethod
    def load(cls, path: str) -> "TfidfModel":
        with open(path, encoding="utf-8") as fh:
            blob = json.load(fh)
        tokens = blob["tokens"]
        idf = np.asarray(blob["idf"], dtype=np.float64)
        if len(tokens) != idf.shape[0]:
            raise ValueError(f"{path}: token and idf lengths differ")
        return cls(
            token_index={t: i for i, t in enumerate(tokens)},
            idf=idf,
            dim=int(blob["dim"]),
            seed=int(blob["seed"]),
            projection=_projection(len(tokens), int(blob["dim"]), int(blob["seed"])),
        )


def _projection(n_tokens: int, dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n_tokens, dim)) / math.sqrt(dim)


def fit_tfidf(corpus: list[Conversation], dim: int = 64, seed: int = 0) -> TfidfModel:
    """Fit idf weights treating every utterance as one document.

    idf(t) = ln((1 + N) / (1 + df(t))) + 1 over N utterances; the dense
    projection is a standard-normal matrix scaled by 1/sqrt(dim), fully
    determined by (vocabulary, dim, seed).
    """
    if not corpus:
        raise ValueError("cannot fit tf-idf on an empty corpus")
    if dim < 8:
        raise ValueError("embedding dim must be at least 8")
    df: Counter[str] = Counter()
    n_docs = 0
    for conv in corpus:
        for utt in conv.utterances:
            n_docs += 1
            df.update(set(tokenize(utt.text)))
    tokens = sorted(df)
    dfv = np.array([df[t] for t in tokens], dtype=np.float64)
    idf = np.log((1.0 + n_docs) / (1.0 + dfv)) + 1.0
    return TfidfModel(
        token_index={t: i for i, t in enumerate(tokens)},
        idf=idf,
        dim=dim,
        seed=seed,
        projection=_projection(len(tokens), dim, seed),
    )


def embed_conversation(model: TfidfModel, conv: Conversation) -> EmbeddingMatrix:
    """row_i = L2-normalized projection of the tf-idf bag of utterance i.
    Out-of-vocabulary tokens are ignored; an all-OOV or empty utterance
    keeps the zero row."""
    rows = np.zeros((len(conv.utterances), model.dim), dtype=np.float64)
    for i, utt in enumerate(conv.utterances):
        vec = np.zeros(model.dim, dtype=np.float64)
        for tok, count in Counter(tokenize(utt.text)).items():
            j = model.token_index.get(tok)
            if j is not None:
                vec += (count * model.idf[j]) * model.projection[j]
        norm = np.linalg.norm(vec)
        rows[i] = vec / norm if norm > 0 else vec
    return EmbeddingMatrix(conv.id, rows)


def embed_corpus(
    model: TfidfModel, corpus: list[Conversation]
) -> dict[str, EmbeddingMatrix]:
    return {c.id: embed_conversation(model, c) for c in corpus}


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Unit-L2 rows; zero rows stay zero."""
    m = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)


def cosine_matrix(emb: EmbeddingMatrix) -> np.ndarray:
    """Pairwise cosine similarities; any pair involving a zero row is 0.
    Entries clipped into [-1, 1] against rounding."""
    sims = emb.matrix @ emb.matrix.T
    return np.clip(sims, -1.0, 1.0)


def save_embeddings(embs: dict[str, EmbeddingMatrix], path: str) -> None:
    """JSONL, one record per conversation:
    {"id": ..., "dim": d, "vectors": [[...], ...]} (one row per utterance)."""
    with open(path, "w", encoding="utf-8") as fh:
        for emb in embs.values():
            rec = {
                "id": emb.id,
                "dim": int(emb.matrix.shape[1]),
                "vectors": emb.matrix.tolist(),
            }
            fh.write(json.dumps(rec))
            fh.write("\n")


def load_external(
    path: str, corpus: list[Conversation] | None = None
) -> dict[str, EmbeddingMatrix]:
    """Import precomputed vectors from the JSONL interchange format.

    All records must agree on dim; when a corpus is given, each record's row
    count must equal that conversation's utterance count and every
    conversation must be covered. Rows are re-normalized on load.
    """
    out: dict[str, EmbeddingMatrix] = {}
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{ln}: invalid JSON: {exc}") from exc
            for key in ("id", "dim", "vectors"):
                if key not in rec:
                    raise ValueError(f"{path}:{ln}: record missing {key!r}")
            cid = str(rec["id"])
            if cid in out:
                raise ValueError(f"{path}:{ln}: duplicate id {cid!r}")
            mat = np.asarray(rec["vectors"], dtype=np.float64)
            if mat.ndim != 2 or mat.shape[1] != int(rec["dim"]):
                raise ValueError(
                    f"{path}:{ln}: vectors for {cid!r} do not match dim={rec['dim']}"
                )
            if dim is None:
                dim = int(rec["dim"])
            elif int(rec["dim"]) != dim:
                raise ValueError(
                    f"{path}:{ln}: dim {rec['dim']} differs from earlier {dim}"
                )
            out[cid] = EmbeddingMatrix(cid, normalize_rows(mat))
    if not out:
        raise ValueError(f"{path}: no embedding records found")
    if corpus is not None:
        for conv in corpus:
            if conv.id not in out:
                raise ValueError(f"no embeddings for conversation {conv.id!r}")
            have = out[conv.id].matrix.shape[0]
            want = len(conv.utterances)
            if have != want:
                raise ValueError(
                    f"row count mismatch for conversation {conv.id!r}: "
                    f"{have} embedding rows, {want} utterances"
                )
    return out
