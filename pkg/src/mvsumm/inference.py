"""Beam-search decoding and the conversation -> summary pipeline."""

from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .corpus import BOS_ID, EOS_ID, Conversation, Vocab, detokenize
from .embed import EmbeddingMatrix, TfidfModel, embed_conversation
from .mvs2s import EncodedView, MultiViewModel, pack_view_batch
from .stagehmm import HmmModel, stage_view
from .topicseg import C99Config, topic_view
from .views import build_view, render_view


def beam_search_steps(step_fn, *, beam: int, max_len: int, bos_id: int, eos_id: int):
    """Core beam search over an arbitrary next-token scorer.

    step_fn(prefix tuple including bos) -> log-prob vector over the
    vocabulary. Hypothesis score is mean log-prob; a hypothesis closes at
    eos or at max_len. Ties break by smaller token id, then by earlier
    creation. Returns (tokens, score_trace); tokens include the closing eos
    when one was produced.
    """
    if beam < 1:
        raise ValueError("beam width must be at least 1")
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    created = itertools.count()
    # open hypothesis: (sum logp, tokens, creation order)
    open_hyps: list[tuple[float, tuple[int, ...], int]] = [(0.0, (), next(created))]
    closed: list[tuple[float, tuple[int, ...], int]] = []  # (score, tokens, order)
    trace: list[list[float]] = []
    while open_hyps:
        candidates = []
        for logp_sum, tokens, order in open_hyps:
            logprobs = step_fn((bos_id,) + tokens)
            length = len(tokens) + 1
            top = np.lexsort((np.arange(len(logprobs)), -logprobs))[:beam]
            for tok in top:
                tok = int(tok)
                total = logp_sum + float(logprobs[tok])
                candidates.append((total / length, total, tokens + (tok,), tok, order))
        # keep the best `beam`: score desc, then token asc, then creation asc
        candidates.sort(key=lambda c: (-c[0], c[3], c[4]))
        selected = candidates[:beam]
        trace.append([c[0] for c in selected])
        open_hyps = []
        for score, total, tokens, tok, _ in selected:
            if tok == eos_id or len(tokens) >= max_len:
                closed.append((score, tokens, next(created)))
            else:
                open_hyps.append((total, tokens, next(created)))
    best = min(closed, key=lambda c: (-c[0], c[1], c[2]))
    return list(best[1]), trace


def _model_step_fn(model: MultiViewModel, views: list[EncodedView]):
    def step(prefix: tuple[int, ...]) -> np.ndarray:
        prev = np.asarray(prefix, dtype=np.int64).reshape(1, -1)
        with nx.no_grad():
            logits = model.decoder_forward(prev, views).data[0, -1]
        shifted = logits - logits.max()
        return shifted - np.log(np.exp(shifted).sum())

    return step


def beam_search(
    model: MultiViewModel,
    view_seqs,
    beam: int = 4,
    max_len: int | None = None,
) -> list[int]:
    """Decode token ids for one conversation's rendered views."""
    if max_len is None:
        max_len = model.cfg.max_tgt_len
    max_len = min(max_len, model.cfg.max_tgt_len)
    with nx.no_grad():
        encoded = []
        for seq in view_seqs:
            tokens, bias, blk_pos, blk_counts = pack_view_batch([seq], model.dtype)
            encoded.append(model.encode_view(seq.kind, tokens, bias, blk_pos, blk_counts))
    tokens, _ = beam_search_steps(
        _model_step_fn(model, encoded),
        beam=beam,
        max_len=max_len,
        bos_id=BOS_ID,
        eos_id=EOS_ID,
    )
    return tokens


@dataclass
class Segmenters:
    """Everything summarize needs to rebuild views for a new conversation."""

    c99: C99Config = C99Config()
    hmm: HmmModel | None = None
    tfidf: TfidfModel | None = None
    external: dict[str, EmbeddingMatrix] | None = None

    def embedding_for(self, conv: Conversation) -> EmbeddingMatrix:
        if self.external is not None:
            if conv.id not in self.external:
                raise ValueError(f"no external embeddings for conversation {conv.id!r}")
            return self.external[conv.id]
        if self.tfidf is not None:
            return embed_conversation(self.tfidf, conv)
        raise ValueError("no embedding source configured (tfidf or external)")


def extract_blocks(conv: Conversation, kind: str, segmenters: Segmenters):
    """Segmentation for topic/stage kinds; None for global/discrete."""
    if kind in ("global", "discrete"):
        return None
    if kind == "topic":
        return topic_view(conv, segmenters.embedding_for(conv), segmenters.c99)
    if kind == "stage":
        if segmenters.hmm is None:
            raise ValueError("stage view requested but no fitted stage model given")
        return stage_view(conv, segmenters.embedding_for(conv), segmenters.hmm).blocks
    raise ValueError(f"unknown view kind {kind!r}")


def summarize(
    conv: Conversation,
    model: MultiViewModel,
    vocab: Vocab,
    segmenters: Segmenters | None = None,
    beam: int = 4,
    max_len: int | None = None,
) -> str:
    """views -> encode -> beam decode -> strip bos/eos -> space-join."""
    segmenters = segmenters or Segmenters()
    seqs = []
    for kind in model.cfg.view_kinds:
        blocks = extract_blocks(conv, kind, segmenters)
        view = build_view(conv, kind, blocks)
        seqs.append(render_view(view, conv, vocab, model.cfg.max_src_len))
    ids = beam_search(model, seqs, beam=beam, max_len=max_len)
    if ids and ids[-1] == EOS_ID:
        ids = ids[:-1]
    return detokenize(vocab.decode(ids))


def mean_view_weights(model: MultiViewModel, view_seqs) -> dict[str, float]:
    """Sharpened importance per view kind, averaged over decoder layers."""
    with nx.no_grad():
        encoded = []
        for seq in view_seqs:
            tokens, bias, blk_pos, blk_counts = pack_view_batch([seq], model.dtype)
            encoded.append(model.encode_view(seq.kind, tokens, bias, blk_pos, blk_counts))
        weights = np.zeros(len(encoded))
        for layer in range(model.cfg.dec_layers):
            weights += model.sharpened_importance(encoded, layer).data[0]
    weights /= model.cfg.dec_layers
    return {seq.kind: float(w) for seq, w in zip(view_seqs, weights)}


# ---------------------------------------------------------------------------
# bundle persistence: the segmenter state saved alongside a checkpoint so
# `summarize --ckpt DIR` is self-sufficient


def save_bundle(dirpath: str, vocab: Vocab, segmenters: Segmenters) -> None:
    os.makedirs(dirpath, exist_ok=True)
    vocab.save(os.path.join(dirpath, "vocab.json"))
    if segmenters.tfidf is not None:
        segmenters.tfidf.save(os.path.join(dirpath, "tfidf.json"))
    if segmenters.hmm is not None:
        segmenters.hmm.save(os.path.join(dirpath, "hmm.json"))
    with open(os.path.join(dirpath, "pipeline.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "window": segmenters.c99.window,
                "std_coeff": segmenters.c99.std_coeff,
                "max_segments": segmenters.c99.max_segments,
                "embedding_source": "tfidf" if segmenters.tfidf is not None else "external",
            },
            fh,
        )


def load_bundle(dirpath: str) -> tuple[Vocab, Segmenters]:
    vocab = Vocab.load(os.path.join(dirpath, "vocab.json"))
    pipeline_path = os.path.join(dirpath, "pipeline.json")
    c99 = C99Config()
    if os.path.exists(pipeline_path):
        with open(pipeline_path, encoding="utf-8") as fh:
            meta = json.load(fh)
        c99 = C99Config(
            window=int(meta.get("window", 4)),
            std_coeff=float(meta.get("std_coeff", 1.0)),
            max_segments=meta.get("max_segments"),
        )
    tfidf_path = os.path.join(dirpath, "tfidf.json")
    hmm_path = os.path.join(dirpath, "hmm.json")
    return vocab, Segmenters(
        c99=c99,
        hmm=HmmModel.load(hmm_path) if os.path.exists(hmm_path) else None,
        tfidf=TfidfModel.load(tfidf_path) if os.path.exists(tfidf_path) else None,
    )
