"""Conversation views: block structures over the utterances of a dialogue
and their rendering into token sequences.

Every view partitions utterances 1..m into contiguous blocks. The four
kinds: "global" is one block over the whole conversation, "discrete" is one
block per utterance, "topic" and "stage" take a computed segmentation.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import BLK_ID, UTT_ID, Conversation, Vocab, tokenize

VIEW_KINDS = ("global", "discrete", "topic", "stage")

Blocks = tuple[tuple[int, int], ...]


def validate_blocks(blocks, m: int) -> Blocks:
    """Check that blocks is an in-order partition of 1..m into contiguous
    inclusive (start, end) spans; returns the normalized tuple."""
    norm = tuple((int(a), int(b)) for a, b in blocks)
    if not norm:
        raise ValueError("a view needs at least one block")
    expected_start = 1
    for a, b in norm:
        if a != expected_start:
            raise ValueError(f"blocks are not contiguous at {a} (expected {expected_start})")
        if b < a:
            raise ValueError(f"block ({a}, {b}) is empty")
        expected_start = b + 1
    if expected_start != m + 1:
        raise ValueError(f"blocks cover 1..{expected_start - 1}, conversation has {m}")
    return norm


@dataclass(frozen=True)
class View:
    kind: str
    blocks: Blocks


def build_view(conv: Conversation, kind: str, segmentation=None) -> View:
    m = len(conv.utterances)
    if kind == "global":
        blocks: Blocks = ((1, m),)
    elif kind == "discrete":
        blocks = tuple((i, i) for i in range(1, m + 1))
    elif kind in ("topic", "stage"):
        if segmentation is None:
            raise ValueError(f"view kind {kind!r} requires a segmentation")
        blocks = validate_blocks(segmentation, m)
    else:
        raise ValueError(f"unknown view kind {kind!r}")
    return View(kind, blocks)


@dataclass(frozen=True)
class ViewTokenSeq:
    """A rendered view: token ids plus the positions of its block markers."""

    kind: str
    token_ids: tuple[int, ...]
    blk_positions: tuple[int, ...]


def render_view(
    view: View, conv: Conversation, vocab: Vocab, max_src_len: int = 256
) -> ViewTokenSeq:
    """Flatten a view to ids: per block a block marker, then per utterance an
    utterance marker, the speaker tokens, ':', and the text tokens. Truncated
    at max_src_len; block markers that fall beyond the cut are dropped."""
    if max_src_len < 1:
        raise ValueError("max_src_len must be positive")
    ids: list[int] = []
    blk_positions: list[int] = []
    colon_id = vocab.encode_token(":")
    for a, b in view.blocks:
        blk_positions.append(len(ids))
        ids.append(BLK_ID)
        for utt in conv.utterances[a - 1 : b]:
            ids.append(UTT_ID)
            ids.extend(vocab.encode(tokenize(utt.speaker)))
            ids.append(colon_id)
            ids.extend(vocab.encode(tokenize(utt.text)))
    if not ids:
        raise ValueError(f"view {view.kind!r} rendered to zero tokens")
    ids = ids[:max_src_len]
    kept = tuple(p for p in blk_positions if p < len(ids))
    return ViewTokenSeq(view.kind, tuple(ids), kept)
