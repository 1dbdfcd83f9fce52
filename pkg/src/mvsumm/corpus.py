"""Dialogue corpus handling: parsing, tokenization, vocabulary, statistics.

A conversation is an ordered list of (speaker, text) utterances plus an
optional reference summary. Raw transcripts use one "SPEAKER: text" line per
utterance; continuation lines (no speaker prefix) are joined onto the
previous utterance with a single space.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

# Reserved vocabulary ids, in fixed order.
PAD_ID, BOS_ID, EOS_ID, UNK_ID, BLK_ID, UTT_ID = 0, 1, 2, 3, 4, 5
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>", "<blk>", "<utt>")


@dataclass(frozen=True)
class Utterance:
    speaker: str
    text: str

    def __post_init__(self):
        if not self.speaker or not self.speaker.strip():
            raise ValueError("utterance speaker must be non-empty")
        if "\n" in self.speaker or "\n" in self.text:
            raise ValueError("utterance fields must not contain newlines")


@dataclass(frozen=True)
class Conversation:
    id: str
    utterances: tuple[Utterance, ...]
    summary: str | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("conversation id must be non-empty")
        object.__setattr__(self, "utterances", tuple(self.utterances))
        if len(self.utterances) == 0:
            raise ValueError(f"conversation {self.id!r} has no utterances")


def tokenize(text: str) -> list[str]:
    """Lowercase and split into maximal alphanumeric runs plus single
    punctuation characters. Whitespace never yields a token.

    tokenize("Hey, it's 8pm!") == ["hey", ",", "it", "'", "s", "8pm", "!"]
    """
    tokens: list[str] = []
    run: list[str] = []
    for ch in text.lower():
        if ch.isalnum():
            run.append(ch)
            continue
        if run:
            tokens.append("".join(run))
            run = []
        if not ch.isspace():
            tokens.append(ch)
    if run:
        tokens.append("".join(run))
    return tokens


def detokenize(tokens: list[str]) -> str:
    return " ".join(tokens)


def parse_raw(raw: str, conv_id: str, summary: str | None = None) -> Conversation:
    """Parse a raw transcript into a Conversation.

    Splitting is on the first colon of each line. A line with no colon, or
    with nothing before its first colon, continues the previous utterance.
    """
    if raw is None or not raw.strip():
        raise ValueError(f"conversation {conv_id!r}: empty transcript")
    utterances: list[Utterance] = []
    for line in raw.replace("\r\n", "\n").split("\n"):
        line = line.strip()
        if not line:
            continue
        speaker, sep, text = line.partition(":")
        if sep and speaker.strip():
            utterances.append(Utterance(speaker.strip(), text.strip()))
        elif utterances:
            prev = utterances[-1]
            joined = f"{prev.text} {line}".strip() if prev.text else line
            utterances[-1] = Utterance(prev.speaker, joined)
        else:
            raise ValueError(
                f"conversation {conv_id!r}: first line has no 'SPEAKER:' prefix"
            )
    return Conversation(conv_id, tuple(utterances), summary)


def serialize(conv: Conversation) -> str:
    """Inverse of parse_raw up to whitespace normalization; round-trip of a
    parsed conversation is exact."""
    return "\n".join(f"{u.speaker}: {u.text}".rstrip() for u in conv.utterances)


@dataclass
class Vocab:
    """Token table with the six reserved specials at ids 0..5.

    Ordinary tokens are ranked by descending corpus frequency, ties broken
    by lexicographic token order.
    """

    id_to_token: tuple[str, ...]
    token_to_id: dict[str, int] = field(repr=False)

    @classmethod
    def from_tokens(cls, tokens: list[str]) -> "Vocab":
        full = SPECIAL_TOKENS + tuple(tokens)
        mapping = {t: i for i, t in enumerate(full)}
        if len(mapping) != len(full):
            raise ValueError("duplicate tokens in vocabulary")
        return cls(full, mapping)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode_token(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def decode_id(self, idx: int) -> str:
        if not 0 <= idx < len(self.id_to_token):
            raise ValueError(f"token id {idx} out of range")
        return self.id_to_token[idx]

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.encode_token(t) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.decode_id(i) for i in ids]

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"tokens": list(self.id_to_token)}, fh, ensure_ascii=False)

    @classmethod
    def load(cls, path: str) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            blob = json.load(fh)
        tokens = tuple(blob["tokens"])
        if tokens[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise ValueError(f"vocabulary file {path!r} lacks the reserved prefix")
        mapping = {t: i for i, t in enumerate(tokens)}
        return cls(tokens, mapping)


def conversation_tokens(conv: Conversation) -> list[str]:
    """All tokens a rendered conversation and its summary can contain:
    per utterance the speaker tokens, a ':' separator, and the text tokens;
    then the summary tokens when present."""
    toks: list[str] = []
    for u in conv.utterances:
        toks.extend(tokenize(u.speaker))
        toks.append(":")
        toks.extend(tokenize(u.text))
    if conv.summary:
        toks.extend(tokenize(conv.summary))
    return toks


def build_vocab(
    corpus: list[Conversation], max_size: int = 30000, min_freq: int = 1
) -> Vocab:
    """Frequency-ranked vocabulary over a corpus. max_size counts the six
    reserved specials; tokens below min_freq are dropped."""
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    if max_size <= len(SPECIAL_TOKENS):
        raise ValueError(f"max_size must exceed {len(SPECIAL_TOKENS)}")
    counts: Counter[str] = Counter()
    for conv in corpus:
        counts.update(conversation_tokens(conv))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [t for t, c in ranked if c >= min_freq]
    return Vocab.from_tokens(kept[: max_size - len(SPECIAL_TOKENS)])


@dataclass(frozen=True)
class StatLine:
    mean: float
    std: float
    min: float
    max: float

    @classmethod
    def of(cls, values: list[float]) -> "StatLine":
        if not values:
            return cls(0.0, 0.0, 0.0, 0.0)
        n = len(values)
        mean = sum(values) / n
        var = sum((v - mean) ** 2 for v in values) / n  # population variance
        return cls(mean, math.sqrt(var), min(values), max(values))


@dataclass(frozen=True)
class SplitStats:
    conversations: int
    participants: StatLine
    turns: StatLine
    reflen: StatLine


@dataclass(frozen=True)
class CorpusStats:
    splits: dict[str, SplitStats]

    CSV_HEADER = (
        "split,conversations,"
        "participants_mean,participants_std,participants_min,participants_max,"
        "turns_mean,turns_std,turns_min,turns_max,"
        "reflen_mean,reflen_std,reflen_min,reflen_max"
    )

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for name, s in self.splits.items():
            cells = [name, str(s.conversations)]
            for line in (s.participants, s.turns, s.reflen):
                cells.extend(
                    f"{v:.6f}" for v in (line.mean, line.std, line.min, line.max)
                )
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def corpus_stats(splits: dict[str, list[Conversation]]) -> CorpusStats:
    """Per-split conversation counts and participant/turn/reference-length
    statistics (population std). Conversations without a summary are
    excluded from the reference-length aggregates only."""
    out: dict[str, SplitStats] = {}
    for name, convs in splits.items():
        participants = [float(len({u.speaker for u in c.utterances})) for c in convs]
        turns = [float(len(c.utterances)) for c in convs]
        reflens = [
            float(len(tokenize(c.summary))) for c in convs if c.summary is not None
        ]
        out[name] = SplitStats(
            conversations=len(convs),
            participants=StatLine.of(participants),
            turns=StatLine.of(turns),
            reflen=StatLine.of(reflens),
        )
    return CorpusStats(out)


# ---------------------------------------------------------------------------
# Serialization. Canonical corpus form is JSONL, one conversation per line:
#   {"id": str, "dialogue": [{"speaker": str, "text": str}, ...],
#    "summary": str | null}
# Raw form carries "dialogue" as one transcript string instead.


def conversation_to_record(conv: Conversation) -> dict:
    return {
        "id": conv.id,
        "dialogue": [{"speaker": u.speaker, "text": u.text} for u in conv.utterances],
        "summary": conv.summary,
    }


def conversation_from_record(rec: dict) -> Conversation:
    try:
        cid = str(rec["id"])
        dialogue = rec["dialogue"]
        if isinstance(dialogue, str):
            return parse_raw(dialogue, cid, rec.get("summary"))
        utts = tuple(Utterance(u["speaker"], u["text"]) for u in dialogue)
        return Conversation(cid, utts, rec.get("summary"))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed conversation record: {exc}") from exc


def save_corpus(convs: list[Conversation], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for conv in convs:
            fh.write(json.dumps(conversation_to_record(conv), ensure_ascii=False))
            fh.write("\n")


def load_corpus(path: str) -> list[Conversation]:
    convs: list[Conversation] = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{ln}: invalid JSON: {exc}") from exc
            convs.append(conversation_from_record(rec))
    if not convs:
        raise ValueError(f"{path}: no conversations found")
    seen: set[str] = set()
    for c in convs:
        if c.id in seen:
            raise ValueError(f"{path}: duplicate conversation id {c.id!r}")
        seen.add(c.id)
    return convs


def ingest(path: str) -> list[Conversation]:
    """Read a corpus file in any accepted shape: a JSON array of records, or
    JSONL. Records either carry structured utterances (canonical form) or a
    raw "dialogue" transcript string to be parsed."""
    with open(path, encoding="utf-8") as fh:
        content = fh.read()
    if not content.strip():
        raise ValueError(f"{path}: empty corpus file")
    if content.lstrip().startswith("["):
        records = json.loads(content)
        if not isinstance(records, list):
            raise ValueError(f"{path}: expected a JSON array")
    else:
        records = []
        for ln, line in enumerate(content.splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{ln}: invalid JSON: {exc}") from exc
    convs: list[Conversation] = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise ValueError(f"{path}: record {i} is not an object")
        if "dialogue" not in rec:
            raise ValueError(f"{path}: record {i} has no 'dialogue' field")
        rec = dict(rec)
        rec.setdefault("id", str(i))
        convs.append(conversation_from_record(rec))
    if not convs:
        raise ValueError(f"{path}: no conversations found")
    return convs
