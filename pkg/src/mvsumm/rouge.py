"""ROUGE-1/2/L with Porter stemming.

Scores are precision/recall/F1 from clipped n-gram multiset overlap (1, 2)
and sequence-level longest common subsequence. Stemming follows the classic
Porter algorithm (steps 1a through 5b) and is applied only to purely
alphabetic tokens longer than two characters.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .corpus import tokenize

# ---------------------------------------------------------------------------
# Porter stemmer


def _is_consonant(word: str, i: int) -> bool:
    ch = word[i]
    if ch in "aeiou":
        return False
    if ch == "y":
        return i == 0 or not _is_consonant(word, i - 1)
    return True


def _measure(stem: str) -> int:
    """Number of VC sequences in the c/v run pattern [C](VC)^m[V]."""
    runs = []
    for i in range(len(stem)):
        c = _is_consonant(stem, i)
        if not runs or runs[-1] != c:
            runs.append(c)
    # drop a leading consonant run and trailing vowel run, count pairs
    if runs and runs[0]:
        runs = runs[1:]
    if runs and not runs[-1]:
        runs = runs[:-1]
    return len(runs) // 2


def _has_vowel(stem: str) -> bool:
    return any(not _is_consonant(stem, i) for i in range(len(stem)))


def _double_consonant(word: str) -> bool:
    return (
        len(word) >= 2
        and word[-1] == word[-2]
        and _is_consonant(word, len(word) - 1)
    )


def _cvc(word: str) -> bool:
    """Ends consonant-vowel-consonant with the final consonant not w, x, y."""
    if len(word) < 3:
        return False
    return (
        _is_consonant(word, len(word) - 3)
        and not _is_consonant(word, len(word) - 2)
        and _is_consonant(word, len(word) - 1)
        and word[-1] not in "wxy"
    )


def _longest_rule(word: str, rules: list[tuple[str, str, int]]) -> str:
    """Apply the longest matching suffix rule whose measure condition holds.
    Within a step only the longest match is ever attempted (no fallback)."""
    match = None
    for suffix, repl, min_measure in rules:
        if word.endswith(suffix) and (match is None or len(suffix) > len(match[0])):
            match = (suffix, repl, min_measure)
    if match is None:
        return word
    suffix, repl, min_measure = match
    stem = word[: len(word) - len(suffix)]
    if _measure(stem) > min_measure:
        return stem + repl
    return word


_STEP2 = [
    ("ational", "ate", 0), ("tional", "tion", 0), ("enci", "ence", 0),
    ("anci", "ance", 0), ("izer", "ize", 0), ("abli", "able", 0),
    ("alli", "al", 0), ("entli", "ent", 0), ("eli", "e", 0),
    ("ousli", "ous", 0), ("ization", "ize", 0), ("ation", "ate", 0),
    ("ator", "ate", 0), ("alism", "al", 0), ("iveness", "ive", 0),
    ("fulness", "ful", 0), ("ousness", "ous", 0), ("aliti", "al", 0),
    ("iviti", "ive", 0), ("biliti", "ble", 0),
]

_STEP3 = [
    ("icate", "ic", 0), ("ative", "", 0), ("alize", "al", 0),
    ("iciti", "ic", 0), ("ical", "ic", 0), ("ful", "", 0), ("ness", "", 0),
]

_STEP4 = [
    ("al", "", 1), ("ance", "", 1), ("ence", "", 1), ("er", "", 1),
    ("ic", "", 1), ("able", "", 1), ("ible", "", 1), ("ant", "", 1),
    ("ement", "", 1), ("ment", "", 1), ("ent", "", 1), ("ou", "", 1),
    ("ism", "", 1), ("ate", "", 1), ("iti", "", 1), ("ous", "", 1),
    ("ive", "", 1), ("ize", "", 1),
]


def porter_stem(token: str) -> str:
    if len(token) <= 2 or not token.isalpha():
        return token
    word = token

    # step 1a
    if word.endswith("sses"):
        word = word[:-2]
    elif word.endswith("ies"):
        word = word[:-2]
    elif not word.endswith("ss") and word.endswith("s"):
        word = word[:-1]

    # step 1b
    cleanup = False
    if word.endswith("eed"):
        if _measure(word[:-3]) > 0:
            word = word[:-1]
    elif word.endswith("ed") and _has_vowel(word[:-2]):
        word = word[:-2]
        cleanup = True
    elif word.endswith("ing") and _has_vowel(word[:-3]):
        word = word[:-3]
        cleanup = True
    if cleanup:
        if word.endswith(("at", "bl", "iz")):
            word += "e"
        elif _double_consonant(word) and word[-1] not in "lsz":
            word = word[:-1]
        elif _measure(word) == 1 and _cvc(word):
            word += "e"

    # step 1c
    if word.endswith("y") and _has_vowel(word[:-1]):
        word = word[:-1] + "i"

    word = _longest_rule(word, _STEP2)
    word = _longest_rule(word, _STEP3)

    # step 4, with the (s|t)ion special case
    match = None
    for suffix, _, _ in _STEP4 + [("ion", "", 1)]:
        if word.endswith(suffix) and (match is None or len(suffix) > len(match)):
            match = suffix
    if match is not None:
        stem = word[: len(word) - len(match)]
        if match != "ion" or (stem and stem[-1] in "st"):
            if _measure(stem) > 1:
                word = stem

    # step 5a
    if word.endswith("e"):
        stem = word[:-1]
        m = _measure(stem)
        if m > 1 or (m == 1 and not _cvc(stem)):
            word = stem

    # step 5b
    if _measure(word) > 1 and _double_consonant(word) and word.endswith("l"):
        word = word[:-1]

    return word


def stem_tokens(tokens: list[str]) -> list[str]:
    return [porter_stem(t) for t in tokens]


# ---------------------------------------------------------------------------
# scores


def _prf(overlap: float, hyp_total: int, ref_total: int) -> tuple[float, float, float]:
    p = overlap / hyp_total if hyp_total else 0.0
    r = overlap / ref_total if ref_total else 0.0
    f = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
    return p, r, f


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(hyp: list[str], ref: list[str], n: int) -> tuple[float, float, float]:
    """Clipped n-gram overlap P/R/F over already-prepared token lists."""
    if n < 1:
        raise ValueError("n must be at least 1")
    hyp_counts = _ngrams(hyp, n)
    ref_counts = _ngrams(ref, n)
    overlap = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    return _prf(overlap, sum(hyp_counts.values()), sum(ref_counts.values()))


def lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(hyp: list[str], ref: list[str]) -> tuple[float, float, float]:
    """Sequence-level LCS P/R/F (whole summary as one token sequence)."""
    lcs = lcs_length(hyp, ref)
    return _prf(lcs, len(hyp), len(ref))


@dataclass(frozen=True)
class RougeRow:
    id: str
    r1: tuple[float, float, float]
    r2: tuple[float, float, float]
    rl: tuple[float, float, float]


@dataclass(frozen=True)
class RougeReport:
    rows: tuple[RougeRow, ...]
    mean: RougeRow

    CSV_HEADER = "id,r1_p,r1_r,r1_f,r2_p,r2_r,r2_f,rl_p,rl_r,rl_f"

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for row in self.rows + (self.mean,):
            cells = [row.id]
            for triple in (row.r1, row.r2, row.rl):
                cells.extend(f"{v:.6f}" for v in triple)
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def score_pair(hyp_text: str, ref_text: str) -> tuple[tuple, tuple, tuple]:
    hyp = stem_tokens(tokenize(hyp_text))
    ref = stem_tokens(tokenize(ref_text))
    return rouge_n(hyp, ref, 1), rouge_n(hyp, ref, 2), rouge_l(hyp, ref)


def evaluate_corpus(hyps: dict[str, str], refs: dict[str, str]) -> RougeReport:
    """Score aligned id -> text maps; ids must match exactly."""
    missing_refs = sorted(set(hyps) - set(refs))
    missing_hyps = sorted(set(refs) - set(hyps))
    if missing_refs or missing_hyps:
        parts = []
        if missing_refs:
            parts.append(f"ids without references: {', '.join(missing_refs)}")
        if missing_hyps:
            parts.append(f"ids without hypotheses: {', '.join(missing_hyps)}")
        raise ValueError("id mismatch: " + "; ".join(parts))
    if not hyps:
        raise ValueError("nothing to evaluate")
    rows = []
    for cid in sorted(hyps):
        r1, r2, rl = score_pair(hyps[cid], refs[cid])
        rows.append(RougeRow(cid, r1, r2, rl))
    n = len(rows)

    def mean_of(pick) -> tuple[float, float, float]:
        triples = [pick(row) for row in rows]
        return tuple(sum(t[i] for t in triples) / n for i in range(3))

    mean = RougeRow(
        "MEAN",
        mean_of(lambda r: r.r1),
        mean_of(lambda r: r.r2),
        mean_of(lambda r: r.rl),
    )
    return RougeReport(tuple(rows), mean)
