import math

import numpy as np
import pytest

from mvsumm.corpus import BOS_ID, EOS_ID, build_vocab
from mvsumm.embed import EmbeddingMatrix, embed_corpus, fit_tfidf
from mvsumm.inference import (
    Segmenters,
    beam_search_steps,
    extract_blocks,
    load_bundle,
    mean_view_weights,
    save_bundle,
    summarize,
)
from mvsumm.mvs2s import ModelConfig, MultiViewModel
from mvsumm.stagehmm import em_fit, init_hmm
from mvsumm.topicseg import C99Config
from mvsumm.views import build_view, render_view, validate_blocks

BOS, EOS = 1, 2
NEG = -1e9


def table_step(table, vocab_size):
    """step_fn backed by an explicit prefix -> logprob table."""

    def step(prefix):
        row = np.full(vocab_size, NEG)
        for tok, p in table[prefix].items():
            row[tok] = math.log(p)
        return row

    return step


def random_step(seed, vocab_size, eos_weight=0.0):
    """Deterministic pseudo-random scorer; prefix hashes to a distribution."""

    def step(prefix):
        key = abs(hash((seed,) + tuple(prefix))) % 2**32
        raw = np.random.default_rng(key).standard_normal(vocab_size)
        raw[EOS] += eos_weight
        raw[0] = NEG  # keep pad out of the way
        return raw - np.log(np.exp(raw - raw.max()).sum()) - raw.max()

    return step


def greedy_reference(step_fn, max_len):
    tokens = []
    prefix = (BOS,)
    while len(tokens) < max_len:
        logprobs = step_fn(prefix)
        tok = int(np.argmax(logprobs))  # first max: ties go to the lower id
        tokens.append(tok)
        if tok == EOS:
            break
        prefix = prefix + (tok,)
    return tokens


def test_beam_one_equals_greedy_on_random_scorers():
    for seed in range(12):
        step = random_step(seed, vocab_size=9, eos_weight=0.7)
        got, _ = beam_search_steps(step, beam=1, max_len=12, bos_id=BOS, eos_id=EOS)
        assert got == greedy_reference(step, 12), f"seed {seed}"


def test_wider_beam_beats_greedy_on_garden_path():
    # greedy takes the 0.6 branch, but the 0.4 branch leads to near certainty
    table = {
        (BOS,): {3: 0.6, 4: 0.4},
        (BOS, 3): {5: 0.5, 6: 0.5},
        (BOS, 4): {5: 0.99, 6: 0.01},
    }
    step = table_step(table, vocab_size=8)
    greedy, _ = beam_search_steps(step, beam=1, max_len=2, bos_id=BOS, eos_id=EOS)
    assert greedy == [3, 5]
    wide, _ = beam_search_steps(step, beam=2, max_len=2, bos_id=BOS, eos_id=EOS)
    assert wide == [4, 5]
    # mean log-prob of the returned path really is the better one
    assert (math.log(0.4) + math.log(0.99)) / 2 > (math.log(0.6) + math.log(0.5)) / 2


def test_eos_closes_immediately():
    table = {(BOS,): {EOS: 0.9, 3: 0.1}}
    tokens, trace = beam_search_steps(
        table_step(table, 6), beam=1, max_len=10, bos_id=BOS, eos_id=EOS
    )
    assert tokens == [EOS]
    assert len(trace) == 1


def test_max_len_closes_without_eos():
    table = {}

    def step(prefix):
        row = np.full(6, NEG)
        row[3] = math.log(0.7)
        row[4] = math.log(0.3)
        return row

    tokens, _ = beam_search_steps(step, beam=2, max_len=4, bos_id=BOS, eos_id=EOS)
    assert len(tokens) == 4
    assert tokens == [3, 3, 3, 3]


def test_exact_ties_prefer_lower_token_id():
    def step(prefix):
        row = np.full(7, NEG)
        row[[4, 5, 6]] = math.log(1 / 3)
        return row

    tokens, _ = beam_search_steps(step, beam=1, max_len=3, bos_id=BOS, eos_id=EOS)
    assert tokens == [4, 4, 4]


def test_trace_rows_sorted_best_first():
    step = random_step(5, vocab_size=10, eos_weight=0.5)
    _, trace = beam_search_steps(step, beam=3, max_len=8, bos_id=BOS, eos_id=EOS)
    for row in trace:
        assert all(a >= b for a, b in zip(row, row[1:]))


def test_beam_parameters_validated():
    step = random_step(0, 6)
    with pytest.raises(ValueError):
        beam_search_steps(step, beam=0, max_len=4, bos_id=BOS, eos_id=EOS)
    with pytest.raises(ValueError):
        beam_search_steps(step, beam=2, max_len=0, bos_id=BOS, eos_id=EOS)


# ---------------------------------------------------------------------------
# segmenter routing


def test_embedding_source_routing(mini_corpus):
    conv = mini_corpus[0]
    with pytest.raises(ValueError, match="no embedding source configured"):
        Segmenters().embedding_for(conv)
    ext = {conv.id: EmbeddingMatrix(conv.id, np.eye(len(conv.utterances)))}
    seg = Segmenters(external=ext)
    assert seg.embedding_for(conv).id == conv.id
    with pytest.raises(ValueError, match="no external embeddings"):
        seg.embedding_for(mini_corpus[1])
    tfidf = fit_tfidf(mini_corpus, dim=16, seed=0)
    emb = Segmenters(tfidf=tfidf).embedding_for(conv)
    assert emb.matrix.shape == (len(conv.utterances), 16)


def test_extract_blocks_routing(mini_corpus):
    conv = mini_corpus[2]
    tfidf = fit_tfidf(mini_corpus, dim=16, seed=0)
    seg = Segmenters(tfidf=tfidf)
    assert extract_blocks(conv, "global", seg) is None
    assert extract_blocks(conv, "discrete", seg) is None
    blocks = extract_blocks(conv, "topic", seg)
    validate_blocks(blocks, len(conv.utterances))
    with pytest.raises(ValueError, match="no fitted stage model"):
        extract_blocks(conv, "stage", seg)
    with pytest.raises(ValueError, match="unknown view kind"):
        extract_blocks(conv, "chapters", seg)


def fit_mini_hmm(mini_corpus, tfidf):
    obs = [embed_corpus(tfidf, mini_corpus)[c.id].matrix for c in mini_corpus]
    model, _ = em_fit(init_hmm(obs, 3), obs, max_iter=3)
    return model


def test_stage_blocks_partition(mini_corpus):
    tfidf = fit_tfidf(mini_corpus, dim=16, seed=0)
    seg = Segmenters(hmm=fit_mini_hmm(mini_corpus, tfidf), tfidf=tfidf)
    for conv in mini_corpus:
        blocks = extract_blocks(conv, "stage", seg)
        validate_blocks(blocks, len(conv.utterances))


# ---------------------------------------------------------------------------
# end-to-end decode on an untrained model


def test_summarize_runs_on_untrained_model(mini_corpus):
    vocab = build_vocab(mini_corpus)
    tfidf = fit_tfidf(mini_corpus, dim=16, seed=0)
    seg = Segmenters(hmm=fit_mini_hmm(mini_corpus, tfidf), tfidf=tfidf)
    model = MultiViewModel(
        ModelConfig(vocab_size=len(vocab), d_model=16, heads=2, enc_layers=1,
                    dec_layers=1, d_ff=32, max_tgt_len=6,
                    view_kinds=("global", "discrete", "topic", "stage"))
    )
    out = summarize(mini_corpus[0], model, vocab, seg, beam=2)
    assert isinstance(out, str)
    assert EOS_ID not in vocab.encode(out.split())


def test_summarize_deterministic(mini_corpus):
    vocab = build_vocab(mini_corpus)
    model = MultiViewModel(
        ModelConfig(vocab_size=len(vocab), d_model=16, heads=2, enc_layers=1,
                    dec_layers=1, d_ff=32, max_tgt_len=6, view_kinds=("global",))
    )
    a = summarize(mini_corpus[1], model, vocab, beam=3)
    b = summarize(mini_corpus[1], model, vocab, beam=3)
    assert a == b


def test_mean_view_weights_normalized(mini_corpus):
    vocab = build_vocab(mini_corpus)
    conv = mini_corpus[2]
    model = MultiViewModel(
        ModelConfig(vocab_size=len(vocab), d_model=16, heads=2, enc_layers=1,
                    dec_layers=2, d_ff=32, view_kinds=("global", "discrete"))
    )
    seqs = [
        render_view(build_view(conv, kind), conv, vocab)
        for kind in model.cfg.view_kinds
    ]
    weights = mean_view_weights(model, seqs)
    assert set(weights) == {"global", "discrete"}
    assert sum(weights.values()) == pytest.approx(1.0, abs=1e-6)
    assert all(w >= 0 for w in weights.values())


# ---------------------------------------------------------------------------
# bundles


def test_bundle_round_trip(mini_corpus, tmp_path):
    vocab = build_vocab(mini_corpus)
    tfidf = fit_tfidf(mini_corpus, dim=16, seed=4)
    hmm = fit_mini_hmm(mini_corpus, tfidf)
    seg = Segmenters(c99=C99Config(window=6, std_coeff=0.5, max_segments=3),
                     hmm=hmm, tfidf=tfidf)
    save_bundle(str(tmp_path), vocab, seg)
    vocab2, seg2 = load_bundle(str(tmp_path))
    assert vocab2.id_to_token == vocab.id_to_token
    assert seg2.c99 == seg.c99
    assert np.allclose(seg2.hmm.means, hmm.means, atol=1e-12)
    assert np.allclose(seg2.hmm.log_trans, hmm.log_trans, atol=1e-12, equal_nan=True)
    conv = mini_corpus[0]
    a = seg.embedding_for(conv).matrix
    b = seg2.embedding_for(conv).matrix
    assert a.tobytes() == b.tobytes()


def test_bundle_without_segmenter_state(mini_corpus, tmp_path):
    vocab = build_vocab(mini_corpus)
    save_bundle(str(tmp_path), vocab, Segmenters())
    vocab2, seg2 = load_bundle(str(tmp_path))
    assert vocab2.id_to_token == vocab.id_to_token
    assert seg2.hmm is None and seg2.tfidf is None
    assert seg2.c99 == C99Config()
