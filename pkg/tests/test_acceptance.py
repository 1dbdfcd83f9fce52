"""Acceptance checks, one test per release criterion.

Run with -v for a one-line verdict per criterion. Two tests skip themselves
when their optional inputs are absent: the corpus-statistics check (needs a
local SAMSum copy) and the external-embedding check (needs the export tool
built under sbert-export/).
"""

import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import brute_forward, brute_viterbi
from mvsumm import corpus as cp
from mvsumm.corpus import BOS_ID, EOS_ID, build_vocab, save_corpus
from mvsumm.embed import EmbeddingMatrix, embed_corpus, fit_tfidf, load_external
from mvsumm.inference import beam_search, beam_search_steps, _model_step_fn
from mvsumm.mvs2s import (
    ModelConfig,
    MultiViewModel,
    load_checkpoint,
    miniature_gradcheck,
    pack_view_batch,
    save_checkpoint,
    sharpen,
)
from mvsumm.rouge import score_pair
from mvsumm.stagehmm import HmmModel, em_fit, forward, init_hmm, viterbi
from mvsumm.topicseg import C99Config, rank_transform, topic_view
from mvsumm.trainer import make_synthetic_pairs, overfit_smoke
from mvsumm.views import ViewTokenSeq
from oracles import naive_rank

REPO_ROOT = Path(__file__).resolve().parents[1]


def random_hmm_instance(rng, n_states=3, length=5, dim=2):
    means = rng.normal(0, 2, (n_states, dim))
    vars_ = rng.uniform(0.2, 2.0, (n_states, dim))
    stay = rng.uniform(0.1, 0.9, n_states)
    trans = np.full((n_states, n_states), -np.inf)
    for k in range(n_states - 1):
        trans[k, k] = np.log(stay[k])
        trans[k, k + 1] = np.log1p(-stay[k])
    trans[-1, -1] = 0.0
    init = np.full(n_states, -np.inf)
    init[0] = 0.0
    model = HmmModel(means=means, vars=vars_, log_trans=trans, log_init=init)
    obs = rng.normal(0, 2, (length, dim))
    return model, obs


def test_hmm_forward_matches_brute_force():
    rng = np.random.default_rng(100)
    started = time.monotonic()
    for _ in range(100):
        model, obs = random_hmm_instance(rng)
        _, loglik = forward(model, obs)
        ref = brute_forward(
            model.log_init, model.log_trans, model.means, model.vars, obs
        )
        assert abs(loglik - ref) < 1e-9
    assert time.monotonic() - started < 5.0


def test_viterbi_matches_enumerated_argmax():
    rng = np.random.default_rng(100)  # same instances as the forward check
    for _ in range(100):
        model, obs = random_hmm_instance(rng)
        path, score = viterbi(model, obs)
        ref_path, ref_score = brute_viterbi(
            model.log_init, model.log_trans, model.means, model.vars, obs
        )
        assert tuple(path) == tuple(ref_path)
        assert abs(score - ref_score) < 1e-9


def test_em_loglik_never_decreases():
    convs = make_synthetic_pairs(50, seed=11)
    tfidf = fit_tfidf(convs, dim=16, seed=11)
    embs = embed_corpus(tfidf, convs)
    obs = [embs[c.id].matrix for c in convs]
    _, history = em_fit(init_hmm(obs, 4), obs, max_iter=20, tol=-1.0)
    assert len(history) == 20
    drops = np.diff(history)
    assert drops.min() > -1e-8, f"log-likelihood fell by {-drops.min():.3e}"


def test_rank_transform_matches_naive_recount():
    rng = np.random.default_rng(7)
    for i in range(50):
        m = int(rng.integers(1, 13))
        window = (2, 4, 6)[i % 3]
        sims = rng.uniform(0, 1, (m, m))
        sims = (sims + sims.T) / 2
        np.fill_diagonal(sims, 1.0)
        assert np.array_equal(rank_transform(sims, window), naive_rank(sims, window))
    # degenerate corpus: every utterance identical -> a single segment
    conv = cp.Conversation(
        "flat", tuple(cp.Utterance("s", "same words here") for _ in range(6))
    )
    emb = EmbeddingMatrix("flat", np.tile(np.ones(8) / np.sqrt(8), (6, 1)))
    assert topic_view(conv, emb, C99Config()) == ((1, 6),)


def test_miniature_model_gradient_check():
    started = time.monotonic()
    worst = miniature_gradcheck(eps=1e-5)
    elapsed = time.monotonic() - started
    assert worst < 1e-4, f"worst relative gradient error {worst:.3e}"
    assert elapsed < 120.0, f"gradient check took {elapsed:.1f}s"


def test_sharpening_suite():
    rng = np.random.default_rng(17)
    # T=1 identity
    for _ in range(100):
        a = rng.uniform(0.01, 1, 4)
        a /= a.sum()
        assert np.max(np.abs(sharpen(a, 1.0) - a)) < 1e-12
    # ordering preserved at the working temperatures
    for _ in range(1000):
        a = rng.uniform(0.001, 1, 4)
        a /= a.sum()
        order = np.argsort(a)
        for T in (0.2, 0.5):
            out = sharpen(a, T)
            assert np.array_equal(np.argsort(out), order)
            assert np.argmax(out) == np.argmax(a)
    # near-argmax collapse at T=0.01 when the top-2 gap is at least 0.1
    for _ in range(100):
        a = rng.uniform(0.05, 1, 4)
        a /= a.sum()
        top = np.argmax(a)
        gap = a[top] - np.max(np.delete(a, top))
        if gap < 0.1:
            a[top] += 0.15
            a /= a.sum()
            top = np.argmax(a)
            gap = a[top] - np.max(np.delete(a, top))
        assert gap >= 0.1
        assert sharpen(a, 0.01)[top] >= 0.999
    # pinned hand value
    assert sharpen([0.6, 0.4], 0.2) == pytest.approx([0.88364, 0.11636], abs=1e-5)


def random_view_seq(rng, max_ids=16, two_blocks=True):
    n = int(rng.integers(3, 8))
    ids = [4] + [int(t) for t in rng.integers(6, max_ids, n)]
    pos = [0]
    if two_blocks and n >= 4:
        cut = int(rng.integers(2, n))
        ids = ids[:cut] + [4] + ids[cut:]
        pos.append(cut)
    return ViewTokenSeq("global", tuple(ids), tuple(pos))


def test_single_view_degeneration_bit_identical():
    rng = np.random.default_rng(23)
    for trial in range(20):
        model = MultiViewModel(
            ModelConfig(
                vocab_size=16, d_model=16, heads=2, enc_layers=1, dec_layers=2,
                d_ff=32, view_kinds=("global",), seed=trial,
            )
        )
        seq = random_view_seq(rng)
        tokens, bias, pos, counts = pack_view_batch([seq], model.dtype)
        view = model.encode_view("global", tokens, bias, pos, counts)
        prev = np.concatenate(
            [[[BOS_ID]], rng.integers(4, 16, (1, int(rng.integers(2, 7))))], axis=1
        )
        multi = model.decoder_forward(prev, [view]).data
        single = model.single_view_decoder_forward(prev, view).data
        assert multi.tobytes() == single.tobytes(), f"trial {trial}"


def test_overfit_smoke_memorizes_ten_pairs():
    report = overfit_smoke(n_pairs=10, view_kinds=("topic", "stage"), max_steps=2000)
    assert report.steps_run <= 2000
    assert report.accuracy >= 0.99, f"accuracy {report.accuracy:.4f}"
    assert report.final_loss < 0.1, f"loss {report.final_loss:.4f}"
    assert report.seconds < 600.0, f"took {report.seconds:.0f}s"
    mismatches = {
        cid: pair for cid, pair in report.summaries.items() if pair[0] != pair[1]
    }
    assert report.all_verbatim, f"non-verbatim decodes: {mismatches}"


def greedy_reference(model, views, max_len):
    step = _model_step_fn(model, views)
    tokens = []
    prefix = (BOS_ID,)
    while len(tokens) < max_len:
        tok = int(np.argmax(step(prefix)))
        tokens.append(tok)
        if tok == EOS_ID:
            break
        prefix = prefix + (tok,)
    return tokens


def test_beam_one_is_greedy_and_wider_beam_recovers_garden_path():
    rng = np.random.default_rng(29)
    for trial in range(20):
        model = MultiViewModel(
            ModelConfig(
                vocab_size=16, d_model=16, heads=2, enc_layers=1, dec_layers=1,
                d_ff=32, max_tgt_len=10, view_kinds=("global",), seed=100 + trial,
            )
        )
        seq = random_view_seq(rng)
        got = beam_search(model, [seq], beam=1, max_len=8)
        tokens, bias, pos, counts = pack_view_batch([seq], model.dtype)
        view = model.encode_view("global", tokens, bias, pos, counts)
        assert got == greedy_reference(model, [view], 8), f"trial {trial}"

    # two-step garden path: greedy commits to the 0.6 branch, beam=2 does not
    table = {
        (1,): {3: 0.6, 4: 0.4},
        (1, 3): {5: 0.5, 6: 0.5},
        (1, 4): {5: 0.99, 6: 0.01},
    }

    def step(prefix):
        row = np.full(8, -1e9)
        for tok, p in table[prefix].items():
            row[tok] = np.log(p)
        return row

    greedy, _ = beam_search_steps(step, beam=1, max_len=2, bos_id=1, eos_id=2)
    wide, _ = beam_search_steps(step, beam=2, max_len=2, bos_id=1, eos_id=2)
    assert greedy == [3, 5]
    assert wide == [4, 5]


def test_rouge_fixture_values():
    r1, _, rl = score_pair("identical summary text", "identical summary text")
    assert r1 == (1.0, 1.0, 1.0)
    assert rl == (1.0, 1.0, 1.0)
    r1, _, rl = score_pair("the cat mat", "the cat sat on mat")
    for got, want in zip(r1, (1.0, 0.6, 0.75)):
        assert abs(got - want) <= 1e-9
    for got, want in zip(rl, (1.0, 0.6, 0.75)):
        assert abs(got - want) <= 1e-9


def locate_samsum():
    candidates = []
    env = os.environ.get("SAMSUM_DIR")
    if env:
        candidates.append(Path(env))
    candidates.append(REPO_ROOT / "data" / "samsum")
    for base in candidates:
        if not base.is_dir():
            continue
        found = {}
        for split, names in (
            ("train", ("train.json", "train.jsonl")),
            ("dev", ("val.json", "dev.json", "val.jsonl", "dev.jsonl")),
            ("test", ("test.json", "test.jsonl")),
        ):
            for name in names:
                if (base / name).exists():
                    found[split] = base / name
                    break
        if len(found) == 3:
            return found
    return None


def test_samsum_statistics():
    paths = locate_samsum()
    if paths is None:
        pytest.skip(
            "SAMSum corpus not present; set SAMSUM_DIR or place "
            "train/val/test files under data/samsum to run this check"
        )
    splits = {name: cp.ingest(str(path)) for name, path in paths.items()}
    stats = cp.corpus_stats(splits)
    assert stats.splits["train"].conversations == 14732
    assert stats.splits["dev"].conversations == 818
    assert stats.splits["test"].conversations == 819
    train = stats.splits["train"]
    assert abs(train.turns.mean - 11.17) <= 0.05
    assert abs(train.participants.mean - 2.40) <= 0.05
    assert abs(train.reflen.mean - 23.44) <= 2.0


def test_checkpoint_round_trip_and_corruption(tmp_path):
    model = MultiViewModel(
        ModelConfig(
            vocab_size=20, d_model=16, heads=2, enc_layers=1, dec_layers=1,
            d_ff=32, view_kinds=("topic", "stage"), seed=41,
        )
    )
    path = str(tmp_path / "ckpt")
    save_checkpoint(model, path)
    clone = load_checkpoint(path)
    for (na, ta), (nb, tb) in zip(model.parameters(), clone.parameters()):
        assert na == nb
        assert ta.data.tobytes() == tb.data.tobytes()
    blob_path = os.path.join(path, "tensors.bin")
    with open(blob_path, "rb") as fh:
        blob = fh.read()
    with open(blob_path, "wb") as fh:
        fh.write(blob[:-4])
    with pytest.raises(ValueError, match="blob length mismatch"):
        load_checkpoint(path)


def test_external_embeddings_from_export_tool(tmp_path):
    cli = REPO_ROOT / "sbert-export" / "dist" / "cli.js"
    if not cli.exists():
        pytest.skip(
            "export tool not built; run npm install && npm run build "
            "inside sbert-export to enable this check"
        )
    convs = make_synthetic_pairs(10, seed=19)
    corpus_path = tmp_path / "corpus.jsonl"
    save_corpus(convs, str(corpus_path))
    outs = []
    for run in range(2):
        out = tmp_path / f"vectors-{run}.jsonl"
        proc = subprocess.run(
            ["node", str(cli), "export", "--in", str(corpus_path),
             "--out", str(out), "--model", "test", "--batch", "32"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        outs.append(out)
    embs = load_external(str(outs[0]), convs)
    assert len(embs) == 10
    for conv in convs:
        assert embs[conv.id].matrix.shape == (len(conv.utterances), 768)
    assert outs[0].read_bytes() == outs[1].read_bytes()
