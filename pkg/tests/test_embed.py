import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mvsumm.corpus import Conversation, Utterance
from mvsumm.embed import (
    EmbeddingMatrix,
    TfidfModel,
    cosine_matrix,
    embed_conversation,
    embed_corpus,
    fit_tfidf,
    load_external,
    normalize_rows,
    save_embeddings,
)


def one_conv(*texts: str, cid: str = "c") -> Conversation:
    return Conversation(cid, tuple(Utterance("A", t) for t in texts))


# ---------------------------------------------------------------------------
# idf values, evaluated by hand from idf(t) = ln((1+N)/(1+df)) + 1


def test_idf_token_in_every_document_is_one():
    model = fit_tfidf([one_conv("a b", "a c")], dim=8)
    assert model.idf[model.token_index["a"]] == pytest.approx(1.0, abs=1e-12)


def test_idf_token_in_one_of_two_documents():
    model = fit_tfidf([one_conv("a b", "a c")], dim=8)
    expected = math.log(3.0 / 2.0) + 1.0  # ~1.4055
    assert model.idf[model.token_index["b"]] == pytest.approx(expected, abs=1e-12)


def test_idf_counts_documents_not_occurrences():
    # "a a a" in a single document still has df = 1
    m1 = fit_tfidf([one_conv("a a a", "b")], dim=8)
    m2 = fit_tfidf([one_conv("a", "b")], dim=8)
    assert m1.idf[m1.token_index["a"]] == m2.idf[m2.token_index["a"]]


def test_fit_rejects_small_dim_and_empty_corpus():
    with pytest.raises(ValueError):
        fit_tfidf([one_conv("a")], dim=7)
    with pytest.raises(ValueError):
        fit_tfidf([], dim=8)


def test_projection_deterministic_in_seed():
    a = fit_tfidf([one_conv("a b c")], dim=16, seed=5)
    b = fit_tfidf([one_conv("a b c")], dim=16, seed=5)
    c = fit_tfidf([one_conv("a b c")], dim=16, seed=6)
    assert a.projection.tobytes() == b.projection.tobytes()
    assert a.projection.tobytes() != c.projection.tobytes()


# ---------------------------------------------------------------------------
# embedding rows


def test_rows_unit_norm_or_zero(mini_corpus):
    model = fit_tfidf(mini_corpus, dim=16)
    for emb in embed_corpus(model, mini_corpus).values():
        norms = np.linalg.norm(emb.matrix, axis=1)
        assert np.all((np.abs(norms - 1.0) < 1e-12) | (norms == 0.0))


def test_oov_only_utterance_keeps_zero_row():
    model = fit_tfidf([one_conv("a b")], dim=8)
    emb = embed_conversation(model, one_conv("zzz qqq"))
    assert np.all(emb.matrix == 0.0)


def test_identical_utterances_identical_rows():
    model = fit_tfidf([one_conv("a b", "a b")], dim=8)
    emb = embed_conversation(model, one_conv("a b", "a b"))
    assert emb.matrix[0].tobytes() == emb.matrix[1].tobytes()
    sims = cosine_matrix(emb)
    assert sims[0, 1] == pytest.approx(1.0, abs=1e-12)


def test_cosine_self_similarity_one(mini_corpus):
    model = fit_tfidf(mini_corpus, dim=16)
    emb = embed_conversation(model, mini_corpus[0])
    sims = cosine_matrix(emb)
    assert np.allclose(np.diag(sims), 1.0, atol=1e-12)
    assert np.allclose(sims, sims.T)
    assert sims.max() <= 1.0 and sims.min() >= -1.0


@given(
    arrays(
        np.float64,
        (4, 6),
        elements=st.floats(-5, 5, allow_nan=False, allow_infinity=False),
    )
)
def test_normalize_rows_idempotent_and_zero_preserving(m):
    once = normalize_rows(m)
    twice = normalize_rows(once)
    assert np.allclose(once, twice, atol=1e-12)
    zero_in = np.linalg.norm(m, axis=1) == 0
    assert np.all(once[zero_in] == 0.0)


# ---------------------------------------------------------------------------
# model persistence


def test_tfidf_save_load_reproduces_embeddings(tmp_path, mini_corpus):
    model = fit_tfidf(mini_corpus, dim=16, seed=3)
    path = tmp_path / "tfidf.json"
    model.save(str(path))
    loaded = TfidfModel.load(str(path))
    a = embed_conversation(model, mini_corpus[1])
    b = embed_conversation(loaded, mini_corpus[1])
    assert a.matrix.tobytes() == b.matrix.tobytes()


def test_tfidf_load_rejects_length_mismatch(tmp_path):
    model = fit_tfidf([one_conv("a b c")], dim=8)
    path = tmp_path / "tfidf.json"
    model.save(str(path))
    blob = json.loads(path.read_text())
    blob["idf"] = blob["idf"][:-1]
    path.write_text(json.dumps(blob))
    with pytest.raises(ValueError):
        TfidfModel.load(str(path))


# ---------------------------------------------------------------------------
# external interchange


def _write_records(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def _record(cid, vectors):
    return {"id": cid, "dim": len(vectors[0]), "vectors": vectors}


def test_save_then_load_external_round_trip(tmp_path, mini_corpus):
    model = fit_tfidf(mini_corpus, dim=16)
    embs = embed_corpus(model, mini_corpus)
    path = tmp_path / "vecs.jsonl"
    save_embeddings(embs, str(path))
    loaded = load_external(str(path), mini_corpus)
    for cid, emb in embs.items():
        assert np.allclose(loaded[cid].matrix, emb.matrix, atol=1e-9)


def test_load_external_renormalizes_rows(tmp_path):
    path = tmp_path / "vecs.jsonl"
    _write_records(path, [_record("c", [[3.0] + [0.0] * 7])])
    conv = one_conv("hi")
    loaded = load_external(str(path), [conv])
    assert loaded["c"].matrix[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_load_external_row_count_mismatch(tmp_path):
    path = tmp_path / "vecs.jsonl"
    _write_records(path, [_record("c", [[1.0] * 8, [1.0] * 8])])
    with pytest.raises(ValueError, match="row count"):
        load_external(str(path), [one_conv("one", "two", "three")])


def test_load_external_missing_key_and_duplicate(tmp_path):
    path = tmp_path / "vecs.jsonl"
    _write_records(path, [{"id": "c", "vectors": [[1.0] * 8]}])
    with pytest.raises(ValueError, match="missing"):
        load_external(str(path))
    rec = _record("c", [[1.0] * 8])
    _write_records(path, [rec, rec])
    with pytest.raises(ValueError, match="duplicate"):
        load_external(str(path))


def test_load_external_dim_agreement(tmp_path):
    path = tmp_path / "vecs.jsonl"
    _write_records(
        path,
        [
            _record("a", [[1.0] * 8]),
            _record("b", [[1.0] * 16]),
        ],
    )
    with pytest.raises(ValueError, match="dim"):
        load_external(str(path))
    # declared dim must also match the actual vector width
    _write_records(path, [{"id": "a", "dim": 9, "vectors": [[1.0] * 8]}])
    with pytest.raises(ValueError, match="dim"):
        load_external(str(path))


def test_load_external_exposes_common_dim(tmp_path):
    path = tmp_path / "vecs.jsonl"
    _write_records(path, [_record("a", [[1.0] * 768]), _record("b", [[2.0] * 768])])
    loaded = load_external(str(path))
    assert all(e.matrix.shape[1] == 768 for e in loaded.values())


def test_load_external_empty_file(tmp_path):
    path = tmp_path / "vecs.jsonl"
    path.write_text("")
    with pytest.raises(ValueError, match="no embedding records"):
        load_external(str(path))


def test_embedding_matrix_must_be_2d():
    with pytest.raises(ValueError):
        EmbeddingMatrix("c", np.zeros(4))
