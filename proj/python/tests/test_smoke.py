import math

import numpy as np
import pytest

import icl_forge as icf


def test_perplexity_matches_closed_form():
    assert icf.perplexity([-1.0, -2.0, -3.0]) == pytest.approx(math.exp(2.0), abs=1e-9)
    assert icf.perplexity([math.log(1 / 50)] * 9) == pytest.approx(50.0, abs=1e-9)


def test_errors_carry_code_and_ids():
    with pytest.raises(icf.IclForgeError) as info:
        icf.perplexity([])
    assert info.value.code == "EmptyLogProbs"

    text = '{"id":"q-7","task":"qa","input":"x","output":"y"}\n' * 2
    with pytest.raises(icf.IclForgeError) as info:
        icf.parse_dataset_jsonl(text)
    assert info.value.code == "DuplicateId"
    assert info.value.ids == ["q-7"]


def test_cosine_against_numpy():
    a, b = [1.0, 2.0, 3.0], [4.0, 5.0, 6.0]
    expect = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
    assert icf.cosine_similarity(a, b) == pytest.approx(expect, abs=1e-12)


def test_knn_against_numpy_scan():
    rng = np.random.default_rng(0)
    vectors = rng.normal(size=(300, 12)).astype(np.float32)
    ids = [f"r{i:04d}" for i in range(300)]
    emb = icf.EmbeddingMatrix(ids, vectors)
    index = icf.NeighborIndex(emb)
    unit = vectors.astype(np.float64)
    unit /= np.linalg.norm(unit, axis=1, keepdims=True)
    for q in (0, 17, 299):
        sims = unit @ unit[q]
        sims[q] = -np.inf
        order = sorted(range(300), key=lambda i: (-sims[i], ids[i]))[:6]
        got = index.knn_query(ids[q], 6)
        assert got.neighbor_ids == [ids[i] for i in order]
        assert icf.brute_force_knn(emb, ids[q], 6).neighbor_ids == got.neighbor_ids


def test_noise_injection_counts():
    pool = icf.Dataset([icf.Example(f"p{i}", "qa", f"in {i}", f"out {i}") for i in range(50)])
    donor = icf.Dataset([icf.Example(f"d{i}", "other", f"x {i}", f"y {i}") for i in range(10)])
    noisy = icf.inject_irrelevant_noise(pool, donor, rate=0.4, seed=3)
    assert len(noisy.noisy_ids()) == 20
    assert [e.input for e in noisy.examples] == [e.input for e in pool.examples]


def test_greedy_map_against_bruteforce():
    rng = np.random.default_rng(4)
    b = rng.normal(size=(8, 10))
    kernel = b @ b.T / 8
    ids = [f"k{i}" for i in range(8)]
    chosen, gains = icf.greedy_map_logdet(kernel, ids, 4)
    picked = []
    for _ in range(4):
        best = max(
            (i for i in range(8) if i not in picked),
            key=lambda i: np.linalg.slogdet(kernel[np.ix_(picked + [i], picked + [i])])[1],
        )
        picked.append(best)
    assert chosen == [ids[i] for i in picked]
    assert sum(gains) == pytest.approx(np.linalg.slogdet(kernel[np.ix_(picked, picked)])[1])


def test_lpr_reduces_noise_on_planted_corpus():
    corpus = icf.make_planted_corpus(clusters=10, per_cluster=40, dim=16, seed=1)
    pool_ids = corpus.pool.ids
    noisy = set(corpus.pool.noisy_ids())
    ppl = corpus.perplexities()
    emb = corpus.embeddings
    vectors = emb.vectors
    row = {i: n for n, i in enumerate(emb.ids)}
    pool_emb = icf.EmbeddingMatrix(pool_ids, vectors[[row[i] for i in pool_ids]])
    index = icf.NeighborIndex(pool_emb)
    raw_noisy = kept_noisy = 0
    for test in corpus.test.examples:
        raw = icf.select_topk(index, test, emb, 8)
        filtered, records = icf.lpr_filter(index, emb, test, raw, ppl)
        assert len(filtered) == len(set(filtered)) == 8
        assert len(records) == 8
        raw_noisy += sum(d in noisy for d in raw)
        kept_noisy += sum(d in noisy for d in filtered)
    assert kept_noisy < raw_noisy

    g = icf.global_rank_filter(index, emb, corpus.test.examples[0], ppl, 8, 100)
    assert len(g) == 8


def test_exact_match_normalization():
    assert icf.normalize_answer("The  Cells.") == "cells"
    assert icf.exact_match("gravity", ["Gravity"]) == 1
    assert icf.exact_match("tissues", ["Cells"]) == 0


def test_bleu_against_sacrebleu():
    sacrebleu = pytest.importorskip("sacrebleu")
    ours = icf.bleu("the cat sat", ["the cat sat down"])
    ref = sacrebleu.sentence_bleu(
        "the cat sat", ["the cat sat down"], smooth_method="add-k", smooth_value=1,
        tokenize="none",
    ).score / 100
    assert ours == pytest.approx(math.exp(1 - 4 / 3), abs=1e-12)
    assert ours == pytest.approx(ref, abs=1e-3)

    preds = ["a b c d e f", "the quick brown fox", "x y z"]
    refs = [["a b c d e g"], ["the quick brown dog jumps"], ["x y z"]]
    theirs = sacrebleu.corpus_bleu(preds, list(map(list, zip(*refs))), tokenize="none").score
    assert icf.corpus_bleu(preds, refs) * 100 == pytest.approx(theirs, abs=1e-6)
