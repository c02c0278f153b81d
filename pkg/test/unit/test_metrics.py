import json
import math

import pytest

from src.config import TrainConfig
from src.model.core.corpus import Vocabulary, build_attribute_vocab, generate_synthetic_corpus
from src.model.core.metrics import (
    METEOR_NOTE,
    bleu,
    bleu_stats,
    cider_d,
    cider_d_scores,
    closest_reference_length,
    evaluate,
    evaluation_threads,
    score_captions,
)
from src.model.core.network import Checkpoint
from src.model.core.training import init_params
from src.model.utils.errors import UsageError


@pytest.fixture
def captions():
    candidates = [["a", "dog", "is", "running"], ["a", "cat", "sleeping"], ["the", "man", "is", "cooking", "food"]]
    references = [
        [["a", "dog", "is", "running"], ["the", "dog", "runs"]],
        [["a", "cat", "is", "sleeping"]],
        [["a", "man", "is", "cooking"], ["the", "man", "cooks", "food"]],
    ]
    return candidates, references


def test_bleu1_hand_example():
    value = bleu([["the", "cat", "sat"]], [[["the", "cat", "sat", "down"]]], 1)

    assert value == pytest.approx(math.exp(-1 / 3), abs=1e-6)


@pytest.mark.parametrize("N", [1, 2, 3, 4])
def test_bleu_of_a_perfect_match_is_one(N):
    sentence = ["a", "dog", "is", "running", "fast"]

    assert bleu([sentence], [[sentence]], N) == 1.0


def test_bleu_without_overlap_is_zero():
    assert bleu([["x", "y", "z"]], [[["a", "b", "c"]]], 1) == 0.0


def test_bleu_clips_repeated_words():
    value = bleu([["the", "the", "the", "the"]], [[["the", "cat", "is", "here"]]], 1)

    assert value == pytest.approx(0.25)


def test_bleu_is_corpus_level(captions):
    candidates, references = captions
    stats = [bleu_stats(candidate, refs, 2) for candidate, refs in zip(candidates, references)]
    c = sum(s[2] for s in stats)
    r = sum(s[3] for s in stats)
    p1 = sum(s[0][0] for s in stats) / sum(s[1][0] for s in stats)
    p2 = sum(s[0][1] for s in stats) / sum(s[1][1] for s in stats)
    expected = math.sqrt(p1 * p2) * math.exp(min(0.0, 1 - r / c))

    assert bleu(candidates, references, 2) == pytest.approx(expected)


def test_closest_reference_length_prefers_the_shorter_on_ties():
    assert closest_reference_length(["a", "b", "c"], [["x"] * 4, ["x"] * 2]) == 2
    assert closest_reference_length(["a", "b", "c"], [["x"] * 5, ["x"] * 3]) == 3


@pytest.mark.parametrize("N", [0, 5])
def test_bleu_order_out_of_range(N):
    with pytest.raises(UsageError):
        bleu([["a"]], [[["a"]]], N)


@pytest.mark.parametrize("candidates, references", [
    ([], []),
    ([["a"]], []),
    ([["a"]], [[]]),
])
def test_metrics_reject_malformed_input(candidates, references):
    with pytest.raises(UsageError):
        bleu(candidates, references)
    with pytest.raises(UsageError):
        cider_d(candidates, references)


def test_cider_d_two_video_hand_oracle():
    candidates = [["a", "b"], ["c"]]
    references = [[["a", "b"]], [["c", "d"]]]

    # every n-gram occurs in one of the two reference sets: idf = log 2 throughout
    first = (1.0 + 1.0 + 0.0 + 0.0) / 4 * 10
    second = (1 / math.sqrt(2)) * math.exp(-1 / 72) / 4 * 10

    assert cider_d_scores(candidates, references) == pytest.approx([first, second], abs=1e-6)
    assert cider_d(candidates, references) == pytest.approx((first + second) / 2, abs=1e-6)


def test_cider_d_without_shared_ngrams_is_zero():
    assert cider_d([["x", "y"], ["a", "b"]], [[["a", "b"]], [["c", "d"]]]) == 0.0


def test_metrics_do_not_depend_on_video_order(captions):
    candidates, references = captions
    order = [2, 0, 1]

    permuted = ([candidates[i] for i in order], [references[i] for i in order])

    assert bleu(*permuted) == pytest.approx(bleu(candidates, references))
    assert cider_d(*permuted) == pytest.approx(cider_d(candidates, references))


def test_report_aggregates_per_video_scores(captions):
    candidates, references = captions

    report = score_captions(["v1", "v2", "v3"], candidates, references, [-1.0, -2.0, -3.0])

    assert report.candidates == 3 and report.references == 5
    assert report.cider_d == pytest.approx(sum(v.cider_d for v in report.videos) / 3)
    for n in range(1, 5):
        matches = sum(v.matches[n - 1] for v in report.videos)
        totals = sum(v.totals[n - 1] for v in report.videos)
        c = sum(v.candidate_length for v in report.videos)
        r = sum(v.reference_length for v in report.videos)
        precisions = [sum(v.matches[k] for v in report.videos) / sum(v.totals[k] for v in report.videos)
                      for k in range(n)]
        expected = math.exp(sum(math.log(p) for p in precisions) / n + min(0.0, 1 - r / c))
        assert matches <= totals
        assert report.bleu[n] == pytest.approx(expected)
    assert report.videos[0].bleu[4] == 1.0


def test_report_formats(captions):
    candidates, references = captions
    report = score_captions(["v1", "v2", "v3"], candidates, references)

    table = report.to_table()
    rows = report.to_csv().splitlines()

    assert json.loads(report.to_json())["candidates"] == 3
    assert "BLEU@4" in table and "CIDEr-D" in table and METEOR_NOTE in table
    assert rows[0] == "id,caption,logprob,bleu1,bleu2,bleu3,bleu4,cider_d"
    assert rows[1].startswith("v1,a dog is running,")
    assert len(rows) == 4


def test_evaluation_threads(monkeypatch):
    monkeypatch.delenv("MSAN_THREADS", raising=False)
    assert evaluation_threads() == 1

    monkeypatch.setenv("MSAN_THREADS", "3")
    assert evaluation_threads() == 3

    monkeypatch.setenv("MSAN_THREADS", "many")
    with pytest.raises(UsageError):
        evaluation_threads()


@pytest.fixture(scope="module")
def checkpoint_and_corpus():
    corpus = generate_synthetic_corpus(5, 4, {"frames": 3, "flow": 2}, seed=4)
    config = TrainConfig.create(
        hidden_size=6, factors=6, embedding_size=5, encoder_size=4, attribute_count=2,
        modalities=["frames", "flow"], max_caption_len=5,
    )
    vocab = Vocabulary.build(corpus.captions())
    registry = init_params(config, corpus.stream_dims, len(vocab))
    checkpoint = Checkpoint(
        params=registry.snapshot(),
        vocab=vocab,
        attributes=build_attribute_vocab(corpus.captions(), 2),
        config=config,
        stream_dims=corpus.stream_dims,
    )
    return checkpoint, corpus


def test_evaluate_scores_every_video(checkpoint_and_corpus):
    checkpoint, corpus = checkpoint_and_corpus

    report = evaluate(checkpoint, corpus, beam_size=2)

    assert [v.id for v in report.videos] == [r.id for r in corpus]
    assert set(report.detector_f1) == {"frames", "flow"}
    assert all(0.0 <= f1 <= 1.0 for f1 in report.detector_f1.values())
    assert all(v.logprob <= 0.0 for v in report.videos)


def test_evaluate_does_not_depend_on_thread_count(monkeypatch, checkpoint_and_corpus):
    checkpoint, corpus = checkpoint_and_corpus

    monkeypatch.setenv("MSAN_THREADS", "1")
    single = evaluate(checkpoint, corpus, beam_size=2)
    monkeypatch.setenv("MSAN_THREADS", "4")
    threaded = evaluate(checkpoint, corpus, beam_size=2)

    assert single.model_dump() == threaded.model_dump()


def test_evaluate_rejects_bad_arguments(checkpoint_and_corpus):
    checkpoint, corpus = checkpoint_and_corpus

    with pytest.raises(UsageError):
        evaluate(checkpoint, corpus, beam_size=0)
