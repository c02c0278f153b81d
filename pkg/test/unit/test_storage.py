import json

import numpy as np
import pytest

from src.config import TrainConfig
from src.model.core.corpus import AttributeVocabulary, Corpus, Vocabulary, generate_synthetic_corpus
from src.model.core.network import Checkpoint
from src.model.core.storage import FileStorage, load_embeddings, load_stopwords, write_jsonl
from src.model.utils.errors import ParseError, SchemaError, UsageError


@pytest.fixture
def storage():
    return FileStorage()


@pytest.fixture
def corpus():
    return generate_synthetic_corpus(4, 4, {"frames": 3, "flow": 2}, seed=1, captions_per_video=2)


@pytest.fixture
def checkpoint():
    rng = np.random.Generator(np.random.Philox(0))
    return Checkpoint(
        params={"decoder.W_out": rng.normal(size=(6, 3)), "decoder.b_out": np.zeros(6)},
        vocab=Vocabulary.build([["dog", "runs"]]),
        attributes=AttributeVocabulary(["dog", "runs"]),
        config=TrainConfig.preset("synthetic", modalities=["frames"]),
        stream_dims={"frames": 3},
        epoch=4,
        val_score=1.25,
    )


def line(video_id="v1", streams=None, captions=("a dog is running",)):
    return json.dumps({
        "id": video_id,
        "streams": streams or {"frames": [[0.1, 0.2], [0.3, 0.4]]},
        "captions": list(captions),
    })


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


def test_corpus_round_trip(storage, corpus, tmp_path):
    path = str(tmp_path / "data" / "train.jsonl")

    storage.save_corpus(corpus, path)
    loaded = storage.load_corpus(path)

    assert loaded.records == corpus.records


def test_load_corpus_skips_blank_lines(storage, tmp_path):
    path = write_lines(tmp_path / "d.jsonl", [line("a"), "", line("b")])

    assert [r.id for r in storage.load_corpus(path)] == ["a", "b"]


def test_missing_dataset_is_usage_error(storage, tmp_path):
    with pytest.raises(UsageError):
        storage.load_corpus(str(tmp_path / "missing.jsonl"))


@pytest.mark.parametrize("bad_line", [
    "{not json",
    json.dumps({"id": "v2", "streams": {"frames": [[1.0, 2.0]]}}),
    line("v2", captions=["?!"]),
    line("v2", streams={"frames": [[1.0, 2.0], [3.0]]}),
    line("v2", streams={"audio": [[1.0, 2.0]]}),
    line("v2", captions=[]),
    line("v2", streams={"frames": [[float("nan"), 2.0]]}),
    '{"id": "v2", "streams": {"frames": [[Infinity, 2.0]]}, "captions": ["a dog"]}',
])
def test_parse_error_names_the_line(storage, tmp_path, bad_line):
    path = write_lines(tmp_path / "d.jsonl", [line("v1"), line("v3"), bad_line])

    with pytest.raises(ParseError) as exc_info:
        storage.load_corpus(path)

    assert exc_info.value.line == 3
    assert str(exc_info.value).startswith("line 3:")


def test_dimension_mismatch_between_lines_is_schema_error(storage, tmp_path):
    path = write_lines(tmp_path / "d.jsonl", [
        line("v1", streams={"frames": [[0.0] * 16]}),
        line("v2", streams={"frames": [[0.0] * 17]}),
    ])

    with pytest.raises(SchemaError):
        storage.load_corpus(path)


def test_split_path(storage):
    assert storage.split_path("data", "val").endswith("val.jsonl")
    with pytest.raises(UsageError):
        storage.split_path("data", "dev")


def test_checkpoint_round_trip(storage, checkpoint, tmp_path):
    path = str(tmp_path / "model.ckpt")

    storage.save_checkpoint(checkpoint, path)
    loaded = storage.load_checkpoint(path)

    assert loaded.vocab == checkpoint.vocab
    assert loaded.attributes == checkpoint.attributes
    assert loaded.config == checkpoint.config
    assert loaded.stream_dims == {"frames": 3}
    assert (loaded.epoch, loaded.val_score) == (4, 1.25)
    for name, value in checkpoint.params.items():
        np.testing.assert_array_equal(loaded.params[name], value)


def test_checkpoint_bytes_are_reproducible(storage, checkpoint, tmp_path):
    first, second = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")

    storage.save_checkpoint(checkpoint, first)
    storage.save_checkpoint(checkpoint, second)

    with open(first, "rb") as f, open(second, "rb") as g:
        assert f.read() == g.read()


def test_checkpoint_loads_with_numpy(storage, checkpoint, tmp_path):
    path = str(tmp_path / "model.ckpt")
    storage.save_checkpoint(checkpoint, path)

    with np.load(path) as archive:
        np.testing.assert_array_equal(archive["params/decoder.W_out"], checkpoint.params["decoder.W_out"])


def test_bad_checkpoint_is_schema_error(storage, tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a zip")

    with pytest.raises(SchemaError):
        storage.load_checkpoint(str(path))


def test_missing_checkpoint_is_usage_error(storage, tmp_path):
    with pytest.raises(UsageError):
        storage.load_checkpoint(str(tmp_path / "missing.ckpt"))


def test_write_jsonl_writes_one_object_per_line(tmp_path):
    path = str(tmp_path / "out" / "rows.jsonl")

    write_jsonl([{"id": "a", "caption": "dog"}, {"id": "b", "caption": "cat"}], path)

    with open(path, encoding="utf-8") as f:
        assert [json.loads(row)["id"] for row in f] == ["a", "b"]


def test_load_stopwords(tmp_path):
    path = tmp_path / "stop.txt"
    path.write_text("The\n\nof\n", encoding="utf-8")

    assert load_stopwords(str(path)) == {"the", "of"}


def test_load_embeddings_keeps_vocabulary_words(tmp_path):
    vocab = Vocabulary.build([["dog", "runs"]])
    path = tmp_path / "vectors.txt"
    path.write_text("dog 1 2 3\ncat 4 5 6\n", encoding="utf-8")

    vectors = load_embeddings(str(path), vocab, 3)

    assert list(vectors) == [vocab.index["dog"]]
    np.testing.assert_array_equal(vectors[vocab.index["dog"]], [1.0, 2.0, 3.0])


def test_load_embeddings_wrong_dimension(tmp_path):
    path = tmp_path / "vectors.txt"
    path.write_text("dog 1 2 3\nruns 1 2\n", encoding="utf-8")

    with pytest.raises(ParseError) as exc_info:
        load_embeddings(str(path), Vocabulary.build([["dog", "runs"]]), 3)

    assert exc_info.value.line == 2
