import os
import json

import pytest

from msan_cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, CLIInterface
from src.model.core.corpus import EOS_ID
from src.model.core.network import MSANNetwork
from src.model.core.storage import FileStorage

TINY_CONFIG = {
    "hidden_size": 8, "factors": 8, "embedding_size": 6, "encoder_size": 6, "attribute_count": 2,
    "max_epochs": 3, "patience": None, "max_caption_len": 6,
}


def run(tmp_path, *argv):
    return CLIInterface().run(["--log-file", str(tmp_path / "logs" / "msan.log"), *argv])


@pytest.fixture
def dataset(tmp_path):
    out = str(tmp_path / "synth")
    assert run(tmp_path, "gen-synth", "--out", out, "--videos", "20", "--attrs", "4", "--dim", "5") == EXIT_OK
    return out


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY_CONFIG), encoding="utf-8")
    return str(path)


@pytest.fixture
def checkpoint(tmp_path, dataset, config_file):
    path = str(tmp_path / "run" / "model.ckpt")
    code = run(tmp_path, "train", "--data", dataset, "--out", path,
               "--config", config_file, "--preset", "synthetic", "--modalities", "f,o")
    assert code == EXIT_OK
    return path


def test_gen_synth_is_byte_identical_and_split(tmp_path):
    first, second = str(tmp_path / "a"), str(tmp_path / "b")

    for out in (first, second):
        assert run(tmp_path, "gen-synth", "--out", out, "--videos", "10", "--seed", "4") == EXIT_OK

    counts = []
    for split in ("train", "val", "test"):
        with open(os.path.join(first, f"{split}.jsonl"), "rb") as f, open(os.path.join(second, f"{split}.jsonl"), "rb") as g:
            content = f.read()
            assert content == g.read()
        counts.append(len(content.splitlines()))
    assert counts == [6, 2, 2]


def test_missing_data_dir_exits_with_usage_error(tmp_path, capsys):
    code = run(tmp_path, "train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "m.ckpt"))

    assert code == EXIT_USAGE
    assert "does not exist" in capsys.readouterr().err


def test_invalid_config_value_exits_with_usage_error(tmp_path, dataset):
    code = run(tmp_path, "train", "--data", dataset, "--out", str(tmp_path / "m.ckpt"), "--variant", "lstm")

    assert code == EXIT_USAGE


def test_train_writes_checkpoint_and_epoch_log(tmp_path, checkpoint):
    assert os.path.isfile(checkpoint)
    with open(os.path.join(os.path.dirname(checkpoint), "model.train.jsonl"), encoding="utf-8") as f:
        assert len(f.readlines()) == 3
    assert os.path.isfile(os.path.join(os.path.dirname(checkpoint), "model.manifest.json"))


def test_training_is_deterministic(tmp_path, dataset, config_file, checkpoint):
    again = str(tmp_path / "again" / "model.ckpt")

    run(tmp_path, "train", "--data", dataset, "--out", again,
        "--config", config_file, "--preset", "synthetic", "--modalities", "f,o")

    with open(checkpoint, "rb") as f, open(again, "rb") as g:
        assert f.read() == g.read()


def test_caption_prints_json_lines_that_match_rescoring(tmp_path, dataset, checkpoint, capsys):
    capsys.readouterr()

    code = run(tmp_path, "caption", "--ckpt", checkpoint, "--data", dataset, "--beam", "3")

    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert code == EXIT_OK
    assert [row["id"] for row in rows] == [f"video{i:05d}" for i in range(16, 20)]

    storage = FileStorage()
    loaded = storage.load_checkpoint(checkpoint)
    network = MSANNetwork.from_checkpoint(loaded)
    records = {record.id: record for record in storage.load_corpus(os.path.join(dataset, "test.jsonl"))}
    for row in rows:
        tokens = loaded.vocab.encode(row["caption"].split())
        assert EOS_ID not in tokens
        assert network.rescore(records[row["id"]], tokens) == pytest.approx(row["logprob"], abs=1e-9)


def test_caption_writes_a_file(tmp_path, dataset, checkpoint):
    out = str(tmp_path / "captions.jsonl")

    assert run(tmp_path, "caption", "--ckpt", checkpoint, "--data", dataset, "--out", out) == EXIT_OK

    with open(out, encoding="utf-8") as f:
        assert len(f.readlines()) == 4


def test_caption_with_mismatched_dimensions_exits_with_usage_error(tmp_path, checkpoint):
    other = str(tmp_path / "other")
    run(tmp_path, "gen-synth", "--out", other, "--videos", "5", "--attrs", "4", "--dim", "6")

    assert run(tmp_path, "caption", "--ckpt", checkpoint, "--data", other) == EXIT_USAGE


def test_evaluate_writes_the_report_twice_identically(tmp_path, dataset, checkpoint):
    first, second = str(tmp_path / "eval1"), str(tmp_path / "eval2")

    for out in (first, second):
        assert run(tmp_path, "evaluate", "--ckpt", checkpoint, "--data", dataset, "--out", out) == EXIT_OK

    for name in ("report.json", "report.txt", "per_video.csv"):
        with open(os.path.join(first, name), "rb") as f, open(os.path.join(second, name), "rb") as g:
            assert f.read() == g.read()
    with open(os.path.join(first, "report.json"), encoding="utf-8") as f:
        report = json.load(f)
    assert report["candidates"] == 4
    assert set(report["bleu"]) == {"1", "2", "3", "4"}


def test_selfcheck_subset_passes(tmp_path, capsys):
    code = run(tmp_path, "selfcheck", "--suite", "metrics", "--suite", "attention")

    assert code == EXIT_OK
    assert capsys.readouterr().out.count("PASS") == 2


def test_selfcheck_failure_exits_non_zero(tmp_path, mocker):
    mocker.patch("src.model.model.Model.selfcheck", return_value={"passed": False, "results": []})

    assert run(tmp_path, "selfcheck") == EXIT_FAILURE


def test_unknown_selfcheck_suite_exits_with_usage_error(tmp_path):
    assert run(tmp_path, "selfcheck", "--suite", "telepathy") == EXIT_USAGE


def test_internal_failure_exits_with_one(tmp_path, dataset, mocker):
    mocker.patch("src.model.model.train", side_effect=RuntimeError("out of memory"))

    code = run(tmp_path, "train", "--data", dataset, "--out", str(tmp_path / "m.ckpt"))

    assert code == EXIT_FAILURE


def test_invalid_log_level_exits_with_usage_error(tmp_path):
    assert run(tmp_path, "--log-level", "LOUD", "selfcheck", "--suite", "metrics") == EXIT_USAGE
