import os
import json

import pytest

from src.model.utils.errors import ParseError, UsageError
from src.model.utils.utils import (
    RunManifest,
    manifest_path,
    parse_modalities,
    parse_variant,
    write_manifest,
)


@pytest.mark.parametrize("text, expected", [
    ("f,c,o", ["frames", "clips", "flow"]),
    ("o,f", ["frames", "flow"]),
    (" flow , frames ,", ["frames", "flow"]),
    ("C", ["clips"]),
    ("f,f", ["frames"]),
])
def test_parse_modalities(text, expected):
    assert parse_modalities(text) == expected


@pytest.mark.parametrize("text", ["", " , ", "f,x", "audio"])
def test_parse_modalities_invalid(text):
    with pytest.raises(UsageError):
        parse_modalities(text)


@pytest.mark.parametrize("text, expected", [
    ("uniform", {"label": "uniform", "decoder_variant": "uniform", "semantic_modalities": None}),
    ("msan:f,o", {"label": "msan:f,o", "decoder_variant": "msan", "semantic_modalities": ["frames", "flow"]}),
    ("concat", {"label": "concat", "decoder_variant": "concat", "semantic_modalities": None}),
])
def test_parse_variant(text, expected):
    assert parse_variant(text) == expected


@pytest.mark.parametrize("text", ["lstm", "msan:q"])
def test_parse_variant_invalid(text):
    with pytest.raises(UsageError):
        parse_variant(text)


def test_manifest_path(tmp_path):
    assert manifest_path(str(tmp_path)) == os.path.join(str(tmp_path), "manifest.json")
    assert manifest_path("runs/model.ckpt") == os.path.join("runs", "model.manifest.json")
    assert manifest_path("runs/eval") == os.path.join("runs", "eval", "manifest.json")


def test_write_manifest_records_versions(tmp_path):
    path = write_manifest(RunManifest(command="train", seed=3, outputs={"checkpoint": "m.ckpt"}),
                          str(tmp_path / "m.ckpt"))

    with open(path, encoding="utf-8") as f:
        manifest = json.load(f)
    assert manifest["command"] == "train"
    assert manifest["seed"] == 3
    assert set(manifest["versions"]) == {"checkpoint_format", "numpy", "pydantic", "python"}


def test_parse_error_carries_the_line_number():
    error = ParseError("bad json", 12)

    assert error.line == 12
    assert str(error) == "line 12: bad json"
    assert isinstance(error, UsageError) and isinstance(error, ValueError)
