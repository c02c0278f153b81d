import io
import os
import json
import logging
import zipfile
from typing import Dict, Iterable, List, Mapping, Set

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from src.config import TrainConfig
from src.interfaces.storage import IStorage
from src.model.core.corpus import AttributeVocabulary, Corpus, Vocabulary, VideoRecord, tokenize
from src.model.core.network import CHECKPOINT_VERSION, Checkpoint
from src.model.utils.errors import EmptyCaptionError, ParseError, SchemaError, UsageError

SPLITS = ("train", "val", "test")
METADATA_MEMBER = "metadata.json"
PARAMS_PREFIX = "params/"
# zip members carry a fixed timestamp so identical checkpoints are identical files
FIXED_DATE_TIME = (1980, 1, 1, 0, 0, 0)


class VideoLine(BaseModel):
    """One line of a dataset file."""
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    id: str
    streams: Dict[str, List[List[float]]]
    captions: List[str]


class FileStorage(IStorage):
    """
    Local-filesystem storage: JSON Lines datasets and zip checkpoints of .npy members.

    Methods:
        load_corpus(path): Parses and validates a dataset file
        save_corpus(corpus, path): Writes a dataset file
        split_path(data_dir, split): Location of one split inside a dataset directory
        save_checkpoint(checkpoint, path): Writes a checkpoint
        load_checkpoint(path): Reads a checkpoint
    """

    def load_corpus(self, path: str) -> Corpus:
        """
        Raises:
            UsageError: If the file does not exist
            ParseError: If a line is not valid JSON or misses a field (carries the line number)
            SchemaError: If records disagree on modalities or feature dimensions
        """
        if not os.path.isfile(path):
            raise UsageError(f"Dataset file '{path}' does not exist")
        records = []
        with open(path, encoding="utf-8", mode="r") as f:
            for line_number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                records.append(self.__parse_line(line, line_number))
        corpus = Corpus(tuple(records))
        logging.info(f"Loaded {len(corpus)} videos from {path}")
        return corpus

    @staticmethod
    def __parse_line(line: str, line_number: int) -> VideoRecord:
        try:
            parsed = VideoLine.model_validate_json(line)
        except ValidationError as e:
            raise ParseError(str(e).replace("\n", " "), line_number) from e
        try:
            captions = tuple(tuple(tokenize(caption)) for caption in parsed.captions)
        except EmptyCaptionError as e:
            raise ParseError(str(e), line_number) from e
        streams = {}
        for name, rows in parsed.streams.items():
            try:
                streams[name] = np.asarray(rows, dtype=np.float64)
            except ValueError as e:
                raise ParseError(f"stream '{name}' is ragged", line_number) from e
        try:
            return VideoRecord(id=parsed.id, streams=streams, captions=captions)
        except SchemaError as e:
            raise ParseError(str(e), line_number) from e

    def save_corpus(self, corpus: Corpus, path: str):
        rows = [
            {
                "id": record.id,
                "streams": {name: record.streams[name].tolist() for name in corpus.modalities},
                "captions": [" ".join(caption) for caption in record.captions],
            }
            for record in corpus
        ]
        write_jsonl(rows, path)

    @staticmethod
    def split_path(data_dir: str, split: str) -> str:
        if split not in SPLITS:
            raise UsageError(f"Unknown split '{split}'. Expected one of {SPLITS}")
        return os.path.join(data_dir, f"{split}.jsonl")

    def save_checkpoint(self, checkpoint: Checkpoint, path: str):
        """
        Writes parameters as .npy members plus a JSON metadata member; the file loads with numpy.load.
        """
        metadata = {
            "version": checkpoint.version,
            "vocab": checkpoint.vocab.tokens,
            "attributes": checkpoint.attributes.words,
            "config": checkpoint.config.model_dump(),
            "stream_dims": checkpoint.stream_dims,
            "epoch": checkpoint.epoch,
            "val_score": checkpoint.val_score,
        }
        _make_parent(path)
        with zipfile.ZipFile(path, mode="w", compression=zipfile.ZIP_DEFLATED) as archive:
            for name in sorted(checkpoint.params):
                buffer = io.BytesIO()
                np.lib.format.write_array(buffer, np.ascontiguousarray(checkpoint.params[name]), allow_pickle=False)
                archive.writestr(_member(f"{PARAMS_PREFIX}{name}.npy"), buffer.getvalue())
            archive.writestr(_member(METADATA_MEMBER), json.dumps(metadata, sort_keys=True, indent=2))
        logging.info(f"Checkpoint (epoch {checkpoint.epoch}) saved to {path}")

    def load_checkpoint(self, path: str) -> Checkpoint:
        """
        Raises:
            UsageError: If the file does not exist
            SchemaError: If the file is not a checkpoint or has another version
        """
        if not os.path.isfile(path):
            raise UsageError(f"Checkpoint '{path}' does not exist")
        try:
            with zipfile.ZipFile(path, mode="r") as archive:
                metadata = json.loads(archive.read(METADATA_MEMBER))
                params = {
                    name[len(PARAMS_PREFIX):-len(".npy")]: np.lib.format.read_array(
                        io.BytesIO(archive.read(name)), allow_pickle=False
                    )
                    for name in archive.namelist() if name.startswith(PARAMS_PREFIX)
                }
        except (zipfile.BadZipFile, KeyError, ValueError) as e:
            raise SchemaError(f"'{path}' is not a valid checkpoint: {e}") from e
        if metadata.get("version") != CHECKPOINT_VERSION:
            raise SchemaError(f"Checkpoint version {metadata.get('version')} is not supported")
        return Checkpoint(
            params=params,
            vocab=Vocabulary(metadata["vocab"]),
            attributes=AttributeVocabulary(metadata["attributes"]),
            config=TrainConfig.create(**metadata["config"]),
            stream_dims={m: int(d) for m, d in metadata["stream_dims"].items()},
            epoch=int(metadata["epoch"]),
            val_score=float(metadata["val_score"]),
        )


def _member(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=FIXED_DATE_TIME)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    return info


def _make_parent(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_jsonl(rows: Iterable[Mapping], path: str):
    """Writes one compact JSON object per line."""
    _make_parent(path)
    count = 0
    with open(path, encoding="utf-8", mode="w") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")
            count += 1
    logging.info(f"Wrote {count} lines to {path}")


def load_stopwords(path: str) -> Set[str]:
    """One stopword per line, UTF-8; blank lines are ignored."""
    try:
        with open(path, encoding="utf-8", mode="r") as f:
            return {line.strip().lower() for line in f if line.strip()}
    except OSError as e:
        raise UsageError(f"Cannot read stopword list '{path}': {e}") from e


def load_embeddings(path: str, vocab: Vocabulary, n_x: int) -> Dict[int, np.ndarray]:
    """
    Reads `word f1 .. fn` lines and keeps vectors of words in the vocabulary.

    Raises:
        UsageError: If the file cannot be read
        ParseError: If a vector has the wrong dimension or a non-numeric entry
    """
    vectors: Dict[int, np.ndarray] = {}
    try:
        with open(path, encoding="utf-8", mode="r") as f:
            for line_number, line in enumerate(f, start=1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != n_x + 1:
                    raise ParseError(f"expected {n_x} values after the word, got {len(parts) - 1}", line_number)
                token_id = vocab.index.get(parts[0])
                if token_id is None:
                    continue
                try:
                    vectors[token_id] = np.array([float(x) for x in parts[1:]])
                except ValueError as e:
                    raise ParseError(f"non-numeric value for '{parts[0]}'", line_number) from e
    except OSError as e:
        raise UsageError(f"Cannot read embeddings '{path}': {e}") from e
    logging.info(f"Loaded pretrained vectors for {len(vectors)}/{len(vocab)} words from {path}")
    return vectors
