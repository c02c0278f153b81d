"""
Dataset types, tokenization, vocabularies, attribute labels and the synthetic corpus generator.
"""
import re
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.model.utils.errors import (
    EmptyCaptionError,
    InsufficientVocabularyError,
    SchemaError,
    UsageError,
)

MODALITIES = ("frames", "clips", "flow")
MODALITY_ALIASES = {"f": "frames", "c": "clips", "o": "flow"}

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
RESERVED_TOKENS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = range(4)

DEFAULT_STOPWORDS = frozenset("""
a an the is are was were be been being am and or but if then so of to in on at by for with
from into onto over under up down out off as than that this these those it its he she they
them his her their there here who whom which what while some any each other another very
just also not no nor too can will would should could may might must do does did has have
had having i you we me my your our us
""".split())

SYNTHETIC_NOUNS = (
    "boy", "girl", "man", "woman", "dog", "cat", "child", "person",
    "horse", "bird", "chef", "player", "baby", "monkey", "panda", "singer",
)
SYNTHETIC_VERBS = (
    "singing", "running", "dancing", "cooking", "swimming", "playing", "jumping", "riding",
    "eating", "walking", "sleeping", "talking", "driving", "climbing", "reading", "laughing",
)

_PUNCTUATION = re.compile(r"[^\w\s]")


def tokenize(caption: str) -> List[str]:
    """
    Lowercases a caption, strips punctuation and splits on whitespace.

    Raises:
        EmptyCaptionError: If no token remains
    """
    tokens = _PUNCTUATION.sub("", caption.lower()).split()
    if not tokens:
        raise EmptyCaptionError(f"Caption {caption!r} contains no tokens")
    return tokens


@dataclass(frozen=True, eq=False)
class VideoRecord:
    """
    One video: per-modality feature sequences and tokenized reference captions.

    Attributes:
        id (str): Video identifier
        streams (Dict[str, np.ndarray]): modality name -> [T x d] feature sequence
        captions (Tuple[Tuple[str, ...], ...]): Tokenized references
    """
    id: str
    streams: Dict[str, np.ndarray]
    captions: Tuple[Tuple[str, ...], ...]

    def __post_init__(self):
        if not self.streams:
            raise SchemaError(f"Video '{self.id}' has no feature streams")
        if not self.captions:
            raise SchemaError(f"Video '{self.id}' has no captions")
        for name, stream in self.streams.items():
            if name not in MODALITIES:
                raise SchemaError(f"Video '{self.id}': unknown modality '{name}'")
            if stream.ndim != 2 or stream.shape[0] == 0 or stream.shape[1] == 0:
                raise SchemaError(f"Video '{self.id}': stream '{name}' must be a non-empty [T x d] sequence")
            if not np.all(np.isfinite(stream)):
                raise SchemaError(f"Video '{self.id}': stream '{name}' has non-finite features")

    def __eq__(self, other):
        if not isinstance(other, VideoRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.captions == other.captions
            and self.streams.keys() == other.streams.keys()
            and all(np.array_equal(self.streams[m], other.streams[m]) for m in self.streams)
        )


@dataclass(frozen=True)
class Corpus:
    """
    A set of video records sharing one modality set and per-modality feature dimension.
    """
    records: Tuple[VideoRecord, ...] = ()

    def __post_init__(self):
        check_consistency(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def modalities(self) -> Tuple[str, ...]:
        if not self.records:
            return ()
        return tuple(m for m in MODALITIES if m in self.records[0].streams)

    @property
    def stream_dims(self) -> Dict[str, int]:
        if not self.records:
            return {}
        return {m: self.records[0].streams[m].shape[1] for m in self.modalities}

    def captions(self) -> List[Tuple[str, ...]]:
        return [caption for record in self.records for caption in record.captions]


def check_consistency(records: Sequence[VideoRecord]):
    """
    Raises:
        SchemaError: If modality sets or per-modality dimensions differ between records
    """
    if not records:
        return
    first = records[0]
    for record in records[1:]:
        if record.streams.keys() != first.streams.keys():
            raise SchemaError(
                f"Video '{record.id}' has streams {sorted(record.streams)}, "
                f"expected {sorted(first.streams)}"
            )
        for name, stream in record.streams.items():
            expected = first.streams[name].shape[1]
            if stream.shape[1] != expected:
                raise SchemaError(
                    f"Video '{record.id}': stream '{name}' has dimension {stream.shape[1]}, expected {expected}"
                )


class Vocabulary:
    """
    Token <-> id bijection. Ids 0-3 are PAD, BOS, EOS, UNK; the remaining tokens
    follow descending frequency with lexicographic tie-break.
    """

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED_TOKENS:
            raise UsageError(f"Vocabulary must start with the reserved tokens {RESERVED_TOKENS}")
        if len(set(tokens)) != len(tokens):
            raise UsageError("Vocabulary tokens must be unique")
        self.tokens = tokens
        self.index = {token: i for i, token in enumerate(tokens)}

    @classmethod
    def build(cls, captions: Iterable[Sequence[str]], min_count: int = 1) -> "Vocabulary":
        counts = Counter(token for caption in captions for token in caption)
        ranked = sorted(
            (token for token, count in counts.items() if count >= min_count and token not in RESERVED_TOKENS),
            key=lambda token: (-counts[token], token),
        )
        return cls(list(RESERVED_TOKENS) + ranked)

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self.index.get(token, UNK_ID) for token in tokens]

    def decode(self, ids: Sequence[int]) -> List[str]:
        words = []
        for token_id in ids:
            if token_id == EOS_ID:
                break
            if token_id in (PAD_ID, BOS_ID):
                continue
            words.append(self.tokens[token_id])
        return words


class AttributeVocabulary:
    """
    The K semantic attribute words, most frequent first.
    """

    def __init__(self, words: Sequence[str]):
        self.words = list(words)
        self.index = {word: k for k, word in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise UsageError("Attribute words must be unique")

    def __len__(self) -> int:
        return len(self.words)

    def __eq__(self, other):
        return isinstance(other, AttributeVocabulary) and self.words == other.words


def build_attribute_vocab(captions: Iterable[Sequence[str]], k: int,
                          stopwords: Iterable[str] = DEFAULT_STOPWORDS) -> AttributeVocabulary:
    """
    Selects the top-K non-stopword tokens by frequency.

    Args:
        captions (Iterable[Sequence[str]]): Tokenized training and validation captions
        k (int): Number of attributes
        stopwords (Iterable[str]): Function words to exclude

    Returns:
        AttributeVocabulary: Words ordered by descending frequency, ties broken lexicographically

    Raises:
        UsageError: If k < 1
        InsufficientVocabularyError: If fewer than k eligible words exist
    """
    if k < 1:
        raise UsageError(f"K must be at least 1, got {k}")
    stopwords = set(stopwords)
    counts = Counter(
        token for caption in captions for token in caption
        if token not in stopwords and token not in RESERVED_TOKENS
    )
    if len(counts) < k:
        raise InsufficientVocabularyError(f"Only {len(counts)} eligible attribute words, {k} requested")
    ranked = sorted(counts, key=lambda word: (-counts[word], word))
    return AttributeVocabulary(ranked[:k])


def attribute_labels(record: VideoRecord, vocab: AttributeVocabulary) -> np.ndarray:
    """Binary vector y with y[k] = 1 iff attribute word k occurs in any caption of the video."""
    labels = np.zeros(len(vocab))
    for caption in record.captions:
        for token in caption:
            k = vocab.index.get(token)
            if k is not None:
                labels[k] = 1.0
    return labels


def split_corpus(corpus: Corpus, fractions: Tuple[float, float] = (0.6, 0.2)) -> Tuple[Corpus, Corpus, Corpus]:
    """Splits records in order into train/validation/test; the test split takes the remainder."""
    n = len(corpus)
    n_train = int(n * fractions[0])
    n_val = int(n * fractions[1])
    records = corpus.records
    return (
        Corpus(records[:n_train]),
        Corpus(records[n_train:n_train + n_val]),
        Corpus(records[n_train + n_val:]),
    )


def synthetic_visibility(modality: str, n_nouns: int, n_verbs: int) -> np.ndarray:
    """
    Which latent attributes a modality can see. Frames show objects (nouns) and the
    first half of the actions, clips show every action, and flow shows every action
    plus the second half of the objects, so no single modality carries all attributes.
    """
    nouns = np.zeros(n_nouns)
    verbs = np.zeros(n_verbs)
    if modality == "frames":
        nouns[:] = 1.0
        verbs[: (n_verbs + 1) // 2] = 1.0
    elif modality == "clips":
        verbs[:] = 1.0
    else:
        nouns[n_nouns // 2:] = 1.0
        verbs[:] = 1.0
    return np.concatenate([nouns, verbs])


def generate_synthetic_corpus(n_videos: int,
                              k_latent: int,
                              dims: Mapping[str, int],
                              seed: int,
                              noise: float = 0.1,
                              n_frames: int = 4,
                              captions_per_video: int = 1) -> Corpus:
    """
    Generates a corpus whose captions are determined by latent attributes.

    Each video draws one noun and one verb. Every modality observes a noisy linear image
    of the latent indicator restricted to the attributes that modality can see, through
    its own random projection. Captions follow the template "a <noun> is <verb>"; a second
    reference, when requested, is "the <noun> is <verb>".

    Args:
        n_videos (int): Number of videos
        k_latent (int): Number of latent attributes, split between nouns and verbs
        dims (Mapping[str, int]): Feature dimension per modality
        seed (int): Seed of the Philox generator; generation is a pure function of it
        noise (float): Standard deviation of additive Gaussian noise
        n_frames (int): Sequence length of every stream
        captions_per_video (int): 1 or 2 references per video

    Returns:
        Corpus: The generated corpus

    Raises:
        UsageError: If arguments are out of range
    """
    n_nouns = (k_latent + 1) // 2
    n_verbs = k_latent - n_nouns
    if k_latent < 2 or n_nouns > len(SYNTHETIC_NOUNS) or n_verbs > len(SYNTHETIC_VERBS):
        raise UsageError(f"k_latent must lie in [2, {len(SYNTHETIC_NOUNS) + len(SYNTHETIC_VERBS)}], got {k_latent}")
    if n_videos < 0 or n_frames < 1 or captions_per_video not in (1, 2):
        raise UsageError("n_videos must be >= 0, n_frames >= 1 and captions_per_video 1 or 2")
    unknown = set(dims) - set(MODALITIES)
    if not dims or unknown:
        raise UsageError(f"dims must name modalities among {MODALITIES}, got {sorted(dims)}")

    rng = np.random.Generator(np.random.Philox(seed))
    modalities = [m for m in MODALITIES if m in dims]
    projections = {
        m: rng.normal(size=(dims[m], k_latent)) * synthetic_visibility(m, n_nouns, n_verbs)
        for m in modalities
    }
    templates = ["a {noun} is {verb}", "the {noun} is {verb}"][:captions_per_video]

    records = []
    for i in range(n_videos):
        noun = int(rng.integers(n_nouns))
        verb = int(rng.integers(n_verbs))
        latent = np.zeros(k_latent)
        latent[noun] = 1.0
        latent[n_nouns + verb] = 1.0

        streams = {}
        for m in modalities:
            clean = projections[m] @ latent
            streams[m] = np.tile(clean, (n_frames, 1)) + noise * rng.normal(size=(n_frames, dims[m]))

        words = {"noun": SYNTHETIC_NOUNS[noun], "verb": SYNTHETIC_VERBS[verb]}
        captions = tuple(tuple(template.format(**words).split()) for template in templates)
        records.append(VideoRecord(id=f"video{i:05d}", streams=streams, captions=captions))

    logging.info(f"Generated {n_videos} synthetic videos (K_latent={k_latent}, modalities={modalities}, seed={seed})")
    return Corpus(tuple(records))
