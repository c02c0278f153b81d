import json
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from src.model.utils.errors import ConfigError

MODALITIES = ("frames", "clips", "flow")
DECODER_VARIANTS = ("msan", "uniform", "mean", "concat")
PRECISIONS = ("float64", "float32")

SYNTHETIC_PRESET = {
    "hidden_size": 32,
    "factors": 32,
    "embedding_size": 32,
    "encoder_size": 32,
    "attribute_count": 8,
    "learning_rate": 5e-3,
    "max_epochs": 30,
    "dropout": 0.1,
    "patience": 5,
    "max_caption_len": 8,
}


class TrainConfig(BaseModel):
    """
    Training and architecture settings.

    Defaults reproduce the published experimental settings: uniform initialization in
    [-0.05, 0.05] with zero biases, 512 hidden units and 512 factors, Adam with learning
    rate 1e-4, gradient clipping at norm 5, at most 20 epochs and beam size 5.

    Attributes:
        learning_rate (float): Adam step size
        max_epochs (int): Upper bound on training epochs
        clip_norm (float): Global gradient-norm threshold
        dropout (float): Drop probability on word embeddings and decoder outputs
        patience (int | None): Epochs without validation improvement before stopping; None disables
        alpha (float): L2 weight on encoder and detector weight matrices
        seed (int): Seed for initialization, shuffling, reference sampling and dropout
        beam_size (int): Beam width used when decoding
        init_range (float): Half-width of the uniform initialization
        hidden_size (int): Decoder hidden units n_h
        factors (int): Number of factors n_f
        embedding_size (int): Word embedding dimension n_x
        encoder_size (int): Hidden units n_enc of every stream encoder layer
        detector_size (int | None): Hidden width of the detector MLP; None means encoder_size
        attribute_count (int): Number of semantic attributes K
        max_caption_len (int): Caption length cap N_s (EOS excluded)
        batch_size (int): Examples per optimizer step
        modalities (List[str]): Encoded feature streams, in canonical order
        semantic_modalities (List[str] | None): Streams whose semantic distributions feed the decoder
        decoder_variant (str): "msan", "uniform", "mean" or "concat"
        length_normalize (bool): Divide beam scores by sequence length
        precision (str): "float64" or "float32"
        stopwords_path (str | None): File with one stopword per line
        embeddings_path (str | None): Plain-text word embedding file
    """
    model_config = ConfigDict(extra="forbid")

    learning_rate: float = 1e-4
    max_epochs: int = 20
    clip_norm: float = 5.0
    dropout: float = 0.5
    patience: Optional[int] = 3
    alpha: float = 1e-4
    seed: int = 0
    beam_size: int = 5
    init_range: float = 0.05
    hidden_size: int = 512
    factors: int = 512
    embedding_size: int = 300
    encoder_size: int = 512
    detector_size: Optional[int] = None
    attribute_count: int = 300
    max_caption_len: int = 16
    batch_size: int = 1
    modalities: List[str] = list(MODALITIES)
    semantic_modalities: Optional[List[str]] = None
    decoder_variant: str = "msan"
    length_normalize: bool = False
    precision: str = "float64"
    stopwords_path: Optional[str] = None
    embeddings_path: Optional[str] = None

    @field_validator("learning_rate", "clip_norm", "init_range")
    @classmethod
    def check_positive_real(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("must be positive")
        return value

    @field_validator("max_epochs", "beam_size", "hidden_size", "factors", "embedding_size",
                     "encoder_size", "attribute_count", "max_caption_len", "batch_size")
    @classmethod
    def check_positive_int(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be at least 1")
        return value

    @field_validator("detector_size")
    @classmethod
    def check_detector_size(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 1:
            raise ValueError("must be at least 1")
        return value

    @field_validator("patience")
    @classmethod
    def check_patience(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 0:
            raise ValueError("must be non-negative")
        return value

    @field_validator("dropout")
    @classmethod
    def check_dropout(cls, value: float) -> float:
        if not 0.0 <= value < 1.0:
            raise ValueError("must lie in [0, 1)")
        return value

    @field_validator("alpha")
    @classmethod
    def check_alpha(cls, value: float) -> float:
        if value < 0:
            raise ValueError("must be non-negative")
        return value

    @field_validator("decoder_variant")
    @classmethod
    def check_variant(cls, value: str) -> str:
        if value not in DECODER_VARIANTS:
            raise ValueError(f"must be one of {DECODER_VARIANTS}")
        return value

    @field_validator("precision")
    @classmethod
    def check_precision(cls, value: str) -> str:
        if value not in PRECISIONS:
            raise ValueError(f"must be one of {PRECISIONS}")
        return value

    @field_validator("modalities", "semantic_modalities")
    @classmethod
    def canonical_modalities(cls, value: Optional[List[str]]) -> Optional[List[str]]:
        if value is None:
            return value
        unknown = set(value) - set(MODALITIES)
        if unknown or not value:
            raise ValueError(f"must be a non-empty subset of {MODALITIES}")
        return [m for m in MODALITIES if m in value]

    @model_validator(mode="after")
    def check_semantic_subset(self) -> "TrainConfig":
        if self.semantic_modalities is not None and not set(self.semantic_modalities) <= set(self.modalities):
            raise ValueError("semantic_modalities must be a subset of modalities")
        return self

    @property
    def semantic_streams(self) -> List[str]:
        return list(self.semantic_modalities or self.modalities)

    @property
    def detector_hidden(self) -> int:
        return self.detector_size or self.encoder_size

    @classmethod
    def create(cls, **values) -> "TrainConfig":
        """
        Builds a config, turning pydantic validation failures into ConfigError.
        """
        try:
            return cls(**values)
        except ValidationError as e:
            raise ConfigError(f"Invalid configuration: {e}") from e

    @classmethod
    def preset_values(cls, name: Optional[str]) -> Dict:
        if name in (None, "full"):
            return {}
        if name == "synthetic":
            return dict(SYNTHETIC_PRESET)
        raise ConfigError(f"Unknown preset '{name}'. Expected 'full' or 'synthetic'")

    @classmethod
    def preset(cls, name: str, **overrides) -> "TrainConfig":
        return cls.create(**(cls.preset_values(name) | overrides))

    @classmethod
    def from_file(cls, path_to_config: Optional[str], preset: Optional[str] = None, **overrides) -> "TrainConfig":
        """
        Loads a flat JSON object whose keys mirror the config fields.

        Precedence, lowest first: field defaults, preset, file, overrides.

        Args:
            path_to_config (str | None): JSON file, or None for defaults
            preset (str, optional): "full" or "synthetic"
            **overrides: Values taking precedence over the file (None values are ignored)

        Raises:
            ConfigError: If the file cannot be read or holds invalid values
        """
        data: Dict = {}
        if path_to_config:
            try:
                with open(path_to_config, encoding="utf-8", mode="r") as f:
                    data = json.load(f)
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"Cannot read config '{path_to_config}': {e}") from e
            if not isinstance(data, dict):
                raise ConfigError(f"Config '{path_to_config}' must hold a flat JSON object")
        data = cls.preset_values(preset) | data
        data.update({key: value for key, value in overrides.items() if value is not None})
        return cls.create(**data)
