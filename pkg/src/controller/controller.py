import os
import logging
from typing import Dict, List, Optional, Sequence

from src.config import TrainConfig
from src.interfaces.model import IModel
from src.model.core.selfcheck import SUITES
from src.model.utils.errors import UsageError
from src.model.utils.utils import parse_modalities, parse_variant

logger = logging.getLogger()

DEFAULT_ABLATION_VARIANTS = ("uniform", "msan:f", "msan:f,c,o")


class Controller:
    """
    Controller class that validates command arguments and delegates to the model.

    This class provides methods for:
    - Generating synthetic datasets
    - Resolving training configuration from a file, a preset and flag overrides
    - Training, captioning and evaluating
    - Running self-checks and ablation experiments

    The controller acts as an intermediary between the command-line interface and the model,
    rejecting bad input with a UsageError before any work starts.

    Attributes:
        model (IModel): The model instance that implements the pipeline
    """

    def __init__(self, model: IModel):
        self.model = model

    def __check_dir(self, path: str, what: str):
        if not path or not os.path.isdir(path):
            raise UsageError(f"{what} '{path}' does not exist or is not a directory")

    def __check_file(self, path: str, what: str):
        if not path or not os.path.isfile(path):
            raise UsageError(f"{what} '{path}' does not exist")

    def __check_positive(self, value: int, flag: str):
        if value is None or value < 1:
            raise UsageError(f"{flag} must be at least 1, got {value}")

    def resolve_config(self,
                       config_path: Optional[str] = None,
                       preset: Optional[str] = None,
                       modalities: Optional[str] = None,
                       semantic_modalities: Optional[str] = None,
                       **overrides) -> TrainConfig:
        """
        Builds the training configuration; flags win over the file, the file over the preset.

        Args:
            config_path (str, optional): Flat JSON config file
            preset (str, optional): "full" or "synthetic"
            modalities (str, optional): Comma-separated encoded modalities, e.g. "f,c,o"
            semantic_modalities (str, optional): Comma-separated modalities feeding the decoder
            **overrides: Other TrainConfig fields; None values are ignored

        Returns:
            TrainConfig: The validated configuration
        """
        if config_path:
            self.__check_file(config_path, "Config file")
        values = {key: value for key, value in overrides.items() if value is not None}
        if modalities:
            values["modalities"] = parse_modalities(modalities)
        if semantic_modalities:
            values["semantic_modalities"] = parse_modalities(semantic_modalities)
        return TrainConfig.from_file(config_path, preset=preset, **values)

    def generate_synthetic(self, out_dir: str, videos: int, attrs: int, seed: int, modalities: str,
                           dim: int, captions: int, noise: float, frames: int) -> Dict:
        if videos is None or videos < 0:
            raise UsageError(f"--videos must be non-negative, got {videos}")
        if captions not in (1, 2):
            raise UsageError(f"--captions must be 1 or 2, got {captions}")
        if noise < 0:
            raise UsageError(f"--noise must be non-negative, got {noise}")
        self.__check_positive(dim, "--dim")
        self.__check_positive(frames, "--frames")
        return self.model.generate_synthetic(
            out_dir, videos, attrs, seed, parse_modalities(modalities),
            dim=dim, captions_per_video=captions, noise=noise, n_frames=frames,
        )

    def train(self, data_dir: str, config: TrainConfig, out_path: str) -> Dict:
        self.__check_dir(data_dir, "Data directory")
        return self.model.train(data_dir, config, out_path)

    def caption(self, checkpoint_path: str, data_path: str, beam: int, out_path: Optional[str] = None) -> List[Dict]:
        self.__check_file(checkpoint_path, "Checkpoint")
        if not os.path.exists(data_path or ""):
            raise UsageError(f"Data '{data_path}' does not exist")
        self.__check_positive(beam, "--beam")
        return self.model.caption(checkpoint_path, data_path, beam, out_path)

    def evaluate(self, checkpoint_path: str, data_path: str, beam: Optional[int], out_dir: Optional[str]) -> Dict:
        self.__check_file(checkpoint_path, "Checkpoint")
        if not os.path.exists(data_path or ""):
            raise UsageError(f"Data '{data_path}' does not exist")
        if beam is not None:
            self.__check_positive(beam, "--beam")
        out_dir = out_dir or os.path.join(os.path.dirname(os.path.abspath(checkpoint_path)), "evaluation")
        return self.model.evaluate(checkpoint_path, data_path, beam, out_dir)

    def selfcheck(self, suites: Optional[Sequence[str]] = None) -> Dict:
        unknown = [s for s in suites or [] if s not in SUITES]
        if unknown:
            raise UsageError(f"Unknown self-check suites {unknown}. Available: {sorted(SUITES)}")
        return self.model.selfcheck(suites)

    def ablate(self, data_dir: str, config: TrainConfig, out_dir: str, seeds: int,
               variants: Optional[Sequence[str]] = None) -> Dict:
        self.__check_dir(data_dir, "Data directory")
        self.__check_positive(seeds, "--seeds")
        parsed = [parse_variant(v) for v in variants or DEFAULT_ABLATION_VARIANTS]
        for variant in parsed:
            extra = set(variant["semantic_modalities"] or []) - set(config.modalities)
            if extra:
                raise UsageError(f"Variant '{variant['label']}' uses modalities {sorted(extra)} that are not encoded")
        return self.model.ablate(data_dir, config, out_dir, seeds, parsed)
