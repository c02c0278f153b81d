from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Sequence

from src.config import TrainConfig


class IModel(ABC):
    """Interface for the captioning pipeline.

    This interface defines the contract for implementations to handle:
    - Generating synthetic datasets
    - Training a captioning model and saving its checkpoint
    - Captioning videos with a checkpoint
    - Evaluating generated captions
    - Running the built-in self-check suites
    - Running ablation experiments
    """

    @abstractmethod
    def generate_synthetic(self, out_dir: str, n_videos: int, k_latent: int, seed: int,
                           modalities: Sequence[str], **options) -> Dict:
        raise NotImplementedError("Subclass must implement generate_synthetic method")

    @abstractmethod
    def train(self, data_dir: str, config: TrainConfig, out_path: str) -> Dict:
        raise NotImplementedError("Subclass must implement train method")

    @abstractmethod
    def caption(self, checkpoint_path: str, data_path: str, beam: int, out_path: Optional[str] = None) -> List[Dict]:
        raise NotImplementedError("Subclasses must implement caption method")

    @abstractmethod
    def evaluate(self, checkpoint_path: str, data_path: str, beam: Optional[int], out_dir: str) -> Dict:
        raise NotImplementedError("Subclasses must implement evaluate method")

    @abstractmethod
    def selfcheck(self, suites: Optional[Sequence[str]] = None) -> Dict:
        raise NotImplementedError("Subclasses must implement selfcheck method")

    @abstractmethod
    def ablate(self, data_dir: str, config: TrainConfig, out_dir: str, seeds: int, variants: Sequence[str]) -> Dict:
        raise NotImplementedError("Subclasses must implement ablate method")
