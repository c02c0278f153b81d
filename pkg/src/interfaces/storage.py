from abc import ABC, abstractmethod

from src.model.core.corpus import Corpus
from src.model.core.network import Checkpoint


class IStorage(ABC):
    """Interface for dataset and checkpoint persistence.

    Methods:
        load_corpus: Reads a JSON Lines dataset file
        save_corpus: Writes a corpus as JSON Lines
        save_checkpoint: Writes a self-contained checkpoint file
        load_checkpoint: Reads a checkpoint file back
    """

    @abstractmethod
    def load_corpus(self, path: str) -> Corpus:
        raise NotImplementedError("Subclass must implement load_corpus method")

    @abstractmethod
    def save_corpus(self, corpus: Corpus, path: str):
        raise NotImplementedError("Subclass must implement save_corpus method")

    @abstractmethod
    def save_checkpoint(self, checkpoint: Checkpoint, path: str):
        raise NotImplementedError("Subclass must implement save_checkpoint method")

    @abstractmethod
    def load_checkpoint(self, path: str) -> Checkpoint:
        raise NotImplementedError("Subclasses must implement load_checkpoint method")
