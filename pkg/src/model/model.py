import os
import logging
from dataclasses import asdict
from statistics import median
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.config import TrainConfig
from src.interfaces.model import IModel
from src.interfaces.storage import IStorage
from src.model.core.autograd import precision
from src.model.core.corpus import DEFAULT_STOPWORDS, Corpus, generate_synthetic_corpus, split_corpus
from src.model.core.metrics import EvaluationReport, evaluate
from src.model.core.network import Checkpoint, MSANNetwork
from src.model.core.selfcheck import run_selfcheck
from src.model.core.storage import load_embeddings, load_stopwords, write_jsonl
from src.model.core.training import train
from src.model.utils.errors import SchemaError, UsageError
from src.model.utils.utils import RunManifest, write_json, write_manifest

DEFAULT_STREAM_DIM = 16
REPORT_FILES = {"json": "report.json", "table": "report.txt", "csv": "per_video.csv"}


class Model(IModel):
    """
    A model class that runs the captioning pipeline end to end.

    This class provides functionality to:
    - Generate synthetic datasets split into train/val/test files
    - Train the network and save a self-contained checkpoint with its epoch log
    - Caption videos and re-use checkpoints for evaluation
    - Run self-check suites and ablation experiments

    Every run writes a manifest next to its outputs.

    Attributes:
        storage (IStorage): Dataset and checkpoint persistence
    """

    def __init__(self, storage: IStorage):
        self.storage = storage

    def __load_split(self, data_dir: str, split: str, required: bool = True) -> Corpus:
        path = self.storage.split_path(data_dir, split)
        if not required and not os.path.isfile(path):
            return Corpus()
        return self.storage.load_corpus(path)

    def __resolve_data(self, data_path: str) -> str:
        """A dataset directory resolves to its test split."""
        if os.path.isdir(data_path):
            return self.storage.split_path(data_path, "test")
        return data_path

    @staticmethod
    def __check_streams(checkpoint: Checkpoint, corpus: Corpus):
        for m in checkpoint.config.modalities:
            if corpus.stream_dims.get(m) != checkpoint.stream_dims[m]:
                raise SchemaError(
                    f"Checkpoint expects modality '{m}' with dimension {checkpoint.stream_dims[m]}, "
                    f"data has {corpus.stream_dims.get(m)}"
                )

    @staticmethod
    def __stopwords(config: TrainConfig):
        return load_stopwords(config.stopwords_path) if config.stopwords_path else DEFAULT_STOPWORDS

    @staticmethod
    def __embeddings(config: TrainConfig):
        if not config.embeddings_path:
            return None
        return lambda vocab: load_embeddings(config.embeddings_path, vocab, config.embedding_size)

    def generate_synthetic(self,
                           out_dir: str,
                           n_videos: int,
                           k_latent: int,
                           seed: int,
                           modalities: Sequence[str],
                           dim: int = DEFAULT_STREAM_DIM,
                           captions_per_video: int = 1,
                           noise: float = 0.1,
                           n_frames: int = 4) -> Dict:
        """
        Generates a synthetic corpus and writes train/val/test JSON Lines files (60/20/20).

        Returns:
            Dict: Paths and video counts per split
        """
        corpus = generate_synthetic_corpus(
            n_videos, k_latent, {m: dim for m in modalities}, seed,
            noise=noise, n_frames=n_frames, captions_per_video=captions_per_video,
        )
        result = {}
        for split, part in zip(("train", "val", "test"), split_corpus(corpus)):
            path = self.storage.split_path(out_dir, split)
            self.storage.save_corpus(part, path)
            result[split] = {"path": path, "videos": len(part)}
        write_manifest(RunManifest(
            command="gen-synth",
            outputs={split: info["path"] for split, info in result.items()},
            seed=seed,
            config={"videos": n_videos, "attrs": k_latent, "modalities": list(modalities), "dim": dim,
                    "captions": captions_per_video, "noise": noise, "frames": n_frames},
        ), out_dir)
        return result

    def train(self, data_dir: str, config: TrainConfig, out_path: str) -> Dict:
        """
        Trains on <data_dir>/train.jsonl with early stopping on <data_dir>/val.jsonl.

        Returns:
            Dict: Checkpoint path, epoch log path, best epoch and its validation loss
        """
        train_corpus = self.__load_split(data_dir, "train")
        validation_corpus = self.__load_split(data_dir, "val", required=False)
        history: List[Dict] = []
        checkpoint = train(
            train_corpus, validation_corpus, config,
            stopwords=self.__stopwords(config),
            embeddings=self.__embeddings(config),
            on_epoch=history.append,
        )
        self.storage.save_checkpoint(checkpoint, out_path)
        log_path = os.path.splitext(out_path)[0] + ".train.jsonl"
        write_jsonl(history, log_path)
        write_manifest(RunManifest(
            command="train",
            config=config.model_dump(),
            inputs={"data": data_dir},
            outputs={"checkpoint": out_path, "log": log_path},
            checkpoint=out_path,
            seed=config.seed,
        ), out_path)
        return {"checkpoint": out_path, "log": log_path, "epoch": checkpoint.epoch, "val_loss": checkpoint.val_score}

    def caption(self, checkpoint_path: str, data_path: str, beam: int, out_path: Optional[str] = None) -> List[Dict]:
        """
        Beam-searches one caption per video.

        Returns:
            List[Dict]: {"id", "caption", "logprob"} per video, in file order
        """
        checkpoint = self.storage.load_checkpoint(checkpoint_path)
        data_path = self.__resolve_data(data_path)
        corpus = self.storage.load_corpus(data_path)
        self.__check_streams(checkpoint, corpus)
        rows = []
        with precision(checkpoint.config.precision):
            network = MSANNetwork.from_checkpoint(checkpoint)
            for record in corpus:
                ids, logprob = network.caption(record, beam)
                rows.append({
                    "id": record.id,
                    "caption": " ".join(checkpoint.vocab.decode(ids)),
                    "logprob": logprob,
                })
        if out_path:
            write_jsonl(rows, out_path)
            write_manifest(RunManifest(
                command="caption",
                config=checkpoint.config.model_dump(),
                inputs={"data": data_path},
                outputs={"captions": out_path},
                checkpoint=checkpoint_path,
                seed=checkpoint.config.seed,
            ), out_path)
        return rows

    def evaluate(self, checkpoint_path: str, data_path: str, beam: Optional[int], out_dir: str) -> Dict:
        """
        Captions and scores a split, then writes the report as JSON, a text table and a per-video CSV.

        Returns:
            Dict: {"report": EvaluationReport, "files": paths by format}
        """
        checkpoint = self.storage.load_checkpoint(checkpoint_path)
        data_path = self.__resolve_data(data_path)
        corpus = self.storage.load_corpus(data_path)
        self.__check_streams(checkpoint, corpus)
        report = evaluate(checkpoint, corpus, beam or checkpoint.config.beam_size)

        os.makedirs(out_dir, exist_ok=True)
        files = {kind: os.path.join(out_dir, name) for kind, name in REPORT_FILES.items()}
        contents = {"json": report.to_json(), "table": report.to_table(), "csv": report.to_csv()}
        for kind, path in files.items():
            with open(path, encoding="utf-8", mode="w") as f:
                f.write(contents[kind])
        write_manifest(RunManifest(
            command="evaluate",
            config=checkpoint.config.model_dump(),
            inputs={"data": data_path},
            outputs=files,
            checkpoint=checkpoint_path,
            seed=checkpoint.config.seed,
        ), out_dir)
        return {"report": report, "files": files}

    def selfcheck(self, suites: Optional[Sequence[str]] = None) -> Dict:
        results = run_selfcheck(suites)
        return {"passed": all(r.passed for r in results), "results": [asdict(r) for r in results]}

    def ablate(self, data_dir: str, config: TrainConfig, out_dir: str, seeds: int, variants: Sequence[Dict]) -> Dict:
        """
        Trains and evaluates every variant over several seeds on one dataset.

        Args:
            data_dir (str): Dataset directory with train/val/test files
            config (TrainConfig): Base configuration; variants override decoder_variant,
                semantic_modalities and seed
            out_dir (str): Directory for ablation.json and ablation.txt
            seeds (int): Number of seeds, starting at config.seed
            variants (Sequence[Dict]): Parsed variants (see parse_variant)

        Returns:
            Dict: Per-variant runs and medians of test BLEU@4 and CIDEr-D
        """
        if seeds < 1:
            raise UsageError(f"--seeds must be at least 1, got {seeds}")
        train_corpus = self.__load_split(data_dir, "train")
        validation_corpus = self.__load_split(data_dir, "val", required=False)
        test_corpus = self.__load_split(data_dir, "test")
        stopwords = self.__stopwords(config)

        summary = {}
        for variant in variants:
            runs = []
            for offset in range(seeds):
                run_config = TrainConfig.create(**(config.model_dump() | {
                    "decoder_variant": variant["decoder_variant"],
                    "semantic_modalities": variant["semantic_modalities"],
                    "seed": config.seed + offset,
                }))
                logging.info(f"Ablation run '{variant['label']}' seed {run_config.seed}")
                checkpoint = train(train_corpus, validation_corpus, run_config, stopwords=stopwords)
                report: EvaluationReport = evaluate(checkpoint, test_corpus, run_config.beam_size)
                runs.append({
                    "seed": run_config.seed,
                    "bleu4": report.bleu[4],
                    "cider_d": report.cider_d,
                    "detector_f1": float(np.mean(list(report.detector_f1.values()))),
                })
            summary[variant["label"]] = {
                "decoder_variant": variant["decoder_variant"],
                "semantic_modalities": variant["semantic_modalities"] or config.semantic_streams,
                "runs": runs,
                "median_bleu4": median(r["bleu4"] for r in runs),
                "median_cider_d": median(r["cider_d"] for r in runs),
            }

        os.makedirs(out_dir, exist_ok=True)
        json_path = os.path.join(out_dir, "ablation.json")
        table_path = os.path.join(out_dir, "ablation.txt")
        write_json(summary, json_path)
        with open(table_path, encoding="utf-8", mode="w") as f:
            f.write(ablation_table(summary))
        write_manifest(RunManifest(
            command="ablate",
            config=config.model_dump(),
            inputs={"data": data_dir},
            outputs={"json": json_path, "table": table_path},
            seed=config.seed,
        ), out_dir)
        return summary


def ablation_table(summary: Dict) -> str:
    width = max([len("variant")] + [len(label) for label in summary])
    lines = [f"{'variant'.ljust(width)}  {'BLEU@4':>8}  {'CIDEr-D':>8}"]
    for label, entry in summary.items():
        lines.append(f"{label.ljust(width)}  {entry['median_bleu4']:>8.4f}  {entry['median_cider_d']:>8.4f}")
    return "\n".join(lines) + "\n"
