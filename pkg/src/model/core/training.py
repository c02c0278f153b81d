"""
Joint optimization of the detector and caption losses.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Mapping, Optional

import numpy as np

from src.config import TrainConfig
from src.model.core.autograd import ParameterRegistry, gradient, no_grad, precision
from src.model.core.corpus import (
    DEFAULT_STOPWORDS,
    AttributeVocabulary,
    Corpus,
    Vocabulary,
    attribute_labels,
    build_attribute_vocab,
)
from src.model.core.network import Checkpoint, MSANNetwork, parameter_layout
from src.model.utils.errors import NumericError, TrainingError, UsageError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator; distinct streams of one seed never overlap."""
    bit_generator = np.random.Philox(seed)
    for _ in range(stream):
        bit_generator = bit_generator.jumped()
    return np.random.Generator(bit_generator)


def init_params(config: TrainConfig,
                stream_dims: Mapping[str, int],
                vocab_size: int,
                embeddings: Optional[Mapping[int, np.ndarray]] = None) -> ParameterRegistry:
    """
    Draws every weight from U(-r, r) with a seeded Philox generator; biases start at zero.

    Args:
        config (TrainConfig): Sizes, seed and init_range r
        stream_dims (Mapping[str, int]): Feature dimension per modality
        vocab_size (int): Number of word ids
        embeddings (Mapping[int, np.ndarray], optional): Pretrained vectors by token id,
            written over the drawn embedding columns

    Returns:
        ParameterRegistry: Freshly initialized parameters
    """
    rng = make_rng(config.seed)
    r = config.init_range
    registry = ParameterRegistry()
    for name, (shape, kind) in parameter_layout(config, stream_dims, vocab_size).items():
        data = np.zeros(shape) if kind == "bias" else rng.uniform(-r, r, size=shape)
        if kind == "embedding" and embeddings:
            for token_id, vector in embeddings.items():
                data[:, token_id] = vector
        registry.add(name, data, kind)
    logging.info(f"Initialized {len(registry)} parameter tensors ({registry.num_parameters()} values)")
    return registry


def clip_gradients(grads: Dict[str, np.ndarray], threshold: float) -> Dict[str, np.ndarray]:
    """Scales every gradient by threshold/norm when the global L2 norm exceeds threshold."""
    if threshold <= 0:
        raise UsageError(f"Clip threshold must be positive, got {threshold}")
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm <= threshold:
        return grads
    scale = threshold / norm
    return {name: g * scale for name, g in grads.items()}


@dataclass
class AdamState:
    """First and second moment estimates plus the step counter."""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: ParameterRegistry, grads: Mapping[str, np.ndarray], state: AdamState, lr: float):
    """One bias-corrected Adam update, in place."""
    state.t += 1
    correction1 = 1.0 - ADAM_BETA1 ** state.t
    correction2 = 1.0 - ADAM_BETA2 ** state.t
    for name, param in params.items():
        g = grads[name]
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
        state.m[name], state.v[name] = m, v
        param.data = param.data - lr * (m / correction1) / (np.sqrt(v / correction2) + ADAM_EPSILON)


def validation_loss(network: MSANNetwork,
                    corpus: Corpus,
                    vocab: Vocabulary,
                    attributes: AttributeVocabulary) -> float:
    """Mean joint loss over videos, each video averaged over all its references, without dropout."""
    total = 0.0
    with no_grad():
        for record in corpus:
            labels = attribute_labels(record, attributes)
            per_video = 0.0
            for caption in record.captions:
                loss1, loss2 = network.joint_loss(record, labels, vocab.encode(caption))
                per_video += loss1.item() + loss2.item()
            total += per_video / len(record.captions)
    return total / len(corpus)


def train(train_corpus: Corpus,
          validation_corpus: Corpus,
          config: TrainConfig,
          stopwords: Iterable[str] = DEFAULT_STOPWORDS,
          embeddings: Optional[Callable[[Vocabulary], Mapping[int, np.ndarray]]] = None,
          on_epoch: Optional[Callable[[Dict], None]] = None) -> Checkpoint:
    """
    Trains encoder, detectors and decoder on loss1 + loss2.

    Each visit of a training video samples one of its references. After every epoch the
    validation joint loss decides early stopping, and the best-scoring parameters are kept.

    Args:
        train_corpus (Corpus): Training split
        validation_corpus (Corpus): Validation split; when empty the training split is used
        config (TrainConfig): Training settings
        stopwords (Iterable[str]): Words excluded from the attribute vocabulary
        embeddings (Callable, optional): Maps the word vocabulary to pretrained vectors by token id
        on_epoch (Callable[[Dict], None], optional): Receives the per-epoch log record

    Returns:
        Checkpoint: Parameters of the best validation epoch

    Raises:
        UsageError: If the training split is empty
        TrainingError: If a loss becomes non-finite
    """
    if len(train_corpus) == 0:
        raise UsageError("Training split is empty")
    validation_corpus = validation_corpus if len(validation_corpus) else train_corpus

    with precision(config.precision):
        vocab = Vocabulary.build(train_corpus.captions())
        attributes = build_attribute_vocab(
            train_corpus.captions() + validation_corpus.captions(), config.attribute_count, stopwords,
        )
        stream_dims = {m: train_corpus.stream_dims[m] for m in config.modalities if m in train_corpus.stream_dims}
        registry = init_params(config, stream_dims, len(vocab), embeddings(vocab) if embeddings else None)
        network = MSANNetwork(registry, config)
        logging.info(
            f"Training on {len(train_corpus)} videos ({len(validation_corpus)} validation), "
            f"vocabulary {len(vocab)}, attributes {len(attributes)}, variant '{config.decoder_variant}'"
        )

        rng = make_rng(config.seed, stream=1)
        labels = {record.id: attribute_labels(record, attributes) for record in train_corpus}
        references = {record.id: [vocab.encode(c) for c in record.captions] for record in train_corpus}
        adam = AdamState()
        best_params, best_epoch, best_val = registry.snapshot(), 0, float("inf")
        stale_epochs = 0

        for epoch in range(1, config.max_epochs + 1):
            started = time.perf_counter()
            order = rng.permutation(len(train_corpus))
            sum1 = sum2 = 0.0
            for start in range(0, len(order), config.batch_size):
                batch = order[start:start + config.batch_size]
                accumulated: Dict[str, np.ndarray] = {}
                for index in batch:
                    record = train_corpus.records[int(index)]
                    caption = references[record.id][int(rng.integers(len(record.captions)))]
                    try:
                        loss1, loss2 = network.joint_loss(record, labels[record.id], caption, config.dropout, rng)
                        grads = gradient(loss1 + loss2, registry)
                    except NumericError as e:
                        raise TrainingError(f"Non-finite loss on video '{record.id}' in epoch {epoch}: {e}") from e
                    sum1 += loss1.item()
                    sum2 += loss2.item()
                    for name, g in grads.items():
                        accumulated[name] = accumulated[name] + g if name in accumulated else g
                if len(batch) > 1:
                    accumulated = {name: g / len(batch) for name, g in accumulated.items()}
                adam_step(registry, clip_gradients(accumulated, config.clip_norm), adam, config.learning_rate)

            try:
                val_loss = validation_loss(network, validation_corpus, vocab, attributes)
            except NumericError as e:
                raise TrainingError(f"Non-finite validation loss in epoch {epoch}: {e}") from e
            entry = {
                "epoch": epoch,
                "train_loss1": sum1 / len(train_corpus),
                "train_loss2": sum2 / len(train_corpus),
                "val_loss": val_loss,
                "lr": config.learning_rate,
                "seconds": round(time.perf_counter() - started, 3),
            }
            logging.info(f"Epoch {epoch}: loss1 {entry['train_loss1']:.4f}, loss2 {entry['train_loss2']:.4f}, "
                         f"val {val_loss:.4f}")
            if on_epoch:
                on_epoch(entry)

            if val_loss < best_val:
                best_params, best_epoch, best_val = registry.snapshot(), epoch, val_loss
                stale_epochs = 0
            else:
                stale_epochs += 1
                if config.patience is not None and stale_epochs > config.patience:
                    logging.info(f"Early stopping after epoch {epoch}; best epoch {best_epoch}")
                    break

    return Checkpoint(
        params=best_params,
        vocab=vocab,
        attributes=attributes,
        config=config,
        stream_dims=stream_dims,
        epoch=best_epoch,
        val_score=best_val,
    )
