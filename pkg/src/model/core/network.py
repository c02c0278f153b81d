"""
Wires the parameter registry into encoder, detector and decoder views and computes the joint loss.
"""
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.config import TrainConfig
from src.model.core.autograd import ParameterRegistry, Tensor, no_grad
from src.model.core.corpus import AttributeVocabulary, Vocabulary, VideoRecord
from src.model.core.decoder import (
    GATES,
    AttentionParams,
    DecoderParams,
    GateFactor,
    SemanticDecoder,
    beam_search,
    caption_loss,
    greedy_decode,
    sequence_logprob,
)
from src.model.core.encoder import (
    DetectorParams,
    LSTMParams,
    VideoEncoding,
    detect_semantics,
    detector_loss,
    encode_video,
)
from src.model.utils.errors import SchemaError

CHECKPOINT_VERSION = 1
ENCODER_LAYERS = 2


@dataclass
class Checkpoint:
    """
    Everything needed to caption videos without any other artifact.

    Attributes:
        params (Dict[str, np.ndarray]): Parameter arrays by registry name
        vocab (Vocabulary): Word vocabulary
        attributes (AttributeVocabulary): Semantic attribute words
        config (TrainConfig): Settings the parameters were trained with
        stream_dims (Dict[str, int]): Feature dimension per encoded modality
        epoch (int): Epoch the parameters come from
        val_score (float): Validation joint loss at that epoch
    """
    params: Dict[str, np.ndarray]
    vocab: Vocabulary
    attributes: AttributeVocabulary
    config: TrainConfig
    stream_dims: Dict[str, int]
    epoch: int = 0
    val_score: float = float("inf")
    version: int = CHECKPOINT_VERSION


def parameter_layout(config: TrainConfig,
                     stream_dims: Mapping[str, int],
                     vocab_size: int) -> Dict[str, Tuple[Tuple[int, ...], str]]:
    """
    Names, shapes and kinds of every parameter, in registration order.

    Returns:
        Dict[str, Tuple[Tuple[int, ...], str]]: name -> (shape, kind)
    """
    n_enc = config.encoder_size
    n_det = config.detector_hidden
    n_h, n_f, n_x, K = config.hidden_size, config.factors, config.embedding_size, config.attribute_count
    layout: Dict[str, Tuple[Tuple[int, ...], str]] = {}

    for m in config.modalities:
        if m not in stream_dims:
            raise SchemaError(f"Configured modality '{m}' is absent from the data")
        d_in = stream_dims[m]
        for layer in range(1, ENCODER_LAYERS + 1):
            prefix = f"encoder.{m}.layer{layer}"
            layout[f"{prefix}.W"] = ((4 * n_enc, d_in), "weight")
            layout[f"{prefix}.U"] = ((4 * n_enc, n_enc), "weight")
            layout[f"{prefix}.bias"] = ((4 * n_enc,), "bias")
            d_in = n_enc
        layout[f"detector.{m}.W1"] = ((n_det, n_enc), "weight")
        layout[f"detector.{m}.b1"] = ((n_det,), "bias")
        layout[f"detector.{m}.W2"] = ((K, n_det), "weight")
        layout[f"detector.{m}.b2"] = ((K,), "bias")

    for g in GATES:
        prefix = f"decoder.gate_{g}"
        layout[f"{prefix}.W_a"] = ((n_h, n_f), "weight")
        layout[f"{prefix}.W_b"] = ((n_f, K), "weight")
        layout[f"{prefix}.W_c"] = ((n_f, n_x), "weight")
        layout[f"{prefix}.U_a"] = ((n_h, n_f), "weight")
        layout[f"{prefix}.U_b"] = ((n_f, K), "weight")
        layout[f"{prefix}.U_c"] = ((n_f, n_h), "weight")
        layout[f"{prefix}.bias"] = ((n_h,), "bias")

    m_total = n_enc * len(config.modalities)
    if config.decoder_variant == "concat":
        m_total += K
    layout["decoder.embedding"] = ((n_x, vocab_size), "embedding")
    layout["decoder.C"] = ((n_h, m_total), "weight")
    layout["decoder.W_out"] = ((vocab_size, n_h), "weight")
    layout["decoder.b_out"] = ((vocab_size,), "bias")
    layout["attention.W"] = ((n_h, n_h), "weight")
    layout["attention.U"] = ((n_h, K), "weight")
    layout["attention.v"] = ((n_h,), "weight")
    return layout


class MSANNetwork:
    """
    Parameter views over one registry plus the forward passes built on them.
    """

    def __init__(self, registry: ParameterRegistry, config: TrainConfig):
        self.registry = registry
        self.config = config
        self.encoders: Dict[str, List[LSTMParams]] = {
            m: [
                LSTMParams(
                    W=registry[f"encoder.{m}.layer{layer}.W"],
                    U=registry[f"encoder.{m}.layer{layer}.U"],
                    b=registry[f"encoder.{m}.layer{layer}.bias"],
                )
                for layer in range(1, ENCODER_LAYERS + 1)
            ]
            for m in config.modalities
        }
        self.detectors: Dict[str, DetectorParams] = {
            m: DetectorParams(
                W1=registry[f"detector.{m}.W1"],
                b1=registry[f"detector.{m}.b1"],
                W2=registry[f"detector.{m}.W2"],
                b2=registry[f"detector.{m}.b2"],
            )
            for m in config.modalities
        }
        gates = {
            g: GateFactor(*(registry[f"decoder.gate_{g}.{part}"]
                            for part in ("W_a", "W_b", "W_c", "U_a", "U_b", "U_c", "bias")))
            for g in GATES
        }
        params = DecoderParams(
            gates=gates,
            embedding=registry["decoder.embedding"],
            C=registry["decoder.C"],
            W_out=registry["decoder.W_out"],
            b_out=registry["decoder.b_out"],
            attention=AttentionParams(
                W=registry["attention.W"],
                U=registry["attention.U"],
                v=registry["attention.v"],
            ),
        )
        self.decoder = SemanticDecoder(params, config.decoder_variant)

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], config: TrainConfig,
                    stream_dims: Mapping[str, int], vocab_size: int) -> "MSANNetwork":
        registry = ParameterRegistry()
        for name, (shape, kind) in parameter_layout(config, stream_dims, vocab_size).items():
            registry.add(name, np.zeros(shape), kind)
        registry.load(dict(arrays))
        return cls(registry, config)

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint) -> "MSANNetwork":
        return cls.from_arrays(checkpoint.params, checkpoint.config, checkpoint.stream_dims, len(checkpoint.vocab))

    def penalized_weights(self) -> List[Tensor]:
        """Encoder and detector weight matrices under the L2 penalty."""
        names = self.registry.names("weight", "encoder.") + self.registry.names("weight", "detector.")
        return [self.registry[name] for name in names]

    def encode(self, record: VideoRecord) -> VideoEncoding:
        return encode_video(record, self.encoders, self.config.modalities)

    def semantics(self, encoding: VideoEncoding) -> Dict[str, Tensor]:
        return {m: detect_semantics(encoding.streams[m], self.detectors[m]) for m in encoding.streams}

    def decoder_semantics(self, semantics: Mapping[str, Tensor]) -> List[Tensor]:
        return [semantics[m] for m in self.config.semantic_streams]

    def detector_loss(self, semantics: Mapping[str, Tensor], labels: np.ndarray) -> Tensor:
        return detector_loss(list(semantics.values()), labels, self.config.alpha, self.penalized_weights())

    def joint_loss(self,
                   record: VideoRecord,
                   labels: np.ndarray,
                   caption: Sequence[int],
                   dropout: float = 0.0,
                   rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Tensor]:
        """
        Returns:
            Tuple[Tensor, Tensor]: (detector loss, caption loss); the optimized objective is their sum
        """
        encoding = self.encode(record)
        semantics = self.semantics(encoding)
        loss1 = self.detector_loss(semantics, labels)
        loss2 = caption_loss(
            self.decoder, encoding.v, self.decoder_semantics(semantics),
            list(caption)[: self.config.max_caption_len], dropout, rng,
        )
        return loss1, loss2

    def caption(self, record: VideoRecord, beam: int, max_len: Optional[int] = None) -> Tuple[List[int], float]:
        with no_grad():
            encoding = self.encode(record)
            semantics = self.decoder_semantics(self.semantics(encoding))
            return beam_search(
                self.decoder, encoding.v, semantics, beam,
                max_len or self.config.max_caption_len, self.config.length_normalize,
            )

    def greedy(self, record: VideoRecord, max_len: Optional[int] = None) -> List[int]:
        with no_grad():
            encoding = self.encode(record)
            semantics = self.decoder_semantics(self.semantics(encoding))
            return greedy_decode(self.decoder, encoding.v, semantics, max_len or self.config.max_caption_len)

    def rescore(self, record: VideoRecord, tokens: Sequence[int], max_len: Optional[int] = None) -> float:
        """Log-probability of a decoded caption; unfinished captions (max_len tokens) carry no EOS term."""
        max_len = max_len or self.config.max_caption_len
        with no_grad():
            encoding = self.encode(record)
            semantics = self.decoder_semantics(self.semantics(encoding))
            if not tokens:
                # only EOS was emitted
                return sequence_logprob(self.decoder, encoding.v, semantics, [])
            loss = caption_loss(self.decoder, encoding.v, semantics, list(tokens),
                                terminated=len(tokens) < max_len)
            return -loss.item()

    def predict_semantics(self, record: VideoRecord) -> Dict[str, np.ndarray]:
        with no_grad():
            return {m: s.data.copy() for m, s in self.semantics(self.encode(record)).items()}
