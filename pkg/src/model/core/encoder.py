"""
Stream encoders, the semantic attribute detector and the detector loss.
"""
from dataclasses import dataclass
from typing import Dict, List, Mapping, NamedTuple, Sequence, Tuple

import numpy as np

from src.model.core.autograd import (
    Tensor,
    affine,
    clamp,
    concat,
    log,
    sigmoid,
    sum_squares,
    tanh,
)
from src.model.core.corpus import MODALITIES, VideoRecord
from src.model.utils.errors import DimensionError, UsageError

PROB_FLOOR = 1e-12


class LSTMParams(NamedTuple):
    """
    One LSTM layer with gates stacked in the order input, forget, output, cell.

    Attributes:
        W (Tensor): [4n x d] input weights
        U (Tensor): [4n x n] recurrent weights
        b (Tensor): [4n] biases
    """
    W: Tensor
    U: Tensor
    b: Tensor

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]


class DetectorParams(NamedTuple):
    """MLP f: R^n_enc -> R^K with one tanh hidden layer."""
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor


@dataclass
class VideoEncoding:
    """
    Attributes:
        streams (Dict[str, Tensor]): Per-modality summary vectors v_m
        v (Tensor): Concatenation of the summaries in canonical modality order
    """
    streams: Dict[str, Tensor]
    v: Tensor


def lstm_step(params: LSTMParams, x: Tensor, h: Tensor, c: Tensor) -> Tuple[Tensor, Tensor]:
    """
    One LSTM update.

    Returns:
        Tuple[Tensor, Tensor]: (h', c') with c' = i*c~ + f*c and h' = o*tanh(c')
    """
    n = params.hidden_size
    if params.W.shape[1] != x.shape[0] or h.shape != (n,) or c.shape != (n,):
        raise DimensionError(
            f"lstm_step: input {x.shape}, state {h.shape}/{c.shape} do not fit W {params.W.shape}"
        )
    gates = affine(params.W, x, params.b) + params.U @ h
    i = sigmoid(gates[0:n])
    f = sigmoid(gates[n:2 * n])
    o = sigmoid(gates[2 * n:3 * n])
    candidate = tanh(gates[3 * n:4 * n])
    c_next = i * candidate + f * c
    h_next = o * tanh(c_next)
    return h_next, c_next


def encode_stream(features: np.ndarray, layers: Sequence[LSTMParams]) -> Tensor:
    """
    Runs stacked LSTM layers over a feature sequence.

    Args:
        features (np.ndarray): [T x d] feature sequence
        layers (Sequence[LSTMParams]): Bottom-to-top layers

    Returns:
        Tensor: Final hidden state of the top layer

    Raises:
        UsageError: If the sequence is empty
    """
    if len(features) == 0:
        raise UsageError("encode_stream needs a non-empty feature sequence")
    states = [(Tensor(np.zeros(layer.hidden_size)), Tensor(np.zeros(layer.hidden_size))) for layer in layers]
    for frame in features:
        x = Tensor(frame)
        for depth, layer in enumerate(layers):
            h, c = lstm_step(layer, x, *states[depth])
            states[depth] = (h, c)
            x = h
    return states[-1][0]


def encode_video(record: VideoRecord,
                 encoders: Mapping[str, Sequence[LSTMParams]],
                 modalities: Sequence[str]) -> VideoEncoding:
    """
    Encodes every configured stream and concatenates the summaries.

    The concatenation order comes from the canonical modality order, never from the record.

    Raises:
        UsageError: If the record lacks a configured modality
    """
    ordered = [m for m in MODALITIES if m in modalities]
    missing = [m for m in ordered if m not in record.streams]
    if missing:
        raise UsageError(f"Video '{record.id}' lacks configured modalities {missing}")
    streams = {m: encode_stream(record.streams[m], encoders[m]) for m in ordered}
    v = streams[ordered[0]] if len(ordered) == 1 else concat([streams[m] for m in ordered])
    return VideoEncoding(streams=streams, v=v)


def detect_semantics(v_m: Tensor, detector: DetectorParams) -> Tensor:
    """s = sigmoid(W2 tanh(W1 v + b1) + b2)"""
    hidden = tanh(affine(detector.W1, v_m, detector.b1))
    return sigmoid(affine(detector.W2, hidden, detector.b2))


def binary_cross_entropy(s: Tensor, y: np.ndarray) -> Tensor:
    """-sum_k [y log s + (1 - y) log(1 - s)] with s clamped to [1e-12, 1 - 1e-12]."""
    if s.shape != y.shape:
        raise DimensionError(f"BCE: predictions {s.shape} and labels {y.shape} differ")
    s = clamp(s, PROB_FLOOR, 1.0 - PROB_FLOOR)
    likelihood = Tensor(y) * log(s) + Tensor(1.0 - y) * log(1.0 - s)
    return -likelihood.sum()


def l2_penalty(weights: Sequence[Tensor]) -> Tensor:
    total = sum_squares(weights[0])
    for weight in weights[1:]:
        total = total + sum_squares(weight)
    return total


def detector_loss(semantics: Sequence[Tensor],
                  labels: np.ndarray,
                  alpha: float,
                  weights: Sequence[Tensor] = ()) -> Tensor:
    """
    Multi-label classification loss of one video.

    Args:
        semantics (Sequence[Tensor]): One semantic distribution per modality
        labels (np.ndarray): Binary attribute labels y
        alpha (float): L2 weight
        weights (Sequence[Tensor]): Encoder and detector weight matrices under the penalty

    Returns:
        Tensor: Mean over modalities of the BCE, plus alpha * ||W||^2
    """
    if not semantics:
        raise UsageError("detector_loss needs at least one semantic distribution")
    bce = binary_cross_entropy(semantics[0], labels)
    for s in semantics[1:]:
        bce = bce + binary_cross_entropy(s, labels)
    loss = bce / len(semantics)
    if alpha > 0 and weights:
        loss = loss + alpha * l2_penalty(list(weights))
    return loss


def detector_f1(predictions: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> List[float]:
    """
    Per-attribute F1 of thresholded predictions.

    Args:
        predictions (np.ndarray): [N x K] semantic distributions
        labels (np.ndarray): [N x K] binary labels
        threshold (float): Decision threshold

    Returns:
        List[float]: F1 per attribute; 1.0 when an attribute is neither predicted nor present
    """
    predicted = predictions >= threshold
    actual = labels >= 0.5
    scores = []
    for k in range(labels.shape[1]):
        tp = float(np.sum(predicted[:, k] & actual[:, k]))
        fp = float(np.sum(predicted[:, k] & ~actual[:, k]))
        fn = float(np.sum(~predicted[:, k] & actual[:, k]))
        scores.append(1.0 if tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn))
    return scores
