"""
Attribute-dependent LSTM decoder.

Every gate's input and recurrent weight matrices are ensembles of K member
matrices mixed by the semantic vector S_t. The ensembles are stored factorized,
W(S) = A . diag(B S) . C, and applied without ever materializing W(S):
W(S) x = A ((B S) * (C x)).
"""
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src.model.core.autograd import (
    Tensor,
    affine,
    concat,
    cross_entropy,
    dot,
    no_grad,
    sigmoid,
    softmax,
    stack,
    tanh,
)
from src.model.core.corpus import BOS_ID, EOS_ID, PAD_ID, UNK_ID
from src.model.utils.errors import DimensionError, UsageError

GATES = ("i", "f", "o", "c")
FAULT_HIDDEN_SIGN = "hidden_factor_sign"
_active_faults = set()


@contextmanager
def inject_fault(name: str) -> Iterator[None]:
    """Test hook: corrupts the factorized step so self-checks can be shown to fail."""
    _active_faults.add(name)
    try:
        yield
    finally:
        _active_faults.discard(name)


class GateFactor(NamedTuple):
    """
    Factor triples of one gate.

    Attributes:
        W_a (Tensor): [n_h x n_f]
        W_b (Tensor): [n_f x K]
        W_c (Tensor): [n_f x n_x]
        U_a (Tensor): [n_h x n_f]
        U_b (Tensor): [n_f x K]
        U_c (Tensor): [n_f x n_h]
        b (Tensor): [n_h]
    """
    W_a: Tensor
    W_b: Tensor
    W_c: Tensor
    U_a: Tensor
    U_b: Tensor
    U_c: Tensor
    b: Tensor


class AttentionParams(NamedTuple):
    """
    Attributes:
        W (Tensor): [n_a x n_h] applied to the previous hidden state
        U (Tensor): [n_a x K] applied to each semantic distribution
        v (Tensor): [n_a] scoring vector
    """
    W: Tensor
    U: Tensor
    v: Tensor


class DecoderParams(NamedTuple):
    gates: Dict[str, GateFactor]
    embedding: Tensor
    C: Tensor
    W_out: Tensor
    b_out: Tensor
    attention: AttentionParams


@dataclass(frozen=True)
class DecoderState:
    h: Tensor
    c: Tensor
    t: int = 1


@dataclass(frozen=True)
class BeamHypothesis:
    """
    Attributes:
        tokens (Tuple[int, ...]): Token ids starting with BOS
        logprob (float): Accumulated log-probability
        state (DecoderState): Decoder state after the last token
        finished (bool): EOS has been emitted
    """
    tokens: Tuple[int, ...]
    logprob: float
    state: DecoderState
    finished: bool = False

    @property
    def words(self) -> List[int]:
        return [t for t in self.tokens[1:] if t != EOS_ID]


def attend(h_prev: Tensor, semantics: Sequence[Tensor], attention: AttentionParams) -> Tuple[Tensor, Tensor]:
    """
    Soft attention over the semantic distributions.

    Returns:
        Tuple[Tensor, Tensor]: (S_t, a) with e_i = v . tanh(W h + U s_i), a = softmax(e), S_t = sum_i a_i s_i

    Raises:
        UsageError: If no semantic distribution is given
    """
    if not semantics:
        raise UsageError("attend needs at least one semantic distribution")
    projected_h = attention.W @ h_prev
    scores = [dot(attention.v, tanh(projected_h + attention.U @ s)) for s in semantics]
    weights = softmax(stack(scores))
    mixed = weights[0] * semantics[0]
    for i in range(1, len(semantics)):
        mixed = mixed + weights[i] * semantics[i]
    return mixed, weights


def ensemble_weight(S: Tensor, A: Tensor, B: Tensor, Cf: Tensor) -> Tensor:
    """Returns A . diag(B S) . Cf."""
    if A.shape[1] != B.shape[0] or B.shape[0] != Cf.shape[0] or B.shape[1:] != S.shape:
        raise DimensionError(f"ensemble_weight: A {A.shape}, B {B.shape}, C {Cf.shape}, S {S.shape} do not conform")
    return (A * (B @ S)) @ Cf


def _gate_activations(pre: Dict[str, Tensor], state: DecoderState) -> DecoderState:
    i = sigmoid(pre["i"])
    f = sigmoid(pre["f"])
    o = sigmoid(pre["o"])
    candidate = tanh(pre["c"])
    c_next = i * candidate + f * state.c
    h_next = o * tanh(c_next)
    return DecoderState(h=h_next, c=c_next, t=state.t + 1)


def _check_injection(state: DecoderState, v: Optional[Tensor]):
    if (v is not None) != (state.t == 1):
        raise UsageError(f"The video vector must be supplied at t=1 and only then (t={state.t})")


def semantic_lstm_step(gates: Dict[str, GateFactor],
                       C: Tensor,
                       S_t: Tensor,
                       w_embed: Tensor,
                       state: DecoderState,
                       v: Optional[Tensor] = None) -> DecoderState:
    """
    One step of the factorized attribute-dependent LSTM.

    For each gate: W_a (W_b S * W_c w) + U_a (U_b S * U_c h) + b, plus C v at t=1.

    Raises:
        UsageError: If v is supplied at t>1 or missing at t=1
    """
    _check_injection(state, v)
    z = C @ v if v is not None else None
    pre = {}
    for name in GATES:
        gate = gates[name]
        w_hat = (gate.W_b @ S_t) * (gate.W_c @ w_embed)
        h_hat = (gate.U_b @ S_t) * (gate.U_c @ state.h)
        if FAULT_HIDDEN_SIGN in _active_faults:
            h_hat = -h_hat
        activation = gate.W_a @ w_hat + gate.U_a @ h_hat + gate.b
        pre[name] = activation + z if z is not None else activation
    return _gate_activations(pre, state)


def explicit_lstm_step(gates: Dict[str, GateFactor],
                       C: Tensor,
                       S_t: Tensor,
                       w_embed: Tensor,
                       state: DecoderState,
                       v: Optional[Tensor] = None) -> DecoderState:
    """
    Same update as semantic_lstm_step, but through the materialized matrices W(S_t) and U(S_t).
    """
    _check_injection(state, v)
    z = C @ v if v is not None else None
    pre = {}
    for name in GATES:
        gate = gates[name]
        W = ensemble_weight(S_t, gate.W_a, gate.W_b, gate.W_c)
        U = ensemble_weight(S_t, gate.U_a, gate.U_b, gate.U_c)
        activation = affine(W, w_embed, gate.b) + U @ state.h
        pre[name] = activation + z if z is not None else activation
    return _gate_activations(pre, state)


def step_distribution(state: DecoderState, W_out: Tensor, b_out: Tensor) -> Tensor:
    return softmax(affine(W_out, state.h, b_out))


def log_probabilities(logits: np.ndarray) -> np.ndarray:
    """Numerically stable log-softmax; PAD and BOS are never emitted."""
    shifted = logits - logits.max()
    logp = shifted - np.log(np.exp(shifted).sum())
    logp[PAD_ID] = -np.inf
    logp[BOS_ID] = -np.inf
    return logp


class SemanticDecoder:
    """
    Decoder wired to one parameter set and one fusion variant.

    Variants:
        msan: S_t is attention over the semantic distributions, recomputed from h_{t-1}
        mean: S_t is the unweighted mean of the semantic distributions at every step
        uniform: attributes disabled, S_t = 1/K everywhere
        concat: S_t = 1/K everywhere; the first step injects C [v; mean s]
    """

    def __init__(self, params: DecoderParams, variant: str = "msan"):
        self.params = params
        self.variant = variant
        self.vocab_size = params.W_out.shape[0]
        self.attribute_count = params.gates["i"].W_b.shape[1]

    def initial_state(self) -> DecoderState:
        n_h = self.params.W_out.shape[1]
        return DecoderState(h=Tensor(np.zeros(n_h)), c=Tensor(np.zeros(n_h)), t=1)

    def _mean(self, semantics: Sequence[Tensor]) -> Tensor:
        total = semantics[0]
        for s in semantics[1:]:
            total = total + s
        return total / len(semantics)

    def semantic_vector(self, h_prev: Tensor, semantics: Sequence[Tensor]) -> Tensor:
        if self.variant == "msan":
            return attend(h_prev, semantics, self.params.attention)[0]
        if self.variant == "mean":
            return self._mean(semantics)
        return Tensor(np.full(self.attribute_count, 1.0 / self.attribute_count))

    def injection(self, v: Tensor, semantics: Sequence[Tensor]) -> Tensor:
        if self.variant == "concat":
            return concat([v, self._mean(semantics)])
        return v

    def embed(self, token_id: int) -> Tensor:
        if not 0 <= token_id < self.vocab_size:
            token_id = UNK_ID
        return self.params.embedding[:, token_id]

    def step(self,
             token_id: int,
             state: DecoderState,
             semantics: Sequence[Tensor],
             injection: Tensor,
             masks: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> Tuple[DecoderState, Tensor]:
        """
        Feeds one token and returns the new state and the output logits.

        Args:
            masks: Optional inverted-dropout masks for the word embedding and the hidden output
        """
        S_t = self.semantic_vector(state.h, semantics)
        w = self.embed(token_id)
        if masks is not None:
            w = w * masks[0]
        new_state = semantic_lstm_step(
            self.params.gates, self.params.C, S_t, w, state,
            injection if state.t == 1 else None,
        )
        h = new_state.h * masks[1] if masks is not None else new_state.h
        return new_state, affine(self.params.W_out, h, self.params.b_out)


def _dropout_masks(rng: np.random.Generator, rate: float, n_x: int, n_h: int) -> Tuple[np.ndarray, np.ndarray]:
    keep = 1.0 - rate
    return (
        (rng.random(n_x) < keep) / keep,
        (rng.random(n_h) < keep) / keep,
    )


def caption_loss(decoder: SemanticDecoder,
                 v: Tensor,
                 semantics: Sequence[Tensor],
                 caption: Sequence[int],
                 dropout: float = 0.0,
                 rng: Optional[np.random.Generator] = None,
                 terminated: bool = True) -> Tensor:
    """
    Negative log-likelihood of a caption, feeding the reference words as decoder inputs.

    Args:
        decoder (SemanticDecoder): Decoder and its parameters
        v (Tensor): Concatenated video vector
        semantics (Sequence[Tensor]): Semantic distributions feeding the decoder
        caption (Sequence[int]): Token ids without BOS/EOS; out-of-vocabulary ids count as UNK
        dropout (float): Dropout rate, 0 at inference
        rng (np.random.Generator, optional): Source of dropout masks, required when dropout > 0
        terminated (bool): Whether EOS closes the sum

    Returns:
        Tensor: -sum_t log P(w_t | v, s, w_<t)

    Raises:
        UsageError: If the caption is empty
    """
    if not caption:
        raise UsageError("caption_loss needs a non-empty caption")
    targets = [t if 0 <= t < decoder.vocab_size else UNK_ID for t in caption]
    inputs = [BOS_ID] + targets
    if terminated:
        targets = targets + [EOS_ID]
    else:
        inputs = inputs[:-1]
    if dropout > 0 and rng is None:
        raise UsageError("caption_loss needs a random generator when dropout is enabled")

    injection = decoder.injection(v, semantics)
    state = decoder.initial_state()
    n_x = decoder.params.embedding.shape[0]
    n_h = state.h.shape[0]
    loss = None
    for token_id, target in zip(inputs, targets):
        masks = _dropout_masks(rng, dropout, n_x, n_h) if dropout > 0 else None
        state, logits = decoder.step(token_id, state, semantics, injection, masks)
        term = cross_entropy(logits, target)
        loss = term if loss is None else loss + term
    return loss


def sequence_logprob(decoder: SemanticDecoder,
                     v: Tensor,
                     semantics: Sequence[Tensor],
                     tokens: Sequence[int],
                     terminated: bool = True) -> float:
    """Log-probability of a token sequence under the decoder, with the EOS term when terminated."""
    targets = list(tokens) + ([EOS_ID] if terminated else [])
    inputs = [BOS_ID] + list(tokens)
    total = 0.0
    with no_grad():
        injection = decoder.injection(v, semantics)
        state = decoder.initial_state()
        for token_id, target in zip(inputs, targets):
            state, logits = decoder.step(token_id, state, semantics, injection)
            total += float(log_probabilities(logits.data)[target])
    return total


def greedy_decode(decoder: SemanticDecoder, v: Tensor, semantics: Sequence[Tensor], max_len: int) -> List[int]:
    """
    Picks the most probable token at every step, ties broken by the lowest token id.

    Returns:
        List[int]: Generated token ids without BOS/EOS
    """
    if max_len < 1:
        raise UsageError(f"max_len must be at least 1, got {max_len}")
    tokens: List[int] = []
    with no_grad():
        injection = decoder.injection(v, semantics)
        state = decoder.initial_state()
        previous = BOS_ID
        for _ in range(max_len):
            state, logits = decoder.step(previous, state, semantics, injection)
            token = int(np.argmax(log_probabilities(logits.data)))
            if token == EOS_ID:
                break
            tokens.append(token)
            previous = token
    return tokens


def _rank(hypothesis: BeamHypothesis, length_normalize: bool) -> Tuple[float, Tuple[int, ...]]:
    score = hypothesis.logprob
    if length_normalize:
        score /= max(1, len(hypothesis.tokens) - 1)
    return -score, hypothesis.tokens


def beam_search_hypothesis(decoder: SemanticDecoder,
                           v: Tensor,
                           semantics: Sequence[Tensor],
                           beam: int,
                           max_len: int,
                           length_normalize: bool = False) -> BeamHypothesis:
    """
    Beam search over accumulated log-probabilities.

    Finished hypotheses are retired to a pool; hypotheses still alive after max_len
    join the pool unfinished. Ties are broken by the token-id sequence.

    Returns:
        BeamHypothesis: The best hypothesis in the pool
    """
    if beam < 1 or max_len < 1:
        raise UsageError(f"beam and max_len must be at least 1, got {beam} and {max_len}")

    with no_grad():
        injection = decoder.injection(v, semantics)
        live = [BeamHypothesis(tokens=(BOS_ID,), logprob=0.0, state=decoder.initial_state())]
        pool: List[BeamHypothesis] = []
        for _ in range(max_len):
            candidates = []
            for hypothesis in live:
                state, logits = decoder.step(hypothesis.tokens[-1], hypothesis.state, semantics, injection)
                logp = log_probabilities(logits.data)
                for token in np.argsort(-logp, kind="stable")[:beam]:
                    if not np.isfinite(logp[token]):
                        break
                    candidates.append(BeamHypothesis(
                        tokens=hypothesis.tokens + (int(token),),
                        logprob=hypothesis.logprob + float(logp[token]),
                        state=state,
                        finished=int(token) == EOS_ID,
                    ))
            candidates.sort(key=lambda h: _rank(h, length_normalize))
            live = []
            for candidate in candidates[:beam]:
                (pool if candidate.finished else live).append(candidate)
            if not live:
                break
            # extensions only lower the raw log-probability
            if pool and not length_normalize and max(h.logprob for h in pool) > max(h.logprob for h in live):
                live = []
                break
        pool.extend(live)
    return min(pool, key=lambda h: _rank(h, length_normalize))


def beam_search(decoder: SemanticDecoder,
                v: Tensor,
                semantics: Sequence[Tensor],
                beam: int,
                max_len: int,
                length_normalize: bool = False) -> Tuple[List[int], float]:
    """
    Returns:
        Tuple[List[int], float]: Best token ids (without BOS/EOS) and their log-probability
    """
    best = beam_search_hypothesis(decoder, v, semantics, beam, max_len, length_normalize)
    logging.debug(f"Beam search finished: {len(best.words)} tokens, logprob {best.logprob:.4f}")
    return best.words, best.logprob
