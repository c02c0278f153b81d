"""
Built-in verification suites run by the `selfcheck` command.
"""
import math
import time
import logging
import itertools
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config import TrainConfig
from src.model.core.autograd import ParameterRegistry, Tensor, grad_check, no_grad, precision
from src.model.core.corpus import BOS_ID, EOS_ID, UNK_ID, VideoRecord
from src.model.core.decoder import (
    GATES,
    AttentionParams,
    GateFactor,
    DecoderState,
    attend,
    beam_search_hypothesis,
    ensemble_weight,
    explicit_lstm_step,
    greedy_decode,
    semantic_lstm_step,
    sequence_logprob,
)
from src.model.core.metrics import bleu, cider_d
from src.model.core.network import MSANNetwork, parameter_layout

GRADIENT_TOLERANCE = 1e-4
GRADIENT_FLOOR = 1e-6
EQUIVALENCE_TOLERANCE = 1e-10
SIMPLEX_TOLERANCE = 1e-6
RESCORE_TOLERANCE = 1e-9


@dataclass
class CheckResult:
    suite: str
    invariant: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0


class CheckFailure(AssertionError):
    def __init__(self, invariant: str, detail: str):
        super().__init__(f"{invariant}: {detail}")
        self.invariant = invariant
        self.detail = detail


def _require(condition: bool, invariant: str, detail: str):
    if not condition:
        raise CheckFailure(invariant, detail)


def build_random_network(rng: np.random.Generator,
                         config: TrainConfig,
                         stream_dims: Dict[str, int],
                         vocab_size: int,
                         scale: float = 0.5) -> MSANNetwork:
    """Network whose every parameter, biases included, is drawn from U(-scale, scale)."""
    registry = ParameterRegistry()
    for name, (shape, kind) in parameter_layout(config, stream_dims, vocab_size).items():
        registry.add(name, rng.uniform(-scale, scale, size=shape), kind)
    return MSANNetwork(registry, config)


def random_record(rng: np.random.Generator, stream_dims: Dict[str, int], n_frames: int = 3,
                  captions: Sequence[Tuple[str, ...]] = (("w",),)) -> VideoRecord:
    return VideoRecord(
        id="check",
        streams={m: rng.normal(size=(n_frames, d)) for m, d in stream_dims.items()},
        captions=tuple(captions),
    )


def _random_gates(rng: np.random.Generator, n_h: int, n_f: int, n_x: int, K: int) -> Dict[str, GateFactor]:
    def draw(*shape):
        return Tensor(rng.uniform(-1.0, 1.0, size=shape))

    return {
        g: GateFactor(draw(n_h, n_f), draw(n_f, K), draw(n_f, n_x), draw(n_h, n_f), draw(n_f, K), draw(n_f, n_h), draw(n_h))
        for g in GATES
    }


def check_gradients(seed: int = 0) -> str:
    """Central differences on every coordinate of the joint loss of a small two-modality network."""
    rng = np.random.Generator(np.random.Philox(seed))
    config = TrainConfig.create(
        hidden_size=8, factors=5, embedding_size=6, encoder_size=4, attribute_count=4,
        modalities=["frames", "flow"], dropout=0.0, alpha=1e-2,
    )
    dims = {"frames": 3, "flow": 2}
    network = build_random_network(rng, config, dims, vocab_size=7)
    record = random_record(rng, dims)
    labels = np.array([1.0, 0.0, 1.0, 0.0])
    caption = [4, 5, 6]

    def loss_fn():
        loss1, loss2 = network.joint_loss(record, labels, caption)
        return loss1 + loss2

    error = grad_check(loss_fn, network.registry, eps=1e-4, floor=GRADIENT_FLOOR)
    _require(error < GRADIENT_TOLERANCE, "joint-loss gradient matches central differences",
             f"max relative error {error:.3e}")
    return f"max relative error {error:.3e}"


def check_factorization(seed: int = 0, instances: int = 100) -> str:
    rng = np.random.Generator(np.random.Philox(seed))
    worst_linear = worst_step = 0.0
    with no_grad():
        for _ in range(instances):
            n_h, n_x, n_f = (int(x) for x in rng.integers(1, 17, size=3))
            K = int(rng.integers(1, 9))
            gates = _random_gates(rng, n_h, n_f, n_x, K)
            S = Tensor(rng.uniform(size=K))
            gate = gates["i"]

            mixed = sum(
                S.data[k] * ensemble_weight(Tensor(np.eye(K)[k]), gate.W_a, gate.W_b, gate.W_c).data
                for k in range(K)
            )
            direct = ensemble_weight(S, gate.W_a, gate.W_b, gate.W_c).data
            worst_linear = max(worst_linear, float(np.max(np.abs(mixed - direct))))

            C = Tensor(rng.uniform(-1.0, 1.0, size=(n_h, 3)))
            w = Tensor(rng.normal(size=n_x))
            first = DecoderState(h=Tensor(np.zeros(n_h)), c=Tensor(np.zeros(n_h)), t=1)
            later = DecoderState(h=Tensor(rng.uniform(-1, 1, n_h)), c=Tensor(rng.uniform(-1, 1, n_h)), t=2)
            v = Tensor(rng.normal(size=3))
            for state, injected in ((first, v), (later, None)):
                fast = semantic_lstm_step(gates, C, S, w, state, injected)
                slow = explicit_lstm_step(gates, C, S, w, state, injected)
                worst_step = max(
                    worst_step,
                    float(np.max(np.abs(fast.h.data - slow.h.data))),
                    float(np.max(np.abs(fast.c.data - slow.c.data))),
                )
    _require(worst_linear < EQUIVALENCE_TOLERANCE, "ensemble weight is linear in S",
             f"max abs error {worst_linear:.3e}")
    _require(worst_step < EQUIVALENCE_TOLERANCE, "factorized step equals explicit ensemble step",
             f"max abs error {worst_step:.3e}")
    return f"linearity {worst_linear:.1e}, step {worst_step:.1e}"


def check_attention(seed: int = 0, draws: int = 1000) -> str:
    rng = np.random.Generator(np.random.Philox(seed))
    with no_grad():
        for _ in range(draws):
            n_h, n_a, K = 6, 6, 5
            l = int(rng.integers(1, 4))
            params = AttentionParams(
                W=Tensor(rng.normal(size=(n_a, n_h))),
                U=Tensor(rng.normal(size=(n_a, K))),
                v=Tensor(rng.normal(size=n_a)),
            )
            h = Tensor(rng.normal(size=n_h))
            semantics = [Tensor(rng.uniform(size=K)) for _ in range(l)]
            S, a = attend(h, semantics, params)
            _require(bool(np.all(a.data >= 0)) and abs(a.data.sum() - 1.0) <= SIMPLEX_TOLERANCE,
                     "attention weights lie on the simplex", f"weights {a.data}")
            if l == 1:
                _require(np.array_equal(S.data, semantics[0].data), "single distribution passes through",
                         "S_t differs from s_1")
            same = [semantics[0]] * 3
            _, uniform = attend(h, same, params)
            _require(bool(np.all(np.abs(uniform.data - 1.0 / 3.0) <= 1e-9)), "identical distributions get equal weight",
                     f"weights {uniform.data}")
    return f"{draws} draws"


def _tiny_network(rng: np.random.Generator, vocab_size: int) -> Tuple[MSANNetwork, Tensor, List[Tensor]]:
    config = TrainConfig.create(
        hidden_size=6, factors=4, embedding_size=5, encoder_size=4, attribute_count=3,
        modalities=["frames", "clips"], dropout=0.0,
    )
    dims = {"frames": 3, "clips": 2}
    network = build_random_network(rng, config, dims, vocab_size, scale=1.0)
    record = random_record(rng, dims)
    with no_grad():
        encoding = network.encode(record)
        semantics = network.decoder_semantics(network.semantics(encoding))
    return network, encoding.v, semantics


def check_decoding(seed: int = 0, models: int = 50) -> str:
    rng = np.random.Generator(np.random.Philox(seed))
    for _ in range(models):
        network, v, semantics = _tiny_network(rng, vocab_size=8)
        greedy = greedy_decode(network.decoder, v, semantics, max_len=5)
        best = beam_search_hypothesis(network.decoder, v, semantics, beam=1, max_len=5)
        _require(best.words == greedy, "beam size 1 equals greedy", f"beam {best.words} vs greedy {greedy}")

    for _ in range(5):
        network, v, semantics = _tiny_network(rng, vocab_size=6)
        max_len = 3
        words = [UNK_ID, 4, 5]
        candidates = []
        for length in range(max_len + 1):
            for body in itertools.product(words, repeat=length):
                finished = length < max_len
                tokens = (BOS_ID,) + body + ((EOS_ID,) if finished else ())
                logprob = sequence_logprob(network.decoder, v, semantics, list(body), terminated=finished)
                candidates.append((-logprob, tokens))
        exhaustive = min(candidates)
        best = beam_search_hypothesis(network.decoder, v, semantics, beam=27, max_len=max_len)
        _require(best.tokens == exhaustive[1], "wide beam finds the exhaustive argmax",
                 f"beam {best.tokens} vs exhaustive {exhaustive[1]}")
        rescored = sequence_logprob(network.decoder, v, semantics, best.words, terminated=best.finished)
        _require(abs(rescored - best.logprob) <= RESCORE_TOLERANCE, "beam log-probability matches re-scoring",
                 f"{best.logprob} vs {rescored}")
    return f"{models} models"


def check_metrics() -> str:
    value = bleu([["the", "cat", "sat"]], [[["the", "cat", "sat", "down"]]], 1)
    _require(abs(value - math.exp(-1.0 / 3.0)) <= 1e-6, "BLEU@1 hand-computed example", f"got {value}")
    perfect = [bleu([["a", "dog", "is", "running"]], [[["a", "dog", "is", "running"]]], n) for n in range(1, 5)]
    _require(all(p == 1.0 for p in perfect), "perfect candidates score BLEU 1", f"got {perfect}")
    disjoint = cider_d([["x", "y"], ["a", "b"]], [[["a", "b"]], [["c", "d"]]])
    _require(disjoint == 0.0, "CIDEr-D without shared n-grams is 0", f"got {disjoint}")
    refs = [[["a", "dog", "is", "running"]], [["a", "cat", "is", "sleeping"]]]
    exact = cider_d([["a", "dog", "is", "running"], ["a", "cat", "is", "sleeping"]], refs)
    edited = cider_d([["a", "dog", "is", "sleeping"], ["a", "cat", "is", "sleeping"]], refs)
    _require(exact >= edited, "CIDEr-D peaks at the reference", f"{exact} < {edited}")
    return f"CIDEr-D at reference {exact:.4f}"


SUITES: Dict[str, Callable[[], str]] = {
    "gradients": check_gradients,
    "factorization": check_factorization,
    "attention": check_attention,
    "decoding": check_decoding,
    "metrics": check_metrics,
}


def run_selfcheck(suites: Optional[Sequence[str]] = None) -> List[CheckResult]:
    """
    Runs the requested suites (all by default) in 64-bit precision.

    Returns:
        List[CheckResult]: One result per suite; a failed result names the violated invariant
    """
    results = []
    with precision("float64"):
        for name in suites or list(SUITES):
            started = time.perf_counter()
            try:
                detail = SUITES[name]()
                result = CheckResult(name, name, True, detail)
            except CheckFailure as e:
                result = CheckResult(name, e.invariant, False, e.detail)
            except Exception as e:
                result = CheckResult(name, name, False, f"{type(e).__name__}: {e}")
            result.seconds = round(time.perf_counter() - started, 3)
            log = logging.info if result.passed else logging.error
            log(f"[{'PASS' if result.passed else 'FAIL'}] {name}: {result.invariant} ({result.detail})")
            results.append(result)
    return results
