"""
Caption metrics (BLEU@1-4, CIDEr-D) and the evaluation report.
"""
import io
import os
import csv
import math
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from src.model.core.autograd import no_grad, precision
from src.model.core.corpus import Corpus, attribute_labels
from src.model.core.encoder import detector_f1
from src.model.core.network import Checkpoint, MSANNetwork
from src.model.utils.errors import UsageError

MAX_ORDER = 4
CIDER_SIGMA = 6.0
CIDER_SCALE = 10.0
METEOR_NOTE = "METEOR is not computed: it needs synonym and paraphrase resources"

Tokens = Sequence[str]


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check_inputs(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]]):
    if not candidates:
        raise UsageError("Metrics need at least one candidate")
    if len(candidates) != len(references):
        raise UsageError(f"{len(candidates)} candidates but {len(references)} reference sets")
    if any(not refs for refs in references):
        raise UsageError("Every candidate needs at least one reference")


def closest_reference_length(candidate: Tokens, references: Sequence[Tokens]) -> int:
    """Reference length nearest to the candidate's; ties go to the shorter reference."""
    return min((abs(len(ref) - len(candidate)), len(ref)) for ref in references)[1]


def bleu_stats(candidate: Tokens, references: Sequence[Tokens], max_order: int = MAX_ORDER) -> Tuple[List[int], List[int], int, int]:
    """
    Sufficient statistics of one segment.

    Returns:
        Tuple[List[int], List[int], int, int]: clipped matches per order, candidate n-grams per order,
            candidate length, closest reference length
    """
    matches, totals = [], []
    for n in range(1, max_order + 1):
        counts = ngrams(candidate, n)
        max_ref = Counter()
        for ref in references:
            for gram, count in ngrams(ref, n).items():
                max_ref[gram] = max(max_ref[gram], count)
        matches.append(sum(min(count, max_ref[gram]) for gram, count in counts.items()))
        totals.append(max(0, len(candidate) - n + 1))
    return matches, totals, len(candidate), closest_reference_length(candidate, references)


def bleu_from_stats(matches: Sequence[int], totals: Sequence[int], c: int, r: int, N: int) -> float:
    """Geometric mean of modified precisions 1..N times exp(min(0, 1 - r/c)); no smoothing."""
    if c == 0 or any(matches[n] == 0 or totals[n] == 0 for n in range(N)):
        return 0.0
    log_precision = sum(math.log(matches[n] / totals[n]) for n in range(N)) / N
    return math.exp(log_precision + min(0.0, 1.0 - r / c))


def bleu(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]], N: int = MAX_ORDER) -> float:
    """
    Corpus-level BLEU@N.

    Raises:
        UsageError: On an empty candidate list, mismatched lengths or N outside 1..4
    """
    if not 1 <= N <= MAX_ORDER:
        raise UsageError(f"BLEU order must lie in 1..{MAX_ORDER}, got {N}")
    _check_inputs(candidates, references)
    matches, totals = [0] * N, [0] * N
    c = r = 0
    for candidate, refs in zip(candidates, references):
        m, t, c_len, r_len = bleu_stats(candidate, refs, N)
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        c += c_len
        r += r_len
    return bleu_from_stats(matches, totals, c, r, N)


def _tfidf(counts: Counter, document_frequency: Counter, log_documents: float) -> Tuple[Dict, float]:
    vector = {gram: count * (log_documents - math.log(max(1.0, document_frequency[gram])))
              for gram, count in counts.items()}
    return vector, math.sqrt(sum(w * w for w in vector.values()))


def cider_d_scores(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]]) -> List[float]:
    """
    Per-video CIDEr-D; document frequencies come from the reference sets of this corpus.

    For each order n the similarity is sum_g min(h_g, r_g) r_g / (|h| |r|) times
    exp(-(l_h - l_r)^2 / (2 sigma^2)), averaged over orders and references and scaled by 10.
    """
    _check_inputs(candidates, references)
    document_frequency = Counter()
    for refs in references:
        seen = set()
        for ref in refs:
            for n in range(1, MAX_ORDER + 1):
                seen.update(ngrams(ref, n))
        document_frequency.update(seen)
    log_documents = math.log(float(len(references)))

    scores = []
    for candidate, refs in zip(candidates, references):
        hyp = [_tfidf(ngrams(candidate, n), document_frequency, log_documents) for n in range(1, MAX_ORDER + 1)]
        total = np.zeros(MAX_ORDER)
        for ref in refs:
            penalty = math.exp(-((len(candidate) - len(ref)) ** 2) / (2 * CIDER_SIGMA ** 2))
            for n in range(MAX_ORDER):
                vec_h, norm_h = hyp[n]
                vec_r, norm_r = _tfidf(ngrams(ref, n + 1), document_frequency, log_documents)
                similarity = sum(min(weight, vec_r.get(gram, 0.0)) * vec_r.get(gram, 0.0)
                                 for gram, weight in vec_h.items())
                if norm_h != 0 and norm_r != 0:
                    similarity /= norm_h * norm_r
                total[n] += similarity * penalty
        scores.append(float(np.mean(total)) / len(refs) * CIDER_SCALE)
    return scores


def cider_d(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]]) -> float:
    """Corpus CIDEr-D: the mean of the per-video scores."""
    return float(np.mean(cider_d_scores(candidates, references)))


class VideoScore(BaseModel):
    id: str
    caption: str
    logprob: float
    bleu: Dict[int, float]
    cider_d: float
    matches: List[int]
    totals: List[int]
    candidate_length: int
    reference_length: int


class EvaluationReport(BaseModel):
    """
    Attributes:
        bleu (Dict[int, float]): Corpus BLEU@N for N = 1..4
        cider_d (float): Mean of the per-video CIDEr-D scores
        videos (List[VideoScore]): Per-video breakdown with the BLEU sufficient statistics
        candidates (int): Number of scored captions
        references (int): Number of reference captions
        detector_f1 (Dict[str, float]): Mean per-attribute F1 of each modality's detector
        notes (List[str]): Remarks such as omitted metrics
    """
    bleu: Dict[int, float]
    cider_d: float
    videos: List[VideoScore]
    candidates: int
    references: int
    detector_f1: Dict[str, float] = {}
    notes: List[str] = [METEOR_NOTE]

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)

    def to_table(self) -> str:
        rows = [(f"BLEU@{n}", f"{score:.4f}") for n, score in sorted(self.bleu.items())]
        rows.append(("CIDEr-D", f"{self.cider_d:.4f}"))
        rows += [(f"F1 {m}", f"{score:.4f}") for m, score in self.detector_f1.items()]
        rows += [("Candidates", str(self.candidates)), ("References", str(self.references))]
        width = max(len(name) for name, _ in rows)
        lines = [f"{name.ljust(width)}  {value}" for name, value in rows]
        return "\n".join(lines + [f"Note: {note}" for note in self.notes]) + "\n"

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["id", "caption", "logprob"] + [f"bleu{n}" for n in range(1, MAX_ORDER + 1)] + ["cider_d"])
        for video in self.videos:
            writer.writerow(
                [video.id, video.caption, f"{video.logprob:.6f}"]
                + [f"{video.bleu[n]:.6f}" for n in range(1, MAX_ORDER + 1)]
                + [f"{video.cider_d:.6f}"]
            )
        return buffer.getvalue()


def score_captions(ids: Sequence[str],
                   candidates: Sequence[Tokens],
                   references: Sequence[Sequence[Tokens]],
                   logprobs: Optional[Sequence[float]] = None) -> EvaluationReport:
    """Builds a report from already generated captions."""
    _check_inputs(candidates, references)
    logprobs = logprobs if logprobs is not None else [0.0] * len(candidates)
    ciders = cider_d_scores(candidates, references)
    videos = []
    for video_id, candidate, refs, logprob, cider in zip(ids, candidates, references, logprobs, ciders):
        matches, totals, c, r = bleu_stats(candidate, refs)
        videos.append(VideoScore(
            id=video_id,
            caption=" ".join(candidate),
            logprob=logprob,
            bleu={n: bleu_from_stats(matches, totals, c, r, n) for n in range(1, MAX_ORDER + 1)},
            cider_d=cider,
            matches=matches,
            totals=totals,
            candidate_length=c,
            reference_length=r,
        ))
    return EvaluationReport(
        bleu={n: bleu(candidates, references, n) for n in range(1, MAX_ORDER + 1)},
        cider_d=float(np.mean(ciders)),
        videos=videos,
        candidates=len(candidates),
        references=sum(len(refs) for refs in references),
    )


def evaluation_threads() -> int:
    """Worker count, capped by MSAN_THREADS (default 1)."""
    value = os.environ.get("MSAN_THREADS", "1")
    try:
        return max(1, int(value))
    except ValueError:
        raise UsageError(f"MSAN_THREADS must be an integer, got {value!r}")


def evaluate(checkpoint: Checkpoint, corpus: Corpus, beam_size: int) -> EvaluationReport:
    """
    Beam-searches one caption per video and scores the captions against the references.

    Decoding runs on up to MSAN_THREADS threads; results are reduced in corpus order.
    """
    if len(corpus) == 0:
        raise UsageError("Cannot evaluate on an empty corpus")
    if beam_size < 1:
        raise UsageError(f"Beam size must be at least 1, got {beam_size}")
    records = list(corpus)
    with precision(checkpoint.config.precision), no_grad():
        network = MSANNetwork.from_checkpoint(checkpoint)
        with ThreadPoolExecutor(max_workers=evaluation_threads()) as executor:
            decoded = list(executor.map(lambda record: network.caption(record, beam_size), records))
        predictions = {m: [] for m in checkpoint.config.modalities}
        for record in records:
            for m, s in network.predict_semantics(record).items():
                predictions[m].append(s)

    candidates = [checkpoint.vocab.decode(ids) for ids, _ in decoded]
    report = score_captions(
        [record.id for record in records],
        candidates,
        [list(record.captions) for record in records],
        [logprob for _, logprob in decoded],
    )
    labels = np.stack([attribute_labels(record, checkpoint.attributes) for record in records])
    report.detector_f1 = {
        m: float(np.mean(detector_f1(np.stack(predictions[m]), labels))) for m in predictions
    }
    logging.info(f"Evaluated {len(records)} videos: BLEU@4 {report.bleu[4]:.4f}, CIDEr-D {report.cider_d:.4f}")
    return report
