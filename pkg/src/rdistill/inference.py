"""Inference-time post-processing and evaluation metrics.

Voting aggregates beam-hypothesis probabilities per distinct answer and
picks the best non-None answer. The calculator executes a program found
in a decoded rationale and substitutes its result for the model answer,
falling back to the model prediction for Find or invalid programs.
Metrics: ANLS (threshold 0.5, max over golds) and relaxed accuracy
(5% numeric tolerance, else case-insensitive exact match).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

from . import dsl
from .codec import SEP_ANSWER, SEP_PROGRAM, parse_target
from .records import ScoredHypothesis

log = logging.getLogger(__name__)


class AllNone(ValueError):
    """Every parseable hypothesis answered with the None sentinel."""


@dataclass(frozen=True)
class VoteResult:
    answer: str
    aggregate_prob: float
    tally: dict


def vote(hypotheses: Sequence[ScoredHypothesis]) -> VoteResult:
    """Sum probabilities per distinct answer; argmax over non-None answers.

    Unparseable hypotheses are skipped with a warning. Ties break by
    first occurrence in beam order.
    """
    tally: dict[str, float] = {}
    order: dict[str, int] = {}
    for i, hyp in enumerate(hypotheses):
        try:
            target = parse_target(hyp.decoded)
        except ValueError as e:
            log.warning("skipping unparseable hypothesis %d: %s", i, e)
            continue
        key = target.answer.strip()
        tally[key] = tally.get(key, 0.0) + hyp.prob
        order.setdefault(key, i)

    candidates = [a for a in tally if a != "None"]
    if not candidates:
        raise AllNone("no non-None answer among parseable hypotheses")
    best = max(candidates, key=lambda a: (tally[a], -order[a]))
    return VoteResult(answer=best, aggregate_prob=tally[best], tally=tally)


def extract_program_source(decoded: str) -> str | None:
    """Program text between the last <program> marker and <answer> (or end)."""
    idx = decoded.rfind(SEP_PROGRAM)
    if idx < 0:
        return None
    source = decoded[idx + len(SEP_PROGRAM):]
    a_idx = source.find(SEP_ANSWER)
    if a_idx >= 0:
        source = source[:a_idx]
    return source.strip()


def apply_calculator(decoded: str, fallback_answer: str) -> str:
    """Execute the program in a decoded sequence and substitute its result.

    Invalid programs, Find programs, and execution errors all fall back
    to the model-predicted answer; this function never raises.
    """
    source = extract_program_source(decoded)
    if not source:
        return fallback_answer
    try:
        program = dsl.parse(source)
        result = dsl.execute(program)
    except (ValueError, ZeroDivisionError):
        return fallback_answer
    if result.kind == "passthrough":
        return fallback_answer
    try:
        return result.render()
    except (ValueError, OverflowError):
        return fallback_answer


def levenshtein(a: str, b: str) -> int:
    """Edit distance, single-row DP."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        row = [i]
        for j, cb in enumerate(b, start=1):
            row.append(min(prev[j] + 1, row[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = row
    return prev[-1]


def anls(pred: str, golds: Sequence[str], tau: float = 0.5) -> float:
    """Normalized Levenshtein similarity, max over golds, 0 below threshold.

    Strings are lowercased and whitespace-trimmed before comparison.
    """
    if not golds:
        raise ValueError("golds must be non-empty")
    p = pred.strip().lower()
    best = 0.0
    for gold in golds:
        g = gold.strip().lower()
        nl = levenshtein(p, g) / max(len(p), len(g), 1)
        score = 1.0 - nl if nl < tau else 0.0
        best = max(best, score)
    return best


def _to_number(text: str) -> float | None:
    cleaned = text.strip().replace("%", "").replace(",", "").replace(" ", "")
    if not cleaned:
        return None
    try:
        return float(cleaned)
    except ValueError:
        return None


def relaxed_accuracy(pred: str, gold: str) -> int:
    """1 iff numeric within 5% relative error (gold 0 requires exactness),
    else case-insensitive trimmed string equality."""
    p_num, g_num = _to_number(pred), _to_number(gold)
    if p_num is not None and g_num is not None:
        if g_num == 0:
            return int(p_num == 0)
        return int(abs(p_num - g_num) <= 0.05 * abs(g_num))
    return int(pred.strip().lower() == gold.strip().lower())


@dataclass(frozen=True)
class MetricReport:
    metric: str  # "ANLS" or "RA"
    per_example: tuple[float, ...]

    @property
    def mean(self) -> float:
        return sum(self.per_example) / len(self.per_example) if self.per_example else 0.0

    def to_json(self) -> dict:
        return {"metric": self.metric, "mean": self.mean,
                "per_example": list(self.per_example)}


def score_predictions(metric: str, pairs: Iterable[tuple[str, Sequence[str]]]) -> MetricReport:
    """Score (prediction, gold answers) pairs with the chosen metric."""
    scores = []
    for pred, golds in pairs:
        if metric == "ANLS":
            scores.append(anls(pred, golds))
        elif metric == "RA":
            scores.append(float(relaxed_accuracy(pred, golds[0])))
        else:
            raise ValueError(f"unknown metric {metric!r}")
    return MetricReport(metric=metric, per_example=tuple(scores))
