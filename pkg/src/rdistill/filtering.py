"""Relevance / usefulness filtering of crop rationales, plus balancing.

A rationale is *irrelevant* when the verifier's greedy answer with the
rationale differs from the gold answer (the example keeps the None
sentinel as its effective answer). Otherwise the usefulness test asks
whether the rationale boosts the gold answer's score by the configured
factor; failures are *relevant-not-useful*, passes are *useful*.

Balancing subsamples the None-labeled examples down to
max(n_bad_r - n_good_r, 0), capped by supply, with a seeded generator.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .records import (NONE_SENTINEL, CategorizedExample, QAExample, Rationale,
                      VerifierScores)
from .tools import VerifierClient, rationale_text

PROBABILITY_SPACE = "probability"
LOG_SPACE = "log"


@dataclass(frozen=True)
class FilterConfig:
    boost_factor: float = 2.0
    space: str = PROBABILITY_SPACE

    def __post_init__(self):
        if self.space not in (PROBABILITY_SPACE, LOG_SPACE):
            raise ValueError(f"unknown score space {self.space!r}")
        if self.space == PROBABILITY_SPACE and not self.boost_factor > 1:
            raise ValueError("boost_factor must be > 1 in probability space")


@dataclass(frozen=True)
class BalanceReport:
    n_none: int
    n_bad_r: int
    n_good_r: int
    n_none_kept: int
    seed: int

    def to_json(self) -> dict:
        return {
            "n_none": self.n_none,
            "n_bad_r": self.n_bad_r,
            "n_good_r": self.n_good_r,
            "n_none_kept": self.n_none_kept,
            "seed": self.seed,
        }


def is_useful(logp_with: float, logp_without: float, cfg: FilterConfig) -> bool:
    """The usefulness inequality in the configured score space."""
    if cfg.space == PROBABILITY_SPACE:
        return math.exp(logp_with) >= cfg.boost_factor * math.exp(logp_without)
    return logp_with >= cfg.boost_factor * logp_without


def categorize(example: QAExample, rationale: Rationale,
               verifier: VerifierClient, cfg: FilterConfig) -> CategorizedExample:
    """Assign one (crop, rationale) pair to its filter category.

    Greedy comparison is case-sensitive exact match after whitespace
    trimming; the canonical gold answer is the first of gold_answers.
    """
    gold = example.canonical_answer
    r_text = rationale_text(rationale)
    greedy = verifier.greedy_answer(example.image, example.question, r_text)
    logp_with = verifier.answer_logprob(example.image, example.question, gold, r_text)
    logp_without = verifier.answer_logprob(example.image, example.question, gold, None)
    scores = VerifierScores(logp_with=logp_with, logp_without=logp_without, greedy=greedy)

    if greedy.strip() != gold.strip():
        category, answer = "irrelevant", NONE_SENTINEL
    elif is_useful(logp_with, logp_without, cfg):
        category, answer = "useful", gold
    else:
        category, answer = "relevant-not-useful", gold

    return CategorizedExample(
        example_id=example.example_id,
        question=example.question,
        image=example.image,
        rationale=rationale,
        category=category,
        effective_answer=answer,
        scores=scores,
    )


def balance(categorized: list[CategorizedExample],
            seed: int) -> tuple[list[CategorizedExample], BalanceReport]:
    """Subsample None-labeled examples; keep everything else.

    Deterministic given the seed; kept examples preserve input order.
    """
    none_idx = [i for i, c in enumerate(categorized) if c.category == "irrelevant"]
    n_good = sum(1 for c in categorized if c.category == "useful")
    n_bad = sum(1 for c in categorized if c.category == "relevant-not-useful")
    target = max(n_bad - n_good, 0)
    n_keep = min(len(none_idx), target)

    rng = random.Random(seed)
    keep_none = set(rng.sample(none_idx, n_keep))
    kept = [c for i, c in enumerate(categorized)
            if c.category != "irrelevant" or i in keep_none]
    report = BalanceReport(n_none=len(none_idx), n_bad_r=n_bad, n_good_r=n_good,
                           n_none_kept=n_keep, seed=seed)
    return kept, report
