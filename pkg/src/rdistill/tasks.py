"""Builders for the multi-task training datasets and baselines.

Routing for categorized crops is total and exclusive: useful crops go to
QRACI with the gold answer, irrelevant crops to QRACI with the None
sentinel, and relevant-not-useful crops to APRCI (answer-only given the
noisy rationale in the decoder input). APR pairs each example with three
student-sampled rationales from a model trained on the other folds.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from typing import Iterable, Mapping

from .codec import (ANSWER_BUDGET, DEFAULT_COUNTER, SEP_RATIONALE, TokenCounter,
                    encode_target, escape_field)
from .records import NONE_SENTINEL, CategorizedExample, QAExample, Rationale, TaskRecord
from .tools import STUDENT_SAMPLES, StudentRationaleClient, rationale_text

log = logging.getLogger(__name__)


class MissingRationale(KeyError):
    def __init__(self, example_id: str):
        super().__init__(example_id)
        self.example_id = example_id


class FoldLeak(RuntimeError):
    """A student client was asked to generate on its own training fold."""


class SubsetTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class FoldPlan:
    fold_count: int
    assignment: Mapping[str, int]  # example_id -> global fold index
    subset_folds: Mapping[str, tuple[int, ...]]  # subset -> its fold indices
    seed: int


def plan_folds(examples_by_subset: Mapping[str, Iterable[QAExample]],
               folds_per_subset: int = 3, seed: int = 0) -> FoldPlan:
    """Seeded k-fold partition, independent per subset; fold sizes differ
    by at most one. Fold indices are global across subsets."""
    assignment: dict[str, int] = {}
    subset_folds: dict[str, tuple[int, ...]] = {}
    next_fold = 0
    for subset in sorted(examples_by_subset):
        ids = sorted(ex.example_id for ex in examples_by_subset[subset])
        if len(ids) < folds_per_subset:
            raise SubsetTooSmall(
                f"subset {subset!r} has {len(ids)} examples for {folds_per_subset} folds")
        rng = random.Random((seed, subset).__repr__())
        rng.shuffle(ids)
        fold_ids = tuple(range(next_fold, next_fold + folds_per_subset))
        for i, ex_id in enumerate(ids):
            assignment[ex_id] = fold_ids[i % folds_per_subset]
        subset_folds[subset] = fold_ids
        next_fold += folds_per_subset
    return FoldPlan(fold_count=next_fold, assignment=dict(assignment),
                    subset_folds=subset_folds, seed=seed)


def _answer_only(answer: str, counter: TokenCounter) -> str:
    out = escape_field(answer)
    if counter.count(out) > ANSWER_BUDGET:
        out = counter.truncate(out, ANSWER_BUDGET)
    return out


def build_qra(examples: Iterable[QAExample],
              rationales: Mapping[str, Rationale],
              counter: TokenCounter = DEFAULT_COUNTER) -> list[TaskRecord]:
    """Whole-image distillation records: decode question, rationale, answer."""
    records = []
    for ex in examples:
        if ex.example_id not in rationales:
            raise MissingRationale(ex.example_id)
        r = rationales[ex.example_id]
        if r.flagged:
            log.info("example %s: flagged rationale excluded from QRA", ex.example_id)
            continue
        r_text = rationale_text(r, counter)
        if not r_text.strip():
            raise MissingRationale(ex.example_id)
        records.append(TaskRecord(
            task="QRA",
            example_id=ex.example_id,
            image=ex.image,
            decoder_input="",
            decoder_output=encode_target(ex.question, r_text, ex.canonical_answer, counter),
        ))
    return records


def build_apr(examples: Iterable[QAExample],
              students: Mapping[int, StudentRationaleClient],
              fold_plan: FoldPlan,
              counter: TokenCounter = DEFAULT_COUNTER) -> list[TaskRecord]:
    """Answer-with-provided-rationale records, three student samples each.

    The student client serving a fold must not have been trained on it;
    a violation raises FoldLeak before any generation happens.
    """
    records = []
    for ex in examples:
        fold = fold_plan.assignment.get(ex.example_id)
        if fold is None:
            raise MissingRationale(ex.example_id)
        client = students[fold]
        if fold in client.train_folds:
            raise FoldLeak(
                f"student for fold {fold} was trained on it (example {ex.example_id})")
        samples = client.sample_rationales(ex.image, ex.question, STUDENT_SAMPLES)
        for r_hat in samples:
            decoder_input = _trim_input(ex.question, r_hat, counter)
            records.append(TaskRecord(
                task="APR",
                example_id=ex.example_id,
                image=ex.image,
                decoder_input=decoder_input,
                decoder_output=_answer_only(ex.canonical_answer, counter),
            ))
    return records


def _trim_input(question: str, rationale: str, counter: TokenCounter) -> str:
    """Decoder input "q <s> r", held to the same 108-token prefix budget."""
    target = encode_target(question, rationale, "x", counter)
    return target[:target.rfind(" <answer>")]


def build_qraci(categorized: Iterable[CategorizedExample],
                counter: TokenCounter = DEFAULT_COUNTER) -> list[TaskRecord]:
    """Cropped-image rationale-prediction records.

    useful -> gold answer; irrelevant -> None sentinel (the rationale is
    kept as a prediction target either way); relevant-not-useful crops
    are excluded here and routed to APRCI.
    """
    records = []
    for cat in categorized:
        if cat.category == "relevant-not-useful":
            continue
        answer = cat.effective_answer if cat.category == "useful" else NONE_SENTINEL
        records.append(TaskRecord(
            task="QRACI",
            example_id=cat.example_id,
            image=cat.image,
            decoder_input="",
            decoder_output=encode_target(
                cat.question, rationale_text(cat.rationale, counter), answer, counter),
        ))
    return records


def build_apraci(categorized: Iterable[CategorizedExample],
                 counter: TokenCounter = DEFAULT_COUNTER) -> list[TaskRecord]:
    """Answer-only records for crops whose rationale is relevant but not
    useful: the noisy rationale rides in the decoder input."""
    records = []
    for cat in categorized:
        if cat.category != "relevant-not-useful":
            continue
        records.append(TaskRecord(
            task="APRCI",
            example_id=cat.example_id,
            image=cat.image,
            decoder_input=_trim_input(
                cat.question, rationale_text(cat.rationale, counter), counter),
            decoder_output=_answer_only(cat.effective_answer, counter),
        ))
    return records


def build_qid(examples: Iterable[QAExample],
              counter: TokenCounter = DEFAULT_COUNTER) -> list[TaskRecord]:
    """Question-in-decoder baseline: "q <answer> a", no rationale."""
    return [TaskRecord(
        task="QID",
        example_id=ex.example_id,
        image=ex.image,
        decoder_input="",
        decoder_output=encode_target(ex.question, None, ex.canonical_answer, counter),
    ) for ex in examples]


def build_ans_only(examples: Iterable[QAExample],
                   counter: TokenCounter = DEFAULT_COUNTER) -> list[TaskRecord]:
    """Direct answer-prediction baseline."""
    return [TaskRecord(
        task="ANS_ONLY",
        example_id=ex.example_id,
        image=ex.image,
        decoder_input="",
        decoder_output=_answer_only(ex.canonical_answer, counter),
    ) for ex in examples]
