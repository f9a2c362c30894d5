"""Client interfaces for the external tools, with HTTP and mock backends.

Five tools sit behind these interfaces: OCR, an LLM summarizer (text
evidence), an LLM programmer (arithmetic programs), a plot-to-table
extractor, and a multimodal verifier used for filtering. Mocks are
table-driven from a fixtures mapping and fall back to deterministic
seed-derived outputs, so identical runs produce identical pipelines
without any network access.
"""

from __future__ import annotations

import hashlib
import logging
import math
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Protocol

import requests

from . import dsl
from .codec import DEFAULT_COUNTER, TokenCounter, encode_program_rationale
from .records import ImageRef, OcrBox, QAExample, Rationale

log = logging.getLogger(__name__)

EVIDENCE_TOKEN_LIMIT = 100
SUMMARIZER_SHOTS = 5
PROGRAMMER_SHOTS = 8
STUDENT_SAMPLES = 3

TEXT_EVIDENCE_FLOW = "text-evidence"
TABLE_PROGRAM_FLOW = "table-program"


class ToolFailure(RuntimeError):
    def __init__(self, tool: str, cause: str, attempts: int = 1):
        super().__init__(f"{tool}: {cause} (after {attempts} attempt(s))")
        self.tool = tool
        self.cause = cause
        self.attempts = attempts


class InvalidProgram(ValueError):
    """Programmer output failed DSL validation after all retries."""

    def __init__(self, source: str, table, attempts: int):
        super().__init__(f"invalid program after {attempts} attempts: {source!r}")
        self.source = source
        self.table = tuple(tuple(r) for r in table)
        self.attempts = attempts


class MissingBinding(KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name


@dataclass(frozen=True)
class PromptTemplate:
    """A few-shot prompt body with {question} {answer} {ocr} {table} slots."""

    name: str
    shot_count: int
    body: str


_PLACEHOLDER_RE = re.compile(r"\{(\w+)\}")


def render_prompt(template: PromptTemplate, bindings: dict) -> str:
    """Substitute every placeholder; exact substitution, nothing else."""

    def sub(m):
        name = m.group(1)
        if name not in bindings:
            raise MissingBinding(name)
        return str(bindings[name])

    return _PLACEHOLDER_RE.sub(sub, template.body)


def verifier_prompt(question: str, rationale: str | None = None) -> str:
    """Exact text-encoder input format of the verifier."""
    if rationale is not None:
        return f"{rationale} Answer in en: {question}"
    return f"Answer in en: {question}"


# ---------------------------------------------------------------------------
# client interfaces


class OcrClient(Protocol):
    def recognize(self, image: ImageRef) -> tuple[str, list[OcrBox]]: ...


class SummarizerClient(Protocol):
    def summarize(self, question: str, gold_answer: str, full_ocr: str,
                  template: PromptTemplate) -> str: ...


class ProgrammerClient(Protocol):
    def write_program(self, question: str, gold_answer: str, full_ocr: str,
                      table, template: PromptTemplate) -> str: ...


class PlotToTableClient(Protocol):
    def extract_table(self, image: ImageRef) -> list[list[str]]: ...


class VerifierClient(Protocol):
    def greedy_answer(self, image: ImageRef, question: str,
                      rationale: str | None = None) -> str: ...

    def answer_logprob(self, image: ImageRef, question: str, answer: str,
                       rationale: str | None = None) -> float: ...


class StudentRationaleClient(Protocol):
    train_folds: frozenset[int]

    def sample_rationales(self, image: ImageRef, question: str, n: int) -> list[str]: ...


@dataclass
class ToolClients:
    ocr: OcrClient | None = None
    summarizer: SummarizerClient | None = None
    programmer: ProgrammerClient | None = None
    plot_to_table: PlotToTableClient | None = None
    verifier: VerifierClient | None = None


@dataclass
class Templates:
    summarizer: PromptTemplate | None = None
    programmer: PromptTemplate | None = None


# ---------------------------------------------------------------------------
# rationale generation flows


def generate_rationale(example: QAExample, flow: str, clients: ToolClients,
                       templates: Templates, max_retries: int = 3,
                       counter: TokenCounter = DEFAULT_COUNTER) -> Rationale:
    """Run one of the two teacher flows for a single example.

    text-evidence: full OCR -> few-shot summarizer -> evidence span,
    truncated to 100 tokens. table-program: structured table (dataset or
    plot-to-table) + OCR -> few-shot programmer -> validated program
    source; InvalidProgram after `max_retries` failed attempts.
    """
    ocr_text = example.ocr_text
    if not ocr_text and clients.ocr is not None:
        ocr_text, _ = clients.ocr.recognize(example.image)

    if flow == TEXT_EVIDENCE_FLOW:
        evidence = clients.summarizer.summarize(
            example.question, example.canonical_answer, ocr_text, templates.summarizer)
        if counter.count(evidence) > EVIDENCE_TOKEN_LIMIT:
            evidence = counter.truncate(evidence, EVIDENCE_TOKEN_LIMIT)
        return Rationale.text(evidence)

    if flow == TABLE_PROGRAM_FLOW:
        table = example.structured_table
        if table is None:
            if clients.plot_to_table is None:
                raise ToolFailure("plot-to-table", "no structured table and no client")
            table = clients.plot_to_table.extract_table(example.image)
        source = ""
        for attempt in range(max_retries):
            source = clients.programmer.write_program(
                example.question, example.canonical_answer, ocr_text, table,
                templates.programmer)
            try:
                dsl.parse(source)
                return Rationale.program(table, source)
            except ValueError:
                log.warning("example %s: invalid program %r (attempt %d)",
                            example.example_id, source, attempt + 1)
        raise InvalidProgram(source, table, max_retries)

    raise ValueError(f"unknown flow {flow!r}")


def rationale_text(rationale: Rationale,
                   counter: TokenCounter = DEFAULT_COUNTER) -> str:
    """The rationale string as it appears in decoder sequences."""
    if rationale.kind == "text_evidence":
        return rationale.evidence
    return encode_program_rationale(rationale.table, rationale.program_source, counter)


# ---------------------------------------------------------------------------
# HTTP plumbing


@dataclass(frozen=True)
class RetryPolicy:
    timeout: float = 30.0
    max_retries: int = 3
    backoff: float = 0.5


class HttpEndpoint:
    """POST-JSON endpoint with retries, exponential backoff, and a shared
    concurrency limit across in-flight calls."""

    def __init__(self, url: str, policy: RetryPolicy = RetryPolicy(),
                 semaphore: threading.Semaphore | None = None,
                 headers: dict | None = None):
        self.url = url
        self.policy = policy
        self.semaphore = semaphore
        self.headers = headers or {}
        self._session = requests.Session()

    def call(self, payload: dict) -> dict:
        attempts = self.policy.max_retries + 1
        last = "no attempt made"
        for attempt in range(attempts):
            if attempt:
                time.sleep(self.policy.backoff * (2 ** (attempt - 1)))
            try:
                if self.semaphore is not None:
                    with self.semaphore:
                        resp = self._session.post(self.url, json=payload,
                                                  timeout=self.policy.timeout,
                                                  headers=self.headers)
                else:
                    resp = self._session.post(self.url, json=payload,
                                              timeout=self.policy.timeout,
                                              headers=self.headers)
            except requests.RequestException as e:
                last = str(e)
                log.warning("call to %s failed (attempt %d): %s", self.url, attempt + 1, e)
                continue
            if resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                log.warning("call to %s failed (attempt %d): %s", self.url, attempt + 1, last)
                continue
            if resp.status_code >= 400:
                raise ToolFailure(self.url, f"HTTP {resp.status_code}", attempt + 1)
            return resp.json()
        raise ToolFailure(self.url, last, attempts)


def http_call(endpoint: str, payload: dict, policy: RetryPolicy = RetryPolicy()) -> dict:
    """One-shot helper around HttpEndpoint.call."""
    return HttpEndpoint(endpoint, policy).call(payload)


class HttpSummarizerClient:
    def __init__(self, endpoint: HttpEndpoint):
        self.endpoint = endpoint

    def summarize(self, question, gold_answer, full_ocr, template):
        prompt = render_prompt(template, {
            "question": question, "answer": gold_answer, "ocr": full_ocr, "table": ""})
        return self.endpoint.call({"prompt": prompt, "temperature": 0.1})["text"]


class HttpProgrammerClient:
    def __init__(self, endpoint: HttpEndpoint):
        self.endpoint = endpoint

    def write_program(self, question, gold_answer, full_ocr, table, template):
        prompt = render_prompt(template, {
            "question": question, "answer": gold_answer, "ocr": full_ocr,
            "table": "\n".join(" | ".join(r) for r in table)})
        return self.endpoint.call({"prompt": prompt, "temperature": 0.1})["text"]


class HttpOcrClient:
    def __init__(self, endpoint: HttpEndpoint):
        self.endpoint = endpoint

    def recognize(self, image):
        out = self.endpoint.call({"image_id": image.id, "source_uri": image.source_uri})
        boxes = [OcrBox(*b) for b in out.get("boxes", [])]
        return out["text"], boxes


class HttpVerifierClient:
    def __init__(self, endpoint: HttpEndpoint):
        self.endpoint = endpoint

    def greedy_answer(self, image, question, rationale=None):
        out = self.endpoint.call({
            "image_id": image.id,
            "text_input": verifier_prompt(question, rationale),
            "mode": "greedy"})
        return out["answer"]

    def answer_logprob(self, image, question, answer, rationale=None):
        out = self.endpoint.call({
            "image_id": image.id,
            "text_input": verifier_prompt(question, rationale),
            "mode": "score", "answer": answer})
        return out["logprob"]


# ---------------------------------------------------------------------------
# deterministic mocks


def _unit(seed: int, *parts: str) -> float:
    """Stable pseudo-random float in (0, 1) derived from seed + parts."""
    h = hashlib.sha256(("\x1f".join((str(seed),) + parts)).encode("utf-8")).digest()
    return (int.from_bytes(h[:8], "big") + 1) / (2 ** 64 + 2)


@dataclass
class MockOcrClient:
    """Fixture-driven OCR; unknown images get synthesized stable text."""

    fixtures: dict = field(default_factory=dict)  # image id -> (text, boxes)
    seed: int = 0

    def recognize(self, image):
        if image.id in self.fixtures:
            text, boxes = self.fixtures[image.id]
            return text, [b if isinstance(b, OcrBox) else OcrBox(*b) for b in boxes]
        word = f"text{int(_unit(self.seed, 'ocr', image.id) * 1000)}"
        return word, [OcrBox(word, 0, 0, min(50, image.width), min(20, image.height))]


@dataclass
class MockSummarizerClient:
    fixtures: dict = field(default_factory=dict)  # (question, answer) -> evidence
    seed: int = 0

    def summarize(self, question, gold_answer, full_ocr, template):
        key = (question, gold_answer)
        if key in self.fixtures:
            return self.fixtures[key]
        # stable synthetic evidence mentioning the answer, like a real span
        return f"The document shows that the answer to this is {gold_answer}."


@dataclass
class MockProgrammerClient:
    fixtures: dict = field(default_factory=dict)  # (question, answer) -> program source
    seed: int = 0

    def write_program(self, question, gold_answer, full_ocr, table, template):
        key = (question, gold_answer)
        if key in self.fixtures:
            return self.fixtures[key]
        return f"Find({gold_answer})"


@dataclass
class MockPlotToTableClient:
    fixtures: dict = field(default_factory=dict)  # image id -> rows
    seed: int = 0

    def extract_table(self, image):
        if image.id in self.fixtures:
            return [list(r) for r in self.fixtures[image.id]]
        return [["label", "value"], [image.id, "1"]]


@dataclass
class MockVerifierClient:
    """Scores are pure functions of (seed, request); fixtures override.

    greedy fixture key: (image id, question, has_rationale) -> answer.
    logprob fixture key: (image id, question, answer, has_rationale) -> float.
    """

    greedy_fixtures: dict = field(default_factory=dict)
    logprob_fixtures: dict = field(default_factory=dict)
    seed: int = 0
    gold_by_question: dict = field(default_factory=dict)
    agreement_rate: float = 0.7

    def greedy_answer(self, image, question, rationale=None):
        key = (image.id, question, rationale is not None)
        if key in self.greedy_fixtures:
            return self.greedy_fixtures[key]
        gold = self.gold_by_question.get(question)
        u = _unit(self.seed, "greedy", image.id, question, str(rationale))
        if gold is not None and u < self.agreement_rate:
            return gold
        return f"wrong{int(u * 100)}"

    def answer_logprob(self, image, question, answer, rationale=None):
        key = (image.id, question, answer, rationale is not None)
        if key in self.logprob_fixtures:
            return self.logprob_fixtures[key]
        u = _unit(self.seed, "logprob", image.id, question, answer, str(rationale))
        return math.log(u)


@dataclass
class MockStudentClient:
    """Stable noisy paraphrases of the tool rationale, one per sample index."""

    train_folds: frozenset = frozenset()
    fixtures: dict = field(default_factory=dict)  # (image id, question) -> list of strings
    seed: int = 0

    def sample_rationales(self, image, question, n):
        key = (image.id, question)
        if key in self.fixtures:
            samples = self.fixtures[key]
            return list(samples)[:n]
        return [f"student evidence {i} for {image.id}" for i in range(n)]
