"""Shared domain types and line-delimited record serialization.

All types are immutable after construction and safe to share across
parallel workers. Stage files are UTF-8, one JSON object per line, LF
line endings, with a fixed field order so identical inputs always
produce byte-identical output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

NONE_SENTINEL = "None"

TASK_NAMES = ("QRA", "APR", "QRACI", "APRCI", "QID", "ANS_ONLY")

CATEGORIES = ("irrelevant", "relevant-not-useful", "useful")


def is_none_answer(text: str) -> bool:
    """True if `text` is the None sentinel (exact match after trimming)."""
    return text.strip() == NONE_SENTINEL


class MalformedRecord(ValueError):
    """A serialized record line violates the schema."""

    def __init__(self, reason: str, line_no: int = 0):
        super().__init__(f"line {line_no}: {reason}" if line_no else reason)
        self.reason = reason
        self.line_no = line_no


@dataclass(frozen=True)
class Crop:
    """A window along one axis of the parent image, in parent pixel coords."""

    axis: str  # "height" or "width"
    start: int
    end: int

    def __post_init__(self):
        if self.axis not in ("height", "width"):
            raise ValueError(f"bad crop axis {self.axis!r}")
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad crop window [{self.start}, {self.end})")


@dataclass(frozen=True)
class ImageRef:
    """Reference to an image: geometry plus an opaque id, no pixel data.

    When `crop` is set, it marks a window on the *parent* geometry; height
    and width stay those of the parent so downstream consumers apply the
    crop rectangle themselves.
    """

    id: str
    height: int
    width: int
    crop: Crop | None = None
    source_uri: str = ""

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError(f"image {self.id!r}: non-positive geometry")
        if self.crop is not None:
            extent = self.height if self.crop.axis == "height" else self.width
            if self.crop.end > extent:
                raise ValueError(
                    f"image {self.id!r}: crop end {self.crop.end} exceeds extent {extent}"
                )
            # full-size except for a clamped final window
            if self.crop.end - self.crop.start > min(self.height, self.width):
                raise ValueError(f"image {self.id!r}: crop larger than short edge")

    def to_json(self) -> dict:
        crop = None
        if self.crop is not None:
            crop = {"axis": self.crop.axis, "start": self.crop.start, "end": self.crop.end}
        return {
            "id": self.id,
            "height": self.height,
            "width": self.width,
            "crop": crop,
            "source_uri": self.source_uri,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ImageRef":
        crop = obj.get("crop")
        return cls(
            id=obj["id"],
            height=obj["height"],
            width=obj["width"],
            crop=Crop(crop["axis"], crop["start"], crop["end"]) if crop else None,
            source_uri=obj.get("source_uri", ""),
        )


@dataclass(frozen=True)
class OcrBox:
    """One recognized text span with its pixel bounding box."""

    text: str
    x0: int
    y0: int
    x1: int
    y1: int

    def to_json(self) -> list:
        return [self.text, self.x0, self.y0, self.x1, self.y1]

    @classmethod
    def from_json(cls, obj) -> "OcrBox":
        return cls(obj[0], obj[1], obj[2], obj[3], obj[4])


@dataclass(frozen=True)
class QAExample:
    """One (image, question, gold answers) record plus OCR text."""

    example_id: str
    image: ImageRef
    question: str
    gold_answers: tuple[str, ...]
    ocr_text: str = ""
    ocr_boxes: tuple[OcrBox, ...] | None = None
    structured_table: tuple[tuple[str, ...], ...] | None = None

    def __post_init__(self):
        if not self.gold_answers:
            raise ValueError(f"example {self.example_id!r}: empty gold_answers")
        for a in self.gold_answers:
            if is_none_answer(a):
                raise ValueError(
                    f"example {self.example_id!r}: gold answer collides with None sentinel"
                )
        if self.ocr_boxes:
            for b in self.ocr_boxes:
                if not (0 <= b.x0 <= b.x1 <= self.image.width
                        and 0 <= b.y0 <= b.y1 <= self.image.height):
                    raise ValueError(
                        f"example {self.example_id!r}: OCR box {b.text!r} outside image bounds"
                    )

    @property
    def canonical_answer(self) -> str:
        """First gold answer; the single `a` used by filtering and training."""
        return self.gold_answers[0]

    def to_json(self) -> dict:
        return {
            "example_id": self.example_id,
            "image": self.image.to_json(),
            "question": self.question,
            "gold_answers": list(self.gold_answers),
            "ocr_text": self.ocr_text,
            "ocr_boxes": [b.to_json() for b in self.ocr_boxes] if self.ocr_boxes is not None else None,
            "structured_table": [list(r) for r in self.structured_table]
            if self.structured_table is not None else None,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "QAExample":
        boxes = obj.get("ocr_boxes")
        table = obj.get("structured_table")
        return cls(
            example_id=obj["example_id"],
            image=ImageRef.from_json(obj["image"]),
            question=obj["question"],
            gold_answers=tuple(obj["gold_answers"]),
            ocr_text=obj.get("ocr_text", ""),
            ocr_boxes=tuple(OcrBox.from_json(b) for b in boxes) if boxes is not None else None,
            structured_table=tuple(tuple(r) for r in table) if table is not None else None,
        )


TEXT_EVIDENCE = "text_evidence"
TABLE_PROGRAM = "table_program"


@dataclass(frozen=True)
class Rationale:
    """Tagged union: OCR-derived text evidence, or table + program source.

    `flagged` marks table-program rationales whose program failed DSL
    validation; those are kept for answer-only training but excluded from
    rationale-prediction targets.
    """

    kind: str
    evidence: str = ""
    table: tuple[tuple[str, ...], ...] = ()
    program_source: str = ""
    origin: str = "tool"  # "tool" or "student"
    flagged: bool = False

    def __post_init__(self):
        if self.kind == TEXT_EVIDENCE:
            if self.table or self.program_source:
                raise ValueError("text-evidence rationale carries table/program fields")
        elif self.kind == TABLE_PROGRAM:
            if self.evidence:
                raise ValueError("table-program rationale carries evidence field")
        else:
            raise ValueError(f"bad rationale kind {self.kind!r}")
        if self.origin not in ("tool", "student"):
            raise ValueError(f"bad rationale origin {self.origin!r}")

    @classmethod
    def text(cls, evidence: str, origin: str = "tool") -> "Rationale":
        return cls(kind=TEXT_EVIDENCE, evidence=evidence, origin=origin)

    @classmethod
    def program(cls, table, program_source: str, origin: str = "tool",
                flagged: bool = False) -> "Rationale":
        return cls(kind=TABLE_PROGRAM, table=tuple(tuple(r) for r in table),
                   program_source=program_source, origin=origin, flagged=flagged)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "evidence": self.evidence,
            "table": [list(r) for r in self.table],
            "program_source": self.program_source,
            "origin": self.origin,
            "flagged": self.flagged,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Rationale":
        return cls(
            kind=obj["kind"],
            evidence=obj.get("evidence", ""),
            table=tuple(tuple(r) for r in obj.get("table", [])),
            program_source=obj.get("program_source", ""),
            origin=obj.get("origin", "tool"),
            flagged=obj.get("flagged", False),
        )


@dataclass(frozen=True)
class VerifierScores:
    """Audit record of the verifier calls behind one categorization."""

    logp_with: float
    logp_without: float
    greedy: str


@dataclass(frozen=True)
class CategorizedExample:
    """A (cropped image, rationale) pair with its filter category."""

    example_id: str
    question: str
    image: ImageRef
    rationale: Rationale
    category: str
    effective_answer: str
    scores: VerifierScores

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"bad category {self.category!r}")
        if (self.category == "irrelevant") != is_none_answer(self.effective_answer):
            raise ValueError("irrelevant category must pair with the None sentinel answer")

    def to_json(self) -> dict:
        return {
            "example_id": self.example_id,
            "question": self.question,
            "image": self.image.to_json(),
            "rationale": self.rationale.to_json(),
            "category": self.category,
            "effective_answer": self.effective_answer,
            "scores": {
                "logp_with": self.scores.logp_with,
                "logp_without": self.scores.logp_without,
                "greedy": self.scores.greedy,
            },
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CategorizedExample":
        s = obj["scores"]
        return cls(
            example_id=obj["example_id"],
            question=obj["question"],
            image=ImageRef.from_json(obj["image"]),
            rationale=Rationale.from_json(obj["rationale"]),
            category=obj["category"],
            effective_answer=obj["effective_answer"],
            scores=VerifierScores(s["logp_with"], s["logp_without"], s["greedy"]),
        )


@dataclass(frozen=True)
class TaskRecord:
    """One emitted training line for a student task."""

    task: str
    example_id: str
    image: ImageRef
    decoder_input: str
    decoder_output: str

    def __post_init__(self):
        if self.task not in TASK_NAMES:
            raise ValueError(f"unknown task {self.task!r}")
        input_free = self.task in ("QRA", "QRACI", "QID", "ANS_ONLY")
        if input_free and self.decoder_input:
            raise ValueError(f"task {self.task} must have empty decoder_input")
        if not input_free and not self.decoder_input:
            raise ValueError(f"task {self.task} requires a decoder_input")
        if not self.decoder_output:
            raise ValueError("decoder_output must be non-empty")


@dataclass(frozen=True)
class ScoredHypothesis:
    """One beam-search hypothesis: full decoded sequence plus probability."""

    decoded: str
    prob: float

    def __post_init__(self):
        if not self.prob > 0:
            raise ValueError("hypothesis probability must be > 0")


def _dumps(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def serialize_record(record: TaskRecord) -> str:
    """One deterministic line per task record, fixed field order."""
    return _dumps({
        "task": record.task,
        "example_id": record.example_id,
        "image": record.image.to_json(),
        "decoder_input": record.decoder_input,
        "decoder_output": record.decoder_output,
    })


def parse_record(line: str, line_no: int = 0) -> TaskRecord:
    """Inverse of serialize_record; raises MalformedRecord on schema violations."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise MalformedRecord(f"invalid JSON: {e}", line_no) from e
    if not isinstance(obj, dict):
        raise MalformedRecord("record is not an object", line_no)
    for key in ("task", "example_id", "image", "decoder_input", "decoder_output"):
        if key not in obj:
            raise MalformedRecord(f"missing field {key!r}", line_no)
    try:
        return TaskRecord(
            task=obj["task"],
            example_id=obj["example_id"],
            image=ImageRef.from_json(obj["image"]),
            decoder_input=obj["decoder_input"],
            decoder_output=obj["decoder_output"],
        )
    except (ValueError, KeyError, TypeError) as e:
        raise MalformedRecord(str(e), line_no) from e


def serialize_example(example: QAExample) -> str:
    return _dumps(example.to_json())


def parse_example(line: str, line_no: int = 0) -> QAExample:
    try:
        return QAExample.from_json(json.loads(line))
    except (ValueError, KeyError, TypeError) as e:
        raise MalformedRecord(str(e), line_no) from e


def serialize_categorized(cat: CategorizedExample) -> str:
    return _dumps(cat.to_json())


def parse_categorized(line: str, line_no: int = 0) -> CategorizedExample:
    try:
        return CategorizedExample.from_json(json.loads(line))
    except (ValueError, KeyError, TypeError) as e:
        raise MalformedRecord(str(e), line_no) from e


def write_lines(path, lines) -> None:
    """Write records as UTF-8 LF lines."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line)
            f.write("\n")


def read_lines(path):
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if line:
                yield line
