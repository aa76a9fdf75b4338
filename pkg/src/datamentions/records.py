"""Domain types, validation, and the canonical serialization contract.

Every stage of the pipeline exchanges the types defined here. The on-disk
format is line-delimited JSON (one entity per line, UTF-8, snake_case field
names). Serialization follows one rule everywhere: optional fields that are
absent are omitted on write, and on read the JSON ``null`` as well as the
literal strings ``"None"``/``"null"`` normalize to absent — prompts instruct
models to emit ``None`` for unknown values, and that token must never leak
into typed fields.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import (
    BadEnum,
    InvalidRecord,
    MissingField,
    ValidityCouplingViolation,
)
from .textnorm import normalize_tokens

CONTEXT_VALUES = ("primary", "supporting", "background")
SPECIFICITY_VALUES = ("properly_named", "descriptive_but_unnamed", "vague_generic")
RELEVANCE_VALUES = ("directly_relevant", "indirectly_relevant", "not_relevant")
SOURCE_CORPUS_VALUES = ("one_earth", "prwp", "other")

_DOC_ID = re.compile(r"^[0-9a-f]{40}$")
_ABSENT_STRINGS = frozenset({"", "none", "null"})


def is_doc_id(value: Any) -> bool:
    """True when ``value`` is a 40-character lowercase hex identifier."""
    return isinstance(value, str) and bool(_DOC_ID.match(value))


def clean_optional(value: Any) -> str | None:
    """Normalize an optional text field: null-ish values become absent."""
    if value is None:
        return None
    if not isinstance(value, str):
        value = str(value)
    if value.strip().lower() in _ABSENT_STRINGS:
        return None
    return value


def _require(payload: dict, key: str, where: str) -> Any:
    if key not in payload or payload[key] is None:
        raise MissingField(key, where)
    return payload[key]


def _coerce_int(value: Any, key: str, where: str) -> int:
    if isinstance(value, bool):
        raise InvalidRecord(f"{where}: field {key!r} must be an integer, got {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, str) and value.strip().isdigit():
        return int(value.strip())
    raise InvalidRecord(f"{where}: field {key!r} must be an integer, got {value!r}")


def _coerce_bool(value: Any, key: str, where: str) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in ("true", "false"):
        return value.strip().lower() == "true"
    raise InvalidRecord(f"{where}: field {key!r} must be a boolean, got {value!r}")


# ---------------------------------------------------------------------------
# documents and pages


@dataclass(frozen=True)
class DocumentRecord:
    """A paper located through the scholarly metadata index."""

    doc_id: str
    title: str
    source_corpus: str = "other"
    year: int | None = None
    is_open_access: bool = False
    pdf_url: str | None = None
    citation_count: int | None = None

    def __post_init__(self) -> None:
        if not is_doc_id(self.doc_id):
            raise InvalidRecord(f"doc_id must be 40 lowercase hex chars, got {self.doc_id!r}")
        if not self.title or not self.title.strip():
            raise InvalidRecord("document title must be non-empty")
        if self.source_corpus not in SOURCE_CORPUS_VALUES:
            raise BadEnum("source_corpus", self.source_corpus)
        if self.citation_count is not None and self.citation_count < 0:
            raise InvalidRecord("citation_count must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "doc_id": self.doc_id,
            "title": self.title,
            "source_corpus": self.source_corpus,
            "is_open_access": self.is_open_access,
        }
        if self.year is not None:
            d["year"] = self.year
        if self.pdf_url is not None:
            d["pdf_url"] = self.pdf_url
        if self.citation_count is not None:
            d["citation_count"] = self.citation_count
        return d

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "DocumentRecord":
        where = "document record"
        year = payload.get("year")
        citations = payload.get("citation_count")
        return cls(
            doc_id=_require(payload, "doc_id", where),
            title=_require(payload, "title", where),
            source_corpus=payload.get("source_corpus") or "other",
            year=None if year is None else _coerce_int(year, "year", where),
            is_open_access=_coerce_bool(payload.get("is_open_access", False), "is_open_access", where),
            pdf_url=clean_optional(payload.get("pdf_url")),
            citation_count=None if citations is None else _coerce_int(citations, "citation_count", where),
        )


@dataclass(frozen=True)
class PageRecord:
    """One physical page of text from a document."""

    doc_id: str
    page_number: int
    text: str

    def __post_init__(self) -> None:
        if not isinstance(self.page_number, int) or self.page_number < 1:
            raise InvalidRecord(f"page_number must be >= 1, got {self.page_number!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"doc_id": self.doc_id, "page_number": self.page_number, "text": self.text}

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "PageRecord":
        where = "page record"
        return cls(
            doc_id=_require(payload, "doc_id", where),
            page_number=_coerce_int(_require(payload, "page_number", where), "page_number", where),
            text=str(payload["text"]) if "text" in payload and payload["text"] is not None
            else _require(payload, "text", where),
        )


# ---------------------------------------------------------------------------
# mentions


@dataclass(frozen=True)
class DatasetMention:
    """One extracted dataset mention.

    Deliberately constructible with out-of-range values: model output must be
    representable before it can be judged, so enforcement lives in
    :func:`validate_mention` and in the strict parsers, not in the constructor.
    """

    raw_name: str
    mentioned_in: str
    harmonized_name: str | None = None
    acronym: str | None = None
    producer: str | None = None
    year: str | None = None
    data_type: str | None = None
    context: str | None = None
    specificity: str | None = None
    relevance: str | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"raw_name": self.raw_name}
        for key in ("harmonized_name", "acronym", "producer", "year", "data_type",
                    "context", "specificity", "relevance"):
            value = getattr(self, key)
            if value is not None:
                d[key] = value
        d["mentioned_in"] = self.mentioned_in
        return d

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "DatasetMention":
        return cls(
            raw_name=str(_require(payload, "raw_name", "dataset mention")),
            mentioned_in=str(_require(payload, "mentioned_in", "dataset mention")),
            harmonized_name=clean_optional(payload.get("harmonized_name")),
            acronym=clean_optional(payload.get("acronym")),
            producer=clean_optional(payload.get("producer")),
            year=clean_optional(payload.get("year")),
            data_type=clean_optional(payload.get("data_type")),
            context=clean_optional(payload.get("context")),
            specificity=clean_optional(payload.get("specificity")),
            relevance=clean_optional(payload.get("relevance")),
        )


def validate_mention(mention: DatasetMention) -> list[str]:
    """Return the list of invariant violations for ``mention`` (empty = ok).

    Total over all constructible mentions; never raises.
    """
    violations: list[str] = []
    if not mention.raw_name or not mention.raw_name.strip():
        violations.append("raw_name empty")
    if not mention.mentioned_in or not mention.mentioned_in.strip():
        violations.append("mentioned_in empty")
    if mention.context is not None and mention.context not in CONTEXT_VALUES:
        violations.append(f"unknown context value {mention.context!r}")
    if mention.specificity is not None and mention.specificity not in SPECIFICITY_VALUES:
        violations.append(f"unknown specificity value {mention.specificity!r}")
    if mention.relevance is not None and mention.relevance not in RELEVANCE_VALUES:
        violations.append(f"unknown relevance value {mention.relevance!r}")
    return violations


@dataclass(frozen=True)
class MentionBlock:
    """Dataset mentions that share one source sentence on one page."""

    mentioned_in: str
    datasets: tuple[DatasetMention, ...]
    source: str
    page: int

    def __post_init__(self) -> None:
        if not is_doc_id(self.source):
            raise InvalidRecord(f"block source must be a doc_id, got {self.source!r}")
        if not isinstance(self.page, int) or self.page < 1:
            raise InvalidRecord(f"block page must be >= 1, got {self.page!r}")
        if not isinstance(self.datasets, tuple):
            object.__setattr__(self, "datasets", tuple(self.datasets))

    def to_dict(self) -> dict[str, Any]:
        return {
            "mentioned_in": self.mentioned_in,
            "datasets": [m.to_dict() for m in self.datasets],
            "source": self.source,
            "page": self.page,
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "MentionBlock":
        where = "mention block"
        raw = _require(payload, "datasets", where)
        if not isinstance(raw, list):
            raise InvalidRecord(f"{where}: 'datasets' must be a list")
        return cls(
            mentioned_in=str(_require(payload, "mentioned_in", where)),
            datasets=tuple(DatasetMention.from_dict(d) for d in raw),
            source=str(_require(payload, "source", where)),
            page=_coerce_int(_require(payload, "page", where), "page", where),
        )


_MENTION_FIELDS = frozenset(f.name for f in fields(DatasetMention))
_BLOCK_FIELDS = frozenset(("mentioned_in", "datasets", "source", "page"))
_ENUM_SETS = {
    "context": CONTEXT_VALUES,
    "specificity": SPECIFICITY_VALUES,
    "relevance": RELEVANCE_VALUES,
}


def _parse_mention_payload(
    payload: dict[str, Any],
    block_sentence: str,
    warnings: list[str],
) -> DatasetMention:
    if not isinstance(payload, dict):
        raise InvalidRecord(f"dataset entry must be an object, got {type(payload).__name__}")
    raw_name = _require(payload, "raw_name", "dataset entry")
    kwargs: dict[str, Any] = {
        "raw_name": str(raw_name),
        "mentioned_in": str(payload.get("mentioned_in") or block_sentence),
    }
    for key in ("harmonized_name", "acronym", "producer", "year", "data_type"):
        kwargs[key] = clean_optional(payload.get(key))
    for key, allowed in _ENUM_SETS.items():
        value = clean_optional(payload.get(key))
        if value is not None and value not in allowed:
            raise BadEnum(key, value)
        kwargs[key] = value
    for key in payload:
        if key not in _MENTION_FIELDS:
            warnings.append(f"unknown dataset field {key!r} ignored")
    return DatasetMention(**kwargs)


def parse_mention_block(payload: Any) -> tuple[MentionBlock, list[str]]:
    """Strictly parse a structured value into a :class:`MentionBlock`.

    Missing optional fields become absent; unknown extra fields are ignored
    but reported in the returned warning list. Raises :class:`MissingField`
    for absent required fields and :class:`BadEnum` for out-of-range labels.
    """
    if not isinstance(payload, dict):
        raise InvalidRecord(f"mention block must be an object, got {type(payload).__name__}")
    warnings: list[str] = []
    sentence = str(_require(payload, "mentioned_in", "mention block"))
    raw_datasets = _require(payload, "datasets", "mention block")
    if not isinstance(raw_datasets, list):
        raise InvalidRecord("mention block: 'datasets' must be a list")
    datasets = tuple(
        _parse_mention_payload(entry, sentence, warnings) for entry in raw_datasets
    )
    for key in payload:
        if key not in _BLOCK_FIELDS:
            warnings.append(f"unknown block field {key!r} ignored")
    block = MentionBlock(
        mentioned_in=sentence,
        datasets=datasets,
        source=str(_require(payload, "source", "mention block")),
        page=_coerce_int(_require(payload, "page", "mention block"), "page", "mention block"),
    )
    return block, warnings


# ---------------------------------------------------------------------------
# judgments and assessments


@dataclass(frozen=True)
class JudgeVerdict:
    """One validity ruling from the judge stage, order-aligned to a block."""

    raw_name: str
    valid: bool
    reason: str
    inferred_year: str | None = None
    inferred_producer: str | None = None
    inferred_data_type: str | None = None

    def __post_init__(self) -> None:
        if not self.reason or not self.reason.strip():
            raise InvalidRecord("verdict reason must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"raw_name": self.raw_name, "valid": self.valid, "reason": self.reason}
        for key in ("inferred_year", "inferred_producer", "inferred_data_type"):
            value = getattr(self, key)
            if value is not None:
                d[key] = value
        return d

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "JudgeVerdict":
        where = "judge verdict"
        return cls(
            raw_name=str(_require(payload, "raw_name", where)),
            valid=_coerce_bool(_require(payload, "valid", where), "valid", where),
            reason=str(_require(payload, "reason", where)),
            inferred_year=clean_optional(payload.get("inferred_year")),
            inferred_producer=clean_optional(payload.get("inferred_producer")),
            inferred_data_type=clean_optional(payload.get("inferred_data_type")),
        )


@dataclass(frozen=True)
class AgentAssessment:
    """The reasoning agent's final ruling on one mention.

    Construction enforces the validity coupling: an invalid mention carries
    null labels and a non-empty reason; a valid one carries both labels.
    """

    mention: DatasetMention
    valid: bool
    invalid_reason: str | None = None
    specificity: str | None = None
    context: str | None = None

    def __post_init__(self) -> None:
        if self.valid:
            if self.specificity is None or self.context is None:
                raise ValidityCouplingViolation(
                    "valid assessment must carry specificity and context labels"
                )
        else:
            if self.specificity is not None or self.context is not None:
                raise ValidityCouplingViolation(
                    "invalid assessment must carry null specificity and context"
                )
            if not self.invalid_reason or not self.invalid_reason.strip():
                raise ValidityCouplingViolation(
                    "invalid assessment must carry a non-empty invalid_reason"
                )
        if self.specificity is not None and self.specificity not in SPECIFICITY_VALUES:
            raise BadEnum("specificity", self.specificity)
        if self.context is not None and self.context not in CONTEXT_VALUES:
            raise BadEnum("context", self.context)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "mention": self.mention.to_dict(),
            "valid": self.valid,
            "specificity": self.specificity,
            "context": self.context,
        }
        if self.invalid_reason is not None:
            d["invalid_reason"] = self.invalid_reason
        return d

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "AgentAssessment":
        where = "agent assessment"
        return cls(
            mention=DatasetMention.from_dict(_require(payload, "mention", where)),
            valid=_coerce_bool(_require(payload, "valid", where), "valid", where),
            invalid_reason=clean_optional(payload.get("invalid_reason")),
            specificity=clean_optional(payload.get("specificity")),
            context=clean_optional(payload.get("context")),
        )


# ---------------------------------------------------------------------------
# evaluation-side records


@dataclass(frozen=True)
class GroundTruthRecord:
    """Gold dataset names for one page, possibly with per-name labels."""

    doc_id: str
    page_number: int
    gold_names: tuple[str, ...]
    labels: dict[str, dict[str, str]] | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.gold_names, tuple):
            object.__setattr__(self, "gold_names", tuple(self.gold_names))
        seen: set[frozenset[str]] = set()
        for name in self.gold_names:
            tokens = normalize_tokens(name)
            if tokens in seen:
                raise InvalidRecord(
                    f"gold name {name!r} duplicates another after token normalization"
                )
            seen.add(tokens)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "doc_id": self.doc_id,
            "page_number": self.page_number,
            "gold_names": list(self.gold_names),
        }
        if self.labels is not None:
            d["labels"] = self.labels
        return d

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "GroundTruthRecord":
        where = "ground truth record"
        names = _require(payload, "gold_names", where)
        if not isinstance(names, list):
            raise InvalidRecord(f"{where}: 'gold_names' must be a list")
        return cls(
            doc_id=str(_require(payload, "doc_id", where)),
            page_number=_coerce_int(_require(payload, "page_number", where), "page_number", where),
            gold_names=tuple(str(n) for n in names),
            labels=payload.get("labels"),
        )


@dataclass(frozen=True)
class PredictionRecord:
    """Predicted dataset names for one page."""

    doc_id: str
    page_number: int
    predicted_names: tuple[str, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.predicted_names, tuple):
            object.__setattr__(self, "predicted_names", tuple(self.predicted_names))

    def to_dict(self) -> dict[str, Any]:
        return {
            "doc_id": self.doc_id,
            "page_number": self.page_number,
            "predicted_names": list(self.predicted_names),
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "PredictionRecord":
        where = "prediction record"
        names = _require(payload, "predicted_names", where)
        if not isinstance(names, list):
            raise InvalidRecord(f"{where}: 'predicted_names' must be a list")
        return cls(
            doc_id=str(_require(payload, "doc_id", where)),
            page_number=_coerce_int(_require(payload, "page_number", where), "page_number", where),
            predicted_names=tuple(str(n) for n in names),
        )


# ---------------------------------------------------------------------------
# line-delimited I/O


def canonical_json(value: Any) -> str:
    """Pretty canonical JSON used when a record travels inside a prompt."""
    return json.dumps(value, ensure_ascii=False, indent=2)


def dumps_line(value: Any) -> str:
    """Compact single-line JSON used for line-delimited record files."""
    return json.dumps(value, ensure_ascii=False, separators=(", ", ": "))


def write_jsonl(path: str | Path, rows: Iterable[dict[str, Any]]) -> int:
    """Write ``rows`` as one JSON object per line; returns the row count."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(dumps_line(row) + "\n")
            count += 1
    return count


def read_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    """Yield one parsed object per non-blank line of ``path``."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


__all__ = [
    "AgentAssessment",
    "CONTEXT_VALUES",
    "DatasetMention",
    "DocumentRecord",
    "GroundTruthRecord",
    "JudgeVerdict",
    "MentionBlock",
    "PageRecord",
    "PredictionRecord",
    "RELEVANCE_VALUES",
    "SOURCE_CORPUS_VALUES",
    "SPECIFICITY_VALUES",
    "canonical_json",
    "clean_optional",
    "dumps_line",
    "is_doc_id",
    "parse_mention_block",
    "read_jsonl",
    "validate_mention",
    "write_jsonl",
]
