"""Three-stage weak supervision with checkpointed, resumable orchestration.

Stage ``extract`` turns raw page text into mention blocks, ``judge`` rules
on each mention's validity, and ``reason`` runs a devil's-advocate review
that may override the judge. Only judge-valid mentions reach the reasoner.
Every stage appends to its own output file and records per-item progress in
a checkpoint, so an interrupted run resumes without repeating a single
backend call and reproduces the uninterrupted output byte for byte. Items
that keep failing after the per-item retry budget are quarantined to a
dead-letter file rather than blocking the run.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from .errors import (
    ArityMismatch,
    BackendError,
    BadEnum,
    DataMentionsError,
    InvalidRecord,
    MalformedResponse,
    MissingField,
    MultiplePayloads,
    NoPayloadFound,
    ParseError,
    PipelineInterrupted,
    ValidityCouplingViolation,
)
from .llm import (
    ChatBackend,
    ChatRequest,
    DEFAULT_MODEL,
    PromptTemplate,
    extract_json_payload,
    load_templates,
    request_digest,
)
from .records import (
    DatasetMention,
    JudgeVerdict,
    AgentAssessment,
    MentionBlock,
    PageRecord,
    canonical_json,
    clean_optional,
    dumps_line,
    parse_mention_block,
    read_jsonl,
    validate_mention,
    CONTEXT_VALUES,
    SPECIFICITY_VALUES,
)

log = logging.getLogger(__name__)

STAGES = ("extract", "judge", "reason")
STAGE_TEMPLATE = {"extract": "extractor", "judge": "judge", "reason": "reasoner"}

# Item-level failures that quarantine one item after the retry budget;
# anything else (network exhaustion, unscripted mocks) aborts the run.
_POISON_ERRORS = (
    ParseError,
    NoPayloadFound,
    MultiplePayloads,
    ArityMismatch,
    ValidityCouplingViolation,
    MissingField,
    BadEnum,
    InvalidRecord,
    BackendError,
    MalformedResponse,
)

__all__ = [
    "PipelineStats",
    "StageCheckpoint",
    "StagePlan",
    "compute_stats",
    "export_finetune_records",
    "extract_mentions",
    "judge_mentions",
    "plan_pipeline",
    "reason_mentions",
    "run_pipeline",
    "STAGES",
]


# ---------------------------------------------------------------------------
# stage operations


def _parse_stage_payload(text: str) -> Any:
    """Parse a stage reply: tags win when present, else bare, else fenced."""
    if "<OUTPUTDATA>" in text:
        return extract_json_payload(text, "tagged")
    try:
        return extract_json_payload(text, "bare")
    except (ParseError, NoPayloadFound) as bare_error:
        try:
            return extract_json_payload(text, "fenced")
        except NoPayloadFound:
            raise bare_error from None


def _request(
    template: PromptTemplate,
    user_content: str,
    model_name: str,
    temperature: float,
    max_output_tokens: int,
) -> ChatRequest:
    return ChatRequest(
        model_name=model_name,
        system_prompt=template.body,
        user_content=user_content,
        temperature=temperature,
        max_output_tokens=max_output_tokens,
    )


def _blocks_from_extractor_payload(
    payload: Any, doc_id: str, page_number: int
) -> list[MentionBlock]:
    """Assemble blocks from an extractor reply.

    The reply may be a flat array of mention objects (each carrying its own
    ``mentioned_in``), a single such object, block-shaped objects with a
    ``datasets`` array, or a wrapper object holding either list. Mentions
    are grouped by sentence; identical (raw_name, mentioned_in) duplicates
    collapse before judging.
    """
    if isinstance(payload, dict):
        for key in ("data_mentions", "mentions", "blocks", "extractions"):
            if isinstance(payload.get(key), list):
                payload = payload[key]
                break
        else:
            payload = [payload]
    if not isinstance(payload, list):
        raise InvalidRecord("extractor reply is neither an object nor an array")

    grouped: dict[str, list[dict]] = {}
    for item in payload:
        if not isinstance(item, dict):
            raise InvalidRecord("extractor reply entries must be objects")
        if isinstance(item.get("datasets"), list):
            sentence = str(item.get("mentioned_in") or "")
            entries = item["datasets"]
        else:
            sentence = str(item.get("mentioned_in") or "")
            entries = [item]
        if not sentence:
            raise MissingField("mentioned_in", "extractor reply entry")
        grouped.setdefault(sentence, []).extend(entries)

    blocks: list[MentionBlock] = []
    for sentence, entries in grouped.items():
        block, warnings = parse_mention_block(
            {
                "mentioned_in": sentence,
                "datasets": entries,
                "source": doc_id,
                "page": page_number,
            }
        )
        for warning in warnings:
            log.debug("extractor payload for %s p%d: %s", doc_id, page_number, warning)
        kept: list[DatasetMention] = []
        seen: set[tuple[str, str]] = set()
        for mention in block.datasets:
            violations = validate_mention(mention)
            if violations:
                log.warning(
                    "dropping invalid mention %r on %s p%d: %s",
                    mention.raw_name, doc_id, page_number, "; ".join(violations),
                )
                continue
            key = (mention.raw_name, mention.mentioned_in)
            if key in seen:
                log.info(
                    "collapsing duplicate mention %r on %s p%d",
                    mention.raw_name, doc_id, page_number,
                )
                continue
            seen.add(key)
            kept.append(mention)
        if kept:
            blocks.append(replace(block, datasets=tuple(kept)))
    return blocks


def extract_mentions(
    page: PageRecord,
    backend: ChatBackend,
    *,
    templates: Mapping[str, PromptTemplate] | None = None,
    model_name: str = DEFAULT_MODEL,
    temperature: float = 0.0,
    max_output_tokens: int = 4096,
) -> list[MentionBlock]:
    """Run the extraction stage on one page.

    Empty pages short-circuit to an empty list without a backend call.
    """
    if not page.text.strip():
        return []
    templates = templates or load_templates()
    response = backend.complete(
        _request(templates["extractor"], page.text, model_name, temperature, max_output_tokens)
    )
    payload = _parse_stage_payload(response.text)
    return _blocks_from_extractor_payload(payload, page.doc_id, page.page_number)


_VERDICT_LIST_KEYS = ("verdicts", "assessments", "results", "datasets")


def judge_mentions(
    block: MentionBlock,
    backend: ChatBackend,
    *,
    templates: Mapping[str, PromptTemplate] | None = None,
    model_name: str = DEFAULT_MODEL,
    temperature: float = 0.0,
    max_output_tokens: int = 4096,
) -> list[JudgeVerdict]:
    """Run the judge stage on one block; verdicts align with its datasets."""
    if not block.datasets:
        raise InvalidRecord("judge stage requires a block with at least one dataset")
    templates = templates or load_templates()
    user_content = canonical_json(block.to_dict())
    response = backend.complete(
        _request(templates["judge"], user_content, model_name, temperature, max_output_tokens)
    )
    payload = _parse_stage_payload(response.text)
    if isinstance(payload, dict):
        for key in _VERDICT_LIST_KEYS:
            if isinstance(payload.get(key), list):
                payload = payload[key]
                break
        else:
            raise InvalidRecord("judge reply carries no verdict list")
    if not isinstance(payload, list):
        raise InvalidRecord("judge reply is not a verdict list")
    if len(payload) != len(block.datasets):
        raise ArityMismatch(
            f"{len(payload)} verdicts for {len(block.datasets)} datasets"
        )

    verdicts: list[JudgeVerdict] = []
    for mention, entry in zip(block.datasets, payload):
        if not isinstance(entry, dict):
            raise InvalidRecord("judge verdict entries must be objects")
        if "valid" not in entry or entry["valid"] is None:
            raise MissingField("valid", "judge verdict")
        valid = entry["valid"]
        if isinstance(valid, str):
            if valid.strip().lower() not in ("true", "false"):
                raise InvalidRecord(f"judge verdict 'valid' is not boolean: {valid!r}")
            valid = valid.strip().lower() == "true"
        if not isinstance(valid, bool):
            raise InvalidRecord(f"judge verdict 'valid' is not boolean: {valid!r}")
        reason = entry.get("reason") or entry.get("explanation")
        if not reason or not str(reason).strip():
            raise MissingField("reason", "judge verdict")
        echoed = entry.get("raw_name")
        if echoed is not None and echoed != mention.raw_name:
            log.warning(
                "judge echoed raw_name %r for %r; keeping positional alignment",
                echoed, mention.raw_name,
            )
        verdicts.append(
            JudgeVerdict(
                raw_name=mention.raw_name,
                valid=valid,
                reason=str(reason),
                inferred_year=clean_optional(entry.get("inferred_year", entry.get("year"))),
                inferred_producer=clean_optional(
                    entry.get("inferred_producer", entry.get("producer"))
                ),
                inferred_data_type=clean_optional(
                    entry.get("inferred_data_type", entry.get("data_type"))
                ),
            )
        )
    return verdicts


_WHITESPACE = re.compile(r"\s+")


def _squash(text: str) -> str:
    return _WHITESPACE.sub(" ", text).strip()


def reason_mentions(
    block: MentionBlock,
    backend: ChatBackend,
    *,
    templates: Mapping[str, PromptTemplate] | None = None,
    model_name: str = DEFAULT_MODEL,
    temperature: float = 0.0,
    max_output_tokens: int = 4096,
) -> list[AgentAssessment]:
    """Run the reasoning agent on one block; one assessment per dataset.

    The reply is parsed strictly from the tagged payload. The agent's
    harmonized_name is kept only when it occurs inside the source sentence
    (compared with whitespace runs collapsed); raw_name and mentioned_in
    always come from the input block, which keeps them byte-identical to the
    extraction-stage values. A reply that marks a mention invalid yet keeps
    its labels is repaired by nulling the labels, with a logged warning.
    """
    if not block.datasets:
        raise InvalidRecord("reason stage requires a block with at least one dataset")
    templates = templates or load_templates()
    user_content = canonical_json(block.to_dict())
    response = backend.complete(
        _request(templates["reasoner"], user_content, model_name, temperature, max_output_tokens)
    )
    payload = extract_json_payload(response.text, "tagged")
    if isinstance(payload, dict):
        entries = payload.get("datasets")
        if entries is None:
            raise MissingField("datasets", "agent reply")
    else:
        entries = payload
    if not isinstance(entries, list):
        raise InvalidRecord("agent reply carries no dataset list")
    if len(entries) != len(block.datasets):
        raise ArityMismatch(
            f"{len(entries)} assessed datasets for {len(block.datasets)} inputs"
        )

    assessments: list[AgentAssessment] = []
    for mention, entry in zip(block.datasets, entries):
        if not isinstance(entry, dict):
            raise InvalidRecord("agent dataset entries must be objects")
        if "valid" not in entry or entry["valid"] is None:
            raise MissingField("valid", "agent dataset entry")
        valid = entry["valid"]
        if isinstance(valid, str):
            if valid.strip().lower() not in ("true", "false"):
                raise InvalidRecord(f"agent 'valid' is not boolean: {valid!r}")
            valid = valid.strip().lower() == "true"
        if not isinstance(valid, bool):
            raise InvalidRecord(f"agent 'valid' is not boolean: {valid!r}")

        specificity = clean_optional(entry.get("specificity"))
        if specificity is not None and specificity not in SPECIFICITY_VALUES:
            raise BadEnum("specificity", specificity)
        context = clean_optional(entry.get("context"))
        if context is not None and context not in CONTEXT_VALUES:
            raise BadEnum("context", context)
        invalid_reason = clean_optional(entry.get("invalid_reason"))

        if not valid and (specificity is not None or context is not None):
            log.warning(
                "agent marked %r invalid but kept labels; nulling them",
                mention.raw_name,
            )
            specificity = None
            context = None
        if not valid and invalid_reason is None:
            raise ValidityCouplingViolation(
                f"agent marked {mention.raw_name!r} invalid without a reason"
            )
        if valid and (specificity is None or context is None):
            raise ValidityCouplingViolation(
                f"agent kept {mention.raw_name!r} valid without both labels"
            )
        if valid:
            invalid_reason = None

        echoed = entry.get("raw_name")
        if echoed is not None and echoed != mention.raw_name:
            log.warning(
                "agent echoed raw_name %r for %r; keeping positional alignment",
                echoed, mention.raw_name,
            )

        updated = mention
        if "harmonized_name" in entry:
            harmonized = clean_optional(entry.get("harmonized_name"))
        else:
            harmonized = mention.harmonized_name
        if harmonized is not None and _squash(harmonized) not in _squash(mention.mentioned_in):
            log.info(
                "harmonized_name %r absent from the source sentence; removing it",
                harmonized,
            )
            harmonized = None
        updated = replace(updated, harmonized_name=harmonized)
        for source_key, attr in (
            ("acronym", "acronym"),
            ("producer", "producer"),
            ("year", "year"),
            ("data_type", "data_type"),
        ):
            if source_key in entry:
                updated = replace(updated, **{attr: clean_optional(entry[source_key])})

        assessments.append(
            AgentAssessment(
                mention=updated,
                valid=valid,
                invalid_reason=invalid_reason,
                specificity=specificity,
                context=context,
            )
        )
    return assessments


# ---------------------------------------------------------------------------
# checkpointing


@dataclass
class StageCheckpoint:
    """Per-stage resume bookkeeping: completed item keys and file offsets."""

    stage: str
    completed: set[str] = field(default_factory=set)
    output_offset: int = 0
    deadletter_offset: int = 0

    @classmethod
    def load(cls, stage: str, path: Path) -> "StageCheckpoint":
        ckpt = cls(stage=stage)
        if not path.exists():
            return ckpt
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                ckpt.completed.add(entry["key"])
                ckpt.output_offset = int(entry["out"])
                ckpt.deadletter_offset = int(entry["dead"])
        return ckpt


def _truncate(path: Path, size: int) -> None:
    if not path.exists():
        if size == 0:
            path.touch()
            return
        raise InvalidRecord(f"cannot resume: {path} is missing")
    with open(path, "r+b") as fh:
        fh.truncate(size)


class _StageWriter:
    """Append-only writer committing (output, dead-letter, checkpoint) per item."""

    def __init__(self, stage: str, out_path: Path, ckpt_path: Path, dead_path: Path):
        self.stage = stage
        self.out_path = out_path
        self.ckpt_path = ckpt_path
        self.dead_path = dead_path
        self.checkpoint = StageCheckpoint.load(stage, ckpt_path)
        if self.checkpoint.completed and not out_path.exists():
            log.warning(
                "%s: output file missing but checkpoint present; restarting stage",
                stage,
            )
            ckpt_path.unlink()
            self.checkpoint = StageCheckpoint(stage=stage)
        _truncate(out_path, self.checkpoint.output_offset)

    def __enter__(self) -> "_StageWriter":
        self._out = open(self.out_path, "a", encoding="utf-8")
        self._dead = open(self.dead_path, "a", encoding="utf-8")
        self._ckpt = open(self.ckpt_path, "a", encoding="utf-8")
        return self

    def __exit__(self, *exc_info: object) -> None:
        self._out.close()
        self._dead.close()
        self._ckpt.close()

    def is_done(self, key: str) -> bool:
        return key in self.checkpoint.completed

    def commit(self, key: str, out_lines: Sequence[str], dead_lines: Sequence[str] = ()) -> None:
        for line in out_lines:
            self._out.write(line + "\n")
        self._out.flush()
        for line in dead_lines:
            self._dead.write(line + "\n")
        self._dead.flush()
        self.checkpoint.output_offset = self._out.tell()
        self.checkpoint.deadletter_offset = self._dead.tell()
        self._ckpt.write(
            json.dumps(
                {
                    "key": key,
                    "out": self.checkpoint.output_offset,
                    "dead": self.checkpoint.deadletter_offset,
                }
            )
            + "\n"
        )
        self._ckpt.flush()
        self.checkpoint.completed.add(key)


# ---------------------------------------------------------------------------
# pipeline statistics


@dataclass(frozen=True)
class PipelineStats:
    pages_processed: int = 0
    blocks_extracted: int = 0
    mentions_extracted: int = 0
    mentions_judged_valid: int = 0
    mentions_agent_valid: int = 0
    retention_after_agent: float | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "pages_processed": self.pages_processed,
            "blocks_extracted": self.blocks_extracted,
            "mentions_extracted": self.mentions_extracted,
            "mentions_judged_valid": self.mentions_judged_valid,
            "mentions_agent_valid": self.mentions_agent_valid,
        }
        if self.retention_after_agent is not None:
            d["retention_after_agent"] = self.retention_after_agent
        return d

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "PipelineStats":
        return cls(
            pages_processed=int(payload.get("pages_processed", 0)),
            blocks_extracted=int(payload.get("blocks_extracted", 0)),
            mentions_extracted=int(payload.get("mentions_extracted", 0)),
            mentions_judged_valid=int(payload.get("mentions_judged_valid", 0)),
            mentions_agent_valid=int(payload.get("mentions_agent_valid", 0)),
            retention_after_agent=payload.get("retention_after_agent"),
        )


def compute_stats(output_dir: str | Path) -> PipelineStats:
    """Recompute statistics from whatever stage outputs exist on disk."""
    output_dir = Path(output_dir)
    pages = blocks = mentions = judged_valid = agent_valid = 0
    extracted = output_dir / "extracted.jsonl"
    if extracted.exists():
        for row in read_jsonl(extracted):
            pages += 1
            for block in row.get("blocks", []):
                blocks += 1
                mentions += len(block.get("datasets", []))
    judged = output_dir / "judged.jsonl"
    if judged.exists():
        for row in read_jsonl(judged):
            judged_valid += sum(1 for v in row.get("verdicts", []) if v.get("valid"))
    assessed = output_dir / "assessed.jsonl"
    if assessed.exists():
        for row in read_jsonl(assessed):
            agent_valid += sum(1 for a in row.get("assessments", []) if a.get("valid"))
    retention = agent_valid / judged_valid if judged_valid > 0 else None
    return PipelineStats(
        pages_processed=pages,
        blocks_extracted=blocks,
        mentions_extracted=mentions,
        mentions_judged_valid=judged_valid,
        mentions_agent_valid=agent_valid,
        retention_after_agent=retention,
    )


# ---------------------------------------------------------------------------
# pipeline orchestration


def _dead_line(stage: str, key: str, doc_id: str, page_number: int, exc: Exception) -> str:
    return dumps_line(
        {
            "stage": stage,
            "key": key,
            "doc_id": doc_id,
            "page_number": page_number,
            "error": type(exc).__name__,
            "detail": str(exc),
        }
    )


def _run_stage(
    stage: str,
    items: Sequence[tuple[str, str, int, Callable[[], list[str]]]],
    writer: _StageWriter,
    *,
    item_attempts: int,
    workers: int,
) -> None:
    """Run pending items in order; commit output or dead-letter per item.

    ``items`` carries (key, doc_id, page_number, produce) tuples where
    ``produce`` returns the stage's output lines for that item. Results are
    committed strictly in input order regardless of worker count, keeping
    output files deterministic.
    """
    pending = [item for item in items if not writer.is_done(item[0])]
    if not pending:
        return

    def attempt(item: tuple[str, str, int, Callable[[], list[str]]]):
        key, doc_id, page_number, produce = item
        last: Exception | None = None
        for _ in range(item_attempts):
            try:
                return produce(), None
            except _POISON_ERRORS as exc:
                last = exc
        return None, last

    if workers <= 1:
        outcomes = map(attempt, pending)
        for (key, doc_id, page_number, _), (lines, error) in zip(pending, outcomes):
            if error is not None:
                log.error("%s: quarantining %s after %d attempts: %s",
                          stage, key, item_attempts, error)
                writer.commit(key, [], [_dead_line(stage, key, doc_id, page_number, error)])
            else:
                writer.commit(key, lines)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for (key, doc_id, page_number, _), (lines, error) in zip(
                pending, pool.map(attempt, pending)
            ):
                if error is not None:
                    log.error("%s: quarantining %s after %d attempts: %s",
                              stage, key, item_attempts, error)
                    writer.commit(key, [], [_dead_line(stage, key, doc_id, page_number, error)])
                else:
                    writer.commit(key, lines)


def _enriched_mention(mention: DatasetMention, verdict: JudgeVerdict) -> DatasetMention:
    """Fill year/producer/data_type from the judge when the mention lacks them."""
    updates: dict[str, str] = {}
    if mention.year is None and verdict.inferred_year is not None:
        updates["year"] = verdict.inferred_year
    if mention.producer is None and verdict.inferred_producer is not None:
        updates["producer"] = verdict.inferred_producer
    if mention.data_type is None and verdict.inferred_data_type is not None:
        updates["data_type"] = verdict.inferred_data_type
    return replace(mention, **updates) if updates else mention


def run_pipeline(
    pages: Iterable[PageRecord],
    backend: ChatBackend,
    *,
    output_dir: str | Path,
    stages: Sequence[str] = STAGES,
    templates: Mapping[str, PromptTemplate] | None = None,
    model_name: str = DEFAULT_MODEL,
    temperature: float = 0.0,
    max_output_tokens: int = 4096,
    item_attempts: int = 3,
    workers: int = 1,
) -> PipelineStats:
    """Run the requested stages in order and return the resulting statistics.

    Stage boundaries are barriers: judge input is read back from the
    extraction output file, reason input from the judge output file. Every
    stage is independently checkpointed and resumable; rerunning a completed
    pipeline performs zero backend calls and rewrites nothing.
    """
    for stage in stages:
        if stage not in STAGES:
            raise InvalidRecord(f"unknown stage {stage!r}")
    stages = tuple(s for s in STAGES if s in stages)
    templates = templates or load_templates()
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = output_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    dead_path = output_dir / "deadletter.jsonl"

    # dead-letter truncation must look across stages: the file interleaves
    # their quarantines in stage order, so the high-water mark is the max
    # recorded offset over all checkpoints
    dead_base = 0
    for stage in STAGES:
        ckpt = StageCheckpoint.load(stage, ckpt_dir / f"{stage}.ckpt")
        dead_base = max(dead_base, ckpt.deadletter_offset)
    if dead_path.exists() or dead_base:
        _truncate(dead_path, dead_base)
    else:
        dead_path.touch()

    stage_kwargs = {
        "templates": templates,
        "model_name": model_name,
        "temperature": temperature,
        "max_output_tokens": max_output_tokens,
    }

    def guarded(run_stages: Callable[[], None]) -> None:
        try:
            run_stages()
        except _POISON_ERRORS:
            raise  # poison errors are handled per item; reaching here is a bug
        except DataMentionsError as exc:
            progressed = any(
                StageCheckpoint.load(s, ckpt_dir / f"{s}.ckpt").completed for s in STAGES
            )
            raise PipelineInterrupted(
                f"pipeline stopped during a stage: {exc}", cause=exc, progressed=progressed
            ) from exc

    if "extract" in stages:
        page_list = sorted(pages, key=lambda p: (p.doc_id, p.page_number))
        writer = _StageWriter(
            "extract", output_dir / "extracted.jsonl", ckpt_dir / "extract.ckpt", dead_path
        )

        def extract_item(page: PageRecord) -> Callable[[], list[str]]:
            def produce() -> list[str]:
                blocks = extract_mentions(page, backend, **stage_kwargs)
                return [
                    dumps_line(
                        {
                            "doc_id": page.doc_id,
                            "page_number": page.page_number,
                            "blocks": [b.to_dict() for b in blocks],
                        }
                    )
                ]
            return produce

        items = [
            (
                f"{p.doc_id}:{p.page_number}:{request_digest('extractor', p.text)}",
                p.doc_id,
                p.page_number,
                extract_item(p),
            )
            for p in page_list
        ]
        with writer:
            guarded(lambda: _run_stage(
                "extract", items, writer, item_attempts=item_attempts, workers=workers
            ))

    if "judge" in stages:
        extracted_path = output_dir / "extracted.jsonl"
        if not extracted_path.exists():
            raise InvalidRecord("judge stage requires the extraction output; run extract first")
        writer = _StageWriter(
            "judge", output_dir / "judged.jsonl", ckpt_dir / "judge.ckpt", dead_path
        )

        def judge_item(block: MentionBlock) -> Callable[[], list[str]]:
            def produce() -> list[str]:
                verdicts = judge_mentions(block, backend, **stage_kwargs)
                return [
                    dumps_line(
                        {
                            "block": block.to_dict(),
                            "verdicts": [v.to_dict() for v in verdicts],
                        }
                    )
                ]
            return produce

        items = []
        for row in read_jsonl(extracted_path):
            for block_payload in row.get("blocks", []):
                block = MentionBlock.from_dict(block_payload)
                if not block.datasets:
                    continue
                digest = request_digest("judge", canonical_json(block.to_dict()))
                items.append(
                    (
                        f"{block.source}:{block.page}:{digest}",
                        block.source,
                        block.page,
                        judge_item(block),
                    )
                )
        with writer:
            guarded(lambda: _run_stage(
                "judge", items, writer, item_attempts=item_attempts, workers=workers
            ))

    if "reason" in stages:
        judged_path = output_dir / "judged.jsonl"
        if not judged_path.exists():
            raise InvalidRecord("reason stage requires the judge output; run judge first")
        writer = _StageWriter(
            "reason", output_dir / "assessed.jsonl", ckpt_dir / "reason.ckpt", dead_path
        )

        def reason_item(block: MentionBlock) -> Callable[[], list[str]]:
            def produce() -> list[str]:
                assessments = reason_mentions(block, backend, **stage_kwargs)
                return [
                    dumps_line(
                        {
                            "block": block.to_dict(),
                            "assessments": [a.to_dict() for a in assessments],
                        }
                    )
                ]
            return produce

        items = []
        for row in read_jsonl(judged_path):
            block = MentionBlock.from_dict(row["block"])
            verdicts = [JudgeVerdict.from_dict(v) for v in row.get("verdicts", [])]
            survivors = tuple(
                _enriched_mention(m, v)
                for m, v in zip(block.datasets, verdicts)
                if v.valid
            )
            if not survivors:
                continue
            survivor_block = replace(block, datasets=survivors)
            digest = request_digest("reasoner", canonical_json(survivor_block.to_dict()))
            items.append(
                (
                    f"{block.source}:{block.page}:{digest}",
                    block.source,
                    block.page,
                    reason_item(survivor_block),
                )
            )
        with writer:
            guarded(lambda: _run_stage(
                "reason", items, writer, item_attempts=item_attempts, workers=workers
            ))

    stats = compute_stats(output_dir)
    stats_path = output_dir / "stats.json"
    stats_path.write_text(
        json.dumps(stats.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    return stats


@dataclass(frozen=True)
class StagePlan:
    """What one stage would do if run now."""

    stage: str
    pending: int | None  # None when the stage's input does not exist yet
    backend_calls: int | None


def plan_pipeline(
    pages: Iterable[PageRecord],
    *,
    output_dir: str | Path,
    stages: Sequence[str] = STAGES,
) -> list[StagePlan]:
    """Describe pending work per stage without touching any backend.

    Mirrors the item enumeration of :func:`run_pipeline`: completed
    checkpoint keys are excluded, and stages whose input file has not been
    produced yet report unknown amounts.
    """
    stages = tuple(s for s in STAGES if s in stages)
    output_dir = Path(output_dir)
    ckpt_dir = output_dir / "checkpoints"
    plans: list[StagePlan] = []

    if "extract" in stages:
        ckpt = StageCheckpoint.load("extract", ckpt_dir / "extract.ckpt")
        pending = calls = 0
        for page in sorted(pages, key=lambda p: (p.doc_id, p.page_number)):
            key = f"{page.doc_id}:{page.page_number}:{request_digest('extractor', page.text)}"
            if key in ckpt.completed:
                continue
            pending += 1
            if page.text.strip():
                calls += 1
        plans.append(StagePlan(stage="extract", pending=pending, backend_calls=calls))

    if "judge" in stages:
        extracted_path = output_dir / "extracted.jsonl"
        if not extracted_path.exists():
            plans.append(StagePlan(stage="judge", pending=None, backend_calls=None))
        else:
            ckpt = StageCheckpoint.load("judge", ckpt_dir / "judge.ckpt")
            pending = 0
            for row in read_jsonl(extracted_path):
                for block_payload in row.get("blocks", []):
                    block = MentionBlock.from_dict(block_payload)
                    if not block.datasets:
                        continue
                    digest = request_digest("judge", canonical_json(block.to_dict()))
                    if f"{block.source}:{block.page}:{digest}" not in ckpt.completed:
                        pending += 1
            plans.append(StagePlan(stage="judge", pending=pending, backend_calls=pending))

    if "reason" in stages:
        judged_path = output_dir / "judged.jsonl"
        if not judged_path.exists():
            plans.append(StagePlan(stage="reason", pending=None, backend_calls=None))
        else:
            ckpt = StageCheckpoint.load("reason", ckpt_dir / "reason.ckpt")
            pending = 0
            for row in read_jsonl(judged_path):
                block = MentionBlock.from_dict(row["block"])
                verdicts = [JudgeVerdict.from_dict(v) for v in row.get("verdicts", [])]
                survivors = tuple(
                    _enriched_mention(m, v)
                    for m, v in zip(block.datasets, verdicts)
                    if v.valid
                )
                if not survivors:
                    continue
                survivor_block = replace(block, datasets=survivors)
                digest = request_digest("reasoner", canonical_json(survivor_block.to_dict()))
                if f"{block.source}:{block.page}:{digest}" not in ckpt.completed:
                    pending += 1
            plans.append(StagePlan(stage="reason", pending=pending, backend_calls=pending))

    return plans


# ---------------------------------------------------------------------------
# fine-tuning export

DEFAULT_INSTRUCTION_PREAMBLE = (
    "Identify and extract all dataset mentions from the following page of a "
    "document. Return a JSON array of dataset mention objects; return [] if "
    "the page mentions no datasets."
)


def export_finetune_records(
    pages: Iterable[PageRecord],
    assessed: str | Path | Iterable[Mapping[str, Any]],
    out_path: str | Path,
    split_tag: str | None = None,
    *,
    instruction_preamble: str = DEFAULT_INSTRUCTION_PREAMBLE,
) -> int:
    """Write one instruction/response record per page.

    The instruction frames the page text as an extraction task; the
    response is the serialized list of agent-valid mentions, with the
    agent's final labels applied — an empty array for mention-free pages.
    Returns the number of records written.
    """
    rows = assessed if not isinstance(assessed, (str, Path)) else read_jsonl(assessed)
    valid_by_page: dict[tuple[str, int], list[dict[str, Any]]] = {}
    for row in rows:
        block = row["block"]
        key = (block["source"], int(block["page"]))
        for assessment in row.get("assessments", []):
            if not assessment.get("valid"):
                continue
            mention = dict(assessment["mention"])
            mention["specificity"] = assessment.get("specificity")
            mention["context"] = assessment.get("context")
            valid_by_page.setdefault(key, []).append(mention)

    count = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for page in sorted(pages, key=lambda p: (p.doc_id, p.page_number)):
            mentions = valid_by_page.get((page.doc_id, page.page_number), [])
            record: dict[str, Any] = {
                "instruction": f"{instruction_preamble}\n\n{page.text}",
                "response": json.dumps(mentions, ensure_ascii=False),
            }
            if split_tag is not None:
                record["split"] = split_tag
            fh.write(dumps_line(record) + "\n")
            count += 1
    return count
