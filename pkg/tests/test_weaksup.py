from __future__ import annotations

import json

import pytest

from datamentions import (
    ArityMismatch,
    ChatRequest,
    MentionBlock,
    PageRecord,
    PipelineInterrupted,
    RetriesExhausted,
    ValidityCouplingViolation,
    export_finetune_records,
    extract_mentions,
    judge_mentions,
    mock_backend,
    plan_pipeline,
    reason_mentions,
    request_digest,
    run_pipeline,
)
from datamentions.errors import MissingField
from datamentions.records import canonical_json, parse_mention_block, read_jsonl
from datamentions.weaksup import STAGES, compute_stats
from pipeline_fixtures import (
    block_for as _block_for,
    judge_response as _judge_response,
    pipeline_script as _pipeline_script,
    reason_response as _reason_response,
    stage_file_bytes as _read_bytes,
)

DOC = "f" * 40
DOC2 = "0" * 39 + "1"


def _page(number: int, text: str, doc_id: str = DOC) -> PageRecord:
    return PageRecord(doc_id=doc_id, page_number=number, text=text)


# ---------------------------------------------------------------------------
# extraction stage


def test_extract_empty_page_skips_the_backend() -> None:
    backend = mock_backend({})
    assert extract_mentions(_page(1, "   \n "), backend) == []
    assert backend.calls == []


def test_extract_groups_flat_mentions_by_sentence() -> None:
    page = _page(1, "We use the Census and the LSMS. The DHS appears later.")
    response = json.dumps(
        [
            {"raw_name": "Census", "mentioned_in": "We use the Census and the LSMS."},
            {"raw_name": "LSMS", "mentioned_in": "We use the Census and the LSMS."},
            {"raw_name": "DHS", "mentioned_in": "The DHS appears later."},
        ]
    )
    backend = mock_backend(
        {("extractor", request_digest("extractor", page.text)): response}
    )
    blocks = extract_mentions(page, backend)
    assert [len(b.datasets) for b in blocks] == [2, 1]
    assert blocks[0].source == DOC and blocks[0].page == 1
    assert blocks[0].datasets[0].mentioned_in == "We use the Census and the LSMS."


def test_extract_accepts_wrapper_object_and_block_shapes() -> None:
    page = _page(2, "Block-shaped reply.")
    response = json.dumps(
        {
            "data_mentions": [
                {
                    "mentioned_in": "Block-shaped reply.",
                    "datasets": [{"raw_name": "A"}, {"raw_name": "B"}],
                }
            ]
        }
    )
    backend = mock_backend(
        {("extractor", request_digest("extractor", page.text)): response}
    )
    blocks = extract_mentions(page, backend)
    assert [m.raw_name for m in blocks[0].datasets] == ["A", "B"]


def test_extract_drops_invalid_and_collapses_duplicates() -> None:
    page = _page(3, "Some text.")
    response = json.dumps(
        [
            {"raw_name": "Keep", "mentioned_in": "s"},
            {"raw_name": "Keep", "mentioned_in": "s"},
            {"raw_name": "  ", "mentioned_in": "s"},
        ]
    )
    backend = mock_backend(
        {("extractor", request_digest("extractor", page.text)): response}
    )
    blocks = extract_mentions(page, backend)
    assert [m.raw_name for m in blocks[0].datasets] == ["Keep"]


def test_extract_requires_a_sentence_for_flat_entries() -> None:
    page = _page(4, "whatever")
    backend = mock_backend(
        {
            ("extractor", request_digest("extractor", page.text)): json.dumps(
                [{"raw_name": "X"}]
            )
        }
    )
    with pytest.raises(MissingField):
        extract_mentions(page, backend)


def test_extract_parses_fenced_reply_as_fallback() -> None:
    page = _page(5, "Fenced reply page.")
    response = 'Here are the mentions:\n```json\n[{"raw_name": "X", "mentioned_in": "s"}]\n```'
    backend = mock_backend(
        {("extractor", request_digest("extractor", page.text)): response}
    )
    blocks = extract_mentions(page, backend)
    assert blocks[0].datasets[0].raw_name == "X"


# ---------------------------------------------------------------------------
# judge stage


def _judged(block: MentionBlock, response: str):
    backend = mock_backend(
        {("judge", request_digest("judge", canonical_json(block.to_dict()))): response}
    )
    return judge_mentions(block, backend)


def test_judge_aligns_verdicts_positionally() -> None:
    block = _block_for(_page(1, "We use A and B."), ["A", "B"])
    verdicts = _judged(block, _judge_response(block, [True, False]))
    assert [v.valid for v in verdicts] == [True, False]
    assert [v.raw_name for v in verdicts] == ["A", "B"]


def test_judge_accepts_bare_list_and_string_booleans() -> None:
    block = _block_for(_page(1, "We use A."), ["A"])
    response = json.dumps([{"valid": "true", "explanation": "fine"}])
    verdicts = _judged(block, response)
    assert verdicts[0].valid is True
    assert verdicts[0].reason == "fine"


def test_judge_collects_inferred_metadata_aliases() -> None:
    block = _block_for(_page(1, "We use A."), ["A"])
    response = json.dumps(
        [{"valid": True, "reason": "ok", "year": "2019", "producer": "FAO"}]
    )
    verdicts = _judged(block, response)
    assert verdicts[0].inferred_year == "2019"
    assert verdicts[0].inferred_producer == "FAO"


def test_judge_arity_mismatch() -> None:
    block = _block_for(_page(1, "We use A and B."), ["A", "B"])
    response = json.dumps([{"valid": True, "reason": "ok"}])
    with pytest.raises(ArityMismatch):
        _judged(block, response)


def test_judge_requires_reason() -> None:
    block = _block_for(_page(1, "We use A."), ["A"])
    with pytest.raises(MissingField):
        _judged(block, json.dumps([{"valid": True}]))


# ---------------------------------------------------------------------------
# reasoning stage


def _reasoned(block: MentionBlock, response: str):
    backend = mock_backend(
        {
            (
                "reasoner",
                request_digest("reasoner", canonical_json(block.to_dict())),
            ): response
        }
    )
    return reason_mentions(block, backend)


def test_reason_parses_the_recorded_agent_response(data_dir) -> None:
    payload = json.loads((data_dir / "report_review_block.json").read_text(encoding="utf-8"))
    block, _ = parse_mention_block(payload)
    response = (data_dir / "report_review_response.txt").read_text(encoding="utf-8")
    assessments = _reasoned(block, response)
    assert len(assessments) == 1
    ruling = assessments[0]
    assert ruling.valid is False
    assert ruling.specificity is None
    assert ruling.context is None
    assert (
        ruling.invalid_reason
        == "The raw_name is a report title and does not represent a dataset."
    )
    # input identity fields survive the round trip byte-for-byte
    assert ruling.mention.raw_name == block.datasets[0].raw_name
    assert ruling.mention.mentioned_in == block.datasets[0].mentioned_in


def test_reason_valid_ruling_carries_labels() -> None:
    block = _block_for(_page(1, "We use the LSMS survey."), ["LSMS"])
    assessments = _reasoned(block, _reason_response(block, [True]))
    assert assessments[0].valid is True
    assert assessments[0].specificity == "properly_named"
    assert assessments[0].context == "primary"
    assert assessments[0].invalid_reason is None


def test_reason_repairs_invalid_with_labels() -> None:
    block = _block_for(_page(1, "We use X."), ["X"])
    entry = {
        "raw_name": "X",
        "valid": False,
        "invalid_reason": "actually a report",
        "specificity": "properly_named",
        "context": "primary",
    }
    response = f'<OUTPUTDATA>{json.dumps({"datasets": [entry]})}</OUTPUTDATA>'
    assessments = _reasoned(block, response)
    assert assessments[0].valid is False
    assert assessments[0].specificity is None
    assert assessments[0].context is None


def test_reason_invalid_without_reason_is_rejected() -> None:
    block = _block_for(_page(1, "We use X."), ["X"])
    entry = {"raw_name": "X", "valid": False}
    response = f'<OUTPUTDATA>{json.dumps({"datasets": [entry]})}</OUTPUTDATA>'
    with pytest.raises(ValidityCouplingViolation):
        _reasoned(block, response)


def test_reason_valid_without_labels_is_rejected() -> None:
    block = _block_for(_page(1, "We use X."), ["X"])
    entry = {"raw_name": "X", "valid": True}
    response = f'<OUTPUTDATA>{json.dumps({"datasets": [entry]})}</OUTPUTDATA>'
    with pytest.raises(ValidityCouplingViolation):
        _reasoned(block, response)


def test_reason_arity_mismatch() -> None:
    block = _block_for(_page(1, "We use X and Y."), ["X", "Y"])
    entry = {"raw_name": "X", "valid": False, "invalid_reason": "r"}
    response = f'<OUTPUTDATA>{json.dumps({"datasets": [entry]})}</OUTPUTDATA>'
    with pytest.raises(ArityMismatch):
        _reasoned(block, response)


def test_reason_keeps_harmonized_name_only_when_in_sentence() -> None:
    block = _block_for(
        _page(1, "We use the Living Standards\nMeasurement Study here."), ["LSMS"]
    )
    kept = {
        "raw_name": "LSMS",
        "valid": True,
        "specificity": "properly_named",
        "context": "primary",
        # line-wrapped in the sentence; comparison collapses whitespace
        "harmonized_name": "Living Standards Measurement Study",
    }
    response = f'<OUTPUTDATA>{json.dumps({"datasets": [kept]})}</OUTPUTDATA>'
    assessments = _reasoned(block, response)
    assert assessments[0].mention.harmonized_name == "Living Standards Measurement Study"

    invented = dict(kept, harmonized_name="World Bank LSMS Panel")
    response = f'<OUTPUTDATA>{json.dumps({"datasets": [invented]})}</OUTPUTDATA>'
    assessments = _reasoned(block, response)
    assert assessments[0].mention.harmonized_name is None


def test_reason_updates_enrichment_fields_only_when_present() -> None:
    block = _block_for(_page(1, "We use X from FAO."), ["X"])
    entry = {
        "raw_name": "X",
        "valid": True,
        "specificity": "properly_named",
        "context": "primary",
        "producer": "FAO",
        "year": "None",
    }
    response = f'<OUTPUTDATA>{json.dumps({"datasets": [entry]})}</OUTPUTDATA>'
    assessments = _reasoned(block, response)
    assert assessments[0].mention.producer == "FAO"
    assert assessments[0].mention.year is None


# ---------------------------------------------------------------------------
# pipeline orchestration


def _standard_cases() -> list[tuple[PageRecord, list[str], list[bool], list[bool]]]:
    return [
        (_page(1, "Page about the Census and a Report."), ["Census", "Report"], [True, False], [True]),
        (_page(2, "Page about the LSMS."), ["LSMS"], [True], [False]),
        (_page(3, "Nothing to see here."), [], [], []),  # mention-free text
        (_page(4, "   \n"), [], [], []),  # blank text: no backend call at all
        (_page(1, "Another document page with DHS.", DOC2), ["DHS"], [True], [True]),
    ]


def test_run_pipeline_end_to_end(tmp_path) -> None:
    cases = _standard_cases()
    backend = mock_backend(_pipeline_script(cases))
    stats = run_pipeline(
        [case[0] for case in cases], backend, output_dir=tmp_path / "out"
    )
    assert stats.pages_processed == 5
    assert stats.blocks_extracted == 3
    assert stats.mentions_extracted == 4
    assert stats.mentions_judged_valid == 3
    assert stats.mentions_agent_valid == 2
    assert stats.retention_after_agent == pytest.approx(2 / 3)

    extracted = list(read_jsonl(tmp_path / "out" / "extracted.jsonl"))
    assert len(extracted) == 5  # one row per page, in (doc_id, page) order
    assert extracted[0]["doc_id"] == DOC2  # "000...1" sorts before "fff..."
    empty_rows = [row for row in extracted if not row["blocks"]]
    assert len(empty_rows) == 2

    assessed = list(read_jsonl(tmp_path / "out" / "assessed.jsonl"))
    rulings = [a for row in assessed for a in row["assessments"]]
    assert sum(1 for ruling in rulings if ruling["valid"]) == 2
    assert (tmp_path / "out" / "stats.json").exists()
    assert (tmp_path / "out" / "deadletter.jsonl").read_bytes() == b""


def test_rerun_is_idempotent_and_call_free(tmp_path) -> None:
    cases = _standard_cases()
    script = _pipeline_script(cases)
    pages = [case[0] for case in cases]
    out = tmp_path / "out"

    first = mock_backend(script)
    run_pipeline(pages, first, output_dir=out)
    snapshot = _read_bytes(out)
    baseline_calls = len(first.calls)
    assert baseline_calls > 0

    second = mock_backend(script)
    run_pipeline(pages, second, output_dir=out)
    assert second.calls == []
    assert _read_bytes(out) == snapshot


class _FailsAfter:
    """Delegates to a mock backend, then raises once the budget is spent."""

    def __init__(self, inner, budget: int):
        self.inner = inner
        self.budget = budget

    def complete(self, request: ChatRequest):
        if self.budget <= 0:
            raise RetriesExhausted("injected outage")
        self.budget -= 1
        return self.inner.complete(request)


def test_interrupted_run_resumes_byte_identically(tmp_path) -> None:
    cases = _standard_cases()
    script = _pipeline_script(cases)
    pages = [case[0] for case in cases]

    uninterrupted = tmp_path / "full"
    run_pipeline(pages, mock_backend(script), output_dir=uninterrupted)

    interrupted = tmp_path / "partial"
    flaky = _FailsAfter(mock_backend(script), budget=2)
    with pytest.raises(PipelineInterrupted) as excinfo:
        run_pipeline(pages, flaky, output_dir=interrupted)
    assert excinfo.value.progressed

    resumed = mock_backend(script)
    run_pipeline(pages, resumed, output_dir=interrupted)
    assert _read_bytes(interrupted) == _read_bytes(uninterrupted)

    # no request from the first attempt was repeated on resume
    first_calls = set(flaky.inner.calls)
    assert first_calls.isdisjoint(resumed.calls)
    assert len(flaky.inner.calls) + len(resumed.calls) == len(
        set(flaky.inner.calls) | set(resumed.calls)
    )


def test_outage_before_any_progress_is_not_resumable(tmp_path) -> None:
    cases = _standard_cases()
    pages = [case[0] for case in cases]
    dead_on_arrival = _FailsAfter(mock_backend({}), budget=0)
    with pytest.raises(PipelineInterrupted) as excinfo:
        run_pipeline(pages, dead_on_arrival, output_dir=tmp_path / "out")
    assert not excinfo.value.progressed


def test_malformed_item_is_quarantined_not_fatal(tmp_path) -> None:
    cases = _standard_cases()
    script = _pipeline_script(cases)
    poisoned_page = _page(9, "This page draws a broken reply.")
    script[("extractor", request_digest("extractor", poisoned_page.text))] = "{not json"
    pages = [case[0] for case in cases] + [poisoned_page]

    backend = mock_backend(script)
    stats = run_pipeline(pages, backend, output_dir=tmp_path / "out", item_attempts=3)
    assert stats.pages_processed == 5  # the poisoned page never yields a row

    dead = list(read_jsonl(tmp_path / "out" / "deadletter.jsonl"))
    assert len(dead) == 1
    assert dead[0]["stage"] == "extract"
    assert dead[0]["doc_id"] == DOC and dead[0]["page_number"] == 9
    assert dead[0]["error"] == "ParseError"
    # the item burned its whole per-item retry budget
    poisoned_digest = request_digest("extractor", poisoned_page.text)
    assert sum(1 for _, d in backend.calls if d == poisoned_digest) == 3


def test_stage_barriers_require_prior_outputs(tmp_path) -> None:
    from datamentions.errors import InvalidRecord

    with pytest.raises(InvalidRecord):
        run_pipeline([], mock_backend({}), output_dir=tmp_path / "out", stages=("judge",))


def test_missing_output_file_restarts_the_stage(tmp_path) -> None:
    cases = _standard_cases()
    script = _pipeline_script(cases)
    pages = [case[0] for case in cases]
    out = tmp_path / "out"
    run_pipeline(pages, mock_backend(script), output_dir=out, stages=("extract",))
    snapshot = (out / "extracted.jsonl").read_bytes()

    (out / "extracted.jsonl").unlink()
    redone = mock_backend(script)
    run_pipeline(pages, redone, output_dir=out, stages=("extract",))
    assert (out / "extracted.jsonl").read_bytes() == snapshot
    assert len(redone.calls) == 4  # one per page with text; the blank page is free


def test_plan_pipeline_counts_pending_calls(tmp_path) -> None:
    cases = _standard_cases()
    pages = [case[0] for case in cases]
    out = tmp_path / "out"

    plans = plan_pipeline(pages, output_dir=out)
    assert [p.stage for p in plans] == list(STAGES)
    assert plans[0].pending == 5
    assert plans[0].backend_calls == 4  # the blank page needs no call
    assert plans[1].pending is None  # no extraction output yet

    run_pipeline(pages, mock_backend(_pipeline_script(cases)), output_dir=out)
    plans = plan_pipeline(pages, output_dir=out)
    assert all(p.pending == 0 and p.backend_calls == 0 for p in plans)


# ---------------------------------------------------------------------------
# statistics and export


def test_compute_stats_on_empty_directory(tmp_path) -> None:
    stats = compute_stats(tmp_path)
    assert stats.pages_processed == 0
    assert stats.retention_after_agent is None
    assert "retention_after_agent" not in stats.to_dict()


def test_export_finetune_records(tmp_path) -> None:
    cases = _standard_cases()
    pages = [case[0] for case in cases]
    out = tmp_path / "out"
    run_pipeline(pages, mock_backend(_pipeline_script(cases)), output_dir=out)

    export_path = tmp_path / "finetune.jsonl"
    count = export_finetune_records(pages, out / "assessed.jsonl", export_path, "train")
    assert count == 5
    rows = list(read_jsonl(export_path))
    assert all(row["split"] == "train" for row in rows)
    assert all(row["instruction"].endswith(page.text) for row, page in zip(rows, sorted(pages, key=lambda p: (p.doc_id, p.page_number))))

    responses = [json.loads(row["response"]) for row in rows]
    # sorted page order: (DOC2, 1) first, then DOC pages 1..4
    assert [m["raw_name"] for m in responses[0]] == ["DHS"]
    assert responses[0][0]["specificity"] == "properly_named"
    assert responses[0][0]["context"] == "primary"
    assert [m["raw_name"] for m in responses[1]] == ["Census"]
    assert responses[2] == []  # agent invalidated the only mention
    assert responses[3] == []  # mention-free page
    assert responses[4] == []  # blank page


def test_export_without_split_tag_omits_the_field(tmp_path) -> None:
    page = _page(1, "empty")
    export_path = tmp_path / "finetune.jsonl"
    count = export_finetune_records([page], [], export_path)
    assert count == 1
    (row,) = read_jsonl(export_path)
    assert "split" not in row
    assert json.loads(row["response"]) == []
