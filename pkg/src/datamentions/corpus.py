"""Corpus acquisition and storage.

Documents are located by title through a scholarly metadata index (a
title-match HTTP endpoint), their open-access PDFs downloaded, converted to
page-delimited text by a user-configured external command, and ingested
into an append-only store of line-delimited records with a page-level
uniqueness index.
"""

from __future__ import annotations

import logging
import os
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import requests

from .errors import (
    ConverterFailed,
    EmptyOutput,
    InvalidRecord,
    MalformedResponse,
    NetworkError,
    NoPdfUrl,
    NonPdfContent,
    StoreWriteError,
)
from .records import DocumentRecord, PageRecord, dumps_line, read_jsonl
from .retries import RetryPolicy, send_with_retries

log = logging.getLogger(__name__)

SEARCH_FIELDS = "title,year,abstract,citationCount,isOpenAccess,openAccessPdf"

__all__ = [
    "CorpusStore",
    "IngestSummary",
    "MetadataClient",
    "StoredFileReport",
    "convert_pdf_to_pages",
    "fetch_pdf",
    "search_paper_by_title",
]


@dataclass(frozen=True)
class IngestSummary:
    added: int
    skipped: int


@dataclass(frozen=True)
class StoredFileReport:
    doc_id: str
    path: Path
    size_bytes: int


@dataclass
class MetadataClient:
    """Client for a title-match metadata endpoint.

    ``GET {base_url}/paper/search/match`` with the title as ``query`` and a
    ``fields`` selection; answers either one best match or a "no match"
    body. An API key, when present in the environment, rides along as the
    conventional ``x-api-key`` header.
    """

    base_url: str = "https://api.semanticscholar.org/graph/v1"
    api_key_env: str = "S2_API_KEY"
    retry_policy: RetryPolicy = field(default_factory=RetryPolicy)
    timeout: float = 30.0
    session: requests.Session | None = None
    sleep: Callable[[float], None] = time.sleep

    def match_title(self, title: str) -> dict | None:
        """Return the best-match payload for ``title``, or None on no match."""
        url = self.base_url.rstrip("/") + "/paper/search/match"
        params = {"query": title, "fields": SEARCH_FIELDS}
        headers = {}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["x-api-key"] = key
        http = self.session or requests
        response, _ = send_with_retries(
            lambda: http.get(url, params=params, headers=headers, timeout=self.timeout),
            self.retry_policy,
            sleep=self.sleep,
        )
        if response.status_code == 404:
            # the index reports "title match not found" as a 404 with an error body
            return None
        if response.status_code != 200:
            raise NetworkError(f"metadata endpoint answered HTTP {response.status_code}")
        try:
            body = response.json()
        except ValueError as exc:
            raise MalformedResponse(f"metadata endpoint sent non-JSON: {exc}") from exc
        if not isinstance(body, dict):
            raise MalformedResponse("metadata endpoint sent a non-object body")
        matches = body.get("data")
        if matches is None:
            if "error" in body:
                return None
            raise MalformedResponse("metadata body carries neither 'data' nor 'error'")
        if not matches:
            return None
        if not isinstance(matches[0], dict):
            raise MalformedResponse("metadata match entry is not an object")
        return matches[0]


def search_paper_by_title(
    title: str,
    client: MetadataClient,
    source_corpus: str = "other",
) -> DocumentRecord | None:
    """Look up one title; return a DocumentRecord or None when unmatched."""
    if not title or not title.strip():
        raise ValueError("title must be non-empty")
    match = client.match_title(title.strip())
    if match is None:
        return None
    doc_id = match.get("paperId")
    open_access_pdf = match.get("openAccessPdf") or {}
    try:
        return DocumentRecord(
            doc_id=str(doc_id),
            title=str(match.get("title") or title.strip()),
            source_corpus=source_corpus,
            year=int(match["year"]) if match.get("year") is not None else None,
            is_open_access=bool(match.get("isOpenAccess", False)),
            pdf_url=open_access_pdf.get("url"),
            citation_count=(
                int(match["citationCount"]) if match.get("citationCount") is not None else None
            ),
        )
    except (InvalidRecord, TypeError, ValueError) as exc:
        raise MalformedResponse(f"metadata match is not a usable document: {exc}") from exc


class CorpusStore:
    """Append-only document/page store with a (doc_id, page) uniqueness index.

    Layout under ``root``: ``documents.jsonl``, ``pages.jsonl``, and a
    ``pdfs/`` directory. Iteration order is always sorted by doc_id then
    page number, so two stores with the same content behave identically.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.documents_path = self.root / "documents.jsonl"
        self.pages_path = self.root / "pages.jsonl"
        self.pdf_dir = self.root / "pdfs"
        self._doc_ids: set[str] = set()
        self._page_index: set[tuple[str, int]] = set()
        self._load_index()

    def _load_index(self) -> None:
        if self.documents_path.exists():
            for row in read_jsonl(self.documents_path):
                self._doc_ids.add(row["doc_id"])
        if self.pages_path.exists():
            for row in read_jsonl(self.pages_path):
                self._page_index.add((row["doc_id"], int(row["page_number"])))

    def _append(self, path: Path, lines: list[str]) -> None:
        try:
            with open(path, "a", encoding="utf-8") as fh:
                for line in lines:
                    fh.write(line + "\n")
        except OSError as exc:
            raise StoreWriteError(f"cannot append to {path}: {exc}") from exc

    # -- documents ---------------------------------------------------------

    def add_document(self, doc: DocumentRecord) -> bool:
        """Append ``doc`` unless its doc_id is already stored."""
        if doc.doc_id in self._doc_ids:
            return False
        self._append(self.documents_path, [dumps_line(doc.to_dict())])
        self._doc_ids.add(doc.doc_id)
        return True

    def iter_documents(self) -> list[DocumentRecord]:
        if not self.documents_path.exists():
            return []
        docs = [DocumentRecord.from_dict(row) for row in read_jsonl(self.documents_path)]
        return sorted(docs, key=lambda d: d.doc_id)

    # -- pages -------------------------------------------------------------

    def has_page(self, doc_id: str, page_number: int) -> bool:
        return (doc_id, page_number) in self._page_index

    def ingest_pages(self, pages: Iterable[PageRecord]) -> IngestSummary:
        """Append fresh pages; duplicates are skipped and counted."""
        added = 0
        skipped = 0
        lines: list[str] = []
        fresh: list[tuple[str, int]] = []
        for page in pages:
            if not isinstance(page, PageRecord):
                page = PageRecord.from_dict(page)
            key = (page.doc_id, page.page_number)
            if key in self._page_index or key in set(fresh):
                skipped += 1
                continue
            lines.append(dumps_line(page.to_dict()))
            fresh.append(key)
            added += 1
        if lines:
            self._append(self.pages_path, lines)
            self._page_index.update(fresh)
        return IngestSummary(added=added, skipped=skipped)

    def iter_pages(self) -> list[PageRecord]:
        if not self.pages_path.exists():
            return []
        pages = [PageRecord.from_dict(row) for row in read_jsonl(self.pages_path)]
        return sorted(pages, key=lambda p: (p.doc_id, p.page_number))

    def page_count(self) -> int:
        return len(self._page_index)


def fetch_pdf(
    doc: DocumentRecord,
    dest: str | Path,
    *,
    retry_policy: RetryPolicy | None = None,
    session: requests.Session | None = None,
    timeout: float = 120.0,
    sleep: Callable[[float], None] = time.sleep,
) -> StoredFileReport:
    """Download the document's PDF into ``dest`` named by its doc_id."""
    if not doc.pdf_url:
        raise NoPdfUrl(f"document {doc.doc_id} has no PDF link")
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    http = session or requests
    response, _ = send_with_retries(
        lambda: http.get(doc.pdf_url, timeout=timeout),
        retry_policy or RetryPolicy(),
        sleep=sleep,
    )
    if response.status_code != 200:
        raise NetworkError(f"PDF fetch answered HTTP {response.status_code}")
    content_type = response.headers.get("Content-Type", "")
    if "pdf" not in content_type.lower() and not response.content.startswith(b"%PDF"):
        raise NonPdfContent(
            f"{doc.pdf_url} served {content_type or 'unknown content'}, not a PDF"
        )
    path = dest / f"{doc.doc_id}.pdf"
    path.write_bytes(response.content)
    return StoredFileReport(doc_id=doc.doc_id, path=path, size_bytes=len(response.content))


def convert_pdf_to_pages(
    doc_id: str,
    pdf_path: str | Path,
    converter: Sequence[str],
    *,
    page_delimiter: str = "\f",
) -> Iterator[PageRecord]:
    """Run the external PDF-to-text command and yield one record per page.

    ``converter`` is an argv template; every occurrence of ``{pdf}`` is
    replaced with the PDF path. The command must print page text to stdout
    with pages separated by ``page_delimiter`` (form feed, the common
    convention for text extractors).
    """
    pdf_path = Path(pdf_path)
    if not pdf_path.exists():
        raise ConverterFailed(f"PDF file {pdf_path} does not exist")
    argv = [part.replace("{pdf}", str(pdf_path)) for part in converter]
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, check=False)
    except OSError as exc:
        raise ConverterFailed(f"cannot run converter {argv[0]!r}: {exc}") from exc
    if proc.returncode != 0:
        raise ConverterFailed(
            f"converter exited with status {proc.returncode}",
            returncode=proc.returncode,
            stderr=proc.stderr[-2000:],
        )
    chunks = proc.stdout.split(page_delimiter)
    if chunks and chunks[-1].strip() == "":
        chunks.pop()  # extractors commonly emit a trailing delimiter
    if not chunks or all(not c.strip() for c in chunks):
        raise EmptyOutput(f"converter produced no page text for {pdf_path}")
    for number, chunk in enumerate(chunks, start=1):
        yield PageRecord(doc_id=doc_id, page_number=number, text=chunk)
