"""Page-level mention-presence gating before extraction.

A gate scores a page in [0, 1]; pages at or above the threshold pass on to
the (expensive) extraction stage. Implementations share one contract:
``always_pass`` scores everything 1.0, ``keyword`` fires on configurable
trigger terms, and ``remote`` asks an external classifier endpoint. Gate
errors fail open — a page the gate cannot score still passes, because a
page dropped here is unrecoverable downstream.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import requests

from .errors import InvalidRecord, MalformedScore, MissingLabel, NetworkError
from .evalkit import fbeta, precision_recall
from .records import PageRecord

log = logging.getLogger(__name__)

__all__ = [
    "AlwaysPassGate",
    "GateDecision",
    "GateEvalReport",
    "KeywordGate",
    "PageGate",
    "RemoteGate",
    "default_triggers",
    "evaluate_gate",
    "filter_pages",
    "load_triggers",
]


@dataclass(frozen=True)
class GateDecision:
    doc_id: str
    page_number: int
    score: float
    threshold: float
    passed: bool

    def __post_init__(self) -> None:
        if self.passed != (self.score >= self.threshold):
            raise InvalidRecord("gate decision: passed must equal (score >= threshold)")

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "page_number": self.page_number,
            "score": self.score,
            "threshold": self.threshold,
            "passed": self.passed,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "GateDecision":
        return cls(
            doc_id=payload["doc_id"],
            page_number=int(payload["page_number"]),
            score=float(payload["score"]),
            threshold=float(payload["threshold"]),
            passed=bool(payload["passed"]),
        )


class PageGate(Protocol):
    def score_page(self, text: str) -> float: ...


class AlwaysPassGate:
    """Scores every page 1.0; the no-filtering baseline."""

    def score_page(self, text: str) -> float:
        return 1.0


def load_triggers(path: str | Path) -> list[str]:
    """Read trigger terms, one per line; blank lines and ``#`` comments skipped."""
    terms = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            terms.append(line)
    return terms


def default_triggers() -> list[str]:
    """The trigger list shipped with the package."""
    text = (resources.files("datamentions") / "data" / "gate_triggers.txt").read_text(
        encoding="utf-8"
    )
    return [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]


class KeywordGate:
    """Scores 1.0 when any trigger term occurs as a whole word, else 0.0."""

    def __init__(self, triggers: Sequence[str] | None = None):
        terms = list(triggers) if triggers is not None else default_triggers()
        if not terms:
            raise InvalidRecord("keyword gate needs at least one trigger term")
        self.triggers = terms
        joined = "|".join(re.escape(t) for t in terms)
        self._pattern = re.compile(rf"\b(?:{joined})\b", re.IGNORECASE)

    @classmethod
    def from_file(cls, path: str | Path) -> "KeywordGate":
        return cls(load_triggers(path))

    def score_page(self, text: str) -> float:
        return 1.0 if self._pattern.search(text) else 0.0


@dataclass
class RemoteGate:
    """Asks an external classifier: POST the page text, read one probability.

    Accepts either a bare numeric body or a JSON object carrying a single
    ``score`` field. Scores outside [0, 1] raise :class:`MalformedScore`.
    """

    endpoint: str
    timeout: float = 30.0
    session: requests.Session | None = None

    def score_page(self, text: str) -> float:
        http = self.session or requests
        try:
            response = http.post(
                self.endpoint,
                data=text.encode("utf-8"),
                headers={"Content-Type": "text/plain; charset=utf-8"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise NetworkError(f"gate endpoint unreachable: {exc}") from exc
        if response.status_code != 200:
            raise NetworkError(f"gate endpoint answered HTTP {response.status_code}")
        body = response.text.strip()
        try:
            score = float(body)
        except ValueError:
            try:
                score = float(response.json()["score"])
            except Exception as exc:
                raise MalformedScore(f"gate response is not a score: {body[:80]!r}") from exc
        if not 0.0 <= score <= 1.0:
            raise MalformedScore(f"gate score {score} outside [0, 1]")
        return score


def filter_pages(
    pages: Iterable[PageRecord],
    gate: PageGate,
    threshold: float = 0.5,
) -> tuple[list[PageRecord], list[GateDecision]]:
    """Score every page; return (pages that passed, all decisions).

    A gate error quarantines the page on the passing side (fail-open) with
    score 1.0 and a logged warning.
    """
    if not 0.0 <= threshold <= 1.0:
        raise InvalidRecord(f"threshold must be in [0, 1], got {threshold}")
    passed: list[PageRecord] = []
    decisions: list[GateDecision] = []
    for page in pages:
        try:
            score = gate.score_page(page.text)
        except Exception as exc:
            log.warning(
                "gate failed on %s p%d (%s); passing the page through",
                page.doc_id, page.page_number, exc,
            )
            score = 1.0
        decision = GateDecision(
            doc_id=page.doc_id,
            page_number=page.page_number,
            score=score,
            threshold=threshold,
            passed=score >= threshold,
        )
        decisions.append(decision)
        if decision.passed:
            passed.append(page)
    return passed, decisions


@dataclass(frozen=True)
class GateEvalReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int


def evaluate_gate(
    decisions: Iterable[GateDecision],
    gold_labels: Mapping[tuple[str, int], bool],
) -> GateEvalReport:
    """Binary precision/recall/F1 of gate decisions on the has-mention class."""
    tp = fp = fn = tn = 0
    for decision in decisions:
        key = (decision.doc_id, decision.page_number)
        if key not in gold_labels:
            raise MissingLabel(f"no gold label for page {key}")
        actual = gold_labels[key]
        if decision.passed and actual:
            tp += 1
        elif decision.passed and not actual:
            fp += 1
        elif not decision.passed and actual:
            fn += 1
        else:
            tn += 1
    precision, recall = precision_recall(tp, fp, fn)
    return GateEvalReport(
        precision=precision,
        recall=recall,
        f1=fbeta(precision, recall, beta=1.0),
        tp=tp, fp=fp, fn=fn, tn=tn,
    )
