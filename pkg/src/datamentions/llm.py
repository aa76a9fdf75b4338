"""Chat-completion gateway: backends, prompt templates, payload extraction.

Three system prompts ship with the package, one file per stage, loaded
verbatim: ``extractor`` (find dataset mentions on a page), ``judge``
(validate each mention), and ``reasoner`` (devil's-advocate review with a
tagged output contract). Backends speak the OpenAI-compatible
chat-completions wire protocol or are deterministic mocks scripted by
request digest.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

import requests

from .errors import (
    BackendError,
    MalformedResponse,
    MultiplePayloads,
    NoPayloadFound,
    ParseError,
    UnknownTemplate,
    UnscriptedInput,
)
from .retries import RetryPolicy, send_with_retries

TEMPLATE_IDS = ("extractor", "judge", "reasoner")
DEFAULT_MODEL = "gpt-4o-mini-2024-07-18"

__all__ = [
    "ChatBackend",
    "ChatRequest",
    "ChatResponse",
    "DEFAULT_MODEL",
    "MockChatBackend",
    "PromptTemplate",
    "RemoteChatBackend",
    "TEMPLATE_IDS",
    "complete",
    "extract_json_payload",
    "load_templates",
    "mock_backend",
    "render_prompt",
    "request_digest",
]


@dataclass(frozen=True)
class ChatRequest:
    model_name: str
    system_prompt: str
    user_content: str
    temperature: float = 0.0
    max_output_tokens: int = 4096

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if not self.system_prompt or not self.user_content:
            raise ValueError("prompts must be non-empty")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    token_usage: Mapping[str, int] | None = None
    latency: float = 0.0
    retries: int = 0


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str

    def __post_init__(self) -> None:
        if self.template_id not in TEMPLATE_IDS:
            raise UnknownTemplate(f"unknown template id {self.template_id!r}")
        if not self.body:
            raise ValueError(f"template {self.template_id!r} has an empty body")


def load_templates(prompts_dir: str | Path | None = None) -> dict[str, PromptTemplate]:
    """Load the three stage prompts, from a directory or the packaged set."""
    templates: dict[str, PromptTemplate] = {}
    for template_id in TEMPLATE_IDS:
        if prompts_dir is not None:
            body = (Path(prompts_dir) / f"{template_id}.txt").read_text(encoding="utf-8")
        else:
            body = (
                resources.files("datamentions") / "prompts" / f"{template_id}.txt"
            ).read_text(encoding="utf-8")
        templates[template_id] = PromptTemplate(template_id=template_id, body=body)
    return templates


def render_prompt(
    template_id: str,
    variables: Mapping[str, str] | None = None,
    templates: Mapping[str, PromptTemplate] | None = None,
) -> str:
    """Return the system prompt for ``template_id``.

    The shipped prompts are static system prompts — page text and mention
    blocks travel as user content — so ``variables`` is accepted for
    interface completeness but the bodies contain nothing to substitute.
    """
    if templates is None:
        templates = load_templates()
    try:
        template = templates[template_id]
    except KeyError:
        raise UnknownTemplate(f"unknown template id {template_id!r}") from None
    body = template.body
    for name, value in (variables or {}).items():
        body = body.replace("{" + name + "}", value)
    return body


def request_digest(template_id: str, user_content: str) -> str:
    """Stable identity of one request: hash of (template id, user content)."""
    h = hashlib.sha256()
    h.update(template_id.encode("utf-8"))
    h.update(b"\x00")
    h.update(user_content.encode("utf-8"))
    return h.hexdigest()


class ChatBackend(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


def complete(request: ChatRequest, backend: ChatBackend) -> ChatResponse:
    """Run one chat completion against ``backend``."""
    return backend.complete(request)


# ---------------------------------------------------------------------------
# backends


@dataclass
class RemoteChatBackend:
    """OpenAI-compatible chat-completions endpoint.

    The API key is read from the named environment variable at call time;
    requests retry per policy on transient failures, and any other 4xx is a
    definitive :class:`BackendError`.
    """

    base_url: str
    api_key_env: str = "OPENAI_API_KEY"
    retry_policy: RetryPolicy = field(default_factory=RetryPolicy)
    timeout: float = 120.0
    session: requests.Session | None = None
    sleep: Callable[[float], None] = time.sleep

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise BackendError(
                f"no API key found in environment variable {self.api_key_env!r}"
            )
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def complete(self, request: ChatRequest) -> ChatResponse:
        url = self.base_url.rstrip("/") + "/chat/completions"
        payload = {
            "model": request.model_name,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_content},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = self._headers()
        http = self.session or requests
        started = time.monotonic()
        response, retries = send_with_retries(
            lambda: http.post(url, json=payload, headers=headers, timeout=self.timeout),
            self.retry_policy,
            sleep=self.sleep,
        )
        latency = time.monotonic() - started
        if response.status_code != 200:
            raise BackendError(
                f"chat endpoint rejected the request: HTTP {response.status_code}",
                status_code=response.status_code,
            )
        try:
            body = response.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected completion body: {exc}") from exc
        if not isinstance(text, str):
            raise MalformedResponse("completion content is not text")
        return ChatResponse(
            text=text,
            token_usage=body.get("usage"),
            latency=latency,
            retries=retries,
        )


class MockChatBackend:
    """Deterministic backend scripted by (template id, request digest).

    The template id is recovered from the system prompt, so requests built
    from the shipped prompts resolve without extra plumbing. Unknown system
    prompts or unscripted digests fail fast with :class:`UnscriptedInput`.
    An optional call log appends one line per completion, which lets tests
    count backend calls across process boundaries.
    """

    _STAGE_ALIASES = {"extract": "extractor", "judge": "judge", "reason": "reasoner"}

    def __init__(
        self,
        script: Mapping[tuple[str, str], str],
        templates: Mapping[str, PromptTemplate] | None = None,
        call_log: str | Path | None = None,
    ):
        self.script = {
            (self._STAGE_ALIASES.get(stage, stage), digest): response
            for (stage, digest), response in script.items()
        }
        templates = templates or load_templates()
        self._prompt_to_template = {t.body: t.template_id for t in templates.values()}
        self.call_log = Path(call_log) if call_log is not None else None
        self.calls: list[tuple[str, str]] = []

    @classmethod
    def from_script_file(
        cls,
        path: str | Path,
        templates: Mapping[str, PromptTemplate] | None = None,
        call_log: str | Path | None = None,
    ) -> "MockChatBackend":
        """Build from a line-delimited script.

        Each line carries ``stage``, ``response``, and either ``digest`` or
        ``user_content`` (digested here for convenience).
        """
        templates = templates or load_templates()
        script: dict[tuple[str, str], str] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                stage = cls._STAGE_ALIASES.get(entry["stage"], entry["stage"])
                if "digest" in entry:
                    digest = entry["digest"]
                else:
                    digest = request_digest(stage, entry["user_content"])
                script[(stage, digest)] = entry["response"]
        return cls(script, templates=templates, call_log=call_log)

    def complete(self, request: ChatRequest) -> ChatResponse:
        template_id = self._prompt_to_template.get(request.system_prompt)
        if template_id is None:
            raise UnscriptedInput("system prompt does not match any known template")
        digest = request_digest(template_id, request.user_content)
        self.calls.append((template_id, digest))
        if self.call_log is not None:
            with open(self.call_log, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"stage": template_id, "digest": digest}) + "\n")
        try:
            text = self.script[(template_id, digest)]
        except KeyError:
            raise UnscriptedInput(
                f"no scripted response for stage {template_id!r}, digest {digest}"
            ) from None
        return ChatResponse(text=text, latency=0.0)


def mock_backend(
    script: Mapping[tuple[str, str], str],
    templates: Mapping[str, PromptTemplate] | None = None,
    call_log: str | Path | None = None,
) -> MockChatBackend:
    """Convenience constructor mirroring :class:`MockChatBackend`."""
    return MockChatBackend(script, templates=templates, call_log=call_log)


# ---------------------------------------------------------------------------
# payload extraction

_TAG_RE = re.compile(r"<OUTPUTDATA>(.*?)</OUTPUTDATA>", re.DOTALL)
_FENCE_RE = re.compile(r"```json[ \t]*\n(.*?)```", re.DOTALL)
_TRAILING_COMMA_RE = re.compile(r",(\s*[}\]])")


def _loads_lenient(payload: str) -> Any:
    """Parse JSON with one repair pass that strips trailing commas."""
    try:
        return json.loads(payload)
    except json.JSONDecodeError as exc:
        repaired = _TRAILING_COMMA_RE.sub(r"\1", payload)
        if repaired != payload:
            try:
                return json.loads(repaired)
            except json.JSONDecodeError:
                pass
        offset = len(payload[: exc.pos].encode("utf-8"))
        raise ParseError(f"payload is not valid JSON: {exc.msg}", offset=offset) from exc


def _strip_fence(text: str) -> str:
    stripped = text.strip()
    if not stripped.startswith("```"):
        return stripped
    first_newline = stripped.find("\n")
    if first_newline == -1:
        # an opening fence with no content line, e.g. "```json```"
        inner = stripped[3:]
        inner = inner[4:] if inner.startswith("json") else inner
        return inner.removesuffix("```").strip()
    body = stripped[first_newline + 1 :]
    if body.rstrip().endswith("```"):
        body = body.rstrip()[:-3]
    return body.strip()


def extract_json_payload(text: str, mode: str = "bare") -> Any:
    """Parse the structured payload of a model response.

    Modes: ``bare`` parses the whole text; ``fenced`` parses the first code
    fence labeled json; ``tagged`` parses the payload between exactly one
    OUTPUTDATA open/close tag pair, tolerating prose outside the tags and
    an optional fence inside them.
    """
    if mode == "bare":
        stripped = text.strip()
        if not stripped:
            raise NoPayloadFound("empty response")
        return _loads_lenient(stripped)
    if mode == "fenced":
        match = _FENCE_RE.search(text)
        if not match:
            raise NoPayloadFound("no ```json code fence in response")
        payload = match.group(1).strip()
        if not payload:
            raise NoPayloadFound("json code fence is empty")
        return _loads_lenient(payload)
    if mode == "tagged":
        spans = _TAG_RE.findall(text)
        if not spans:
            raise NoPayloadFound("no OUTPUTDATA tag pair in response")
        if len(spans) > 1:
            raise MultiplePayloads(f"{len(spans)} OUTPUTDATA tag pairs in response")
        payload = _strip_fence(spans[0])
        if not payload:
            raise NoPayloadFound("OUTPUTDATA tags contain no payload")
        return _loads_lenient(payload)
    raise ValueError(f"unknown payload mode {mode!r}")
