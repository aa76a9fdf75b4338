"""Bounded exponential backoff for HTTP calls.

One policy serves both the metadata client and the chat backend: transient
failures (connection errors, timeouts, HTTP 429 and 5xx) are retried with
exponential backoff, honoring a Retry-After header when the server sends
one; any other response is returned to the caller for interpretation.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable

import requests

from .errors import RateLimited, RetriesExhausted, Timeout

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 5
    base_delay: float = 1.0
    factor: float = 2.0
    max_delay: float = 60.0

    def delay(self, attempt: int) -> float:
        """Backoff before retry number ``attempt`` (1-based)."""
        return min(self.base_delay * self.factor ** (attempt - 1), self.max_delay)


def _retry_after_seconds(response: requests.Response) -> float | None:
    header = response.headers.get("Retry-After")
    if header is None:
        return None
    try:
        return max(float(header), 0.0)
    except ValueError:
        return None


def send_with_retries(
    send: Callable[[], requests.Response],
    policy: RetryPolicy = RetryPolicy(),
    *,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[requests.Response, int]:
    """Run ``send`` under the retry policy; return (response, retries used).

    Responses other than 429/5xx are returned as-is, including 4xx — the
    caller decides what a definitive rejection means. When the budget runs
    out the last failure class picks the exception: :class:`Timeout`,
    :class:`RateLimited` (with the retry-after hint), or
    :class:`RetriesExhausted`.
    """
    last_kind = "network"
    last_detail = ""
    retry_after: float | None = None
    for attempt in range(1, policy.attempts + 1):
        try:
            response = send()
        except requests.Timeout as exc:
            last_kind, last_detail = "timeout", str(exc)
        except requests.RequestException as exc:
            last_kind, last_detail = "network", str(exc)
        else:
            if response.status_code == 429:
                last_kind = "rate_limited"
                last_detail = "HTTP 429"
                retry_after = _retry_after_seconds(response)
            elif response.status_code >= 500:
                last_kind, last_detail = "server_error", f"HTTP {response.status_code}"
            else:
                return response, attempt - 1
        if attempt < policy.attempts:
            delay = policy.delay(attempt)
            if retry_after is not None:
                delay = max(delay, retry_after)
            log.debug("transient failure (%s), retry %d/%d in %.1fs",
                      last_detail, attempt, policy.attempts - 1, delay)
            sleep(delay)

    message = f"gave up after {policy.attempts} attempts: {last_detail}"
    if last_kind == "timeout":
        raise Timeout(message)
    if last_kind == "rate_limited":
        raise RateLimited(message, retry_after=retry_after)
    raise RetriesExhausted(message)
