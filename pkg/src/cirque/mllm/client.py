"""Client for an OpenAI-compatible chat-completions endpoint with images.

Requests carry base64 data URLs inside the standard multimodal message
schema, which both hosted APIs and local inference servers accept.  The
client retries transient failures with exponential backoff plus jitter,
detects safety refusals by marker matching, and never lets more than
``max_inflight`` requests run at once.  Endpoints whose URL starts with
"mock:" are served in-process (see :mod:`cirque.mllm.mock`).
"""

from __future__ import annotations

import os
import random
import threading
import time
from dataclasses import dataclass
from typing import Callable

import requests

from ..errors import ApiTimeout, EmptyCompletion, MllmError, ApiRefusal, TransportError
from . import mock
from .prompts import (
    KIND_CAPTION,
    KIND_RERANK,
    KIND_RERANK_CAPTION_INTENT,
    PromptTemplate,
    caption_messages,
    rerank_messages,
)

API_KEY_ENV = "CIRQUE_API_KEY"
_FALLBACK_KEY_ENV = "OPENAI_API_KEY"

DEFAULT_REFUSAL_MARKERS: tuple[str, ...] = (
    "i can't",
    "i cannot",
    "i can not",
    "i'm sorry",
    "i am sorry",
    "i'm unable",
    "i am unable",
    "i won't",
    "cannot assist",
    "can't assist",
    "cannot help with",
    "can't help with",
    "against my guidelines",
    "content policy",
)

# refusal markers are only meaningful near the start of a completion
_REFUSAL_WINDOW = 120

_QUOTE_PAIRS = {('"', '"'), ("'", "'"), ("“", "”"), ("‘", "’"), ("`", "`")}


@dataclass(frozen=True)
class MllmConfig:
    endpoint_url: str
    model_name: str
    temperature: float = 1.0
    timeout: float = 60.0
    max_retries: int = 3
    max_inflight: int = 4
    backoff_base: float = 0.5
    refusal_markers: tuple[str, ...] = DEFAULT_REFUSAL_MARKERS

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_inflight < 1:
            raise ValueError("max_inflight must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


class Completion(str):
    """Completion text that remembers how many retries it cost."""

    retry_count: int

    def __new__(cls, text: str, retry_count: int = 0):
        obj = super().__new__(cls, text)
        obj.retry_count = retry_count
        return obj


def clean_caption(text: str) -> str:
    """Collapse to a single paragraph and strip wrapping quotes/whitespace."""
    out = " ".join(text.split())
    while len(out) >= 2 and (out[0], out[-1]) in _QUOTE_PAIRS:
        out = out[1:-1].strip()
    if not out:
        raise EmptyCompletion("completion empty after cleanup")
    return out


def _user_prompt_text(messages: list[dict]) -> str:
    for message in reversed(messages):
        if message.get("role") != "user":
            continue
        content = message.get("content")
        if isinstance(content, str):
            return content
        return "\n".join(p["text"] for p in content if p.get("type") == "text")
    return ""


def _count_images(messages: list[dict]) -> int:
    n = 0
    for message in messages:
        content = message.get("content")
        if isinstance(content, list):
            n += sum(1 for p in content if p.get("type") == "image_url")
    return n


class MllmClient:
    """Shareable across threads; the in-flight budget is enforced internally."""

    def __init__(
        self,
        cfg: MllmConfig,
        api_key: str | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.cfg = cfg
        if api_key is None:
            api_key = os.environ.get(API_KEY_ENV) or os.environ.get(_FALLBACK_KEY_ENV, "")
        self._api_key = api_key
        self._sleep = sleep
        self._rng = rng if rng is not None else random.Random()
        self._sem = threading.BoundedSemaphore(cfg.max_inflight)
        self._session = requests.Session()

    # ------------------------------------------------------------------ ops

    def generate_target_caption(
        self, ref_image: bytes, mod_text: str, tmpl: PromptTemplate
    ) -> Completion:
        """Generate a one-paragraph caption of the target image.

        Raises ApiTimeout/ApiRefusal/EmptyCompletion/TransportError after
        retries are exhausted; each exception carries its retry count.
        """
        if tmpl.kind != KIND_CAPTION:
            raise ValueError(f"expected a caption template, got kind {tmpl.kind!r}")
        messages = caption_messages(tmpl, mod_text, ref_image)
        return self._complete(messages, kind=tmpl.kind, text=mod_text, transform=clean_caption)

    def rerank_call(
        self,
        ref_image: bytes | None,
        mod_text: str,
        grid_png: bytes,
        tmpl: PromptTemplate,
    ) -> Completion:
        """Ask for an updated candidate ordering; returns the raw completion.

        For the caption-intent template the reference image is left out of
        the request and ``mod_text`` is expected to carry the generated
        target caption instead of the modification text.
        """
        if tmpl.kind not in (KIND_RERANK, KIND_RERANK_CAPTION_INTENT):
            raise ValueError(f"expected a rerank template, got kind {tmpl.kind!r}")
        ref = ref_image if tmpl.kind == KIND_RERANK else None
        messages = rerank_messages(tmpl, mod_text, ref, grid_png)
        return self._complete(messages, kind=tmpl.kind, text=mod_text)

    # ------------------------------------------------------------- internals

    def _complete(
        self,
        messages: list[dict],
        kind: str,
        text: str,
        transform: Callable[[str], str] | None = None,
    ) -> Completion:
        last_error: MllmError | None = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                self._sleep(self._backoff_delay(attempt))
            try:
                with self._sem:
                    raw = self._attempt(messages, kind, text)
                if not raw.strip():
                    raise EmptyCompletion("backend returned an empty completion")
                self._check_refusal(raw)
                cleaned = transform(raw) if transform else raw
                return Completion(cleaned, retry_count=attempt)
            except MllmError as err:
                err.retry_count = attempt
                last_error = err
        assert last_error is not None
        raise last_error

    def _attempt(self, messages: list[dict], kind: str, text: str) -> str:
        if mock.is_mock(self.cfg.endpoint_url):
            request = mock.MockRequest(
                kind=kind,
                text=text,
                prompt_text=_user_prompt_text(messages),
                image_count=_count_images(messages),
                model_name=self.cfg.model_name,
            )
            return mock.mock_complete(self.cfg.endpoint_url, request)
        return self._http_attempt(messages)

    def _http_attempt(self, messages: list[dict]) -> str:
        url = self.cfg.endpoint_url.rstrip("/")
        if not url.endswith("/chat/completions"):
            url += "/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        payload = {
            "model": self.cfg.model_name,
            "temperature": self.cfg.temperature,
            "messages": messages,
        }
        try:
            resp = self._session.post(
                url, json=payload, headers=headers, timeout=self.cfg.timeout
            )
        except requests.exceptions.Timeout as err:
            raise ApiTimeout(f"request timed out after {self.cfg.timeout}s: {err}")
        except requests.exceptions.RequestException as err:
            raise TransportError(f"request failed: {err}")
        if resp.status_code != 200:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise TransportError("response is not a chat completion")
        return content or ""

    def _check_refusal(self, text: str) -> None:
        head = text[:_REFUSAL_WINDOW].lower()
        for marker in self.cfg.refusal_markers:
            if marker in head:
                raise ApiRefusal(f"refusal marker {marker!r} matched")

    def _backoff_delay(self, attempt: int) -> float:
        return self.cfg.backoff_base * (2 ** (attempt - 1)) * self._rng.uniform(0.5, 1.5)


def generate_target_caption(
    ref_image: bytes, mod_text: str, cfg: MllmConfig, tmpl: PromptTemplate
) -> Completion:
    return MllmClient(cfg).generate_target_caption(ref_image, mod_text, tmpl)


def rerank_call(
    ref_image: bytes | None,
    mod_text: str,
    grid_png: bytes,
    cfg: MllmConfig,
    tmpl: PromptTemplate,
) -> Completion:
    return MllmClient(cfg).rerank_call(ref_image, mod_text, grid_png, tmpl)
