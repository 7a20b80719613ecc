"""Deterministic in-process chat backend, selected by "mock:" endpoints.

Makes the whole engine runnable with zero network access and byte-identical
outputs.  Endpoint grammar::

    mock:echo            caption mode, returns "TARGET: <request text>"
    mock:fixed:<text>    returns <text> verbatim (may be empty)
    mock:identity:<k>    returns "[0, 1, ..., k-1]"
    mock:reverse:<k>     returns "[k-1, ..., 1, 0]"
    mock:registry:<name> delegates to a responder registered in-process

Per-endpoint counters (calls, peak concurrency) are kept so tests can probe
caching and the in-flight budget.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable

SCHEME = "mock:"


@dataclass(frozen=True)
class MockRequest:
    """What a responder gets to see about one completion request."""

    kind: str
    text: str
    prompt_text: str
    image_count: int
    model_name: str


class MockState:
    """Counters for one mock endpoint; thread safe."""

    def __init__(self):
        self._lock = threading.Lock()
        self.calls = 0
        self.inflight = 0
        self.max_inflight_seen = 0

    @contextmanager
    def track(self):
        with self._lock:
            self.calls += 1
            self.inflight += 1
            self.max_inflight_seen = max(self.max_inflight_seen, self.inflight)
        try:
            yield
        finally:
            with self._lock:
                self.inflight -= 1


_states: dict[str, MockState] = {}
_states_lock = threading.Lock()
_registry: dict[str, Callable[[MockRequest], str]] = {}


def is_mock(endpoint_url: str) -> bool:
    return endpoint_url.startswith(SCHEME)


def mock_state(endpoint_url: str) -> MockState:
    with _states_lock:
        if endpoint_url not in _states:
            _states[endpoint_url] = MockState()
        return _states[endpoint_url]


def reset_mock_states() -> None:
    with _states_lock:
        _states.clear()


def register_responder(name: str, fn: Callable[[MockRequest], str]) -> None:
    _registry[name] = fn


def unregister_responder(name: str) -> None:
    _registry.pop(name, None)


def _bracketed(values) -> str:
    return "[" + ", ".join(str(v) for v in values) + "]"


def mock_complete(endpoint_url: str, request: MockRequest) -> str:
    spec = endpoint_url[len(SCHEME) :]
    state = mock_state(endpoint_url)
    with state.track():
        if spec == "echo":
            return f"TARGET: {request.text}"
        if spec.startswith("fixed:"):
            return spec[len("fixed:") :]
        if spec.startswith("identity:"):
            k = int(spec[len("identity:") :])
            return _bracketed(range(k))
        if spec.startswith("reverse:"):
            k = int(spec[len("reverse:") :])
            return _bracketed(range(k - 1, -1, -1))
        if spec.startswith("registry:"):
            name = spec[len("registry:") :]
            if name not in _registry:
                raise ValueError(f"no mock responder registered under {name!r}")
            return _registry[name](request)
    raise ValueError(f"unknown mock endpoint {endpoint_url!r}")
