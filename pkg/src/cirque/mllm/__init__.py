"""Chat-completions client, prompt templates, and the offline mock backend."""

from .client import (
    API_KEY_ENV,
    Completion,
    DEFAULT_REFUSAL_MARKERS,
    MllmClient,
    MllmConfig,
    clean_caption,
    generate_target_caption,
    rerank_call,
)
from .mock import (
    MockRequest,
    mock_state,
    register_responder,
    reset_mock_states,
    unregister_responder,
)
from .prompts import (
    KIND_CAPTION,
    KIND_RERANK,
    KIND_RERANK_CAPTION_INTENT,
    PromptTemplate,
    load_template,
)

__all__ = [
    "API_KEY_ENV",
    "Completion",
    "DEFAULT_REFUSAL_MARKERS",
    "MllmClient",
    "MllmConfig",
    "MockRequest",
    "PromptTemplate",
    "KIND_CAPTION",
    "KIND_RERANK",
    "KIND_RERANK_CAPTION_INTENT",
    "clean_caption",
    "generate_target_caption",
    "load_template",
    "mock_state",
    "register_responder",
    "rerank_call",
    "reset_mock_states",
    "unregister_responder",
]
