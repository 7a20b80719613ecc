"""Prompt templates and chat-message assembly.

Templates are data, not code: versioned JSON assets shipped with the package
(see ``assets/``), overridable per run via a file path, so prompt iteration
never needs a rebuild.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

KIND_CAPTION = "caption"
KIND_RERANK = "rerank"
KIND_RERANK_CAPTION_INTENT = "rerank_caption_intent"
KINDS = (KIND_CAPTION, KIND_RERANK, KIND_RERANK_CAPTION_INTENT)

_BUILTIN_ASSETS = {
    KIND_CAPTION: "caption_v1.json",
    KIND_RERANK: "rerank_v1.json",
    KIND_RERANK_CAPTION_INTENT: "rerank_caption_intent_v1.json",
}


@dataclass(frozen=True)
class PromptTemplate:
    kind: str
    version: str
    system_text: str
    few_shot: tuple[dict, ...]
    rules: tuple[str, ...]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown template kind {self.kind!r}")
        if self.kind == KIND_CAPTION and len(self.few_shot) != 3:
            raise ValueError(
                f"caption template must carry exactly 3 few-shot exemplars, got {len(self.few_shot)}"
            )


def _template_from_dict(obj: dict) -> PromptTemplate:
    return PromptTemplate(
        kind=obj["kind"],
        version=obj["version"],
        system_text=obj["system_text"],
        few_shot=tuple(obj.get("few_shot", ())),
        rules=tuple(obj.get("rules", ())),
    )


def load_template(kind: str, path: str | Path | None = None) -> PromptTemplate:
    """Load the built-in template for `kind`, or any template file if given."""
    if path is not None:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    else:
        if kind not in _BUILTIN_ASSETS:
            raise ValueError(f"unknown template kind {kind!r}")
        asset = resources.files(__package__).joinpath("assets", _BUILTIN_ASSETS[kind])
        obj = json.loads(asset.read_text(encoding="utf-8"))
    tmpl = _template_from_dict(obj)
    if path is not None and tmpl.kind != kind:
        raise ValueError(f"template at {path} has kind {tmpl.kind!r}, expected {kind!r}")
    return tmpl


def data_url(image_bytes: bytes) -> str:
    """Base64 data URL with a sniffed mime type (png/jpeg/webp/gif)."""
    if image_bytes.startswith(b"\x89PNG"):
        mime = "image/png"
    elif image_bytes.startswith(b"\xff\xd8"):
        mime = "image/jpeg"
    elif image_bytes[:4] == b"RIFF" and image_bytes[8:12] == b"WEBP":
        mime = "image/webp"
    elif image_bytes.startswith((b"GIF87a", b"GIF89a")):
        mime = "image/gif"
    else:
        raise ValueError("unrecognized image bytes; expected PNG, JPEG, WEBP or GIF")
    return f"data:{mime};base64,{base64.b64encode(image_bytes).decode('ascii')}"


def _image_part(image_bytes: bytes) -> dict:
    return {"type": "image_url", "image_url": {"url": data_url(image_bytes)}}


def _system_message(tmpl: PromptTemplate) -> dict:
    parts = [tmpl.system_text]
    if tmpl.rules:
        parts.append("Rules:\n" + "\n".join(f"- {rule}" for rule in tmpl.rules))
    if tmpl.few_shot:
        examples = []
        for i, shot in enumerate(tmpl.few_shot, start=1):
            examples.append(
                f"Example {i}:\n  Edit request: {shot['modification']}\n  Caption: {shot['caption']}"
            )
        parts.append("Examples:\n" + "\n".join(examples))
    return {"role": "system", "content": "\n\n".join(parts)}


def caption_messages(tmpl: PromptTemplate, mod_text: str, ref_image: bytes) -> list[dict]:
    user_text = f'Edit request: "{mod_text}"\nDescribe the target image.'
    return [
        _system_message(tmpl),
        {
            "role": "user",
            "content": [{"type": "text", "text": user_text}, _image_part(ref_image)],
        },
    ]


def rerank_messages(
    tmpl: PromptTemplate,
    intent_text: str,
    ref_image: bytes | None,
    grid_png: bytes,
) -> list[dict]:
    """User content carries, in order: prompt text, reference image (when the
    template uses one), grid image."""
    if tmpl.kind == KIND_RERANK:
        user_text = (
            f'Edit request: "{intent_text}"\n'
            "The first image is the reference; the second is the candidate grid. "
            "Rank the candidates."
        )
        if ref_image is None:
            raise ValueError("rerank template requires the reference image")
        content = [{"type": "text", "text": user_text}, _image_part(ref_image), _image_part(grid_png)]
    else:
        user_text = (
            f'Target image description: "{intent_text}"\n'
            "The image is the candidate grid. Rank the candidates."
        )
        content = [{"type": "text", "text": user_text}, _image_part(grid_png)]
    return [_system_message(tmpl), {"role": "user", "content": content}]
