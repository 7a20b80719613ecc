"""Embedding exporter sidecar for the retrieval engine.

Runs a chosen vision-language checkpoint and dumps image or text embeddings
in the engine's binary file format, plus a JSON manifest naming the
checkpoint.  One checkpoint per output file.
"""

from .encoders import Encoders, resolve_checkpoint
from .errors import CheckpointLoadError, ExportError, ExtractorError, MalformedLine
from .export import ExportJob, export_image_embeddings, export_text_embeddings, manifest_path
from .format import write_embedding_file

__version__ = "0.1.0"

__all__ = [
    "CheckpointLoadError",
    "Encoders",
    "ExportError",
    "ExportJob",
    "ExtractorError",
    "MalformedLine",
    "export_image_embeddings",
    "export_text_embeddings",
    "manifest_path",
    "resolve_checkpoint",
    "write_embedding_file",
]
