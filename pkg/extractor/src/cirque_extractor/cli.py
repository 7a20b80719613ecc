"""CLI: export embeddings from a checkpoint into the engine's binary format."""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from .encoders import resolve_checkpoint
from .errors import ExtractorError
from .export import ExportJob, export_image_embeddings, export_text_embeddings


@click.group()
def main():
    """Embedding exporter sidecar."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")


def _run(kind: str, checkpoint: str, input_path: Path, output: Path, batch_size: int):
    job = ExportJob(
        checkpoint_name=checkpoint,
        input_kind=kind,
        input_path=input_path,
        output_path=output,
        batch_size=batch_size,
    )
    try:
        encoders = resolve_checkpoint(checkpoint)
        if kind == "image_dir":
            count = export_image_embeddings(job, encoders)
        else:
            count = export_text_embeddings(job, encoders)
    except ExtractorError as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(1)
    click.echo(f"wrote {count} embeddings (dim {encoders.dim}) -> {output}")


@main.command()
@click.option("--checkpoint", required=True, help="toy:<dim>, hf:<model>, or open_clip:<arch>/<tag>")
@click.option("--input", "input_path", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--output", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--batch-size", default=32, show_default=True, type=int)
def images(checkpoint, input_path, output, batch_size):
    """Export one embedding per image file; record id = filename stem."""
    _run("image_dir", checkpoint, input_path, output, batch_size)


@main.command()
@click.option("--checkpoint", required=True)
@click.option("--input", "input_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--output", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--batch-size", default=32, show_default=True, type=int)
def texts(checkpoint, input_path, output, batch_size):
    """Export embeddings for a JSON-lines file of {id, text} records."""
    _run("text_file", checkpoint, input_path, output, batch_size)


if __name__ == "__main__":
    main()
