"""Command-line interface.

Subcommands follow the run order of a full evaluation: ``build-index`` to
check sidecar exports, ``caption`` to generate target captions, ``retrieve``
for global rankings, ``grid``/``rerank`` for the batch rerank stage,
``evaluate`` for metrics, and ``sweep`` for parameter ablations.  Report
paths write figures next to their delimited outputs unless ``--no-figure``.
"""

from __future__ import annotations

import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import figures
from .errors import EngineError
from .grid import compose_grid, save_png
from .metrics import (
    evaluate as evaluate_rankings,
    load_annotations,
    metric_label,
    parse_metric_spec,
    render_table,
    report_to_dict,
)
from .mllm import MllmClient, load_template
from .pipeline import (
    ImageDirectory,
    MllmCaptioner,
    RunConfig,
    load_queries,
    run_ebr,
    run_sqaf,
    write_captions_jsonl,
    write_manifest,
    StaticCaptions,
)
from .ranker import read_rankings, rankings_to_candidate_lists, write_rankings
from .rerank import write_audit_log
from .store import load_index

_in_path = click.Path(exists=True, dir_okay=False, path_type=Path)
_in_dir = click.Path(exists=True, file_okay=False, path_type=Path)
_out_path = click.Path(dir_okay=False, path_type=Path)


def _load_config(config_path: Path | None) -> RunConfig:
    return RunConfig.from_yaml(config_path) if config_path else RunConfig()


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _default_manifest(out_path: Path) -> Path:
    return out_path.with_name(out_path.name + ".manifest.json")


@click.group()
@click.version_option(package_name="cirque")
def main():
    """Composed image retrieval: fuse, rank, grid-rerank, evaluate."""


# ---------------------------------------------------------------- build-index


@main.command("build-index")
@click.argument("embedding_file", type=_in_path)
@click.option("--manifest", "manifest_path", type=_out_path, default=None,
              help="Write a JSON summary of the validated file.")
def build_index_cmd(embedding_file: Path, manifest_path: Path | None):
    """Validate a sidecar embedding export and report its shape."""
    try:
        index = load_index(embedding_file)
    except EngineError as err:
        _fail(str(err))
        return
    click.echo(f"ok: {len(index)} embeddings, dim {index.dim}")
    if manifest_path:
        summary = {
            "path": str(embedding_file),
            "count": len(index),
            "dim": index.dim,
            "first_ids": index.ids[:5],
        }
        manifest_path.write_text(json.dumps(summary, indent=2), encoding="utf-8")


# -------------------------------------------------------------------- caption


@main.command()
@click.option("--queries", "queries_path", type=_in_path, required=True)
@click.option("--images", "images_dir", type=_in_dir, required=True)
@click.option("--config", "config_path", type=_in_path, required=True)
@click.option("--out", "out_path", type=_out_path, required=True)
@click.option("--template", "template_path", type=_in_path, default=None,
              help="Override the built-in caption prompt template.")
@click.option("--workers", type=int, default=None)
def caption(queries_path, images_dir, config_path, out_path, template_path, workers):
    """Generate a target-image caption for every query."""
    cfg = _load_config(config_path)
    if cfg.mllm_caption is None:
        _fail("config has no mllm_caption section")
    queries = load_queries(queries_path)
    template = load_template("caption", template_path)
    client = MllmClient(cfg.mllm_caption)
    captioner = MllmCaptioner(client, template, ImageDirectory(images_dir), cfg.cache_dir)
    workers = workers or cfg.mllm_caption.max_inflight
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(captioner.get, queries))
    captions = {q.query_id: text for q, text in zip(queries, results)}
    write_captions_jsonl(queries, captions, out_path)
    missing = sum(1 for text in captions.values() if text is None)
    click.echo(f"captions: {len(queries) - missing} ok, {missing} missing -> {out_path}")


# ------------------------------------------------------------------- retrieve


@main.command()
@click.option("--gallery", "gallery_path", type=_in_path, required=True)
@click.option("--queries", "queries_path", type=_in_path, required=True)
@click.option("--text-emb", "text_emb_path", type=_in_path, required=True,
              help="Modification-text embeddings keyed by query id.")
@click.option("--ref-emb", "ref_emb_path", type=_in_path, default=None,
              help="Reference-image embeddings; defaults to the gallery file.")
@click.option("--captions", "captions_path", type=_in_path, default=None,
              help="Caption JSONL from the caption subcommand.")
@click.option("--caption-emb", "caption_emb_path", type=_in_path, default=None,
              help="Caption embeddings keyed by query id.")
@click.option("--config", "config_path", type=_in_path, default=None)
@click.option("--alpha", type=float, default=None, help="Override the fusion alpha.")
@click.option("--beta", type=float, default=None, help="Override the fusion beta.")
@click.option("--depth", type=int, default=None,
              help="Ranking depth to dump; default max(k, 50).")
@click.option("--out", "out_path", type=_out_path, required=True)
@click.option("--manifest", "manifest_path", type=_out_path, default=None)
def retrieve(gallery_path, queries_path, text_emb_path, ref_emb_path, captions_path,
             caption_emb_path, config_path, alpha, beta, depth, out_path, manifest_path):
    """Fuse each query and rank the gallery (global ranking dump)."""
    cfg = _load_config(config_path)
    if alpha is not None or beta is not None:
        cfg = cfg.with_fusion(alpha=alpha, beta=beta)
    if (captions_path is None) != (caption_emb_path is None):
        _fail("--captions and --caption-emb must be given together")
    index = load_index(gallery_path)
    queries = load_queries(queries_path)
    text_index = load_index(text_emb_path)
    ref_index = load_index(ref_emb_path) if ref_emb_path else None
    captions = StaticCaptions.from_jsonl(captions_path) if captions_path else None
    caption_index = load_index(caption_emb_path) if caption_emb_path else None
    depth = depth if depth is not None else max(cfg.k, 50)
    try:
        result = run_sqaf(
            queries, index, cfg,
            text_index=text_index, caption_index=caption_index,
            captions=captions, ref_index=ref_index, depth=depth,
        )
    except EngineError as err:
        _fail(str(err))
        return
    write_rankings((result.rankings[q.query_id] for q in queries), out_path)
    manifest_path = manifest_path or _default_manifest(out_path)
    write_manifest(
        manifest_path, cfg,
        inputs={"gallery": str(gallery_path), "queries": str(queries_path)},
        extra={"depth": depth, "caption_missing": sorted(result.caption_missing)},
    )
    note = f", {len(result.caption_missing)} caption-free" if result.caption_missing else ""
    click.echo(f"ranked {len(queries)} queries to depth {depth}{note} -> {out_path}")


# ----------------------------------------------------------------------- grid


@main.command("grid")
@click.option("--rankings", "rankings_path", type=_in_path, required=True)
@click.option("--images", "images_dir", type=_in_dir, required=True)
@click.option("--out-dir", "out_dir", type=click.Path(file_okay=False, path_type=Path),
              required=True)
@click.option("--config", "config_path", type=_in_path, default=None)
@click.option("--query-id", "query_ids", multiple=True,
              help="Limit to specific queries (repeatable).")
def grid_cmd(rankings_path, images_dir, out_dir, config_path, query_ids):
    """Render candidate grids to PNG files for inspection."""
    cfg = _load_config(config_path)
    spec = cfg.grid
    k = spec.m * spec.m
    parsed = read_rankings(rankings_path)
    wanted = list(query_ids) if query_ids else list(parsed)
    source = ImageDirectory(images_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for query_id in wanted:
        if query_id not in parsed:
            _fail(f"query {query_id!r} not in {rankings_path}")
        window = parsed[query_id][:k]
        if len(window) < k:
            _fail(f"query {query_id!r} has {len(window)} candidates, needs {k}")
        try:
            rasters = [(gid, source.load_rgb(gid)) for gid, _ in window]
            composite = compose_grid(rasters, spec)
        except EngineError as err:
            _fail(str(err))
            return
        save_png(composite.pixels, out_dir / f"{query_id}.png")
    click.echo(f"wrote {len(wanted)} grid images ({spec.m}x{spec.m}) -> {out_dir}")


# --------------------------------------------------------------------- rerank


@main.command("rerank")
@click.option("--rankings", "rankings_path", type=_in_path, required=True)
@click.option("--queries", "queries_path", type=_in_path, required=True)
@click.option("--images", "images_dir", type=_in_dir, required=True)
@click.option("--config", "config_path", type=_in_path, required=True)
@click.option("--captions", "captions_path", type=_in_path, default=None,
              help="Caption JSONL; used when intent_form is generated_caption.")
@click.option("--template", "template_path", type=_in_path, default=None)
@click.option("--out", "out_path", type=_out_path, required=True)
@click.option("--audit", "audit_path", type=_out_path, required=True)
@click.option("--manifest", "manifest_path", type=_out_path, default=None)
def rerank_cmd(rankings_path, queries_path, images_dir, config_path, captions_path,
               template_path, out_path, audit_path, manifest_path):
    """Grid-rerank the top window of each ranking; writes dump + audit log."""
    cfg = _load_config(config_path)
    if cfg.mllm_rerank is None:
        _fail("config has no mllm_rerank section")
    queries = load_queries(queries_path)
    candidates = rankings_to_candidate_lists(read_rankings(rankings_path))
    caption_map: dict[str, str] = {}
    if captions_path:
        source = StaticCaptions.from_jsonl(captions_path)
        caption_map = {
            q.query_id: text for q in queries if (text := source.get(q)) is not None
        }
    kind = "rerank" if cfg.intent_form == "reference_plus_text" else "rerank_caption_intent"
    template = load_template(kind, template_path)
    try:
        results = run_ebr(
            candidates, ImageDirectory(images_dir), cfg,
            queries=queries, captions=caption_map, template=template,
        )
    except EngineError as err:
        _fail(str(err))
        return
    write_rankings((results[qid][0] for qid in results), out_path)
    write_audit_log((results[qid][1] for qid in results), audit_path)
    write_manifest(
        manifest_path or _default_manifest(out_path), cfg,
        inputs={"rankings": str(rankings_path), "queries": str(queries_path)},
        prompts={kind: template.version},
    )
    statuses = [results[qid][1].status for qid in results]
    summary = ", ".join(f"{statuses.count(s)} {s}" for s in ("full", "partial", "fallback", "skipped")
                        if statuses.count(s))
    click.echo(f"reranked {len(results)} queries ({summary}) -> {out_path}")


# ------------------------------------------------------------------- evaluate


@main.command("evaluate")
@click.option("--rankings", "rankings_path", type=_in_path, required=True)
@click.option("--annotations", "annotations_path", type=_in_path, required=True)
@click.option("--metrics", "metrics_spec", default="R@1,R@5,R@10",
              show_default=True, help='Comma list such as "R@1,R_subset@1,mAP@5".')
@click.option("--out-json", "json_path", type=_out_path, required=True)
@click.option("--out-table", "table_path", type=_out_path, default=None,
              help="Also write the aligned text table to this path.")
@click.option("--figure", "figure_path", type=_out_path, default=None,
              help="Figure output path; defaults next to --out-json.")
@click.option("--no-figure", is_flag=True, default=False)
def evaluate_cmd(rankings_path, annotations_path, metrics_spec, json_path, table_path,
                 figure_path, no_figure):
    """Score rankings against annotations; writes JSON, table, and a figure."""
    annotations = load_annotations(annotations_path)
    rankings = {qid: [gid for gid, _ in pairs]
                for qid, pairs in read_rankings(rankings_path).items()}
    try:
        spec = parse_metric_spec(metrics_spec)
        report = evaluate_rankings(rankings, annotations, spec)
    except (EngineError, ValueError) as err:
        _fail(str(err))
        return
    json_path.write_text(json.dumps(report_to_dict(report), indent=2), encoding="utf-8")
    table = render_table(report)
    if table_path:
        table_path.write_text(table + "\n", encoding="utf-8")
    if not no_figure:
        figure_path = figure_path or json_path.with_suffix(".png")
        figures.save_report_figure(report, figure_path)
    click.echo(table)


# ---------------------------------------------------------------------- sweep


def _parse_floats(raw: str) -> list[float]:
    return [float(tok) for tok in raw.split(",") if tok.strip()]


@main.command("sweep")
@click.option("--mode", type=click.Choice(["alpha-beta", "grid-size"]),
              default="alpha-beta", show_default=True)
@click.option("--annotations", "annotations_path", type=_in_path, required=True)
@click.option("--metric", "metric_spec", default="mAP@5", show_default=True)
@click.option("--gallery", "gallery_path", type=_in_path, default=None)
@click.option("--queries", "queries_path", type=_in_path, default=None)
@click.option("--text-emb", "text_emb_path", type=_in_path, default=None)
@click.option("--ref-emb", "ref_emb_path", type=_in_path, default=None)
@click.option("--captions", "captions_path", type=_in_path, default=None)
@click.option("--caption-emb", "caption_emb_path", type=_in_path, default=None)
@click.option("--alphas", default="0,0.25,0.5,0.75,1", show_default=True)
@click.option("--betas", default="0,0.25,0.5,0.75,1", show_default=True)
@click.option("--rankings", "rankings_path", type=_in_path, default=None,
              help="[grid-size] base ranking dump, deep enough for the largest window.")
@click.option("--images", "images_dir", type=_in_dir, default=None)
@click.option("--sizes", default="2,3,4,5,6", show_default=True,
              help="[grid-size] grid sides to try.")
@click.option("--config", "config_path", type=_in_path, default=None)
@click.option("--depth", type=int, default=None)
@click.option("--out-csv", "csv_path", type=_out_path, required=True)
@click.option("--figure", "figure_path", type=_out_path, default=None)
@click.option("--no-figure", is_flag=True, default=False)
def sweep(mode, annotations_path, metric_spec, gallery_path, queries_path, text_emb_path,
          ref_emb_path, captions_path, caption_emb_path, alphas, betas, rankings_path,
          images_dir, sizes, config_path, depth, csv_path, figure_path, no_figure):
    """Ablation sweeps: fusion-weight grid, or rerank window size."""
    cfg = _load_config(config_path)
    annotations = load_annotations(annotations_path)
    (metric, metric_k), = parse_metric_spec(metric_spec)
    label = metric_label(metric, metric_k)
    figure_path = figure_path or csv_path.with_suffix(".png")

    if mode == "alpha-beta":
        for name, value in (("--gallery", gallery_path), ("--queries", queries_path),
                            ("--text-emb", text_emb_path)):
            if value is None:
                _fail(f"{name} is required for an alpha-beta sweep")
        index = load_index(gallery_path)
        queries = load_queries(queries_path)
        text_index = load_index(text_emb_path)
        ref_index = load_index(ref_emb_path) if ref_emb_path else None
        captions = StaticCaptions.from_jsonl(captions_path) if captions_path else None
        caption_index = load_index(caption_emb_path) if caption_emb_path else None
        alpha_values = _parse_floats(alphas)
        beta_values = _parse_floats(betas)
        depth = depth if depth is not None else max(cfg.k, metric_k)

        grid_values = np.zeros((len(alpha_values), len(beta_values)))
        for i, a in enumerate(alpha_values):
            for j, b in enumerate(beta_values):
                result = run_sqaf(
                    queries, index, cfg.with_fusion(alpha=a, beta=b),
                    text_index=text_index, caption_index=caption_index,
                    captions=captions, ref_index=ref_index, depth=depth,
                )
                rankings = {qid: ranked.ids() for qid, ranked in result.rankings.items()}
                report = evaluate_rankings(rankings, annotations, [(metric, metric_k)])
                grid_values[i, j] = report.per_metric[label]

        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["alpha"] + [f"beta={b:g}" for b in beta_values])
            for i, a in enumerate(alpha_values):
                writer.writerow([f"{a:g}"] + [f"{v:.2f}" for v in grid_values[i]])
        if not no_figure:
            figures.save_sweep_heatmap(alpha_values, beta_values, grid_values, label, figure_path)
        click.echo(f"swept {len(alpha_values)}x{len(beta_values)} fusion grid -> {csv_path}")
        return

    # grid-size sweep
    for name, value in (("--rankings", rankings_path), ("--queries", queries_path),
                        ("--images", images_dir)):
        if value is None:
            _fail(f"{name} is required for a grid-size sweep")
    if cfg.mllm_rerank is None:
        _fail("config has no mllm_rerank section")
    queries = load_queries(queries_path)
    base = rankings_to_candidate_lists(read_rankings(rankings_path))
    size_values = [int(tok) for tok in sizes.split(",") if tok.strip()]
    rows = []
    for m in size_values:
        sized = replace(cfg, grid=replace(cfg.grid, m=m), k=m * m)
        results = run_ebr(base, ImageDirectory(images_dir), sized, queries=queries)
        rankings = {qid: results[qid][0].ids() for qid in results}
        report = evaluate_rankings(rankings, annotations, [(metric, metric_k)])
        rows.append((m, m * m, report.per_metric[label]))
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "window", label])
        for m, window, value in rows:
            writer.writerow([m, window, f"{value:.2f}"])
    if not no_figure:
        figures.save_grid_size_curve(
            [r[0] for r in rows], [r[2] for r in rows], label, figure_path
        )
    click.echo(f"swept grid sizes {size_values} -> {csv_path}")


if __name__ == "__main__":
    main()
