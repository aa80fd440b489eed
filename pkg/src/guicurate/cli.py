"""Command-line entry points.

Global flags: --config points at the pipeline config JSON, --seed overrides
the config seed, --mock forces the offline backend. Subcommands cover each
stage individually plus the full pipeline, dataset assembly, and the review
server.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .errors import CurationError
from .geometry import BBox, Point
from .jsonl import read_jsonl, write_jsonl
from .metrics import classification_report, element_accuracy, grounding_report
from .pipeline import (
    PipelineConfig,
    assemble_final,
    load_config,
    make_client,
    run_pipeline,
)
from .ranker import (
    EligibilityRule,
    build_training_triplets,
    expand_benchmark_binary,
    label_counts,
    negative_fraction,
)
from .records import group_by_image, load_records
from .review import DecisionLog, create_review_app
from .rewards import RewardConfig, score_rows


def _require_config(ctx: click.Context) -> PipelineConfig:
    path = ctx.obj.get("config")
    if path is None:
        raise click.UsageError("this command needs --config")
    return load_config(
        path, seed_override=ctx.obj.get("seed"), force_mock=ctx.obj.get("mock", False)
    )


@click.group()
@click.option("--config", type=click.Path(exists=True, dir_okay=False),
              help="Pipeline config JSON.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--mock", is_flag=True, help="Force the offline mock backend.")
@click.pass_context
def main(ctx: click.Context, config: str | None, seed: int | None,
         mock: bool) -> None:
    ctx.ensure_object(dict)
    ctx.obj.update({"config": config, "seed": seed, "mock": mock})


def _fail(exc: Exception) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(1)


@main.command()
@click.pass_context
def run(ctx: click.Context) -> None:
    """Run the full curation pipeline."""
    try:
        config = _require_config(ctx)
        result = run_pipeline(config)
    except CurationError as exc:
        _fail(exc)
    for row in result.rows:
        flag = " (reused)" if row.reused else ""
        click.echo(
            f"{row.name}: {row.input_count} -> {row.output_count}"
            f" deferred={row.deferred} errors={row.errors}{flag}"
        )
    click.echo(f"manifest: {result.manifest_path}")


@main.command()
@click.pass_context
def partition(ctx: click.Context) -> None:
    """Split records into easy and hard by zero-shot grounding."""
    try:
        config = _require_config(ctx)
        result = run_pipeline(config, until="difficulty")
    except CurationError as exc:
        _fail(exc)
    for row in result.rows:
        click.echo(
            f"{row.name}: {row.input_count} -> {row.output_count}"
            f" deferred={row.deferred}{' (reused)' if row.reused else ''}"
        )
    out = Path(config.output_dir)
    click.echo(f"easy: {out / 'easy.jsonl'}")
    click.echo(f"hard: {out / 'difficulty.jsonl'}")


@main.command("build-ranker-data")
@click.option("--easy", "easy_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Easy records (defaults to the config output dir).")
@click.option("--outcomes", "outcomes_path",
              type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--positive-probability", type=float, default=0.5, show_default=True)
@click.pass_context
def build_ranker_data(ctx: click.Context, easy_path: str | None,
                      outcomes_path: str | None, out_path: str,
                      positive_probability: float) -> None:
    """Build labeled ranker training examples from the easy partition."""
    try:
        config = _require_config(ctx)
        out_dir = Path(config.output_dir)
        easy = load_records(easy_path or out_dir / "easy.jsonl")
        outcome_rows = read_jsonl(outcomes_path or out_dir / "outcomes.jsonl")
        outcomes = {str(row["id"]): str(row["label"]) for row in outcome_rows}
        triplets = build_training_triplets(
            easy, outcomes, config.eligibility, seed=config.seed,
            positive_probability=positive_probability,
        )
        write_jsonl(out_path, (t.to_row() for t in triplets))
    except CurationError as exc:
        _fail(exc)
    pos, neg = label_counts(triplets)
    click.echo(f"triplets: {pos + neg} ({pos} positive, {neg} negative)")


@main.command("convert-benchmark")
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Benchmark records JSONL.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def convert_benchmark(input_path: str, out_path: str) -> None:
    """Expand benchmark annotations into binary ranker evaluation pairs."""
    try:
        records = load_records(input_path)
        triplets, duplicates = expand_benchmark_binary(group_by_image(records))
        write_jsonl(out_path, (t.to_row() for t in triplets))
    except CurationError as exc:
        _fail(exc)
    pos, neg = label_counts(triplets)
    click.echo(f"pairs: {pos + neg} ({pos} positive, {neg} negative)")
    click.echo(f"negative fraction: {negative_fraction(triplets):.3f}")
    if duplicates:
        click.echo(f"dropped duplicate annotations: {duplicates}")


@main.command("select-diverse")
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--ratio", type=float, default=None,
              help="Keep ratio (defaults to the config value).")
@click.pass_context
def select_diverse_cmd(ctx: click.Context, input_path: str, out_path: str,
                       ratio: float | None) -> None:
    """Cluster embeddings and keep the records nearest each centroid."""
    from .diversity import select_diverse
    from .pipeline import PipelineRun

    try:
        config = _require_config(ctx)
        records = load_records(input_path)
        run_obj = PipelineRun(config)
        matrix = run_obj._embed_records(sorted(records, key=lambda r: r.id))
        selected = select_diverse(
            records, matrix,
            ratio=ratio if ratio is not None else config.diversity.ratio,
            seed=config.stage_seed("diversity"),
            target_dim=config.diversity.target_dim,
            metric=config.diversity.metric,
        )
        write_jsonl(out_path, (rec.to_row() for rec in selected))
    except CurationError as exc:
        _fail(exc)
    click.echo(f"selected {len(selected)} of {len(records)}")


@main.command()
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Rows {id, text, gt_bbox}.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--token-limit", type=int, default=100, show_default=True)
@click.option("--tokenizer", type=click.Choice(["whitespace",
                                                "bytes-per-token-approx"]),
              default="whitespace", show_default=True)
def rewards(input_path: str, out_path: str, token_limit: int,
            tokenizer: str) -> None:
    """Score rollout texts with the verifiable reward components."""
    try:
        config = RewardConfig(token_limit=token_limit, tokenizer=tokenizer)
        scored = list(score_rows(read_jsonl(input_path), config))
        write_jsonl(out_path, scored)
    except CurationError as exc:
        _fail(exc)
    if scored:
        mean_total = sum(row["total"] for row in scored) / len(scored)
        click.echo(f"scored {len(scored)} rows, mean total {mean_total:.3f}")
    else:
        click.echo("scored 0 rows")


@main.command("eval")
@click.option("--task", type=click.Choice(["grounding", "classification",
                                           "element"]), required=True)
@click.option("--gold", "gold_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--pred", "pred_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
def eval_cmd(task: str, gold_path: str, pred_path: str) -> None:
    """Score predictions against gold data.

    grounding: gold records + rows {id, bbox? point?}; classification: rows
    {id, label} + rows {id, label}; element: gold records + rows {id, point}.
    """
    try:
        if task == "grounding":
            gold = load_records(gold_path)
            preds: dict[str, BBox | Point | None] = {}
            for row in read_jsonl(pred_path):
                if row.get("bbox") is not None:
                    preds[str(row["id"])] = BBox(*(float(v) for v in row["bbox"]))
                elif row.get("point") is not None:
                    x, y = row["point"]
                    preds[str(row["id"])] = Point(float(x), float(y))
            report = grounding_report(preds, gold)
            click.echo(report.table(), nl=False)
        elif task == "classification":
            gold_labels = {str(r["id"]): str(r["label"]) for r in read_jsonl(gold_path)}
            pred_labels = {str(r["id"]): str(r["label"]) for r in read_jsonl(pred_path)}
            ids = sorted(gold_labels)
            table = classification_report(
                [gold_labels[i] for i in ids],
                [pred_labels.get(i, "negative") for i in ids],
            )
            click.echo(
                f"accuracy {table.accuracy:.4f}  macro-f1 {table.macro_f1:.4f}"
            )
            click.echo(
                f"positive: p {table.precision_pos:.4f} r {table.recall_pos:.4f} "
                f"f1 {table.f1_pos:.4f}"
            )
            click.echo(
                f"negative: p {table.precision_neg:.4f} r {table.recall_neg:.4f} "
                f"f1 {table.f1_neg:.4f}"
            )
            if table.undefined:
                click.echo(f"undefined ratios: {', '.join(table.undefined)}")
        else:
            gold = load_records(gold_path)
            gold_boxes = {rec.id: rec.gt_box for rec in gold}
            points: dict[str, Point | None] = {}
            for row in read_jsonl(pred_path):
                if row.get("point") is not None:
                    x, y = row["point"]
                    points[str(row["id"])] = Point(float(x), float(y))
            result = element_accuracy(points, gold_boxes)
            click.echo(
                f"element accuracy {result.value:.4f} "
                f"({result.hits}/{result.total}, {len(result.missing)} missing)"
            )
    except CurationError as exc:
        _fail(exc)


@main.command()
@click.option("--survivors", "survivors_path",
              type=click.Path(exists=True, dir_okay=False), default=None,
              help="Review queue records (defaults to review.jsonl in the "
                   "config output dir).")
@click.option("--decisions", "decisions_path", type=click.Path(dir_okay=False),
              default=None)
@click.option("--traces", "traces_path",
              type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.pass_context
def assemble(ctx: click.Context, survivors_path: str | None,
             decisions_path: str | None, traces_path: str | None,
             out_path: str) -> None:
    """Merge review decisions (and optional traces) into the final dataset."""
    try:
        config = _require_config(ctx)
        out_dir = Path(config.output_dir)
        survivors = load_records(survivors_path or out_dir / "review.jsonl")
        log = DecisionLog(decisions_path or out_dir / "decisions.jsonl")
        trace_rows = list(read_jsonl(traces_path)) if traces_path else None
        result = assemble_final(
            survivors, log, trace_rows,
            keep_flagged_traces=config.keep_flagged_traces,
        )
        write_jsonl(out_path, result.rows)
    except CurationError as exc:
        _fail(exc)
    click.echo(
        f"final: {len(result.rows)} accepted, {len(result.rejected)} rejected, "
        f"{len(result.pending)} pending"
    )
    if result.unknown_decisions:
        click.echo(f"decisions for unknown ids: {len(result.unknown_decisions)}")
    if result.flagged_traces:
        click.echo(f"flagged traces: {len(result.flagged_traces)}")


@main.command("serve-review")
@click.option("--survivors", "survivors_path",
              type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8700, show_default=True)
@click.option("--static-dir", type=click.Path(file_okay=False), default=None,
              help="Built frontend directory to serve at /.")
@click.pass_context
def serve_review(ctx: click.Context, survivors_path: str | None, host: str,
                 port: int, static_dir: str | None) -> None:
    """Serve the human-review API (and frontend when built)."""
    import uvicorn

    try:
        config = _require_config(ctx)
        out_dir = Path(config.output_dir)
        survivors = load_records(survivors_path or out_dir / "review.jsonl")
        log = DecisionLog(out_dir / "decisions.jsonl")
        app = create_review_app(
            survivors, log, token=config.review_token, static_dir=static_dir,
        )
    except CurationError as exc:
        _fail(exc)
    click.echo(f"serving review for {len(survivors)} records on {host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
