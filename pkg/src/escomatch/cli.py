"""Command-line interface for the skills-matching pipeline.

Commands follow the pipeline stages: ingest (validate taxonomy), gen-data
(synthetic corpus), embed (label + sentence indices), train (classifier
bank), match (one span), eval (full dataset), cache (inspect/clear response
cache). Exit codes: 0 success, 1 pipeline error, 2 configuration error.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import candidates as cand
from . import datagen, evaluation, pipeline, providers, taxonomy as taxo
from .index import load_index, save_index
from .templates import template_version


class ConfigError(click.UsageError):
    """Bad configuration; maps to exit code 2 via click."""


def _pipeline_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except click.ClickException:
            raise
        except FileNotFoundError as exc:
            raise ConfigError(str(exc)) from exc
        except Exception as exc:  # noqa: BLE001 - boundary: report and exit 1
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as f:
            config = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return config


def _setting(flag_value, config: dict, key: str, default):
    """Precedence: explicit flag > config file > default."""
    if flag_value is not None:
        return flag_value
    if key in config:
        return config[key]
    return default


def _make_embedder(provider: str, config: dict, dimension: int, seed: int):
    if provider == "mock":
        return providers.MockEmbedder(dimension=dimension, seed=seed)
    endpoint = config.get("embed_endpoint")
    if not endpoint:
        raise ConfigError("http provider requires embed_endpoint in the config file")
    return providers.HttpEmbeddingProvider(
        endpoint=endpoint, model_id=config.get("embed_model", "e5-large-v2")
    )


def _make_chat(provider: str, config: dict, cache_dir: str | None):
    if provider == "mock":
        chat = providers.OfflineChatProvider()
    else:
        endpoint = config.get("chat_endpoint")
        if not endpoint:
            raise ConfigError("http provider requires chat_endpoint in the config file")
        chat = providers.HttpChatProvider(endpoint=endpoint)
    if cache_dir:
        chat = providers.CachedChatProvider(chat, cache_dir)
    return chat


def _load_taxonomy(path: str, format: str, categories: str | None) -> taxo.Taxonomy:
    table = taxo.load_category_table(categories) if categories else None
    return taxo.load_taxonomy(path, format=format, category_table=table)


common_options = [
    click.option("--config", "config_path", type=click.Path(), default=None, help="JSON config file."),
    click.option("--provider", type=click.Choice(["mock", "http"]), default=None),
    click.option("--seed", type=int, default=None),
    click.option("--cache-dir", type=click.Path(), default=None),
    click.option("--dimension", type=int, default=None, help="Mock embedder dimension."),
]


def _with_common(func):
    for option in reversed(common_options):
        func = option(func)
    return func


@click.group()
def main() -> None:
    """Zero-shot skills matching against the ESCO taxonomy."""


@main.command()
@click.option("--taxonomy", "taxonomy_path", required=True, type=click.Path(exists=True))
@click.option("--format", "format_", type=click.Choice(["esco-csv", "jsonl"]), default="esco-csv")
@click.option("--categories", type=click.Path(exists=True), default=None)
@_pipeline_errors
def ingest(taxonomy_path: str, format_: str, categories: str | None, **_: object) -> None:
    """Load and validate a taxonomy file; print counts."""
    tax = _load_taxonomy(taxonomy_path, format_, categories)
    by_category: dict[str, int] = {}
    for skill in tax.skills:
        by_category[skill.category] = by_category.get(skill.category, 0) + 1
    click.echo(f"skills loaded: {len(tax)}")
    for category in taxo.CATEGORIES:
        click.echo(f"  {category}: {by_category.get(category, 0)}")


@main.command(name="gen-data")
@click.option("--taxonomy", "taxonomy_path", required=True, type=click.Path(exists=True))
@click.option("--format", "format_", type=click.Choice(["esco-csv", "jsonl"]), default="esco-csv")
@click.option("--categories", type=click.Path(exists=True), default=None)
@click.option("--out", required=True, type=click.Path())
@click.option("--report", "report_path", type=click.Path(), default=None)
@click.option("--jobs", type=int, default=1)
@_with_common
@_pipeline_errors
def gen_data(
    taxonomy_path: str,
    format_: str,
    categories: str | None,
    out: str,
    report_path: str | None,
    jobs: int,
    config_path: str | None,
    provider: str | None,
    seed: int | None,
    cache_dir: str | None,
    dimension: int | None,
) -> None:
    """Generate the synthetic training corpus (resumable via the cache)."""
    config = _load_config_file(config_path)
    provider = _setting(provider, config, "provider", "mock")
    seed = _setting(seed, config, "seed", 0)
    cache_dir = _setting(cache_dir, config, "cache_dir", None)
    tax = _load_taxonomy(taxonomy_path, format_, categories)
    chat = _make_chat(provider, config, cache_dir)
    gen_config = datagen.DataGenConfig(model_id=config.get("datagen_model", "gpt-3.5-turbo-0301"))
    corpus, report = datagen.generate_dataset(tax, chat, gen_config, max_workers=jobs)
    datagen.save_corpus(corpus, out)
    payload = report.to_json()
    payload["metadata"] = {"seed": seed, "template_version": template_version()}
    if report_path:
        Path(report_path).write_text(json.dumps(payload, indent=2, ensure_ascii=False), encoding="utf-8")
    click.echo(report.summary(), err=True)
    click.echo(f"corpus written: {out} ({len(corpus)} examples)")


@main.command()
@click.option("--taxonomy", "taxonomy_path", required=True, type=click.Path(exists=True))
@click.option("--format", "format_", type=click.Choice(["esco-csv", "jsonl"]), default="esco-csv")
@click.option("--categories", type=click.Path(exists=True), default=None)
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--labels-out", required=True, type=click.Path())
@click.option("--sentences-out", required=True, type=click.Path())
@click.option("--include-descriptions", is_flag=True, default=False)
@_with_common
@_pipeline_errors
def embed(
    taxonomy_path: str,
    format_: str,
    categories: str | None,
    corpus_path: str,
    labels_out: str,
    sentences_out: str,
    include_descriptions: bool,
    config_path: str | None,
    provider: str | None,
    seed: int | None,
    cache_dir: str | None,
    dimension: int | None,
) -> None:
    """Build the label and sentence vector indices."""
    config = _load_config_file(config_path)
    provider = _setting(provider, config, "provider", "mock")
    seed = _setting(seed, config, "seed", 0)
    dimension = _setting(dimension, config, "dimension", 64)
    tax = _load_taxonomy(taxonomy_path, format_, categories)
    corpus = datagen.load_corpus(corpus_path)
    embedder = _make_embedder(provider, config, dimension, seed)
    labels_index = pipeline.build_label_index(tax, embedder, include_descriptions)
    sentence_index = pipeline.build_sentence_index(corpus, embedder)
    save_index(labels_index, labels_out)
    save_index(sentence_index, sentences_out)
    click.echo(f"labels index: {labels_out} ({len(labels_index)} entries)")
    click.echo(f"sentences index: {sentences_out} ({len(sentence_index)} entries)")


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--sentences", "sentences_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@_with_common
@_pipeline_errors
def train(
    corpus_path: str,
    sentences_path: str,
    out: str,
    config_path: str | None,
    provider: str | None,
    seed: int | None,
    cache_dir: str | None,
    dimension: int | None,
) -> None:
    """Train the one-vs-all classifier bank on the synthetic corpus."""
    config = _load_config_file(config_path)
    seed = _setting(seed, config, "seed", 0)
    corpus = datagen.load_corpus(corpus_path)
    sentence_index = load_index(sentences_path)
    training_config = cand.TrainingConfig(seed=seed)
    models = cand.train_classifier_bank(corpus, sentence_index, training_config)
    cand.save_bank(models, training_config, out)
    click.echo(cand.convergence_summary(models), err=True)
    click.echo(f"classifier bank: {out} ({len(models)} models)")


def _load_pipeline_inputs(
    taxonomy_path, format_, categories, labels_path, sentences_path, bank_path
):
    tax = _load_taxonomy(taxonomy_path, format_, categories)
    labels_index = load_index(labels_path) if labels_path else None
    sentence_index = load_index(sentences_path) if sentences_path else None
    models = cand.load_bank(bank_path)[0] if bank_path else []
    return tax, labels_index, sentence_index, models


@main.command()
@click.option("--span", required=True)
@click.option("--taxonomy", "taxonomy_path", required=True, type=click.Path(exists=True))
@click.option("--format", "format_", type=click.Choice(["esco-csv", "jsonl"]), default="esco-csv")
@click.option("--categories", type=click.Path(exists=True), default=None)
@click.option("--labels", "labels_path", type=click.Path(exists=True), default=None)
@click.option("--sentences", "sentences_path", type=click.Path(exists=True), default=None)
@click.option("--bank", "bank_path", type=click.Path(exists=True), default=None)
@click.option("--sources", type=click.Choice(list(pipeline.SOURCES)), default="both")
@click.option("--variant", type=click.Choice(["natural", "code"]), default="natural")
@click.option("--no-rerank", is_flag=True, default=False)
@_with_common
@_pipeline_errors
def match(
    span: str,
    taxonomy_path: str,
    format_: str,
    categories: str | None,
    labels_path: str | None,
    sentences_path: str | None,
    bank_path: str | None,
    sources: str,
    variant: str,
    no_rerank: bool,
    config_path: str | None,
    provider: str | None,
    seed: int | None,
    cache_dir: str | None,
    dimension: int | None,
) -> None:
    """Print candidates and the ranked prediction for one span."""
    config = _load_config_file(config_path)
    provider = _setting(provider, config, "provider", "mock")
    seed = _setting(seed, config, "seed", 0)
    dimension = _setting(dimension, config, "dimension", 64)
    cache_dir = _setting(cache_dir, config, "cache_dir", None)
    tax, labels_index, sentence_index, models = _load_pipeline_inputs(
        taxonomy_path, format_, categories, labels_path, sentences_path, bank_path
    )
    embedder = _make_embedder(provider, config, dimension, seed)
    chat = None if no_rerank else _make_chat(provider, config, cache_dir)
    candidate_set, prediction = pipeline.predict_span(
        span,
        embedder,
        models,
        labels_index,
        sentence_index,
        chat,
        tax,
        variant=variant,
        sources=sources,
        model_id=config.get("rerank_model", "gpt-4-0314"),
    )
    click.echo(f"candidates ({len(candidate_set.candidates)}):")
    for candidate in candidate_set.candidates:
        label = tax.by_id[candidate.skill_id].preferred_label
        click.echo(f"  [{candidate.source:>12}] {candidate.score:+.4f}  {label}")
    click.echo("ranked:")
    for position, skill_id in enumerate(prediction.ranked, start=1):
        click.echo(f"  {position:2d}. {tax.by_id[skill_id].preferred_label}")
    if prediction.hallucinated_count:
        click.echo(f"hallucinated (dropped): {prediction.hallucinated_count}", err=True)


@main.command(name="eval")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--taxonomy", "taxonomy_path", required=True, type=click.Path(exists=True))
@click.option("--format", "format_", type=click.Choice(["esco-csv", "jsonl"]), default="esco-csv")
@click.option("--categories", type=click.Path(exists=True), default=None)
@click.option("--labels", "labels_path", type=click.Path(exists=True), default=None)
@click.option("--sentences", "sentences_path", type=click.Path(exists=True), default=None)
@click.option("--bank", "bank_path", type=click.Path(exists=True), default=None)
@click.option("--sources", type=click.Choice(list(pipeline.SOURCES)), default="both")
@click.option("--variant", type=click.Choice(["natural", "code"]), default="natural")
@click.option("--no-rerank", is_flag=True, default=False)
@click.option("--out", "out_path", type=click.Path(), default=None)
@_with_common
@_pipeline_errors
def eval_command(
    dataset_path: str,
    taxonomy_path: str,
    format_: str,
    categories: str | None,
    labels_path: str | None,
    sentences_path: str | None,
    bank_path: str | None,
    sources: str,
    variant: str,
    no_rerank: bool,
    out_path: str | None,
    config_path: str | None,
    provider: str | None,
    seed: int | None,
    cache_dir: str | None,
    dimension: int | None,
) -> None:
    """Run the full pipeline over an evaluation dataset and report metrics."""
    config = _load_config_file(config_path)
    provider = _setting(provider, config, "provider", "mock")
    seed = _setting(seed, config, "seed", 0)
    dimension = _setting(dimension, config, "dimension", 64)
    cache_dir = _setting(cache_dir, config, "cache_dir", None)
    tax, labels_index, sentence_index, models = _load_pipeline_inputs(
        taxonomy_path, format_, categories, labels_path, sentences_path, bank_path
    )
    dataset = evaluation.load_eval_dataset(dataset_path, tax)
    embedder = _make_embedder(provider, config, dimension, seed)
    chat = None if no_rerank else _make_chat(provider, config, cache_dir)
    report, _ = pipeline.run_eval(
        dataset,
        tax,
        embedder,
        models,
        labels_index,
        sentence_index,
        chat,
        variant=variant,
        sources=sources,
        model_id=config.get("rerank_model", "gpt-4-0314"),
        seed=seed,
    )
    click.echo(evaluation.render_report(report))
    if out_path:
        Path(out_path).write_text(
            json.dumps(report.to_json(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        click.echo(f"report written: {out_path}", err=True)


@main.command()
@click.option("--cache-dir", required=True, type=click.Path())
@click.option("--clear", is_flag=True, default=False)
@_pipeline_errors
def cache(cache_dir: str, clear: bool) -> None:
    """Inspect or clear the chat response cache."""
    if clear:
        removed = providers.clear_cache(cache_dir)
        click.echo(f"removed {removed} cached responses")
    else:
        stats = providers.cache_stats(cache_dir)
        click.echo(f"entries: {stats['entries']}  bytes: {stats['bytes']}")


if __name__ == "__main__":
    main()
