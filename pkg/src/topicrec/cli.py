"""Command-line pipeline: synthesize, train, evaluate, explain.

Every command reads one TOML config (plus --set overrides), writes its
artifacts under the config's output directory, and reports timing on
stderr only, so stdout stays byte-deterministic for a fixed seed.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error,
5 compatibility error.
"""

import sys
import time
from pathlib import Path

import click
import numpy as np

from . import topic_explain as tx
from .config import load_run_config, run_manifest, write_manifest
from .data import (build_vocabulary, generate_synthetic_dataset,
                   load_stopwords, parse_behaviors_tsv, parse_news_tsv,
                   preprocess_for_topics, write_synthetic_dataset)
from .errors import (CompatibilityError, ConfigError, CorpusError,
                     DegenerateInputError, DimensionError, NumericError,
                     ParseError, TopicRecError)
from .metrics import evaluate_scored
from .model import (RecommenderModel, build_document_table,
                    check_vocabulary_compatible, load_checkpoint,
                    save_checkpoint)
from .trainer import train as run_training

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_COMPAT = 2, 3, 4, 5

# most specific first; CompatibilityError outranks the generic data bucket
_ERROR_EXITS = (
    (ConfigError, EXIT_CONFIG),
    (NumericError, EXIT_NUMERIC),
    (CompatibilityError, EXIT_COMPAT),
    (ParseError, EXIT_DATA),
    (CorpusError, EXIT_DATA),
    (DegenerateInputError, EXIT_DATA),
    (DimensionError, EXIT_DATA),
    (TopicRecError, EXIT_DATA),
    (OSError, EXIT_DATA),
)

_FORMAT_EXTENSIONS = {"ansi": "txt", "html": "html", "tsv": "tsv"}
_SPLIT_ATTR = {"train": "train_behaviors", "valid": "valid_behaviors",
               "test": "test_behaviors"}


def _guarded(name, body):
    """Run a command body, mapping failures to single-line diagnostics."""
    start = time.perf_counter()
    try:
        body()
    except Exception as exc:
        for cls, code in _ERROR_EXITS:
            if isinstance(exc, cls):
                click.echo(f"{name}: {type(exc).__name__}: {exc}", err=True)
                sys.exit(code)
        raise
    click.echo(f"[{name}] finished in {time.perf_counter() - start:.1f}s",
               err=True)


def _config_options(fn):
    fn = click.option("--set", "overrides", multiple=True,
                      metavar="KEY=VALUE",
                      help="Override a config value, e.g. run.seed=7.")(fn)
    fn = click.option("--config", "config_path", default=None,
                      type=click.Path(), help="TOML config file.")(fn)
    return fn


def _out_dirs(config):
    root = Path(config.output_dir)
    dirs = {name: root / name
            for name in ("checkpoints", "reports", "topics", "explanations")}
    for directory in dirs.values():
        directory.mkdir(parents=True, exist_ok=True)
    return dirs


def _default_checkpoint(config):
    return Path(config.output_dir) / "checkpoints" / "model.ckpt"


def _load_corpus(config):
    return parse_news_tsv(config.news_path, config.bodies_path or None)


def _logs_for_split(config, split):
    if split not in _SPLIT_ATTR:
        raise ConfigError(f"unknown split {split!r}")
    path = getattr(config, _SPLIT_ATTR[split])
    if not path:
        raise ConfigError(f"no behaviors file configured for split {split!r}")
    return parse_behaviors_tsv(path)


def _load_model(config, checkpoint):
    path = Path(checkpoint) if checkpoint else _default_checkpoint(config)
    model, manifest = load_checkpoint(path)
    return model, manifest, path


@click.group()
def main():
    """Topic-attentive news recommendation pipeline."""


@main.command(name="synth-data")
@_config_options
@click.option("--out-dir", required=True, type=click.Path(),
              help="Directory for the generated TSV files.")
def synth_data(config_path, overrides, out_dir):
    """Generate a planted-topic synthetic dataset."""

    def body():
        config = load_run_config(config_path, overrides)
        dataset = generate_synthetic_dataset(config.synthetic)
        paths = write_synthetic_dataset(dataset, out_dir)
        for role in sorted(paths):
            click.echo(f"{role}\t{paths[role]}")

    _guarded("synth-data", body)


@main.command()
@_config_options
def train(config_path, overrides):
    """Train a model and write a checkpoint plus a run report."""

    def body():
        config = load_run_config(config_path, overrides)
        dirs = _out_dirs(config)
        articles = _load_corpus(config)
        train_logs = parse_behaviors_tsv(config.train_behaviors)
        val_logs = (parse_behaviors_tsv(config.valid_behaviors)
                    if config.valid_behaviors else [])
        model = RecommenderModel.build(
            articles, config.model, seed=config.seed,
            pretrained_path=config.embeddings_path or None)
        result = run_training(model, train_logs, val_logs, articles,
                              config.training)
        checkpoint = dirs["checkpoints"] / "model.ckpt"
        save_checkpoint(result.model, checkpoint,
                        training_config=config.training,
                        epoch=result.best_epoch)
        (dirs["reports"] / "train_report.txt").write_text(
            result.report(), encoding="utf-8")
        manifest = run_manifest(
            config, "train",
            ("news", "bodies", "train_behaviors", "valid_behaviors",
             "embeddings"))
        write_manifest(manifest, dirs["reports"] / "run_manifest.json")
        if result.aborted:
            click.echo("training aborted on divergence; the checkpoint "
                       "holds the last healthy state", err=True)
        click.echo(str(checkpoint))

    _guarded("train", body)


@main.command()
@_config_options
@click.option("--checkpoint", default=None, type=click.Path())
@click.option("--split", default="test",
              type=click.Choice(sorted(_SPLIT_ATTR)))
def evaluate(config_path, overrides, checkpoint, split):
    """Score one split and print AUC / MRR / nDCG@5 / nDCG@10."""

    def body():
        config = load_run_config(config_path, overrides)
        dirs = _out_dirs(config)
        model, _, _ = _load_model(config, checkpoint)
        articles = _load_corpus(config)
        check_vocabulary_compatible(model, build_vocabulary(articles))
        logs = _logs_for_split(config, split)
        table = build_document_table(articles, model.vocab,
                                     model.config.n_title,
                                     model.config.n_body)
        scored = model.score_impressions(table, logs)
        report = evaluate_scored(scored)
        text = report.to_tsv()
        (dirs["reports"] / f"eval_{split}.tsv").write_text(
            text, encoding="utf-8")
        click.echo(text, nl=False)

    _guarded("evaluate", body)


def _descriptor_rows(descriptors, vocab_note=""):
    lines = ["topic_id\trank\ttoken\tweight"]
    for topic_id, topic in enumerate(descriptors.per_topic):
        for rank, (token, weight) in enumerate(topic, start=1):
            lines.append(f"{topic_id}\t{rank}\t{token}\t{weight:.12g}")
    if vocab_note:
        lines.append(vocab_note)
    return "\n".join(lines) + "\n"


@main.command()
@_config_options
@click.option("--checkpoint", default=None, type=click.Path())
def topics(config_path, overrides, checkpoint):
    """Write the per-topic descriptor table for a trained model."""

    def body():
        config = load_run_config(config_path, overrides)
        dirs = _out_dirs(config)
        model, _, _ = _load_model(config, checkpoint)
        articles = _load_corpus(config)
        allowed = preprocess_for_topics(
            articles, model.vocab, min_df=config.min_df,
            max_df_frac=config.max_df_frac, stopwords=load_stopwords())
        distribution = tx.compute_global_topics(
            model.topic_params, model.embedding.data, allowed)
        descriptors = tx.extract_descriptors(distribution, model.vocab,
                                             m=config.descriptors)
        if descriptors.short:
            click.echo("note: fewer eligible tokens than requested "
                       "descriptors", err=True)
        path = dirs["topics"] / "descriptors.tsv"
        path.write_text(_descriptor_rows(descriptors), encoding="utf-8")
        click.echo(str(path))

    _guarded("topics", body)


def _coherence_block(model, articles, allowed, m, epsilon, top_fraction):
    distribution = tx.compute_global_topics(
        model.topic_params, model.embedding.data, allowed)
    descriptors = tx.extract_descriptors(distribution, model.vocab, m=m)
    tokens = {tok for topic in descriptors.per_topic for tok, _ in topic}
    counts = tx.count_cooccurrence(articles, tokens)
    npmi = tx.npmi_coherence(descriptors, counts, epsilon=epsilon)
    w2v = tx.w2v_coherence(descriptors, model.embedding.data, model.vocab)
    table = tx.coherence_tsv(descriptors, npmi, w2v,
                             top_fraction=top_fraction)
    summary = (tx.coherence_summary(npmi.per_topic, top_fraction),
               tx.coherence_summary(w2v.per_topic, top_fraction))
    return table, summary


def _summary_line(label, summaries):
    npmi, w2v = summaries
    return (f"{label}\tnpmi_mean={npmi.overall_mean:.4f}"
            f"\tnpmi_top_mean={npmi.top_mean:.4f}"
            f"\tw2v_mean={w2v.overall_mean:.4f}"
            f"\tw2v_top_mean={w2v.top_mean:.4f}")


@main.command()
@_config_options
@click.option("--checkpoint", default=None, type=click.Path())
def coherence(config_path, overrides, checkpoint):
    """Score topic coherence with and without descriptor filtering."""

    def body():
        config = load_run_config(config_path, overrides)
        dirs = _out_dirs(config)
        model, _, _ = _load_model(config, checkpoint)
        articles = _load_corpus(config)
        # raw run: every real token is a candidate descriptor
        raw_allowed = np.arange(2, len(model.vocab), dtype=np.int64)
        raw_table, raw_summary = _coherence_block(
            model, articles, raw_allowed, config.descriptors,
            config.epsilon, config.top_fraction)
        # filtered run: stopword and document-frequency post-processing
        filtered = preprocess_for_topics(
            articles, model.vocab, min_df=config.min_df,
            max_df_frac=config.max_df_frac, stopwords=load_stopwords())
        pp_table, pp_summary = _coherence_block(
            model, articles, filtered, config.descriptors,
            config.epsilon, config.top_fraction)
        raw_path = dirs["topics"] / "coherence_without_pp.tsv"
        pp_path = dirs["topics"] / f"coherence_pp_{config.descriptors}.tsv"
        raw_path.write_text(raw_table, encoding="utf-8")
        pp_path.write_text(pp_table, encoding="utf-8")
        click.echo(_summary_line("Without-PP", raw_summary))
        click.echo(_summary_line(f"PP-{config.descriptors}", pp_summary))

    _guarded("coherence", body)


@main.command()
@_config_options
@click.option("--checkpoint", default=None, type=click.Path())
@click.option("--split", default="test",
              type=click.Choice(sorted(_SPLIT_ATTR)))
@click.option("--impression", "impression_id", default=None,
              help="Impression id to explain (default: first in split).")
@click.option("--format", "render_format", default=None,
              type=click.Choice(sorted(_FORMAT_EXTENSIONS)),
              help="Overrides explain.format from the config.")
def explain(config_path, overrides, checkpoint, split, impression_id,
            render_format):
    """Render one impression's recommendation explanation."""

    def body():
        config = load_run_config(config_path, overrides)
        dirs = _out_dirs(config)
        model, _, _ = _load_model(config, checkpoint)
        articles = _load_corpus(config)
        logs = _logs_for_split(config, split)
        if not logs:
            raise DegenerateInputError(f"split {split!r} has no impressions")
        if impression_id is None:
            log = logs[0]
        else:
            matches = [l for l in logs if l.impression_id == impression_id]
            if not matches:
                raise CorpusError(
                    f"impression {impression_id!r} not in split {split!r}")
            log = matches[0]
        report = tx.generate_explanation(
            model, log, articles, top_articles=config.explain_top_articles,
            top_topics=config.explain_top_topics)
        fmt = render_format or config.explain_format
        rendered = tx.render_report(report, fmt)
        extension = _FORMAT_EXTENSIONS[fmt]
        path = dirs["explanations"] / f"{log.impression_id}.{extension}"
        path.write_text(rendered, encoding="utf-8")
        click.echo(str(path))

    _guarded("explain", body)


if __name__ == "__main__":
    main()
