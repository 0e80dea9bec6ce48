#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Sticker Response Selector - Command Line

Synthesizes corpora, trains and evaluates models, ranks single contexts and
dumps interaction attention. Every command exits 0 on success, 2 on usage or
configuration errors, 3 on data errors and 4 on numeric faults.
"""

import functools
import json
import os
import sys

import click
from dotenv import load_dotenv

# Add the project root to Python path
project_root = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, project_root)

# Load environment variables
load_dotenv()

from app import create_app  # noqa: E402
from app.config import Config, load_profile  # noqa: E402
from app.errors import SRSError  # noqa: E402
from app import experiments  # noqa: E402

DATA_EXIT_CODE = 3


def int_list(ctx, param, value):
    if value is None:
        return None
    try:
        return [int(v) for v in value.split(',') if v.strip()]
    except ValueError:
        raise click.BadParameter('expected a comma-separated list of integers')


def handle_errors(command):
    """Map library errors to exit codes and print them on stderr."""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except SRSError as e:
            click.echo(f'Error: {e}', err=True)
            sys.exit(e.exit_code)
        except OSError as e:
            click.echo(f'Error: {e}', err=True)
            sys.exit(DATA_EXIT_CODE)
    return wrapper


def echo_json(payload):
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


@click.group()
@click.option('--env', 'env_name', default=None, help='Configuration name (development, production, testing).')
def cli(env_name):
    """Sticker response selection: data, training and evaluation."""
    create_app(env_name)


@cli.command()
@click.option('--out', required=True, type=click.Path(file_okay=False), help='Output directory.')
@click.option('--config', 'config_path', default=None, help='Experiment profile name or JSON path.')
@click.option('--pairs', type=int, default=None)
@click.option('--test-pairs', type=int, default=None)
@click.option('--classes', type=int, default=None)
@click.option('--sets', type=int, default=None)
@click.option('--vocab-size', type=int, default=None)
@click.option('--negatives', type=int, default=None)
@click.option('--image-size', type=int, default=None)
@click.option('--seed', type=int, default=None)
@click.option('--max-tokens', type=int, default=None)
@handle_errors
def synth(out, config_path, pairs, test_pairs, classes, sets, vocab_size, negatives, image_size, seed,
          max_tokens):
    """Write a deterministic synthetic corpus."""
    profile = load_profile(config_path)
    spec = profile.synth.updated(pairs=pairs, test_pairs=test_pairs, classes=classes, sets=sets,
                                 vocab_size=vocab_size, negatives=negatives, image_size=image_size,
                                 seed=seed)
    outputs = experiments.run_synth(spec, out, max_tokens=max_tokens or profile.train.max_tokens,
                                    max_utterances=profile.train.max_utterances)
    click.echo(f'✓ Wrote {spec.pairs} train / {spec.test_pairs} test contexts and '
               f'{outputs["stickers"]} stickers to {out}')


@cli.command()
@click.option('--corpus', default=lambda: os.path.join(Config.DATA_DIR, 'train.jsonl'),
              type=click.Path(), help='Training corpus file.')
@click.option('--out', default=lambda: Config.CHECKPOINT_DIR, type=click.Path(file_okay=False))
@click.option('--config', 'config_path', default=None, help='Experiment profile name or JSON path.')
@click.option('--batch-size', type=int, default=None)
@click.option('--lr', type=float, default=None)
@click.option('--margin', type=float, default=None)
@click.option('--lambda-cls', type=float, default=None)
@click.option('--epochs', type=int, default=None)
@click.option('--seed', type=int, default=None)
@click.option('--max-utterances', type=int, default=None)
@click.option('--max-tokens', type=int, default=None)
@click.option('--hidden', type=int, default=None)
@click.option('--grid-size', type=int, default=None)
@click.option('--dropout', type=float, default=None)
@click.option('--pretrain-epochs', type=int, default=None)
@click.option('--no-classify', is_flag=True, help='Drop the emoji classification head and loss.')
@click.option('--no-din', is_flag=True, help='Bypass the deep interaction network.')
@click.option('--no-fusion-rnn', is_flag=True, help='Zero the fusion RNN branch.')
@click.option('--no-pretrain', is_flag=True, help='Skip sticker-encoder pre-training.')
@click.option('--background', is_flag=True, help='Enqueue the run on the Celery worker.')
@handle_errors
def train(corpus, out, config_path, batch_size, lr, margin, lambda_cls, epochs, seed, max_utterances,
          max_tokens, hidden, grid_size, dropout, pretrain_epochs, no_classify, no_din, no_fusion_rnn,
          no_pretrain, background):
    """Train a model on a corpus file."""
    overrides = dict(
        batch_size=batch_size, lr=lr, margin=margin, lambda_cls=lambda_cls, epochs=epochs, seed=seed,
        max_utterances=max_utterances, max_tokens=max_tokens, pretrain_epochs=pretrain_epochs,
        no_classify=no_classify or None, no_din=no_din or None, no_fusion_rnn=no_fusion_rnn or None,
        no_pretrain=no_pretrain or None
    )
    model_overrides = dict(hidden=hidden, grid_size=grid_size, dropout=dropout)
    profile = load_profile(config_path)
    profile.train = profile.train.updated(**overrides)
    profile.model = profile.model.updated(**model_overrides)

    if background:
        from app.tasks.experiment_tasks import train_model
        result = train_model.delay(config_path, corpus, out,
                                   {k: v for k, v in overrides.items() if v is not None},
                                   {k: v for k, v in model_overrides.items() if v is not None})
        click.echo('Training task started. Check Celery logs for results.')
        click.echo(f'Task ID: {result.id}')
        return

    summary = experiments.run_train(profile, corpus, out)
    final = summary['final']
    click.echo(f'✓ Trained {summary["epochs"]} epochs ({summary["steps"]} steps), '
               f'train R@1 {final["train_r10_1"]:.3f}')
    click.echo(f'  Checkpoint: {summary["checkpoint"]}')
    if summary['converged_epoch']:
        click.echo(f'  Converged at epoch {summary["converged_epoch"]}')


@cli.command(name='eval')
@click.option('--checkpoint', required=True, type=click.Path())
@click.option('--corpus', default=lambda: os.path.join(Config.DATA_DIR, 'test.jsonl'), type=click.Path())
@click.option('--sweep', callback=int_list, default=None, help='Utterance counts, e.g. 1,5,10,20.')
@click.option('--similarity-report', is_flag=True, help='Add the SSIM bucket table.')
@click.option('--out', default=None, type=click.Path(dir_okay=False), help='Write the report as JSON.')
@click.option('--batch-size', type=int, default=32)
@click.option('--background', is_flag=True, help='Enqueue the run on the Celery worker.')
@handle_errors
def evaluate(checkpoint, corpus, sweep, similarity_report, out, batch_size, background):
    """Report MAP and R@k of a checkpoint on a corpus."""
    if background:
        from app.tasks.experiment_tasks import evaluate_model
        result = evaluate_model.delay(checkpoint, corpus, sweep, similarity_report, out)
        click.echo('Evaluation task started. Check Celery logs for results.')
        click.echo(f'Task ID: {result.id}')
        return

    report = experiments.run_eval(checkpoint, corpus, sweep=sweep, similarity=similarity_report,
                                  out=out, batch_size=batch_size)
    click.echo('\nEvaluation:')
    click.echo('=' * 30)
    for key, value in report['metrics'].items():
        click.echo(f'{key}: {value:.4f}' if isinstance(value, float) else f'{key}: {value}')
    for row in report.get('sweep', []):
        metrics = ', '.join(f'{k} {v:.4f}' for k, v in row.items() if isinstance(v, float))
        click.echo(f'  utterances={row["utterances"]}: {metrics}')
    if 'similarity' in report:
        click.echo(f'\nMean candidate similarity: {report["similarity"]["mean"]:.4f}')
        for bucket in report['similarity']['buckets']:
            recall = '-' if bucket['recall_at_1'] is None else f'{bucket["recall_at_1"]:.4f}'
            click.echo(f'  [{bucket["low"]:.3f}, {bucket["high"]:.3f}]: {bucket["count"]} contexts, R@1 {recall}')


@cli.command()
@click.option('--checkpoint', required=True, type=click.Path())
@click.option('--corpus', required=True, type=click.Path())
@click.option('--context', 'context_id', required=True)
@handle_errors
def rank(checkpoint, corpus, context_id):
    """Rank the candidates of one context."""
    rows = experiments.run_rank(checkpoint, corpus, context_id)
    click.echo(f'\nCandidates of {context_id}:')
    click.echo('=' * 50)
    for row in rows:
        marker = '✓' if row['positive'] else ' '
        click.echo(f'{marker} {row["rank"]:>2}. {row["sticker_id"]:<24} {row["score"]:.6f}')


@cli.command()
@click.option('--checkpoint', required=True, type=click.Path())
@click.option('--corpus', required=True, type=click.Path())
@click.option('--context', 'context_id', required=True)
@click.option('--candidate', type=int, default=None, help='Candidate index (default: top-scored).')
@click.option('--out', default=None, type=click.Path(dir_okay=False))
@handle_errors
def attention(checkpoint, corpus, context_id, candidate, out):
    """Dump pooled interaction weights for one context."""
    dump = experiments.run_attention(checkpoint, corpus, context_id, candidate, out)
    if out:
        click.echo(f'✓ Attention dump written to {out}')
    else:
        echo_json(dump)


@cli.command()
@click.option('--corpus', required=True, type=click.Path())
@handle_errors
def stats(corpus):
    """Show corpus statistics."""
    values = experiments.run_stats(corpus)
    click.echo('\nCorpus Statistics:')
    click.echo('=' * 30)
    for key, value in values.items():
        click.echo(f'{key}: {value:,.2f}' if isinstance(value, float) else f'{key}: {value:,}')


@cli.command(name='validate-corpus')
@click.option('--corpus', required=True, type=click.Path())
@click.option('--max-tokens', type=int, default=30)
@click.option('--max-utterances', type=int, default=20)
@handle_errors
def validate_corpus(corpus, max_tokens, max_utterances):
    """Load every record of a corpus file and report the first malformed one."""
    count = experiments.run_validate(corpus, max_tokens=max_tokens, max_utterances=max_utterances)
    click.echo(f'✓ Corpus "{corpus}" is valid ({count} records)')


@cli.command(name='sweep-hidden')
@click.option('--train', 'train_path', required=True, type=click.Path())
@click.option('--test', 'test_path', required=True, type=click.Path())
@click.option('--sizes', callback=int_list, default='50,100,150,200,250')
@click.option('--config', 'config_path', default=None)
@click.option('--out', default=None, type=click.Path(dir_okay=False))
@handle_errors
def sweep_hidden(train_path, test_path, sizes, config_path, out):
    """Retrain at several hidden sizes and tabulate held-out metrics."""
    rows = experiments.run_sweep_hidden(load_profile(config_path), train_path, test_path, sizes, out)
    for row in rows:
        metrics = ', '.join(f'{k} {v:.4f}' for k, v in row.items() if isinstance(v, float))
        click.echo(f'hidden={row["hidden"]}: {metrics}')


@cli.command()
@click.option('--config', 'config_path', default='micro')
@click.option('--entries', type=int, default=24, help='Coordinates checked per parameter tensor.')
@click.option('--out', default=lambda: Config.CHECKPOINT_DIR, type=click.Path(file_okay=False),
              help='Directory for the run manifest.')
@handle_errors
def gradcheck(config_path, entries, out):
    """End-to-end gradient check against central differences."""
    error = experiments.run_gradcheck(config_path, max_entries=entries, out_dir=out)
    click.echo(f'✓ Max relative gradient error {error:.3e}')


if __name__ == '__main__':
    cli()
