"""Experiment runs shared by the command line and the background tasks.

Every run writes a manifest with its resolved configuration next to its
outputs, so it can be repeated from that file alone.
"""

import json
import logging
import os

import numpy as np

from app.config import load_profile
from app.corpus.loader import VOCAB_FILE, corpus_statistics, load_contexts, validate_corpus
from app.corpus.synth import synth_corpus, write_synthetic
from app.corpus.vocabulary import Vocabulary
from app.errors import CheckpointError, ConfigError, CorpusError, NumericFault
from app.evaluator import (
    attention_dump, evaluate_model, similarity_report, sweep_hidden_sizes, sweep_utterances
)
from app.models import RunManifest
from app.network.model import StickerResponseSelector
from app.numerics.params import grad_check
from app.trainer import Trainer

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = 'model.npz'
METRICS_FILE = 'metrics.jsonl'
GRADCHECK_TOLERANCE = 1e-4


def write_json(path, payload):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    return path


def write_manifest(out_dir, manifest):
    return write_json(os.path.join(out_dir, f'{manifest.command}_manifest.json'), manifest.to_dict())


def build_model(model_config, train_config, vocab, contexts):
    """Model sized for the corpus (vocabulary, tag count, image geometry) with ablations applied."""
    if not contexts:
        raise CorpusError('cannot size a model without contexts')
    sample = contexts[0].candidates[0].image
    tags = max(s.emoji_tag for c in contexts for s in c.candidates) + 1
    config = train_config.apply_ablations(model_config).updated(
        vocab_size=len(vocab),
        emoji_classes=max(model_config.emoji_classes, tags),
        image_size=sample.shape[0],
        channels=sample.shape[2]
    )
    return StickerResponseSelector(config)


def corpus_vocabulary(corpus_path):
    path = os.path.join(os.path.dirname(os.path.abspath(corpus_path)), VOCAB_FILE)
    return Vocabulary.load(path) if os.path.exists(path) else None


def run_synth(spec, out_dir, max_tokens=30, max_utterances=20):
    manifest = RunManifest(command='synth', config={'synth': spec.to_dict(), 'max_tokens': max_tokens})
    corpus = synth_corpus(spec, max_tokens=max_tokens, max_utterances=max_utterances)
    outputs = write_synthetic(corpus, out_dir)
    write_manifest(out_dir, manifest.finish(**outputs))
    return outputs


def run_train(profile, corpus_path, out_dir):
    """Train on ``corpus_path`` with ``profile``; writes checkpoint, metrics log and manifest."""
    train_config = profile.train
    manifest = RunManifest(command='train', config=profile.to_dict(), inputs={'corpus': corpus_path})
    vocab = corpus_vocabulary(corpus_path)
    contexts = load_contexts(corpus_path, vocab=vocab, max_tokens=train_config.max_tokens,
                             max_utterances=train_config.max_utterances, channels=profile.model.channels)
    if vocab is None:
        vocab = Vocabulary.build(list(u.words) for c in contexts for u in c.utterances)
    model = build_model(profile.model, train_config, vocab, contexts)
    trainer = Trainer(model, train_config, vocab=vocab,
                      metrics_log=os.path.join(out_dir, METRICS_FILE),
                      checkpoint_path=os.path.join(out_dir, CHECKPOINT_FILE))
    result = trainer.fit(contexts)
    summary = result.summary()
    summary['parameters'] = sorted(model.store.names())
    write_manifest(out_dir, manifest.finish(**summary, metrics=trainer.metrics_log))
    return summary


def load_for_eval(checkpoint, corpus_path):
    """Checkpointed model plus the corpus tokenized with the checkpoint's vocabulary."""
    model, vocab, meta = StickerResponseSelector.load(checkpoint)
    if vocab is None:
        raise CheckpointError(f'{checkpoint}: checkpoint carries no vocabulary')
    model.check_vocabulary(corpus_vocabulary(corpus_path) or vocab)
    train_meta = meta.get('train', {})
    contexts = load_contexts(corpus_path, vocab=vocab, max_tokens=train_meta.get('max_tokens', 30),
                             max_utterances=train_meta.get('max_utterances', 20),
                             channels=model.config.channels)
    size = contexts[0].candidates[0].image.shape[0]
    if size != model.config.image_size:
        raise CheckpointError(f'corpus stickers are {size}px but the checkpoint expects '
                              f'{model.config.image_size}px')
    return model, vocab, contexts


def run_eval(checkpoint, corpus_path, sweep=None, similarity=False, out=None, batch_size=32):
    manifest = RunManifest(command='eval', config={'sweep': sweep, 'similarity': similarity},
                           inputs={'checkpoint': checkpoint, 'corpus': corpus_path})
    model, _, contexts = load_for_eval(checkpoint, corpus_path)
    metrics, results = evaluate_model(model, contexts, batch_size)
    report = {'metrics': metrics}
    if sweep:
        report['sweep'] = sweep_utterances(model, contexts, sweep, batch_size)
    if similarity:
        report['similarity'] = similarity_report(contexts, results).to_dict()
    if out:
        write_json(out, report)
    target = out or checkpoint
    write_manifest(os.path.dirname(os.path.abspath(target)), manifest.finish(report=out, metrics=metrics))
    return report


def find_context(contexts, context_id):
    for context in contexts:
        if context.context_id == context_id:
            return context
    raise CorpusError(f'Unknown context id: {context_id}')


def parent_dir(path):
    return os.path.dirname(os.path.abspath(path))


def run_rank(checkpoint, corpus_path, context_id):
    manifest = RunManifest(command='rank', config={'context': context_id},
                           inputs={'checkpoint': checkpoint, 'corpus': corpus_path})
    model, _, contexts = load_for_eval(checkpoint, corpus_path)
    context = find_context(contexts, context_id)
    scores = model.score_batch([context])[0]
    order = np.argsort(-scores, kind='stable')
    rows = [
        {
            'rank': position + 1,
            'candidate': int(i),
            'sticker_id': context.candidates[i].sticker_id,
            'score': float(scores[i]),
            'positive': int(i) == context.positive_index
        }
        for position, i in enumerate(order)
    ]
    write_manifest(parent_dir(checkpoint), manifest.finish(ranking=rows))
    return rows


def run_attention(checkpoint, corpus_path, context_id, candidate=None, out=None):
    manifest = RunManifest(command='attention', config={'context': context_id, 'candidate': candidate},
                           inputs={'checkpoint': checkpoint, 'corpus': corpus_path})
    model, _, contexts = load_for_eval(checkpoint, corpus_path)
    dump = attention_dump(model, find_context(contexts, context_id), candidate)
    if out:
        write_json(out, dump)
    write_manifest(parent_dir(out or checkpoint),
                   manifest.finish(dump=out, candidate=dump['candidate'], sticker_id=dump['sticker_id']))
    return dump


def run_stats(corpus_path):
    manifest = RunManifest(command='stats', config={}, inputs={'corpus': corpus_path})
    contexts = load_contexts(corpus_path, vocab=corpus_vocabulary(corpus_path))
    values = corpus_statistics(contexts)
    write_manifest(parent_dir(corpus_path), manifest.finish(**values))
    return values


def run_validate(corpus_path, max_tokens=30, max_utterances=20):
    manifest = RunManifest(command='validate', config={'max_tokens': max_tokens, 'max_utterances': max_utterances},
                           inputs={'corpus': corpus_path})
    count = validate_corpus(corpus_path, max_tokens=max_tokens, max_utterances=max_utterances)
    write_manifest(parent_dir(corpus_path), manifest.finish(records=count))
    return count


def run_sweep_hidden(profile, train_path, test_path, sizes, out=None):
    manifest = RunManifest(command='sweep_hidden', config={'profile': profile.to_dict(), 'sizes': list(sizes)},
                           inputs={'train': train_path, 'test': test_path})
    vocab = corpus_vocabulary(train_path)
    options = dict(max_tokens=profile.train.max_tokens, max_utterances=profile.train.max_utterances)
    train_contexts = load_contexts(train_path, vocab=vocab, **options)
    if vocab is None:
        vocab = Vocabulary.build(list(u.words) for c in train_contexts for u in c.utterances)
    test_contexts = load_contexts(test_path, vocab=vocab, **options)
    rows = sweep_hidden_sizes(profile, train_contexts, test_contexts, sizes, vocab=vocab)
    if out:
        write_json(out, {'profile': profile.to_dict(), 'rows': rows})
    write_manifest(parent_dir(out or train_path), manifest.finish(report=out, rows=rows))
    return rows


def micro_setup(profile_name='micro'):
    """Micro profile model, trainer and a handful of synthetic contexts."""
    profile = load_profile(profile_name)
    if profile.model.dtype != 'float64':
        raise ConfigError('gradient checks need float64 parameters')
    spec = profile.synth.updated(pairs=max(1, min(profile.synth.pairs, 4)), test_pairs=0)
    corpus = synth_corpus(spec, max_tokens=profile.train.max_tokens,
                          max_utterances=profile.train.max_utterances)
    model = build_model(profile.model.updated(dropout=0.0), profile.train, corpus.vocab, corpus.train)
    trainer = Trainer(model, profile.train)
    return profile, model, trainer, corpus.train


def run_gradcheck(profile_name='micro', epsilon=1e-5, max_entries=24, tolerance=GRADCHECK_TOLERANCE,
                  out_dir=None):
    """End-to-end gradient check of the joint loss; raises NumericFault above ``tolerance``.

    Central differences use a 1e-6 relative-error floor and skip coordinates
    whose step crosses a ReLU or max kink.
    """
    profile, model, trainer, contexts = micro_setup(profile_name)
    manifest = RunManifest(command='gradcheck', config={
        'profile': profile.to_dict(), 'epsilon': epsilon, 'max_entries': max_entries, 'tolerance': tolerance
    })
    error = grad_check(lambda: trainer.batch_loss(contexts, training=False)[2], model.store,
                       epsilon=epsilon, floor=1e-6, max_entries=max_entries, kink_tolerant=True)
    logger.info(f"Gradient check max relative error: {error:.3e}")
    if out_dir:
        write_manifest(out_dir, manifest.finish(max_relative_error=float(error), passed=bool(error < tolerance)))
    if error >= tolerance:
        raise NumericFault(f'gradient check failed: max relative error {error:.3e} >= {tolerance:.0e}')
    return error
