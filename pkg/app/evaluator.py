import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.errors import ConfigError, CorpusError, DimensionError
from app.models import RankingResult, SimilarityBucket
from app.network.model import make_batch
from app.numerics.tensor import no_grad

logger = logging.getLogger(__name__)

SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03
REPORT_KS = (1, 2, 5)


# ----------------------------------------------------------------------
# Ranking metrics
# ----------------------------------------------------------------------

def recall_at_k(results, k):
    """1/0 hit for one :class:`RankingResult`, mean hit rate for a list."""
    if isinstance(results, RankingResult):
        if not 1 <= k <= len(results.scores):
            raise ConfigError(f'k={k} outside 1..{len(results.scores)}')
        return int(results.rank <= k)
    if not results:
        return 0.0
    return float(np.mean([recall_at_k(r, k) for r in results]))


def map_score(results):
    """Mean over contexts of 1/rank of the single positive."""
    if not results:
        return 0.0
    return float(np.mean([1.0 / r.rank for r in results]))


def metric_table(results, ks=REPORT_KS):
    width = min(len(r.scores) for r in results) if results else 0
    table = {'contexts': len(results), 'MAP': map_score(results)}
    for k in ks:
        if k <= width:
            table[f'R{width}@{k}'] = recall_at_k(results, k)
    return table


def score_contexts(model, contexts, batch_size=32):
    """Eval-mode :class:`RankingResult` for every context, in input order."""
    groups = {}
    for position, context in enumerate(contexts):
        groups.setdefault(len(context.candidates), []).append(position)
    results = [None] * len(contexts)
    for positions in groups.values():
        for start in range(0, len(positions), batch_size):
            chunk = positions[start:start + batch_size]
            scores = model.score_batch([contexts[i] for i in chunk])
            for row, i in enumerate(chunk):
                results[i] = RankingResult(contexts[i].context_id, scores[row], contexts[i].positive_index)
    return results


def evaluate_model(model, contexts, batch_size=32):
    results = score_contexts(model, contexts, batch_size)
    return metric_table(results), results


# ----------------------------------------------------------------------
# Structural similarity
# ----------------------------------------------------------------------

def _window_means(image, window):
    return sliding_window_view(image, (window, window), axis=(0, 1)).mean(axis=(-2, -1))


def ssim(a, b, window=SSIM_WINDOW, data_range=1.0):
    """Mean SSIM over all window x window patches (stride 1), averaged over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f'ssim: image shapes {a.shape} and {b.shape} differ')
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if a.shape[0] < window or a.shape[1] < window:
        raise DimensionError(f'ssim: images {a.shape[:2]} smaller than the {window}x{window} window')
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    mu_a, mu_b = _window_means(a, window), _window_means(b, window)
    var_a = _window_means(a * a, window) - mu_a * mu_a
    var_b = _window_means(b * b, window) - mu_b * mu_b
    cov = _window_means(a * b, window) - mu_a * mu_b
    numerator = (2.0 * (mu_a * mu_b) + c1) * (2.0 * cov + c2)
    denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(numerator / denominator))


class SimilarityCache:
    """SSIM per unordered sticker pair"""

    def __init__(self):
        self._values = {}

    def __call__(self, first, second):
        key = tuple(sorted((first.sticker_id, second.sticker_id)))
        if key not in self._values:
            self._values[key] = ssim(first.image, second.image)
        return self._values[key]


def context_similarity(context, cache=None):
    """Mean SSIM between the positive sticker and each negative."""
    cache = cache or SimilarityCache()
    negatives = context.negatives
    if not negatives:
        return 1.0
    return float(np.mean([cache(context.positive, n) for n in negatives]))


@dataclass
class SimilarityReport:
    buckets: list
    similarities: dict
    histogram: dict = field(default_factory=dict)
    mean: float = 0.0

    def to_dict(self):
        return {
            'buckets': [b.to_dict() for b in self.buckets],
            'histogram': self.histogram,
            'mean': self.mean
        }


def similarity_report(contexts, results=None, n_buckets=5, bins=10):
    """Per-context mean similarity, equal-width buckets over its observed range, per-bucket R@1."""
    if not contexts:
        raise CorpusError('similarity report over an empty corpus')
    cache = SimilarityCache()
    similarities = {c.context_id: context_similarity(c, cache) for c in contexts}
    values = np.array(list(similarities.values()))
    low, high = float(values.min()), float(values.max())
    edges = np.linspace(low, high, n_buckets + 1)
    by_id = {r.context_id: r for r in results} if results else {}

    buckets = [SimilarityBucket(low=float(edges[i]), high=float(edges[i + 1])) for i in range(n_buckets)]
    for context_id, value in similarities.items():
        index = n_buckets - 1 if high == low else min(int((value - low) / (high - low) * n_buckets), n_buckets - 1)
        buckets[index].context_ids.append(context_id)
    for bucket in buckets:
        members = [by_id[i] for i in bucket.context_ids if i in by_id]
        bucket.recall_at_1 = recall_at_k(members, 1) if members else None

    counts, bin_edges = np.histogram(values, bins=bins, range=(low, high if high > low else low + 1e-12))
    histogram = {'counts': counts.tolist(), 'edges': bin_edges.tolist()}
    logger.info(f"Similarity over {len(contexts)} contexts: mean {values.mean():.3f}, range [{low:.3f}, {high:.3f}]")
    return SimilarityReport(buckets=buckets, similarities=similarities, histogram=histogram,
                            mean=float(values.mean()))


# ----------------------------------------------------------------------
# Sweeps
# ----------------------------------------------------------------------

def sweep_utterances(model, contexts, n_list, batch_size=32):
    """Metrics when each context keeps only its most recent ``n`` utterances."""
    rows = []
    for n in n_list:
        if not 1 <= n <= 20:
            raise ConfigError(f'utterance count {n} outside 1..20')
        truncated = [c.truncated(n) for c in contexts]
        table, _ = evaluate_model(model, truncated, batch_size)
        rows.append({'utterances': n, **table})
        logger.info(f"Sweep n={n}: MAP {table['MAP']:.3f}")
    return rows


def sweep_hidden_sizes(profile, train_contexts, test_contexts, sizes, vocab=None):
    """Retrain at each hidden size and evaluate on the held-out contexts."""
    from app.experiments import build_model
    from app.trainer import train

    rows = []
    for size in sizes:
        model_config = profile.model.updated(hidden=size)
        model = build_model(model_config, profile.train, vocab, train_contexts)
        outcome = train(profile.train, train_contexts, model, vocab=vocab)
        table, _ = evaluate_model(model, test_contexts, profile.train.batch_size)
        rows.append({'hidden': size, 'converged_epoch': outcome.converged_epoch, **table})
        logger.info(f"Hidden size {size}: MAP {table['MAP']:.3f}")
    return rows


# ----------------------------------------------------------------------
# Attention dumps
# ----------------------------------------------------------------------

def attention_dump(model, context, candidate=None):
    """Pooled interaction weights of one candidate, aligned to tokens and grid cells.

    The top-scored candidate is used unless ``candidate`` is given.
    """
    if not model.config.interaction:
        raise ConfigError('attention dumps need the interaction network')
    with no_grad():
        result = model.forward(make_batch([context]))
    scores = result.scores.data[0]
    if candidate is None:
        candidate = int(np.argmax(scores))
    if not 0 <= candidate < len(context.candidates):
        raise ConfigError(f'candidate {candidate} outside 0..{len(context.candidates) - 1}')

    p = model.config.grid_size
    offset = result.interaction.tau_u.shape[2] - len(context.utterances)
    tau_u = result.interaction.tau_u.data[0, candidate, offset:]
    tau_s = result.interaction.tau_s.data[0, candidate, offset:]
    masked = np.where([u.mask for u in context.utterances], tau_u, -np.inf)
    salient = np.unravel_index(int(np.argmax(masked)), masked.shape) if np.isfinite(masked).any() else None

    rows = []
    for i, utterance in enumerate(context.utterances):
        tokens = list(utterance.words) + [''] * (utterance.max_tokens - len(utterance.words))
        rows.append({
            'utterance': i,
            'tokens': tokens,
            'mask': utterance.mask.astype(int).tolist(),
            'tau_u': tau_u[i].tolist(),
            'tau_s': tau_s[i].reshape(p, p).tolist(),
            'salient_token': int(salient[1]) if salient is not None and salient[0] == i else None
        })
    return {
        'context_id': context.context_id,
        'candidate': candidate,
        'sticker_id': context.candidates[candidate].sticker_id,
        'positive_index': context.positive_index,
        'scores': scores.tolist(),
        'utterances': rows
    }
