import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from skimage.metrics import structural_similarity
from sklearn.metrics import label_ranking_average_precision_score, top_k_accuracy_score

from app.config import ModelConfig, SynthSpec, TrainConfig
from app.corpus import Vocabulary, synth_corpus, tokenize_and_pad
from app.errors import ConfigError, DimensionError
from app.evaluator import (
    attention_dump, context_similarity, evaluate_model, map_score, metric_table, recall_at_k, score_contexts,
    similarity_report, ssim, sweep_hidden_sizes, sweep_utterances
)
from app.experiments import build_model
from app.models import DialogContext, RankingResult, Sticker


def result_with_rank(rank, width=10):
    scores = np.linspace(1.0, 0.1, width)
    positive = rank - 1
    return RankingResult('c', scores, positive)


# ----------------------------------------------------------------------
# Recall and MAP
# ----------------------------------------------------------------------

def test_top_scored_positive_is_a_hit():
    assert recall_at_k(RankingResult('c', [0.1, 0.9, 0.3], 1), 1) == 1


def test_rank_six_of_ten():
    result = result_with_rank(6)
    assert result.rank == 6
    assert recall_at_k(result, 5) == 0
    assert recall_at_k(result, 10) == 1


def test_k_outside_candidate_count_raises():
    with pytest.raises(ConfigError):
        recall_at_k(result_with_rank(1, width=3), 4)


def test_random_scorer_recall(rng):
    results = [RankingResult(str(i), rng.random(10), int(rng.integers(10))) for i in range(10000)]
    assert abs(recall_at_k(results, 1) - 0.1) <= 0.01


def test_recall_is_monotone_in_k(rng):
    results = [RankingResult(str(i), rng.random(10), int(rng.integers(10))) for i in range(300)]
    values = [recall_at_k(results, k) for k in range(1, 11)]
    assert values == sorted(values)
    assert values[-1] == 1.0


def test_map_examples():
    assert map_score([result_with_rank(1)] * 5) == 1.0
    assert map_score([result_with_rank(4)]) == 0.25


def average_precision(scores, relevant):
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    hits, total = 0, 0.0
    for position, i in enumerate(order, start=1):
        if i in relevant:
            hits += 1
            total += hits / position
    return total / len(relevant)


def test_map_matches_general_average_precision(rng):
    results = [RankingResult(str(i), rng.random(6), int(rng.integers(6))) for i in range(1000)]
    expected = np.mean([average_precision(r.scores, {r.positive_index}) for r in results])
    assert abs(map_score(results) - expected) < 1e-12


def test_map_over_all_orderings():
    # every ranking of 4 candidates once
    results = [RankingResult(str(n), np.array(p, dtype=float), 0)
               for n, p in enumerate(itertools.permutations([4, 3, 2, 1]))]
    assert abs(map_score(results) - np.mean([1, 1 / 2, 1 / 3, 1 / 4])) < 1e-12


def test_metrics_agree_with_scikit_learn(rng):
    scores = rng.random((1000, 10))
    positives = rng.integers(0, 10, size=1000)
    results = [RankingResult(str(i), s, int(p)) for i, (s, p) in enumerate(zip(scores, positives))]
    truth = np.eye(10)[positives]
    assert abs(map_score(results) - label_ranking_average_precision_score(truth, scores)) < 1e-12
    for k in (1, 2, 5):
        expected = top_k_accuracy_score(positives, scores, k=k, labels=np.arange(10))
        assert abs(recall_at_k(results, k) - expected) < 1e-12


def test_metrics_agree_with_scikit_learn_per_configuration(rng):
    for _ in range(1000):
        width = int(rng.integers(3, 21))
        count = int(rng.integers(1, 6))
        scores = rng.random((count, width))
        positives = rng.integers(0, width, size=count)
        results = [RankingResult(str(i), s, int(p)) for i, (s, p) in enumerate(zip(scores, positives))]
        truth = np.eye(width)[positives]
        assert abs(map_score(results) - label_ranking_average_precision_score(truth, scores)) < 1e-12
        for k in (1, 2, 5):
            if k < width:
                expected = top_k_accuracy_score(positives, scores, k=k, labels=np.arange(width))
                assert abs(recall_at_k(results, k) - expected) < 1e-12


def test_metric_table_keys():
    table = metric_table([result_with_rank(2), result_with_rank(1)])
    assert set(table) == {'contexts', 'MAP', 'R10@1', 'R10@2', 'R10@5'}
    assert table['R10@1'] == 0.5
    assert table['MAP'] == 0.75


def test_metrics_are_pure(rng):
    results = [RankingResult(str(i), rng.random(10), int(rng.integers(10))) for i in range(50)]
    assert metric_table(results) == metric_table(results)


class OracleModel:
    """Scores the positive candidate 1 and everything else 0."""

    def score_batch(self, contexts):
        return np.stack([np.eye(len(c.candidates))[c.positive_index] for c in contexts])


def test_perfect_scorer_gets_full_marks(micro_corpus):
    table, results = evaluate_model(OracleModel(), micro_corpus.train)
    assert table['MAP'] == 1.0
    assert all(r.rank == 1 for r in results)


def test_untrained_model_is_near_chance():
    spec = SynthSpec(pairs=10, test_pairs=500, classes=10, sets=2, vocab_size=100, image_size=32, seed=9)
    corpus = synth_corpus(spec, max_tokens=8, max_utterances=8)
    model = build_model(ModelConfig(hidden=8, grid_size=2, image_size=32, conv_channels=(2, 4, 4, 4),
                                    dropout=0.0), TrainConfig(), corpus.vocab, corpus.train)
    table, _ = evaluate_model(model, corpus.test)
    assert table['contexts'] == 500
    assert 0.02 <= table['R10@1'] <= 0.25


def test_score_contexts_keeps_input_order(micro_model, micro_corpus):
    contexts = micro_corpus.train
    results = score_contexts(micro_model, contexts, batch_size=3)
    assert [r.context_id for r in results] == [c.context_id for c in contexts]
    batched = micro_model.score_batch(contexts)
    for row, result in zip(batched, results):
        assert_allclose(result.scores, row, atol=1e-12)


# ----------------------------------------------------------------------
# SSIM
# ----------------------------------------------------------------------

def ssim_reference(a, b, window=8):
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    values = []
    for i in range(a.shape[0] - window + 1):
        for j in range(a.shape[1] - window + 1):
            x, y = a[i:i + window, j:j + window], b[i:i + window, j:j + window]
            mx, my = x.mean(), y.mean()
            vx, vy = ((x - mx) ** 2).mean(), ((y - my) ** 2).mean()
            cov = ((x - mx) * (y - my)).mean()
            values.append((2 * mx * my + c1) * (2 * cov + c2) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(values))


def test_identical_images_have_similarity_one(rng):
    image = rng.random((16, 16, 1))
    assert ssim(image, image) == 1.0


def test_ssim_is_symmetric(rng):
    for _ in range(10):
        a, b = rng.random((16, 16)), rng.random((16, 16))
        assert ssim(a, b) == ssim(b, a)


def test_ssim_matches_window_loop(rng):
    constant = np.full((16, 16), 0.5)
    noisy = constant + rng.uniform(-0.05, 0.05, size=(16, 16))
    assert abs(ssim(constant, noisy) - ssim_reference(constant, noisy)) < 1e-9
    a, b = rng.random((12, 12)), rng.random((12, 12))
    assert abs(ssim(a, b) - ssim_reference(a, b)) < 1e-9


@pytest.mark.parametrize('size', [(16, 16), (23, 31)])
def test_ssim_matches_skimage_with_odd_window(rng, size):
    for _ in range(10):
        a = rng.random(size)
        b = np.clip(a + rng.normal(scale=0.2, size=size), 0.0, 1.0)
        expected = structural_similarity(a, b, win_size=7, data_range=1.0, gaussian_weights=False,
                                         use_sample_covariance=False)
        assert abs(ssim(a, b, window=7) - expected) < 1e-10


def test_ssim_range(rng):
    for _ in range(20):
        a = rng.random((10, 10))
        assert -1.0 <= ssim(a, rng.random((10, 10))) <= 1.0
        assert -1.0 <= ssim(a, 1.0 - a) <= 1.0


@pytest.mark.parametrize('first, second', [((16, 12), (16, 16)), ((4, 4), (4, 4))])
def test_ssim_geometry_errors(first, second):
    with pytest.raises(DimensionError):
        ssim(np.zeros(first), np.zeros(second))


# ----------------------------------------------------------------------
# Similarity report
# ----------------------------------------------------------------------

def test_identical_candidates_are_fully_similar():
    vocab = Vocabulary(['hi'])
    image = np.random.default_rng(0).random((16, 16))
    stickers = [Sticker(f's{i}', image, 0) for i in range(4)]
    context = DialogContext('c', [tokenize_and_pad('hi', 3, vocab)], stickers, 2)
    assert context_similarity(context) == 1.0


def test_buckets_partition_contexts(micro_corpus):
    contexts = micro_corpus.train + micro_corpus.test
    report = similarity_report(contexts)
    assert len(report.buckets) == 5
    assert sum(b.count for b in report.buckets) == len(contexts)
    members = [i for b in report.buckets for i in b.context_ids]
    assert sorted(members) == sorted(c.context_id for c in contexts)
    assert sum(report.histogram['counts']) == len(contexts)
    for bucket in report.buckets:
        for context_id in bucket.context_ids:
            assert bucket.low - 1e-12 <= report.similarities[context_id] <= bucket.high + 1e-12


def test_report_mean_matches_direct_recomputation(micro_corpus):
    contexts = micro_corpus.train
    report = similarity_report(contexts)
    direct = np.mean([np.mean([ssim_reference(c.positive.image[:, :, 0], n.image[:, :, 0]) for n in c.negatives])
                      for c in contexts])
    assert abs(report.mean - direct) < 1e-9


def test_bucket_recall_uses_results(micro_corpus):
    contexts = micro_corpus.train
    _, results = evaluate_model(OracleModel(), contexts)
    report = similarity_report(contexts, results)
    assert all(b.recall_at_1 == 1.0 for b in report.buckets if b.count)
    assert all(b.recall_at_1 is None for b in report.buckets if not b.count)


# ----------------------------------------------------------------------
# Sweeps and attention dumps
# ----------------------------------------------------------------------

def test_sweep_over_full_length_matches_plain_evaluation(micro_model, micro_corpus, micro_profile):
    contexts = micro_corpus.test
    plain, _ = evaluate_model(micro_model, contexts)
    rows = sweep_utterances(micro_model, contexts, [micro_profile.train.max_utterances, 1])
    assert rows[0] == {'utterances': micro_profile.train.max_utterances, **plain}

    last_only = [DialogContext(c.context_id, c.utterances[-1:], c.candidates, c.positive_index)
                 for c in contexts]
    expected, _ = evaluate_model(micro_model, last_only)
    assert rows[1] == {'utterances': 1, **expected}


def test_sweep_rejects_long_windows(micro_model, micro_corpus):
    with pytest.raises(ConfigError):
        sweep_utterances(micro_model, micro_corpus.test, [21])


def test_hidden_size_sweep(micro_profile, micro_corpus):
    profile = micro_profile
    profile_copy = type(profile)(name=profile.name, model=profile.model,
                                 train=profile.train.updated(epochs=1), synth=profile.synth)
    rows = sweep_hidden_sizes(profile_copy, micro_corpus.train, micro_corpus.test, [4, 6], vocab=micro_corpus.vocab)
    assert [r['hidden'] for r in rows] == [4, 6]
    assert all(0.0 < r['MAP'] <= 1.0 for r in rows)


def test_attention_dump_is_consistent(micro_model, micro_corpus):
    context = micro_corpus.test[0]
    dump = attention_dump(micro_model, context)
    scores = micro_model.score_batch([context])[0]
    assert_allclose(dump['scores'], scores, atol=1e-12)
    assert dump['candidate'] == int(np.argmax(scores))
    assert dump['sticker_id'] == context.candidates[dump['candidate']].sticker_id
    assert len(dump['utterances']) == len(context.utterances)
    p = micro_model.config.grid_size
    for row, utterance in zip(dump['utterances'], context.utterances):
        assert len(row['tokens']) == utterance.max_tokens
        assert row['mask'] == utterance.mask.astype(int).tolist()
        assert np.asarray(row['tau_s']).shape == (p, p)
        assert_array_equal(np.asarray(row['tau_u'])[~utterance.mask], 0.0)
    salient = [r for r in dump['utterances'] if r['salient_token'] is not None]
    assert len(salient) == 1


def test_attention_dump_candidate_checks(micro_model, micro_corpus, micro_profile):
    context = micro_corpus.test[0]
    assert attention_dump(micro_model, context, candidate=0)['candidate'] == 0
    with pytest.raises(ConfigError):
        attention_dump(micro_model, context, candidate=len(context.candidates))
    bypass = build_model(micro_profile.model, micro_profile.train.updated(no_din=True), micro_corpus.vocab,
                         micro_corpus.train)
    with pytest.raises(ConfigError):
        attention_dump(bypass, context)
