import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.special import expit

from app.config import ModelConfig
from app.errors import DimensionError
from app.network import FusionNetwork, run_gru, submulti
from app.numerics import ParamStore, Tensor, grad_check, gru_cell

D = 4


def make_fusion(**overrides):
    config = ModelConfig(hidden=D, dropout=0.0, **overrides)
    return FusionNetwork(ParamStore(), config, np.random.default_rng(11))


@pytest.fixture
def fusion():
    return make_fusion()


def arrays(network, prefix):
    return {name[len(prefix):]: network.store[name].data for name in network.store.names(prefix)}


def gru_reference(seq, p):
    state = np.zeros(p['w_state'].shape[0])
    n = state.shape[0]
    out = []
    for x in seq:
        gx, gh = x @ p['w_input'] + p['b_input'], state @ p['w_state'] + p['b_state']
        r, z = expit(gx[:n] + gh[:n]), expit(gx[n:2 * n] + gh[n:2 * n])
        cand = np.tanh(gx[2 * n:] + r * gh[2 * n:])
        state = (1 - z) * cand + z * state
        out.append(state)
    return np.array(out)


def attention_reference(x, p):
    q, k, v = (x @ p[f'{n}.weight'] + p[f'{n}.bias'] for n in ('query', 'key', 'value'))
    logits = q @ k.T
    weights = np.exp(logits - logits.max(axis=1, keepdims=True))
    weights /= weights.sum(axis=1, keepdims=True)
    inner = np.maximum((x + weights @ v) @ p['ffn1.weight'] + p['ffn1.bias'], 0.0)
    y = inner @ p['ffn2.weight'] + p['ffn2.bias']
    mu, var = y.mean(axis=1, keepdims=True), y.var(axis=1, keepdims=True)
    return (y - mu) / np.sqrt(var + 1e-6) * p['norm.gain'] + p['norm.bias']


# ----------------------------------------------------------------------
# fuse_rnn
# ----------------------------------------------------------------------

def test_length_one_is_a_single_cell_step(fusion, rng):
    q2 = rng.normal(size=(1, D))
    g = fusion.fuse_rnn(Tensor(q2)).data
    expected = gru_cell(Tensor(q2[0]), Tensor(np.zeros(D)), fusion.gru_params('rnn')).data
    assert_array_equal(g[0], expected)


def test_rnn_is_causal(fusion, rng):
    q2 = rng.normal(size=(5, D))
    before = fusion.fuse_rnn(Tensor(q2)).data
    q2[3] += 10.0
    after = fusion.fuse_rnn(Tensor(q2)).data
    assert_array_equal(before[:3], after[:3])
    assert not np.array_equal(before[3:], after[3:])


def test_zero_gru_stays_at_zero(fusion, rng):
    for name in fusion.store.names('fusion.rnn.'):
        fusion.store[name].data[:] = 0.0
    assert_array_equal(fusion.fuse_rnn(Tensor(rng.normal(size=(4, D)))).data, 0.0)


def test_empty_sequence_raises(fusion):
    with pytest.raises(DimensionError):
        fusion(Tensor(np.zeros((0, D))))
    with pytest.raises(DimensionError):
        run_gru(Tensor(np.zeros((0, D))), fusion.gru_params('rnn'))


def test_disabled_rnn_branch_gives_zeros(rng):
    network = make_fusion(fusion_rnn=False)
    assert not network.store.names('fusion.rnn.')
    trace = network(Tensor(rng.normal(size=(3, D))))
    assert_array_equal(trace.g.data, 0.0)
    assert 0.0 < trace.score.item() < 1.0


# ----------------------------------------------------------------------
# fuse_transformer
# ----------------------------------------------------------------------

def test_length_one_attends_to_itself(fusion, rng):
    _, weights = fusion.fuse_transformer(Tensor(rng.normal(size=(1, D))))
    assert_array_equal(weights.data, [[1.0]])


def test_identical_positions_give_identical_outputs(fusion, rng):
    q2 = np.tile(rng.normal(size=D), (4, 1))
    g_hat, _ = fusion.fuse_transformer(Tensor(q2))
    for row in g_hat.data[1:]:
        assert_allclose(row, g_hat.data[0], atol=1e-12)


def test_attention_rows_sum_to_one(fusion, rng):
    for _ in range(100):
        length = int(rng.integers(1, 9))
        _, weights = fusion.fuse_transformer(Tensor(rng.normal(scale=3.0, size=(length, D))))
        assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-6)
        assert (weights.data >= 0.0).all()


# ----------------------------------------------------------------------
# submulti and score
# ----------------------------------------------------------------------

def test_submulti_equal_inputs(rng):
    g = rng.normal(size=D)
    weight, bias = rng.normal(size=(2 * D, D)), rng.normal(size=D)
    out = submulti(Tensor(g), Tensor(g), Tensor(weight), Tensor(bias)).data
    assert_allclose(out, np.maximum(np.concatenate([np.zeros(D), g * g]) @ weight + bias, 0.0), atol=1e-12)


def test_submulti_zero_weights_give_relu_bias(rng):
    bias = rng.normal(size=D)
    out = submulti(Tensor(rng.normal(size=D)), Tensor(rng.normal(size=D)), Tensor(np.zeros((2 * D, D))),
                   Tensor(bias)).data
    assert_array_equal(out, np.maximum(bias, 0.0))


def test_submulti_matches_formula(rng):
    for _ in range(100):
        rows = int(rng.integers(1, 6))
        g, g_hat = rng.normal(size=(rows, D)), rng.normal(size=(rows, D))
        weight, bias = rng.normal(size=(2 * D, D)), rng.normal(size=D)
        out = submulti(Tensor(g), Tensor(g_hat), Tensor(weight), Tensor(bias)).data
        expected = np.maximum(np.concatenate([(g_hat - g) ** 2, g_hat * g], axis=-1) @ weight + bias, 0.0)
        assert_allclose(out, expected, atol=1e-12)
        assert (out >= 0).all()


def test_zero_head_scores_one_half(fusion, rng):
    fusion['score.weight'].data[:] = 0.0
    fusion['score.bias'].data[:] = 0.0
    _, score = fusion.score(Tensor(rng.normal(size=(3, D))))
    assert score.item() == 0.5


def test_score_increases_with_bias(fusion, rng):
    g_bar = Tensor(rng.normal(size=(3, D)))
    _, low = fusion.score(g_bar)
    fusion['score.bias'].data[:] += 1.0
    _, high = fusion.score(g_bar)
    assert high.item() > low.item()


def test_score_stays_inside_unit_interval(fusion):
    for value in (1e6, -1e6):
        fusion['score.weight'].data[:] = value
        _, score = fusion.score(Tensor(np.ones((2, D))))
        assert 0.0 < score.item() < 1.0


# ----------------------------------------------------------------------
# Whole fusion stage
# ----------------------------------------------------------------------

def test_forward_matches_step_by_step_evaluation(fusion, rng):
    q2 = rng.normal(size=(4, D))
    trace = fusion(Tensor(q2))

    g = gru_reference(q2, arrays(fusion, 'fusion.rnn.'))
    g_hat = attention_reference(q2, arrays(fusion, 'fusion.transformer.'))
    sub = arrays(fusion, 'fusion.submulti.')
    g_bar = np.maximum(np.concatenate([(g_hat - g) ** 2, g_hat * g], axis=-1) @ sub['weight'] + sub['bias'], 0)
    last = gru_reference(g_bar, arrays(fusion, 'fusion.predict.'))[-1]
    score = expit(last @ fusion['score.weight'].data + fusion['score.bias'].data[0])

    assert_allclose(trace.g.data, g, atol=1e-12)
    assert_allclose(trace.g_hat.data, g_hat, atol=1e-12)
    assert_allclose(trace.g_bar.data, g_bar, atol=1e-12)
    assert abs(trace.score.item() - score) < 1e-12


def test_evaluation_is_deterministic(fusion, rng):
    q2 = Tensor(rng.normal(size=(5, D)))
    assert fusion(q2).score.item() == fusion(q2).score.item()


def test_batched_matches_unbatched(fusion, rng):
    q2 = rng.normal(size=(3, 2, 5, D))
    batched = fusion(Tensor(q2)).score.data
    assert batched.shape == (3, 2)
    for i in range(3):
        for j in range(2):
            assert abs(batched[i, j] - fusion(Tensor(q2[i, j])).score.item()) < 1e-12


def test_left_padding_does_not_change_the_score(fusion, rng):
    for _ in range(100):
        length, pad = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        real = rng.normal(size=(length, D))
        padded = np.concatenate([rng.normal(scale=5.0, size=(pad, D)), real])
        present = np.arange(pad + length) >= pad
        expected = fusion(Tensor(real)).score.item()
        assert abs(fusion(Tensor(padded), present=present).score.item() - expected) < 1e-12


def test_fusion_gradients(fusion, rng):
    store = fusion.store
    store.add('q2', rng.normal(size=(2, 3, D)))
    present = np.array([[True, True, True], [False, True, True]])

    def loss():
        return fusion(store['q2'], present=present).score.sum()

    assert grad_check(loss, store, floor=1e-6, max_entries=16, kink_tolerant=True) < 1e-4
