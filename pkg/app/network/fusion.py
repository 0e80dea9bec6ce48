"""Fusion of the per-utterance interaction vectors into one matching score.

Sequences run along the second-to-last axis. Batched sequences are
left-padded: ``present`` marks real utterances, recurrent states hold through
padding and attention never looks at it, so a padded sequence scores exactly
like its unpadded counterpart.
"""

from dataclasses import dataclass

import numpy as np

from app.errors import DimensionError
from app.network.base import Module
from app.network.utterance_encoder import AttentionBlock
from app.numerics.functional import gru_cell, linear, sigmoid_score
from app.numerics.tensor import Tensor, as_tensor, concat, stack


@dataclass
class FusionTrace:
    g: Tensor
    g_hat: Tensor
    g_bar: Tensor
    g_tilde_last: Tensor
    score: Tensor
    attention: np.ndarray = None


def _present_mask(seq, present):
    if seq.ndim < 2 or seq.shape[-2] < 1:
        raise DimensionError(f'fusion needs a non-empty utterance sequence, got shape {seq.shape}')
    if present is None:
        return np.ones(seq.shape[:-1], dtype=bool)
    return np.broadcast_to(np.asarray(present, dtype=bool), seq.shape[:-1])


def run_gru(seq, params, present=None):
    """States of a GRU over ``seq`` (..., U, d_in) starting from zeros; (..., U, d_h)."""
    seq = as_tensor(seq)
    present = _present_mask(seq, present)
    state = Tensor(np.zeros(seq.shape[:-2] + (params.hidden,), dtype=seq.dtype))
    states = []
    for t in range(seq.shape[-2]):
        step = gru_cell(seq[..., t, :], state, params)
        hold = present[..., t]
        if hold.all():
            state = step
        else:
            keep = Tensor(hold[..., None].astype(seq.dtype))
            state = step * keep + state * (1.0 - keep)
        states.append(state)
    return stack(states, axis=-2)


def submulti(g, g_hat, weight, bias):
    """ReLU(affine([(g_hat - g)^2 ; g_hat * g]))."""
    g, g_hat = as_tensor(g), as_tensor(g_hat)
    if g.shape != g_hat.shape:
        raise DimensionError(f'submulti: shapes {g.shape} and {g_hat.shape} differ')
    diff = g_hat - g
    return linear(concat([diff * diff, g_hat * g], axis=-1), weight, bias).relu()


class FusionNetwork(Module):

    def __init__(self, store, config, rng, prefix='fusion'):
        super().__init__(store, prefix, rng)
        d = config.hidden
        self.use_rnn = config.fusion_rnn
        if self.use_rnn:
            self.gru('rnn', d, d)
        self.transformer = AttentionBlock(store, f'{prefix}.transformer', rng, d,
                                          dropout_rate=config.dropout, scale=config.scale_attention)
        self.param('submulti.weight', (2 * d, d))
        self.param('submulti.bias', (d,), init='zeros')
        self.gru('predict', d, d)
        self.param('score.weight', (d,))
        self.param('score.bias', (1,), init='zeros')

    def fuse_rnn(self, q2_seq, present=None):
        if not self.use_rnn:
            return Tensor(np.zeros(q2_seq.shape, dtype=q2_seq.dtype))
        return run_gru(q2_seq, self.gru_params('rnn'), present)

    def fuse_transformer(self, q2_seq, present=None, training=False, rng=None):
        present = _present_mask(as_tensor(q2_seq), present)
        return self.transformer(q2_seq, mask=present, training=training, rng=rng)

    def score(self, g_bar, present=None):
        """Final predictive GRU state and the sigmoid matching score."""
        states = run_gru(g_bar, self.gru_params('predict'), present)
        last = states[..., -1, :]
        logit = last @ self['score.weight'] + self['score.bias'].reshape(())
        return last, sigmoid_score(logit)

    def __call__(self, q2_seq, present=None, training=False, rng=None):
        q2_seq = as_tensor(q2_seq)
        g = self.fuse_rnn(q2_seq, present)
        g_hat, weights = self.fuse_transformer(q2_seq, present, training=training, rng=rng)
        g_bar = submulti(g, g_hat, self['submulti.weight'], self['submulti.bias'])
        last, score = self.score(g_bar, present)
        return FusionTrace(g=g, g_hat=g_hat, g_bar=g_bar, g_tilde_last=last, score=score,
                           attention=weights.data)
