"""Deep interaction between sticker grid cells and utterance words.

Every function broadcasts over leading axes, so the same code handles one
(sticker, utterance) pair or a (batch, candidate, utterance) block of them.
Shapes below name only the trailing axes: P grid cells, T words, d features.
"""

from dataclasses import dataclass

import numpy as np

from app.errors import DimensionError
from app.network.base import Module
from app.numerics.functional import linear, masked_max, softmax
from app.numerics.tensor import Tensor, as_tensor, concat


@dataclass
class InteractionState:
    M: Tensor
    tau_u: Tensor
    tau_s: Tensor
    l: Tensor  # noqa: E741
    r: Tensor
    q1: Tensor
    q2: Tensor


def relation_matrix(cells, h, w):
    """M[k, j] = w . [O_k ; h_j ; O_k * h_j] for cells (..., P, d) and words (..., T, d)."""
    cells, h, w = as_tensor(cells), as_tensor(h), as_tensor(w)
    d = cells.shape[-1]
    if h.shape[-1] != d or w.shape != (3 * d,):
        raise DimensionError(f'relation_matrix: cells {cells.shape}, words {h.shape}, w {w.shape}')
    w_cell, w_word, w_both = w[:d], w[d:2 * d], w[2 * d:]
    by_cell = (cells @ w_cell).reshape(*cells.shape[:-1], 1)
    by_word = (h @ w_word).reshape(*h.shape[:-2], 1, h.shape[-2])
    joint = (cells * w_both) @ h.swapaxes(-1, -2)
    return by_cell + by_word + joint


def pooled_attention(M, token_mask=None, normalize=False):
    """Column maxima tau_u (..., T) and row maxima tau_s (..., P) of M.

    Masked words never win a row maximum and get a zero column weight.
    """
    M = as_tensor(M)
    if token_mask is None:
        token_mask = np.ones(M.shape[-1], dtype=bool)
    token_mask = np.asarray(token_mask, dtype=bool)
    keep = Tensor(token_mask.astype(M.dtype))
    tau_u = M.max(axis=-2) * keep
    tau_s = masked_max(M, token_mask[..., None, :], axis=-1)
    if normalize:
        tau_u = softmax(tau_u, axis=-1, mask=token_mask)
        tau_s = softmax(tau_s, axis=-1)
    return tau_u, tau_s


def attend(values, weights):
    """Weighted sum over the second-to-last axis: sum_n weights_n * values_n."""
    values, weights = as_tensor(values), as_tensor(weights)
    if values.shape[-2] != weights.shape[-1]:
        raise DimensionError(f'attend: {weights.shape[-1]} weights for {values.shape[-2]} rows')
    row = weights.reshape(*weights.shape[:-1], 1, weights.shape[-1])
    return (row @ values).sum(axis=-2)


def integrate(x, y, weight, bias):
    """IF(x, y) = affine([x ; y ; x * y ; x + y])."""
    x, y = as_tensor(x), as_tensor(y)
    if x.shape[-1] != y.shape[-1]:
        raise DimensionError(f'integrate: widths {x.shape[-1]} and {y.shape[-1]} differ')
    shape = np.broadcast_shapes(x.shape, y.shape)
    x, y = x.broadcast_to(shape), y.broadcast_to(shape)
    return linear(concat([x, y, x * y, x + y], axis=-1), weight, bias)


def combine(q1, l, weight, bias):  # noqa: E741
    """Q2 = affine([Q1 ; l])."""
    q1, l = as_tensor(q1), as_tensor(l)
    if q1.shape != l.shape:
        raise DimensionError(f'combine: shapes {q1.shape} and {l.shape} differ')
    return linear(concat([q1, l], axis=-1), weight, bias)


class InteractionNetwork(Module):

    def __init__(self, store, config, rng, prefix='interaction'):
        super().__init__(store, prefix, rng)
        d = config.hidden
        self.normalize = config.normalize_pooling
        self.param('relation', (3 * d,), init='normal')
        self.param('integrate.weight', (4 * d, d))
        self.param('integrate.bias', (d,), init='zeros')
        self.param('combine.weight', (2 * d, d))
        self.param('combine.bias', (d,), init='zeros')

    def __call__(self, cells, flat, h, token_mask):
        """cells (..., P, d), flat (..., d), words h (..., T, d) to an :class:`InteractionState`."""
        M = relation_matrix(cells, h, self['relation'])
        tau_u, tau_s = pooled_attention(M, token_mask, normalize=self.normalize)
        l = attend(h, tau_u)  # noqa: E741
        r = attend(cells, tau_s)
        q1 = integrate(flat, r, self['integrate.weight'], self['integrate.bias'])
        q2 = combine(q1, l, self['combine.weight'], self['combine.bias'])
        return InteractionState(M=M, tau_u=tau_u, tau_s=tau_s, l=l, r=r, q1=q1, q2=q2)


class InteractionBypass(Module):
    """Replacement for the interaction network: affine of the flat sticker and the mean word."""

    def __init__(self, store, config, rng, prefix='bypass'):
        super().__init__(store, prefix, rng)
        d = config.hidden
        self.param('weight', (2 * d, d))
        self.param('bias', (d,), init='zeros')

    def __call__(self, cells, flat, h, token_mask):
        token_mask = np.asarray(token_mask, dtype=bool)
        counts = np.maximum(token_mask.sum(axis=-1, keepdims=True), 1).astype(h.dtype)
        mean_word = h.sum(axis=-2) * Tensor(1.0 / counts)
        shape = np.broadcast_shapes(flat.shape, mean_word.shape)
        joined = concat([flat.broadcast_to(shape), mean_word.broadcast_to(shape)], axis=-1)
        q2 = linear(joined, self['weight'], self['bias'])
        return InteractionState(M=None, tau_u=None, tau_s=None, l=None, r=None, q1=None, q2=q2)
