from dataclasses import dataclass

import numpy as np

from app.errors import DimensionError
from app.network.base import Module
from app.numerics.functional import dropout, embedding, layer_norm, linear, softmax
from app.numerics.tensor import Tensor, as_tensor


@dataclass
class UtteranceRepr:
    h: Tensor
    mask: np.ndarray
    attention: np.ndarray = None


class AttentionBlock(Module):
    """Single-head self-attention, residual sum with dropout, then a normalised feed-forward.

    The same block encodes the words of an utterance and, inside the fusion
    stage, the sequence of per-utterance interaction vectors.
    """

    def __init__(self, store, prefix, rng, hidden, dropout_rate=0.0, scale=False):
        super().__init__(store, prefix, rng)
        self.hidden = hidden
        self.dropout_rate = dropout_rate
        self.scale = scale
        for name in ('query', 'key', 'value'):
            self.param(f'{name}.weight', (hidden, hidden))
            self.param(f'{name}.bias', (hidden,), init='zeros')
        self.param('ffn1.weight', (hidden, hidden))
        self.param('ffn1.bias', (hidden,), init='zeros')
        self.param('ffn2.weight', (hidden, hidden))
        self.param('ffn2.bias', (hidden,), init='zeros')
        self.param('norm.gain', (hidden,), init='ones')
        self.param('norm.bias', (hidden,), init='zeros')

    def __call__(self, x, mask=None, training=False, rng=None):
        """x: (..., L, d); mask: (..., L) marks real positions. Returns (output, weights)."""
        x = as_tensor(x)
        if x.shape[-1] != self.hidden:
            raise DimensionError(f'{self.prefix}: input width {x.shape[-1]} != {self.hidden}')
        if x.ndim < 2 or x.shape[-2] < 1:
            raise DimensionError(f'{self.prefix}: attention over an empty sequence')

        q = linear(x, self['query.weight'], self['query.bias'])
        k = linear(x, self['key.weight'], self['key.bias'])
        v = linear(x, self['value.weight'], self['value.bias'])
        logits = q @ k.swapaxes(-1, -2)
        if self.scale:
            logits = logits * (1.0 / np.sqrt(self.hidden))
        key_mask = None if mask is None else np.asarray(mask, dtype=bool)[..., None, :]
        weights = softmax(logits, axis=-1, mask=key_mask)
        attended = weights @ v

        residual = dropout(x + attended, self.dropout_rate, rng=rng, training=training)
        inner = linear(residual, self['ffn1.weight'], self['ffn1.bias']).relu()
        out = layer_norm(linear(inner, self['ffn2.weight'], self['ffn2.bias']),
                         self['norm.gain'], self['norm.bias'])
        return out, weights


class UtteranceEncoder(Module):

    def __init__(self, store, config, rng, prefix='utterance'):
        super().__init__(store, prefix, rng)
        self.config = config
        self.param('embedding', (config.vocab_size, config.hidden), init='normal')
        self.block = AttentionBlock(store, f'{prefix}.attention', rng, config.hidden,
                                    dropout_rate=config.dropout, scale=config.scale_attention)

    def encode(self, token_ids, mask, training=False, rng=None):
        """Token ids (..., T) with their mask to hidden states (..., T, d).

        Padded rows are zeroed, so an all-pad utterance encodes to zeros.
        """
        token_ids = np.asarray(token_ids)
        mask = np.asarray(mask, dtype=bool)
        if token_ids.shape != mask.shape:
            raise DimensionError(f'token ids {token_ids.shape} and mask {mask.shape} disagree')
        embedded = embedding(self['embedding'], token_ids)
        h, weights = self.block(embedded, mask=mask, training=training, rng=rng)
        keep = Tensor(mask[..., None].astype(h.dtype))
        return UtteranceRepr(h=h * keep, mask=mask, attention=weights.data)

    def encode_utterance(self, utterance, training=False, rng=None):
        return self.encode(utterance.token_ids, utterance.mask, training=training, rng=rng)
