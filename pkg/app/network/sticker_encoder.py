"""Convolutional sticker encoder with the dual (grid, flat) output and the emoji head.

Four stride-2 convolution stages shrink an S x S image to S/16 x S/16, an
average pool brings the map to p x p cells and a shared projection lifts every
cell to d features. The flat vector is an affine map of the mean cell.
"""

from dataclasses import dataclass

import numpy as np

from app.errors import DimensionError
from app.network.base import Module
from app.numerics.functional import conv2d, cross_entropy, linear
from app.numerics.tensor import Tensor, as_tensor

KERNEL = 3


@dataclass
class StickerRepr:
    grid: Tensor
    flat: Tensor

    @property
    def cells(self):
        """Grid flattened to (..., p*p, d)."""
        shape = self.grid.shape
        return self.grid.reshape(*shape[:-3], shape[-3] * shape[-2], shape[-1])


class StickerEncoder(Module):

    def __init__(self, store, config, rng, classify=True, prefix='sticker'):
        super().__init__(store, prefix, rng)
        self.config = config
        widths = (config.channels,) + tuple(config.conv_channels)
        for stage in range(4):
            self.param(f'conv{stage}.weight', (KERNEL, KERNEL, widths[stage], widths[stage + 1]))
            self.param(f'conv{stage}.bias', (widths[stage + 1],), init='zeros')
        self.param('proj.weight', (widths[-1], config.hidden))
        self.param('proj.bias', (config.hidden,), init='zeros')
        self.param('flat.weight', (config.hidden, config.hidden))
        self.param('flat.bias', (config.hidden,), init='zeros')
        self.classify = classify
        if classify:
            self.param('emoji.weight', (config.hidden, config.emoji_classes))
            self.param('emoji.bias', (config.emoji_classes,), init='zeros')

    def encode(self, images):
        """Images (N, S, S, C) or (S, S, C) to a :class:`StickerRepr`."""
        x = as_tensor(images, dtype=self.store.dtype)
        single = x.ndim == 3
        if single:
            x = x.reshape(1, *x.shape)
        size, channels = self.config.image_size, self.config.channels
        if x.ndim != 4 or x.shape[1:] != (size, size, channels):
            raise DimensionError(f'sticker images must be {size}x{size}x{channels}, got {x.shape[1:]}')

        for stage in range(4):
            x = conv2d(x, self[f'conv{stage}.weight'], self[f'conv{stage}.bias'],
                       stride=2, padding=KERNEL // 2).relu()

        p = self.config.grid_size
        n, side, _, width = x.shape
        block = side // p
        pooled = x.reshape(n, p, block, p, block, width).mean(axis=(2, 4))
        grid = linear(pooled, self['proj.weight'], self['proj.bias'])
        flat = linear(grid.mean(axis=(1, 2)), self['flat.weight'], self['flat.bias'])
        if single:
            grid, flat = grid.reshape(*grid.shape[1:]), flat.reshape(flat.shape[-1])
        return StickerRepr(grid=grid, flat=flat)

    def classify_emoji(self, flat):
        """Emoji-tag logits from flat sticker vectors."""
        if not self.classify:
            raise DimensionError('the emoji head is disabled for this model')
        return linear(flat, self['emoji.weight'], self['emoji.bias'])


def classification_loss(logits, labels):
    """Cross-entropy L_s; a single logit row takes a single integer label."""
    logits = as_tensor(logits)
    if logits.ndim == 1:
        return cross_entropy(logits.reshape(1, -1), np.asarray([labels]))
    return cross_entropy(logits, labels)
