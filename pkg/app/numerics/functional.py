"""Neural primitives built on :class:`Tensor`.

Fused operations (softmax, layer norm, cross-entropy, convolution) carry their
own backward functions; everything else composes Tensor methods.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, log_softmax

from app.errors import DimensionError
from app.numerics.tensor import Tensor, as_tensor

LAYER_NORM_EPS = 1e-6


def softmax(x, axis=-1, mask=None):
    """Softmax along ``axis``; masked entries get exactly zero weight.

    Slices whose entries are all masked produce zeros instead of a
    distribution.
    """
    x = as_tensor(x)
    data = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), data.shape)
        data = np.where(mask, data, -np.inf)
    peak = np.max(data, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    e = np.exp(data - peak)
    total = np.sum(e, axis=axis, keepdims=True)
    y = np.divide(e, total, out=np.zeros_like(e), where=total > 0)

    def backward(g):
        inner = np.sum(g * y, axis=axis, keepdims=True)
        return (y * (g - inner),)
    return Tensor._result(y, (x,), backward)


def softmax_row(logits):
    """Softmax of a rank-1 tensor."""
    logits = as_tensor(logits)
    if logits.ndim != 1 or logits.shape[0] < 1:
        raise DimensionError(f'softmax_row needs a non-empty rank-1 tensor, got shape {logits.shape}')
    return softmax(logits, axis=-1)


def masked_max(x, mask, axis=-1):
    """Maximum over the unmasked entries along ``axis``.

    Slices with no unmasked entry yield 0. The gradient is routed to the
    first (lowest-index) maximiser.
    """
    x = as_tensor(x)
    axis = axis % x.ndim
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    filled = np.where(mask, x.data, -np.inf)
    index = np.expand_dims(np.argmax(filled, axis=axis), axis)
    valid = np.any(mask, axis=axis)
    picked = np.take_along_axis(x.data, index, axis=axis).squeeze(axis)
    out = np.where(valid, picked, 0.0).astype(x.dtype)

    def backward(g):
        grad = np.zeros_like(x.data)
        np.put_along_axis(grad, index, np.expand_dims(np.where(valid, g, 0.0), axis), axis=axis)
        return (grad,)
    return Tensor._result(out, (x,), backward)


def layer_norm(x, gain, bias, eps=LAYER_NORM_EPS):
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    width = x.shape[-1] if x.ndim else 0
    if width < 2:
        raise DimensionError(f'layer_norm needs at least 2 features, got shape {x.shape}')
    if gain.shape != (width,) or bias.shape != (width,):
        raise DimensionError(f'layer_norm gain/bias shapes {gain.shape}/{bias.shape} do not match {width}')

    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        gx = gg = gb = None
        if x.requires_grad:
            gxhat = g * gain.data
            gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        if gain.requires_grad:
            gg = (g * xhat).reshape(-1, width).sum(axis=0)
        if bias.requires_grad:
            gb = g.reshape(-1, width).sum(axis=0)
        return gx, gg, gb
    return Tensor._result(out, (x, gain, bias), backward)


def linear(x, weight, bias=None):
    """Affine map ``x @ weight + bias`` over the last axis."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f'linear: input width {x.shape[-1]} does not match weight {weight.shape}')
    out = x @ weight
    return out if bias is None else out + bias


def dropout(x, rate, rng=None, training=False):
    """Inverted dropout; identity outside training or at rate 0."""
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * Tensor(keep, dtype=x.dtype)


def embedding(table, ids):
    """Rows of ``table`` selected by an integer id array of any shape."""
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(f'token id out of range for a vocabulary of {table.shape[0]}')
    return table[ids]


def sigmoid_score(x):
    """Sigmoid clipped to the open interval (0, 1)."""
    x = as_tensor(x)
    tiny = np.finfo(x.dtype).eps
    y = expit(x.data)
    out = np.clip(y, tiny, 1.0 - tiny)
    inside = (y > tiny) & (y < 1.0 - tiny)
    return Tensor._result(out, (x,), lambda g: (g * np.where(inside, y * (1.0 - y), 0.0),))


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under ``logits`` (N, K)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f'cross_entropy: logits {logits.shape} vs labels {labels.shape}')
    n, k = logits.shape
    if n and (labels.min() < 0 or labels.max() >= k):
        raise DimensionError(f'label out of range for {k} classes')
    logp = log_softmax(logits.data, axis=-1)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean() if n else np.zeros((), dtype=logits.dtype)

    def backward(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return (grad * (g / max(n, 1)),)
    return Tensor._result(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def conv2d(x, weight, bias, stride=1, padding=0):
    """2-D convolution on channels-last input.

    x: (N, H, W, C_in), weight: (kh, kw, C_in, C_out), bias: (C_out,)
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[-1] != weight.shape[2]:
        raise DimensionError(f'conv2d: input {x.shape} incompatible with kernel {weight.shape}')
    kh, kw = weight.shape[:2]
    pad = ((0, 0), (padding, padding), (padding, padding), (0, 0))
    padded = np.pad(x.data, pad)
    windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    out_h, out_w = windows.shape[1], windows.shape[2]
    out = np.einsum('nhwcij,ijco->nhwo', windows, weight.data, optimize=True) + bias.data

    def backward(g):
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.einsum('nhwcij,nhwo->ijco', windows, g, optimize=True)
        if bias.requires_grad:
            gb = g.sum(axis=(0, 1, 2))
        if x.requires_grad:
            gwin = np.einsum('nhwo,ijco->nhwcij', g, weight.data, optimize=True)
            gpad = np.zeros_like(padded)
            for i in range(kh):
                for j in range(kw):
                    gpad[:, i:i + stride * (out_h - 1) + 1:stride,
                         j:j + stride * (out_w - 1) + 1:stride, :] += gwin[..., i, j]
            gx = gpad[:, padding:padding + x.shape[1], padding:padding + x.shape[2], :]
        return gx, gw, gb
    return Tensor._result(out.astype(x.dtype, copy=False), (x, weight, bias), backward)


@dataclass
class GRUParams:
    """Weights of one GRU cell; gate order along the last axis is reset, update, candidate."""
    w_input: Tensor
    w_state: Tensor
    b_input: Tensor
    b_state: Tensor

    @property
    def hidden(self):
        return self.w_state.shape[0]


def gru_cell(x, state, params):
    """One GRU step with the reset/update/candidate gating.

    r = sigma(x Wr + h Ur), z = sigma(x Wz + h Uz),
    n = tanh(x Wn + r * (h Un)), h' = (1 - z) * n + z * h
    """
    x, state = as_tensor(x), as_tensor(state)
    n = params.hidden
    if params.w_input.shape[1] != 3 * n or params.w_state.shape != (n, 3 * n):
        raise DimensionError(f'gru_cell: inconsistent parameter shapes {params.w_input.shape}, '
                             f'{params.w_state.shape}')
    if x.shape[-1] != params.w_input.shape[0]:
        raise DimensionError(f'gru_cell: input width {x.shape[-1]} != {params.w_input.shape[0]}')
    if state.shape[-1] != n:
        raise DimensionError(f'gru_cell: state width {state.shape[-1]} != {n}')

    gx = x @ params.w_input + params.b_input
    gh = state @ params.w_state + params.b_state
    reset = (gx[..., :n] + gh[..., :n]).sigmoid()
    update = (gx[..., n:2 * n] + gh[..., n:2 * n]).sigmoid()
    candidate = (gx[..., 2 * n:] + reset * gh[..., 2 * n:]).tanh()
    return (1.0 - update) * candidate + update * state
