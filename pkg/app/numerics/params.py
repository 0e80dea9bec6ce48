"""Parameter store, Adam optimizer, checkpoint container and gradient checking."""

import json
import logging
import os

import numpy as np

from app.errors import CheckpointError, DimensionError, NumericFault, TrainingFault
from app.numerics.tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
CHECKPOINT_FORMAT = 'srs-checkpoint'
CHECKPOINT_VERSION = 1


class ParamStore:
    """Named trainable tensors plus their Adam moment estimates."""

    def __init__(self, dtype='float64'):
        self.dtype = np.dtype(dtype)
        self.params = {}
        self.m = {}
        self.v = {}
        self.step = 0

    def add(self, name, value):
        if name in self.params:
            raise DimensionError(f'parameter {name!r} registered twice')
        array = np.array(value, dtype=self.dtype)
        self.params[name] = Tensor(array, requires_grad=True, name=name)
        self.m[name] = np.zeros_like(array)
        self.v[name] = np.zeros_like(array)
        return self.params[name]

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def names(self, prefix=''):
        return [name for name in self.params if name.startswith(prefix)]

    def size(self):
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self):
        for param in self.params.values():
            param.grad = None

    def grads(self):
        """Current gradients; parameters the loss did not reach get zeros."""
        return {
            name: p.grad if p.grad is not None else np.zeros_like(p.data)
            for name, p in self.params.items()
        }

    def arrays(self):
        return {name: p.data for name, p in self.params.items()}

    def copy(self):
        clone = ParamStore(self.dtype)
        for name, param in self.params.items():
            clone.add(name, param.data.copy())
            clone.m[name] = self.m[name].copy()
            clone.v[name] = self.v[name].copy()
        clone.step = self.step
        return clone

    def shapes(self):
        return {name: list(p.shape) for name, p in self.params.items()}


def adam_step(store, grads, lr, betas=ADAM_BETAS, eps=ADAM_EPS):
    """One bias-corrected Adam update applied in place; returns the store."""
    for name, g in grads.items():
        if name not in store:
            raise DimensionError(f'gradient for unknown parameter {name!r}')
        if g.shape != store[name].shape:
            raise DimensionError(f'gradient shape {g.shape} does not match parameter {name!r} '
                                 f'{store[name].shape}')
        if not np.all(np.isfinite(g)):
            raise TrainingFault(f'non-finite gradient for parameter {name!r}')

    beta1, beta2 = betas
    store.step += 1
    t = store.step
    for name, g in grads.items():
        m = beta1 * store.m[name] + (1.0 - beta1) * g
        v = beta2 * store.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        param = store[name]
        param.data = (param.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(store.dtype, copy=False)
        store.m[name] = m
        store.v[name] = v
    return store


def save_checkpoint(path, store, meta=None):
    """Write parameters, optimizer state and a JSON metadata block to an .npz file."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    payload = {
        'format': np.array(CHECKPOINT_FORMAT),
        'version': np.array(CHECKPOINT_VERSION),
        'dtype': np.array(str(store.dtype)),
        'step': np.array(store.step, dtype=np.int64),
        'meta': np.array(json.dumps(meta or {}, sort_keys=True)),
    }
    for name, param in store.params.items():
        payload[f'param/{name}'] = param.data
        payload[f'adam_m/{name}'] = store.m[name]
        payload[f'adam_v/{name}'] = store.v[name]
    with open(path, 'wb') as f:
        np.savez(f, **payload)
    logger.info(f"Saved checkpoint with {len(store)} tensors to {path}")
    return path


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`; returns (store, meta)."""
    if not os.path.exists(path):
        raise CheckpointError(f'Checkpoint not found: {path}')
    try:
        with np.load(path, allow_pickle=False) as archive:
            data = {key: archive[key] for key in archive.files}
    except (OSError, ValueError) as e:
        raise CheckpointError(f'Unreadable checkpoint {path}: {e}') from e

    if str(data.get('format', '')) != CHECKPOINT_FORMAT:
        raise CheckpointError(f'{path} is not a sticker-selector checkpoint')
    version = int(data['version'])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f'{path}: unsupported checkpoint version {version}')

    store = ParamStore(str(data['dtype']))
    for key, value in data.items():
        if key.startswith('param/'):
            name = key[len('param/'):]
            store.add(name, value)
            store.m[name] = data[f'adam_m/{name}']
            store.v[name] = data[f'adam_v/{name}']
    store.step = int(data['step'])
    return store, json.loads(str(data['meta']))


def grad_check(loss_fn, store, epsilon=1e-5, floor=1e-8, max_entries=None, seed=0, kink_tolerant=False):
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn`` takes no arguments and returns a scalar Tensor built from the
    store's parameters. ``max_entries`` samples that many coordinates per
    parameter. With ``kink_tolerant`` an entry also passes on a one-sided
    difference, for coordinates sitting next to a ReLU or max-pool switch.
    """
    store.zero_grad()
    loss = loss_fn()
    if not loss.is_finite():
        raise NumericFault('grad_check: loss is not finite')
    if loss.requires_grad:
        loss.backward()
    analytic = store.grads()
    base = loss.item()
    rng = np.random.default_rng(seed)

    def evaluate():
        with no_grad():
            value = loss_fn().item()
        if not np.isfinite(value):
            raise NumericFault('grad_check: loss became non-finite under perturbation')
        return value

    def relative(a, n):
        return abs(a - n) / max(abs(a), abs(n), floor)

    worst, worst_name = 0.0, None
    for name, param in store.params.items():
        flat = param.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        grad = analytic[name].reshape(-1)
        for i in indices:
            original = flat[i]
            flat[i] = original + epsilon
            up = evaluate()
            flat[i] = original - epsilon
            down = evaluate()
            flat[i] = original
            error = relative(grad[i], (up - down) / (2.0 * epsilon))
            if kink_tolerant and error > 1e-4:
                error = min(error,
                            relative(grad[i], (up - base) / epsilon),
                            relative(grad[i], (base - down) / epsilon))
            if error > worst:
                worst, worst_name = error, name

    store.zero_grad()
    logger.debug(f"grad_check max relative error {worst:.3e} at {worst_name}")
    return worst
