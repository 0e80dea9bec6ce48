import numpy as np

from app.numerics.functional import GRUParams


def glorot(rng, shape):
    fan_in = shape[0] if len(shape) > 1 else 1
    fan_out = shape[-1]
    if len(shape) == 4:
        receptive = shape[0] * shape[1]
        fan_in, fan_out = receptive * shape[2], receptive * shape[3]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Module:
    """A named group of parameters living in a shared ParamStore"""

    def __init__(self, store, prefix, rng):
        self.store = store
        self.prefix = prefix
        self.rng = rng

    def param(self, name, shape, init='glorot'):
        if init == 'glorot':
            value = glorot(self.rng, shape)
        elif init == 'zeros':
            value = np.zeros(shape)
        elif init == 'ones':
            value = np.ones(shape)
        elif init == 'normal':
            value = self.rng.normal(0.0, 0.1, size=shape)
        else:
            raise ValueError(f'unknown initializer {init!r}')
        return self.store.add(f'{self.prefix}.{name}', value)

    def __getitem__(self, name):
        return self.store[f'{self.prefix}.{name}']

    def gru(self, name, input_size, hidden):
        self.param(f'{name}.w_input', (input_size, 3 * hidden))
        self.param(f'{name}.w_state', (hidden, 3 * hidden))
        self.param(f'{name}.b_input', (3 * hidden,), init='zeros')
        self.param(f'{name}.b_state', (3 * hidden,), init='zeros')

    def gru_params(self, name):
        return GRUParams(
            w_input=self[f'{name}.w_input'],
            w_state=self[f'{name}.w_state'],
            b_input=self[f'{name}.b_input'],
            b_state=self[f'{name}.b_state']
        )

    def parameter_names(self):
        return self.store.names(self.prefix + '.')
