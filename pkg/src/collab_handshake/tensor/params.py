from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .tape import DTYPE


class ParamStore:
    """Named float64 parameters with a matching gradient accumulator each."""

    def __init__(self):
        self.values = {}
        self.grads = {}

    def add(self, name, value):
        if name in self.values:
            raise ConfigError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=DTYPE)
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name):
        return self.values[name]

    def __contains__(self, name):
        return name in self.values

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def items(self):
        return self.values.items()

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def num_scalars(self, prefix=""):
        return sum(v.size for k, v in self.values.items() if k.startswith(prefix))

    def copy(self):
        out = ParamStore()
        for k, v in self.values.items():
            out.add(k, v)
        return out


def glorot_uniform(rng, shape, fan_in, fan_out):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


def init_linear(store, rng, name, n_in, n_out, bias=True):
    store.add(f"{name}.weight", glorot_uniform(rng, (n_in, n_out), n_in, n_out))
    if bias:
        store.add(f"{name}.bias", np.zeros(n_out))


def init_conv3x3(store, rng, name, c_in, c_out):
    store.add(f"{name}.weight", glorot_uniform(rng, (c_out, c_in, 3, 3), c_in * 9, c_out * 9))
    store.add(f"{name}.bias", np.zeros(c_out))
