"""Trainable layers over the engine: dense, conv, transposed conv, batchnorm.

Each layer exposes `state()` (trainable weights plus buffers, as numpy arrays
keyed by dotted names) and `trainable()` (name -> Tensor) so optimizers and
checkpoints share one naming scheme.
"""

from __future__ import annotations

import numpy as np

from .. import engine as eg


class Dense:
    def __init__(self, n_in, n_out, rng=None, name="dense"):
        self.name = name
        if rng is not None:
            std = float(np.sqrt(2.0 / n_in))
            w = rng.normal(0.0, std, (n_in, n_out)).astype(np.float32)
        else:
            w = np.zeros((n_in, n_out), dtype=np.float32)
        self.w = eg.Tensor(w, requires_grad=True)
        self.b = eg.Tensor(np.zeros(n_out, dtype=np.float32), requires_grad=True)

    def __call__(self, x):
        return eg.bias_add(eg.matmul(x, self.w), self.b)

    def trainable(self):
        return {f"{self.name}.w": self.w, f"{self.name}.b": self.b}

    def state(self):
        return {f"{self.name}.w": self.w.data, f"{self.name}.b": self.b.data}

    def load(self, state):
        self.w = eg.Tensor(state[f"{self.name}.w"], requires_grad=True)
        self.b = eg.Tensor(state[f"{self.name}.b"], requires_grad=True)


class Conv1d:
    def __init__(self, c_in, c_out, kernel, stride=1, padding=0, rng=None,
                 name="conv"):
        self.name = name
        self.stride = stride
        self.padding = padding
        if rng is not None:
            std = float(np.sqrt(2.0 / (c_in * kernel)))
            w = rng.normal(0.0, std, (c_out, c_in, kernel)).astype(np.float32)
        else:
            w = np.zeros((c_out, c_in, kernel), dtype=np.float32)
        self.w = eg.Tensor(w, requires_grad=True)
        self.b = eg.Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True)

    def __call__(self, x):
        return eg.conv1d(x, self.w, bias=self.b, stride=self.stride,
                         padding=self.padding)

    def trainable(self):
        return {f"{self.name}.w": self.w, f"{self.name}.b": self.b}

    def state(self):
        return {f"{self.name}.w": self.w.data, f"{self.name}.b": self.b.data}

    def load(self, state):
        self.w = eg.Tensor(state[f"{self.name}.w"], requires_grad=True)
        self.b = eg.Tensor(state[f"{self.name}.b"], requires_grad=True)


class TConv1d:
    def __init__(self, c_in, c_out, kernel, stride=1, padding=0, rng=None,
                 name="tconv"):
        self.name = name
        self.stride = stride
        self.padding = padding
        if rng is not None:
            std = float(np.sqrt(2.0 / (c_in * kernel) * stride))
            w = rng.normal(0.0, std, (c_in, c_out, kernel)).astype(np.float32)
        else:
            w = np.zeros((c_in, c_out, kernel), dtype=np.float32)
        self.w = eg.Tensor(w, requires_grad=True)
        self.b = eg.Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True)

    def __call__(self, x):
        return eg.transposed_conv1d(x, self.w, bias=self.b, stride=self.stride,
                                    padding=self.padding)

    def trainable(self):
        return {f"{self.name}.w": self.w, f"{self.name}.b": self.b}

    def state(self):
        return {f"{self.name}.w": self.w.data, f"{self.name}.b": self.b.data}

    def load(self, state):
        self.w = eg.Tensor(state[f"{self.name}.w"], requires_grad=True)
        self.b = eg.Tensor(state[f"{self.name}.b"], requires_grad=True)


class BatchNorm1d:
    MOMENTUM = 0.9

    def __init__(self, channels, name="bn"):
        self.name = name
        self.gamma = eg.Tensor(np.ones(channels, dtype=np.float32),
                               requires_grad=True)
        self.beta = eg.Tensor(np.zeros(channels, dtype=np.float32),
                              requires_grad=True)
        self.bn_state = eg.BatchNormState(channels, momentum=self.MOMENTUM)

    def __call__(self, x, training=False):
        return eg.batch_norm_1d(x, self.gamma, self.beta, self.bn_state, training)

    def trainable(self):
        return {f"{self.name}.gamma": self.gamma, f"{self.name}.beta": self.beta}

    def state(self):
        return {
            f"{self.name}.gamma": self.gamma.data,
            f"{self.name}.beta": self.beta.data,
            f"{self.name}.running_mean": self.bn_state.running_mean,
            f"{self.name}.running_var": self.bn_state.running_var,
        }

    def load(self, state):
        self.gamma = eg.Tensor(state[f"{self.name}.gamma"], requires_grad=True)
        self.beta = eg.Tensor(state[f"{self.name}.beta"], requires_grad=True)
        self.bn_state.running_mean = np.asarray(
            state[f"{self.name}.running_mean"], dtype=np.float32)
        self.bn_state.running_var = np.asarray(
            state[f"{self.name}.running_var"], dtype=np.float32)


def collect(layers, method):
    out = {}
    for layer in layers:
        out.update(getattr(layer, method)())
    return out
