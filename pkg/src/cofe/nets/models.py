"""Network architectures: generator, discriminator, encoder, predictors.

Desk-scale shapes tied to 10 s @ 250 Hz (2500 samples): the generator
upsamples a length-20 seed grid by three stride-5 transposed convolutions;
encoder and discriminator mirror it with stride-5 convolutions; predictors
are a stem plus four residual blocks with a global-average head.
"""

from __future__ import annotations

import numpy as np

from .. import engine as eg
from ..errors import ShapeError
from .layers import BatchNorm1d, Conv1d, Dense, TConv1d, collect

SIGNAL_LEN = 2500
BASE_LEN = 20
LATENT_DIM_DEFAULT = 32

TASK_AF = "af_classification"
TASK_POTASSIUM = "potassium_regression"
TASKS = (TASK_AF, TASK_POTASSIUM)


def _lrelu(x):
    return eg.leaky_relu(x, 0.2)


_RAMP_CACHE = {}


def _with_coord(h):
    """Append a constant [-1, 1] position channel to (N, C, L) features.

    Makes absolute sample position available to every conv stage, which the
    beat-placement task needs; without it, position must be synthesized from
    layer phase alignment and converges far too slowly at desk scale.
    """
    n, _, length = h.shape
    key = (n, length)
    ramp = _RAMP_CACHE.get(key)
    if ramp is None:
        row = np.linspace(-1.0, 1.0, length, dtype=np.float32)
        ramp = eg.Tensor(np.broadcast_to(row, (n, 1, length)).copy())
        _RAMP_CACHE[key] = ramp
    return eg.concat([h, ramp], axis=1)


class Generator:
    """Latent vector -> (n_leads, 2500) waveform in millivolts.

    Dense seed over a 100-cell grid, two stride-5 transposed convolutions to
    place quasi-impulse features, and a wide (~300 ms) output convolution
    that renders beat shapes around them.
    """

    SEED_LEN = 100
    CHANNELS = (48, 16, 8)
    UP_KERNEL = 15
    OUT_KERNEL = 75

    def __init__(self, latent_dim=LATENT_DIM_DEFAULT, n_leads=1, rng=None):
        self.latent_dim = latent_dim
        self.n_leads = n_leads
        c = self.CHANNELS
        self.fc = Dense(latent_dim, c[0] * self.SEED_LEN, rng, "fc")
        self.up1 = TConv1d(c[0] + 1, c[1], self.UP_KERNEL, 5, 5, rng, "up1")
        self.up2 = TConv1d(c[1] + 1, c[2], self.UP_KERNEL, 5, 5, rng, "up2")
        self.out = Conv1d(c[2] + 1, n_leads, self.OUT_KERNEL, 1,
                          self.OUT_KERNEL // 2, rng, "out")
        self._layers = [self.fc, self.up1, self.up2, self.out]

    def forward(self, w):
        if w.data.ndim != 2 or w.shape[1] != self.latent_dim:
            raise ShapeError(f"generator expects (N, {self.latent_dim}), "
                             f"got {w.shape}")
        h = _lrelu(self.fc(w))
        h = eg.reshape(h, (w.shape[0], self.CHANNELS[0], self.SEED_LEN))
        h = _lrelu(self.up1(_with_coord(h)))
        h = _lrelu(self.up2(_with_coord(h)))
        return self.out(_with_coord(h))

    __call__ = forward

    def trainable(self):
        return collect(self._layers, "trainable")

    def state(self):
        return collect(self._layers, "state")

    def load(self, state):
        for layer in self._layers:
            layer.load(state)
        return self

    @classmethod
    def from_state(cls, state):
        latent_dim = state["fc.w"].shape[0]
        n_leads = state["out.w"].shape[0]
        return cls(latent_dim=latent_dim, n_leads=n_leads).load(state)


class Encoder:
    """Waveform -> latent vector (inverse mapping of the generator).

    The wide first convolution acts as a bank of matched filters; stride-5
    stages bring the signal down to a 20-cell summary before the dense head.
    """

    CHANNELS = (16, 32, 64)
    HIDDEN = 256
    IN_KERNEL = 51
    KERNEL = 15

    def __init__(self, latent_dim=LATENT_DIM_DEFAULT, n_leads=1, rng=None):
        self.latent_dim = latent_dim
        self.n_leads = n_leads
        c = self.CHANNELS
        self.down1 = Conv1d(n_leads + 1, c[0], self.IN_KERNEL, 5, 23, rng,
                            "down1")
        self.down2 = Conv1d(c[0] + 1, c[1], self.KERNEL, 5, 5, rng, "down2")
        self.down3 = Conv1d(c[1] + 1, c[2], self.KERNEL, 5, 5, rng, "down3")
        self.fc1 = Dense(c[2] * BASE_LEN, self.HIDDEN, rng, "fc1")
        self.fc2 = Dense(self.HIDDEN, latent_dim, rng, "fc2")
        self._layers = [self.down1, self.down2, self.down3, self.fc1, self.fc2]

    def forward(self, x):
        if x.data.ndim != 3 or x.shape[1] != self.n_leads or x.shape[2] != SIGNAL_LEN:
            raise ShapeError(f"encoder expects (N, {self.n_leads}, {SIGNAL_LEN}), "
                             f"got {x.shape}")
        h = _lrelu(self.down1(_with_coord(x)))
        h = _lrelu(self.down2(_with_coord(h)))
        h = _lrelu(self.down3(_with_coord(h)))
        h = eg.reshape(h, (x.shape[0], self.CHANNELS[2] * BASE_LEN))
        h = _lrelu(self.fc1(h))
        return self.fc2(h)

    __call__ = forward

    def trainable(self):
        return collect(self._layers, "trainable")

    def state(self):
        return collect(self._layers, "state")

    def load(self, state):
        for layer in self._layers:
            layer.load(state)
        return self

    @classmethod
    def from_state(cls, state):
        latent_dim = state["fc2.w"].shape[1]
        n_leads = state["down1.w"].shape[1] - 1  # minus the coord channel
        return cls(latent_dim=latent_dim, n_leads=n_leads).load(state)


class Discriminator:
    """Waveform -> real/fake logit (one scalar per record)."""

    CHANNELS = (16, 32, 64)
    KERNEL = 9

    def __init__(self, n_leads=1, rng=None):
        self.n_leads = n_leads
        c = self.CHANNELS
        self.down1 = Conv1d(n_leads, c[0], self.KERNEL, 5, 2, rng, "down1")
        self.down2 = Conv1d(c[0], c[1], self.KERNEL, 5, 2, rng, "down2")
        self.down3 = Conv1d(c[1], c[2], self.KERNEL, 5, 2, rng, "down3")
        self.fc = Dense(c[2] * BASE_LEN, 1, rng, "fc")
        self._layers = [self.down1, self.down2, self.down3, self.fc]

    def forward(self, x):
        h = _lrelu(self.down1(x))
        h = _lrelu(self.down2(h))
        h = _lrelu(self.down3(h))
        h = eg.reshape(h, (x.shape[0], self.CHANNELS[2] * BASE_LEN))
        return self.fc(h)  # (N, 1) logits

    __call__ = forward

    def trainable(self):
        return collect(self._layers, "trainable")

    def state(self):
        return collect(self._layers, "state")

    def load(self, state):
        for layer in self._layers:
            layer.load(state)
        return self

    @classmethod
    def from_state(cls, state):
        return cls(n_leads=state["down1.w"].shape[1]).load(state)


class ResBlock:
    KERNEL = 9

    def __init__(self, c_in, c_out, stride, rng=None, name="block"):
        self.name = name
        self.stride = stride
        pad = self.KERNEL // 2
        self.conv1 = Conv1d(c_in, c_out, self.KERNEL, stride, pad, rng,
                            f"{name}.conv1")
        self.bn1 = BatchNorm1d(c_out, f"{name}.bn1")
        self.conv2 = Conv1d(c_out, c_out, self.KERNEL, 1, pad, rng,
                            f"{name}.conv2")
        self.bn2 = BatchNorm1d(c_out, f"{name}.bn2")
        self.project = stride != 1 or c_in != c_out
        if self.project:
            self.proj = Conv1d(c_in, c_out, 1, stride, 0, rng, f"{name}.proj")
            self.bnp = BatchNorm1d(c_out, f"{name}.bnp")
        self._layers = [self.conv1, self.bn1, self.conv2, self.bn2] + (
            [self.proj, self.bnp] if self.project else [])

    def __call__(self, x, training=False):
        h = eg.relu(self.bn1(self.conv1(x), training))
        h = self.bn2(self.conv2(h), training)
        skip = self.bnp(self.proj(x), training) if self.project else x
        return eg.relu(eg.add(h, skip))

    def trainable(self):
        return collect(self._layers, "trainable")

    def state(self):
        return collect(self._layers, "state")

    def load(self, state):
        for layer in self._layers:
            layer.load(state)


class Predictor:
    """Residual 1-D conv classifier/regressor over (N, n_leads, 2500).

    af_classification: 2-class logits -> softmax probabilities.
    potassium_regression: sigmoid scalar in [0, 1].
    """

    STEM_CHANNELS = 16
    BLOCKS = ((16, 2), (24, 2), (32, 5), (32, 5))
    KERNEL = 9

    def __init__(self, task, n_leads=1, rng=None):
        if task not in TASKS:
            raise ShapeError(f"unknown task '{task}'")
        self.task = task
        self.n_leads = n_leads
        self.stem = Conv1d(n_leads, self.STEM_CHANNELS, self.KERNEL, 5, 2,
                           rng, "stem")
        self.stem_bn = BatchNorm1d(self.STEM_CHANNELS, "stem_bn")
        self.blocks = []
        c_in = self.STEM_CHANNELS
        for i, (c_out, stride) in enumerate(self.BLOCKS):
            self.blocks.append(ResBlock(c_in, c_out, stride, rng, f"block{i}"))
            c_in = c_out
        n_out = 2 if task == TASK_AF else 1
        self.head = Dense(c_in, n_out, rng, "head")
        self._layers = [self.stem, self.stem_bn] + self.blocks + [self.head]

    def forward(self, x, training=False):
        """Raw head output: (N, 2) logits for AF, (N, 1) pre-sigmoid value."""
        if x.data.ndim != 3 or x.shape[2] != SIGNAL_LEN:
            raise ShapeError(f"predictor expects (N, C, {SIGNAL_LEN}), got {x.shape}")
        h = eg.relu(self.stem_bn(self.stem(x), training))
        for block in self.blocks:
            h = block(h, training)
        h = eg.mean(h, axis=2)
        return self.head(h)

    __call__ = forward

    def predict(self, x, training=False):
        """Probability vector (N, 2) for AF; value in [0,1] (N, 1) for potassium."""
        out = self.forward(x, training)
        if self.task == TASK_AF:
            return eg.softmax(out, axis=1)
        return eg.sigmoid(out)

    def trainable(self):
        return collect(self._layers, "trainable")

    def state(self):
        return collect(self._layers, "state")

    def load(self, state):
        for layer in self._layers:
            layer.load(state)
        return self

    @classmethod
    def from_state(cls, state, task=None):
        if task is None:
            task = TASK_AF if state["head.w"].shape[1] == 2 else TASK_POTASSIUM
        return cls(task, n_leads=state["stem.w"].shape[1]).load(state)


def set_params(model, values):
    """Write a dict of numpy arrays into the model's trainable tensors."""
    tensors = model.trainable()
    for name, array in values.items():
        tensors[name].data = np.asarray(array, dtype=np.float32)
