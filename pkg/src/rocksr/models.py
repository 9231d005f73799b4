"""Network definitions: residual upsampling generator, strided-conv
classifier, and a frozen deep feature extractor.

Construction is fully deterministic given (config, seed): layers draw
their initial weights from one sequential stream in registration order.
Convolutions use He-style normal init, std = sqrt(2 / (k*k*c_in)); dense
layers use std = sqrt(2 / f_in); biases start at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import layers as L
from .autodiff import Parameter, ShapeError, Tensor


@dataclass
class GeneratorConfig:
    n_residual_blocks: int = 16
    n_filters: int = 64
    kernel_size: int = 3
    scale: int = 4
    in_channels: int = 1
    out_channels: int = 1

    def validate(self) -> None:
        if self.scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {self.scale}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.n_residual_blocks < 0:
            raise ValueError(f"n_residual_blocks must be >= 0, got {self.n_residual_blocks}")
        if min(self.n_filters, self.in_channels, self.out_channels) < 1:
            raise ValueError(f"filters and channels must be >= 1, got {self}")


@dataclass
class DiscriminatorConfig:
    input_size: int = 192
    base_filters: int = 64
    dense_units: int = 1024
    in_channels: int = 1
    lrelu_alpha: float = 0.2

    # eight stride-2 blocks; channel multipliers double every other block
    N_BLOCKS = 8
    MULTIPLIERS = (1, 1, 2, 2, 4, 4, 8, 8)

    def validate(self) -> None:
        if self.input_size < 4:
            raise ValueError(f"input_size must be at least 4, got {self.input_size}")
        if min(self.base_filters, self.dense_units, self.in_channels) < 1:
            raise ValueError(f"sizes must be positive, got {self}")

    @property
    def filter_sequence(self) -> tuple:
        return tuple(self.base_filters * m for m in self.MULTIPLIERS)

    @property
    def final_spatial(self) -> int:
        s = self.input_size
        for _ in range(self.N_BLOCKS):
            s = (s + 1) // 2  # stride-2 same-padded conv: ceil division
        return s


@dataclass
class FeatureConfig:
    """Topology of the frozen feature extractor.

    The default sizes follow the classic 19-layer configuration: five
    conv groups of (2, 2, 4, 4, 4) layers with 3x3 kernels, max-pooled
    between groups.  Features are tapped after the activation of the
    final conv in the last group - 16 convs and 4 pools deep, so a
    (H, W) input yields (H/16, W/16) spatial resolution.  block_filters
    can be scaled down for cheap tests without changing the topology.
    """

    block_convs: tuple = (2, 2, 4, 4, 4)
    block_filters: tuple = (64, 128, 256, 512, 512)
    replicate_to: int = 3  # grayscale input is tiled to this many channels

    def validate(self) -> None:
        if len(self.block_convs) != len(self.block_filters):
            raise ValueError("block_convs and block_filters must align")
        if any(c < 1 for c in self.block_convs) or any(f < 1 for f in self.block_filters):
            raise ValueError(f"block sizes must be positive, got {self}")
        if self.replicate_to < 1:
            raise ValueError(f"replicate_to must be >= 1, got {self.replicate_to}")

    @property
    def n_pools(self) -> int:
        return len(self.block_convs) - 1

    @property
    def min_input(self) -> int:
        return 2 ** self.n_pools


class Network:
    """Base for parameter containers.

    Subclasses register Conv/Dense/PReLU/BatchNorm modules through
    _conv/_dense/... helpers, which name parameters hierarchically and
    keep them in registration order - the order used by state_dict and
    checkpoints.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: list[Parameter] = []
        self._param_names: set = set()
        self._buffers: dict[str, np.ndarray] = {}

    # -- registration ---------------------------------------------------
    def _register(self, param: Parameter) -> Parameter:
        if param.name in self._param_names:
            raise ValueError(f"duplicate parameter name '{param.name}'")
        self._param_names.add(param.name)
        self._params.append(param)
        return param

    def _register_buffer(self, name: str, array: np.ndarray) -> np.ndarray:
        if name in self._buffers or name in self._param_names:
            raise ValueError(f"duplicate buffer name '{name}'")
        self._buffers[name] = array
        return array

    # -- parameter plumbing ----------------------------------------------
    def parameters(self) -> list:
        return list(self._params)

    def named_parameters(self) -> list:
        return [(p.name, p) for p in self._params]

    def param_count(self) -> int:
        return sum(p.data.size for p in self._params)

    def zero_grad(self) -> None:
        for p in self._params:
            p.zero_grad()

    def set_trainable(self, flag: bool) -> None:
        for p in self._params:
            p.requires_grad = flag

    def state_dict(self) -> dict:
        out = {p.name: p.data for p in self._params}
        out.update(self._buffers)
        return out

    def load_state_dict(self, state: dict) -> None:
        """Copy values in by name; every registered tensor must be present."""
        own = {p.name: p for p in self._params}
        for name, param in own.items():
            if name not in state:
                raise KeyError(f"state is missing parameter '{name}'")
            incoming = np.asarray(state[name])
            if incoming.shape != param.data.shape:
                raise ValueError(
                    f"parameter '{name}': shape {incoming.shape} does not match "
                    f"{param.data.shape}"
                )
            param.data[...] = incoming.astype(self.dtype)
        for name, buf in self._buffers.items():
            if name not in state:
                raise KeyError(f"state is missing buffer '{name}'")
            incoming = np.asarray(state[name])
            if incoming.shape != buf.shape:
                raise ValueError(
                    f"buffer '{name}': shape {incoming.shape} does not match {buf.shape}"
                )
            buf[...] = incoming.astype(self.dtype)

    # -- module helpers ----------------------------------------------------
    def _conv(self, name: str, k: int, c_in: int, c_out: int, rng, stride: int = 1):
        std = math.sqrt(2.0 / (k * k * c_in))
        weight = self._register(Parameter(
            rng.normal(0.0, std, (k, k, c_in, c_out)), name=f"{name}.weight",
            dtype=self.dtype))
        bias = self._register(Parameter(
            np.zeros(c_out), name=f"{name}.bias", dtype=self.dtype))
        return _Conv(weight, bias, stride)

    def _dense(self, name: str, f_in: int, f_out: int, rng):
        std = math.sqrt(2.0 / f_in)
        weight = self._register(Parameter(
            rng.normal(0.0, std, (f_in, f_out)), name=f"{name}.weight", dtype=self.dtype))
        bias = self._register(Parameter(
            np.zeros(f_out), name=f"{name}.bias", dtype=self.dtype))
        return _Dense(weight, bias)

    def _prelu(self, name: str, channels: int, init: float = 0.25):
        alpha = self._register(Parameter(
            np.full(channels, init), name=f"{name}.alpha", dtype=self.dtype))
        return _PRelu(alpha)

    def _batchnorm(self, name: str, channels: int):
        gamma = self._register(Parameter(
            np.ones(channels), name=f"{name}.gamma", dtype=self.dtype))
        beta = self._register(Parameter(
            np.zeros(channels), name=f"{name}.beta", dtype=self.dtype))
        stats = L.BatchNormStats(channels, dtype=self.dtype)
        self._register_buffer(f"{name}.running_mean", stats.mean)
        self._register_buffer(f"{name}.running_var", stats.var)
        return _BatchNorm(gamma, beta, stats)


class _Conv:
    def __init__(self, weight, bias, stride):
        self.weight, self.bias, self.stride = weight, bias, stride

    def __call__(self, x: Tensor) -> Tensor:
        return L.conv2d(x, self.weight, self.bias, stride=self.stride)


class _Dense:
    def __init__(self, weight, bias):
        self.weight, self.bias = weight, bias

    def __call__(self, x: Tensor) -> Tensor:
        return L.dense(x, self.weight, self.bias)


class _PRelu:
    def __init__(self, alpha):
        self.alpha = alpha

    def __call__(self, x: Tensor) -> Tensor:
        return L.prelu(x, self.alpha)


class _BatchNorm:
    def __init__(self, gamma, beta, stats):
        self.gamma, self.beta, self.stats = gamma, beta, stats

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return L.batchnorm(x, self.gamma, self.beta, self.stats, training=training)


class Generator(Network):
    """Residual conv trunk with a global skip and pixel-shuffle upsampling.

    head conv -> N x (conv-PReLU-conv + local skip) -> tail conv
    -> add head features (global skip) -> per doubling: conv to 4F,
    pixel shuffle, PReLU -> final conv to the output channel.  No
    normalization layers anywhere; residual addition is unscaled.
    """

    def __init__(self, config: GeneratorConfig, seed: int = 0, dtype=np.float32):
        super().__init__(dtype=dtype)
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        k, f = config.kernel_size, config.n_filters
        self.head = self._conv("head", k, config.in_channels, f, rng)
        self.blocks = []
        for i in range(config.n_residual_blocks):
            self.blocks.append((
                self._conv(f"block{i}.conv1", k, f, f, rng),
                self._prelu(f"block{i}.act", f),
                self._conv(f"block{i}.conv2", k, f, f, rng),
            ))
        self.tail = self._conv("tail", k, f, f, rng)
        self.upstages = []
        for j in range(int(math.log2(config.scale))):
            self.upstages.append((
                self._conv(f"up{j}.conv", k, f, 4 * f, rng),
                self._prelu(f"up{j}.act", f),
            ))
        self.final = self._conv("final", k, f, config.out_channels, rng)

    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 4 or x.shape[-1] != self.config.in_channels:
            raise ShapeError(
                f"generator expects (N, H, W, {self.config.in_channels}), "
                f"got {x.shape}"
            )
        if x.data.dtype != self.dtype:
            raise ShapeError(f"generator is {self.dtype}, input is {x.data.dtype}")

    def features(self, x: Tensor) -> Tensor:
        """Trunk output before upsampling: head + residual body + global skip."""
        self._check_input(x)
        h0 = self.head(x)
        h = h0
        for conv1, act, conv2 in self.blocks:
            h = conv2(act(conv1(h))) + h
        return self.tail(h) + h0

    def upsample(self, h: Tensor) -> Tensor:
        """Resolution stages plus the output projection."""
        for conv, act in self.upstages:
            h = act(L.pixel_shuffle(conv(h), 2))
        return self.final(h)

    def forward(self, x: Tensor) -> Tensor:
        return self.upsample(self.features(x))

    __call__ = forward


class Discriminator(Network):
    """Eight stride-2 conv blocks, then a two-layer classifier head.

    Each block is conv (3x3, stride 2) -> LReLU -> batchnorm.  The head
    flattens to dense(dense_units) -> LReLU -> dense(1) -> sigmoid, so
    the network is bound to one input size.
    """

    def __init__(self, config: DiscriminatorConfig, seed: int = 0, dtype=np.float32):
        super().__init__(dtype=dtype)
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        self.blocks = []
        c_prev = config.in_channels
        for i, c_out in enumerate(config.filter_sequence):
            conv = self._conv(f"block{i}.conv", 3, c_prev, c_out, rng, stride=2)
            bn = self._batchnorm(f"block{i}.bn", c_out)
            self.blocks.append((conv, bn))
            c_prev = c_out
        flat = config.final_spatial ** 2 * c_prev
        self.fc1 = self._dense("fc1", flat, config.dense_units, rng)
        self.fc2 = self._dense("fc2", config.dense_units, 1, rng)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        cfg = self.config
        if x.ndim != 4 or x.shape[-1] != cfg.in_channels:
            raise ShapeError(
                f"classifier expects (N, H, W, {cfg.in_channels}), got {x.shape}"
            )
        if x.shape[1] != cfg.input_size or x.shape[2] != cfg.input_size:
            raise ShapeError(
                f"classifier is size-bound to {cfg.input_size}x{cfg.input_size} "
                f"inputs by its dense head, got {x.shape[1]}x{x.shape[2]}"
            )
        h = x
        for conv, bn in self.blocks:
            h = bn(L.lrelu(conv(h), cfg.lrelu_alpha), training=training)
        h = L.flatten(h)
        h = L.lrelu(self.fc1(h), cfg.lrelu_alpha)
        return L.sigmoid(self.fc2(h))

    __call__ = forward


class FeatureNetwork(Network):
    """Frozen conv stack for perceptual comparisons.

    Weights are seeded random by default (a fixed random projection is a
    serviceable perceptual metric and keeps the package self-contained);
    pretrained values in the same layout can be loaded from a checkpoint.
    All parameters have requires_grad=False: gradient flows through the
    features to the image, never into them.
    """

    def __init__(self, config: FeatureConfig, seed: int = 0, dtype=np.float32):
        super().__init__(dtype=dtype)
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        self.groups = []
        c_prev = config.replicate_to
        for g, (n_convs, c_out) in enumerate(zip(config.block_convs, config.block_filters)):
            convs = []
            for i in range(n_convs):
                convs.append(self._conv(f"group{g}.conv{i}", 3, c_prev, c_out, rng))
                c_prev = c_out
            self.groups.append(convs)
        self.set_trainable(False)

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.config
        if x.ndim != 4 or x.shape[-1] != 1:
            raise ShapeError(f"feature network expects (N, H, W, 1), got {x.shape}")
        if x.shape[1] < cfg.min_input or x.shape[2] < cfg.min_input:
            raise ShapeError(
                f"feature network needs inputs of at least "
                f"{cfg.min_input}x{cfg.min_input}, got {x.shape[1]}x{x.shape[2]}"
            )
        h = L.channel_replicate(x, cfg.replicate_to)
        last = len(self.groups) - 1
        for g, convs in enumerate(self.groups):
            for conv in convs:
                h = L.relu(conv(h))
            if g != last:
                h = L.maxpool2d(h)
        return h

    __call__ = forward


def super_resolve(generator: Generator, pixels: np.ndarray) -> np.ndarray:
    """Run one (H, W) image through the generator, no tape, no clamping."""
    x = Tensor(np.asarray(pixels, dtype=generator.dtype)[None, :, :, None])
    return generator.forward(x).data[0, :, :, 0]
