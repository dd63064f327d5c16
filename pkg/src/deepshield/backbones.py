"""Convolutional feature extractors and the feature-map tokenizer.

Two backbone kinds share one config schema: ``mbconv`` stacks mobile
inverted-bottleneck blocks (expansion, depthwise conv, optional
squeeze-excitation, projection, residual) the way EfficientNet does, while
``plain`` stacks 3x3 conv + batch norm + relu stages. Both downsample by
their declared token stride and feed the same tokenizer, so either can sit
under either detector head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .config import BackboneConfig, StageConfig
from .errors import ConfigError, DimensionError, InputError

SE_REDUCTION = 4
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ParamStore:
    """Flat, uniquely named collection of trainable tensors and buffers."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, dc.Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def add_param(self, name: str, array: np.ndarray) -> dc.Tensor:
        if name in self.params or name in self.buffers:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = dc.Tensor(array.astype(self.dtype, copy=False), requires_grad=True)
        self.params[name] = t
        return t

    def add_buffer(self, name: str, array: np.ndarray) -> np.ndarray:
        if name in self.params or name in self.buffers:
            raise ConfigError(f"duplicate buffer name {name!r}")
        arr = array.astype(self.dtype, copy=True)
        self.buffers[name] = arr
        return arr

    def tensors(self) -> list[dc.Tensor]:
        return list(self.params.values())

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def __getitem__(self, name: str) -> dc.Tensor:
        return self.params[name]


class Initializer:
    """Seed-deterministic initialization: uniform fan-in for conv/linear."""

    def __init__(self, seed: int, dtype=np.float32):
        self.rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)

    def fan_in_uniform(self, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return self.rng.uniform(-bound, bound, size=shape).astype(self.dtype)

    def normal(self, shape: tuple[int, ...], std: float = 0.02) -> np.ndarray:
        return (self.rng.standard_normal(shape) * std).astype(self.dtype)

    def zeros(self, shape) -> np.ndarray:
        return np.zeros(shape, dtype=self.dtype)

    def ones(self, shape) -> np.ndarray:
        return np.ones(shape, dtype=self.dtype)


@dataclass
class FeatureMap:
    """Backbone output plus the pixels-per-cell factor it downsampled by."""

    values: dc.Tensor  # (N, C, Hf, Wf)
    token_stride: int


@dataclass
class TokenGrid:
    """Row-major visual tokens cut from a feature map."""

    tokens: dc.Tensor  # (N, T, D)
    grid: tuple[int, int]
    pixel_footprint: int


# ---------------------------------------------------------------------------
# construction


def _register_conv(store: ParamStore, init: Initializer, name: str, out_ch: int, in_ch: int, kernel: int) -> None:
    fan_in = in_ch * kernel * kernel
    store.add_param(f"{name}.weight", init.fan_in_uniform((out_ch, in_ch, kernel, kernel), fan_in))


def _register_depthwise(store: ParamStore, init: Initializer, name: str, channels: int, kernel: int) -> None:
    store.add_param(f"{name}.weight", init.fan_in_uniform((channels, 1, kernel, kernel), kernel * kernel))


def _register_bn(store: ParamStore, init: Initializer, name: str, channels: int) -> None:
    store.add_param(f"{name}.scale", init.ones((channels,)))
    store.add_param(f"{name}.shift", init.zeros((channels,)))
    store.add_buffer(f"{name}.running_mean", init.zeros((channels,)))
    store.add_buffer(f"{name}.running_var", init.ones((channels,)))


def register_linear(store: ParamStore, init: Initializer, name: str, d_out: int, d_in: int, bias: bool = True) -> None:
    store.add_param(f"{name}.weight", init.fan_in_uniform((d_out, d_in), d_in))
    if bias:
        store.add_param(f"{name}.bias", init.zeros((d_out,)))


def _stage_plan(config: BackboneConfig) -> list[tuple[str, StageConfig, int, int, int]]:
    """Expand stage repeats into (name, stage, in_ch, out_ch, stride) blocks."""
    plan = []
    in_ch = config.stem.out_channels
    for i, stage in enumerate(config.stages):
        for j in range(stage.repeats):
            stride = stage.stride if j == 0 else 1
            plan.append((f"stage{i}.block{j}", stage, in_ch, stage.out_channels, stride))
            in_ch = stage.out_channels
    return plan


def register_backbone(store: ParamStore, init: Initializer, prefix: str, config: BackboneConfig, in_channels: int = 3) -> None:
    stem = config.stem
    _register_conv(store, init, f"{prefix}.stem.conv", stem.out_channels, in_channels, stem.kernel)
    _register_bn(store, init, f"{prefix}.stem.bn", stem.out_channels)
    for name, stage, in_ch, out_ch, _stride in _stage_plan(config):
        base = f"{prefix}.{name}"
        if config.kind == "plain":
            _register_conv(store, init, f"{base}.conv", out_ch, in_ch, stage.kernel)
            _register_bn(store, init, f"{base}.bn", out_ch)
            continue
        expanded = in_ch * stage.expand_ratio
        if stage.expand_ratio != 1:
            _register_conv(store, init, f"{base}.expand.conv", expanded, in_ch, 1)
            _register_bn(store, init, f"{base}.expand.bn", expanded)
        _register_depthwise(store, init, f"{base}.dw.conv", expanded, stage.kernel)
        _register_bn(store, init, f"{base}.dw.bn", expanded)
        if stage.use_se:
            squeezed = max(1, expanded // SE_REDUCTION)
            register_linear(store, init, f"{base}.se.reduce", squeezed, expanded)
            register_linear(store, init, f"{base}.se.expand", expanded, squeezed)
        _register_conv(store, init, f"{base}.project.conv", out_ch, expanded, 1)
        _register_bn(store, init, f"{base}.project.bn", out_ch)


def build_backbone(config: BackboneConfig, seed: int, in_channels: int = 3, dtype=np.float32) -> ParamStore:
    """Standalone backbone parameter set; deterministic for a given seed."""
    store = ParamStore(dtype=dtype)
    init = Initializer(seed, dtype=dtype)
    register_backbone(store, init, "backbone", config, in_channels)
    return store


# ---------------------------------------------------------------------------
# forward


def _bn(store: ParamStore, name: str, x: dc.Tensor, train: bool) -> dc.Tensor:
    return dc.batch_norm(
        x,
        store[f"{name}.scale"],
        store[f"{name}.shift"],
        store.buffers[f"{name}.running_mean"],
        store.buffers[f"{name}.running_var"],
        eps=BN_EPS,
        momentum=BN_MOMENTUM,
        train=train,
    )


def _squeeze_excite(store: ParamStore, base: str, x: dc.Tensor) -> dc.Tensor:
    pooled = dc.global_avg_pool2d(x)  # (N, C)
    h = dc.silu(dc.linear(pooled, store[f"{base}.se.reduce.weight"], store[f"{base}.se.reduce.bias"]))
    gate = dc.sigmoid(dc.linear(h, store[f"{base}.se.expand.weight"], store[f"{base}.se.expand.bias"]))
    n, c = gate.shape
    return dc.mul(x, dc.reshape(gate, (n, c, 1, 1)))


def mbconv_block(
    x: dc.Tensor,
    store: ParamStore,
    base: str,
    stage: StageConfig,
    in_ch: int,
    out_ch: int,
    stride: int,
    train: bool,
) -> dc.Tensor:
    """Expansion -> depthwise -> optional SE -> projection, with residual.

    The residual is added iff stride == 1 and the channel count is
    preserved; requesting it otherwise is a configuration error upstream.
    """
    h = x
    if stage.expand_ratio != 1:
        h = dc.conv2d(h, store[f"{base}.expand.conv.weight"], stride=1, padding=0)
        h = dc.silu(_bn(store, f"{base}.expand.bn", h, train))
    pad = stage.kernel // 2
    h = dc.depthwise_conv2d(h, store[f"{base}.dw.conv.weight"], stride=stride, padding=pad)
    h = dc.silu(_bn(store, f"{base}.dw.bn", h, train))
    if stage.use_se:
        h = _squeeze_excite(store, base, h)
    h = dc.conv2d(h, store[f"{base}.project.conv.weight"], stride=1, padding=0)
    h = _bn(store, f"{base}.project.bn", h, train)
    if stride == 1 and in_ch == out_ch:
        h = dc.add(h, x)
    return h


def _plain_block(x: dc.Tensor, store: ParamStore, base: str, stage: StageConfig, stride: int, train: bool) -> dc.Tensor:
    pad = stage.kernel // 2
    h = dc.conv2d(x, store[f"{base}.conv.weight"], stride=stride, padding=pad)
    return dc.relu(_bn(store, f"{base}.bn", h, train))


def backbone_forward(x: dc.Tensor, store: ParamStore, prefix: str, config: BackboneConfig, train: bool) -> dc.Tensor:
    stem = config.stem
    h = dc.conv2d(x, store[f"{prefix}.stem.conv.weight"], stride=stem.stride, padding=stem.kernel // 2)
    h = _bn(store, f"{prefix}.stem.bn", h, train)
    h = dc.relu(h) if config.kind == "plain" else dc.silu(h)
    for name, stage, in_ch, out_ch, stride in _stage_plan(config):
        base = f"{prefix}.{name}"
        if config.kind == "plain":
            h = _plain_block(h, store, base, stage, stride, train)
        else:
            h = mbconv_block(h, store, base, stage, in_ch, out_ch, stride, train)
    return h


def extract_features(
    image: dc.Tensor, store: ParamStore, config: BackboneConfig, prefix: str = "backbone", train: bool = False
) -> FeatureMap:
    """Run the backbone over a batch of square face crops."""
    if image.ndim != 4:
        raise InputError(f"expected NCHW image batch, got shape {image.shape}")
    n, c, h, w = image.shape
    if h != w:
        raise InputError(f"face crops must be square, got {h}x{w}")
    stride = config.token_stride
    if h % stride != 0:
        raise InputError(f"token stride {stride} does not divide input size {h}")
    values = backbone_forward(image, store, prefix, config, train)
    expected = h // stride
    if values.shape[2] != expected or values.shape[3] != expected:
        raise DimensionError(
            f"declared token stride {stride} disagrees with produced grid {values.shape[2:]} for input {h}"
        )
    return FeatureMap(values=values, token_stride=stride)


def tokenize(
    fm: FeatureMap,
    patch_cells: int,
    weight: dc.Tensor,
    bias: dc.Tensor | None,
) -> TokenGrid:
    """Group patch_cells x patch_cells feature cells and project each group.

    Token order is row-major over the resulting grid; each token's input
    footprint is token_stride * patch_cells pixels per side.
    """
    n, c, hf, wf = fm.values.shape
    if patch_cells < 1:
        raise ConfigError(f"patch_cells must be positive, got {patch_cells}")
    if hf % patch_cells != 0 or wf % patch_cells != 0:
        raise ConfigError(f"patch_cells {patch_cells} does not divide feature grid {hf}x{wf}")
    rows, cols = hf // patch_cells, wf // patch_cells
    x = dc.reshape(fm.values, (n, c, rows, patch_cells, cols, patch_cells))
    x = dc.permute(x, (0, 2, 4, 1, 3, 5))
    x = dc.reshape(x, (n, rows * cols, c * patch_cells * patch_cells))
    tokens = dc.linear(x, weight, bias)
    return TokenGrid(tokens=tokens, grid=(rows, cols), pixel_footprint=fm.token_stride * patch_cells)
