"""Finite-difference verification of every differentiable operation.

Each named check builds float64 inputs from a seed, reduces the op output
to a scalar through a fixed random weighting, and compares reverse-mode
gradients against central differences. Per-op tolerance is 1e-4; the
end-to-end assemblies (both detector models at 16px input) use 1e-3.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import diffcore as dc
from .backbones import ParamStore, build_backbone, extract_features, mbconv_block
from .config import (
    BackboneConfig,
    BranchConfig,
    CrossViTConfig,
    EfficientViTConfig,
    EncoderConfig,
    StageConfig,
    StemConfig,
)
from .diffcore import Tensor, grad_check
from .errors import InputError
from .models import ConvCrossViT, EfficientViT, encoder_forward

OP_TOLERANCE = 1e-4
E2E_TOLERANCE = 1e-3
EPSILON = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    passed: bool
    seconds: float


def _t(rng: np.random.Generator, shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)


def _scalarize(out: Tensor, weights: np.ndarray) -> Tensor:
    return dc.mean(dc.mul(out, Tensor(weights, dtype=np.float64)))


def _micro_backbone() -> BackboneConfig:
    return BackboneConfig(
        kind="mbconv",
        stem=StemConfig(out_channels=4, kernel=3, stride=2),
        stages=[StageConfig(expand_ratio=2, out_channels=8, kernel=3, stride=2, repeats=1, use_se=True)],
    )


def _micro_encoder(dim: int = 8) -> EncoderConfig:
    return EncoderConfig(depth=1, dim=dim, heads=2, mlp_ratio=2)


# Each builder returns (fn, params): fn is a scalar closure over params.
def _check_conv2d(seed: int, variant: int):
    rng = np.random.default_rng([seed, variant])
    n, c, h, k, kh, stride, pad = [(1, 2, 5, 3, 3, 1, 1), (2, 3, 6, 4, 3, 2, 1)][variant]
    x = _t(rng, (n, c, h, h))
    w = _t(rng, (k, c, kh, kh), 0.5)
    b = _t(rng, (k,), 0.1)
    h_out = (h + 2 * pad - kh) // stride + 1
    wts = rng.standard_normal((n, k, h_out, h_out))
    return (lambda: _scalarize(dc.conv2d(x, w, b, stride=stride, padding=pad), wts)), [x, w, b]


def _check_depthwise(seed: int, variant: int):
    rng = np.random.default_rng([seed, variant])
    n, c, h, stride = [(1, 3, 5, 1), (2, 4, 6, 2)][variant]
    x = _t(rng, (n, c, h, h))
    w = _t(rng, (c, 1, 3, 3), 0.5)
    h_out = (h + 2 - 3) // stride + 1
    wts = rng.standard_normal((n, c, h_out, h_out))
    return (lambda: _scalarize(dc.depthwise_conv2d(x, w, stride=stride, padding=1), wts)), [x, w]


def _check_linear(seed: int, variant: int):
    rng = np.random.default_rng([seed, variant])
    shape, d_in, d_out = [((3, 4), 4, 5), ((2, 3, 6), 6, 4)][variant]
    x = _t(rng, shape)
    w = _t(rng, (d_out, d_in), 0.5)
    b = _t(rng, (d_out,), 0.1)
    wts = rng.standard_normal(shape[:-1] + (d_out,))
    return (lambda: _scalarize(dc.linear(x, w, b), wts)), [x, w, b]


def _check_layer_norm(seed: int, variant: int):
    rng = np.random.default_rng([seed, variant])
    shape = [(3, 5), (2, 4, 6)][variant]
    x = _t(rng, shape)
    g = _t(rng, (shape[-1],), 0.5)
    b = _t(rng, (shape[-1],), 0.1)
    wts = rng.standard_normal(shape)
    return (lambda: _scalarize(dc.layer_norm(x, g, b), wts)), [x, g, b]


def _check_batch_norm(seed: int, variant: int):
    rng = np.random.default_rng([seed, variant])
    n, c, h = [(2, 3, 4), (3, 2, 5)][variant]
    x = _t(rng, (n, c, h, h))
    g = _t(rng, (c,), 0.5)
    b = _t(rng, (c,), 0.1)
    rm = np.zeros(c)
    rv = np.ones(c)
    wts = rng.standard_normal((n, c, h, h))
    return (
        lambda: _scalarize(dc.batch_norm(x, g, b, rm, rv, train=True), wts)
    ), [x, g, b]


def _make_activation_check(kind: str):
    def check(seed: int, variant: int):
        rng = np.random.default_rng([seed, variant])
        shape = [(4, 5), (2, 3, 4)][variant]
        raw = rng.standard_normal(shape)
        if kind == "relu":
            raw = np.where(np.abs(raw) < 0.1, raw + 0.5, raw)  # keep clear of the kink
        x = Tensor(raw, requires_grad=True, dtype=np.float64)
        wts = rng.standard_normal(shape)
        return (lambda: _scalarize(dc.activation(kind, x), wts)), [x]

    return check


def _check_softmax(seed: int, variant: int):
    rng = np.random.default_rng([seed, variant])
    shape, axis = [((3, 5), -1), ((2, 4, 3), 1)][variant]
    x = _t(rng, shape)
    wts = rng.standard_normal(shape)
    return (lambda: _scalarize(dc.softmax(x, axis=axis), wts)), [x]


def _check_matmul(seed: int, variant: int):
    rng = np.random.default_rng([seed, variant])
    a_shape, b_shape = [((3, 4), (4, 5)), ((2, 3, 4), (2, 4, 2))][variant]
    a = _t(rng, a_shape)
    b = _t(rng, b_shape)
    out_shape = a_shape[:-1] + (b_shape[-1],)
    wts = rng.standard_normal(out_shape)
    return (lambda: _scalarize(dc.matmul(a, b), wts)), [a, b]


def _check_add_mul_broadcast(seed: int, variant: int):
    rng = np.random.default_rng([seed, variant])
    shape, b_shape = [((3, 4), (1, 4)), ((2, 3, 5), (1, 1, 5))][variant]
    a = _t(rng, shape)
    b = _t(rng, b_shape)
    c = _t(rng, shape)
    wts = rng.standard_normal(shape)
    return (lambda: _scalarize(dc.mul(dc.add(a, b), c), wts)), [a, b, c]


def _check_concat_slice(seed: int, variant: int):
    rng = np.random.default_rng([seed, variant])
    t1, t2 = [(2, 3), (4, 2)][variant]
    a = _t(rng, (2, t1, 4))
    b = _t(rng, (2, t2, 4))
    wts = rng.standard_normal((2, t1 + t2 - 1, 4))

    def fn():
        cat = dc.concat([a, b], axis=1)
        return _scalarize(dc.slice_axis(cat, 1, 1, t1 + t2), wts)

    return fn, [a, b]


def _check_reshape_permute(seed: int, variant: int):
    rng = np.random.default_rng([seed, variant])
    shape = [(2, 3, 4), (3, 2, 2)][variant]
    x = _t(rng, shape)
    total = int(np.prod(shape))
    wts = rng.standard_normal((total,))

    def fn():
        p = dc.transpose_last_two(dc.permute(x, (2, 0, 1)))
        return _scalarize(dc.reshape(p, (total,)), wts)

    return fn, [x]


def _check_reductions(seed: int, variant: int):
    rng = np.random.default_rng([seed, variant])
    n, c, h = [(2, 3, 4), (1, 4, 6)][variant]
    x = _t(rng, (n, c, h, h))
    wts = rng.standard_normal((n, c))

    def fn():
        pooled = dc.global_avg_pool2d(x)
        m = dc.mean(x, axis=(2, 3))
        return _scalarize(dc.add(pooled, m), wts)

    return fn, [x]


def _check_bce(seed: int, variant: int):
    rng = np.random.default_rng([seed, variant])
    n = [6, 10][variant]
    logits = _t(rng, (n,), 1.5)
    labels = Tensor((rng.random(n) < 0.5).astype(np.float64))
    return (lambda: dc.bce_loss(dc.sigmoid(logits), labels)), [logits]


def _check_attention(seed: int, variant: int):
    rng = np.random.default_rng([seed, variant])
    n, tq, tkv, d, heads = [(1, 2, 3, 4, 2), (2, 3, 2, 6, 3)][variant]
    q = _t(rng, (n, tq, d))
    kv = _t(rng, (n, tkv, d))
    params = dc.AttentionParams(
        wq=_t(rng, (d, d), 0.5),
        wk=_t(rng, (d, d), 0.5),
        wv=_t(rng, (d, d), 0.5),
        wo=_t(rng, (d, d), 0.5),
        bq=_t(rng, (d,), 0.1),
        bk=_t(rng, (d,), 0.1),
        bv=_t(rng, (d,), 0.1),
        bo=_t(rng, (d,), 0.1),
    )
    wts = rng.standard_normal((n, tq, d))
    tensors = [q, kv] + params.tensors()
    return (lambda: _scalarize(dc.multi_head_attention(q, kv, params, heads), wts)), tensors


def _check_mbconv(seed: int, variant: int):
    del variant  # one tiny geometry is representative here
    rng = np.random.default_rng(seed)
    cfg = _micro_backbone()
    store = build_backbone(cfg, seed=seed, dtype=np.float64)
    x = _t(rng, (2, 4, 4, 4), 0.5)
    stage = cfg.stages[0]
    wts = rng.standard_normal((2, 8, 2, 2))

    def fn():
        out = mbconv_block(x, store, "backbone.stage0.block0", stage, 4, 8, 2, train=True)
        return _scalarize(out, wts)

    return fn, [x] + store.tensors()


def _check_encoder_block(seed: int, variant: int):
    del variant
    rng = np.random.default_rng(seed)
    cfg = _micro_encoder(dim=4)
    from .backbones import Initializer
    from .models import _register_encoder  # noqa: PLC2701 - internal reuse for verification

    store = ParamStore(dtype=np.float64)
    _register_encoder(store, Initializer(seed, dtype=np.float64), "enc", cfg)
    x = _t(rng, (2, 3, 4))
    wts = rng.standard_normal((2, 3, 4))
    return (lambda: _scalarize(encoder_forward(x, store, "enc", cfg), wts)), [x] + store.tensors()


def _tiny_efficient_vit() -> EfficientViTConfig:
    return EfficientViTConfig(image_size=16, backbone=_micro_backbone(), patch_cells=1, encoder=_micro_encoder())


def _tiny_cross_vit() -> CrossViTConfig:
    s_backbone = _micro_backbone()
    l_backbone = BackboneConfig(
        kind="mbconv",
        stem=StemConfig(out_channels=4, kernel=3, stride=2),
        stages=[
            StageConfig(expand_ratio=2, out_channels=6, kernel=3, stride=2, repeats=1, use_se=True),
            StageConfig(expand_ratio=2, out_channels=8, kernel=3, stride=2, repeats=1, use_se=False),
        ],
    )
    return CrossViTConfig(
        image_size=16,
        s_branch=BranchConfig(backbone=s_backbone, patch_cells=1, encoder=_micro_encoder(8)),
        l_branch=BranchConfig(backbone=l_backbone, patch_cells=1, encoder=_micro_encoder(8)),
        fusion_rounds=1,
    )


def _check_efficient_vit(seed: int, variant: int):
    del variant
    rng = np.random.default_rng(seed)
    model = EfficientViT(_tiny_efficient_vit(), seed=seed, dtype=np.float64)
    images = Tensor(rng.standard_normal((2, 3, 16, 16)) * 0.5, dtype=np.float64)
    labels = Tensor((rng.random(2) < 0.5).astype(np.float64))
    return (lambda: dc.bce_loss(model.forward(images, train=True), labels)), model.parameters()


def _check_cross_vit(seed: int, variant: int):
    del variant
    rng = np.random.default_rng(seed)
    model = ConvCrossViT(_tiny_cross_vit(), seed=seed, dtype=np.float64)
    images = Tensor(rng.standard_normal((2, 3, 16, 16)) * 0.5, dtype=np.float64)
    labels = Tensor((rng.random(2) < 0.5).astype(np.float64))

    def fn():
        probs, _ls, _ll = model.forward(images, train=True)
        return dc.bce_loss(probs, labels)

    return fn, model.parameters()


_OP_CHECKS: dict[str, Callable] = {
    "conv2d": _check_conv2d,
    "depthwise_conv2d": _check_depthwise,
    "linear": _check_linear,
    "layer_norm": _check_layer_norm,
    "batch_norm": _check_batch_norm,
    "sigmoid": _make_activation_check("sigmoid"),
    "relu": _make_activation_check("relu"),
    "silu": _make_activation_check("silu"),
    "gelu": _make_activation_check("gelu"),
    "softmax": _check_softmax,
    "matmul": _check_matmul,
    "add_mul_broadcast": _check_add_mul_broadcast,
    "concat_slice": _check_concat_slice,
    "reshape_permute": _check_reshape_permute,
    "reductions": _check_reductions,
    "bce_loss": _check_bce,
    "multi_head_attention": _check_attention,
    "mbconv_block": _check_mbconv,
    "encoder_block": _check_encoder_block,
}

_E2E_CHECKS: dict[str, Callable] = {
    "efficient_vit_e2e": _check_efficient_vit,
    "conv_cross_vit_e2e": _check_cross_vit,
}


def run_gradcheck_suite(profile: str = "tiny", corrupt: str | None = None) -> list[CheckResult]:
    """Run every check; ``corrupt`` is a test hook that tampers with the
    named check's analytic gradients so harness failures are provable."""
    if profile == "tiny":
        seeds, variants, e2e_seeds = range(5), (0, 1), (0,)
    elif profile == "full":
        seeds, variants, e2e_seeds = range(8), (0, 1), (0, 1)
    else:
        raise InputError(f"unknown gradcheck profile {profile!r}")
    results: list[CheckResult] = []
    for name, builder in _OP_CHECKS.items():
        tamper = (lambda _n, g: g * 1.05 + 0.01) if corrupt == name else None
        start = time.perf_counter()
        worst = 0.0
        for seed in seeds:
            for variant in variants:
                fn, params = builder(seed, variant)
                worst = max(worst, grad_check(fn, params, epsilon=EPSILON, tamper=tamper))
        elapsed = time.perf_counter() - start
        results.append(CheckResult(name, worst, OP_TOLERANCE, worst < OP_TOLERANCE, elapsed))
    for name, builder in _E2E_CHECKS.items():
        tamper = (lambda _n, g: g * 1.05 + 0.01) if corrupt == name else None
        start = time.perf_counter()
        worst = 0.0
        for seed in e2e_seeds:
            fn, params = builder(seed, 0)
            worst = max(worst, grad_check(fn, params, epsilon=EPSILON, tamper=tamper))
        elapsed = time.perf_counter() - start
        results.append(CheckResult(name, worst, E2E_TOLERANCE, worst < E2E_TOLERANCE, elapsed))
    return results
