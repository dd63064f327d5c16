"""Transformer encoders and the two detector assemblies.

``EfficientViT`` runs one backbone, tokenizes its feature map, prepends a
learned CLS token, adds positional embeddings, applies pre-norm encoder
blocks, and classifies from the CLS row. ``ConvCrossViT`` runs two such
branches at different token footprints, exchanges information by letting
each branch's CLS attend across to the other branch's patch tokens, then
sums the two head logits before a single sigmoid.
"""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .backbones import (
    FeatureMap,
    Initializer,
    ParamStore,
    TokenGrid,
    extract_features,
    register_backbone,
    register_linear,
    tokenize,
)
from .config import BranchConfig, CrossViTConfig, EfficientViTConfig, EncoderConfig
from .errors import ConfigError, InputError

LN_EPS = 1e-5


def _register_layer_norm(store: ParamStore, init: Initializer, name: str, dim: int) -> None:
    store.add_param(f"{name}.scale", init.ones((dim,)))
    store.add_param(f"{name}.shift", init.zeros((dim,)))


def _register_attention(store: ParamStore, init: Initializer, name: str, dim: int) -> None:
    for proj in ("wq", "wk", "wv", "wo"):
        register_linear(store, init, f"{name}.{proj}", dim, dim)


def _register_encoder(store: ParamStore, init: Initializer, prefix: str, cfg: EncoderConfig) -> None:
    hidden = cfg.dim * cfg.mlp_ratio
    for i in range(cfg.depth):
        base = f"{prefix}.layer{i}"
        _register_layer_norm(store, init, f"{base}.ln1", cfg.dim)
        _register_attention(store, init, f"{base}.attn", cfg.dim)
        _register_layer_norm(store, init, f"{base}.ln2", cfg.dim)
        register_linear(store, init, f"{base}.mlp.fc1", hidden, cfg.dim)
        register_linear(store, init, f"{base}.mlp.fc2", cfg.dim, hidden)


def _attention_params(store: ParamStore, name: str) -> dc.AttentionParams:
    return dc.AttentionParams(
        wq=store[f"{name}.wq.weight"],
        wk=store[f"{name}.wk.weight"],
        wv=store[f"{name}.wv.weight"],
        wo=store[f"{name}.wo.weight"],
        bq=store[f"{name}.wq.bias"],
        bk=store[f"{name}.wk.bias"],
        bv=store[f"{name}.wv.bias"],
        bo=store[f"{name}.wo.bias"],
    )


def _layer_norm(store: ParamStore, name: str, x: dc.Tensor) -> dc.Tensor:
    return dc.layer_norm(x, store[f"{name}.scale"], store[f"{name}.shift"], eps=LN_EPS)


def encoder_forward(
    tokens: dc.Tensor,
    store: ParamStore,
    prefix: str,
    cfg: EncoderConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> dc.Tensor:
    """Stack of pre-norm blocks: LN -> self-attention -> residual, LN -> MLP -> residual."""
    if tokens.shape[-1] != cfg.dim:
        raise ConfigError(f"encoder built for width {cfg.dim}, got tokens of width {tokens.shape[-1]}")
    use_dropout = train and cfg.dropout > 0.0
    if use_dropout and rng is None:
        raise ConfigError("dropout requires an rng in training mode")
    x = tokens
    for i in range(cfg.depth):
        base = f"{prefix}.layer{i}"
        h = _layer_norm(store, f"{base}.ln1", x)
        attn = dc.multi_head_attention(h, h, _attention_params(store, f"{base}.attn"), cfg.heads)
        if use_dropout:
            attn = dc.dropout(attn, cfg.dropout, rng)
        x = dc.add(x, attn)
        h = _layer_norm(store, f"{base}.ln2", x)
        m = dc.linear(h, store[f"{base}.mlp.fc1.weight"], store[f"{base}.mlp.fc1.bias"])
        m = dc.gelu(m)
        m = dc.linear(m, store[f"{base}.mlp.fc2.weight"], store[f"{base}.mlp.fc2.bias"])
        if use_dropout:
            m = dc.dropout(m, cfg.dropout, rng)
        x = dc.add(x, m)
    return x


def prepend_cls_add_pos(grid: TokenGrid, cls: dc.Tensor, pos: dc.Tensor) -> dc.Tensor:
    """Prepend the broadcast CLS token and add positional embeddings."""
    n, t, d = grid.tokens.shape
    if pos.shape != (1, t + 1, d):
        raise ConfigError(f"positional embedding shape {pos.shape} incompatible with {t} tokens of width {d}")
    if cls.shape != (1, 1, d):
        raise ConfigError(f"cls token shape {cls.shape} != (1, 1, {d})")
    cls_b = dc.broadcast_to(cls, (n, 1, d))
    seq = dc.concat([cls_b, grid.tokens], axis=1)
    return dc.add(seq, pos)


# ---------------------------------------------------------------------------
# branch plumbing shared by both assemblies


def _register_branch(store: ParamStore, init: Initializer, prefix: str, branch: BranchConfig, image_size: int) -> None:
    bb = branch.backbone
    register_backbone(store, init, f"{prefix}.backbone", bb)
    grid_side = image_size // (bb.token_stride * branch.patch_cells)
    t = grid_side * grid_side
    token_in = bb.out_channels * branch.patch_cells * branch.patch_cells
    register_linear(store, init, f"{prefix}.proj", branch.encoder.dim, token_in)
    store.add_param(f"{prefix}.cls", init.normal((1, 1, branch.encoder.dim)))
    store.add_param(f"{prefix}.pos", init.normal((1, t + 1, branch.encoder.dim)))
    _register_encoder(store, init, f"{prefix}.encoder", branch.encoder)
    _register_layer_norm(store, init, f"{prefix}.final_ln", branch.encoder.dim)


def _branch_tokens(
    images: dc.Tensor,
    store: ParamStore,
    prefix: str,
    branch: BranchConfig,
    train: bool,
    rng: np.random.Generator | None,
) -> dc.Tensor:
    fm = extract_features(images, store, branch.backbone, prefix=f"{prefix}.backbone", train=train)
    grid = tokenize(fm, branch.patch_cells, store[f"{prefix}.proj.weight"], store[f"{prefix}.proj.bias"])
    seq = prepend_cls_add_pos(grid, store[f"{prefix}.cls"], store[f"{prefix}.pos"])
    return encoder_forward(seq, store, f"{prefix}.encoder", branch.encoder, train=train, rng=rng)


def _head_logit(store: ParamStore, prefix: str, tokens: dc.Tensor) -> dc.Tensor:
    cls_row = dc.slice_axis(tokens, 1, 0, 1)  # (N, 1, D)
    cls_row = _layer_norm(store, f"{prefix}.final_ln", cls_row)
    logit = dc.linear(cls_row, store[f"{prefix}.head.weight"], store[f"{prefix}.head.bias"])
    return dc.reshape(logit, (tokens.shape[0],))


def _check_image_batch(images: dc.Tensor, image_size: int) -> None:
    if images.ndim != 4 or images.shape[1] != 3:
        raise InputError(f"expected (N, 3, H, W) images, got shape {images.shape}")
    if images.shape[2] != image_size or images.shape[3] != image_size:
        raise InputError(
            f"model was built for {image_size}x{image_size} input (fixed token count), got {images.shape[2]}x{images.shape[3]}"
        )


class EfficientViT:
    """Single-branch detector: backbone tokens -> encoder -> CLS head -> sigmoid."""

    kind = "efficient_vit"

    def __init__(self, config: EfficientViTConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.store = ParamStore(dtype=dtype)
        init = Initializer(seed, dtype=dtype)
        branch = BranchConfig(backbone=config.backbone, patch_cells=config.patch_cells, encoder=config.encoder)
        self._branch = branch
        _register_branch(self.store, init, "net", branch, config.image_size)
        register_linear(self.store, init, "net.head", 1, config.encoder.dim)

    def parameters(self) -> list[dc.Tensor]:
        return self.store.tensors()

    def forward(self, images: dc.Tensor, train: bool = False, rng: np.random.Generator | None = None) -> dc.Tensor:
        _check_image_batch(images, self.config.image_size)
        tokens = _branch_tokens(images, self.store, "net", self._branch, train, rng)
        logit = _head_logit(self.store, "net", tokens)
        return dc.sigmoid(logit)


class ConvCrossViT:
    """Two-branch detector with CLS-as-query cross-attention fusion.

    The final probability is sigmoid(logit_S + logit_L); both logits are
    exposed so the decomposition can be audited.
    """

    kind = "conv_cross_vit"

    def __init__(self, config: CrossViTConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.store = ParamStore(dtype=dtype)
        init = Initializer(seed, dtype=dtype)
        _register_branch(self.store, init, "s", config.s_branch, config.image_size)
        _register_branch(self.store, init, "l", config.l_branch, config.image_size)
        dim_s = config.s_branch.encoder.dim
        dim_l = config.l_branch.encoder.dim
        for r in range(config.fusion_rounds):
            base = f"fusion.round{r}"
            register_linear(self.store, init, f"{base}.s2l.proj_in", dim_l, dim_s)
            _register_attention(self.store, init, f"{base}.s2l.attn", dim_l)
            register_linear(self.store, init, f"{base}.s2l.proj_out", dim_s, dim_l)
            register_linear(self.store, init, f"{base}.l2s.proj_in", dim_s, dim_l)
            _register_attention(self.store, init, f"{base}.l2s.attn", dim_s)
            register_linear(self.store, init, f"{base}.l2s.proj_out", dim_l, dim_s)
        register_linear(self.store, init, "s.head", 1, dim_s)
        register_linear(self.store, init, "l.head", 1, dim_l)

    def parameters(self) -> list[dc.Tensor]:
        return self.store.tensors()

    def _fuse_direction(self, cls_a: dc.Tensor, patches_b: dc.Tensor, base: str, heads_b: int) -> dc.Tensor:
        """Update branch A's CLS by attending over branch B's patch tokens."""
        store = self.store
        q = dc.linear(cls_a, store[f"{base}.proj_in.weight"], store[f"{base}.proj_in.bias"])
        kv = dc.concat([q, patches_b], axis=1)
        ctx = dc.multi_head_attention(q, kv, _attention_params(store, f"{base}.attn"), heads_b)
        back = dc.linear(ctx, store[f"{base}.proj_out.weight"], store[f"{base}.proj_out.bias"])
        return dc.add(cls_a, back)

    def cross_fusion(self, tokens_s: dc.Tensor, tokens_l: dc.Tensor) -> tuple[dc.Tensor, dc.Tensor]:
        """Exchange CLS information between branches; patch rows pass through untouched."""
        heads_s = self.config.s_branch.encoder.heads
        heads_l = self.config.l_branch.encoder.heads
        for r in range(self.config.fusion_rounds):
            cls_s = dc.slice_axis(tokens_s, 1, 0, 1)
            patches_s = dc.slice_axis(tokens_s, 1, 1, tokens_s.shape[1])
            cls_l = dc.slice_axis(tokens_l, 1, 0, 1)
            patches_l = dc.slice_axis(tokens_l, 1, 1, tokens_l.shape[1])
            new_cls_s = self._fuse_direction(cls_s, patches_l, f"fusion.round{r}.s2l", heads_l)
            new_cls_l = self._fuse_direction(cls_l, patches_s, f"fusion.round{r}.l2s", heads_s)
            tokens_s = dc.concat([new_cls_s, patches_s], axis=1)
            tokens_l = dc.concat([new_cls_l, patches_l], axis=1)
        return tokens_s, tokens_l

    def forward(
        self, images: dc.Tensor, train: bool = False, rng: np.random.Generator | None = None
    ) -> tuple[dc.Tensor, dc.Tensor, dc.Tensor]:
        _check_image_batch(images, self.config.image_size)
        tokens_s = _branch_tokens(images, self.store, "s", self.config.s_branch, train, rng)
        tokens_l = _branch_tokens(images, self.store, "l", self.config.l_branch, train, rng)
        tokens_s, tokens_l = self.cross_fusion(tokens_s, tokens_l)
        logit_s = _head_logit(self.store, "s", tokens_s)
        logit_l = _head_logit(self.store, "l", tokens_l)
        probs = dc.sigmoid(dc.add(logit_s, logit_l))
        return probs, logit_s, logit_l


Model = EfficientViT | ConvCrossViT


def build_model(kind: str, config, seed: int = 0, dtype=np.float32) -> Model:
    if kind == "efficient_vit":
        return EfficientViT(config, seed=seed, dtype=dtype)
    if kind == "conv_cross_vit":
        return ConvCrossViT(config, seed=seed, dtype=dtype)
    raise ConfigError(f"unknown model kind {kind!r}")


def model_probs(model: Model, images: dc.Tensor, train: bool = False, rng=None) -> dc.Tensor:
    """Uniform probability accessor across both assemblies."""
    out = model.forward(images, train=train, rng=rng)
    return out[0] if isinstance(out, tuple) else out


def efficient_vit_forward(images: dc.Tensor, model: EfficientViT, train: bool = False) -> dc.Tensor:
    return model.forward(images, train=train)


def conv_cross_vit_forward(images: dc.Tensor, model: ConvCrossViT, train: bool = False):
    return model.forward(images, train=train)
