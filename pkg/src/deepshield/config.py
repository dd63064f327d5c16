"""Configuration models for backbones, models, data, training, and runs.

All models reject unknown keys so config-file typos fail loudly. The desk
profiles below are sized to train on a synthetic corpus in minutes on one
core; the paper-approx profiles mirror production-scale geometry (224px
input, 7x7 token grid) and exist for shape checks, not for training here.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

ArtifactKind = Literal["blend_boundary", "checkerboard", "local_blur", "warp_patch"]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class StemConfig(StrictModel):
    out_channels: int = Field(gt=0)
    kernel: int = Field(default=3, gt=0)
    stride: int = Field(default=2, gt=0)


class StageConfig(StrictModel):
    expand_ratio: int = Field(default=1, ge=1)
    out_channels: int = Field(gt=0)
    kernel: int = Field(default=3, gt=0)
    stride: int = Field(default=1, gt=0)
    repeats: int = Field(default=1, ge=1)
    use_se: bool = False


class BackboneConfig(StrictModel):
    kind: Literal["mbconv", "plain"] = "mbconv"
    stem: StemConfig
    stages: list[StageConfig]

    @model_validator(mode="after")
    def _check_kind(self) -> "BackboneConfig":
        if self.kind == "plain":
            for i, stage in enumerate(self.stages):
                if stage.expand_ratio != 1:
                    raise ValueError(f"stages[{i}].expand_ratio must be 1 for plain backbones")
                if stage.use_se:
                    raise ValueError(f"stages[{i}].use_se is not allowed for plain backbones")
        return self

    @property
    def token_stride(self) -> int:
        stride = self.stem.stride
        for stage in self.stages:
            stride *= stage.stride
        return stride

    @property
    def out_channels(self) -> int:
        return self.stages[-1].out_channels if self.stages else self.stem.out_channels


class EncoderConfig(StrictModel):
    depth: int = Field(ge=0)
    dim: int = Field(gt=0)
    heads: int = Field(default=4, gt=0)
    mlp_ratio: int = Field(default=2, ge=1)
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_heads(self) -> "EncoderConfig":
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        return self


class BranchConfig(StrictModel):
    backbone: BackboneConfig
    patch_cells: int = Field(default=1, gt=0)
    encoder: EncoderConfig

    @property
    def pixel_footprint(self) -> int:
        return self.backbone.token_stride * self.patch_cells


class EfficientViTConfig(StrictModel):
    image_size: int = Field(gt=0)
    backbone: BackboneConfig
    patch_cells: int = Field(default=1, gt=0)
    encoder: EncoderConfig

    @model_validator(mode="after")
    def _check_geometry(self) -> "EfficientViTConfig":
        _check_token_geometry(self.image_size, self.backbone, self.patch_cells)
        return self

    @property
    def tokens_per_side(self) -> int:
        return self.image_size // (self.backbone.token_stride * self.patch_cells)


class CrossViTConfig(StrictModel):
    image_size: int = Field(gt=0)
    s_branch: BranchConfig
    l_branch: BranchConfig
    fusion_rounds: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check_geometry(self) -> "CrossViTConfig":
        for name, branch in (("s_branch", self.s_branch), ("l_branch", self.l_branch)):
            try:
                _check_token_geometry(self.image_size, branch.backbone, branch.patch_cells)
            except ValueError as exc:
                raise ValueError(f"{name}: {exc}") from None
        if self.s_branch.pixel_footprint >= self.l_branch.pixel_footprint:
            raise ValueError(
                f"S-branch footprint {self.s_branch.pixel_footprint} must be smaller "
                f"than L-branch footprint {self.l_branch.pixel_footprint}"
            )
        return self


def _check_token_geometry(image_size: int, backbone: BackboneConfig, patch_cells: int) -> None:
    stride = backbone.token_stride
    if image_size % stride != 0:
        raise ValueError(f"token stride {stride} does not divide image size {image_size}")
    grid = image_size // stride
    if grid % patch_cells != 0:
        raise ValueError(f"patch_cells {patch_cells} does not divide feature grid {grid}")


class TransformProb(StrictModel):
    p: float = Field(default=0.0, ge=0.0, le=1.0)


class BlurConfig(TransformProb):
    kernel_sizes: list[int] = Field(default_factory=lambda: [3, 5])


class NoiseConfig(TransformProb):
    sigma_range: tuple[float, float] = (0.01, 0.05)


class RotationConfig(TransformProb):
    right_angles: list[int] = Field(default_factory=lambda: [90, 180, 270])
    small_angle_max: float = 15.0


class ResizeConfig(TransformProb):
    scale_range: tuple[float, float] = (0.8, 1.2)


class AugmentConfig(StrictModel):
    blur: BlurConfig = Field(default_factory=lambda: BlurConfig(p=0.2))
    gaussian_noise: NoiseConfig = Field(default_factory=lambda: NoiseConfig(p=0.2))
    transpose: TransformProb = Field(default_factory=lambda: TransformProb(p=0.1))
    rotation: RotationConfig = Field(default_factory=lambda: RotationConfig(p=0.2))
    isotropic_resize: ResizeConfig = Field(default_factory=lambda: ResizeConfig(p=0.2))
    final_size: int = Field(default=64, gt=0)


class SynthConfig(StrictModel):
    n_videos: int = Field(gt=0)
    frames_per_video: int = Field(default=10, gt=0)
    actors_per_video: tuple[int, int] = (1, 2)
    fake_fraction: float = Field(default=0.5, ge=0.0, le=1.0)
    artifact_kinds: list[ArtifactKind] = Field(
        default_factory=lambda: ["blend_boundary", "checkerboard", "local_blur", "warp_patch"]
    )
    image_size: int = Field(default=64, gt=0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_actors(self) -> "SynthConfig":
        lo, hi = self.actors_per_video
        if lo < 1 or hi < lo:
            raise ValueError(f"actors_per_video range {self.actors_per_video} invalid")
        if not self.artifact_kinds:
            raise ValueError("artifact_kinds must not be empty")
        return self


class SynthSection(StrictModel):
    train: Optional[SynthConfig] = None
    val: Optional[SynthConfig] = None
    test: Optional[SynthConfig] = None

    @model_validator(mode="after")
    def _check_any(self) -> "SynthSection":
        if self.train is None and self.val is None and self.test is None:
            raise ValueError("synth section must define at least one split")
        return self

    def splits(self) -> list[tuple[str, SynthConfig]]:
        return [(name, cfg) for name, cfg in (("train", self.train), ("val", self.val), ("test", self.test)) if cfg]


class InferenceConfig(StrictModel):
    threshold: float = Field(default=0.55, gt=0.0, lt=1.0)
    max_faces: int = Field(default=30, ge=1)
    rule: Literal["voting", "average"] = "voting"


class TrainingConfig(StrictModel):
    epochs: int = Field(default=10, gt=0)
    batch_size: int = Field(default=32, gt=0)
    learning_rate: float = Field(default=0.01, gt=0.0)
    momentum: float = Field(default=0.0, ge=0.0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    seed: int = 0


class DataConfig(StrictModel):
    pixel_mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    pixel_std: tuple[float, float, float] = (0.5, 0.5, 0.5)

    @model_validator(mode="after")
    def _check_std(self) -> "DataConfig":
        if any(s <= 0 for s in self.pixel_std):
            raise ValueError("pixel_std entries must be positive")
        return self


class PathsConfig(StrictModel):
    train_manifest: Optional[str] = None
    val_manifest: Optional[str] = None
    test_manifest: Optional[str] = None
    checkpoint_dir: Optional[str] = None
    out_dir: Optional[str] = None


class RunConfig(StrictModel):
    model: Literal["efficient_vit", "conv_cross_vit"] = "efficient_vit"
    efficient_vit: Optional[EfficientViTConfig] = None
    cross_vit: Optional[CrossViTConfig] = None
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    augment: Optional[AugmentConfig] = None
    synth: Optional[SynthSection] = None
    inference: InferenceConfig = Field(default_factory=InferenceConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    @model_validator(mode="after")
    def _check_model_section(self) -> "RunConfig":
        if self.model == "efficient_vit" and self.efficient_vit is None:
            raise ValueError("model 'efficient_vit' requires an 'efficient_vit' section")
        if self.model == "conv_cross_vit" and self.cross_vit is None:
            raise ValueError("model 'conv_cross_vit' requires a 'cross_vit' section")
        return self

    @property
    def model_section(self) -> EfficientViTConfig | CrossViTConfig:
        return self.efficient_vit if self.model == "efficient_vit" else self.cross_vit

    @property
    def image_size(self) -> int:
        return self.model_section.image_size


def parse_run_config(payload: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(payload)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ConfigError(f"invalid config at '{loc}': {first['msg']}") from None


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return parse_run_config(payload)


def resolved_config_json(config: RunConfig) -> str:
    """Canonical serialization written next to every run's outputs."""
    return json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# profiles


def desk_backbone_stride8(channels: tuple[int, int, int] = (16, 24, 32)) -> BackboneConfig:
    """Three stride-2 reductions: 64px input -> 8x8 feature grid."""
    stem, mid, out = channels
    return BackboneConfig(
        kind="mbconv",
        stem=StemConfig(out_channels=stem, kernel=3, stride=2),
        stages=[
            StageConfig(expand_ratio=2, out_channels=mid, kernel=3, stride=2, repeats=1, use_se=True),
            StageConfig(expand_ratio=2, out_channels=out, kernel=3, stride=2, repeats=1, use_se=True),
        ],
    )


def desk_backbone_stride32() -> BackboneConfig:
    """Five stride-2 reductions: 64px input -> 2x2 feature grid."""
    return BackboneConfig(
        kind="mbconv",
        stem=StemConfig(out_channels=16, kernel=3, stride=2),
        stages=[
            StageConfig(expand_ratio=2, out_channels=24, kernel=3, stride=2, repeats=1, use_se=True),
            StageConfig(expand_ratio=2, out_channels=32, kernel=3, stride=2, repeats=1, use_se=True),
            StageConfig(expand_ratio=2, out_channels=48, kernel=3, stride=2, repeats=1, use_se=True),
            StageConfig(expand_ratio=2, out_channels=64, kernel=3, stride=2, repeats=1, use_se=True),
        ],
    )


def desk_plain_backbone_stride8() -> BackboneConfig:
    return BackboneConfig(
        kind="plain",
        stem=StemConfig(out_channels=16, kernel=3, stride=2),
        stages=[
            StageConfig(out_channels=24, kernel=3, stride=2),
            StageConfig(out_channels=32, kernel=3, stride=2),
        ],
    )


def desk_efficient_vit(image_size: int = 64) -> EfficientViTConfig:
    return EfficientViTConfig(
        image_size=image_size,
        backbone=desk_backbone_stride8(),
        patch_cells=1,
        encoder=EncoderConfig(depth=2, dim=64, heads=4, mlp_ratio=2),
    )


def desk_cross_vit(image_size: int = 64) -> CrossViTConfig:
    """S branch on 8px tokens, L branch on 32px tokens."""
    return CrossViTConfig(
        image_size=image_size,
        s_branch=BranchConfig(
            backbone=desk_backbone_stride8(),
            patch_cells=1,
            encoder=EncoderConfig(depth=2, dim=64, heads=4, mlp_ratio=2),
        ),
        l_branch=BranchConfig(
            backbone=desk_backbone_stride32(),
            patch_cells=1,
            encoder=EncoderConfig(depth=2, dim=128, heads=4, mlp_ratio=2),
        ),
        fusion_rounds=1,
    )


def paper_approx_backbone_stride32() -> BackboneConfig:
    """EfficientNet-B0-like stage layout truncated at total stride 32.

    At 224px input this yields a 7x7 feature grid (49 tokens). Channel
    schedule follows B0; repeats are kept so geometry matches.
    """
    return BackboneConfig(
        kind="mbconv",
        stem=StemConfig(out_channels=32, kernel=3, stride=2),
        stages=[
            StageConfig(expand_ratio=1, out_channels=16, kernel=3, stride=1, repeats=1, use_se=True),
            StageConfig(expand_ratio=6, out_channels=24, kernel=3, stride=2, repeats=2, use_se=True),
            StageConfig(expand_ratio=6, out_channels=40, kernel=5, stride=2, repeats=2, use_se=True),
            StageConfig(expand_ratio=6, out_channels=80, kernel=3, stride=2, repeats=3, use_se=True),
            StageConfig(expand_ratio=6, out_channels=112, kernel=5, stride=1, repeats=3, use_se=True),
            StageConfig(expand_ratio=6, out_channels=192, kernel=5, stride=2, repeats=4, use_se=True),
        ],
    )


def paper_approx_backbone_stride8() -> BackboneConfig:
    """B0 layout truncated at stride 8; basis for the 56px L-branch footprint."""
    return BackboneConfig(
        kind="mbconv",
        stem=StemConfig(out_channels=32, kernel=3, stride=2),
        stages=[
            StageConfig(expand_ratio=1, out_channels=16, kernel=3, stride=1, repeats=1, use_se=True),
            StageConfig(expand_ratio=6, out_channels=24, kernel=3, stride=2, repeats=2, use_se=True),
            StageConfig(expand_ratio=6, out_channels=40, kernel=5, stride=2, repeats=2, use_se=True),
        ],
    )


def paper_approx_efficient_vit() -> EfficientViTConfig:
    return EfficientViTConfig(
        image_size=224,
        backbone=paper_approx_backbone_stride32(),
        patch_cells=1,
        encoder=EncoderConfig(depth=6, dim=256, heads=8, mlp_ratio=4),
    )


def paper_approx_cross_vit() -> CrossViTConfig:
    """Footprints 32 (S) and 56 (L) at 224px input.

    The 54px L patches quoted for the production model do not divide 224;
    56 = 8 * 7 is the closest multiple expressible as stride * patch_cells.
    """
    return CrossViTConfig(
        image_size=224,
        s_branch=BranchConfig(
            backbone=paper_approx_backbone_stride32(),
            patch_cells=1,
            encoder=EncoderConfig(depth=4, dim=256, heads=8, mlp_ratio=4),
        ),
        l_branch=BranchConfig(
            backbone=paper_approx_backbone_stride8(),
            patch_cells=7,
            encoder=EncoderConfig(depth=4, dim=256, heads=8, mlp_ratio=4),
        ),
        fusion_rounds=1,
    )


def desk_run_config(model: str = "efficient_vit", image_size: int = 64) -> RunConfig:
    cfg = RunConfig(
        model=model,  # type: ignore[arg-type]
        efficient_vit=desk_efficient_vit(image_size) if model == "efficient_vit" else None,
        cross_vit=desk_cross_vit(image_size) if model == "conv_cross_vit" else None,
        augment=AugmentConfig(final_size=image_size),
    )
    return cfg
