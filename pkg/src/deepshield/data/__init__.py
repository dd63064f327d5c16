"""Manifest ingestion, augmentation, batching, and the synthetic corpus."""

from .augment import augment, derive_item_seed
from .batches import ImageCache, make_batches, prepare_record_image, standardize
from .imaging import box_blur, image_dimensions, load_rgb, resize_bilinear, rotate90, save_rgb
from .manifest import (
    FaceRecord,
    Manifest,
    load_manifest,
    load_video_labels,
    write_manifest,
    write_video_labels,
)
from .synth import (
    ActorStyle,
    ArtifactParams,
    CorpusSummary,
    apply_artifact,
    generate_corpus,
    render_face,
    sample_actor_style,
    sample_artifact_params,
    synthesize_corpus,
)

__all__ = [
    "ActorStyle",
    "ArtifactParams",
    "CorpusSummary",
    "FaceRecord",
    "ImageCache",
    "Manifest",
    "apply_artifact",
    "augment",
    "box_blur",
    "derive_item_seed",
    "generate_corpus",
    "image_dimensions",
    "load_manifest",
    "load_rgb",
    "load_video_labels",
    "make_batches",
    "prepare_record_image",
    "render_face",
    "resize_bilinear",
    "rotate90",
    "sample_actor_style",
    "sample_artifact_params",
    "save_rgb",
    "standardize",
    "synthesize_corpus",
    "write_manifest",
    "write_video_labels",
]
