"""Deterministic synthetic face-crop corpus with injected manipulation artifacts.

Each actor gets a stable rendered identity (layered ellipses over a gradient
background with mild texture); frames jitter position, brightness, and grain.
Manipulated tracks carry one artifact kind applied consistently across their
frames: a blend seam with a channel shift, a high-frequency checkerboard
patch, a locally blurred patch, or a sinusoidally warped patch. Artifacts are
built to be (approximately) mean-neutral so a global pixel-mean threshold
cannot separate the classes, while remaining visually obvious to a small
convolutional model.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..config import SynthConfig
from ..errors import InputError
from .imaging import box_blur, save_rgb
from .manifest import FaceRecord, Manifest, write_manifest, write_video_labels


@dataclass
class ActorStyle:
    """Per-actor rendering parameters, fixed across the actor's frames."""

    skin: np.ndarray
    hair: np.ndarray
    bg_a: np.ndarray
    bg_b: np.ndarray
    bg_angle: float
    center: tuple[float, float]
    radii: tuple[float, float]
    eye_dx: float
    eye_dy: float
    eye_r: float
    mouth_w: float
    texture_freq: tuple[float, float]


@dataclass
class ArtifactParams:
    """Placement and strength of one manipulation, fixed per actor track."""

    kind: str
    cx: float  # region center, fraction of image side
    cy: float
    half: float  # half side of the square patch, fraction
    amplitude: float
    wavelength: float
    phase: float

    def bbox(self, size: int) -> tuple[int, int, int, int]:
        x0 = int(max(0, (self.cx - self.half) * size))
        x1 = int(min(size, (self.cx + self.half) * size))
        y0 = int(max(0, (self.cy - self.half) * size))
        y1 = int(min(size, (self.cy + self.half) * size))
        return y0, y1, x0, x1


def sample_actor_style(rng: np.random.Generator) -> ActorStyle:
    def color(lo, hi):
        return rng.uniform(lo, hi, size=3).astype(np.float32)

    return ActorStyle(
        skin=color(0.45, 0.85),
        hair=color(0.05, 0.45),
        bg_a=color(0.2, 0.8),
        bg_b=color(0.2, 0.8),
        bg_angle=float(rng.uniform(0, 2 * np.pi)),
        center=(float(rng.uniform(0.44, 0.56)), float(rng.uniform(0.44, 0.56))),
        radii=(float(rng.uniform(0.26, 0.34)), float(rng.uniform(0.34, 0.42))),
        eye_dx=float(rng.uniform(0.10, 0.14)),
        eye_dy=float(rng.uniform(0.06, 0.10)),
        eye_r=float(rng.uniform(0.028, 0.042)),
        mouth_w=float(rng.uniform(0.06, 0.10)),
        texture_freq=(float(rng.uniform(2.0, 5.0)), float(rng.uniform(2.0, 5.0))),
    )


def sample_artifact_params(rng: np.random.Generator, kind: str) -> ArtifactParams:
    return ArtifactParams(
        kind=kind,
        cx=float(rng.uniform(0.42, 0.58)),
        cy=float(rng.uniform(0.42, 0.58)),
        half=float(rng.uniform(0.20, 0.28)),
        amplitude=float(rng.uniform(0.18, 0.26)),
        wavelength=float(rng.uniform(3.5, 6.5)),
        phase=float(rng.uniform(0, 2 * np.pi)),
    )


def render_face(style: ActorStyle, size: int, frame_rng: np.random.Generator) -> np.ndarray:
    """One (size, size, 3) float frame of the actor, with per-frame jitter."""
    ax = np.linspace(0.0, 1.0, size, dtype=np.float32)
    xx, yy = np.meshgrid(ax, ax)  # yy rows, xx cols

    jitter_x = float(frame_rng.uniform(-0.015, 0.015))
    jitter_y = float(frame_rng.uniform(-0.015, 0.015))
    brightness = float(frame_rng.uniform(0.95, 1.05))
    phase = float(frame_rng.uniform(0, 2 * np.pi))

    ca, sa = np.cos(style.bg_angle), np.sin(style.bg_angle)
    ramp = (ca * xx + sa * yy - min(0.0, ca) - min(0.0, sa)) / (abs(ca) + abs(sa) + 1e-6)
    img = style.bg_a[None, None, :] + (style.bg_b - style.bg_a)[None, None, :] * ramp[:, :, None]
    fx, fy = style.texture_freq
    img += 0.02 * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)[:, :, None]

    cx = style.center[0] + jitter_x
    cy = style.center[1] + jitter_y
    rx, ry = style.radii
    d = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)

    hair_mask = np.clip((1.25 - d) * 10.0, 0.0, 1.0) * (yy < cy - 0.05)
    img = img * (1 - hair_mask[:, :, None]) + style.hair[None, None, :] * hair_mask[:, :, None]

    face_alpha = np.clip((1.0 - d) * 12.0, 0.0, 1.0)
    shading = (1.0 - 0.25 * np.clip(d, 0.0, 1.0))[:, :, None]
    face_color = style.skin[None, None, :] * shading
    img = img * (1 - face_alpha[:, :, None]) + face_color * face_alpha[:, :, None]

    for side in (-1.0, 1.0):
        ex, ey = cx + side * style.eye_dx, cy - style.eye_dy
        de = np.sqrt(((xx - ex) / style.eye_r) ** 2 + ((yy - ey) / (style.eye_r * 0.7)) ** 2)
        eye_alpha = np.clip((1.0 - de) * 6.0, 0.0, 1.0)
        img = img * (1 - eye_alpha[:, :, None]) + np.float32(0.08) * eye_alpha[:, :, None]

    mx, my = cx, cy + 0.16
    dm = np.sqrt(((xx - mx) / style.mouth_w) ** 2 + ((yy - my) / (style.mouth_w * 0.35)) ** 2)
    mouth_alpha = np.clip((1.0 - dm) * 6.0, 0.0, 1.0)
    mouth_color = np.array([0.45, 0.15, 0.15], dtype=np.float32)
    img = img * (1 - mouth_alpha[:, :, None]) + mouth_color[None, None, :] * mouth_alpha[:, :, None]

    img = img * brightness
    img += frame_rng.normal(0.0, 0.01, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def apply_artifact(img: np.ndarray, params: ArtifactParams) -> np.ndarray:
    """Inject one manipulation; designed to leave the global mean ~unchanged."""
    size = img.shape[0]
    out = img.astype(np.float32, copy=True)
    y0, y1, x0, x1 = params.bbox(size)
    if y1 <= y0 or x1 <= x0:
        return out

    if params.kind == "checkerboard":
        ys = np.arange(y0, y1)[:, None]
        xs = np.arange(x0, x1)[None, :]
        checker = (((ys // 2) + (xs // 2)) % 2).astype(np.float32) * 2.0 - 1.0
        out[y0:y1, x0:x1, :] += params.amplitude * checker[:, :, None]
    elif params.kind == "local_blur":
        blurred = box_blur(img, 11)
        out[y0:y1, x0:x1, :] = blurred[y0:y1, x0:x1, :]
    elif params.kind == "warp_patch":
        # short-wavelength row shifts, then column shifts: jagged local geometry
        amp_px = params.amplitude * 25.0
        rows = np.arange(y0, y1)
        shifts = amp_px * np.sin(2 * np.pi * (rows - y0) / params.wavelength + params.phase)
        cols = np.arange(x0, x1, dtype=np.float64)
        warped = out[y0:y1, x0:x1, :].copy()
        for i in range(len(rows)):
            src = np.clip(cols - shifts[i], x0, x1 - 1)
            lo = np.floor(src).astype(np.int64)
            hi = np.minimum(lo + 1, x1 - 1)
            frac = (src - lo).astype(np.float32)[:, None]
            warped[i] = img[rows[i], lo, :] * (1 - frac) + img[rows[i], hi, :] * frac
        col_idx = np.arange(x0, x1)
        col_shifts = amp_px * np.sin(2 * np.pi * (col_idx - x0) / params.wavelength + 2.1 * params.phase)
        row_pos = np.arange(y1 - y0, dtype=np.float64)
        final = warped.copy()
        for j in range(len(col_idx)):
            src = np.clip(row_pos - col_shifts[j], 0, y1 - y0 - 1)
            lo = np.floor(src).astype(np.int64)
            hi = np.minimum(lo + 1, y1 - y0 - 1)
            frac = (src - lo).astype(np.float32)[:, None]
            final[:, j, :] = warped[lo, j, :] * (1 - frac) + warped[hi, j, :] * frac
        out[y0:y1, x0:x1, :] = final
    elif params.kind == "blend_boundary":
        # channel rotation preserves the per-pixel channel sum exactly
        region = img[y0:y1, x0:x1, :]
        delta = params.amplitude * 1.5
        mixed = region + delta * (np.roll(region, shift=-1, axis=2) - region)
        out[y0:y1, x0:x1, :] = mixed
        band = 2
        seam = params.amplitude
        # double-banded seam on every edge: +amp beside -amp, net-zero mean
        out[y0 : y0 + band, x0:x1, :] += seam
        out[y0 + band : y0 + 2 * band, x0:x1, :] -= seam
        out[y1 - band : y1, x0:x1, :] += seam
        out[y1 - 2 * band : y1 - band, x0:x1, :] -= seam
        out[y0:y1, x0 : x0 + band, :] += seam
        out[y0:y1, x0 + band : x0 + 2 * band, :] -= seam
        out[y0:y1, x1 - band : x1, :] += seam
        out[y0:y1, x1 - 2 * band : x1 - band, :] -= seam
    else:
        raise InputError(f"unknown artifact kind {params.kind!r}")
    return np.clip(out, 0.0, 1.0).astype(np.float32)


@dataclass
class CorpusSummary:
    out_dir: str
    manifest_path: str
    labels_path: str
    n_videos: int
    n_fake_videos: int
    n_faces: int
    artifact_counts: dict[str, int]
    content_hash: str


def _half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def generate_corpus(
    config: SynthConfig,
    out_dir: str | Path,
    split: str = "train",
    manipulated_actors_per_fake: int | None = None,
) -> tuple[Manifest, CorpusSummary]:
    """Render the corpus into ``out_dir`` and return its manifest + summary.

    ``manipulated_actors_per_fake`` of None manipulates every actor track in
    a fake video; an integer manipulates exactly min(n_actors, k) of them
    (used for multi-actor voting experiments).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images_dir = out_dir / "images"

    n_fake = _half_up(config.n_videos * config.fake_fraction)
    flags = np.zeros(config.n_videos, dtype=bool)
    flags[:n_fake] = True
    flags = flags[np.random.default_rng([config.seed, 7]).permutation(config.n_videos)]

    records: list[FaceRecord] = []
    video_labels: dict[str, int] = {}
    artifact_counts: dict[str, int] = {}
    lo, hi = config.actors_per_video
    for v in range(config.n_videos):
        video_id = f"video_{v:04d}"
        video_rng = np.random.default_rng([config.seed, 11, v])
        n_actors = int(video_rng.integers(lo, hi + 1))
        is_fake_video = bool(flags[v])
        if is_fake_video:
            if manipulated_actors_per_fake is None:
                manipulated = set(range(n_actors))
            else:
                k = min(n_actors, manipulated_actors_per_fake)
                manipulated = set(video_rng.choice(n_actors, size=k, replace=False).tolist())
        else:
            manipulated = set()
        video_labels[video_id] = 1 if manipulated else 0
        for a in range(n_actors):
            actor_id = f"actor_{a}"
            actor_rng = np.random.default_rng([config.seed, 13, v, a])
            style = sample_actor_style(actor_rng)
            artifact = None
            if a in manipulated:
                kind = str(config.artifact_kinds[actor_rng.integers(len(config.artifact_kinds))])
                artifact = sample_artifact_params(actor_rng, kind)
                artifact_counts[kind] = artifact_counts.get(kind, 0) + 1
            for f in range(config.frames_per_video):
                frame_rng = np.random.default_rng([config.seed, 17, v, a, f])
                img = render_face(style, config.image_size, frame_rng)
                if artifact is not None:
                    img = apply_artifact(img, artifact)
                rel = f"images/{video_id}/{actor_id}_{f:03d}.png"
                save_rgb(out_dir / rel, img)
                records.append(
                    FaceRecord(
                        video_id=video_id,
                        frame_index=f,
                        actor_id=actor_id,
                        label=1 if artifact is not None else 0,
                        image_path=rel,
                    )
                )

    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(records, manifest_path)
    labels_path = out_dir / "video_labels.jsonl"
    write_video_labels(video_labels, labels_path)

    hasher = hashlib.sha256()
    hasher.update(manifest_path.read_bytes())
    for r in records:
        hasher.update((images_dir.parent / r.image_path).read_bytes())
    content_hash = hasher.hexdigest()

    meta = {
        "config": config.model_dump(mode="json"),
        "split": split,
        "content_hash": content_hash,
        "counts": {
            "videos": config.n_videos,
            "fake_videos": int(sum(video_labels.values())),
            "faces": len(records),
            "artifacts": dict(sorted(artifact_counts.items())),
        },
    }
    (out_dir / "corpus_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    resolved = [
        FaceRecord(r.video_id, r.frame_index, r.actor_id, r.label, str(out_dir / r.image_path)) for r in records
    ]
    summary = CorpusSummary(
        out_dir=str(out_dir),
        manifest_path=str(manifest_path),
        labels_path=str(labels_path),
        n_videos=config.n_videos,
        n_fake_videos=int(sum(video_labels.values())),
        n_faces=len(records),
        artifact_counts=dict(sorted(artifact_counts.items())),
        content_hash=content_hash,
    )
    return Manifest(records=resolved, split=split), summary


def synthesize_corpus(config: SynthConfig, out_dir: str | Path, split: str = "train") -> tuple[Manifest, CorpusSummary]:
    """Spec'd entry point: every actor track in a fake video is manipulated."""
    return generate_corpus(config, out_dir, split=split, manipulated_actors_per_fake=None)
