"""Video-level decision procedure: face cap, per-actor averaging, hard voting.

Faces of one video are sorted by (frame_index, actor_id) and capped by
uniform temporal spacing; scores are grouped by actor and averaged over
time. The voting rule declares a video fake iff at least one actor's mean
reaches the threshold (boundary inclusive); the plain-average rule compares
the mean over all faces indistinctly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .config import DataConfig, InferenceConfig
from .data.batches import ImageCache, prepare_record_image
from .data.manifest import FaceRecord, Manifest
from .diffcore import Tensor
from .errors import InputError


@dataclass(frozen=True)
class FaceScore:
    video_id: str
    actor_id: str
    frame_index: int
    prob: float


@dataclass(frozen=True)
class ActorAggregate:
    actor_id: str
    mean_prob: float
    face_count: int


@dataclass(frozen=True)
class VideoVerdict:
    video_id: str
    aggregates: tuple[ActorAggregate, ...]
    max_actor_score: float
    mean_prob: float  # over all sampled faces indistinctly
    verdict: str  # "fake" | "real"
    rule: str  # "voting" | "average"

    @property
    def score(self) -> float:
        """Continuous score matching the rule (feeds ROC/AUC)."""
        return self.max_actor_score if self.rule == "voting" else self.mean_prob


def sample_faces(records: Sequence[FaceRecord], max_faces: int) -> list[FaceRecord]:
    """Cap one video's faces by uniform spacing over the sorted record list.

    Indices are round-half-up of k*(n-1)/(m-1); duplicates are dropped and
    the remaining slots back-filled with the smallest unused indices.
    """
    if not records:
        raise InputError("sample_faces requires at least one record")
    if max_faces < 1:
        raise InputError(f"max_faces must be >= 1, got {max_faces}")
    vids = {r.video_id for r in records}
    if len(vids) != 1:
        raise InputError(f"sample_faces expects records of one video, got {sorted(vids)}")
    ordered = sorted(records, key=lambda r: (r.frame_index, r.actor_id))
    n = len(ordered)
    if n <= max_faces:
        return ordered
    if max_faces == 1:
        return [ordered[0]]
    picked: list[int] = []
    seen: set[int] = set()
    for k in range(max_faces):
        idx = int(np.floor(k * (n - 1) / (max_faces - 1) + 0.5))
        if idx not in seen:
            seen.add(idx)
            picked.append(idx)
    if len(picked) < max_faces:
        for idx in range(n):
            if idx not in seen:
                seen.add(idx)
                picked.append(idx)
                if len(picked) == max_faces:
                    break
    return [ordered[i] for i in sorted(picked)]


def score_faces(
    forward_fn: Callable[[Tensor], np.ndarray],
    records: Sequence[FaceRecord],
    batch_size: int = 32,
    final_size: int = 64,
    data: DataConfig | None = None,
    cache: ImageCache | None = None,
) -> list[FaceScore]:
    """Run the frozen model over face crops; one score per record, in order."""
    data = data or DataConfig()
    scores: list[FaceScore] = []
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        images = np.stack(
            [prepare_record_image(r, final_size, data, None, 0, cache) for r in chunk]
        )
        probs = np.asarray(forward_fn(Tensor(images)), dtype=np.float64).reshape(-1)
        if probs.shape[0] != len(chunk):
            raise InputError(f"model returned {probs.shape[0]} scores for {len(chunk)} faces")
        for r, p in zip(chunk, probs):
            scores.append(FaceScore(r.video_id, r.actor_id, r.frame_index, float(p)))
    return scores


def aggregate_video(scores: Sequence[FaceScore], config: InferenceConfig) -> VideoVerdict:
    """Collapse one video's face scores into a verdict under the configured rule."""
    if not scores:
        raise InputError("aggregate_video requires at least one score")
    vids = {s.video_id for s in scores}
    if len(vids) != 1:
        raise InputError(f"aggregate_video expects scores of one video, got {sorted(vids)}")
    by_actor: dict[str, list[float]] = {}
    for s in scores:
        by_actor.setdefault(s.actor_id, []).append(s.prob)
    aggregates = tuple(
        ActorAggregate(actor_id=a, mean_prob=float(np.mean(ps)), face_count=len(ps))
        for a, ps in sorted(by_actor.items())
    )
    max_actor = max(agg.mean_prob for agg in aggregates)
    overall = float(np.mean([s.prob for s in scores]))
    if config.rule == "voting":
        is_fake = max_actor >= config.threshold
    else:
        is_fake = overall >= config.threshold
    return VideoVerdict(
        video_id=next(iter(vids)),
        aggregates=aggregates,
        max_actor_score=max_actor,
        mean_prob=overall,
        verdict="fake" if is_fake else "real",
        rule=config.rule,
    )


def group_by_video(records: Sequence[FaceRecord]) -> dict[str, list[FaceRecord]]:
    """Group records by video_id, preserving first-appearance video order."""
    groups: dict[str, list[FaceRecord]] = {}
    for r in records:
        groups.setdefault(r.video_id, []).append(r)
    return groups


def infer_videos(
    manifest: Manifest,
    forward_fn: Callable[[Tensor], np.ndarray],
    config: InferenceConfig,
    batch_size: int = 32,
    final_size: int = 64,
    data: DataConfig | None = None,
    cache: ImageCache | None = None,
) -> tuple[list[VideoVerdict], list[FaceScore]]:
    """Per video: sample -> score -> aggregate; verdicts in first-appearance order."""
    verdicts: list[VideoVerdict] = []
    all_scores: list[FaceScore] = []
    cache = cache or ImageCache()
    for _video_id, records in group_by_video(manifest.records).items():
        sampled = sample_faces(records, config.max_faces)
        scores = score_faces(forward_fn, sampled, batch_size, final_size, data, cache)
        all_scores.extend(scores)
        verdicts.append(aggregate_video(scores, config))
    return verdicts, all_scores
