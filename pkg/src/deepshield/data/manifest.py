"""JSON-Lines manifests of labeled face crops.

One record per line with exactly the fields
{video_id, frame_index, actor_id, label, image_path}; image paths are
resolved against the manifest's directory. Validation is eager: every
record is checked (including image existence and squareness) before the
manifest is returned.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from ..errors import InputError, LoadError
from .imaging import image_dimensions

MANIFEST_FIELDS = ("video_id", "frame_index", "actor_id", "label", "image_path")


@dataclass(frozen=True)
class FaceRecord:
    video_id: str
    frame_index: int
    actor_id: str
    label: int
    image_path: str

    @property
    def key(self) -> tuple[str, int, str]:
        return (self.video_id, self.frame_index, self.actor_id)


@dataclass
class Manifest:
    records: list[FaceRecord]
    split: str

    def __len__(self) -> int:
        return len(self.records)

    def video_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.records:
            seen.setdefault(r.video_id, None)
        return list(seen)

    def video_labels(self) -> dict[str, int]:
        """A video is fake iff any of its faces is labeled fake."""
        labels: dict[str, int] = {}
        for r in self.records:
            labels[r.video_id] = max(labels.get(r.video_id, 0), r.label)
        return labels


def _parse_record(payload: dict, line_no: int) -> FaceRecord:
    keys = set(payload)
    missing = set(MANIFEST_FIELDS) - keys
    if missing:
        raise LoadError(f"line {line_no}: missing fields {sorted(missing)}")
    unknown = keys - set(MANIFEST_FIELDS)
    if unknown:
        raise LoadError(f"line {line_no}: unknown fields {sorted(unknown)}")
    video_id, actor_id, image_path = payload["video_id"], payload["actor_id"], payload["image_path"]
    frame_index, label = payload["frame_index"], payload["label"]
    if not isinstance(video_id, str) or not video_id:
        raise LoadError(f"line {line_no}: video_id must be a non-empty string")
    if not isinstance(actor_id, str) or not actor_id:
        raise LoadError(f"line {line_no}: actor_id must be a non-empty string")
    if not isinstance(image_path, str) or not image_path:
        raise LoadError(f"line {line_no}: image_path must be a non-empty string")
    if isinstance(frame_index, bool) or not isinstance(frame_index, int) or frame_index < 0:
        raise LoadError(f"line {line_no}: frame_index must be a non-negative integer")
    if isinstance(label, bool) or label not in (0, 1):
        raise LoadError(f"line {line_no}: label must be 0 or 1, got {label!r}")
    return FaceRecord(video_id, frame_index, actor_id, label, image_path)


def load_manifest(path: str | Path, split: str = "test", check_images: bool = True) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"manifest not found: {path}")
    base = path.parent
    records: list[FaceRecord] = []
    seen: set[tuple[str, int, str]] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LoadError(f"line {line_no}: malformed JSON ({exc.msg})") from None
            if not isinstance(payload, dict):
                raise LoadError(f"line {line_no}: expected a JSON object")
            record = _parse_record(payload, line_no)
            if record.key in seen:
                raise LoadError(f"line {line_no}: duplicate record key {record.key}")
            seen.add(record.key)
            resolved = Path(record.image_path)
            if not resolved.is_absolute():
                resolved = base / resolved
            if check_images:
                if not resolved.is_file():
                    raise LoadError(f"line {line_no}: image does not exist: {resolved}")
                w, h = image_dimensions(resolved)
                if w != h:
                    raise LoadError(f"line {line_no}: image {resolved} is {w}x{h}, face crops must be square")
            records.append(replace(record, image_path=str(resolved)))
    return Manifest(records=records, split=split)


def write_manifest(records: list[FaceRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "video_id": r.video_id,
                        "frame_index": r.frame_index,
                        "actor_id": r.actor_id,
                        "label": r.label,
                        "image_path": r.image_path,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_video_labels(path: str | Path) -> dict[str, int]:
    """JSON-Lines of {video_id, label} used by evaluation."""
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"labels file not found: {path}")
    labels: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LoadError(f"line {line_no}: malformed JSON ({exc.msg})") from None
            if not isinstance(payload, dict) or set(payload) != {"video_id", "label"}:
                raise LoadError(f"line {line_no}: expected exactly {{video_id, label}}")
            if payload["label"] not in (0, 1) or isinstance(payload["label"], bool):
                raise LoadError(f"line {line_no}: label must be 0 or 1")
            vid = payload["video_id"]
            if not isinstance(vid, str) or not vid:
                raise LoadError(f"line {line_no}: video_id must be a non-empty string")
            if vid in labels:
                raise LoadError(f"line {line_no}: duplicate video_id {vid!r}")
            labels[vid] = int(payload["label"])
    if not labels:
        raise InputError(f"labels file {path} is empty")
    return labels


def write_video_labels(labels: dict[str, int], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for vid, label in labels.items():
            fh.write(json.dumps({"video_id": vid, "label": int(label)}, sort_keys=True) + "\n")
