"""End-to-end training: BCE + SGD over manifest batches, with per-epoch
validation, checkpointing, and a best-checkpoint selection by validation AUC.

The backbone is never frozen; gradients flow through the whole assembly.
``train_log.csv`` holds only run-deterministic columns; wall-clock timings
go to a separate ``timing.csv`` so reruns stay byte-identical.
"""

from __future__ import annotations

import hashlib
import shutil
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .checkpoint import save_model
from .config import RunConfig, resolved_config_json
from .data.batches import ImageCache, make_batches
from .data.manifest import Manifest, load_manifest
from .errors import ConfigError, NumericError
from .metrics import evaluate_run
from .models import Model, build_model, model_probs
from .videoinfer import infer_videos


@dataclass
class TrainLogRow:
    epoch: int
    train_loss: float
    val_loss: float
    val_auc: float
    val_f1: float
    wall_seconds: float


@dataclass
class TrainResult:
    log: list[TrainLogRow]
    best_epoch: int
    best_checkpoint: str
    checkpoints: list[str]
    train_log_path: str
    model: Model


def epoch_shuffle_seed(seed: int, epoch: int) -> int:
    digest = hashlib.sha256(f"{seed}|epoch|{epoch}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _clamped_bce(probs: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(probs.astype(np.float64), dc.BCE_EPS, 1.0 - dc.BCE_EPS)
    y = labels.astype(np.float64)
    return float(-(y * np.log(p) + (1 - y) * np.log1p(-p)).mean())


def _validate(model: Model, manifest: Manifest, config: RunConfig, cache: ImageCache) -> tuple[float, float, float]:
    """(val_loss, val_auc, val_f1) at video level under the voting rule."""
    forward = lambda images: model_probs(model, images).data
    verdicts, scores = infer_videos(
        manifest,
        forward,
        config.inference,
        batch_size=config.training.batch_size,
        final_size=config.image_size,
        data=config.data,
        cache=cache,
    )
    face_labels = {(r.video_id, r.frame_index, r.actor_id): r.label for r in manifest.records}
    probs = np.array([s.prob for s in scores])
    labels = np.array([face_labels[(s.video_id, s.frame_index, s.actor_id)] for s in scores])
    val_loss = _clamped_bce(probs, labels)
    report, _ = evaluate_run(verdicts, manifest.video_labels(), with_roc=True)
    val_auc = report.auc if report.auc is not None else float("nan")
    return val_loss, val_auc, report.f1


def train_run(config: RunConfig, log_fn=None) -> TrainResult:
    paths = config.paths
    for field in ("train_manifest", "val_manifest", "checkpoint_dir", "out_dir"):
        if getattr(paths, field) is None:
            raise ConfigError(f"training requires paths.{field}")
    train_manifest = load_manifest(paths.train_manifest, split="train")
    val_manifest = load_manifest(paths.val_manifest, split="val")
    out_dir = Path(paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = Path(paths.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(resolved_config_json(config), encoding="utf-8")

    tr = config.training
    model = build_model(config.model, config.model_section, seed=tr.seed)
    state = dc.SgdState(learning_rate=tr.learning_rate, momentum=tr.momentum, weight_decay=tr.weight_decay)
    params = model.parameters()
    cache = ImageCache()

    rows: list[TrainLogRow] = []
    checkpoints: list[str] = []
    best_epoch, best_auc = 0, -1.0
    for epoch in range(1, tr.epochs + 1):
        started = time.perf_counter()
        dropout_rng = np.random.default_rng([tr.seed, 101, epoch])
        batch_losses: list[float] = []
        batches = make_batches(
            train_manifest,
            tr.batch_size,
            epoch_shuffle_seed(tr.seed, epoch),
            final_size=config.image_size,
            augment_config=config.augment,
            data=config.data,
            cache=cache,
        )
        for images, labels in batches:
            model.store.zero_grads()
            with dc.Tape() as tape:
                probs = model_probs(model, images, train=True, rng=dropout_rng)
                loss = dc.bce_loss(probs, labels)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            dc.backward(loss, tape)
            dc.sgd_step(params, state)
            batch_losses.append(loss_value)
        model.store.zero_grads()
        val_loss, val_auc, val_f1 = _validate(model, val_manifest, config, cache)
        if not (np.isfinite(val_loss) and np.isfinite(val_auc)):
            raise NumericError(f"non-finite validation metrics at epoch {epoch}")
        wall = time.perf_counter() - started
        row = TrainLogRow(epoch, float(np.mean(batch_losses)), val_loss, val_auc, val_f1, wall)
        rows.append(row)
        if log_fn is not None:
            log_fn(
                f"epoch {epoch}: train_loss={row.train_loss:.4f} val_loss={val_loss:.4f} "
                f"val_auc={val_auc:.4f} val_f1={val_f1:.4f} ({wall:.1f}s)"
            )
        ckpt_path = ckpt_dir / f"epoch_{epoch:03d}.ckpt"
        save_model(model, ckpt_path)
        checkpoints.append(str(ckpt_path))
        if val_auc > best_auc:
            best_auc, best_epoch = val_auc, epoch

    best_src = ckpt_dir / f"epoch_{best_epoch:03d}.ckpt"
    best_dst = ckpt_dir / "best.ckpt"
    if best_dst.exists():
        shutil.rmtree(best_dst)
    shutil.copytree(best_src, best_dst)

    log_path = out_dir / "train_log.csv"
    lines = ["epoch,train_loss,val_loss,val_auc,val_f1"]
    for r in rows:
        lines.append(f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.val_auc!r},{r.val_f1!r}")
    log_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    timing_lines = ["epoch,wall_seconds"]
    for r in rows:
        timing_lines.append(f"{r.epoch},{r.wall_seconds!r}")
    (out_dir / "timing.csv").write_text("\n".join(timing_lines) + "\n", encoding="utf-8")

    return TrainResult(
        log=rows,
        best_epoch=best_epoch,
        best_checkpoint=str(best_dst),
        checkpoints=checkpoints,
        train_log_path=str(log_path),
        model=model,
    )
