"""Training loop: segment-stream batches, masked multi-task loss, Adam, per-epoch validation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import AdamState, adam_step
from .data.batching import Batch, make_batches
from .data.dataset import Dataset
from .errors import ConfigError, DataError, NumericError
from .frameworks import MultiTaskModel, ModelSpec, build_model, finalize_outputs, predict_video, save_checkpoint
from .losses import LossResult, bce_loss, ce_loss, mse_loss, multi_task_loss
from .metrics import MetricsReport, evaluate
from .postprocess import PredictionFile, concat_predictions

log = logging.getLogger(__name__)


@dataclass
class Schedule:
    epochs: int = 50
    lr: float = 5e-5
    batch_size: int = 8
    segment_length: int | None = None  # None: 250 when arousal is the designated task, else 64
    checkpoint_ranges: dict[str, tuple[int, int]] = field(default_factory=dict)

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("epochs, batch_size and lr must be positive")
        if self.segment_length is not None and self.segment_length < 1:
            raise ConfigError("segment_length must be >= 1")
        for t, (a, b) in self.checkpoint_ranges.items():
            if not 1 <= a <= b <= self.epochs:
                raise ConfigError(f"checkpoint range for {t} must satisfy 1 <= start <= end <= epochs")


def designated_task(spec: ModelSpec) -> str:
    """Task the model is tuned for: the feedback target, else the first task."""
    return spec.feedback.tgt if spec.feedback is not None else spec.tasks[0]


def default_segment_length(spec: ModelSpec) -> int:
    return 250 if designated_task(spec) == "A" else 64


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for initialization, shuffling and dropout."""
    init, shuffle, drop = np.random.SeedSequence(seed).spawn(3)
    return {"init": np.random.default_rng(init), "shuffle": np.random.default_rng(shuffle),
            "dropout": np.random.default_rng(drop)}


class CarryStore:
    """Per-stream recurrent state, gathered and scattered by batch row."""

    def __init__(self, model: MultiTaskModel, n_streams: int):
        self.state = model.zero_carry(n_streams)

    def gather(self, stream_ids: np.ndarray, reset: np.ndarray) -> dict:
        keep = (~reset)[:, None]
        return {k: _map(v, lambda a: np.where(keep, a[stream_ids], 0.0)) for k, v in self.state.items()}

    def scatter(self, stream_ids: np.ndarray, carry: dict) -> None:
        for k, v in carry.items():
            if isinstance(v, tuple):
                for dst, src in zip(self.state[k], v):
                    dst[stream_ids] = src
            else:
                self.state[k][stream_ids] = v


def _map(v, f):
    return tuple(f(a) for a in v) if isinstance(v, tuple) else f(v)


def batch_losses(outputs: dict, batch: Batch, tasks) -> dict[str, LossResult]:
    n = batch.features.shape[0] * batch.features.shape[1]
    out = {}
    for t in tasks:
        y = outputs[t]
        if t in ("V", "A"):
            out[t] = mse_loss(y.reshape(n), batch.labels[t].reshape(n), batch.masks[t].reshape(n))
        elif t == "EXPR":
            out[t] = ce_loss(y.reshape(n, -1), batch.labels[t].reshape(n), batch.masks[t].reshape(n))
        else:
            out[t] = bce_loss(y.reshape(n, -1), batch.labels[t].reshape(n, -1), batch.masks[t].reshape(n, -1))
    return out


def predict_dataset(model: MultiTaskModel, dataset: Dataset, segment_length: int,
                    tag: str = "") -> PredictionFile:
    parts = [PredictionFile.from_outputs(v.video_id, v.frame_ids,
                                         finalize_outputs(predict_video(model, v.features, segment_length)), tag)
             for v in dataset.videos]
    if not parts:
        return PredictionFile.empty_like([], [], tag)
    return concat_predictions(parts)


def dataset_targets(dataset: Dataset) -> tuple[dict, dict]:
    labels = {t: np.concatenate([v.labels[t] for v in dataset.videos]) for t in ("V", "A", "EXPR", "AU")}
    masks = {t: np.concatenate([v.masks[t] for v in dataset.videos]) for t in ("V", "A", "EXPR", "AU")}
    return labels, masks


def evaluate_model(model: MultiTaskModel, dataset: Dataset,
                   segment_length: int) -> tuple[MetricsReport, PredictionFile]:
    preds = predict_dataset(model, dataset, segment_length)
    labels, masks = dataset_targets(dataset)
    return evaluate(preds.as_preds(), labels, masks), preds


@dataclass
class EpochLog:
    epoch: int
    loss: float
    task_losses: dict[str, float]
    report: MetricsReport | None = None


@dataclass
class TrainResult:
    model: MultiTaskModel
    history: list[EpochLog]
    best: dict[str, tuple[int, float]]            # task -> (epoch, metric)
    best_states: dict[str, dict[str, np.ndarray]]
    range_states: dict[str, list[tuple[int, dict[str, np.ndarray]]]]
    segment_length: int

    @property
    def final_report(self) -> MetricsReport | None:
        return self.history[-1].report if self.history else None


def train_epoch(model: MultiTaskModel, dataset: Dataset, schedule: Schedule, opt: AdamState,
                segment_length: int, rngs: dict) -> tuple[float, dict[str, float]]:
    spec = model.spec
    store = CarryStore(model, schedule.batch_size)
    params = model.parameters()
    sums: dict[str, float] = {t: 0.0 for t in spec.tasks}
    total, steps = 0.0, 0
    for batch in make_batches(dataset, segment_length, schedule.batch_size, rngs["shuffle"]):
        carry = store.gather(batch.stream_ids, batch.reset)
        outputs, new_carry = model.forward(batch.features, batch.frame_mask, carry, training=True,
                                           rng=rngs["dropout"])
        store.scatter(batch.stream_ids, new_carry)
        per_task = batch_losses(outputs, batch, spec.tasks)
        if all(r.empty for r in per_task.values()):
            continue
        loss = multi_task_loss(per_task, spec.loss_weights, spec.tasks)
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericError(f"non-finite training loss {value} at step {opt.t + 1}")
        loss.backward()
        adam_step(params, opt)
        total += value
        steps += 1
        for t, r in per_task.items():
            sums[t] += float(r.value.data)
    return total / max(steps, 1), {t: s / max(steps, 1) for t, s in sums.items()}


def train(model: MultiTaskModel, train_set: Dataset, val_set: Dataset | None = None,
          schedule: Schedule | None = None, seed: int = 0, out_dir=None) -> TrainResult:
    """Train ``model`` in place.

    After each epoch the model is scored on ``val_set`` (if given) and the best
    state per task is kept. Epochs inside ``schedule.checkpoint_ranges`` are
    retained for ensembling regardless of validation. With ``out_dir`` the
    best, ranged and final checkpoints are written there.
    """
    schedule = schedule or Schedule()
    schedule.validate()
    spec = model.spec
    if not len(train_set) or train_set.total_frames() == 0:
        raise DataError("training set has no annotated frames")
    seg = schedule.segment_length or default_segment_length(spec)
    rngs = seed_streams(seed)
    opt = AdamState.for_params(model.parameters(), lr=schedule.lr)
    history: list[EpochLog] = []
    best: dict[str, tuple[int, float]] = {}
    best_states: dict[str, dict] = {}
    range_states: dict[str, list] = {t: [] for t in schedule.checkpoint_ranges}
    for epoch in range(1, schedule.epochs + 1):
        loss, task_losses = train_epoch(model, train_set, schedule, opt, seg, rngs)
        report = None
        if val_set is not None and len(val_set):
            report, _ = evaluate_model(model, val_set, seg)
            for t in spec.tasks:
                m = report.task_metric(t)
                if m is not None and (t not in best or m > best[t][1]):
                    best[t] = (epoch, m)
                    best_states[t] = model.state_dict()
        for t, (a, b) in schedule.checkpoint_ranges.items():
            if a <= epoch <= b:
                range_states[t].append((epoch, model.state_dict()))
        history.append(EpochLog(epoch, loss, task_losses, report))
        log.info("epoch %d loss %.6f %s", epoch, loss, "" if report is None else report.as_dict())
    result = TrainResult(model, history, best, best_states, range_states, seg)
    if out_dir is not None:
        write_checkpoints(result, Path(out_dir))
    return result


def write_checkpoints(result: TrainResult, out: Path) -> dict[str, Path]:
    out.mkdir(parents=True, exist_ok=True)
    paths = {"final": out / "final.ckpt"}
    save_checkpoint(paths["final"], result.model)
    for t, state in result.best_states.items():
        paths[f"best_{t}"] = out / f"best_{t}.ckpt"
        save_checkpoint(paths[f"best_{t}"], result.model, state)
    for t, items in result.range_states.items():
        for epoch, state in items:
            paths[f"{t}_epoch{epoch}"] = out / f"{t}_epoch{epoch:03d}.ckpt"
            save_checkpoint(paths[f"{t}_epoch{epoch}"], result.model, state)
    return paths


def fit(spec: ModelSpec, train_set: Dataset, val_set: Dataset | None = None,
        schedule: Schedule | None = None, seed: int = 0, out_dir=None) -> TrainResult:
    """Build a model from ``spec`` with the seed's init stream and train it."""
    model = build_model(spec, seed_streams(seed)["init"])
    return train(model, train_set, val_set, schedule, seed, out_dir)
