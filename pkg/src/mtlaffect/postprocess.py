"""Prediction files, smoothing and ensembling.

Prediction file (UTF-8 TSV): an optional ``#``-prefixed comment line holding
the model tag and the tasks it carries, a header row, then one row per frame:
``video_id frame_id valence arousal expr_0..expr_7 AU1..AU26``. Columns of a
task the model does not predict hold ``NA``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data.formats import AU_NAMES
from .errors import AlignmentError, ConfigError, DataError, UndefinedMetricError
from .losses import NUM_AU, NUM_EXPR, TASKS
from .metrics import ccc

PRED_COLUMNS = ("video_id", "frame_id", "valence", "arousal",
                *(f"expr_{c}" for c in range(NUM_EXPR)), *AU_NAMES)
DEFAULT_WINDOW_GRID = tuple(range(1, 22, 2))
THRESHOLD_GRID = np.round(np.arange(1, 100) / 100.0, 2)


@dataclass
class PredictionFile:
    video_ids: np.ndarray           # (N,) str
    frame_ids: np.ndarray           # (N,) int64
    valence: np.ndarray             # (N,)
    arousal: np.ndarray             # (N,)
    expr: np.ndarray                # (N, 8) probabilities
    au: np.ndarray                  # (N, 12) probabilities or 0/1 decisions
    model: str = ""
    tasks: tuple[str, ...] = TASKS

    def __len__(self) -> int:
        return len(self.frame_ids)

    def keys(self) -> list[tuple[str, int]]:
        return list(zip(self.video_ids.tolist(), self.frame_ids.tolist()))

    def task_values(self, task: str) -> np.ndarray:
        return {"V": self.valence, "A": self.arousal, "EXPR": self.expr, "AU": self.au}[task]

    def with_task(self, task: str, values: np.ndarray, model: str | None = None) -> "PredictionFile":
        attr = {"V": "valence", "A": "arousal", "EXPR": "expr", "AU": "au"}[task]
        tasks = tuple(t for t in TASKS if t in self.tasks or t == task)
        return replace(self, **{attr: np.asarray(values, dtype=np.float64)}, tasks=tasks,
                       model=self.model if model is None else model)

    def as_preds(self) -> dict[str, np.ndarray]:
        return {t: self.task_values(t) for t in self.tasks}

    def validate(self) -> None:
        n = len(self.frame_ids)
        shapes = {"valence": (n,), "arousal": (n,), "expr": (n, NUM_EXPR), "au": (n, NUM_AU)}
        for attr, shape in shapes.items():
            if getattr(self, attr).shape != shape:
                raise DataError(f"prediction column {attr} has shape {getattr(self, attr).shape}, expected {shape}")
        if len(set(self.keys())) != n:
            raise DataError("prediction file has duplicate (video_id, frame_id) keys")
        if "EXPR" in self.tasks:
            if np.any((self.expr < 0) | (self.expr > 1)):
                raise DataError("expression probabilities outside [0, 1]")
            if n and np.max(np.abs(self.expr.sum(axis=1) - 1.0)) > 1e-6:
                raise DataError("expression probabilities do not sum to 1")
        if "AU" in self.tasks and np.any((self.au < 0) | (self.au > 1)):
            raise DataError("AU probabilities outside [0, 1]")

    @classmethod
    def empty_like(cls, video_ids, frame_ids, model: str = "") -> "PredictionFile":
        n = len(frame_ids)
        return cls(np.asarray(video_ids, dtype=object), np.asarray(frame_ids, dtype=np.int64),
                   np.zeros(n), np.zeros(n), np.zeros((n, NUM_EXPR)), np.zeros((n, NUM_AU)), model, ())

    @classmethod
    def from_outputs(cls, video_id: str, frame_ids, outputs: dict[str, np.ndarray],
                     model: str = "") -> "PredictionFile":
        """Build from finalized per-task outputs of one video."""
        pf = cls.empty_like([video_id] * len(frame_ids), frame_ids, model)
        for t in TASKS:
            if t in outputs:
                pf = pf.with_task(t, np.asarray(outputs[t]).reshape(pf.task_values(t).shape))
        return pf


def concat_predictions(parts: list[PredictionFile]) -> PredictionFile:
    if not parts:
        raise DataError("nothing to concatenate")
    first = parts[0]
    if any(p.tasks != first.tasks for p in parts):
        raise DataError("prediction parts carry different task sets")
    return PredictionFile(
        np.concatenate([p.video_ids for p in parts]), np.concatenate([p.frame_ids for p in parts]),
        np.concatenate([p.valence for p in parts]), np.concatenate([p.arousal for p in parts]),
        np.concatenate([p.expr for p in parts]), np.concatenate([p.au for p in parts]),
        first.model, first.tasks)


def write_predictions(path, pf: PredictionFile) -> None:
    cols = {
        "V": [pf.valence[:, None]], "A": [pf.arousal[:, None]], "EXPR": [pf.expr], "AU": [pf.au],
    }
    blocks = []
    for t in TASKS:
        arr = np.concatenate(cols[t], axis=1)
        if t in pf.tasks:
            blocks.append(np.vectorize(lambda x: repr(float(x)), otypes=[object])(arr) if arr.size
                          else arr.astype(object))
        else:
            blocks.append(np.full(arr.shape, "NA", dtype=object))
    body = np.concatenate(blocks, axis=1) if len(pf) else np.zeros((0, len(PRED_COLUMNS) - 2), dtype=object)
    lines = [f"# model={pf.model} tasks={','.join(pf.tasks)}", "\t".join(PRED_COLUMNS)]
    for vid, fid, row in zip(pf.video_ids, pf.frame_ids, body):
        lines.append("\t".join([str(vid), str(int(fid)), *row]))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_predictions(path) -> PredictionFile:
    p = Path(path)
    try:
        lines = p.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"{p}: cannot read prediction file ({exc})") from None
    model, tasks = "", None
    if lines and lines[0].startswith("#"):
        for kv in lines[0][1:].split():
            k, _, v = kv.partition("=")
            if k == "model":
                model = v
            elif k == "tasks":
                tasks = tuple(t for t in v.split(",") if t)
        lines = lines[1:]
    if not lines or tuple(lines[0].split("\t")) != PRED_COLUMNS:
        raise DataError(f"{p}: prediction header must be {' '.join(PRED_COLUMNS)}")
    rows = [ln.split("\t") for ln in lines[1:] if ln]
    if any(len(r) != len(PRED_COLUMNS) for r in rows):
        raise DataError(f"{p}: every row needs {len(PRED_COLUMNS)} columns")
    vids = np.array([r[0] for r in rows], dtype=object)
    fids = np.array([int(r[1]) for r in rows], dtype=np.int64)
    vals = np.array([[np.nan if c == "NA" else float(c) for c in r[2:]] for r in rows],
                    dtype=np.float64).reshape(len(rows), len(PRED_COLUMNS) - 2)
    if tasks is None:
        spans = {"V": vals[:, :1], "A": vals[:, 1:2], "EXPR": vals[:, 2:10], "AU": vals[:, 10:]}
        tasks = tuple(t for t in TASKS if not np.isnan(spans[t]).any())
    vals = np.nan_to_num(vals, nan=0.0)
    pf = PredictionFile(vids, fids, vals[:, 0].copy(), vals[:, 1].copy(), vals[:, 2:10].copy(),
                        vals[:, 10:].copy(), model, tasks)
    pf.validate()
    return pf


def align(files: list[PredictionFile]) -> list[PredictionFile]:
    """Reorder every member to the first member's key order; key sets must agree."""
    if not files:
        raise ConfigError("ensemble needs at least one prediction file")
    ref = files[0].keys()
    ref_set = set(ref)
    out = [files[0]]
    for i, f in enumerate(files[1:], start=1):
        keys = f.keys()
        ks = set(keys)
        if ks != ref_set:
            missing = sorted(ref_set - ks)[:10]
            extra = sorted(ks - ref_set)[:10]
            raise AlignmentError(f"member {i} ({f.model or '?'}) frame keys differ: "
                                 f"missing {missing}, unexpected {extra}")
        pos = {k: j for j, k in enumerate(keys)}
        order = np.array([pos[k] for k in ref], dtype=np.int64)
        out.append(PredictionFile(f.video_ids[order], f.frame_ids[order], f.valence[order],
                                  f.arousal[order], f.expr[order], f.au[order], f.model, f.tasks))
    return out


# -- smoothing ------------------------------------------------------------------


def smooth(series, w: int) -> np.ndarray:
    """Centered moving average of odd width ``w``; windows shrink at the edges."""
    x = np.asarray(series, dtype=np.float64)
    if not isinstance(w, (int, np.integer)) or w < 1 or w % 2 == 0:
        raise ConfigError(f"smoothing window must be a positive odd integer, got {w}")
    if w == 1 or x.size == 0:
        return x.copy()
    h = w // 2
    padded = np.concatenate([np.full(h, np.nan), x, np.full(h, np.nan)])
    return np.nanmean(sliding_window_view(padded, w), axis=1)


def smooth_by_video(values, video_ids, w: int) -> np.ndarray:
    """Smooth each video's contiguous run separately, in the given row order."""
    values = np.asarray(values, dtype=np.float64)
    vids = np.asarray(video_ids)
    out = np.empty_like(values)
    for v in dict.fromkeys(vids.tolist()):
        idx = np.flatnonzero(vids == v)
        out[idx] = smooth(values[idx], w)
    return out


def search_window(series, labels, grid=DEFAULT_WINDOW_GRID, video_ids=None, mask=None) -> tuple[int, float]:
    """Window from ``grid`` maximizing CCC of the smoothed series; ties go to the smaller window.

    Smoothing runs over every frame (per video when ``video_ids`` is given);
    CCC is scored on frames where ``mask`` is set.
    """
    x = np.asarray(series, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    m = np.ones(y.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not len(grid):
        raise ConfigError("window grid is empty")
    if y.size == 0 or not m.any():
        raise UndefinedMetricError("window search needs at least one labelled frame")
    best_w, best = None, -np.inf
    for w in sorted(set(int(g) for g in grid)):
        s = smooth(x, w) if video_ids is None else smooth_by_video(x, video_ids, w)
        score = ccc(s[m], y[m])
        if score > best:
            best_w, best = w, score
    return best_w, float(best)


# -- ensembles ------------------------------------------------------------------


@dataclass
class ClassFrequencyTable:
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (NUM_EXPR,):
            raise ConfigError(f"class frequency table needs {NUM_EXPR} entries, got {self.counts.shape}")
        if np.any(self.counts < 0):
            raise ConfigError("class frequencies must be nonnegative")

    @classmethod
    def from_dataset(cls, dataset) -> "ClassFrequencyTable":
        return cls(dataset.class_frequencies())

    def to_text(self) -> str:
        return "class\tcount\n" + "".join(f"{c}\t{int(n)}\n" for c, n in enumerate(self.counts))

    @classmethod
    def from_text(cls, text: str) -> "ClassFrequencyTable":
        rows = [ln.split("\t") for ln in text.splitlines()[1:] if ln.strip()]
        counts = np.zeros(NUM_EXPR, dtype=np.int64)
        for c, n in rows:
            counts[int(c)] = int(n)
        return cls(counts)


def mean_clamp(members: list[np.ndarray]) -> np.ndarray:
    return np.clip(np.mean(np.stack(members), axis=0), -1.0, 1.0)


def ensemble_regression(files: list[PredictionFile], task: str) -> PredictionFile:
    if task not in ("V", "A"):
        raise ConfigError(f"regression ensemble applies to V or A, not {task}")
    files = align(files)
    return files[0].with_task(task, mean_clamp([f.task_values(task) for f in files]), model="ensemble")


def vote_classes(member_classes: np.ndarray, freq: np.ndarray) -> np.ndarray:
    """Plurality per column of (M, N) class ids; ties go to the rarest class, then the lowest id."""
    m, n = member_classes.shape
    votes = np.zeros((n, NUM_EXPR), dtype=np.int64)
    for row in member_classes:
        votes[np.arange(n), row] += 1
    tied = votes == votes.max(axis=1, keepdims=True)
    rank = np.asarray(freq, dtype=np.int64) * NUM_EXPR + np.arange(NUM_EXPR)
    return np.where(tied, rank[None, :], np.iinfo(np.int64).max).argmin(axis=1)


def ensemble_vote_expr(files: list[PredictionFile], freq: ClassFrequencyTable | None) -> PredictionFile:
    files = align(files)
    if freq is None and len(files) > 1:
        raise ConfigError("expression vote with several members needs a class frequency table")
    counts = freq.counts if freq is not None else np.zeros(NUM_EXPR, dtype=np.int64)
    classes = np.stack([f.expr.argmax(axis=1) for f in files])
    winner = vote_classes(classes, counts)
    return files[0].with_task("EXPR", np.eye(NUM_EXPR)[winner], model="ensemble")


def threshold_f1_table(probs, labels, mask=None, grid=THRESHOLD_GRID) -> np.ndarray:
    """F1 of every (threshold, AU) pair: shape (len(grid), AUs)."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    m = np.ones(y.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    grid = np.asarray(grid, dtype=np.float64)
    out = np.zeros((len(grid), p.shape[1]))
    for i, t in enumerate(grid):
        d = p >= t
        tp = np.sum(d & y & m, axis=0)
        fp = np.sum(d & ~y & m, axis=0)
        fn = np.sum(~d & y & m, axis=0)
        denom = 2 * tp + fp + fn
        out[i] = np.where(denom > 0, 2.0 * tp / np.maximum(denom, 1), 0.0)
    return out


def search_thresholds(probs, labels, mask=None, grid=THRESHOLD_GRID) -> tuple[np.ndarray, np.ndarray]:
    """Per-AU threshold maximizing F1; among equal F1 the threshold nearest 0.5 wins, then the lower."""
    grid = np.asarray(grid, dtype=np.float64)
    table = threshold_f1_table(probs, labels, mask, grid)
    order = np.lexsort((grid, np.abs(grid - 0.5)))  # preference order for ties
    best_idx = np.empty(table.shape[1], dtype=np.int64)
    for j in range(table.shape[1]):
        col = table[order, j]
        best_idx[j] = order[int(np.argmax(col == col.max()))]
    return grid[best_idx], table[best_idx, np.arange(table.shape[1])]


def vote_binary(decisions: np.ndarray) -> np.ndarray:
    """Majority over the member axis of (M, ...) 0/1 decisions; a tie gives 1."""
    d = np.asarray(decisions).astype(np.int64)
    return (2 * d.sum(axis=0) >= d.shape[0]).astype(np.float64)


def ensemble_au(files: list[PredictionFile], strategy: str = "vote", thresholds=None,
                labels=None, mask=None, member_thresholds=0.5) -> tuple[PredictionFile, np.ndarray]:
    """Combine AU predictions into 0/1 decisions.

    ``vote``: each member binarizes at ``member_thresholds``, then per-AU
    majority with ties to 1. ``average``: mean probability binarized at
    ``thresholds`` (12 floats, default 0.5) or, with ``thresholds="search"``,
    at per-AU thresholds searched against ``labels``. Returns the file and the
    thresholds used (member thresholds for ``vote``).
    """
    files = align(files)
    if strategy == "vote":
        thr = np.broadcast_to(np.asarray(member_thresholds, dtype=np.float64), (NUM_AU,)).copy()
        out = vote_binary(np.stack([f.au >= thr for f in files]))
    elif strategy == "average":
        mean = np.mean(np.stack([f.au for f in files]), axis=0)
        if isinstance(thresholds, str):
            if thresholds != "search":
                raise ConfigError(f"unknown threshold mode {thresholds!r}")
            if labels is None:
                raise ConfigError("threshold search needs validation labels")
            thr, _ = search_thresholds(mean, labels, mask)
        else:
            thr = np.broadcast_to(np.asarray(0.5 if thresholds is None else thresholds, dtype=np.float64),
                                  (NUM_AU,)).copy()
        out = (mean >= thr).astype(np.float64)
    else:
        raise ConfigError(f"unknown AU ensemble strategy {strategy!r}")
    return files[0].with_task("AU", out, model="ensemble"), thr
