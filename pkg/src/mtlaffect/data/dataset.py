"""In-memory datasets built from a manifest."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError, LoadError
from ..losses import NUM_EXPR
from .formats import read_features, read_labels, read_manifest


@dataclass
class VideoData:
    video_id: str
    frame_ids: np.ndarray
    features: np.ndarray
    labels: dict[str, np.ndarray]
    masks: dict[str, np.ndarray]

    @property
    def n_frames(self) -> int:
        return int(self.features.shape[0])


@dataclass
class Dataset:
    videos: list[VideoData]
    feature_sets: list[tuple[str, int]] = field(default_factory=list)
    source: Path | None = None

    def __len__(self) -> int:
        return len(self.videos)

    def __iter__(self):
        return iter(self.videos)

    @property
    def input_dim(self) -> int:
        if self.videos:
            return int(self.videos[0].features.shape[1])
        return int(sum(d for _, d in self.feature_sets))

    @property
    def video_ids(self) -> list[str]:
        return [v.video_id for v in self.videos]

    def frame_counts(self) -> dict[str, int]:
        return {v.video_id: v.n_frames for v in self.videos}

    def total_frames(self) -> int:
        return sum(v.n_frames for v in self.videos)

    def subset(self, video_ids) -> "Dataset":
        by_id = {v.video_id: v for v in self.videos}
        missing = [i for i in video_ids if i not in by_id]
        if missing:
            raise DataError(f"unknown video ids {missing[:5]}")
        return Dataset([by_id[i] for i in video_ids], self.feature_sets, self.source)

    def class_frequencies(self) -> np.ndarray:
        """Number of annotated frames per expression class."""
        counts = np.zeros(NUM_EXPR, dtype=np.int64)
        for v in self.videos:
            m = v.masks["EXPR"]
            counts += np.bincount(v.labels["EXPR"][m], minlength=NUM_EXPR)[:NUM_EXPR]
        return counts

    def task_coverage(self) -> dict[str, int]:
        out = {"V": 0, "A": 0, "EXPR": 0, "AU": 0}
        for v in self.videos:
            for t in out:
                m = v.masks[t]
                out[t] += int(m.any(axis=1).sum() if m.ndim == 2 else m.sum())
        return out


def load_dataset(manifest_path, feature_sets: list[str] | None = None) -> Dataset:
    """Load every video of a manifest, concatenating the chosen feature sets column-wise."""
    man = read_manifest(manifest_path)
    available = dict(man.feature_sets)
    chosen = list(feature_sets) if feature_sets else [n for n, _ in man.feature_sets]
    unknown = [n for n in chosen if n not in available]
    if unknown:
        raise LoadError(f"{man.path}: feature sets {unknown} not in manifest {list(available)}")
    videos = []
    for entry in man.videos:
        lab = read_labels(entry.labels)
        if len(lab) != entry.frames:
            raise LoadError(f"{entry.labels}: {len(lab)} label rows but manifest says {entry.frames}")
        mats = []
        for name in chosen:
            f = read_features(entry.features[name])
            if f.shape[0] != entry.frames:
                raise LoadError(f"{entry.features[name]}: {f.shape[0]} rows, expected {entry.frames}")
            if f.shape[1] != available[name]:
                raise LoadError(f"{entry.features[name]}: {f.shape[1]} columns, expected {available[name]}")
            mats.append(f)
        feats = np.concatenate(mats, axis=1) if mats else np.zeros((entry.frames, 0))
        videos.append(VideoData(
            video_id=entry.video_id,
            frame_ids=lab.frame_ids,
            features=feats,
            labels={"V": lab.valence, "A": lab.arousal, "EXPR": lab.expression, "AU": lab.aus},
            masks=lab.masks,
        ))
    return Dataset(videos, [(n, available[n]) for n in chosen], Path(manifest_path))
