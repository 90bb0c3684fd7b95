"""Balanced k-fold partition of videos by video count and frame count."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..errors import ConfigError


@dataclass
class Fold:
    video_ids: list[str]
    n_videos: int
    n_frames: int


@dataclass
class FoldAssignment:
    folds: list[Fold]

    @property
    def k(self) -> int:
        return len(self.folds)

    def fold_of(self) -> dict[str, int]:
        return {v: i for i, f in enumerate(self.folds) for v in f.video_ids}


def split_folds(frame_counts, k: int = 6, seed: int = 0) -> FoldAssignment:
    """Greedy balanced partition.

    Videos are visited longest first (equal lengths in a seeded random order)
    and each goes to the fold whose normalised load, videos/target_videos +
    frames/target_frames after adding it, is smallest.
    """
    if not isinstance(frame_counts, Mapping):
        frame_counts = frame_counts.frame_counts()
    ids = list(frame_counts)
    if k < 2:
        raise ConfigError(f"need k >= 2 folds, got {k}")
    if k > len(ids):
        raise ConfigError(f"cannot split {len(ids)} videos into {k} folds")
    rng = np.random.default_rng(seed)
    shuffled = [ids[i] for i in rng.permutation(len(ids))]
    order = sorted(shuffled, key=lambda v: -frame_counts[v])
    target_v = len(ids) / k
    target_f = max(sum(frame_counts.values()) / k, 1e-12)
    members: list[list[str]] = [[] for _ in range(k)]
    frames = [0] * k
    for vid in order:
        n = frame_counts[vid]
        best = min(range(k), key=lambda f: ((len(members[f]) + 1) / target_v + (frames[f] + n) / target_f,
                                            frames[f], f))
        members[best].append(vid)
        frames[best] += n
    return FoldAssignment([Fold(m, len(m), fr) for m, fr in zip(members, frames)])
