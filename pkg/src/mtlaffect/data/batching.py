"""Segment-stream batching.

``B`` streams each walk one video at a time, segment by segment, so the
recurrent carry of a stream is always the state at the end of that video's
previous segment. When a stream exhausts its video it pulls the next one from
the shuffled queue and flags a reset.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from ..encoders import split_segments
from ..losses import NUM_AU, TASKS
from .dataset import Dataset


@dataclass
class Batch:
    features: np.ndarray          # (B, L, D), zero padded
    frame_mask: np.ndarray        # (B, L) bool
    labels: dict[str, np.ndarray]
    masks: dict[str, np.ndarray]  # label validity, already ANDed with frame_mask
    stream_ids: np.ndarray        # (B,) stream index owning each row
    reset: np.ndarray             # (B,) True on the first segment of a video
    video_ids: list[str]
    spans: list[tuple[int, int]]  # frame index range [start, stop) per row

    @property
    def size(self) -> int:
        return int(self.features.shape[0])


def _label_arrays(b: int, length: int) -> tuple[dict, dict]:
    labels = {"V": np.zeros((b, length)), "A": np.zeros((b, length)),
              "EXPR": np.zeros((b, length), dtype=np.int64), "AU": np.zeros((b, length, NUM_AU))}
    masks = {t: np.zeros(labels[t].shape, dtype=bool) for t in TASKS}
    return labels, masks


def make_batches(dataset: Dataset, segment_length: int, batch_size: int, rng=None, shuffle: bool = True):
    """Yield :class:`Batch` objects covering every frame of ``dataset`` once.

    ``rng`` (a Generator or int seed) shuffles the video order; ``shuffle=False``
    keeps manifest order.
    """
    if segment_length < 1 or batch_size < 1:
        raise ValueError("segment_length and batch_size must be >= 1")
    videos = [v for v in dataset.videos if v.n_frames > 0]
    if shuffle:
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        videos = [videos[i] for i in rng.permutation(len(videos))]
    queue = deque(videos)
    # per stream: [video, segment list, next segment index]
    streams: list[list | None] = [None] * batch_size
    dim = dataset.input_dim
    while True:
        rows = []
        for s in range(batch_size):
            st = streams[s]
            reset = False
            if st is None or st[2] >= len(st[1]):
                if not queue:
                    streams[s] = None
                    continue
                v = queue.popleft()
                st = streams[s] = [v, split_segments(v.n_frames, segment_length, v.video_id).segments, 0]
                reset = True
            seg = st[1][st[2]]
            st[2] += 1
            rows.append((s, st[0], seg, reset))
        if not rows:
            return
        length = max(b - a for _, _, (a, b), _ in rows)
        b = len(rows)
        feats = np.zeros((b, length, dim))
        fmask = np.zeros((b, length), dtype=bool)
        labels, masks = _label_arrays(b, length)
        for i, (_, v, (a, z), _) in enumerate(rows):
            n = z - a
            seg = slice(a, z)
            feats[i, :n] = v.features[seg]
            fmask[i, :n] = True
            for t in TASKS:
                labels[t][i, :n] = v.labels[t][seg]
                masks[t][i, :n] = v.masks[t][seg]
        yield Batch(
            features=feats, frame_mask=fmask, labels=labels, masks=masks,
            stream_ids=np.array([r[0] for r in rows], dtype=np.int64),
            reset=np.array([r[3] for r in rows], dtype=bool),
            video_ids=[r[1].video_id for r in rows],
            spans=[r[2] for r in rows],
        )
