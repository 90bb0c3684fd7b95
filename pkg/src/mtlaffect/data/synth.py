"""Synthetic affect dataset generator.

Each video follows a smooth latent trajectory (AR(1) per latent dimension).
Features are fixed linear mixes of the latents plus Gaussian noise, one mix
per feature set. Labels are read out of the same latents: V/A through a
tanh-bounded projection, EXPR as the argmax of an 8-way linear readout, and
AUs as thresholded readouts that also depend on the expression class, so the
tasks share structure. Expression readouts are weighted towards the
valence/arousal directions (classes laid out on a circle in that plane).
Each label type is dropped per frame at a configured rate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..losses import NUM_AU, NUM_EXPR
from .formats import (AU_MISSING, EXPR_MISSING, VA_MISSING, ManifestEntry, write_features,
                      write_labels, write_manifest)

DEFAULT_FEATURE_DIMS = (("mae", 48), ("ires", 32), ("dense", 16))
DEFAULT_MISSING = {"V": 0.1, "A": 0.1, "EXPR": 0.8, "AU": 0.3}


@dataclass
class SynthSpec:
    videos: int = 50
    frames: int = 200
    frames_spread: float = 0.0   # relative spread of per-video lengths, uniform in +-spread
    feature_dims: tuple[tuple[str, int], ...] = DEFAULT_FEATURE_DIMS
    latent_dim: int = 6
    smoothness: float = 0.95     # AR(1) coefficient of the latent trajectories
    noise: float = 1.0
    expr_circumplex: float = 4.0  # weight of the valence/arousal part of the expression readout
    missing: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_MISSING))
    seed: int = 0

    def validate(self) -> None:
        if self.videos < 1:
            raise ConfigError(f"synthetic dataset needs at least one video, got {self.videos}")
        if self.frames < 1:
            raise ConfigError(f"frames per video must be >= 1, got {self.frames}")
        if not 0.0 <= self.frames_spread < 1.0:
            raise ConfigError("frames_spread must lie in [0, 1)")
        if self.latent_dim < 1 or not self.feature_dims or any(d < 1 for _, d in self.feature_dims):
            raise ConfigError("latent_dim and every feature dim must be positive")
        if not 0.0 <= self.smoothness < 1.0:
            raise ConfigError("smoothness must lie in [0, 1)")
        if self.noise < 0 or self.expr_circumplex < 0:
            raise ConfigError("noise and expr_circumplex must be >= 0")
        for t, r in self.missing.items():
            if t not in DEFAULT_MISSING or not 0.0 <= r <= 1.0:
                raise ConfigError(f"bad missing rate {t}={r}")


@dataclass
class SynthVideo:
    video_id: str
    latents: np.ndarray
    features: dict[str, np.ndarray]
    valence: np.ndarray
    arousal: np.ndarray
    expression: np.ndarray
    aus: np.ndarray
    frame_ids: np.ndarray


class _World:
    """Readout parameters shared by every video of one dataset."""

    def __init__(self, spec: SynthSpec, rng: np.random.Generator):
        k = spec.latent_dim
        self.mix = {n: rng.normal(0.0, 1.0, (k, d)) for n, d in spec.feature_dims}
        self.a_v = _unit(rng.normal(size=k))
        self.a_a = _unit(rng.normal(size=k))
        # expression prototypes sit on a circle in the valence/arousal plane
        angles = 2.0 * np.pi * np.arange(NUM_EXPR) / NUM_EXPR
        circ = np.outer(self.a_v, np.cos(angles)) + np.outer(self.a_a, np.sin(angles))
        self.w_expr = spec.expr_circumplex * circ + rng.normal(0.0, 1.0, (k, NUM_EXPR))
        self.w_au = rng.normal(0.0, 0.6, (k, NUM_AU))
        self.expr_au = rng.choice([-1.0, 0.0, 1.0], size=(NUM_EXPR, NUM_AU), p=[0.3, 0.4, 0.3])


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _video(spec: SynthSpec, world: _World, idx: int, n: int, rng: np.random.Generator) -> SynthVideo:
    k, rho = spec.latent_dim, spec.smoothness
    z = np.empty((n, k))
    z[0] = rng.normal(size=k)
    step = np.sqrt(1.0 - rho * rho)
    for t in range(1, n):
        z[t] = rho * z[t - 1] + step * rng.normal(size=k)
    feats = {name: z @ m + spec.noise * rng.normal(size=(n, m.shape[1])) for name, m in world.mix.items()}
    val = np.tanh(0.8 * z @ world.a_v)
    aro = np.tanh(0.8 * z @ world.a_a)
    expr = np.argmax(z @ world.w_expr, axis=1)
    au_logit = z @ world.w_au + 1.2 * world.expr_au[expr]
    aus = (au_logit > 0.0).astype(np.int64)
    frame_ids = np.cumsum(rng.integers(1, 3, size=n))
    drop = {t: rng.random(n) < spec.missing.get(t, 0.0) for t in DEFAULT_MISSING}
    val = np.where(drop["V"], VA_MISSING, val)
    aro = np.where(drop["A"], VA_MISSING, aro)
    expr = np.where(drop["EXPR"], EXPR_MISSING, expr)
    aus = np.where(drop["AU"][:, None], AU_MISSING, aus)
    return SynthVideo(f"vid{idx:04d}", z, feats, val, aro, expr, aus, frame_ids)


def synth_videos(spec: SynthSpec) -> list[SynthVideo]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    world = _World(spec, rng)
    lo = max(1, int(round(spec.frames * (1 - spec.frames_spread))))
    hi = max(lo, int(round(spec.frames * (1 + spec.frames_spread))))
    lengths = rng.integers(lo, hi + 1, size=spec.videos) if hi > lo else np.full(spec.videos, lo)
    return [_video(spec, world, i, int(n), rng) for i, n in enumerate(lengths)]


def synth_generate(spec: SynthSpec, out_dir) -> Path:
    """Write a synthetic dataset; returns the manifest path."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    entries = []
    for v in synth_videos(spec):
        lab = out / "labels" / f"{v.video_id}.tsv"
        write_labels(lab, v.frame_ids, v.valence, v.arousal, v.expression, v.aus)
        paths = {}
        for name, mat in v.features.items():
            paths[name] = out / "features" / name / f"{v.video_id}.mtlf"
            write_features(paths[name], mat)
        entries.append(ManifestEntry(v.video_id, len(v.frame_ids), lab, paths))
    manifest = out / "manifest.tsv"
    write_manifest(manifest, list(spec.feature_dims), entries)
    return manifest
