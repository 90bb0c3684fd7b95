"""Share-encoder (SE), shared-bottom (SBE) and shared-bottom with hidden-state
feedback (SBE-HSF) multi-task models, plus the checkpoint format.

SE runs one encoder for all tasks. SBE shares the bottom encoder layers and
gives each task its own top layers. SBE-HSF additionally feeds the per-frame
top-layer outputs of source tasks into the target task's top layers; the
fed-back features are detached so the target loss never trains the source
branches.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, concat, detach, no_grad, softmax
from .autodiff.tensor import _stable_sigmoid
from .encoders import EncoderConfig, build_stack, split_segments
from .errors import ConfigError, LoadError
from .losses import NUM_AU, NUM_EXPR, TASKS
from .nn import Linear, MLPHead, Module, ModuleDict

FRAMEWORKS = ("SE", "SBE", "SBE-HSF")
OUTPUT_DIMS = {"V": 1, "A": 1, "EXPR": NUM_EXPR, "AU": NUM_AU}


@dataclass(frozen=True)
class Feedback:
    src: tuple[str, ...]
    tgt: str


@dataclass
class ModelSpec:
    framework: str
    encoder: EncoderConfig
    tasks: tuple[str, ...]
    shared_layers: int | None = None
    feedback: Feedback | None = None
    head_hidden: tuple[int, ...] = (512, 256)
    loss_weights: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.tasks = tuple(self.tasks)
        self.head_hidden = tuple(self.head_hidden)
        if isinstance(self.feedback, dict):
            self.feedback = Feedback(tuple(self.feedback["src"]), self.feedback["tgt"])
        self.validate()
        self.loss_weights = {t: float(self.loss_weights.get(t, 1.0)) for t in self.tasks}

    def validate(self) -> None:
        if self.framework not in FRAMEWORKS:
            raise ConfigError(f"framework must be one of {FRAMEWORKS}, got {self.framework!r}")
        if not self.tasks:
            raise ConfigError("task set is empty")
        bad = [t for t in self.tasks if t not in TASKS]
        if bad or len(set(self.tasks)) != len(self.tasks):
            raise ConfigError(f"tasks must be distinct members of {TASKS}, got {self.tasks}")
        extra = set(self.loss_weights) - set(self.tasks)
        if extra:
            raise ConfigError(f"loss weights given for unconfigured tasks {sorted(extra)}")
        n = self.encoder.layers
        if self.framework == "SE":
            if self.shared_layers not in (None, n):
                raise ConfigError("SE shares the whole encoder; shared_layers must be unset")
        else:
            if self.shared_layers is None:
                self.shared_layers = n // 2
            if not 0 <= self.shared_layers <= n:
                raise ConfigError(f"shared_layers must be in [0, {n}], got {self.shared_layers}")
        if self.framework == "SBE-HSF":
            fb = self.feedback
            if fb is None:
                raise ConfigError("SBE-HSF needs a feedback edge (src -> tgt)")
            if not fb.src:
                raise ConfigError("feedback edge needs at least one source task")
            if fb.tgt in fb.src:
                raise ConfigError(f"feedback target {fb.tgt} cannot also be a source")
            missing = [t for t in (*fb.src, fb.tgt) if t not in self.tasks]
            if missing:
                raise ConfigError(f"feedback tasks {missing} are not in the task set")
        elif self.feedback is not None:
            raise ConfigError("a feedback edge is only valid for the SBE-HSF framework")

    @property
    def top_layers(self) -> int:
        return 0 if self.framework == "SE" else self.encoder.layers - self.shared_layers

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tasks"] = list(self.tasks)
        d["head_hidden"] = list(self.head_hidden)
        if self.feedback is not None:
            d["feedback"] = {"src": list(self.feedback.src), "tgt": self.feedback.tgt}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["encoder"] = EncoderConfig(**d["encoder"])
        return cls(**d)

    def digest(self) -> bytes:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).digest()


class MultiTaskModel(Module):
    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        enc = spec.encoder
        D = enc.input_dim
        if spec.framework == "SE":
            self.bottom = build_stack(enc, D, enc.layers, rng, project=True, carry_prefix="bottom.")
            self.tops = None
        else:
            self.bottom = build_stack(enc, D, spec.shared_layers, rng, project=True,
                                      carry_prefix="bottom.")
        base = self.bottom.out_dim
        self.feedback = None
        branch_out: dict[str, int] = {}
        if spec.framework != "SE":
            self.tops = ModuleDict()
            order = self.task_order()
            fb = spec.feedback
            for t in order:
                in_dim = base
                if fb is not None and t == fb.tgt and enc.kind != "TRM":
                    in_dim = base + sum(branch_out[s] for s in fb.src)
                self.tops[t] = build_stack(enc, in_dim, spec.top_layers, rng, project=False,
                                           carry_prefix=f"top.{t}.")
                branch_out[t] = self.tops[t].out_dim
            if fb is not None and enc.kind == "TRM":
                self.feedback = Linear(sum(branch_out[s] for s in fb.src), base, rng)
        self.heads = ModuleDict()
        for t in spec.tasks:
            in_dim = base if spec.framework == "SE" else branch_out[t]
            self.heads[t] = MLPHead(in_dim, spec.head_hidden, OUTPUT_DIMS[t], enc.dropout, rng)

    def task_order(self) -> list[str]:
        """Tasks in evaluation order: the feedback target last."""
        fb = self.spec.feedback
        if fb is None:
            return list(self.spec.tasks)
        return [t for t in self.spec.tasks if t != fb.tgt] + [fb.tgt]

    def parameter_groups(self) -> dict[str, list[Tensor]]:
        """Named parameter groups: 'bottom', 'top.<t>', 'head.<t>', 'feedback'."""
        groups = {"bottom": self.bottom.parameters()}
        if self.tops is not None:
            for t, m in self.tops.items():
                groups[f"top.{t}"] = m.parameters()
        for t, m in self.heads.items():
            groups[f"head.{t}"] = m.parameters()
        if self.feedback is not None:
            groups["feedback"] = self.feedback.parameters()
        return groups

    def zero_carry(self, batch: int) -> dict:
        carry = self.bottom.zero_carry(batch)
        if self.tops is not None:
            for m in self.tops._modules.values():
                carry.update(m.zero_carry(batch))
        return carry

    def forward(self, features, mask, carry: dict | None = None, training: bool = False,
                rng=None) -> tuple[dict[str, Tensor], dict]:
        x = features if isinstance(features, Tensor) else Tensor(features)
        mask = np.asarray(mask, dtype=bool)
        if self.spec.framework == "SE":
            return forward_se(self, x, mask, carry, training, rng)
        if self.spec.framework == "SBE":
            return forward_sbe(self, x, mask, carry, training, rng)
        return forward_sbe_hsf(self, x, mask, carry, training, rng)

    __call__ = forward


def _heads(model: MultiTaskModel, feats: dict[str, Tensor], training, rng) -> dict[str, Tensor]:
    return {t: model.heads[t](feats[t], training, rng) for t in model.spec.tasks}


def forward_se(model, x, mask, carry=None, training=False, rng=None):
    g, new = model.bottom(x, mask, carry, training, rng)
    return _heads(model, {t: g for t in model.spec.tasks}, training, rng), new


def forward_sbe(model, x, mask, carry=None, training=False, rng=None):
    g, new = model.bottom(x, mask, carry, training, rng)
    feats = {}
    for t in model.task_order():
        feats[t], c = model.tops[t](g, mask, carry, training, rng)
        new.update(c)
    return _heads(model, feats, training, rng), new


def forward_sbe_hsf(model, x, mask, carry=None, training=False, rng=None):
    fb = model.spec.feedback
    g, new = model.bottom(x, mask, carry, training, rng)
    feats = {}
    for t in model.task_order():
        if t != fb.tgt:
            feats[t], c = model.tops[t](g, mask, carry, training, rng)
        else:
            src = detach(concat([feats[s] for s in fb.src], axis=-1))
            if model.feedback is not None:
                inp = g + model.feedback(src)
            else:
                inp = concat([g, src], axis=-1)
            feats[t], c = model.tops[t](inp, mask, carry, training, rng)
        new.update(c)
    return _heads(model, feats, training, rng), new


def build_model(spec: ModelSpec, seed: int | np.random.Generator = 0) -> MultiTaskModel:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return MultiTaskModel(spec, rng)


# -- inference -------------------------------------------------------------------


def predict_video(model: MultiTaskModel, features: np.ndarray, segment_length: int) -> dict[str, np.ndarray]:
    """Raw per-frame outputs for one video, threading recurrent carry across segments."""
    plan = split_segments(features.shape[0], segment_length)
    outs: dict[str, list[np.ndarray]] = {t: [] for t in model.spec.tasks}
    carry = model.zero_carry(1)
    with no_grad():
        for a, b in plan.segments:
            x = features[a:b][None]
            res, carry = model.forward(x, np.ones((1, b - a), dtype=bool), carry)
            for t, y in res.items():
                outs[t].append(y.data[0])
    dims = OUTPUT_DIMS
    return {t: (np.concatenate(v, axis=0) if v else np.zeros((0, dims[t]))) for t, v in outs.items()}


def finalize_outputs(raw: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Inference transforms: clamp V/A to [-1, 1], softmax EXPR, sigmoid AU."""
    out = {}
    for t, y in raw.items():
        if t in ("V", "A"):
            out[t] = np.clip(y[:, 0], -1.0, 1.0)
        elif t == "EXPR":
            out[t] = softmax(Tensor(y), axis=-1).data
        else:
            out[t] = _stable_sigmoid(y)
    return out


# -- checkpoints -------------------------------------------------------------------

CKPT_MAGIC = b"MTLA"
CKPT_VERSION = 1


def save_checkpoint(path, model: MultiTaskModel, state: dict[str, np.ndarray] | None = None) -> None:
    """Header (magic, version, spec digest, count) then (name, shape, float64 LE) blobs."""
    state = state if state is not None else model.state_dict()
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION), model.spec.digest(),
             struct.pack("<I", len(state))]
    for name, arr in state.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path) -> tuple[bytes, dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise LoadError(f"{path}: cannot read checkpoint ({exc})") from None
    if raw[:4] != CKPT_MAGIC:
        raise LoadError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CKPT_VERSION:
        raise LoadError(f"{path}: unsupported checkpoint version {version}")
    digest = raw[8:40]
    (count,) = struct.unpack_from("<I", raw, 40)
    off = 44
    state = {}
    try:
        for _ in range(count):
            (nl,) = struct.unpack_from("<I", raw, off)
            name = raw[off + 4: off + 4 + nl].decode("utf-8")
            off += 4 + nl
            (ndim,) = struct.unpack_from("<I", raw, off)
            shape = struct.unpack_from(f"<{ndim}I", raw, off + 4)
            off += 4 + 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            state[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
            off += 8 * size
    except (struct.error, ValueError) as exc:
        raise LoadError(f"{path}: truncated checkpoint ({exc})") from None
    return digest, state


def load_checkpoint(path, spec: ModelSpec) -> MultiTaskModel:
    digest, state = read_checkpoint(path)
    if digest != spec.digest():
        raise ConfigError(f"{path}: checkpoint spec digest does not match the configured model")
    model = build_model(spec, 0)
    model.load_state_dict(state)
    return model
