"""Evaluation metrics: CCC for valence/arousal, macro-F1 for expression and AUs.

The combined score is ``p_mtl = 0.5 * (ccc_v + ccc_a) + f1_expr + f1_au``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMetricError
from .losses import NUM_AU, NUM_EXPR

METRIC_KEYS = ("ccc_v", "ccc_a", "f1_expr", "f1_au", "p_mtl")


def ccc(preds, labels) -> float:
    """Concordance correlation coefficient with population (1/N) moments."""
    x = np.asarray(preds, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError(f"ccc: {x.size} predictions vs {y.size} labels")
    if x.size == 0:
        raise UndefinedMetricError("ccc of an empty series is undefined")
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    vx, vy = np.mean(dx * dx), np.mean(dy * dy)
    cov = np.mean(dx * dy)
    denom = vx + vy + (mx - my) ** 2
    if denom == 0.0:
        return 1.0 if np.array_equal(x, y) else 0.0
    return float(np.clip(2.0 * cov / denom, -1.0, 1.0))


def _binary_f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def per_class_f1(preds, labels, num_classes: int = NUM_EXPR) -> tuple[np.ndarray, np.ndarray]:
    """F1 per class plus a flag marking classes present in predictions or labels."""
    p = np.asarray(preds).astype(np.int64).ravel()
    y = np.asarray(labels).astype(np.int64).ravel()
    f1 = np.zeros(num_classes)
    present = np.zeros(num_classes, dtype=bool)
    for c in range(num_classes):
        pc, yc = p == c, y == c
        tp = int(np.sum(pc & yc))
        fp = int(np.sum(pc & ~yc))
        fn = int(np.sum(~pc & yc))
        present[c] = bool(pc.any() or yc.any())
        f1[c] = _binary_f1(tp, fp, fn)
    return f1, present


def macro_f1_expr(preds, labels, num_classes: int = NUM_EXPR) -> float:
    """Unweighted mean F1 over classes that occur in predictions or labels."""
    p = np.asarray(preds).ravel()
    y = np.asarray(labels).ravel()
    if p.size != y.size:
        raise ValueError(f"macro_f1_expr: {p.size} predictions vs {y.size} labels")
    if p.size == 0:
        raise UndefinedMetricError("expression F1 of an empty set is undefined")
    f1, present = per_class_f1(p, y, num_classes)
    return float(f1[present].mean())


def per_au_f1(preds, labels, mask=None) -> tuple[np.ndarray, np.ndarray]:
    """Positive-class F1 per AU over unmasked frames, plus a degenerate flag per AU
    (no positive label and no positive prediction, F1 set to 0)."""
    p = np.asarray(preds).astype(bool)
    y = np.asarray(labels).astype(bool)
    m = np.ones(y.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    tp = np.sum(p & y & m, axis=0)
    fp = np.sum(p & ~y & m, axis=0)
    fn = np.sum(~p & y & m, axis=0)
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2.0 * tp / np.maximum(denom, 1), 0.0)
    return f1, denom == 0


def macro_f1_au(preds, labels, mask=None) -> float:
    p = np.asarray(preds)
    y = np.asarray(labels)
    if p.shape != y.shape or p.ndim != 2:
        raise ValueError(f"macro_f1_au: shapes {p.shape} and {y.shape} must match as (N, AUs)")
    m = np.ones(y.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if p.shape[0] == 0 or not m.any():
        raise UndefinedMetricError("AU F1 of an empty set is undefined")
    f1, _ = per_au_f1(p, y, m)
    return float(f1.mean())


def p_mtl(ccc_v: float, ccc_a: float, f1_expr: float, f1_au: float) -> float:
    return 0.5 * (ccc_v + ccc_a) + f1_expr + f1_au


@dataclass
class MetricsReport:
    ccc_v: float | None = None
    ccc_a: float | None = None
    f1_expr: float | None = None
    f1_au: float | None = None
    f1_expr_per_class: list[float] = field(default_factory=list)
    f1_au_per_au: list[float] = field(default_factory=list)
    au_degenerate: list[bool] = field(default_factory=list)
    frames: dict[str, int] = field(default_factory=dict)

    @property
    def p_mtl(self) -> float | None:
        parts = (self.ccc_v, self.ccc_a, self.f1_expr, self.f1_au)
        if any(v is None for v in parts):
            return None
        return p_mtl(*parts)

    def get(self, key: str) -> float | None:
        return self.p_mtl if key == "p_mtl" else getattr(self, key)

    def task_metric(self, task: str) -> float | None:
        return {"V": self.ccc_v, "A": self.ccc_a, "EXPR": self.f1_expr, "AU": self.f1_au}[task]

    def as_dict(self) -> dict[str, float | None]:
        return {k: self.get(k) for k in METRIC_KEYS}

    def to_text(self) -> str:
        """Flat ``key=value`` lines; absent metrics are written as NA."""
        lines = [f"{k}={_fmt(v)}" for k, v in self.as_dict().items()]
        for task, n in sorted(self.frames.items()):
            lines.append(f"frames_{task}={n}")
        for c, v in enumerate(self.f1_expr_per_class):
            lines.append(f"f1_expr_class{c}={_fmt(v)}")
        for j, v in enumerate(self.f1_au_per_au):
            flag = "_degenerate" if self.au_degenerate and self.au_degenerate[j] else ""
            lines.append(f"f1_au{j}{flag}={_fmt(v)}")
        return "\n".join(lines) + "\n"

    def row(self) -> list[str]:
        return [_fmt(v) for v in self.as_dict().values()]


def _fmt(v) -> str:
    return "NA" if v is None else repr(float(v))


def parse_metrics_text(text: str) -> dict[str, float | None]:
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = None if v == "NA" else float(v)
    return out


def evaluate(preds: dict[str, np.ndarray], labels: dict[str, np.ndarray],
             masks: dict[str, np.ndarray], au_threshold=0.5) -> MetricsReport:
    """Score finalized predictions against labels, using only valid-label frames.

    ``preds`` holds V/A values (N,), EXPR probabilities (N, 8) or class ids
    (N,), and AU probabilities (N, 12). Tasks absent from ``preds`` are left
    unset in the report.
    """
    rep = MetricsReport()
    for task, attr in (("V", "ccc_v"), ("A", "ccc_a")):
        if task in preds and masks[task].any():
            m = masks[task]
            setattr(rep, attr, ccc(preds[task][m], labels[task][m]))
            rep.frames[task] = int(m.sum())
    if "EXPR" in preds and masks["EXPR"].any():
        m = masks["EXPR"]
        pe = preds["EXPR"]
        cls = pe.argmax(axis=1) if pe.ndim == 2 else pe
        rep.f1_expr = macro_f1_expr(cls[m], labels["EXPR"][m])
        rep.f1_expr_per_class = per_class_f1(cls[m], labels["EXPR"][m])[0].tolist()
        rep.frames["EXPR"] = int(m.sum())
    if "AU" in preds and masks["AU"].any():
        m = masks["AU"]
        flags = preds["AU"] >= np.asarray(au_threshold)
        rep.f1_au = macro_f1_au(flags, labels["AU"], m)
        f1, degen = per_au_f1(flags, labels["AU"], m)
        rep.f1_au_per_au = f1.tolist()
        rep.au_degenerate = degen.tolist()
        rep.frames["AU"] = int(m.any(axis=1).sum())
    return rep


def mean_report(reports: list[MetricsReport]) -> MetricsReport:
    """Component-wise mean; the p_mtl of the result is p_mtl of the averaged components."""
    out = MetricsReport()
    for attr in ("ccc_v", "ccc_a", "f1_expr", "f1_au"):
        vals = [getattr(r, attr) for r in reports]
        if vals and all(v is not None for v in vals):
            setattr(out, attr, float(np.mean(vals)))
    return out
