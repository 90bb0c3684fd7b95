"""Command-line entry point.

Verbs: ``synth``, ``train``, ``eval``, ``ensemble``, ``cv``. Every verb takes
``--config PATH`` (YAML, validated first), ``--seed N``, ``--out DIR`` and
``--threads N`` and writes the fully resolved config to ``DIR/config.yaml``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .data import Dataset, load_dataset, split_folds, synth_generate
from .errors import AlignmentError, ConfigError, MTLError
from .frameworks import load_checkpoint
from .losses import TASKS
from .metrics import METRIC_KEYS, MetricsReport, evaluate, mean_report
from .postprocess import (ClassFrequencyTable, PredictionFile, align, ensemble_au, ensemble_regression,
                          ensemble_vote_expr, read_predictions, search_window, smooth_by_video,
                          write_predictions)
from .training import default_segment_length, fit, predict_dataset

log = logging.getLogger("mtlaffect")


# -- helpers -----------------------------------------------------------------------


def _out_dir(cfg: RunConfig) -> Path:
    if cfg.out is None:
        raise ConfigError("an output directory is required (--out or 'out' in the config)")
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


def echo_config(cfg: RunConfig, out: Path) -> None:
    (out / "config.yaml").write_text(cfg.to_yaml(), encoding="utf-8")


def _dataset(cfg: RunConfig, manifest=None) -> Dataset:
    path = manifest or cfg.dataset.manifest
    if path is None:
        raise ConfigError("no dataset manifest configured (dataset.manifest)")
    return load_dataset(path, cfg.dataset.feature_sets)


def train_val_split(cfg: RunConfig, ds: Dataset) -> tuple[Dataset, Dataset | None]:
    """Explicit ``val_videos`` or a seeded ``val_fraction`` of videos; fraction 0 trains on everything."""
    ids = ds.video_ids
    if cfg.dataset.val_videos is not None:
        val = list(cfg.dataset.val_videos)
    else:
        n_val = int(round(len(ids) * cfg.dataset.val_fraction))
        perm = np.random.default_rng(cfg.cv.seed).permutation(len(ids))
        val = [ids[i] for i in sorted(perm[:n_val])]
    vset = set(val)
    train = [v for v in ids if v not in vset]
    if not train:
        raise ConfigError("validation split leaves no training videos")
    return ds.subset(train), (ds.subset(val) if val else None)


def metrics_table(rows: list[tuple[str, MetricsReport | dict]]) -> str:
    lines = ["\t".join(["run", *METRIC_KEYS])]
    for name, rep in rows:
        vals = rep.as_dict() if isinstance(rep, MetricsReport) else rep
        lines.append("\t".join([name, *("NA" if vals.get(k) is None else repr(float(vals[k])) for k in METRIC_KEYS)]))
    return "\n".join(lines) + "\n"


def write_log(path: Path, result) -> None:
    lines = ["\t".join(["epoch", "loss", *METRIC_KEYS])]
    for h in result.history:
        vals = h.report.as_dict() if h.report is not None else {}
        lines.append("\t".join([str(h.epoch), repr(h.loss),
                                *("NA" if vals.get(k) is None else repr(vals[k]) for k in METRIC_KEYS)]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def labels_for(pf: PredictionFile, ds: Dataset) -> tuple[dict, dict]:
    """Labels and masks of ``ds`` rearranged into the row order of ``pf``."""
    index = {}
    for v in ds.videos:
        for j, f in enumerate(v.frame_ids.tolist()):
            index[(v.video_id, f)] = (v, j)
    missing = [k for k in pf.keys() if k not in index]
    if missing:
        raise AlignmentError(f"labels missing for {len(missing)} prediction rows, e.g. {missing[:5]}")
    rows = [index[k] for k in pf.keys()]
    labels = {t: np.array([v.labels[t][j] for v, j in rows]) for t in TASKS}
    masks = {t: np.array([v.masks[t][j] for v, j in rows], dtype=bool) for t in TASKS}
    if not rows:
        labels = {t: np.zeros((0, 12)) if t == "AU" else np.zeros(0) for t in TASKS}
        masks = {t: labels[t].astype(bool) for t in TASKS}
    return labels, masks


def apply_smoothing(pf: PredictionFile, cfg: RunConfig, labels=None, masks=None) -> tuple[PredictionFile, dict]:
    """Smooth V/A columns per video; returns the file and the windows used."""
    used = {}
    if not cfg.smoothing.enabled:
        return pf, used
    for t, w in cfg.smoothing.windows.items():
        if t not in pf.tasks:
            continue
        if w == "search":
            if labels is None:
                raise ConfigError("smoothing window search needs labels")
            w, _ = search_window(pf.task_values(t), labels[t], cfg.smoothing.grid, pf.video_ids, masks[t])
        pf = pf.with_task(t, smooth_by_video(pf.task_values(t), pf.video_ids, int(w)))
        used[t] = int(w)
    return pf, used


def run_eval(pf: PredictionFile, ds: Dataset) -> MetricsReport:
    labels, masks = labels_for(pf, ds)
    return evaluate(pf.as_preds(), labels, masks)


# -- verbs -------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, seed: int) -> Path:
    out = _out_dir(cfg)
    manifest = synth_generate(cfg.synth_spec(seed), out)
    echo_config(cfg, out)
    return manifest


def cmd_train(cfg: RunConfig) -> tuple[list[MetricsReport], Path]:
    out = _out_dir(cfg)
    echo_config(cfg, out)
    ds = _dataset(cfg)
    train_set, val_set = train_val_split(cfg, ds)
    spec = cfg.model_spec(ds.input_dim)
    schedule = cfg.train_schedule()
    (out / "class_freq.tsv").write_text(ClassFrequencyTable.from_dataset(train_set).to_text(), encoding="utf-8")
    reports, rows = [], []
    for seed in cfg.seeds:
        run_dir = out / f"seed_{seed}"
        result = fit(spec, train_set, val_set, schedule, seed, run_dir)
        write_log(run_dir / "log.tsv", result)
        if val_set is not None:
            pf = predict_dataset(result.model, val_set, result.segment_length, tag=f"seed_{seed}")
            write_predictions(run_dir / "predictions.tsv", pf)
            rep = result.final_report
            (run_dir / "metrics.txt").write_text(rep.to_text(), encoding="utf-8")
            reports.append(rep)
            rows.append((f"seed_{seed}", rep))
    if rows:
        rows.append(("mean", mean_report(reports)))
        (out / "metrics.tsv").write_text(metrics_table(rows), encoding="utf-8")
    return reports, out


def _eval_subset(cfg: RunConfig, ds: Dataset, split: str) -> Dataset:
    if split == "all":
        return ds
    train_set, val_set = train_val_split(cfg, ds)
    if split == "train":
        return train_set
    if val_set is None:
        raise ConfigError("the configured split has no validation videos")
    return val_set


def cmd_eval(cfg: RunConfig, checkpoint, split: str = "all", manifest=None) -> tuple[MetricsReport, Path]:
    out = _out_dir(cfg)
    echo_config(cfg, out)
    ds = _dataset(cfg, manifest)
    subset = _eval_subset(cfg, ds, split)
    spec = cfg.model_spec(ds.input_dim)
    model = load_checkpoint(checkpoint, spec)
    seg = cfg.schedule.segment_length or default_segment_length(spec)
    pf = predict_dataset(model, subset, seg, tag=Path(checkpoint).stem)
    labels, masks = labels_for(pf, subset)
    pf, windows = apply_smoothing(pf, cfg, labels, masks)
    write_predictions(out / "predictions.tsv", pf)
    rep = evaluate(pf.as_preds(), labels, masks)
    text = rep.to_text() + "".join(f"window_{t}={w}\n" for t, w in windows.items())
    (out / "metrics.txt").write_text(text, encoding="utf-8")
    return rep, out


def ensemble_predictions(files: list[PredictionFile], cfg: RunConfig, freq: ClassFrequencyTable | None,
                         labels=None, masks=None) -> tuple[PredictionFile, dict]:
    """Apply the configured per-task strategies; returns the file and a record of choices."""
    files = align(files)
    info: dict = {"members": len(files), "smoothing_order": cfg.smoothing.order}
    tasks = [t for t in TASKS if all(t in f.tasks for f in files)]
    if cfg.smoothing.enabled and cfg.smoothing.order == "before_ensemble":
        files = [apply_smoothing(f, cfg, labels, masks)[0] for f in files]
    result = files[0]
    for t in ("V", "A"):
        if t in tasks:
            result = result.with_task(t, ensemble_regression(files, t).task_values(t))
    if "EXPR" in tasks:
        result = result.with_task("EXPR", ensemble_vote_expr(files, freq).expr)
    if "AU" in tasks:
        e = cfg.ensemble
        thr = "search" if e.au_thresholds == "search" else (
            e.member_threshold if e.au_thresholds == "fixed" else e.au_thresholds)
        au_labels = None if labels is None else labels["AU"]
        au_mask = None if masks is None else masks["AU"]
        if thr == "search" and au_labels is None:
            raise ConfigError("AU threshold search needs labels")
        au_pf, used = ensemble_au(files, e.au_strategy, thr, au_labels, au_mask, e.member_threshold)
        result = result.with_task("AU", au_pf.au)
        info["au_thresholds"] = [float(x) for x in used]
    result = PredictionFile(result.video_ids, result.frame_ids, result.valence, result.arousal,
                            result.expr, result.au, "ensemble", tuple(tasks))
    if cfg.smoothing.enabled and cfg.smoothing.order == "after_ensemble":
        result, info["windows"] = apply_smoothing(result, cfg, labels, masks)
    return result, info


def _frequencies(cfg: RunConfig, ds: Dataset | None) -> ClassFrequencyTable | None:
    if cfg.ensemble.frequencies is not None:
        try:
            return ClassFrequencyTable.from_text(Path(cfg.ensemble.frequencies).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read class frequencies: {exc}") from None
    return ClassFrequencyTable.from_dataset(ds) if ds is not None else None


def cmd_ensemble(cfg: RunConfig, inputs: list, manifest=None) -> tuple[MetricsReport | None, Path]:
    out = _out_dir(cfg)
    echo_config(cfg, out)
    files = [read_predictions(p) for p in inputs]
    if not files:
        raise ConfigError("ensemble needs at least one prediction file")
    ds = _dataset(cfg, manifest) if (manifest or cfg.dataset.manifest) else None
    labels = masks = None
    if ds is not None:
        labels, masks = labels_for(align(files)[0], ds)
    result, info = ensemble_predictions(files, cfg, _frequencies(cfg, ds), labels, masks)
    write_predictions(out / "predictions.tsv", result)
    (out / "ensemble.txt").write_text("".join(f"{k}={v}\n" for k, v in info.items()), encoding="utf-8")
    rep = None
    if labels is not None:
        rep = evaluate(result.as_preds(), labels, masks)
        (out / "metrics.txt").write_text(rep.to_text(), encoding="utf-8")
    return rep, out


def cmd_cv(cfg: RunConfig) -> tuple[list[MetricsReport], Path]:
    out = _out_dir(cfg)
    echo_config(cfg, out)
    ds = _dataset(cfg)
    k = cfg.cv.k
    folds = split_folds(ds, k, cfg.cv.seed)
    (out / "folds.tsv").write_text(
        "video_id\tfold\n" + "".join(f"{v}\t{i}\n" for i, f in enumerate(folds.folds) for v in f.video_ids),
        encoding="utf-8")
    spec = cfg.model_spec(ds.input_dim)
    schedule = cfg.train_schedule()
    seed = cfg.seeds[0]
    eval_ds = load_dataset(cfg.cv.eval_manifest, cfg.dataset.feature_sets) if cfg.cv.eval_manifest else None
    reports, members = [], []
    for i, fold in enumerate(folds.folds):
        held = set(fold.video_ids)
        train_set = ds.subset([v for v in ds.video_ids if v not in held])
        val_set = ds.subset(fold.video_ids)
        fold_dir = out / f"fold_{i + 1}"
        result = fit(spec, train_set, val_set, schedule, seed, fold_dir)
        write_log(fold_dir / "log.tsv", result)
        pf = predict_dataset(result.model, val_set, result.segment_length, tag=f"fold_{i + 1}")
        write_predictions(fold_dir / "predictions.tsv", pf)
        rep = result.final_report
        (fold_dir / "metrics.txt").write_text(rep.to_text(), encoding="utf-8")
        reports.append(rep)
        if cfg.cv.ensemble and eval_ds is not None:
            epf = predict_dataset(result.model, eval_ds, result.segment_length, tag=f"fold_{i + 1}")
            write_predictions(fold_dir / "eval_predictions.tsv", epf)
            members.append(epf)
    rows: list = [(f"fold_{i + 1}", r) for i, r in enumerate(reports)]
    comp = mean_report(reports)
    rows.append(("mean_components", comp))
    p_vals = [r.p_mtl for r in reports]
    mean_p = {key: comp.get(key) for key in METRIC_KEYS}
    mean_p["p_mtl"] = float(np.mean(p_vals)) if all(p is not None for p in p_vals) else None
    rows.append(("mean_p_mtl", mean_p))
    (out / "cv_metrics.tsv").write_text(metrics_table(rows), encoding="utf-8")
    if members:
        labels, masks = labels_for(align(members)[0], eval_ds)
        result_pf, info = ensemble_predictions(members, cfg, ClassFrequencyTable.from_dataset(ds), labels, masks)
        ens_dir = out / "ensemble"
        ens_dir.mkdir(exist_ok=True)
        write_predictions(ens_dir / "predictions.tsv", result_pf)
        (ens_dir / "metrics.txt").write_text(evaluate(result_pf.as_preds(), labels, masks).to_text(),
                                             encoding="utf-8")
    return reports, out


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config")
    common.add_argument("--seed", type=int, help="seed (replaces the config's seed list)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="BLAS thread limit")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="mtlaffect", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p = sub.add_parser("train", parents=[common], help="train once per configured seed")
    p.add_argument("--manifest", help="dataset manifest (overrides dataset.manifest)")
    p = sub.add_parser("eval", parents=[common], help="predict and score a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest")
    p.add_argument("--split", choices=("all", "train", "val"), default="all")
    p = sub.add_parser("ensemble", parents=[common], help="combine prediction files")
    p.add_argument("inputs", nargs="+", help="prediction TSV files")
    p.add_argument("--manifest", help="labelled dataset for scoring and threshold search")
    p = sub.add_parser("cv", parents=[common], help="k-fold cross-validation")
    p.add_argument("--manifest")
    p.add_argument("--k", type=int)
    return parser


def _threads(n: int | None):
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    updates: dict = {}
    if args.out is not None:
        updates["out"] = args.out
    if args.threads is not None:
        updates["threads"] = args.threads
    if args.seed is not None:
        updates["seeds"] = [args.seed]
    if getattr(args, "manifest", None) and args.verb in ("train", "cv"):
        updates["dataset"] = cfg.dataset.model_copy(update={"manifest": args.manifest})
    if getattr(args, "k", None) is not None:
        updates["cv"] = cfg.cv.model_copy(update={"k": args.k})
    if updates:
        cfg = RunConfig.model_validate({**cfg.model_dump(), **{k: (v.model_dump() if hasattr(v, "model_dump") else v)
                                                             for k, v in updates.items()}})
    with _threads(cfg.threads):
        if args.verb == "synth":
            print(cmd_synth(cfg, cfg.seeds[0]))
        elif args.verb == "train":
            _, out = cmd_train(cfg)
            _print_if(out / "metrics.tsv")
        elif args.verb == "eval":
            rep, _ = cmd_eval(cfg, args.checkpoint, args.split, args.manifest)
            sys.stdout.write(rep.to_text())
        elif args.verb == "ensemble":
            rep, out = cmd_ensemble(cfg, args.inputs, args.manifest)
            print(out / "predictions.tsv")
            if rep is not None:
                sys.stdout.write(rep.to_text())
        else:
            _, out = cmd_cv(cfg)
            _print_if(out / "cv_metrics.tsv")
    return 0


def _print_if(path: Path) -> None:
    if path.exists():
        sys.stdout.write(path.read_text(encoding="utf-8"))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return run(args)
    except MTLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
