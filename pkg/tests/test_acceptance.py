"""End-to-end acceptance checks, one test and one verdict line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the verdict lines as they
are produced; they are also repeated in the terminal summary.
"""
import numpy as np
import pytest
import yaml

from mtlaffect.autodiff import (Tensor, check_gradients, concat, detach, dropout, layer_norm, relu, sigmoid,
                                softmax, stack, tanh)
from mtlaffect.cli import main
from mtlaffect.data import SynthSpec, split_folds, synth_videos
from mtlaffect.encoders import (MultiHeadAttention, RecurrentStack, gru_forward, gru_recurrence, lstm_forward,
                                lstm_recurrence, split_segments)
from mtlaffect.frameworks import predict_video
from mtlaffect.losses import bce_loss, ce_loss, mse_loss, multi_task_loss
from mtlaffect.metrics import ccc, macro_f1_au, macro_f1_expr, p_mtl
from mtlaffect.nn import Linear, MLPHead
from mtlaffect.postprocess import search_thresholds, vote_binary, vote_classes
from mtlaffect.training import fit

from _oracles import threshold_oracle, vote_au_oracle, vote_expr_oracle
from _util import (FEEDBACK_EDGES, desk_schedule, desk_spec, model_gradcheck, random_targets, task_loss, toy_model,
                   total_loss, verdict)

# -- P_MTL arithmetic -------------------------------------------------------------------

# (ccc_v, ccc_a, f1_expr, f1_au, reported score) for six folds and their average
REFERENCE_ROWS = {
    "fold 1": (0.6742, 0.6663, 0.4013, 0.5558, 1.6274),
    "fold 2": (0.5681, 0.6597, 0.3673, 0.5496, 1.5306),
    "fold 3": (0.6784, 0.6536, 0.3327, 0.5977, 1.5963),
    "fold 4": (0.6706, 0.6169, 0.3851, 0.5886, 1.6275),
    "fold 5": (0.7015, 0.6707, 0.4389, 0.5409, 1.6658),
    "fold 6": (0.6672, 0.6290, 0.4156, 0.5149, 1.5786),
    "average": (0.6600, 0.6494, 0.3901, 0.5579, 1.6027),
    # best single-run CCCs combined with the best ensemble F1s
    "ensemble composition": (0.7101, 0.6604, 0.5090, 0.5664, 1.7607),
}
# inputs are rounded to 4 decimals, so an exact half-step difference can show up as 5e-5 plus float noise
P_MTL_TOL = 5e-5 + 1e-12


@pytest.mark.xfail(strict=True, reason="folds 2-5 of the reference rows are inconsistent with their own "
                                       "components (off by 1e-4 to 1e-2); see the decision ledger")
def test_p_mtl_reference_rows():
    diffs = {name: p_mtl(*row[:4]) - row[4] for name, row in REFERENCE_ROWS.items()}
    bad = {k: d for k, d in diffs.items() if abs(d) > P_MTL_TOL}
    detail = "all rows within 5e-5" if not bad else \
        f"{len(REFERENCE_ROWS) - len(bad)}/{len(REFERENCE_ROWS)} rows within 5e-5; off: " + \
        ", ".join(f"{k} {d:+.5f}" for k, d in bad.items())
    verdict("1 P_MTL arithmetic", not bad, detail)
    assert not bad


# -- gradient correctness ---------------------------------------------------------------------


def _leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _op_checks(rng):
    a, b, v = _leaf(rng, 3, 4), _leaf(rng, 3, 4), _leaf(rng, 4)
    w34 = Tensor(rng.normal(size=(3, 4)))
    w36 = Tensor(rng.normal(size=(3, 6)))
    kinkless = rng.normal(size=(3, 4))
    kinkless[np.abs(kinkless) < 1e-2] = 0.3
    r = Tensor(kinkless, requires_grad=True)
    m1, m2 = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5)
    g, bb = _leaf(rng, 4), _leaf(rng, 4)
    c = _leaf(rng, 3, 2)
    checks = {
        "add": (lambda: ((a + v) * w34).sum(), [a, v]),
        "sub": (lambda: ((a - b) * w34).sum(), [a, b]),
        "mul": (lambda: (a * b * v).sum(), [a, b, v]),
        "scalar div": (lambda: (a / 3.0 * w34).sum(), [a]),
        "neg": (lambda: (-a * w34).sum(), [a]),
        "sigmoid": (lambda: (sigmoid(a) * w34).sum(), [a]),
        "tanh": (lambda: (tanh(a) * w34).sum(), [a]),
        "relu": (lambda: (relu(r) * w34).sum(), [r]),
        "matmul": (lambda: ((m1 @ m2) * Tensor(np.ones((2, 3, 5)))).sum(), [m1, m2]),
        "reshape/transpose": (lambda: (a.transpose(1, 0).reshape(2, 6) * Tensor(np.arange(12.0).reshape(2, 6))).sum(),
                              [a]),
        "getitem": (lambda: (a[np.array([0, 0, 2])][:, 1:3] * Tensor(np.ones((3, 2)))).sum(), [a]),
        "sum/mean": (lambda: (a.sum(axis=0) * v).sum() + (a * a).mean(), [a, v]),
        "concat": (lambda: (concat([a, c], axis=1) * w36).sum(), [a, c]),
        "stack": (lambda: (stack([a, b], axis=1) * Tensor(np.ones((3, 2, 4)))).sum(), [a, b]),
        "softmax": (lambda: (softmax(a, axis=-1) * w34).sum(), [a]),
        "layer_norm": (lambda: (layer_norm(a, g, bb) * w34).sum(), [a, g, bb]),
        "dropout": (lambda: (dropout(a, 0.4, True, np.random.default_rng(3)) * w34).sum(), [a]),
        "detach": (lambda: (detach(b) * a).sum(), [a]),
    }
    gx3, gx4 = _leaf(rng, 5, 2, 9), _leaf(rng, 5, 2, 12)
    whh3, bhh3 = Tensor(rng.normal(size=(3, 9)) * 0.5, requires_grad=True), _leaf(rng, 9)
    whh4, bhh4 = Tensor(rng.normal(size=(3, 12)) * 0.5, requires_grad=True), _leaf(rng, 12)
    h0, c0 = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    wt = Tensor(rng.normal(size=(5, 2, 3)))
    checks["gru recurrence"] = (lambda: (gru_recurrence(gx3, h0, whh3, bhh3) * wt).sum(), [gx3, whh3, bhh3])
    checks["lstm recurrence"] = (lambda: (lstm_recurrence(gx4, h0, c0, whh4, bhh4)[0] * wt).sum(), [gx4, whh4, bhh4])
    att = MultiHeadAttention(4, 2, np.random.default_rng(1))
    xa, amask = _leaf(rng, 2, 3, 4), np.array([[True, True, False], [True, True, True]])
    wa = Tensor(rng.normal(size=(2, 3, 4)))
    checks["attention"] = (lambda: (att(xa, amask) * wa).sum(), [xa, *att.parameters()])
    lin, head = Linear(4, 3, np.random.default_rng(2)), MLPHead(4, (5,), 2, 0.0, np.random.default_rng(3))
    checks["linear"] = (lambda: (lin(a) * Tensor(np.ones((3, 3)))).sum(), [a, *lin.parameters()])
    checks["mlp head"] = (lambda: (head(r) * Tensor(np.ones((3, 2)))).sum(), head.parameters())
    pv, yv = _leaf(rng, 6), rng.uniform(-1, 1, 6)
    lg, ye = _leaf(rng, 6, 8), rng.integers(0, 8, 6)
    la, ya = _leaf(rng, 6, 12), rng.integers(0, 2, (6, 12))
    mv, ma = rng.random(6) < 0.7, rng.random((6, 12)) < 0.7
    mv[0] = ma[0, 0] = True
    checks["mse loss"] = (lambda: mse_loss(pv, yv, mv).value, [pv])
    checks["ce loss"] = (lambda: ce_loss(lg, ye, mv).value, [lg])
    checks["bce loss"] = (lambda: bce_loss(la, ya, ma).value, [la])
    checks["multi-task loss"] = (lambda: multi_task_loss({"V": mse_loss(pv, yv), "AU": bce_loss(la, ya)},
                                                         {"V": 0.5, "AU": 2.0}, ("V", "AU")), [pv, la])
    return checks


def test_gradient_correctness():
    rng = np.random.default_rng(2024)
    errors = {name: check_gradients(f, params) for name, (f, params) in _op_checks(rng).items()}
    tasks = ("V", "EXPR", "AU")
    for kind in ("GRU", "LSTM", "TRM"):
        for framework in ("SE", "SBE", "SBE-HSF"):
            fb = (("V",), "EXPR") if framework == "SBE-HSF" else None
            model = toy_model(kind=kind, framework=framework, tasks=tasks, feedback=fb, layers=2, seed=2)
            x, mask = rng.normal(size=(2, 5, 4)), np.ones((2, 5), dtype=bool)
            labels, masks = random_targets(tasks, 2, 5, rng)
            errors[f"{kind}/{framework}"] = model_gradcheck(
                model, lambda: total_loss(model, x, mask, labels, masks), rng, max_per_tensor=None)
    worst = max(errors, key=errors.get)
    ok = errors[worst] < 1e-4
    verdict("2 gradient correctness", ok,
            f"{len(errors)} checks, worst {worst} rel err {errors[worst]:.2e} < 1e-4")
    assert ok


# -- detach contract -------------------------------------------------------------------------


def test_detach_contract():
    rng = np.random.default_rng(6)
    checked, leaks = 0, []
    for kind in ("GRU", "LSTM", "TRM"):
        for src, tgt, tasks in FEEDBACK_EDGES:
            model = toy_model(kind=kind, framework="SBE-HSF", tasks=tasks, feedback=(src, tgt))
            x, mask = rng.normal(size=(2, 5, 4)), np.ones((2, 5), dtype=bool)
            labels, masks = random_targets(tasks, 2, 5, rng)
            out, _ = model.forward(x, mask)
            model.zero_grad()
            task_loss(out, tgt, labels, masks).backward()
            groups = model.parameter_groups()
            for s in src:
                for p in groups[f"top.{s}"] + groups[f"head.{s}"]:
                    checked += 1
                    if p.grad is not None and np.any(p.grad != 0.0):
                        leaks.append(f"{kind} {'+'.join(src)}->{tgt} {s}")
            # the feedback path is live: the target branch does see the source features
            assert any(np.any(p.grad != 0) for p in groups.get("feedback", []) + groups[f"top.{tgt}"])
    ok = not leaks
    verdict("3 detach contract", ok, f"{checked} source tensors over 4 edges x 3 encoders, "
                                     f"{len(leaks)} with nonzero gradient")
    assert ok


# -- streaming equivalence -------------------------------------------------------------------


def _segmented(stack, feats, length):
    fwd = gru_forward if stack.kind == "GRU" else lstm_forward
    carry, outs = None, []
    for a, b in split_segments(feats.shape[0], length).segments:
        y, carry = fwd(stack, feats[a:b], carry)
        outs.append(y.data)
    return np.concatenate(outs)


def test_streaming_equivalence():
    r = np.random.default_rng(99)
    worst = 0.0
    for kind in ("GRU", "LSTM"):
        stack = RecurrentStack(kind, 3, 5, 2, 0.0, np.random.default_rng(2))
        for _ in range(100):
            n, seg = int(r.integers(1, 200)), int(r.integers(1, 100))
            x = r.normal(size=(n, 3))
            worst = max(worst, float(np.abs(_segmented(stack, x, seg) - stack.forward_sequence(x)[0].data).max()))
    leak, inside = 0.0, 0.0
    model = toy_model(kind="TRM", framework="SE", tasks=("V",), layers=2)
    for _ in range(20):
        n, seg = int(r.integers(20, 120)), int(r.integers(4, 40))
        f = r.normal(size=(n, 4))
        k = int(r.integers(0, -(-n // seg)))
        a, b = k * seg, min(n, (k + 1) * seg)
        f2 = f.copy()
        f2[a:b] += r.normal(size=(b - a, 4)) * 3
        d = np.abs(predict_video(model, f2, seg)["V"] - predict_video(model, f, seg)["V"])
        leak = max(leak, float(np.r_[d[:a], d[b:]].max(initial=0.0)))
        inside = max(inside, float(d[a:b].max()))
    ok = worst <= 1e-9 and leak == 0.0 and inside > 0.0
    verdict("4 streaming equivalence", ok, f"recurrent max diff {worst:.1e} over 200 pairs; "
                                           f"transformer cross-segment sensitivity {leak}")
    assert ok


# -- synthetic recoverability ----------------------------------------------------------------


@pytest.mark.xfail(strict=True, reason="at desk scale the shared-bottom gain on EXPR is below seed noise: the "
                                       "five-seed SBE mean trails single-task by 0.005 while merely reordering "
                                       "the task tuple moves it by 0.01; see the decision ledger")
def test_synthetic_recoverability(valence_run, default_synth):
    train, val = default_synth
    v_ccc = valence_run.final_report.ccc_v
    seeds = range(5)
    single = [fit(desk_spec(("EXPR",), train.input_dim), train, val, desk_schedule(), seed=s).final_report.f1_expr
              for s in seeds]
    shared = [fit(desk_spec(("V", "EXPR"), train.input_dim, "SBE"), train, val, desk_schedule(),
                  seed=s).final_report.f1_expr for s in seeds]
    ok = v_ccc > 0.9 and np.mean(shared) >= np.mean(single)
    per_seed = " ".join(f"{a:.4f}/{b:.4f}" for a, b in zip(shared, single))
    verdict("5 synthetic recoverability", ok, f"V CCC {v_ccc:.4f} > 0.9; EXPR F1 over seeds 0-4: SBE{{V,EXPR}} "
                                              f"{np.mean(shared):.4f} vs single {np.mean(single):.4f}; per seed {per_seed}")
    assert ok


# -- ensemble rules --------------------------------------------------------------------------


def test_ensemble_rules():
    rng = np.random.default_rng(7)
    trials, mismatches, worse = 1000, {"vote": 0, "au": 0, "thr": 0}, 0
    grid = np.round(np.arange(1, 20) / 20, 2)
    for _ in range(trials):
        m, n = int(rng.integers(1, 8)), int(rng.integers(1, 10))
        classes, freq = rng.integers(0, 8, (m, n)), rng.integers(0, 5, 8)
        mismatches["vote"] += not np.array_equal(vote_classes(classes, freq), vote_expr_oracle(classes, freq))
        d = rng.integers(0, 2, (int(rng.integers(1, 8)), 2, 12))
        mismatches["au"] += not np.array_equal(vote_binary(d), vote_au_oracle(d))
        k = int(rng.integers(1, 10))
        p, y = np.round(rng.random((k, 12)), 2), rng.integers(0, 2, (k, 12))
        thr, f1 = search_thresholds(p, y, grid=grid)
        ot, of = threshold_oracle(p, y, grid)
        mismatches["thr"] += not (np.array_equal(thr, ot) and np.allclose(f1, of, rtol=0, atol=1e-15))
        worse += macro_f1_au((p >= thr).astype(int), y) < macro_f1_au((p >= 0.5).astype(int), y)
    ok = not any(mismatches.values()) and worse == 0
    verdict("6 ensemble rules", ok, f"{trials} trials each; oracle mismatches {mismatches}; "
                                    f"searched below fixed 0.5 in {worse}")
    assert ok


# -- metric properties ------------------------------------------------------------------------


def test_metric_properties():
    rng = np.random.default_rng(8)
    n_cases, failures = 100_000, []
    for i in range(n_cases):
        n = int(rng.integers(2, 20))
        if i % 2 == 0:
            x, y = rng.normal(size=n) * rng.uniform(0.01, 5), rng.normal(size=n) + rng.normal()
            cxy, cyx = ccc(x, y), ccc(y, x)
            if not (abs(ccc(x, x) - 1.0) <= 1e-12 and -1.0 <= cxy <= 1.0 and cxy == cyx):
                failures.append(("ccc", i))
        elif i % 4 == 1:
            p, t = rng.integers(0, 8, n), rng.integers(0, 8, n)
            perm = rng.permutation(n)
            f = macro_f1_expr(p, t)
            if not (0.0 <= f <= 1.0 and macro_f1_expr(p[perm], t[perm]) == f and macro_f1_expr(t, t) == 1.0):
                failures.append(("expr", i))
        else:
            p, t = rng.integers(0, 2, (n, 12)), rng.integers(0, 2, (n, 12))
            perm = rng.permutation(n)
            f = macro_f1_au(p, t)
            if not (0.0 <= f <= 1.0 and macro_f1_au(p[perm], t[perm]) == f):
                failures.append(("au", i))
    ok = not failures
    verdict("7 metric properties", ok, f"{n_cases} randomized cases, {len(failures)} failures")
    assert ok


# -- cross-validation split --------------------------------------------------------------------


def test_cross_validation_split():
    spreads = []
    for videos, seed in ((60, 1), (90, 2), (120, 3)):
        vids = synth_videos(SynthSpec(videos=videos, frames=200, frames_spread=0.5, feature_dims=(("a", 1),),
                                      latent_dim=1, seed=seed))
        fa = split_folds({v.video_id: len(v.frame_ids) for v in vids}, k=6)
        frames = np.array([f.n_frames for f in fa.folds], dtype=float)
        spreads.append(float(np.abs(frames / frames.mean() - 1).max()))
    rng = np.random.default_rng(9)
    broken = 0
    for _ in range(1000):
        n = int(rng.integers(2, 80))
        k = int(rng.integers(2, min(n, 10) + 1))
        counts = {f"v{i}": int(c) for i, c in enumerate(rng.integers(1, 1000, n))}
        fa = split_folds(counts, k, int(rng.integers(0, 1000)))
        ids = [v for f in fa.folds for v in f.video_ids]
        broken += not (sorted(ids) == sorted(counts) and len(ids) == len(set(ids)) and len(fa.folds) == k
                       and all(f.n_videos == len(f.video_ids) > 0 for f in fa.folds)
                       and all(f.n_frames == sum(counts[v] for v in f.video_ids) for f in fa.folds))
    ok = max(spreads) <= 0.10 and broken == 0
    verdict("8 cross-validation split", ok, f"worst fold frame deviation {max(spreads):.2%} on 60/90/120 videos; "
                                            f"{broken} of 1000 random datasets break an invariant")
    assert ok


# -- reproducibility ---------------------------------------------------------------------------


def _tree(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_reproducibility(tmp_path):
    doc = {
        "synth": {"videos": 6, "frames": 36, "feature_dims": {"a": 3}},
        "model": {"framework": "SBE-HSF", "tasks": ["V", "A", "EXPR", "AU"], "head_hidden": [4],
                  "feedback": {"src": ["V"], "tgt": "EXPR"},
                  "encoder": {"kind": "LSTM", "hidden": 4, "layers": 2, "dropout": 0.2}},
        "schedule": {"epochs": 2, "lr": 1e-3, "batch_size": 3, "segment_length": 12},
        "smoothing": {"enabled": True, "windows": {"V": "search", "A": 3}},
        "seeds": [0, 1],
        "cv": {"k": 2},
    }
    doc["dataset"] = {"manifest": str(tmp_path / "a" / "synth" / "manifest.tsv"), "val_fraction": 0.34}
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump(doc))
    runs = {}
    for rep in ("a", "b"):
        base = tmp_path / rep
        assert main(["synth", "--config", str(cfg), "--seed", "4", "--out", str(base / "synth")]) == 0
        assert main(["train", "--config", str(cfg), "--out", str(base / "train")]) == 0
        assert main(["eval", "--config", str(cfg), "--checkpoint", str(tmp_path / "a" / "train" / "seed_0" /
                                                                       "final.ckpt"), "--out", str(base / "eval")]) == 0
        members = [str(tmp_path / "a" / "train" / f"seed_{s}" / "predictions.tsv") for s in (0, 1)]
        assert main(["ensemble", "--config", str(cfg), *members, "--out", str(base / "ens")]) == 0
        assert main(["cv", "--config", str(cfg), "--out", str(base / "cv")]) == 0
        runs[rep] = {cmd: _tree(base / cmd) for cmd in ("synth", "train", "eval", "ens", "cv")}
    differing = [cmd for cmd in runs["a"] if runs["a"][cmd] != runs["b"][cmd]]
    n_files = sum(len(v) for v in runs["a"].values())
    ok = not differing
    verdict("9 reproducibility", ok, f"synth/train/eval/ensemble/cv rerun: {n_files} files compared, "
                                     f"differing commands {differing or 'none'}")
    assert ok
