"""Compare the compiled and pure-Python recurrence kernels.

    python benchmarks/bench_recurrent.py [--repeat 5] [--sizes 64x8x64 250x8x256]

Each size is TxBxH (time steps, batch, hidden). Reports the best wall time of
a forward plus backward pass per backend and the speedup.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from mtlaffect import kernels


def _case(kind: str, t: int, b: int, h: int, rng: np.random.Generator):
    g = 3 if kind == "gru" else 4
    gx = rng.normal(size=(t, b, g * h)) * 0.5
    h0 = rng.normal(size=(b, h)) * 0.1
    c0 = rng.normal(size=(b, h)) * 0.1
    w = rng.normal(size=(h, g * h)) / np.sqrt(h)
    bias = np.zeros(g * h)
    dhs = rng.normal(size=(t, b, h))
    return gx, h0, c0, w, bias, dhs


def _run(kind: str, backend, case) -> None:
    gx, h0, c0, w, bias, dhs = case
    if kind == "gru":
        hs, cache = backend.gru_forward(gx, h0, w, bias)
        backend.gru_backward(dhs, h0, hs, cache, w)
    else:
        hs, cs, cache = backend.lstm_forward(gx, h0, c0, w, bias)
        backend.lstm_backward(dhs, h0, c0, hs, cs, cache, w)


def best_time(kind: str, backend, case, repeat: int) -> float:
    _run(kind, backend, case)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        _run(kind, backend, case)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", nargs="+", default=["64x8x32", "64x8x128", "250x8x256"])
    args = ap.parse_args(argv)
    names = kernels.available_backends()
    backends = {n: kernels.get_backend(n) for n in names}
    if "cython" not in backends:
        print("compiled extension not built; only the Python backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<6} {'size':>12} " + " ".join(f"{n + ' ms':>12}" for n in names) + f" {'speedup':>8}")
    for kind in ("gru", "lstm"):
        for size in args.sizes:
            t, b, h = (int(x) for x in size.split("x"))
            case = _case(kind, t, b, h, rng)
            times = {n: best_time(kind, be, case, args.repeat) for n, be in backends.items()}
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            print(f"{kind:<6} {size:>12} " + " ".join(f"{1e3 * times[n]:12.3f}" for n in names)
                  + f" {speed:8.2f}x")


if __name__ == "__main__":
    main()
