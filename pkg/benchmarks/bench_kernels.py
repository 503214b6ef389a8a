"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 200]

Times each kernel on small matrices (the sizes the models actually use) and a
full taped forward/backward of one training batch, per backend.
"""
import argparse
import time

import numpy as np

from coattn.cascade import CascadeConfig
from coattn.diagnostics import random_batch
from coattn.model import CoAttentionModel
from coattn.numerics import Tape, kernels
from coattn.objective import LossConfig
from coattn.trainer import batch_loss


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng, d=16, h=4, n=8):
    x = rng.standard_normal((n, d))
    s, b = np.ones((1, d)), np.zeros((1, d))
    q, k, v = rng.standard_normal((n, d)), rng.standard_normal((n, d)), rng.standard_normal((n, d))
    w = [rng.standard_normal((d, d // h)) for _ in range(3 * h)]
    wo = rng.standard_normal((d, d))
    sim = np.tanh(rng.standard_normal((32, 32)))

    def mha(m):
        return lambda: m.mha_forward(q, k, v, w[:h], w[h:2 * h], w[2 * h:], wo)

    return {
        "softmax_rows": lambda m: (lambda: m.softmax_rows(x)),
        "layer_norm": lambda m: (lambda: m.layer_norm_forward(x, s, b, 1e-5)),
        "attention": lambda m: (lambda: m.attention_forward(q, k, v, 0.25)),
        "multi_head": mha,
        "nt_xent(32)": lambda m: (lambda: m.nt_xent_forward(sim, 1 / 0.07, False)),
    }


def training_batch(variant, depth):
    cfg = CascadeConfig(variant, depth, 16, 4)
    model = CoAttentionModel.init(cfg, seed=0)
    batch = random_batch(np.random.default_rng(0), 8, 4, 16)

    def run():
        model.zero_grad()
        with Tape() as tape:
            loss = batch_loss(batch, model, LossConfig())
        tape.backward(loss)

    return run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200, help="timed repetitions per case (default: 200)")
    args = ap.parse_args()
    backends = kernels.available_backends()
    names = [m.NAME for m in backends]
    if "cython" not in names:
        print("compiled kernels are not built; only the numpy backend can be timed")
    print(f"{'case':<28}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))

    def row(label, timings):
        line = f"{label:<28}" + "".join(f"{t * 1e6:>10.1f}us" for t in timings)
        if len(timings) > 1:
            line += f"{timings[0] / timings[1]:>11.1f}x"
        print(line)

    cases = kernel_cases(np.random.default_rng(0))
    for label, make in cases.items():
        row(label, [best_of(make(m), args.repeat) for m in backends])

    for variant, depth in (("single", 1), ("stacking", 2), ("iterating", 5)):
        timings = []
        for m in backends:
            kernels.use(m.NAME)
            timings.append(best_of(training_batch(variant, depth), max(3, args.repeat // 20)))
        row(f"train step {variant} d{depth} B8", timings)


if __name__ == "__main__":
    main()
