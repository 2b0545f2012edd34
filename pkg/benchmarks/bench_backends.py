"""Benchmark the compiled kernel backend against the pure numpy fallback.

Times each kernel on training-shaped inputs, then a full training step and a
scoring pass, under both backends. Run after an editable install:

    python benchmarks/bench_backends.py [--repeats 50]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from relfill import backend
from relfill.data import SyntheticConfig, generate_synthetic
from relfill.model import ModelConfig, compute_grads, init_params, make_batch
from relfill.scoring import ScoringConfig, predict
from relfill.templates import TemplateConfig, VerbalizerMode, build_source, build_target
from relfill.training import AdamW, OptimConfig
from relfill.vocab import build_vocab


def timeit(fn, repeats: int) -> float:
    fn()  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(rng):
    n, d, v = 512, 64, 400
    x = np.ascontiguousarray(rng.normal(size=(n, d)))
    g = rng.normal(size=d)
    b = rng.normal(size=d)
    logits = np.ascontiguousarray(rng.normal(size=(n, v)))
    targets = rng.integers(0, v, size=n).astype(np.int64)
    weights = np.ones(n)
    idx = rng.integers(0, v, size=n).astype(np.int64)
    src = np.ascontiguousarray(rng.normal(size=(n, d)))
    p = np.ascontiguousarray(rng.normal(size=8192))
    grads = np.ascontiguousarray(rng.normal(size=8192))
    m = np.zeros(8192)
    vv = np.zeros(8192)

    scatter_out = np.zeros((v, d))
    probs = backend.softmax_rows(x)

    return {
        "softmax_rows (512x64)": lambda: backend.softmax_rows(x),
        "softmax_bwd  (512x64)": lambda: backend.softmax_rows_bwd(probs, x),
        "layernorm_fwd(512x64)": lambda: backend.layernorm_fwd(x, g, b, 1e-5),
        "gelu_fwd     (512x64)": lambda: backend.gelu_fwd(x),
        "scatter_add  (512x64)": lambda: backend.scatter_add_rows(scatter_out, idx, src),
        "cross_entropy(512x400)": lambda: backend.cross_entropy_fwd(logits, targets, weights),
        "adamw_update (8192)": lambda: backend.adamw_update(
            p, grads, m, vv, 1, 1e-3, 0.9, 0.999, 1e-8, 0.01
        ),
    }


def end_to_end_cases(rng):
    instances, schema = generate_synthetic(
        SyntheticConfig(num_relations=8, instances_per_relation=4), seed=13
    )
    vocab = build_vocab(instances, schema)
    template_cfg = TemplateConfig()
    model_cfg = ModelConfig()
    params = init_params(model_cfg, template_cfg.n2, len(vocab), seed=0)
    pairs = [
        (build_source(i, template_cfg, vocab),
         build_target(i, template_cfg, VerbalizerMode.FULL, schema, vocab))
        for i in instances[:16]
    ]
    batch = make_batch(pairs, vocab.bos_id, vocab.pad_id, model_cfg.architecture)
    opt = AdamW(params, OptimConfig(lr_model=1e-3, lr_prompt=1e-3))
    scoring_cfg = ScoringConfig(template=template_cfg)

    def train_step():
        _, grads = compute_grads(params, batch)
        opt.step(grads)

    def score_one():
        predict(instances[0], params, schema, vocab, scoring_cfg)

    return {"train step (B=16, d=64)": train_step, "score instance (|R|=8)": score_one}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()

    rng = np.random.Generator(np.random.PCG64(0))
    cases = kernel_cases(rng)
    cases.update(end_to_end_cases(rng))

    names = backend.available_backends()
    results: dict[str, dict[str, float]] = {}
    for name in names:
        backend.set_backend(name)
        results[name] = {
            case: timeit(fn, args.repeats) for case, fn in cases.items()
        }

    width = max(len(c) for c in cases)
    header = f"{'case':<{width}}  " + "  ".join(f"{n:>12}" for n in names)
    if len(names) > 1:
        header += "  speedup"
    print(header)
    print("-" * len(header))
    for case in cases:
        row = f"{case:<{width}}  " + "  ".join(
            f"{results[n][case] * 1e6:>10.1f}us" for n in names
        )
        if "c" in results and "python" in results:
            row += f"  {results['python'][case] / results['c'][case]:>6.2f}x"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
