"""Benchmark the LSTM kernels: jitted backend vs the pure-numpy fallback.

The backend is fixed at import time by PULSESTREAM_NO_NUMBA, so this
script re-executes itself in a subprocess for each backend and prints a
small comparison table.

Usage: python benchmarks/bench_kernels.py [--batch 64] [--seq-len 64]
       [--hidden 64] [--embed 64] [--repeat 5]
"""

import argparse
import json
import os
import statistics
import subprocess
import sys
import time


def run_case(args):
    import numpy as np

    from pulsestream import kernels
    from pulsestream.model import (ModelConfig, backward, forward_batch,
                                   init_model)
    from pulsestream.textprep import Label, TokenSeq, one_hot

    cfg = ModelConfig(vocab_len=2000, embed_dim=args.embed,
                      lstm_hidden=args.hidden, dense_hidden=32,
                      max_len=args.seq_len, seed=0)
    params = init_model(cfg)
    rng = np.random.default_rng(0)
    ids = rng.integers(1, 2000, size=(args.batch, args.seq_len))
    lens = rng.integers(1, args.seq_len + 1, size=args.batch)
    for row, n in zip(ids, lens):
        row[n:] = 0
    batch = [(TokenSeq(ids=row, true_len=int(n)), one_hot(Label(i % 2)))
             for i, (row, n) in enumerate(zip(ids, lens))]

    # warm-up pass so jit compilation stays out of the timings
    forward_batch(params, ids, lens)
    backward(params, batch)

    fwd, bwd = [], []
    for _ in range(args.repeat):
        t0 = time.perf_counter()
        forward_batch(params, ids, lens)
        fwd.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        backward(params, batch)
        bwd.append(time.perf_counter() - t0)
    return {"backend": "jitted" if kernels.NUMBA_ENABLED else "fallback",
            "forward_ms": statistics.median(fwd) * 1e3,
            "backward_ms": statistics.median(bwd) * 1e3}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--seq-len", type=int, default=64)
    parser.add_argument("--hidden", type=int, default=64)
    parser.add_argument("--embed", type=int, default=64)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args(argv)

    if args.worker:
        print(json.dumps(run_case(args)))
        return 0

    results = []
    for no_numba in ("", "1"):
        env = dict(os.environ, PULSESTREAM_NO_NUMBA=no_numba)
        cmd = [sys.executable, __file__, "--worker",
               "--batch", str(args.batch), "--seq-len", str(args.seq_len),
               "--hidden", str(args.hidden), "--embed", str(args.embed),
               "--repeat", str(args.repeat)]
        out = subprocess.run(cmd, env=env, check=True,
                             capture_output=True, text=True)
        results.append(json.loads(out.stdout.strip().splitlines()[-1]))

    print(f"batch={args.batch} seq_len={args.seq_len} hidden={args.hidden} "
          f"embed={args.embed} (median of {args.repeat})")
    print(f"{'backend':<10} {'forward (ms)':>14} {'backward (ms)':>14}")
    for r in results:
        print(f"{r['backend']:<10} {r['forward_ms']:>14.2f} "
              f"{r['backward_ms']:>14.2f}")
    jit, fb = results
    print(f"speedup    {fb['forward_ms'] / jit['forward_ms']:>13.1f}x "
          f"{fb['backward_ms'] / jit['backward_ms']:>13.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
