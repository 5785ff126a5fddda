"""Compiled core vs numpy fallback on the training kernels.

    python3 benchmarks/bench_kernels.py [--rows 206] [--repeat 5] [--json out.json]

Times ``predict``, ``gradients`` and one ``train_epoch`` for a few network
sizes, checks that both backends agree, and prints the speedup.
"""

import argparse
import json
import platform
import sys
import timeit

import numpy as np

from acfatigue import _kernels
from acfatigue.network import NetworkConfig, init_network

SHAPES = [(1, 10), (2, 50), (2, 200), (4, 200)]


def _case(n_hidden, width, rows, seed=0):
    net = init_network(NetworkConfig(n_hidden_layers=n_hidden, neurons_per_hidden=width, seed=seed))
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(rows, 3))
    y = rng.uniform(1, 5, rows)
    return net, X, y


def _epoch(mod, net, X, y, perm):
    params = [p.copy() for p in net.params()]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    mod.train_epoch(params, m, v, 0, net.act_codes(), X, y, perm, 32, 1, 0,
                    1e-3, 0.9, 0.999, 0.9, 1e-7)
    return params


def bench(rows, repeat):
    if "compiled" not in _kernels.BACKENDS:
        sys.exit("compiled backend not built; run `pip install -e . --no-build-isolation`")
    results = []
    for n_hidden, width in SHAPES:
        net, X, y = _case(n_hidden, width, rows)
        params, acts = net.params(), net.act_codes()
        perm = np.random.default_rng(1).permutation(rows)
        ops = {
            "predict": lambda mod: mod.predict(params, acts, X),
            "gradients": lambda mod: mod.gradients(params, acts, X[:32], y[:32], 1),
            "train_epoch": lambda mod: _epoch(mod, net, X, y, perm),
        }
        for op, fn in ops.items():
            row = {"shape": f"{n_hidden}x{width}", "op": op}
            for name in ("python", "compiled"):
                mod = _kernels.get_backend(name)
                number = max(1, int(0.2 / max(timeit.timeit(lambda: fn(mod), number=1), 1e-6)))
                best = min(timeit.repeat(lambda: fn(mod), number=number, repeat=repeat)) / number
                row[name] = best
            a, b = fn(_kernels.get_backend("python")), fn(_kernels.get_backend("compiled"))
            row["max_abs_diff"] = float(max(np.max(np.abs(np.asarray(p) - np.asarray(q)))
                                            for p, q in _pairs(a, b)))
            row["speedup"] = row["python"] / row["compiled"]
            results.append(row)
    return results


def _pairs(a, b):
    if isinstance(a, tuple):  # gradients: (loss, grads)
        return [(a[0], b[0]), *zip(a[1], b[1])]
    if isinstance(a, list):
        return list(zip(a, b))
    return [(a, b)]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=206)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)
    results = bench(args.rows, args.repeat)
    print(f"{platform.python_implementation()} {platform.python_version()}, numpy {np.__version__}, "
          f"{args.rows} rows, batch 32")
    print(f"{'shape':>7} {'op':>12} {'python ms':>10} {'compiled ms':>12} {'speedup':>8} {'max diff':>9}")
    for r in results:
        print(f"{r['shape']:>7} {r['op']:>12} {r['python'] * 1e3:10.3f} {r['compiled'] * 1e3:12.3f} "
              f"{r['speedup']:8.2f} {r['max_abs_diff']:9.1e}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"rows": args.rows, "results": results}, fh, indent=2)


if __name__ == "__main__":
    main()
