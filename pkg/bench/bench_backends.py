"""Benchmark the numba kernels against the plain-numpy fallback.

Times the normalized-operator rebuild and the per-arch pair-gradient
kernels on benchmark-sized inputs, then a full attack per backend.

Run: python bench/bench_backends.py --nodes 200 --reps 200
"""

import argparse
import time

import numpy as np

from mibtack import _kernels_numba, _kernels_numpy, backend
from mibtack.attack import AttackConfig, mibtack
from mibtack.graph import SbmParams, generate_sbm
from mibtack.harness import sample_targets
from mibtack.models import default_train_config, train

BACKENDS = (("numba", _kernels_numba), ("numpy", _kernels_numpy))


def make_inputs(nodes, features, classes, hidden, seed):
    rng = np.random.default_rng(seed)
    adj = np.triu((rng.random((nodes, nodes)) < 0.05).astype(np.float64), k=1)
    adj = adj + adj.T
    x = (rng.random((nodes, features)) < 0.5).astype(np.float64)
    v = nodes // 2
    row_v = rng.random(nodes)
    row_v[v] = 0.0
    return {
        "adj": adj, "deg": adj.sum(axis=1), "x": x, "row_v": row_v, "v": v,
        "w1": rng.normal(0.0, 0.5, (features, hidden)),
        "w2": rng.normal(0.0, 0.5, (hidden, classes)),
        "w": rng.normal(0.0, 0.5, (features, classes)),
        "y": 0,
    }


def kernel_calls(d):
    def operator(mod):
        mod.operator_from_row(d["adj"], d["deg"], d["row_v"], d["v"])

    def gcn(mod):
        s, r = mod.operator_from_row(d["adj"], d["deg"], d["row_v"], d["v"])
        mod.gcn_pair_grad(s, d["x"], r, d["w1"], d["w2"], d["v"], d["y"], -1)

    def sgc(mod):
        s, r = mod.operator_from_row(d["adj"], d["deg"], d["row_v"], d["v"])
        mod.sgc_pair_grad(s, d["x"], r, d["w"], 2, d["v"], d["y"], -1)

    def appnp(mod):
        s, r = mod.operator_from_row(d["adj"], d["deg"], d["row_v"], d["v"])
        mod.appnp_pair_grad(s, d["x"], r, d["w1"], d["w2"], 10, 0.1,
                            d["v"], d["y"], -1)

    return (("operator", operator), ("gcn grad", gcn),
            ("sgc grad", sgc), ("appnp grad", appnp))


def time_call(fn, mod, reps):
    fn(mod)  # warmup; first numba call compiles
    t0 = time.perf_counter()
    for _ in range(reps):
        fn(mod)
    return (time.perf_counter() - t0) * 1000.0 / reps


def bench_kernels(nodes, reps, seed):
    d = make_inputs(nodes, features=16, classes=4, hidden=16, seed=seed)
    print(f"kernels on {nodes} nodes, {reps} reps (ms/call):")
    print(f"  {'kernel':<12} {'numba':>9} {'numpy':>9} {'speedup':>8}")
    for name, fn in kernel_calls(d):
        ms = {bname: time_call(fn, mod, reps) for bname, mod in BACKENDS}
        print(f"  {name:<12} {ms['numba']:>9.3f} {ms['numpy']:>9.3f} "
              f"{ms['numpy'] / ms['numba']:>7.1f}x")


def bench_attack(nodes, seed):
    params = SbmParams(num_nodes=nodes, num_blocks=4, p_in=0.15, p_out=0.01,
                       num_features=16, feature_signal=0.5, seed=seed)
    g = generate_sbm(params)
    model = train("gcn", g, default_train_config("gcn", seed=0))
    targets = sample_targets(g, 10, seed, model=model, only_correct=True)
    print(f"full attack, gcn, {len(targets)} targets (ms/target):")
    times = {}
    for bname, _ in BACKENDS:
        backend.set_backend(bname)
        mibtack(model, g, int(targets[0]), AttackConfig())  # warmup
        t0 = time.perf_counter()
        for v in targets:
            mibtack(model, g, int(v), AttackConfig())
        times[bname] = (time.perf_counter() - t0) * 1000.0 / len(targets)
        print(f"  {bname:<12} {times[bname]:>9.1f}")
    print(f"  speedup      {times['numpy'] / times['numba']:>8.1f}x")
    backend.set_backend(None)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--nodes", type=int, default=200)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--skip-attack", action="store_true",
                   help="time the raw kernels only")
    args = p.parse_args(argv)
    bench_kernels(args.nodes, args.reps, args.seed)
    if not args.skip_attack:
        bench_attack(args.nodes, args.seed)


if __name__ == "__main__":
    main()
