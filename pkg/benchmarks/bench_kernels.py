"""Compare the compiled and numpy backends of the normal-equation assembly.

Usage: python benchmarks/bench_kernels.py [--repeats 7] [--sizes 300,1200,4800]
"""
import argparse
import timeit

import numpy as np

from owarr import _kernels
from owarr.core import train_base
from owarr.datamodel import DomainDataset, Hyperparams
from owarr.fuzzy import label_memberships


def case(n, m, d, seed=0):
    rng = np.random.default_rng(seed)
    Xs, Xt = rng.standard_normal((n, d)), rng.standard_normal((m, d))
    ys, yt = rng.uniform(size=n), rng.uniform(size=m)
    return (DomainDataset("s", Xs, ys), DomainDataset("t", Xt, yt),
            label_memberships(ys, 3).mu_bar, label_memberships(yt, 3).mu_bar)


def best(fn, repeats):
    return min(timeit.repeat(fn, number=1, repeat=repeats))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=7)
    p.add_argument("--sizes", default="300,1200,4800")
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--m", type=int, default=20)
    args = p.parse_args(argv)
    backends = ["python"] + (["cython"] if _kernels.assemble_compiled is not None else [])
    hp = Hyperparams()
    print(f"default backend: {_kernels.BACKEND}")
    print(f"{'n':>6} {'kernel':>10} " + " ".join(f"{b + ' ms':>12}" for b in backends)
          + f" {'speedup':>8}")
    for n in (int(v) for v in args.sizes.split(",")):
        src, tgt, mus, mut = case(n, args.m, args.dim)
        rows = {
            "assemble": lambda b: best(lambda: _kernels.assemble(
                src.features, src.labels, tgt.features, tgt.labels, mus, mut, 2.0,
                hp.lam, hp.gamma, backend=b), args.repeats),
            "train_base": lambda b: best(lambda: train_base(src, tgt, hp, backend=b),
                                         args.repeats),
        }
        for name, timer in rows.items():
            t = {b: timer(b) for b in backends}
            ratio = t["python"] / t["cython"] if "cython" in t else float("nan")
            print(f"{n:>6} {name:>10} " + " ".join(f"{1e3 * t[b]:>12.3f}" for b in backends)
                  + f" {ratio:>8.2f}")


if __name__ == "__main__":
    main()
