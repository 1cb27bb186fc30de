"""Layers needed before every cell reaches every other, per variant and size."""

import argparse
import itertools

import numpy as np

from sst.patterns import PatternSpec, reach_counts_all


def layers_to_closure(spec, dims, max_layers):
    counts = reach_counts_all([spec] * max_layers, dims)
    full = np.all(counts == np.prod(dims), axis=1)
    return int(np.argmax(full)) + 1 if full.any() else None


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-layers", type=int, default=8)
    ap.add_argument("--sides", type=int, nargs="+", default=[2, 4, 6, 8])
    args = ap.parse_args()
    specs = {"grid": PatternSpec("grid"), "strided h=2": PatternSpec("strided", h=2),
             "local r=1": PatternSpec("local", r=1), "local_strided": PatternSpec("local_strided", h=2, r=1)}
    print("dims       " + "".join(f"{k:>15}" for k in specs))
    for t, s in itertools.product((2, 4), args.sides):
        dims = (t, s, s)
        row = [layers_to_closure(spec, dims, args.max_layers) for spec in specs.values()]
        print(f"{t}x{s}x{s}".ljust(11) + "".join(f"{'>' + str(args.max_layers) if r is None else r:>15}" for r in row))


if __name__ == "__main__":
    main()
