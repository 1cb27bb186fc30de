"""Strided over grid attention MACs as the frame grows, under both head conventions."""

import argparse

from sst.costmodel import scaling_slope, strided_grid_ratio


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frames", type=int, default=8)
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64, 128])
    args = ap.parse_args()
    print(f"{'H=W':>5} {'split heads':>12} {'full width':>11}")
    for n in args.sizes:
        split = strided_grid_ratio(n, n, T=args.frames, split_heads=True)
        full = strided_grid_ratio(n, n, T=args.frames, split_heads=False)
        print(f"{n:>5} {split:>12.3f} {full:>11.3f}")
    print()
    for v in ("full", "grid", "strided"):
        print(f"log-log slope of {v} against its asymptotic form: {scaling_slope(v):.3f}")


if __name__ == "__main__":
    main()
