"""Attention cost of each variant at the three-frame, 128-channel preset."""

import argparse

from sst.costmodel import cost_table, format_table, table1_dims, with_dims


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--stride", type=int, default=8, help="backbone feature stride")
    ap.add_argument("--split-heads", action="store_true", help="charge multi-pattern variants per head")
    args = ap.parse_args()
    dims = with_dims(table1_dims(args.stride), split_heads=args.split_heads)
    reports = cost_table(dims)
    print(f"features {dims.H}x{dims.W}, T={dims.T}, C={dims.channels}, L={dims.layers}")
    print(format_table(reports), end="")
    rows = {r.variant: r.attention for r in reports}
    print(f"grid/dense attention ratio: {rows['grid'] / rows['dense']:.4f}")


if __name__ == "__main__":
    main()
