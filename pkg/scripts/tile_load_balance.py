"""Tile counts for random image batches, spread over data-parallel ranks with LPT.

Compares LPT against naive round-robin assignment in sample order.
"""

import argparse

import numpy as np

from tilevl.schedsim import balance_tiles, tile_counts_for_images


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batches", type=int, default=20)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--ranks", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    lpt_ratio, rr_ratio = [], []
    for _ in range(args.batches):
        sizes = [tuple(int(v) for v in rng.integers(64, 4096, size=2)) for _ in range(args.batch_size)]
        counts = tile_counts_for_images(sizes)
        ideal = sum(counts) / args.ranks
        lpt = balance_tiles(counts, args.ranks).max_load
        rr = max(sum(counts[r::args.ranks]) for r in range(args.ranks))
        lpt_ratio.append(lpt / ideal)
        rr_ratio.append(rr / ideal)
    print(f"max rank load / mean load over {args.batches} batches of {args.batch_size} on {args.ranks} ranks")
    print(f"  LPT         mean {np.mean(lpt_ratio):.3f}  worst {np.max(lpt_ratio):.3f}")
    print(f"  round-robin mean {np.mean(rr_ratio):.3f}  worst {np.max(rr_ratio):.3f}")


if __name__ == "__main__":
    main()
