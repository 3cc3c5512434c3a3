"""Measure how much padding the length-bucketed batcher saves over naive
shuffle-and-chunk batching, across a few synthetic length distributions.

Padding overhead = padded cells / total cells in the epoch's batches.

Usage:
    python3 scripts/bucketing_overhead.py [--samples 2000] [--batch-size 32]
"""

import argparse

import numpy as np

from fcnc.training import TrainConfig, make_batches


def _dataset(lengths):
    return [(np.ones(int(n), dtype=np.int64), 0) for n in lengths]


def overhead_of(batches):
    padded = sum(batch.ids.size for batch in batches)
    real = sum(int(batch.mask.lengths.sum()) for batch in batches)
    return (padded - real) / padded


def naive_overhead(lengths, batch_size, rng):
    order = rng.permutation(len(lengths))
    padded = 0
    for start in range(0, len(order), batch_size):
        chunk = lengths[order[start:start + batch_size]]
        padded += int(chunk.max()) * len(chunk)
    return (padded - int(lengths.sum())) / padded


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--samples", type=int, default=2000)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--bucket-width", type=int, default=16)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    distributions = {
        "uniform 1..280": rng.integers(1, 281, size=args.samples),
        "short-heavy (geometric)": np.clip(
            rng.geometric(0.02, size=args.samples), 1, 280),
        "bimodal 20/240": np.where(rng.random(args.samples) < 0.5,
                                   rng.integers(10, 31, size=args.samples),
                                   rng.integers(220, 261, size=args.samples)),
    }
    tc = TrainConfig(batch_size=args.batch_size, bucket_width=args.bucket_width)
    print(f"{args.samples} samples, batch size {args.batch_size}, "
          f"bucket width {args.bucket_width}")
    print(f"{'distribution':26s} {'bucketed':>9s} {'naive':>9s} {'saved':>7s}")
    for name, lengths in distributions.items():
        lengths = np.asarray(lengths, dtype=np.int64)
        ds = _dataset(lengths)
        bucketed = overhead_of(make_batches(ds, tc, np.random.default_rng(1)))
        naive = naive_overhead(lengths, args.batch_size,
                               np.random.default_rng(1))
        print(f"{name:26s} {bucketed:9.3f} {naive:9.3f} "
              f"{(naive - bucketed) / max(naive, 1e-12):6.0%}")


if __name__ == "__main__":
    main()
