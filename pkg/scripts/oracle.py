#!/usr/bin/env python3
"""Greedy cover against brute force on random small instances."""

import argparse
import time

from adscape.cli import run_oracle


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instances", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--max-pairs", type=int, default=12)
    ap.add_argument("--max-ads", type=int, default=20)
    ap.add_argument("--max-budget", type=int, default=5)
    args = ap.parse_args()

    started = time.perf_counter()
    passed, total, worst = run_oracle(args.instances, args.seed, args.max_pairs, args.max_ads, args.max_budget)
    print(f"passed {passed}/{total}, worst greedy/optimum ratio {worst:.4f}, {time.perf_counter() - started:.2f}s")
    raise SystemExit(0 if passed == total else 1)


if __name__ == "__main__":
    main()
