#!/usr/bin/env python3
"""New interests gained by personas as a function of unrelated site visits."""

import argparse
import statistics

from adscape.fixtures import contamination_fixture
from adscape.profiles import contamination_gains


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--personas", type=int, default=60)
    ap.add_argument("--sites", type=int, default=50)
    ap.add_argument("--visits", default="0,5,10,20,30,40,50")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    fx = contamination_fixture(args.personas, args.sites)
    start = statistics.mean(len(p.interests) for p in fx.personas)
    print(f"# {len(fx.personas)} personas, mean initial interests {start:.1f}")
    print("visits\tmedian_gain\tmean_gain\tfrac_gain_gt_9")
    for v in (int(x) for x in args.visits.split(",")):
        gains = list(contamination_gains(fx.personas, fx.websites, v, args.seed).values())
        over = sum(g > 9 for g in gains) / len(gains)
        print(f"{v}\t{statistics.median(gains):g}\t{statistics.mean(gains):.2f}\t{over:.2f}")


if __name__ == "__main__":
    main()
