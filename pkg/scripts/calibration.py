#!/usr/bin/env python3
"""Targeted-flag rate of the chi-squared test under null and planted targeting."""

import argparse
import time

from adscape.analytics import targeting_test
from adscape.controller import StrategySpec
from adscape.fixtures import calibration_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--visits", type=int, default=800)
    ap.add_argument("--seeds", default="0,1,2,3")
    ap.add_argument("--planted", type=int, default=10, help="targeted campaigns per persona per site")
    ap.add_argument("--slots", type=int, default=1)
    args = ap.parse_args()

    print("targeted_per_persona\tseed\tads\tflag_rate\tplant_rate\tseconds")
    for tp in (0, args.planted):
        sc = calibration_scenario(targeted_per_persona=tp, slots=args.slots)
        for seed in (int(s) for s in args.seeds.split(",")):
            started = time.perf_counter()
            records = sc.crawl(StrategySpec("cal", args.visits, 1), seed=seed)
            results = [r for w in sc.catalog.pool for r in targeting_test(records, w.id).values()]
            rate = sum(r.targeted for r in results) / len(results)
            took = time.perf_counter() - started
            print(f"{tp}\t{seed}\t{len(results)}\t{rate:.4f}\t{sc.truth['planted_rate']:.4f}\t{took:.1f}")


if __name__ == "__main__":
    main()
