#!/usr/bin/env python3
"""Focus-set arithmetic on a survey shaped like a 314 x 340 pair sweep."""

import argparse

from adscape.controller import LONG, SHORT
from adscape.fixtures import skewed_survey
from adscape.planner import build_focus_set, cover_value, greedy_max_cover, visit_budget


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sites", type=int, default=314)
    ap.add_argument("--personas", type=int, default=340)
    ap.add_argument("--top-k", type=int, default=1700)
    ap.add_argument("--min-occurrences", type=int, default=3)
    ap.add_argument("--cover-budget", type=int, default=1_000_000)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    obs = skewed_survey(args.sites, args.personas, args.seed)
    cover = greedy_max_cover(obs, args.cover_budget)
    fs = build_focus_set(cover, obs, args.top_k, args.min_occurrences)
    top = cover[: args.top_k]
    print(f"survey pairs\t{len(obs)}")
    print(f"distinct ads\t{len(obs.all_ads)}")
    print(f"top-{args.top_k} coverage\t{cover_value(top)}")
    print(f"cover\t{fs.count('cover')}")
    print(f"coverage fixes\t{fs.count('coverage-fix')}")
    print(f"empty baselines\t{fs.count('empty-baseline')}")
    print(f"focus pairs\t{len(fs)}")
    print(f"websites\t{len(fs.websites)}")
    print(f"personas\t{len(fs.personas)}")
    print(f"visit budget (focus set)\t{visit_budget(len(fs), [LONG, SHORT])}")
    print(f"visit budget (1900 pairs)\t{visit_budget(1900, [LONG, SHORT])}")


if __name__ == "__main__":
    main()
