#!/usr/bin/env python3
"""Distinct-ad arrival per visit for the long strategy, and short vs first-50-long totals."""

import argparse

from adscape.adpipe import AdClassifier, DimensionList, LandingResolver
from adscape.controller import LONG, SHORT, CrawlPlan, Harvester, ImpressionStore, arrival_curve, execute_plan
from adscape.ecosystem import EcosystemState, SimulatorSource
from adscape.fixtures import pick_pairs
from adscape.generate import EcosystemConfig, build_personas, generate_ecosystem
from adscape.profiles import DemographicMap, empty_persona
from adscape.taxonomy import default_tree


def crawl(eco, personas, pairs, strategy, seed):
    state = EcosystemState(eco.catalog, seed)
    harvester = Harvester(SimulatorSource(state), AdClassifier(eco.filters, DimensionList()), LandingResolver(state.click_network()))
    store = ImpressionStore()
    execute_plan(CrawlPlan.for_pairs(pairs, [strategy]), harvester, personas, store)
    return store.records


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pairs", type=int, default=40)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--fit-start", type=int, default=10)
    args = ap.parse_args()

    tree = default_tree()
    cfg = EcosystemConfig()
    eco = generate_ecosystem(cfg, tree)
    personas = {p.id: p for p in build_personas(tree, eco.persona_targets, eco.catalog, cfg.profile_sites, DemographicMap())}
    personas["EMPTY"] = empty_persona()
    pairs = pick_pairs(eco.catalog, personas, args.pairs, seed=args.seed, include_empty="EMPTY")

    long_records = crawl(eco, personas, pairs, LONG, args.seed + 1)
    short_records = crawl(eco, personas, pairs, SHORT, args.seed + 2)
    curve = arrival_curve(long_records, "long", args.fit_start)
    print(f"# {len(pairs)} pairs; elbow at visit {curve.elbow}; tail fit y = {curve.slope:.4f}x + {curve.intercept:.3f}")
    print("visit\tmean_new_ads")
    for v, y in enumerate(curve.mean_new, start=1):
        print(f"{v}\t{y:.4f}")
    long50 = {r.ad_id for r in long_records if r.is_ad and r.visit <= 50}
    short = {r.ad_id for r in short_records if r.is_ad}
    print(f"# short distinct {len(short)}, long first-50 distinct {len(long50)}, ratio {len(short) / len(long50):.3f}")


if __name__ == "__main__":
    main()
