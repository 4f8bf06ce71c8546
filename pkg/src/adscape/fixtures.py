"""Small hand-built scenarios with known ground truth, shared by tests and scripts."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

from adscape.adpipe import AdClassifier, DimensionList, FilterList, LandingResolver
from adscape.controller import CrawlPlan, Harvester, ImpressionRecord, ImpressionStore, StrategySpec, execute_plan
from adscape.ecosystem import (
    UNTARGETED,
    AdvertiserSpec,
    Campaign,
    Catalog,
    EcosystemState,
    SimulatorSource,
    TargetingPredicate,
    WebsiteSpec,
)
from adscape.planner import ObservationSet
from adscape.profiles import Persona
from adscape.taxonomy import CategoryTree, default_tree

NETWORK = "adnet1.example"
FIXTURE_FILTERS = f"! fixture list\n||{NETWORK}^\n"


@dataclass
class Scenario:
    catalog: Catalog
    personas: dict[str, Persona]
    truth: dict

    def classifier(self) -> AdClassifier:
        return AdClassifier(FilterList.from_text(FIXTURE_FILTERS), DimensionList())

    def crawl(self, strategy: StrategySpec, seed: int = 0, pairs=None, workers: int = 1) -> list[ImpressionRecord]:
        """Run ``strategy`` over ``pairs`` (default: every pool site x persona) in a fresh state."""
        state = EcosystemState(self.catalog, seed)
        harvester = Harvester(SimulatorSource(state), self.classifier(), LandingResolver(state.click_network()))
        if pairs is None:
            pairs = [(w.id, p) for w in self.catalog.pool for p in self.personas]
        store = ImpressionStore()
        execute_plan(CrawlPlan.for_pairs(pairs, [strategy], workers), harvester, self.personas, store)
        state.assert_caps()
        return store.records


def fixed_persona(pid: str, interests=(), gender=None, age=None) -> Persona:
    interests = tuple(interests)
    return Persona(pid, interests[0] if interests else "EMPTY", interests, gender, age, interests, ())


def _campaign(cid: str, advertiser: str, targeting=UNTARGETED, cap=None, weight=1.0, sites=()) -> Campaign:
    return Campaign(
        cid, advertiser, f"http://cdn.{NETWORK}/cr/{cid}/300x250.gif", 300, 250, targeting, cap, weight, NETWORK,
        "chain", frozenset(sites),
    )


def calibration_scenario(
    targeted_per_persona: int = 0,
    sites: int = 10,
    untargeted_per_site: int = 100,
    personas: int = 10,
    slots: int = 1,
) -> Scenario:
    """Site-restricted inventories with a known targeted share.

    Each site carries ``untargeted_per_site`` equal-weight untargeted campaigns
    plus ``targeted_per_persona`` interest-targeted campaigns per persona.
    Persona interests are disjoint and sites have empty footprints, so every
    persona faces an eligible pool of the same size and untargeted campaigns
    are equally likely to reach every persona.
    """
    pids = [f"u{i:02d}" for i in range(personas)]
    people = {pid: fixed_persona(pid, [f"Interest/{pid}"]) for pid in pids}
    websites, advertisers, campaigns, targeted = [], [], [], []
    for s in range(sites):
        site = f"cal{s:02d}.example"
        websites.append(WebsiteSpec(site, slots, frozenset(), s + 1))
        for j in range(untargeted_per_site):
            adv = f"brand{s:02d}x{j:02d}.example"
            advertisers.append(AdvertiserSpec(adv, 1000 + j, "Shopping"))
            campaigns.append(_campaign(f"c{s:02d}u{j:02d}", adv, sites=[site]))
        for pid in pids:
            for j in range(targeted_per_persona):
                cid = f"c{s:02d}t{pid}{j}"
                adv = f"niche{s:02d}{pid}{j}.example"
                advertisers.append(AdvertiserSpec(adv, 90_000, "Shopping"))
                campaigns.append(_campaign(cid, adv, TargetingPredicate(frozenset({f"Interest/{pid}"})), sites=[site]))
                targeted.append(cid)
    catalog = Catalog(websites, advertisers, campaigns)
    total = len(campaigns)
    return Scenario(catalog, people, {"targeted_campaigns": targeted, "planted_rate": len(targeted) / total})


CAP_VALUES = (2, 3, 5, 7, 10)


def caps_scenario(personas: int = 8, uncapped: int = 3, slots: int = 2) -> Scenario:
    """One site, one capped campaign per value in ``CAP_VALUES`` plus uncapped fillers."""
    site = "capsite.example"
    advertisers, campaigns, caps = [], [], {}
    for cap in CAP_VALUES:
        adv = f"capped{cap:02d}.example"
        advertisers.append(AdvertiserSpec(adv, 5000 + cap, "Shopping"))
        campaigns.append(_campaign(f"cap{cap:02d}", adv, cap=cap))
        caps[f"cap{cap:02d}"] = cap
    for j in range(uncapped):
        adv = f"filler{j}.example"
        advertisers.append(AdvertiserSpec(adv, 100 + j, "Shopping"))
        campaigns.append(_campaign(f"free{j}", adv))
    catalog = Catalog([WebsiteSpec(site, slots)], advertisers, campaigns)
    people = {f"q{i}": fixed_persona(f"q{i}", [f"Interest/q{i}"]) for i in range(personas)}
    return Scenario(catalog, people, {"planted_caps": caps, "uncapped": [f"free{j}" for j in range(uncapped)]})


def creative_owner(catalog: Catalog) -> dict[str, Campaign]:
    return {c.creative_url: c for c in catalog.campaigns.values()}


@dataclass
class ContaminationFixture:
    tree: CategoryTree
    personas: list[Persona]
    websites: list[WebsiteSpec]


def contamination_fixture(n_personas: int = 60, n_sites: int = 50, seed: int = 5) -> ContaminationFixture:
    """Personas with ~8 initial interests and a pool of diverse general-audience sites.

    Site footprints hold 1-3 categories drawn from the whole taxonomy, so a
    visit sequence keeps adding categories unrelated to the persona's target.
    """
    tree = default_tree()
    rng = random.Random(seed)
    ids = [n.id for n in tree]
    websites = []
    for i in range(n_sites):
        k = rng.choice((1, 2, 2, 3))
        websites.append(WebsiteSpec(f"general{i:02d}.example", 2, frozenset(rng.sample(ids, k)), i + 1))
    deep = [n.id for n in tree if n.level >= 2]
    personas = []
    for i in range(n_personas):
        target = rng.choice(deep)
        near = [a.id for a in tree.ancestors(target)] + [c.id for c in tree.children(tree.top_level(target).id)]
        extra = [c for c in dict.fromkeys(near) if c != target]
        pool = [c for c in ids if c != target and c not in extra]
        interests = [target] + extra[:4]
        interests += rng.sample(pool, max(0, rng.randint(6, 10) - len(interests)))
        personas.append(fixed_persona(f"m{i:02d}", interests))
    return ContaminationFixture(tree, personas, websites)


def skewed_survey(
    sites: int = 314,
    personas: int = 340,
    seed: int = 1,
    ads_per_pair: tuple[int, int] = (0, 4),
) -> ObservationSet:
    """Random observations with a skewed site-popularity shape and persona-specific ads.

    Ads come from per-site pools whose size falls off with site rank; each
    persona also has a few persona-level ads that show up on any site.
    """
    rng = random.Random(seed)
    site_ids = [f"site{i:03d}.example" for i in range(sites)]
    persona_ids = [f"pp{j:03d}" for j in range(personas)]
    entries = {}
    for i, w in enumerate(site_ids):
        pool = max(2, int(400 / (1 + i) ** 0.9))
        for p in persona_ids:
            k = rng.randint(*ads_per_pair)
            ads = {f"{w}/a{rng.randrange(pool)}" for _ in range(k)}
            if rng.random() < 0.05:
                ads.add(f"{p}/t{rng.randrange(3)}")
            entries[(w, p)] = frozenset(ads)
    return ObservationSet(entries)


def pick_pairs(catalog: Catalog, personas, n: int, seed: int = 0, include_empty: Optional[str] = None) -> list[tuple[str, str]]:
    rng = random.Random(seed)
    pairs = [(w.id, p) for w in catalog.pool for p in personas if p != include_empty]
    chosen = sorted(rng.sample(pairs, min(n, len(pairs))))
    if include_empty:
        chosen += [(w.id, include_empty) for w in catalog.pool]
    return chosen
