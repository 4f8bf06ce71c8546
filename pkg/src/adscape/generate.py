"""Synthetic ecosystem generation with planted, known phenomena."""

from __future__ import annotations

import json
import random
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from adscape.adpipe import DEFAULT_DIMENSIONS, FilterList
from adscape.analytics import CategoryMapping
from adscape.ecosystem import (
    UNTARGETED,
    AdvertiserSpec,
    Campaign,
    Catalog,
    TargetingPredicate,
    WebsiteSpec,
)
from adscape.profiles import AGE_GROUPS, GENDERS, Persona, build_persona
from adscape.taxonomy import CategoryTree, default_tree

COMMON_SIZES = ((300, 250), (728, 90), (160, 600), (300, 600), (320, 50), (468, 60), (336, 280), (970, 250))
SITE_WORDS = (
    "daily", "herald", "techhub", "sportszone", "moneywatch", "recipebox", "petcorner", "travelnote",
    "gamerhq", "healthline", "autoreview", "stylefeed", "homefinder", "musicbeat", "filmbuzz", "newsdesk",
    "budgetbuys", "fitlife", "parentzone", "citylocal", "weatherly", "scienceday", "bookshelf", "campuslife",
    "dealfinder", "gardenpath", "motorhead", "codeforge", "marketpulse", "wanderlust",
)
RESTAURANTS = "Food & Drink/Restaurants"
INSURANCE = "Finance/Insurance"


@dataclass
class EcosystemConfig:
    seed: int = 7
    sites: int = 20
    personas: int = 24
    persona_levels: tuple[int, ...] = (2, 3)
    profile_sites: int = 10
    networks: int = 4
    withheld_networks: int = 0
    advertisers: int = 80
    network_campaigns: int = 60
    site_campaigns: int = 8
    targeted_fraction: float = 0.5
    cap_values: tuple[int, ...] = (2, 3, 5, 7, 10)
    capped_fraction: float = 0.5
    premium_sites: int = 1
    outlier_site: bool = True
    empty_restaurant_campaigns: int = 4
    unranked_fraction: float = 0.02

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class Ecosystem:
    catalog: Catalog
    filters: FilterList
    mapping: CategoryMapping
    persona_targets: list[str]
    truth: dict = field(default_factory=dict)


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")


def canonical_category(tree: CategoryTree, category: str) -> str:
    """Advertiser category label used in reports: the level-2 name when present."""
    node = tree[category]
    while node.level > 2:
        node = tree[node.parent_id]
    return node.display_name


def persona_targets(tree: CategoryTree, count: int, levels=(2, 3), seed: int = 0) -> list[str]:
    """``count`` target categories; targets repeat only once every candidate is used."""
    candidates = [n.id for n in tree if n.level in levels]
    if not candidates:
        raise ValueError(f"taxonomy has no categories at levels {levels}")
    rng = random.Random(f"personas:{seed}")
    out: list[str] = []
    while len(out) < count:
        out += rng.sample(candidates, min(len(candidates), count - len(out)))
    return sorted(out)


def persona_ids(targets: Sequence[str]) -> list[str]:
    """The first persona on a target is named after it, later ones get ``#2``, ``#3``..."""
    seen: Counter = Counter()
    out = []
    for t in targets:
        seen[t] += 1
        out.append(t if seen[t] == 1 else f"{t}#{seen[t]}")
    return out


def build_personas(tree: CategoryTree, targets: Sequence[str], catalog: Catalog, n_sites: int, demographics=None) -> list[Persona]:
    personas = []
    for t, pid in zip(targets, persona_ids(targets)):
        k = int(pid.rsplit("#", 1)[1]) - 1 if "#" in pid else 0
        personas.append(build_persona(tree, t, catalog, n_sites, demographics, None if k == 0 else pid, skip=k * n_sites))
    return personas


def _neighbourhood(tree: CategoryTree, target: str) -> list[str]:
    node = tree[target]
    top = tree.top_level(target)
    near = [a.id for a in tree.ancestors(target)]
    near += [c.id for c in tree.children(node.parent_id or "") if c.id != target]
    near += [c.id for c in tree.children(top) if c.id != target]
    near += ["News", "Business & Industrial", "Computers & Electronics", "Shopping", "Arts & Entertainment"]
    return [c for c in dict.fromkeys(near) if c in tree and c != target]


def generate_ecosystem(config: EcosystemConfig = EcosystemConfig(), tree: Optional[CategoryTree] = None) -> Ecosystem:
    tree = tree or default_tree()
    rng = random.Random(config.seed)
    targets = persona_targets(tree, config.personas, config.persona_levels, config.seed)
    truth: dict = {"config": json.loads(config.to_json())}

    # crawl pool
    sites: list[dict] = []
    broad = [n.id for n in tree if n.level <= 2]
    for i in range(config.sites):
        name = f"{SITE_WORDS[i % len(SITE_WORDS)]}{i // len(SITE_WORDS) or ''}.example"
        placements = rng.choices((1, 2, 3, 4, 6), weights=(1, 5, 4, 1, 1))[0]
        sites.append({
            "id": name,
            "placements": placements,
            "categories": sorted(rng.sample(broad, rng.randint(2, 4))),
            "rank": i + 1,
            "premium": [],
        })
    if config.outlier_site and sites:
        sites[-1]["placements"] = 16
        truth["outlier_site"] = sites[-1]["id"]

    # advertisers
    categories = [n.id for n in tree if n.level >= 2 and n.id != RESTAURANTS]
    advertisers: list[AdvertiserSpec] = []
    for i in range(config.advertisers):
        category = rng.choice(categories)
        if rng.random() < config.unranked_fraction:
            rank = None
        else:
            rank = rng.randint(100, 50_000) if i % 2 == 0 else rng.randint(200_000, 2_000_000)
        advertisers.append(AdvertiserSpec(f"{_slug(tree[category].display_name)}{i:03d}.example", rank, category))
    popular = [a for i, a in enumerate(advertisers) if i % 2 == 0]
    longtail = [a for i, a in enumerate(advertisers) if i % 2 == 1]
    restaurant_ads = [
        AdvertiserSpec(f"diner{i:02d}.example", rng.randint(20_000, 400_000), RESTAURANTS)
        for i in range(max(1, config.empty_restaurant_campaigns))
    ]
    insurer = AdvertiserSpec("insurer-direct.example", 1_500, INSURANCE)
    advertisers += restaurant_ads + [insurer]

    networks = [f"adnet{k}.example" for k in range(1, config.networks + 1)]
    withheld = networks[: config.withheld_networks]
    truth["withheld_networks"] = withheld

    campaigns: list[Campaign] = []
    planted_caps: dict[str, int] = {}
    targeted_ids: list[str] = []

    def make(cid, adv, targeting, cap=None, weight=1.0, sites_=frozenset(), network=None, tag=None):
        w, h = rng.choice(COMMON_SIZES) if rng.random() < 0.9 else rng.choice(DEFAULT_DIMENSIONS)
        network = network or rng.choice(networks)
        tag = tag or ("embed" if rng.random() < 0.1 else "img")
        ext = "swf" if tag == "embed" else "gif"
        style = rng.choices(("chain", "decode", "direct"), weights=(6, 3, 1))[0]
        c = Campaign(
            cid, adv.domain, f"http://cdn.{network}/cr/{cid}/{w}x{h}.{ext}", w, h, targeting, cap,
            round(weight, 4), network, style, frozenset(sites_), tag,
        )
        campaigns.append(c)
        if cap is not None:
            planted_caps[cid] = cap
        if not targeting.untargeted:
            targeted_ids.append(cid)
        return c

    def targeting_for(kind: str) -> TargetingPredicate:
        if kind == "interest":
            return TargetingPredicate(required_interests=frozenset({rng.choice(targets)}))
        if kind == "gender":
            return TargetingPredicate(gender=rng.choice(GENDERS))
        return TargetingPredicate(age_group=rng.choice(AGE_GROUPS))

    # run-of-network campaigns: targeted ones come from long-tail advertisers and
    # carry small caps, untargeted ones from popular advertisers and rarely do
    for i in range(config.network_campaigns):
        if rng.random() < config.targeted_fraction:
            kind = rng.choices(("interest", "gender", "age"), weights=(6, 2, 2))[0]
            cap = rng.choice(config.cap_values) if rng.random() < config.capped_fraction else None
            make(f"n{i:03d}", rng.choice(longtail), targeting_for(kind), cap, rng.uniform(1.0, 3.0))
        else:
            cap = rng.choice(config.cap_values) if rng.random() < config.capped_fraction / 4 else None
            make(f"n{i:03d}", rng.choice(popular), UNTARGETED, cap, rng.paretovariate(1.5))

    # site inventories, heavily skewed towards the most popular sites
    for s_idx, site in enumerate(sites):
        n = max(1, round(config.site_campaigns * 6 / (1 + s_idx) ** 1.2))
        for j in range(n):
            targeted = rng.random() < config.targeted_fraction
            cid = f"s{s_idx:02d}-{j:03d}"
            if targeted:
                cap = rng.choice(config.cap_values) if rng.random() < config.capped_fraction else None
                make(cid, rng.choice(longtail), targeting_for("interest"), cap, rng.uniform(1.0, 3.0), {site["id"]})
            else:
                make(cid, rng.choice(popular), UNTARGETED, None, rng.paretovariate(1.5), {site["id"]})

    for i in range(config.empty_restaurant_campaigns):
        make(f"r{i:02d}", restaurant_ads[i], TargetingPredicate(empty_profile=True), None, 25.0)
    truth["empty_restaurant_campaigns"] = [f"r{i:02d}" for i in range(config.empty_restaurant_campaigns)]

    premium = []
    for s_idx in range(min(config.premium_sites, len(sites))):
        site = sites[s_idx]
        ids = []
        for j in range(min(2, site["placements"] - 1) or 1):
            c = make(f"p{s_idx:02d}-{j}", insurer, UNTARGETED, None, 1.0, {site["id"]})
            ids.append(c.id)
        site["premium"] = ids
        premium.append({"site": site["id"], "campaigns": ids})
    truth["premium"] = premium

    # persona-building sites: enough per target for n_sites, footprints spill over
    # into neighbouring categories (initial contamination)
    profile_sites = []
    for target, copies in sorted(Counter(targets).items()):
        near = _neighbourhood(tree, target)
        for j in range(config.profile_sites * copies):
            extras = rng.sample(near, min(len(near), rng.choices((0, 1, 2), weights=(3, 5, 2))[0]))
            profile_sites.append(WebsiteSpec(
                f"{_slug(target)}-{j:02d}.interest.example", 1,
                frozenset([target, *extras]), rng.randint(1_000, 100_000), (), False,
            ))

    websites = [
        WebsiteSpec(s["id"], s["placements"], frozenset(s["categories"]), s["rank"], tuple(s["premium"]), True)
        for s in sites
    ] + profile_sites
    catalog = Catalog(websites, advertisers, campaigns)

    listed = [n for n in networks if n not in withheld]
    filter_text = FilterList.default().to_text() + "".join(f"||{n}^\n" for n in listed)
    mapping = _category_mapping(tree, advertisers, rng)

    truth["planted_caps"] = planted_caps
    truth["targeted_campaigns"] = sorted(targeted_ids)
    truth["persona_targets"] = targets
    return Ecosystem(catalog, FilterList.from_text(filter_text), mapping, targets, truth)


def _category_mapping(tree: CategoryTree, advertisers: list[AdvertiserSpec], rng: random.Random) -> CategoryMapping:
    """Two overlapping categorization sources plus the resolution table."""
    alexa, webpulse, resolution = {}, {}, {}
    for i, adv in enumerate(advertisers):
        canon = canonical_category(tree, adv.category)
        a_raw = "Top/" + adv.category
        w_raw = canon.upper()
        resolution[a_raw] = canon
        resolution[w_raw] = canon
        if i % 3 == 0:
            alexa[adv.domain] = a_raw
        if i % 3 != 0 or i % 9 == 0:
            webpulse[adv.domain] = w_raw
    return CategoryMapping({"alexa": alexa, "webpulse": webpulse}, resolution, ["alexa", "webpulse"])


def ranks_of(catalog: Catalog) -> dict[str, Optional[int]]:
    return catalog.advertiser_ranks()
