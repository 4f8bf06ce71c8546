"""Seedable ad-ecosystem simulator: publishers, advertisers, campaigns and the
per-page allocation of campaigns to ad slots.

Allocation for one page view: premium (contract) campaigns take the first
slots; every remaining slot is filled by weight-proportional sampling, without
replacement, among campaigns whose targeting matches the persona and whose
frequency cap for that persona is not yet exhausted.
"""

from __future__ import annotations

import hashlib
import json
import random
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union
from urllib.parse import quote, urlsplit

from adscape.adpipe import DEFAULT_DIMENSIONS, RequestBlocked, Response
from adscape.harvester import PageDocument, PageElement

MAX_PLACEMENTS = 16
EXCHANGE_HOST = "r.adexchange.example"
CLICK_STYLES = ("chain", "decode", "direct")
SLOT_CLASSES = ("leaderboard", "rail", "inline", "sidebar", "footer-unit", "col-right", "mid", "bottom")


class CatalogError(ValueError):
    pass


class UnknownWebsite(KeyError):
    pass


class UnknownPage(KeyError):
    pass


class CapViolation(AssertionError):
    pass


@dataclass(frozen=True)
class TargetingPredicate:
    required_interests: frozenset[str] = frozenset()
    gender: Optional[str] = None
    age_group: Optional[str] = None
    untargeted: bool = False
    # serves only personas that were never given a profile (the empty baseline)
    empty_profile: bool = False

    def __post_init__(self):
        if self.untargeted and (self.required_interests or self.gender or self.age_group or self.empty_profile):
            raise CatalogError("an untargeted predicate cannot carry targeting fields")
        if not self.untargeted and not (
            self.required_interests or self.gender or self.age_group or self.empty_profile
        ):
            raise CatalogError("a targeted predicate needs at least one targeting field")

    def matches(self, persona) -> bool:
        if self.untargeted:
            return True
        if self.empty_profile and not getattr(persona, "is_empty", False):
            return False
        if self.required_interests and self.required_interests.isdisjoint(persona.interests):
            return False
        if self.gender and persona.gender != self.gender:
            return False
        if self.age_group and persona.age_group != self.age_group:
            return False
        return True

    def to_dict(self) -> dict:
        return {
            "interests": sorted(self.required_interests),
            "gender": self.gender,
            "age": self.age_group,
            "untargeted": self.untargeted,
            "empty_profile": self.empty_profile,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TargetingPredicate":
        return cls(
            frozenset(d.get("interests", ())),
            d.get("gender"),
            d.get("age"),
            bool(d.get("untargeted", False)),
            bool(d.get("empty_profile", False)),
        )


UNTARGETED = TargetingPredicate(untargeted=True)


@dataclass(frozen=True)
class WebsiteSpec:
    id: str
    placements: int
    content_categories: frozenset[str] = frozenset()
    popularity_rank: int = 1
    premium_campaign_ids: tuple[str, ...] = ()
    # member of the crawl pool W; other sites exist only for persona building
    in_pool: bool = True

    def __post_init__(self):
        if not 1 <= self.placements <= MAX_PLACEMENTS:
            raise CatalogError(f"{self.id}: placements must be in [1, {MAX_PLACEMENTS}]")
        if self.popularity_rank < 1:
            raise CatalogError(f"{self.id}: popularity rank must be positive")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "placements": self.placements,
            "categories": sorted(self.content_categories),
            "rank": self.popularity_rank,
            "premium": list(self.premium_campaign_ids),
            "pool": self.in_pool,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WebsiteSpec":
        return cls(
            d["id"],
            int(d["placements"]),
            frozenset(d.get("categories", ())),
            int(d.get("rank", 1)),
            tuple(d.get("premium", ())),
            bool(d.get("pool", True)),
        )


@dataclass(frozen=True)
class AdvertiserSpec:
    domain: str
    global_rank: Optional[int]
    category: str

    def to_dict(self) -> dict:
        return {"domain": self.domain, "rank": self.global_rank, "category": self.category}

    @classmethod
    def from_dict(cls, d: dict) -> "AdvertiserSpec":
        return cls(d["domain"], d.get("rank"), d["category"])


@dataclass(frozen=True)
class Campaign:
    id: str
    advertiser: str
    creative_url: str
    width: int
    height: int
    targeting: TargetingPredicate = UNTARGETED
    frequency_cap: Optional[int] = None
    weight: float = 1.0
    network: str = "adnet.example"
    click_style: str = "chain"
    # restrict delivery to these sites; empty means run-of-network
    sites: frozenset[str] = frozenset()
    tag: str = "img"

    def __post_init__(self):
        if (self.width, self.height) not in DEFAULT_DIMENSIONS:
            raise CatalogError(f"{self.id}: {self.width}x{self.height} is not a standard size")
        if self.weight <= 0:
            raise CatalogError(f"{self.id}: weight must be positive")
        if self.frequency_cap is not None and self.frequency_cap < 1:
            raise CatalogError(f"{self.id}: frequency cap must be positive")
        if self.click_style not in CLICK_STYLES:
            raise CatalogError(f"{self.id}: unknown click style {self.click_style!r}")
        if self.tag not in ("img", "embed"):
            raise CatalogError(f"{self.id}: creatives are img or embed elements")

    @property
    def landing_url(self) -> str:
        return f"https://www.{self.advertiser}/lp/{self.id}"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "advertiser": self.advertiser,
            "creative": self.creative_url,
            "width": self.width,
            "height": self.height,
            "targeting": self.targeting.to_dict(),
            "cap": self.frequency_cap,
            "weight": self.weight,
            "network": self.network,
            "click": self.click_style,
            "sites": sorted(self.sites),
            "tag": self.tag,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Campaign":
        return cls(
            d["id"],
            d["advertiser"],
            d["creative"],
            int(d["width"]),
            int(d["height"]),
            TargetingPredicate.from_dict(d.get("targeting", {"untargeted": True})),
            d.get("cap"),
            float(d.get("weight", 1.0)),
            d.get("network", "adnet.example"),
            d.get("click", "chain"),
            frozenset(d.get("sites", ())),
            d.get("tag", "img"),
        )


class Catalog:
    """Immutable set of websites, advertisers and campaigns."""

    def __init__(
        self,
        websites: Iterable[WebsiteSpec],
        advertisers: Iterable[AdvertiserSpec],
        campaigns: Iterable[Campaign],
    ):
        self.websites: dict[str, WebsiteSpec] = {}
        self.advertisers: dict[str, AdvertiserSpec] = {}
        self.campaigns: dict[str, Campaign] = {}
        for kind, items, store, key in (
            ("website", websites, self.websites, "id"),
            ("advertiser", advertisers, self.advertisers, "domain"),
            ("campaign", campaigns, self.campaigns, "id"),
        ):
            for item in items:
                k = getattr(item, key)
                if k in store:
                    raise CatalogError(f"duplicate {kind} {k!r}")
                store[k] = item
        for c in self.campaigns.values():
            if c.advertiser not in self.advertisers:
                raise CatalogError(f"campaign {c.id} refers to unknown advertiser {c.advertiser}")
            missing = c.sites - self.websites.keys()
            if missing:
                raise CatalogError(f"campaign {c.id} restricted to unknown sites {sorted(missing)}")
        for w in self.websites.values():
            for cid in w.premium_campaign_ids:
                if cid not in self.campaigns:
                    raise CatalogError(f"site {w.id} has unknown premium campaign {cid}")
        self._inventory: dict[str, list[Campaign]] = {}
        for w in self.websites:
            self._inventory[w] = [
                c for _, c in sorted(self.campaigns.items()) if not c.sites or w in c.sites
            ]

    def website(self, website_id: str) -> WebsiteSpec:
        try:
            return self.websites[website_id]
        except KeyError:
            raise UnknownWebsite(website_id) from None

    def inventory(self, website_id: str) -> list[Campaign]:
        return self._inventory[self.website(website_id).id]

    @property
    def pool(self) -> list[WebsiteSpec]:
        """The crawl pool, most popular first."""
        return sorted((w for w in self.websites.values() if w.in_pool), key=lambda w: (w.popularity_rank, w.id))

    def advertiser_ranks(self) -> dict[str, Optional[int]]:
        return {d: a.global_rank for d, a in self.advertisers.items()}

    def to_text(self) -> str:
        lines = ["# adscape catalog v1: <tag>|<json record>, tags: advertiser, campaign, site"]
        dump = lambda d: json.dumps(d, sort_keys=True, separators=(",", ":"))  # noqa: E731
        lines += [f"advertiser|{dump(a.to_dict())}" for _, a in sorted(self.advertisers.items())]
        lines += [f"campaign|{dump(c.to_dict())}" for _, c in sorted(self.campaigns.items())]
        lines += [f"site|{dump(w.to_dict())}" for _, w in sorted(self.websites.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Catalog":
        sites, advertisers, campaigns = [], [], []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip() or line.startswith("#"):
                continue
            tag, _, payload = line.partition("|")
            try:
                record = json.loads(payload)
            except json.JSONDecodeError as exc:
                raise CatalogError(f"line {lineno}: {exc}") from exc
            if tag == "site":
                sites.append(WebsiteSpec.from_dict(record))
            elif tag == "advertiser":
                advertisers.append(AdvertiserSpec.from_dict(record))
            elif tag == "campaign":
                campaigns.append(Campaign.from_dict(record))
            else:
                raise CatalogError(f"line {lineno}: unknown record tag {tag!r}")
        return cls(sites, advertisers, campaigns)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Catalog":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def stream(*key) -> random.Random:
    """Independent RNG stream named by ``key``."""
    digest = hashlib.blake2b(repr(key).encode(), digest_size=16).digest()
    return random.Random(int.from_bytes(digest, "big"))


def unit_hash(*key) -> float:
    digest = hashlib.blake2b(repr(key).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2**64


@dataclass
class PageTruth:
    website: str
    persona: str
    ads: dict[str, str]  # element id -> campaign id
    non_ads: tuple[str, ...]
    faulted_clicks: frozenset[str] = frozenset()


@dataclass
class RenderLogEntry:
    t: int
    url: str
    website: str
    persona: str
    interests: tuple[str, ...]
    visit_index: int
    slots: tuple[Optional[str], ...]


class EcosystemState:
    """Mutable simulator state. Calls must be serialized (see :class:`SimulatorSource`)."""

    def __init__(self, catalog: Catalog, seed: int = 0, resolver_fault_rate: float = 0.0, keep_log: bool = False):
        self.catalog = catalog
        self.rng_seed = seed
        self.resolver_fault_rate = resolver_fault_rate
        self.impression_counters: dict[tuple[str, str], int] = {}
        self.t = 0
        self._pair_renders: dict[tuple[str, str], int] = {}
        self._slot_streams: dict[tuple[str, int], random.Random] = {}
        self._pages: dict[str, PageTruth] = {}
        self.keep_log = keep_log
        self.render_log: list[RenderLogEntry] = []

    def _eligible(self, campaign: Campaign, persona) -> bool:
        if not campaign.targeting.matches(persona):
            return False
        cap = campaign.frequency_cap
        return cap is None or self.impression_counters.get((campaign.id, persona.id), 0) < cap

    def _slot_stream(self, website: str, slot: int) -> random.Random:
        # one sequential stream per (website, slot): the draw depends on how many
        # times the slot was sampled before, not on who is looking
        key = (website, slot)
        rng = self._slot_streams.get(key)
        if rng is None:
            rng = self._slot_streams[key] = stream(self.rng_seed, "slot", website, slot)
        return rng

    def render_page(self, website: Union[str, WebsiteSpec], persona, visit_index: int) -> PageDocument:
        site = self.catalog.website(website if isinstance(website, str) else website.id)
        if visit_index < 1:
            raise ValueError("visit_index starts at 1")
        pair = (site.id, persona.id)
        n = self._pair_renders.get(pair, 0) + 1
        self._pair_renders[pair] = n
        self.t += 1

        chosen: list[Optional[Campaign]] = []
        taken: set[str] = set()
        for cid in site.premium_campaign_ids[: site.placements]:
            c = self.catalog.campaigns[cid]
            cap = c.frequency_cap
            if cap is None or self.impression_counters.get((c.id, persona.id), 0) < cap:
                chosen.append(c)
                taken.add(c.id)

        pool = [c for c in self.catalog.inventory(site.id) if c.id not in taken and self._eligible(c, persona)]
        for slot in range(len(chosen), site.placements):
            if not pool:
                chosen.append(None)
                continue
            rng = self._slot_stream(site.id, slot)
            total = sum(c.weight for c in pool)
            r = rng.random() * total
            pick = len(pool) - 1
            for i, c in enumerate(pool):
                r -= c.weight
                if r < 0:
                    pick = i
                    break
            chosen.append(pool.pop(pick))

        for c in chosen:
            if c is None:
                continue
            key = (c.id, persona.id)
            self.impression_counters[key] = self.impression_counters.get(key, 0) + 1
            if c.frequency_cap is not None and self.impression_counters[key] > c.frequency_cap:
                raise CapViolation(f"{c.id} exceeded cap for {persona.id}")

        url = f"http://{site.id}/?p={quote(persona.id, safe='')}&n={n}"
        page, truth = self._build_page(site, persona, n, url, chosen)
        self._pages[url] = truth
        if self.keep_log:
            self.render_log.append(
                RenderLogEntry(
                    self.t, url, site.id, persona.id, tuple(persona.interests), visit_index,
                    tuple(c.id if c else None for c in chosen),
                )
            )
        return page

    def _build_page(self, site, persona, n, url, chosen):
        rng = stream(self.rng_seed, "decoys", site.id, persona.id, n)
        n_decoys = rng.randint(1, 3)
        blocks: list[tuple[str, object]] = [("slot", i) for i in range(len(chosen))]
        for d in range(n_decoys):
            blocks.insert(rng.randint(0, len(blocks)), ("decoy", d))

        body = PageElement("body")
        ads: dict[str, str] = {}
        non_ads: list[str] = []
        faulted: set[str] = set()
        for idx, (kind, k) in enumerate(blocks):
            eid = f"e{idx}"
            if kind == "decoy":
                body.children.append(_decoy(site.id, eid, rng))
                non_ads.append(eid)
                continue
            campaign = chosen[k]
            div = PageElement("div", {"class": SLOT_CLASSES[k % len(SLOT_CLASSES)]})
            body.children.append(div)
            if campaign is None:
                div.children.append(
                    PageElement("a", {"href": f"http://{site.id}/house"}, [
                        PageElement("img", {"id": eid, "src": f"http://{site.id}/house/{k}.png",
                                            "width": "300", "height": "250"})
                    ])
                )
                non_ads.append(eid)
                continue
            imp = hashlib.blake2b(repr((self.rng_seed, site.id, persona.id, n, k)).encode(), digest_size=6).hexdigest()
            if unit_hash(self.rng_seed, "fault", imp) < self.resolver_fault_rate:
                click = f"http://click.{campaign.network}/j/{campaign.id}/{imp}"
                faulted.add(eid)
            elif campaign.click_style == "decode":
                click = f"http://click.{campaign.network}/c?cid={campaign.id}&imp={imp}&u={quote(campaign.landing_url, safe='')}"
            elif campaign.click_style == "direct":
                click = campaign.landing_url
            else:
                click = f"http://click.{campaign.network}/c/{campaign.id}/{imp}"
            creative = PageElement(campaign.tag, {
                "id": eid, "src": campaign.creative_url,
                "width": str(campaign.width), "height": str(campaign.height),
            })
            frame = PageElement("iframe", {"src": f"http://serve.{campaign.network}/frame?slot={k}&site={site.id}"}, [
                PageElement("a", {"href": click}, [creative])
            ])
            div.children.append(frame)
            ads[eid] = campaign.id
        root = PageElement("html", {}, [PageElement("head", {}, [PageElement("title", {}, [])]), body])
        return PageDocument(url, site.id, root), PageTruth(site.id, persona.id, ads, tuple(non_ads), frozenset(faulted))

    def ground_truth(self, page: Union[PageDocument, str]) -> dict[str, str]:
        """Element id -> campaign id for every true ad on a rendered page."""
        url = page if isinstance(page, str) else page.url
        try:
            return dict(self._pages[url].ads)
        except KeyError:
            raise UnknownPage(url) from None

    def page_truth(self, page: Union[PageDocument, str]) -> PageTruth:
        url = page if isinstance(page, str) else page.url
        try:
            return self._pages[url]
        except KeyError:
            raise UnknownPage(url) from None

    def site_interest_footprint(self, website: Union[str, WebsiteSpec]) -> frozenset[str]:
        return site_interest_footprint(self.catalog, website)

    def assert_caps(self) -> None:
        for (cid, pid), count in self.impression_counters.items():
            cap = self.catalog.campaigns[cid].frequency_cap
            if cap is not None and count > cap:
                raise CapViolation(f"{cid} shown {count} times to {pid} (cap {cap})")

    def click_network(self) -> "ClickNetwork":
        return ClickNetwork(self.catalog)


def site_interest_footprint(catalog: Catalog, website: Union[str, WebsiteSpec]) -> frozenset[str]:
    return catalog.website(website if isinstance(website, str) else website.id).content_categories


def _decoy(site: str, eid: str, rng: random.Random) -> PageElement:
    kind = rng.choice(("content", "social", "promo"))
    k = rng.randint(1, 999)
    if kind == "content":
        img = PageElement("img", {"id": eid, "src": f"http://{site}/media/{k}.jpg", "width": "640", "height": "360"})
        return PageElement("div", {"class": "article"}, [PageElement("a", {"href": f"http://{site}/story/{k}"}, [img])])
    if kind == "social":
        img = PageElement("img", {"id": eid, "src": f"http://{site}/icons/share.png", "width": "32", "height": "32"})
        return PageElement("div", {"class": "share"}, [
            PageElement("a", {"href": f"https://social.example/share?u=http%3A%2F%2F{site}%2Fstory%2F{k}"}, [img])
        ])
    img = PageElement("img", {"id": eid, "src": f"http://{site}/promo/subscribe.png", "width": "300", "height": "250"})
    return PageElement("div", {"class": "promo"}, [PageElement("a", {"href": f"http://{site}/subscribe"}, [img])])


class ClickNetwork:
    """Answers HTTP requests for the simulator's click trackers.

    ``chain`` clicks hop tracker -> exchange -> landing page; ``decode`` trackers
    refuse automated clients but carry the landing URL in their query string;
    ``/j/`` links are script-driven and cannot be followed at all.
    """

    def __init__(self, catalog: Catalog):
        self.catalog = catalog

    def __call__(self, url: str) -> Response:
        parts = urlsplit(url)
        host = (parts.hostname or "").lower()
        segs = [s for s in parts.path.split("/") if s]
        if parts.scheme not in ("http", "https"):
            raise RequestBlocked(f"cannot request {url}")
        if host.startswith("click."):
            if segs and segs[0] == "c" and len(segs) == 3 and segs[1] in self.catalog.campaigns:
                return Response(302, f"http://{EXCHANGE_HOST}/r/{segs[1]}/{segs[2]}")
            raise RequestBlocked(f"tracker refused {url}")
        if host == EXCHANGE_HOST and len(segs) == 3 and segs[0] == "r" and segs[1] in self.catalog.campaigns:
            return Response(302, self.catalog.campaigns[segs[1]].landing_url)
        return Response(200)


class SimulatorSource:
    """Page source backed by one :class:`EcosystemState`; renders are serialized."""

    def __init__(self, state: EcosystemState):
        self.state = state
        self._lock = threading.Lock()

    def load(self, website, persona, visit_index, timeout_s=70.0):
        with self._lock:
            return self.state.render_page(website, persona, visit_index)

    def footprint(self, website):
        return self.state.site_interest_footprint(website)
