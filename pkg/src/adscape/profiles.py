"""Interest-based personas: building by simulated browsing, contamination, reset."""

from __future__ import annotations

import hashlib
import json
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from adscape.taxonomy import CategoryTree, is_relevant

EMPTY = "EMPTY"
GENDERS = ("M", "F")
AGE_GROUPS = ("18-24", "25-34", "35-44", "45-54", "55+")


class InsufficientSites(ValueError):
    pass


class EmptySample(ValueError):
    pass


@dataclass(frozen=True)
class Persona:
    id: str
    target_category: str
    interests: tuple[str, ...] = ()
    gender: Optional[str] = None
    age_group: Optional[str] = None
    initial_snapshot: tuple[str, ...] = ()
    visit_history: tuple[str, ...] = ()

    def __post_init__(self):
        if self.target_category == EMPTY and (self.initial_snapshot or self.gender or self.age_group):
            raise ValueError("the empty persona carries no interests or demographics")
        if self.gender is not None and self.gender not in GENDERS:
            raise ValueError(f"unknown gender {self.gender!r}")
        if self.age_group is not None and self.age_group not in AGE_GROUPS:
            raise ValueError(f"unknown age group {self.age_group!r}")

    @property
    def is_empty(self) -> bool:
        return self.target_category == EMPTY

    @property
    def interest_set(self) -> frozenset[str]:
        return frozenset(self.interests)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "target": self.target_category,
            "interests": list(self.interests),
            "gender": self.gender,
            "age_group": self.age_group,
            "snapshot": list(self.initial_snapshot),
            "visits": list(self.visit_history),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Persona":
        return cls(
            id=d["id"],
            target_category=d["target"],
            interests=tuple(d["interests"]),
            gender=d.get("gender"),
            age_group=d.get("age_group"),
            initial_snapshot=tuple(d["snapshot"]),
            visit_history=tuple(d.get("visits", ())),
        )


def empty_persona(persona_id: str = EMPTY) -> Persona:
    return Persona(persona_id, EMPTY)


def _stable_unit(*parts) -> float:
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2**64


@dataclass
class DemographicMap:
    """Deterministic category -> (gender, age group) attribution.

    Explicit entries are looked up for the category and then its ancestors.
    Unlisted categories fall back to a hash of the category so every run agrees;
    ``absent_rate`` of them are left unattributed.
    """

    entries: dict[str, tuple[Optional[str], Optional[str]]] = field(default_factory=dict)
    absent_rate: float = 0.15
    salt: str = "demographics"

    def lookup(self, category: str) -> tuple[Optional[str], Optional[str]]:
        if category == EMPTY:
            return None, None
        node = category
        while True:
            if node in self.entries:
                return self.entries[node]
            if "/" not in node:
                break
            node = node.rsplit("/", 1)[0]
        if _stable_unit(self.salt, "absent", category) < self.absent_rate:
            return None, None
        g = GENDERS[int(_stable_unit(self.salt, "g", category) * len(GENDERS))]
        a = AGE_GROUPS[int(_stable_unit(self.salt, "a", category) * len(AGE_GROUPS))]
        return g, a

    @classmethod
    def from_text(cls, text: str, **kw) -> "DemographicMap":
        entries = {}
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            cat, gender, age = (line.split("\t") + ["", ""])[:3]
            entries[cat] = (gender or None, age or None)
        return cls(entries, **kw)


def build_persona(
    tree: CategoryTree,
    target: str,
    catalog,
    n_sites: int = 50,
    demographics: Optional[DemographicMap] = None,
    persona_id: Optional[str] = None,
    skip: int = 0,
) -> Persona:
    """Browse the ``n_sites`` most popular sites about ``target`` and keep what sticks.

    A site is "about" the target when its content categories touch the target's
    subtree. The persona's interests are the union of the visited sites'
    footprints, in visiting order. ``skip`` passes over the most popular sites,
    so several personas can share a target without sharing a history.
    """
    target_id = tree[target].id
    related = [
        site
        for site in catalog.websites.values()
        if any(c in tree and is_relevant(tree, target_id, c) for c in site.content_categories)
    ]
    if len(related) < skip + n_sites:
        raise InsufficientSites(f"{target_id!r}: {len(related)} related sites, need {skip + n_sites}")
    related.sort(key=lambda s: (s.popularity_rank, s.id))
    interests: dict[str, None] = {}
    for site in related[skip:skip + n_sites]:
        for cat in sorted(site.content_categories):
            interests.setdefault(cat, None)
    gender, age = (demographics or DemographicMap()).lookup(persona_id or target_id)
    snapshot = tuple(interests)
    return Persona(persona_id or target_id, target_id, snapshot, gender, age, snapshot, ())


def contaminate(persona: Persona, website_id: str, footprint: Iterable[str]) -> Persona:
    """Record a visit: the site's content categories join the persona's interests."""
    have = set(persona.interests)
    added = tuple(c for c in sorted(set(footprint)) if c not in have)
    return replace(
        persona,
        interests=persona.interests + added,
        visit_history=persona.visit_history + (website_id,),
    )


def reset_to_snapshot(persona: Persona) -> Persona:
    if persona.interests == persona.initial_snapshot and not persona.visit_history:
        return persona
    return replace(persona, interests=persona.initial_snapshot, visit_history=())


def new_categories(persona: Persona) -> int:
    return len(set(persona.interests) - set(persona.initial_snapshot))


def contamination_gains(
    personas: Sequence[Persona],
    websites: Sequence,
    visits_per_persona: int,
    seed: int = 0,
) -> dict[str, int]:
    """Categories gained by each persona after visiting ``visits_per_persona`` sampled sites.

    Each persona gets its own seeded shuffle of ``websites`` (WebsiteSpec-like
    objects with ``id`` and ``content_categories``) and visits its prefix.
    """
    if not personas or (visits_per_persona > 0 and not websites):
        raise EmptySample("need at least one persona and one website")
    gains = {}
    for persona in personas:
        order = list(websites)
        random.Random(f"{seed}:{persona.id}").shuffle(order)
        p = reset_to_snapshot(persona)
        for i in range(visits_per_persona):
            site = order[i % len(order)]
            p = contaminate(p, site.id, site.content_categories)
        gains[persona.id] = new_categories(p)
    return gains


def measure_contamination(
    personas: Sequence[Persona],
    websites: Sequence,
    visits_per_persona: int,
    seed: int = 0,
) -> dict[int, float]:
    """Histogram (new-category count -> fraction of personas)."""
    gains = contamination_gains(personas, websites, visits_per_persona, seed)
    counts = Counter(gains.values())
    n = len(gains)
    return {k: counts[k] / n for k in sorted(counts)}


def save_personas(personas: Iterable[Persona], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in personas:
            fh.write(json.dumps(p.to_dict(), sort_keys=True) + "\n")


def load_personas(path: Union[str, Path]) -> list[Persona]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(Persona.from_dict(json.loads(line)))
    return out
