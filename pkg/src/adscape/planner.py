"""Budgeted max-cover selection of (website, persona) pairs and focus-set assembly."""

from __future__ import annotations

import heapq
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from adscape.profiles import EMPTY

Pair = tuple[str, str]

MAX_BRUTE_FORCE_PAIRS = 20


class InstanceTooLarge(ValueError):
    pass


class UnsatisfiableCoverage(ValueError):
    pass


@dataclass
class ObservationSet:
    """Distinct ad ids seen per (website, persona) pair."""

    entries: dict[Pair, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.entries = {tuple(k): frozenset(v) for k, v in self.entries.items()}

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, pair: Pair) -> frozenset[str]:
        return self.entries[pair]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ObservationSet) and self.entries == other.entries

    @property
    def pairs(self) -> list[Pair]:
        return sorted(self.entries)

    @property
    def all_ads(self) -> frozenset[str]:
        return frozenset().union(*self.entries.values()) if self.entries else frozenset()

    def coverage(self, pairs: Iterable[Pair]) -> int:
        return len(frozenset().union(*(self.entries[p] for p in pairs)))

    def to_text(self) -> str:
        lines = []
        for (w, p) in self.pairs:
            ads = sorted(self.entries[(w, p)])
            if not ads:
                lines.append(f"{w}\t{p}\t")
            lines.extend(f"{w}\t{p}\t{a}" for a in ads)
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_text(cls, text: str) -> "ObservationSet":
        entries: dict[Pair, set[str]] = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            w, p, ad = (line.split("\t") + [""])[:3]
            bucket = entries.setdefault((w, p), set())
            if ad:
                bucket.add(ad)
        return cls({k: frozenset(v) for k, v in entries.items()})

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ObservationSet":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class CoverStep:
    pair: Pair
    gain: int


def greedy_max_cover(obs: ObservationSet, budget: int) -> list[CoverStep]:
    """Repeatedly take the pair adding the most not-yet-covered ads.

    Ties go to the lexicographically smallest (website, persona). The walk
    continues through zero-gain pairs until the budget or the pairs run out, so
    a large budget yields a complete ordering of the pairs.

    Marginal gains only shrink as the cover grows, so stale heap keys are upper
    bounds and a popped pair whose refreshed gain still beats the next key is
    the exact greedy choice.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if not obs.entries:
        return []
    heap = [(-len(ads), pair) for pair, ads in obs.entries.items()]
    heapq.heapify(heap)
    covered: set[str] = set()
    out: list[CoverStep] = []
    while heap and len(out) < budget:
        neg, pair = heapq.heappop(heap)
        gain = len(obs.entries[pair] - covered) if covered else -neg
        if heap and (-gain, pair) > heap[0]:
            heapq.heappush(heap, (-gain, pair))
            continue
        out.append(CoverStep(pair, gain))
        covered |= obs.entries[pair]
    return out


def brute_force_cover(obs: ObservationSet, budget: int) -> tuple[int, tuple[Pair, ...]]:
    """Exact optimum by enumerating every subset of at most ``budget`` pairs."""
    pairs = obs.pairs
    if len(pairs) > MAX_BRUTE_FORCE_PAIRS:
        raise InstanceTooLarge(f"{len(pairs)} pairs > {MAX_BRUTE_FORCE_PAIRS}")
    index = {a: i for i, a in enumerate(sorted(obs.all_ads))}
    masks = [sum(1 << index[a] for a in obs.entries[p]) for p in pairs]
    best, best_subset = 0, ()
    for k in range(0, min(budget, len(pairs)) + 1):
        for combo in combinations(range(len(pairs)), k):
            m = 0
            for i in combo:
                m |= masks[i]
            value = bin(m).count("1")
            if value > best:
                best, best_subset = value, tuple(pairs[i] for i in combo)
    return best, best_subset


PROVENANCE = ("cover", "coverage-fix", "empty-baseline")


@dataclass
class FocusSet:
    pairs: list[Pair]
    provenance: dict[Pair, str]
    budget: int

    def __len__(self) -> int:
        return len(self.pairs)

    def count(self, kind: str) -> int:
        return sum(1 for p in self.pairs if self.provenance[p] == kind)

    @property
    def websites(self) -> list[str]:
        return list(dict.fromkeys(w for w, _ in self.pairs))

    @property
    def personas(self) -> list[str]:
        return list(dict.fromkeys(p for _, p in self.pairs))

    def to_text(self) -> str:
        return "".join(f"{w}\t{p}\t{self.provenance[(w, p)]}\n" for w, p in self.pairs)

    @classmethod
    def from_text(cls, text: str, budget: int = 0) -> "FocusSet":
        pairs, prov = [], {}
        for line in text.splitlines():
            if line.strip():
                w, p, kind = line.split("\t")
                pairs.append((w, p))
                prov[(w, p)] = kind
        return cls(pairs, prov, budget or sum(1 for k in prov.values() if k == "cover"))

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FocusSet":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def build_focus_set(
    cover: Sequence[Union[CoverStep, Pair]],
    obs: Optional[ObservationSet],
    top_k: int,
    min_occurrences: int = 3,
    websites: Optional[Sequence[str]] = None,
    empty_persona: str = EMPTY,
) -> FocusSet:
    """Top ``top_k`` cover pairs, coverage fixes, then one empty-profile pair per site.

    Coverage fixes walk the rest of the cover order and add any pair whose
    website or persona (among those in the top ``top_k``) still appears in fewer
    than ``min_occurrences`` pairs. ``websites`` optionally orders the baseline
    pairs; by default they follow first appearance.
    """
    order = [s.pair if isinstance(s, CoverStep) else tuple(s) for s in cover]
    if obs is not None:
        unknown = [p for p in order if p not in obs.entries]
        if unknown:
            raise ValueError(f"cover contains pairs absent from the observations: {unknown[:3]}")
    head, tail = order[:top_k], order[top_k:]
    chosen: list[Pair] = list(dict.fromkeys(head))
    provenance = {p: "cover" for p in chosen}
    w_need = {w for w, _ in chosen}
    p_need = {p for _, p in chosen}
    w_count = Counter(w for w, _ in chosen)
    p_count = Counter(p for _, p in chosen)

    def deficient() -> tuple[set[str], set[str]]:
        return (
            {w for w in w_need if w_count[w] < min_occurrences},
            {p for p in p_need if p_count[p] < min_occurrences},
        )

    short_w, short_p = deficient()
    for pair in tail:
        if not short_w and not short_p:
            break
        if pair in provenance:
            continue
        w, p = pair
        if w in short_w or p in short_p:
            chosen.append(pair)
            provenance[pair] = "coverage-fix"
            w_count[w] += 1
            p_count[p] += 1
            if w_count[w] >= min_occurrences:
                short_w.discard(w)
            if p_count[p] >= min_occurrences:
                short_p.discard(p)
    if short_w or short_p:
        raise UnsatisfiableCoverage(
            f"fewer than {min_occurrences} pairs available for websites {sorted(short_w)[:5]} "
            f"and personas {sorted(short_p)[:5]}"
        )

    site_order = list(dict.fromkeys(w for w, _ in chosen))
    if websites is not None:
        present = set(site_order)
        site_order = [w for w in websites if w in present] + [w for w in site_order if w not in set(websites)]
    for w in site_order:
        pair = (w, empty_persona)
        if pair not in provenance:
            chosen.append(pair)
            provenance[pair] = "empty-baseline"
    return FocusSet(chosen, provenance, top_k)


def visit_budget(n_pairs: int, strategies: Iterable) -> int:
    """Visits needed to crawl ``n_pairs`` pairs once with each strategy (alpha * beta each)."""
    return sum(n_pairs * s.alpha * s.beta for s in strategies)


def cover_value(steps: Sequence[CoverStep]) -> int:
    return sum(s.gain for s in steps)


def observations_from_mapping(data: Mapping[Pair, Iterable[str]]) -> ObservationSet:
    return ObservationSet({k: frozenset(v) for k, v in data.items()})
