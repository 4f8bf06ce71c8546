"""Analyses over impression logs: targeting tests, frequency caps, page composition,
advertiser rank drift, contribution curves and the profile x ad-category heat map.

Every function is a pure function of the records it is given.
"""

from __future__ import annotations

import csv
import logging
import math
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from adscape.domains import registrable_domain
from adscape.profiles import EMPTY, Persona
from adscape.special import chi2_sf

logger = logging.getLogger(__name__)

ATTRIBUTES = ("profile", "gender", "age")
UNKNOWN = "Unknown"


class TooFewPersonas(ValueError):
    pass


class InsufficientPairs(ValueError):
    pass


# --- targeting ------------------------------------------------------------------


@dataclass(frozen=True)
class TargetingResult:
    ad_id: str
    chi2: float
    p_value: float
    df: int
    targeted: bool
    low_expected: bool
    counts: tuple[int, ...]


def pearson_chi2(observed: Sequence[float], expected: Sequence[float]) -> float:
    return sum((o - e) ** 2 / e for o, e in zip(observed, expected) if e > 0)


def _group_of(attribute: str, personas: Optional[Mapping[str, Persona]]):
    if attribute == "profile":
        return lambda pid: pid
    if attribute not in ATTRIBUTES:
        raise ValueError(f"attribute must be one of {ATTRIBUTES}")
    if personas is None:
        raise ValueError(f"{attribute} targeting needs persona demographics")

    def group(pid: str) -> Optional[str]:
        p = personas.get(pid)
        # personas lacking either attribute are dropped from demographic analysis
        if p is None or p.gender is None or p.age_group is None:
            return None
        return p.gender if attribute == "gender" else p.age_group

    return group


def targeting_test(
    records: Iterable,
    website: str,
    personas: Optional[Mapping[str, Persona]] = None,
    attribute: str = "profile",
    alpha: float = 0.05,
    bonferroni: bool = False,
) -> dict[str, TargetingResult]:
    """Pearson chi-squared test of each ad's spread over personas (or demographic groups).

    Expected counts are proportional to each group's page views of the website,
    which reduces to the uniform expectation when visits are balanced.
    """
    group = _group_of(attribute, personas)
    views: dict[str, set] = defaultdict(set)
    ad_counts: dict[str, Counter] = defaultdict(Counter)
    for r in records:
        if r.website != website:
            continue
        g = group(r.persona)
        if g is None:
            continue
        views[g].add(r.page_view)
        if r.is_ad:
            ad_counts[r.ad_id][g] += 1
    groups = sorted(g for g in views if views[g])
    if len(groups) < 2:
        raise TooFewPersonas(f"{website}: {len(groups)} {attribute} group(s) with visits")
    visit_n = [len(views[g]) for g in groups]
    total_visits = sum(visit_n)
    df = len(groups) - 1
    threshold = alpha / max(1, len(ad_counts)) if bonferroni else alpha
    out = {}
    for ad in sorted(ad_counts):
        observed = [ad_counts[ad][g] for g in groups]
        total = sum(observed)
        expected = [total * n / total_visits for n in visit_n]
        stat = pearson_chi2(observed, expected)
        p = chi2_sf(stat, df)
        low = min(expected) < 5
        out[ad] = TargetingResult(ad, stat, p, df, p < threshold, low, tuple(observed))
    n_low = sum(r.low_expected for r in out.values())
    if n_low:
        logger.debug("%s: %d of %d ads have expected counts below 5", website, n_low, len(out))
    return out


def pairs_per_website(records: Iterable) -> dict[str, int]:
    seen: dict[str, set] = defaultdict(set)
    for r in records:
        seen[r.website].add(r.persona)
    return {w: len(p) for w, p in seen.items()}


def targeted_fraction(
    records: Sequence,
    website: str,
    attribute: str = "profile",
    personas: Optional[Mapping[str, Persona]] = None,
    min_pairs: int = 10,
    alpha: float = 0.05,
) -> float:
    n_pairs = len({r.persona for r in records if r.website == website})
    if n_pairs < min_pairs:
        raise InsufficientPairs(f"{website} appears in {n_pairs} pairs (< {min_pairs})")
    results = targeting_test(records, website, personas, attribute, alpha)
    if not results:
        return 0.0
    return sum(r.targeted for r in results.values()) / len(results)


# --- frequency caps -------------------------------------------------------------


@dataclass(frozen=True)
class FrequencyCapEstimate:
    ad_id: str
    empirical_frequency: int
    support: int
    accepted: bool
    reason: str = ""


def estimate_frequency_caps(records: Iterable, C_const: int = 5, almost_every: float = 0.9) -> list[FrequencyCapEstimate]:
    """Empirical frequency caps: the largest per-pair show count, if enough pairs hit it.

    Ads shown at most once per pair, or shown to some attaining pair on at least
    ``almost_every`` of its visits, are excluded.
    """
    shows: dict[str, Counter] = defaultdict(Counter)
    pair_views: dict[tuple, set] = defaultdict(set)
    for r in records:
        pair_views[r.pair].add(r.page_view)
        if r.is_ad:
            shows[r.ad_id][r.pair] += 1
    out = []
    for ad in sorted(shows):
        per_pair = shows[ad]
        fe = max(per_pair.values())
        attaining = [p for p, n in per_pair.items() if n == fe]
        c = len(attaining)
        if fe < 2:
            out.append(FrequencyCapEstimate(ad, fe, c, False, "shown at most once per pair"))
        elif any(fe >= almost_every * len(pair_views[p]) for p in attaining):
            out.append(FrequencyCapEstimate(ad, fe, c, False, "shown on almost every visit"))
        elif c < C_const:
            out.append(FrequencyCapEstimate(ad, fe, c, False, f"support {c} < {C_const}"))
        else:
            out.append(FrequencyCapEstimate(ad, fe, c, True))
    return out


# --- page composition -------------------------------------------------------------


def _ads_by_view(records: Iterable) -> dict[tuple, list]:
    views: dict[tuple, list] = {}
    for r in records:
        bucket = views.setdefault(r.page_view, [])
        if r.is_ad:
            bucket.append(r)
    return views


def placements_distribution(records: Iterable) -> dict[int, int]:
    """Page views per number of classified ads on the page."""
    counts = Counter(len(ads) for ads in _ads_by_view(records).values())
    return dict(sorted(counts.items()))


def normalize(hist: Mapping[int, float]) -> dict[int, float]:
    total = sum(hist.values())
    return {k: v / total for k, v in hist.items()} if total else {}


@dataclass
class AdvertisersPerPage:
    cells: dict[tuple[int, int], int]
    excluded: int

    @property
    def included(self) -> int:
        return sum(self.cells.values())

    def row_fractions(self, placements: int) -> dict[int, float]:
        row = {a: n for (p, a), n in self.cells.items() if p == placements}
        return normalize(row)


def advertisers_per_page(records: Iterable) -> AdvertisersPerPage:
    """(placements, distinct advertisers) -> page views; pages with unresolved landings are tallied apart."""
    cells: Counter = Counter()
    excluded = 0
    for ads in _ads_by_view(records).values():
        if not ads:
            continue
        if any(r.landing_domain is None for r in ads):
            excluded += 1
            continue
        cells[(len(ads), len({r.landing_domain for r in ads}))] += 1
    return AdvertisersPerPage(dict(sorted(cells.items())), excluded)


# --- advertiser rank ------------------------------------------------------------


@dataclass(frozen=True)
class RankPoint:
    visit: int
    mean: float
    low: float
    high: float
    n: int


def mean_ci(values: Sequence[float], z: float = 1.96) -> tuple[float, float, float]:
    m = statistics.fmean(values)
    if len(values) < 2:
        return m, math.nan, math.nan
    half = z * statistics.stdev(values) / math.sqrt(len(values))
    return m, m - half, m + half


def advertiser_rank_curve(
    records: Iterable,
    ranks: Mapping[str, Optional[int]],
    strategy: str = "long",
    empty_personas: Iterable[str] = (EMPTY,),
) -> dict[str, list[RankPoint]]:
    """Mean advertiser rank per visit, split into ``empty`` and ``non-empty`` personas."""
    empty = set(empty_personas)
    rank_of = {registrable_domain(d) or d: r for d, r in ranks.items() if r is not None}
    buckets: dict[str, dict[int, list[int]]] = {"empty": defaultdict(list), "non-empty": defaultdict(list)}
    alpha: dict[tuple, int] = defaultdict(int)
    recs = [r for r in records if r.strategy == strategy]
    for r in recs:
        alpha[r.pair] = max(alpha[r.pair], r.visit)
    for r in recs:
        if not r.is_ad or r.landing_domain is None:
            continue
        rank = rank_of.get(r.landing_domain)
        if rank is None:
            continue
        pos = (r.repetition - 1) * alpha[r.pair] + r.visit
        buckets["empty" if r.persona in empty else "non-empty"][pos].append(rank)
    out = {}
    for group, by_visit in buckets.items():
        points = []
        for v in sorted(by_visit):
            m, lo, hi = mean_ci(by_visit[v])
            points.append(RankPoint(v, m, lo, hi, len(by_visit[v])))
        out[group] = points
    return out


# --- contribution ---------------------------------------------------------------


@dataclass
class ContributionCurves:
    websites: list[tuple[str, int]]  # (website, cumulative distinct ads through it)
    personas: list[tuple[str, int]]
    total: int


def _cumulative(groups: Mapping[str, set]) -> list[tuple[str, int]]:
    order = sorted(groups, key=lambda k: (-len(groups[k]), k))
    seen: set = set()
    out = []
    for k in order:
        seen |= groups[k]
        out.append((k, len(seen)))
    return out


def contribution_curves(records: Iterable) -> ContributionCurves:
    by_site: dict[str, set] = defaultdict(set)
    by_persona: dict[str, set] = defaultdict(set)
    for r in records:
        if r.is_ad:
            by_site[r.website].add(r.ad_id)
            by_persona[r.persona].add(r.ad_id)
    total = len(set().union(*by_site.values())) if by_site else 0
    return ContributionCurves(_cumulative(by_site), _cumulative(by_persona), total)


def top_share(curve: Sequence[tuple[str, int]], total: int, fraction: float) -> float:
    """Share of all distinct ads produced by the top ``fraction`` of the ranked items."""
    if not curve or not total:
        return 0.0
    k = max(1, math.ceil(fraction * len(curve)))
    return curve[k - 1][1] / total


# --- advertiser categories ---------------------------------------------------------


class CategoryMapping:
    """Per-source domain categories resolved to canonical categories.

    File format, tab separated::

        priority  <source>[,<source>...]
        domain    <source>  <domain>  <raw category>
        resolve   <raw category>  <canonical category>
    """

    def __init__(
        self,
        sources: Mapping[str, Mapping[str, str]],
        resolution: Mapping[str, str],
        priority: Sequence[str],
    ):
        self.sources = {s: {registrable_domain(d) or d: raw for d, raw in m.items()} for s, m in sources.items()}
        self.resolution = dict(resolution)
        self.priority = list(priority)
        unknown = set(self.priority) - set(self.sources)
        if unknown:
            raise ValueError(f"priority names unknown sources {sorted(unknown)}")
        for s, m in self.sources.items():
            missing = {raw for raw in m.values() if raw not in self.resolution}
            if missing:
                raise ValueError(f"source {s} uses unresolved categories {sorted(missing)[:5]}")

    @classmethod
    def from_text(cls, text: str) -> "CategoryMapping":
        sources: dict[str, dict[str, str]] = defaultdict(dict)
        resolution: dict[str, str] = {}
        priority: list[str] = []
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if cols[0] == "priority":
                priority = [s.strip() for s in cols[1].split(",") if s.strip()]
            elif cols[0] == "domain":
                sources[cols[1]][cols[2]] = cols[3]
            elif cols[0] == "resolve":
                resolution[cols[1]] = cols[2]
            else:
                raise ValueError(f"unknown mapping record {cols[0]!r}")
        return cls(sources, resolution, priority or sorted(sources))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CategoryMapping":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def to_text(self) -> str:
        lines = ["priority\t" + ",".join(self.priority)]
        for s in self.priority:
            lines += [f"domain\t{s}\t{d}\t{raw}" for d, raw in sorted(self.sources[s].items())]
        lines += [f"resolve\t{raw}\t{canon}" for raw, canon in sorted(self.resolution.items())]
        return "\n".join(lines) + "\n"


def categorize_advertiser(mapping: CategoryMapping, domain: Optional[str]) -> str:
    key = registrable_domain(domain) if domain else None
    if key is None:
        return UNKNOWN
    for source in mapping.priority:
        raw = mapping.sources[source].get(key)
        if raw is not None:
            return mapping.resolution[raw]
    return UNKNOWN


def category_distribution(records: Iterable, mapping: CategoryMapping) -> dict[str, int]:
    counts = Counter(categorize_advertiser(mapping, r.landing_domain) for r in records if r.is_ad)
    return dict(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))


# --- heat map -------------------------------------------------------------------


@dataclass
class HeatMap:
    rows: list[str]
    cols: list[str]
    cells: dict[tuple[str, str], float]
    raw: dict[tuple[str, str], float] = field(default_factory=dict)
    zero_rows: list[str] = field(default_factory=list)

    def row(self, r: str) -> dict[str, float]:
        return {c: self.cells.get((r, c), 0.0) for c in self.cols}

    def row_sum(self, r: str) -> float:
        return math.fsum(self.row(r).values())


def persona_rows(personas: Mapping[str, Persona]) -> dict[str, str]:
    """Persona id -> heat-map row label (top-level interest category, or EMPTY)."""
    return {
        pid: (EMPTY if p.is_empty else p.target_category.split("/", 1)[0])
        for pid, p in personas.items()
    }


def heat_map(records: Sequence, mapping: CategoryMapping, rows_of: Mapping[str, str]) -> HeatMap:
    """Each impression adds 1/(personas that saw the ad) to (persona row, ad category); rows are then normalized."""
    viewers: dict[str, set] = defaultdict(set)
    ads = [r for r in records if r.is_ad]
    for r in ads:
        viewers[r.ad_id].add(r.persona)
    raw: dict[tuple[str, str], float] = defaultdict(float)
    row_names = sorted(set(rows_of.values()) | {rows_of.get(r.persona, r.persona) for r in records})
    col_names: set[str] = set()
    for r in ads:
        row = rows_of.get(r.persona, r.persona)
        col = categorize_advertiser(mapping, r.landing_domain)
        col_names.add(col)
        raw[(row, col)] += 1.0 / len(viewers[r.ad_id])
    cols = sorted(col_names)
    cells = {}
    zero = []
    for row in row_names:
        total = math.fsum(raw.get((row, c), 0.0) for c in cols)
        if total == 0:
            zero.append(row)
            continue
        for c in cols:
            if (row, c) in raw:
                cells[(row, c)] = raw[(row, c)] / total
    return HeatMap(row_names, cols, cells, dict(raw), zero)


# --- reports --------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else format(v, ".10g")
    return "" if v is None else str(v)


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


REPORT_FILES = (
    "arrival_long.csv",
    "arrival_short.csv",
    "targeting.csv",
    "targeting_ads.csv",
    "frequency_caps.csv",
    "placements.csv",
    "advertisers_per_page.csv",
    "advertiser_rank.csv",
    "contribution_websites.csv",
    "contribution_personas.csv",
    "advertiser_categories.csv",
    "heat_map.csv",
)


def analyze_all(
    records: Sequence,
    outdir: Union[str, Path],
    personas: Mapping[str, Persona],
    ranks: Mapping[str, Optional[int]],
    mapping: CategoryMapping,
    min_pairs: int = 10,
    C_const: int = 5,
) -> list[Path]:
    """Write one CSV per analysis into ``outdir``."""
    from adscape.controller import InsufficientData, arrival_curve

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)

    for strategy in ("long", "short"):
        path = out / f"arrival_{strategy}.csv"
        try:
            curve = arrival_curve(records, strategy)
        except InsufficientData:
            write_csv(path, ["visit", "mean_new_ads", "fit"], [])
            continue
        write_csv(
            path,
            ["visit", "mean_new_ads", "fit"],
            [(v, y, curve.slope * v + curve.intercept if v >= curve.fit_start else None)
             for v, y in enumerate(curve.mean_new, start=1)],
        )

    table, ad_rows = [], []
    for website, n in sorted(pairs_per_website(records).items()):
        if n < min_pairs:
            continue
        row = [website, n]
        for attribute in ATTRIBUTES:
            try:
                res = targeting_test(records, website, personas, attribute)
            except TooFewPersonas:
                row.append(None)
                continue
            row.append(sum(r.targeted for r in res.values()) / len(res) if res else 0.0)
            for r in res.values():
                ad_rows.append((website, attribute, r.ad_id, r.chi2, r.p_value, r.df, int(r.targeted), int(r.low_expected)))
        table.append(row)
    table.sort(key=lambda row: (-(row[2] or 0.0), row[0]))
    write_csv(out / "targeting.csv", ["website", "pairs", "profile", "gender", "age"], table)
    write_csv(out / "targeting_ads.csv", ["website", "attribute", "ad_id", "chi2", "p_value", "df", "targeted", "low_expected"], ad_rows)

    caps = estimate_frequency_caps(records, C_const)
    write_csv(
        out / "frequency_caps.csv",
        ["ad_id", "empirical_frequency", "support", "accepted", "reason"],
        [(c.ad_id, c.empirical_frequency, c.support, int(c.accepted), c.reason) for c in caps if c.empirical_frequency >= 2],
    )

    hist = placements_distribution(records)
    frac = normalize(hist)
    write_csv(out / "placements.csv", ["placements", "page_views", "fraction"], [(k, v, frac[k]) for k, v in hist.items()])

    app = advertisers_per_page(records)
    write_csv(
        out / "advertisers_per_page.csv",
        ["placements", "advertisers", "page_views"],
        [(p, a, n) for (p, a), n in app.cells.items()] + [("unresolved", "", app.excluded)],
    )

    curves = advertiser_rank_curve(records, ranks)
    write_csv(
        out / "advertiser_rank.csv",
        ["group", "visit", "mean_rank", "ci_low", "ci_high", "n"],
        [(g, p.visit, p.mean, p.low, p.high, p.n) for g in ("empty", "non-empty") for p in curves[g]],
    )

    contrib = contribution_curves(records)
    write_csv(out / "contribution_websites.csv", ["k", "website", "cumulative_distinct_ads"],
              [(k, w, n) for k, (w, n) in enumerate(contrib.websites, start=1)])
    write_csv(out / "contribution_personas.csv", ["k", "persona", "cumulative_distinct_ads"],
              [(k, p, n) for k, (p, n) in enumerate(contrib.personas, start=1)])

    write_csv(out / "advertiser_categories.csv", ["category", "impressions"], category_distribution(records, mapping).items())

    hm = heat_map(records, mapping, persona_rows(personas))
    write_csv(
        out / "heat_map.csv",
        ["profile_category"] + hm.cols,
        [[r] + [hm.cells.get((r, c), 0.0) for c in hm.cols] for r in hm.rows],
    )
    return [out / name for name in REPORT_FILES]
