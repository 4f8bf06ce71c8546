"""Crawl execution: strategies, persona sessions, harvesting and impression logging."""

from __future__ import annotations

import json
import logging
import statistics
import threading
from collections import defaultdict
from contextlib import contextmanager
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

from adscape.adpipe import AdClassifier, Classification, FilterList, LandingResolver
from adscape.domains import registrable_domain
from adscape.harvester import FetchFailed, MissLog, PageSource, VisualElement, extract_visual_elements, fetch_page
from adscape.planner import ObservationSet, Pair
from adscape.profiles import Persona, contaminate, reset_to_snapshot

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SIM_EPOCH = datetime(2020, 1, 1, tzinfo=timezone.utc)


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class StrategySpec:
    name: str
    alpha: int  # rapid sequential visits per repetition
    beta: int  # repetitions, each starting from the persona snapshot

    def __post_init__(self):
        if self.alpha < 1 or self.beta < 1:
            raise ValueError("alpha and beta must be at least 1")

    @property
    def visits(self) -> int:
        return self.alpha * self.beta


SHORT = StrategySpec("short", 10, 5)
LONG = StrategySpec("long", 100, 1)
PRESETS = {"short": SHORT, "long": LONG}


def parse_strategy(text: str) -> StrategySpec:
    """``short``, ``long`` or ``name:alpha:beta``."""
    if text in PRESETS:
        return PRESETS[text]
    name, alpha, beta = text.split(":")
    return StrategySpec(name, int(alpha), int(beta))


@dataclass(frozen=True)
class Job:
    pair: Pair
    strategy: StrategySpec


@dataclass
class CrawlPlan:
    jobs: list[Job]
    worker_count: int = 1
    seed: int = 0

    def __post_init__(self):
        keys = [(j.pair, j.strategy.name) for j in self.jobs]
        if len(keys) != len(set(keys)):
            raise ValueError("duplicate (pair, strategy) job in plan")

    @classmethod
    def for_pairs(cls, pairs: Iterable[Pair], strategies: Sequence[StrategySpec], worker_count=1, seed=0):
        return cls([Job(tuple(p), s) for p in pairs for s in strategies], worker_count, seed)

    @property
    def visits(self) -> int:
        return sum(j.strategy.visits for j in self.jobs)


@dataclass(frozen=True)
class ImpressionRecord:
    website: str
    persona: str
    strategy: str
    repetition: int
    visit: int
    element: VisualElement
    classification: Classification
    ad_id: Optional[str] = None
    landing_url: Optional[str] = None
    landing_domain: Optional[str] = None
    landing_method: Optional[str] = None
    timestamp: str = ""

    @property
    def is_ad(self) -> bool:
        return self.classification.is_ad

    @property
    def pair(self) -> Pair:
        return (self.website, self.persona)

    @property
    def page_view(self) -> tuple:
        return (self.website, self.persona, self.strategy, self.repetition, self.visit)

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema": SCHEMA_VERSION,
                "website": self.website,
                "persona": self.persona,
                "strategy": self.strategy,
                "repetition": self.repetition,
                "visit": self.visit,
                "element": self.element.to_dict(),
                "classification": self.classification.to_dict(),
                "ad_id": self.ad_id,
                "landing_url": self.landing_url,
                "landing_domain": self.landing_domain,
                "landing_method": self.landing_method,
                "timestamp": self.timestamp,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "ImpressionRecord":
        d = json.loads(line)
        if d.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported impression schema {d.get('schema')!r}")
        return cls(
            d["website"], d["persona"], d["strategy"], d["repetition"], d["visit"],
            VisualElement.from_dict(d["element"]), Classification.from_dict(d["classification"]),
            d["ad_id"], d["landing_url"], d["landing_domain"], d["landing_method"], d["timestamp"],
        )


class ImpressionStore:
    """Append-only impression log (newline-delimited JSON); in memory when no path is given."""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path else None
        self.records: list[ImpressionRecord] = []
        self._lock = threading.Lock()

    def append(self, records: Iterable[ImpressionRecord]) -> None:
        records = list(records)
        with self._lock:
            if self.path is None:
                self.records.extend(records)
                return
            with open(self.path, "a", encoding="utf-8") as fh:
                for r in records:
                    fh.write(r.to_json() + "\n")

    def __iter__(self) -> Iterator[ImpressionRecord]:
        if self.path is None:
            return iter(list(self.records))
        return iter(read_log(self.path))


def read_log(path: Union[str, Path]) -> list[ImpressionRecord]:
    with open(path, encoding="utf-8") as fh:
        return [ImpressionRecord.from_json(line) for line in fh if line.strip()]


@dataclass
class RunSummary:
    jobs: int = 0
    visits: int = 0
    failed_visits: int = 0
    retries: int = 0
    impressions: int = 0
    ad_impressions: int = 0
    distinct_ads: int = 0
    unresolved_landings: int = 0

    def to_kv(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.__dict__.items())

    @classmethod
    def from_kv(cls, text: str) -> "RunSummary":
        vals = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        return cls(**{k: int(v) for k, v in vals.items()})


@dataclass
class Harvester:
    """Everything a crawl session needs besides the plan."""

    source: PageSource
    classifier: AdClassifier = field(default_factory=lambda: AdClassifier(FilterList.default()))
    resolver: Optional[LandingResolver] = None
    timeout_s: float = 70.0
    retries: int = 2
    miss_log: Optional[MissLog] = None
    wall_clock: bool = False

    def __post_init__(self):
        self._site_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _site_lock(self, website: str) -> threading.Lock:
        with self._locks_guard:
            return self._site_locks.setdefault(website, threading.Lock())

    def _timestamp(self, job_index: int, seq: int) -> str:
        if self.wall_clock:
            return datetime.now(timezone.utc).isoformat(timespec="seconds")
        return (SIM_EPOCH + timedelta(seconds=job_index * 10**5 + seq)).isoformat(timespec="seconds")

    def visit(self, persona: Persona, website: str, strategy: str, rep: int, v: int, stamp: str, turn=None):
        """Fetch one page view and classify every visual element on it.

        ``turn`` is a context manager that admits this fetch in its scheduled
        order; without one a per-website lock keeps one request in flight.
        """
        with turn if turn is not None else self._site_lock(website):
            fetched = fetch_page(
                self.source, website, persona, v, self.timeout_s, self.retries, self.miss_log,
                strategy=strategy, repetition=rep,
            )
        page = fetched.page
        out = []
        for el in extract_visual_elements(page):
            cls = self.classifier(el, page.domain)
            ad_id = landing = domain = method = None
            if cls.is_ad:
                ad_id = el.source_url
                if self.resolver is not None and el.landing_url:
                    res = self.resolver.resolve(el.landing_url)
                    landing, method = res.final_url, res.method
                    domain = res.domain
                elif el.landing_url:
                    landing, method = el.landing_url, "unresolved"
                    domain = registrable_domain(el.landing_url)
            out.append(ImpressionRecord(website, persona.id, strategy, rep, v, el, cls, ad_id, landing, domain, method, stamp))
        return out, fetched.retries

    def run_job(
        self, job_index: int, job: Job, persona: Persona, turnstile: Optional["SiteTurnstile"] = None,
    ) -> tuple[list[ImpressionRecord], RunSummary]:
        website = job.pair[0]
        strat = job.strategy
        records: list[ImpressionRecord] = []
        summary = RunSummary(jobs=1)
        footprint = self.source.footprint(website)
        for rep in range(1, strat.beta + 1):
            session = reset_to_snapshot(persona)
            for v in range(1, strat.alpha + 1):
                summary.visits += 1
                stamp = self._timestamp(job_index, (rep - 1) * strat.alpha + v)
                try:
                    turn = turnstile.turn(website, (job_index, rep, v)) if turnstile else None
                    recs, retries = self.visit(session, website, strat.name, rep, v, stamp, turn)
                except FetchFailed:
                    summary.failed_visits += 1
                    summary.retries += self.retries
                    recs = []
                else:
                    summary.retries += retries
                records.extend(recs)
                session = contaminate(session, website, footprint)
        return records, summary


class SiteTurnstile:
    """Admits page loads on each website in a precomputed order.

    The simulator's allocation streams advance per website, so concurrent
    sessions must hit a website in the same order a serial run would.
    """

    def __init__(self, order: Mapping[str, Sequence[tuple]]):
        self._order = {w: list(keys) for w, keys in order.items()}
        self._pos = {w: 0 for w in order}
        self._cond = threading.Condition()
        self._aborted = False

    def abort(self) -> None:
        with self._cond:
            self._aborted = True
            self._cond.notify_all()

    @contextmanager
    def turn(self, website: str, key: tuple):
        with self._cond:
            self._cond.wait_for(lambda: self._aborted or self._order[website][self._pos[website]] == key)
            if self._aborted:
                raise RuntimeError("crawl aborted by a failing session")
        try:
            yield
        finally:
            with self._cond:
                self._pos[website] += 1
                self._cond.notify_all()


def execute_plan(
    plan: CrawlPlan,
    harvester: Harvester,
    personas: Mapping[str, Persona],
    store: ImpressionStore,
) -> RunSummary:
    """Run every job; records reach the store in plan order.

    Jobs sharing a persona run one after another in plan order (a persona is
    owned by a single session at a time); distinct personas run on up to
    ``plan.worker_count`` threads.
    """
    missing = {j.pair[1] for j in plan.jobs} - personas.keys()
    if missing:
        raise KeyError(f"plan refers to unknown personas: {sorted(missing)[:5]}")
    by_persona: dict[str, list[int]] = defaultdict(list)
    for i, job in enumerate(plan.jobs):
        by_persona[job.pair[1]].append(i)

    results: dict[int, tuple[list[ImpressionRecord], RunSummary]] = {}

    def run_group(indices: list[int]) -> None:
        for i in indices:
            job = plan.jobs[i]
            results[i] = harvester.run_job(i, job, personas[job.pair[1]])

    groups = list(by_persona.values())
    if plan.worker_count <= 1:
        for g in groups:
            run_group(g)
    else:
        # serial order of page loads per website; a group waits only on earlier groups
        order: dict[str, list[tuple]] = defaultdict(list)
        for g in groups:
            for i in g:
                job = plan.jobs[i]
                for rep in range(1, job.strategy.beta + 1):
                    for v in range(1, job.strategy.alpha + 1):
                        order[job.pair[0]].append((i, rep, v))
        turnstile = SiteTurnstile(order)

        def run_group(indices: list[int]) -> None:
            try:
                for i in indices:
                    job = plan.jobs[i]
                    results[i] = harvester.run_job(i, job, personas[job.pair[1]], turnstile)
            except BaseException:
                turnstile.abort()
                raise

        with ThreadPoolExecutor(max_workers=plan.worker_count) as pool:
            list(pool.map(run_group, groups))

    total = RunSummary()
    ads: set[str] = set()
    for i in range(len(plan.jobs)):
        records, summary = results[i]
        store.append(records)
        for k, v in summary.__dict__.items():
            setattr(total, k, getattr(total, k) + v)
        for r in records:
            total.impressions += 1
            if r.is_ad:
                total.ad_impressions += 1
                ads.add(r.ad_id)
                if r.landing_domain is None:
                    total.unresolved_landings += 1
    total.distinct_ads = len(ads)
    if harvester.miss_log is not None:
        harvester.miss_log.flush()
    return total


def observations_from_log(records: Iterable[ImpressionRecord], pairs: Iterable[Pair] = ()) -> ObservationSet:
    """Group-by (website, persona) over ad records; ``pairs`` seeds empty entries."""
    entries: dict[Pair, set[str]] = {tuple(p): set() for p in pairs}
    for r in records:
        bucket = entries.setdefault(r.pair, set())
        if r.is_ad:
            bucket.add(r.ad_id)
    return ObservationSet({k: frozenset(v) for k, v in entries.items()})


def survey_pass(
    websites: Sequence[str],
    personas: Mapping[str, Persona],
    harvester: Harvester,
    store: ImpressionStore,
    visits: int = 5,
    worker_count: int = 1,
) -> ObservationSet:
    """Visit every website x persona pair ``visits`` times in one repetition."""
    if not websites or not personas:
        raise ValueError("survey needs non-empty website and persona pools")
    survey = StrategySpec("survey", visits, 1)
    pairs = [(w, p) for w in websites for p in personas]
    local = ImpressionStore()
    execute_plan(CrawlPlan.for_pairs(pairs, [survey], worker_count), harvester, personas, local)
    store.append(local.records)
    return observations_from_log(local.records, pairs)


@dataclass
class ArrivalCurve:
    strategy: str
    mean_new: list[float]  # index 0 is visit 1
    n_pairs: int
    slope: float
    intercept: float
    fit_start: int

    @property
    def elbow(self) -> Optional[int]:
        """First visit whose mean new-ad arrival is at most half of visit 1's."""
        if not self.mean_new or self.mean_new[0] <= 0:
            return None
        for v, y in enumerate(self.mean_new[1:], start=2):
            if y <= 0.5 * self.mean_new[0]:
                return v
        return None


def arrival_curve(records: Iterable[ImpressionRecord], strategy: str = "long", fit_start: int = 10) -> ArrivalCurve:
    """Mean number of first-seen distinct ads per visit position, with a tail line fit.

    Visit positions run across repetitions: position = (repetition-1)*alpha + visit.
    """
    per_pair: dict[Pair, dict[str, int]] = defaultdict(dict)
    alpha: dict[Pair, int] = defaultdict(int)
    views: dict[Pair, set] = defaultdict(set)
    recs = [r for r in records if r.strategy == strategy]
    if not recs:
        raise InsufficientData(f"no records for strategy {strategy!r}")
    for r in recs:
        alpha[r.pair] = max(alpha[r.pair], r.visit)
        views[r.pair].add((r.repetition, r.visit))
    for r in recs:
        if not r.is_ad:
            continue
        pos = (r.repetition - 1) * alpha[r.pair] + r.visit
        seen = per_pair[r.pair]
        if r.ad_id not in seen or pos < seen[r.ad_id]:
            seen[r.ad_id] = pos
    length = max((rep - 1) * alpha[p] + v for p in views for rep, v in views[p])
    sums = [0.0] * length
    for pair in views:
        for pos in per_pair[pair].values():
            sums[pos - 1] += 1
    n = len(views)
    mean_new = [s / n for s in sums]
    xs = list(range(fit_start, length + 1))
    if len(xs) < 2:
        raise InsufficientData(f"tail fit needs at least 2 visits from {fit_start}, have {len(xs)}")
    fit = statistics.linear_regression(xs, mean_new[fit_start - 1:])
    return ArrivalCurve(strategy, mean_new, n, fit.slope, fit.intercept, fit_start)
