"""Ad identification (filter, dimension and self-ad tests) and landing-page resolution.

Filter rules use a subset of the common filter-list grammar:

* plain text matches as a case-insensitive substring,
* ``*`` matches any run of characters,
* ``^`` matches one separator character (anything but a letter, digit,
  ``_ - . %``) or the end of the string,
* a leading ``||`` anchors the rest at the start of the URL host or at any
  subdomain boundary of it.

Element-hiding rules, exceptions, ``$options`` and ``/regex/`` rules are skipped.
"""

from __future__ import annotations

import logging
import re
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Optional, Union
from urllib.parse import parse_qsl, unquote, urljoin, urlsplit

from adscape.domains import registrable_domain
from adscape.harvester import VisualElement

logger = logging.getLogger(__name__)

SEPARATOR_CLASS = r"(?:[^A-Za-z0-9_\-.%]|$)"
_HOST_ANCHOR = r"^[a-z][a-z0-9+.\-]*://(?:[^/?#]*\.)?"


@dataclass(frozen=True)
class FilterRule:
    kind: str  # substring | domain-anchor | wildcard
    body: str
    text: str

    def pattern(self) -> str:
        parts = []
        for ch in self.body:
            if ch == "*":
                parts.append(".*")
            elif ch == "^":
                parts.append(SEPARATOR_CLASS)
            else:
                parts.append(re.escape(ch))
        core = "".join(parts)
        return _HOST_ANCHOR + core if self.kind == "domain-anchor" else core


def parse_rule(line: str) -> Optional[FilterRule]:
    text = line.strip()
    if not text or text.startswith("!") or text.startswith("["):
        return None
    if "##" in text or "#@#" in text or "#?#" in text or text.startswith("@@"):
        return None
    if "$" in text or (len(text) > 1 and text.startswith("/") and text.endswith("/")):
        return None
    if text.startswith("||"):
        return FilterRule("domain-anchor", text[2:], text)
    if "*" in text or "^" in text:
        return FilterRule("wildcard", text, text)
    return FilterRule("substring", text, text)


class FilterList:
    """Ordered filter rules with a compiled fast path."""

    def __init__(self, rules: Iterable[FilterRule] = ()):
        self.rules = list(rules)
        self._compiled = [re.compile(r.pattern(), re.IGNORECASE) for r in self.rules]
        if self.rules:
            self._any = re.compile("|".join(f"(?:{r.pattern()})" for r in self.rules), re.IGNORECASE)
        else:
            self._any = None

    def __len__(self) -> int:
        return len(self.rules)

    @classmethod
    def from_text(cls, text: str) -> "FilterList":
        rules, skipped = [], 0
        for line in text.splitlines():
            rule = parse_rule(line)
            if rule is not None:
                rules.append(rule)
            elif line.strip() and not line.strip().startswith(("!", "[")):
                skipped += 1
        if skipped:
            logger.info("skipped %d filter lines outside the supported grammar", skipped)
        return cls(rules)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "FilterList":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> "FilterList":
        return cls.from_text(resources.files("adscape.data").joinpath("filters.txt").read_text(encoding="utf-8"))

    def to_text(self) -> str:
        return "".join(r.text + "\n" for r in self.rules)

    def first_match(self, values: Iterable[Optional[str]]) -> Optional[FilterRule]:
        values = [v for v in values if v]
        if self._any is None or not any(self._any.search(v) for v in values):
            return None
        for rule, rx in zip(self.rules, self._compiled):
            if any(rx.search(v) for v in values):
                return rule
        return None


def match_filter(filters: FilterList, el: VisualElement) -> tuple[bool, Optional[FilterRule]]:
    """Test source, iframe, div class and landing URL against the list."""
    rule = filters.first_match((el.source_url, el.iframe_url, el.div_class, el.landing_url))
    return rule is not None, rule


DEFAULT_DIMENSIONS = (
    (728, 90), (300, 250), (160, 600), (468, 60), (320, 50), (300, 600), (970, 250),
    (336, 280), (120, 600), (250, 250), (200, 200), (180, 150), (125, 125), (234, 60),
    (970, 90), (320, 100), (300, 50), (300, 100), (120, 240), (240, 400), (980, 120),
    (930, 180), (580, 400), (750, 200), (88, 31),
)


@dataclass(frozen=True)
class DimensionList:
    entries: frozenset[tuple[int, int]] = frozenset(DEFAULT_DIMENSIONS)

    def __post_init__(self):
        if not self.entries:
            raise ValueError("dimension list must not be empty")
        if any(w <= 0 or h <= 0 for w, h in self.entries):
            raise ValueError("dimensions must be positive")

    def __contains__(self, dims: tuple) -> bool:
        return dims in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def from_text(cls, text: str) -> "DimensionList":
        entries = set()
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("!") or line.startswith("#"):
                continue
            w, h = line.lower().split("x")
            entries.add((int(w), int(h)))
        return cls(frozenset(entries))

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "DimensionList":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def to_text(self) -> str:
        return "".join(f"{w}x{h}\n" for w, h in sorted(self.entries))


def dimension_test(dims: DimensionList, el: VisualElement) -> bool:
    return (el.width, el.height) in dims


def self_ad_test(el: VisualElement, page_domain: str) -> bool:
    """True iff the element links out of the page's registrable domain."""
    landing = registrable_domain(el.landing_url) if el.landing_url else None
    if landing is None:
        return False
    return landing != registrable_domain(page_domain)


@dataclass(frozen=True)
class Classification:
    is_ad: bool
    filter_pass: bool
    dimension_pass: bool
    self_ad_pass: bool
    matched_rule: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "is_ad": self.is_ad,
            "filter_pass": self.filter_pass,
            "dimension_pass": self.dimension_pass,
            "self_ad_pass": self.self_ad_pass,
            "matched_rule": self.matched_rule,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Classification":
        return cls(**d)


def classify(el: VisualElement, page_domain: str, filters: FilterList, dims: DimensionList) -> Classification:
    hit, rule = match_filter(filters, el)
    dim_ok = dimension_test(dims, el)
    external = self_ad_test(el, page_domain)
    return Classification(hit and dim_ok and external, hit, dim_ok, external, rule.text if rule else None)


# --- landing pages -----------------------------------------------------------


class ResolveError(Exception):
    pass


class RedirectLoop(ResolveError):
    pass


class HopLimitExceeded(ResolveError):
    pass


class RequestBlocked(ResolveError):
    """The fetcher could not complete a request (blocked, refused, script-driven)."""


@dataclass(frozen=True)
class Response:
    status: int
    location: Optional[str] = None


Fetcher = Callable[[str], Response]


@dataclass(frozen=True)
class ResolvedLanding:
    original_url: str
    final_url: Optional[str]
    hop_count: int
    method: str  # http-chain | query-decode | failed

    @property
    def domain(self) -> Optional[str]:
        return registrable_domain(self.final_url) if self.final_url else None


_LANDING_KEYS = ("url", "u", "adurl", "dest", "destination", "redirect", "landing", "to", "target")


def decode_query_landing(url: str) -> Optional[str]:
    """Find an absolute http(s) URL embedded in the query string of ``url``."""
    try:
        pairs = parse_qsl(urlsplit(url).query, keep_blank_values=False)
    except ValueError:
        return None
    ranked = sorted(pairs, key=lambda kv: (kv[0].lower() not in _LANDING_KEYS,))
    for _, value in ranked:
        for _ in range(3):
            if value.lower().startswith(("http://", "https://")):
                if urlsplit(value).hostname:
                    return value
                break
            decoded = unquote(value)
            if decoded == value:
                break
            value = decoded
    return None


def resolve_landing(url: str, fetcher: Fetcher, max_hops: int = 10) -> ResolvedLanding:
    """Follow HTTP redirects to the final destination.

    When the chain cannot be completed, fall back to a landing URL encoded in the
    original URL's query string.
    """
    seen = {url}
    current = url
    hops = 0
    try:
        while True:
            resp = fetcher(current)
            if resp.location is None or not (300 <= resp.status < 400):
                return ResolvedLanding(url, current, hops, "http-chain")
            nxt = urljoin(current, resp.location)
            if nxt in seen:
                raise RedirectLoop(nxt)
            if hops == max_hops:
                raise HopLimitExceeded(url)
            hops += 1
            seen.add(nxt)
            current = nxt
    except ResolveError as exc:
        logger.debug("redirect chain for %s broke: %r", url, exc)
    decoded = decode_query_landing(url)
    if decoded:
        return ResolvedLanding(url, decoded, hops, "query-decode")
    return ResolvedLanding(url, None, hops, "failed")


class PoliteFetcher:
    """Caps concurrent requests per registrable domain."""

    def __init__(self, inner: Fetcher, per_domain: int = 2):
        self.inner = inner
        self.per_domain = per_domain
        self._gates: dict[str, threading.BoundedSemaphore] = {}
        self._lock = threading.Lock()

    def __call__(self, url: str) -> Response:
        key = registrable_domain(url) or ""
        with self._lock:
            gate = self._gates.setdefault(key, threading.BoundedSemaphore(self.per_domain))
        with gate:
            return self.inner(url)


class HttpFetcher:
    """Single non-following HTTP request per call."""

    def __init__(self, timeout_s: float = 10.0, user_agent: str = "adscape/0.1"):
        self.timeout_s = timeout_s
        self.user_agent = user_agent

    def __call__(self, url: str) -> Response:
        import requests

        try:
            r = requests.get(
                url,
                allow_redirects=False,
                timeout=self.timeout_s,
                headers={"User-Agent": self.user_agent},
                stream=True,
            )
            r.close()
        except requests.RequestException as exc:
            raise RequestBlocked(str(exc)) from exc
        return Response(r.status_code, r.headers.get("Location"))


@dataclass
class LandingResolver:
    """Memoizing resolver with an optional tab-separated cache file."""

    fetcher: Fetcher
    max_hops: int = 10
    cache: dict[str, ResolvedLanding] = field(default_factory=dict)

    def __post_init__(self):
        self._lock = threading.Lock()

    def resolve(self, url: str) -> ResolvedLanding:
        with self._lock:
            hit = self.cache.get(url)
        if hit is not None:
            return hit
        result = resolve_landing(url, self.fetcher, self.max_hops)
        with self._lock:
            self.cache[url] = result
        return result

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for url in sorted(self.cache):
                r = self.cache[url]
                fh.write(f"{r.original_url}\t{r.final_url or ''}\t{r.hop_count}\t{r.method}\n")

    def load(self, path: Union[str, Path]) -> None:
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            original, final, hops, method = line.split("\t")
            self.cache[original] = ResolvedLanding(original, final or None, int(hops), method)


@dataclass
class AdClassifier:
    filters: FilterList
    dims: DimensionList = field(default_factory=DimensionList)

    def __call__(self, el: VisualElement, page_domain: str) -> Classification:
        return classify(el, page_domain, self.filters, self.dims)
