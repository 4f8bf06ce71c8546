"""Page documents, visual-element extraction and retrying page fetches."""

from __future__ import annotations

import hashlib
import html
import json
import logging
import threading
from dataclasses import asdict, dataclass, field
from html.parser import HTMLParser
from pathlib import Path
from typing import Iterator, Optional, Protocol, Union

logger = logging.getLogger(__name__)

VISUAL_TAGS = ("img", "embed")
VOID_TAGS = frozenset({"img", "embed", "br", "hr", "meta", "link", "input", "source", "param", "wbr", "area"})


class PageTimeout(Exception):
    """A single page load exceeded its timeout (retryable)."""


class FetchFailed(Exception):
    """A page could not be loaded after all retries."""

    def __init__(self, website: str, attempts: int, cause: str):
        super().__init__(f"{website}: gave up after {attempts} attempts ({cause})")
        self.website = website
        self.attempts = attempts
        self.cause = cause


@dataclass
class PageElement:
    tag: str
    attrs: dict[str, str] = field(default_factory=dict)
    children: list["PageElement"] = field(default_factory=list)

    def iter(self) -> Iterator["PageElement"]:
        stack = [self]
        while stack:
            el = stack.pop()
            yield el
            stack.extend(reversed(el.children))


@dataclass
class PageDocument:
    url: str
    domain: str
    root: PageElement

    def to_html(self) -> str:
        return serialize(self.root)


@dataclass(frozen=True)
class VisualElement:
    source_url: str
    iframe_url: Optional[str] = None
    landing_url: Optional[str] = None
    width: Optional[int] = None
    height: Optional[int] = None
    div_class: Optional[str] = None
    tag: str = "img"
    element_id: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VisualElement":
        return cls(**d)


def serialize(el: PageElement) -> str:
    attrs = "".join(f' {k}="{html.escape(v, quote=True)}"' for k, v in el.attrs.items())
    if el.tag in VOID_TAGS:
        return f"<{el.tag}{attrs}>"
    inner = "".join(serialize(c) for c in el.children)
    return f"<{el.tag}{attrs}>{inner}</{el.tag}>"


class _TreeBuilder(HTMLParser):
    # saved pages inline the frame document inside <iframe>, so parse it as markup
    CDATA_CONTENT_ELEMENTS = ("script", "style")

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.root = PageElement("#document")
        self.stack = [self.root]

    def handle_starttag(self, tag, attrs):
        el = PageElement(tag, {k: (v if v is not None else "") for k, v in attrs})
        self.stack[-1].children.append(el)
        if tag not in VOID_TAGS:
            self.stack.append(el)

    def handle_startendtag(self, tag, attrs):
        el = PageElement(tag, {k: (v if v is not None else "") for k, v in attrs})
        self.stack[-1].children.append(el)

    def handle_endtag(self, tag):
        # tolerate stray or unclosed tags: pop to the nearest matching open element
        for depth in range(len(self.stack) - 1, 0, -1):
            if self.stack[depth].tag == tag:
                del self.stack[depth:]
                return


def parse_html(text: str) -> PageElement:
    builder = _TreeBuilder()
    builder.feed(text)
    builder.close()
    kids = builder.root.children
    if len(kids) == 1:
        return kids[0]
    return builder.root


def parse_page(text: str, url: str, domain: str) -> PageDocument:
    return PageDocument(url, domain, parse_html(text))


def _dimension(value: Optional[str]) -> Optional[int]:
    if value is None:
        return None
    value = value.strip().lower().removesuffix("px")
    try:
        n = int(float(value))
    except ValueError:
        return None
    return n if n > 0 else None


def extract_visual_elements(page: PageDocument) -> list[VisualElement]:
    """One VisualElement per img/embed node, in document order."""
    out: list[VisualElement] = []

    def walk(el: PageElement, iframe: Optional[str], anchor: Optional[str], div: Optional[str]) -> None:
        if el.tag == "iframe":
            iframe = el.attrs.get("src") or iframe
        elif el.tag == "a" and el.attrs.get("href"):
            anchor = el.attrs["href"]
        elif el.tag == "div" and el.attrs.get("class"):
            div = el.attrs["class"]
        if el.tag in VISUAL_TAGS:
            out.append(
                VisualElement(
                    source_url=el.attrs.get("src", ""),
                    iframe_url=iframe,
                    landing_url=anchor or el.attrs.get("data-landing") or None,
                    width=_dimension(el.attrs.get("width")),
                    height=_dimension(el.attrs.get("height")),
                    div_class=div,
                    tag=el.tag,
                    element_id=el.attrs.get("id"),
                )
            )
        for child in el.children:
            walk(child, iframe, anchor, div)

    walk(page.root, None, None, None)
    return out


class PageSource(Protocol):
    def load(self, website: str, persona, visit_index: int, timeout_s: float) -> PageDocument: ...

    def footprint(self, website: str) -> frozenset[str]: ...


class CorpusSource:
    """Stored pages laid out as ``<root>/<domain>/<visit>.html``."""

    def __init__(self, root: Union[str, Path], footprints: Optional[dict[str, frozenset[str]]] = None):
        self.root = Path(root)
        self.footprints = footprints or {}

    def load(self, website, persona, visit_index, timeout_s=70.0):
        path = self.root / website / f"{visit_index}.html"
        if not path.exists():
            raise PageTimeout(f"no stored page {path}")
        return parse_page(path.read_text(encoding="utf-8"), f"http://{website}/", website)

    def footprint(self, website):
        return self.footprints.get(website, frozenset())


def _unit_hash(*parts) -> float:
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2**64


class FaultInjectingSource:
    """Wraps a source and times out a deterministic fraction of attempts."""

    def __init__(self, inner, fail_rate: float, seed: int = 0):
        self.inner = inner
        self.fail_rate = fail_rate
        self.seed = seed
        self._attempts: dict[tuple, int] = {}
        self._lock = threading.Lock()

    def load(self, website, persona, visit_index, timeout_s=70.0):
        pid = getattr(persona, "id", persona)
        key = (website, pid, visit_index)
        with self._lock:
            n = self._attempts.get(key, 0) + 1
            self._attempts[key] = n
        if _unit_hash(self.seed, website, pid, visit_index, n) < self.fail_rate:
            raise PageTimeout(f"{website} visit {visit_index} attempt {n} exceeded {timeout_s}s")
        return self.inner.load(website, persona, visit_index, timeout_s)

    def footprint(self, website):
        return self.inner.footprint(website)


@dataclass
class FetchResult:
    page: PageDocument
    attempts: int

    @property
    def retries(self) -> int:
        return self.attempts - 1


class MissLog:
    """Append-only record of failed fetches, one JSON object per line."""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path else None
        self.entries: list[dict] = []
        self._lock = threading.Lock()

    def record(self, **entry) -> None:
        with self._lock:
            self.entries.append(entry)

    def flush(self) -> None:
        if self.path is None:
            return
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            for entry in self.entries:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
            self.entries.clear()


def fetch_page(
    source: PageSource,
    website: str,
    persona,
    visit_index: int,
    timeout_s: float = 70.0,
    retries: int = 2,
    miss_log: Optional[MissLog] = None,
    **context,
) -> FetchResult:
    """Load a page, retrying timeouts up to ``retries`` more times."""
    last = ""
    for attempt in range(1, retries + 2):
        try:
            page = source.load(website, persona, visit_index, timeout_s)
        except PageTimeout as exc:
            last = str(exc)
            logger.debug("timeout on %s visit %d (attempt %d)", website, visit_index, attempt)
            continue
        return FetchResult(page, attempt)
    attempts = retries + 1
    logger.warning("giving up on %s visit %d after %d attempts", website, visit_index, attempts)
    if miss_log is not None:
        miss_log.record(
            website=website,
            persona=getattr(persona, "id", persona),
            visit=visit_index,
            attempts=attempts,
            error=last,
            **context,
        )
    raise FetchFailed(website, attempts, last)
