import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from adscape.ecosystem import EcosystemState, SimulatorSource
from adscape.harvester import (
    CorpusSource,
    FaultInjectingSource,
    FetchFailed,
    MissLog,
    PageDocument,
    PageElement,
    PageTimeout,
    extract_visual_elements,
    fetch_page,
    parse_page,
    serialize,
)


def page(html, domain="news.example"):
    return parse_page(html, f"http://{domain}/", domain)


def test_no_visual_elements():
    assert extract_visual_elements(page("<html><body><p>text</p><a href='x'>y</a></body></html>")) == []


def test_iframe_inside_anchor_context():
    doc = page(
        '<div class="sidebar"><a href="http://click.example/c/1"><iframe src="http://serve.example/f">'
        '<img src="http://cdn.example/a.gif" width="300" height="250"></iframe></a></div>'
    )
    [el] = extract_visual_elements(doc)
    assert el.iframe_url == "http://serve.example/f"
    assert el.landing_url == "http://click.example/c/1"
    assert el.div_class == "sidebar"
    assert (el.width, el.height) == (300, 250)


def test_landing_falls_back_to_data_attribute_and_missing_fields():
    [a, b] = extract_visual_elements(page(
        '<img src="x.gif" data-landing="http://shop.example/p"><embed width="abc">'
    ))
    assert a.landing_url == "http://shop.example/p" and a.width is None
    assert b.tag == "embed" and b.source_url == "" and b.landing_url is None


def test_nearest_anchor_and_div_win():
    [el] = extract_visual_elements(page(
        '<div class="outer"><a href="http://a.example/"><div class="inner"><a href="http://b.example/">'
        '<img src="i.gif"></a></div></a></div>'
    ))
    assert el.landing_url == "http://b.example/" and el.div_class == "inner"


def test_simulator_page_counts(eco, personas):
    state = EcosystemState(eco.catalog, 1)
    p = next(iter(personas.values()))
    for w in eco.catalog.pool[:5]:
        doc = state.render_page(w.id, p, 1)
        truth = state.page_truth(doc)
        assert len(extract_visual_elements(doc)) == w.placements + len(truth.non_ads)


# random documents for the structural properties
tags = st.sampled_from(["div", "a", "iframe", "span", "img", "embed", "p"])


@st.composite
def elements(draw, depth=0):
    tag = draw(tags)
    attrs = {}
    if tag in ("img", "embed"):
        attrs["src"] = draw(st.from_regex(r"http://[a-z]{1,6}\.example/[a-z0-9]{0,5}\.gif", fullmatch=True))
        if draw(st.booleans()):
            attrs["width"] = str(draw(st.integers(1, 999)))
            attrs["height"] = str(draw(st.integers(1, 999)))
        return PageElement(tag, attrs)
    if tag == "a":
        attrs["href"] = draw(st.from_regex(r"http://[a-z]{1,6}\.example/\?u=[a-z&=%]{0,8}", fullmatch=True))
    elif tag == "iframe":
        attrs["src"] = "http://frame.example/" + draw(st.text("abc", max_size=3))
    elif tag == "div" and draw(st.booleans()):
        attrs["class"] = draw(st.sampled_from(["ad", "banner top", "x-1"]))
    kids = draw(st.lists(elements(depth + 1), max_size=3)) if depth < 4 else []
    return PageElement(tag, attrs, kids)


def count_visual_tags(html):
    # independent counter over the serialized markup
    return len(re.findall(r"<(?:img|embed)[\s>/]", html))


@given(st.lists(elements(), max_size=5))
def test_extraction_counts_and_round_trip(children):
    root = PageElement("html", {}, [PageElement("body", {}, children)])
    doc = PageDocument("http://site.example/", "site.example", root)
    html = serialize(root)
    first = extract_visual_elements(doc)
    assert len(first) == count_visual_tags(html)
    again = parse_page(html, doc.url, doc.domain)
    assert extract_visual_elements(again) == first
    assert extract_visual_elements(doc) == first  # pure


class FlakySource:
    def __init__(self, failures):
        self.failures = failures
        self.calls = 0

    def load(self, website, persona, visit_index, timeout_s=70.0):
        self.calls += 1
        if self.calls <= self.failures:
            raise PageTimeout("slow")
        return page("<img src='a.gif'>", website)

    def footprint(self, website):
        return frozenset()


def test_retry_contract():
    result = fetch_page(FlakySource(2), "news.example", "p", 1)
    assert result.retries == 2
    log = MissLog()
    with pytest.raises(FetchFailed):
        fetch_page(FlakySource(3), "news.example", "p", 1, miss_log=log)
    assert log.entries[0]["attempts"] == 3


def test_simulator_source_never_fails(eco, personas):
    src = SimulatorSource(EcosystemState(eco.catalog))
    p = personas["EMPTY"]
    for v in range(1, 20):
        assert fetch_page(src, eco.catalog.pool[0].id, p, v).retries == 0


def test_fault_injection_loss_rate(eco, personas):
    # per-attempt rate r: a page is lost only when all three attempts fail
    rate = 0.2
    src = FaultInjectingSource(SimulatorSource(EcosystemState(eco.catalog)), rate, seed=4)
    p = personas["EMPTY"]
    lost = retried = 0
    n = 4000
    for v in range(1, n + 1):
        try:
            r = fetch_page(src, eco.catalog.pool[0].id, p, v)
            retried += r.retries > 0
        except FetchFailed:
            lost += 1
    assert lost / n == pytest.approx(rate**3, abs=0.006)
    assert retried / n == pytest.approx(rate - rate**3, abs=0.02)


def test_corpus_source(tmp_path):
    (tmp_path / "news.example").mkdir()
    (tmp_path / "news.example" / "1.html").write_text("<img src='http://x.example/a.gif'>")
    src = CorpusSource(tmp_path)
    assert len(extract_visual_elements(fetch_page(src, "news.example", "p", 1).page)) == 1
    log = MissLog(tmp_path / "misses.jsonl")
    with pytest.raises(FetchFailed):
        fetch_page(src, "news.example", "p", 2, miss_log=log)
    log.flush()
    assert len((tmp_path / "misses.jsonl").read_text().splitlines()) == 1
