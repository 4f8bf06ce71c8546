import statistics

import pytest
from hypothesis import given
from hypothesis import strategies as st

from adscape.ecosystem import Catalog, WebsiteSpec
from adscape.fixtures import contamination_fixture
from adscape.profiles import (
    EMPTY,
    DemographicMap,
    EmptySample,
    InsufficientSites,
    Persona,
    build_persona,
    contaminate,
    contamination_gains,
    empty_persona,
    load_personas,
    measure_contamination,
    new_categories,
    reset_to_snapshot,
    save_personas,
)
from adscape.taxonomy import relevance_fraction

FIX = contamination_fixture()


def sites(*footprints, start=1):
    return [WebsiteSpec(f"s{i}.example", 1, frozenset(f), start + i, in_pool=False) for i, f in enumerate(footprints)]


def test_pure_footprint_persona(tree):
    cat = Catalog(sites(*[{"Finance"}] * 5), [], [])
    p = build_persona(tree, "Finance", cat, n_sites=5)
    assert p.interests == ("Finance",)
    assert relevance_fraction(tree, p.target_category, p.interests) == 1.0
    assert p.initial_snapshot == p.interests


def test_mixed_footprint_contains_irrelevant(tree):
    cat = Catalog(sites({"Finance", "Business & Industrial"}, {"Finance/Investing", "News"}, {"Finance"}), [], [])
    p = build_persona(tree, "Finance", cat, n_sites=3)
    assert {"Business & Industrial", "News"} <= set(p.interests)
    assert relevance_fraction(tree, "Finance", p.interests) < 1.0


def test_interests_equal_union_of_top_sites(eco, tree):
    target = eco.persona_targets[0]
    p = build_persona(tree, target, eco.catalog, 10)
    related = sorted(
        (s for s in eco.catalog.websites.values() if any(c == target or c.startswith(target + "/") for c in s.content_categories)),
        key=lambda s: (s.popularity_rank, s.id),
    )[:10]
    assert set(p.interests) == set().union(*(s.content_categories for s in related))


def test_insufficient_sites(tree):
    with pytest.raises(InsufficientSites):
        build_persona(tree, "Finance", Catalog(sites({"Finance"}), [], []), n_sites=2)


def test_average_initial_interests_near_eight(personas):
    built = [p for p in personas.values() if not p.is_empty]
    assert 6 <= statistics.mean(len(p.interests) for p in built) <= 10
    assert 6 <= statistics.mean(len(p.interests) for p in FIX.personas) <= 10


def test_empty_persona():
    e = empty_persona()
    assert e.is_empty and e.interests == () and e.gender is None and e.age_group is None
    with pytest.raises(ValueError):
        Persona(EMPTY, EMPTY, ("Sports",), initial_snapshot=("Sports",))


def test_contaminate_and_reset():
    p = FIX.personas[0]
    assert contaminate(p, "x", p.interests[:2]).interests == p.interests
    assert reset_to_snapshot(p) == p
    q = p
    for s in FIX.websites:
        q = contaminate(q, s.id, s.content_categories)
    assert reset_to_snapshot(q).interests == p.initial_snapshot
    assert reset_to_snapshot(q).visit_history == ()
    assert q.initial_snapshot == p.initial_snapshot
    union = set().union(*(s.content_categories for s in FIX.websites))
    assert new_categories(q) == len(union - set(p.initial_snapshot))


def test_contamination_plant():
    gains50 = list(contamination_gains(FIX.personas, FIX.websites, 50).values())
    gains5 = list(contamination_gains(FIX.personas, FIX.websites, 5).values())
    assert len(gains50) == 60
    assert sum(g > 9 for g in gains50) / 60 >= 0.6
    assert statistics.median(gains50) > 9
    assert statistics.median(gains5) < statistics.median(gains50)
    max_fp = max(len(s.content_categories) for s in FIX.websites)
    assert max(gains5) <= max_fp * 5


def test_measure_contamination_histogram():
    assert measure_contamination(FIX.personas[:1], FIX.websites, 0) == {0: 1.0}
    hist = measure_contamination(FIX.personas, FIX.websites, 50)
    assert sum(hist.values()) == pytest.approx(1.0)
    with pytest.raises(EmptySample):
        measure_contamination([], FIX.websites, 5)


site_idx = st.lists(st.integers(0, len(FIX.websites) - 1), max_size=60)


@given(st.integers(0, len(FIX.personas) - 1), site_idx)
def test_monotone_and_snapshot_immutable(pi, visits):
    p = FIX.personas[pi]
    snapshot = p.initial_snapshot
    for i in visits:
        q = contaminate(p, FIX.websites[i].id, FIX.websites[i].content_categories)
        assert set(p.interests) <= set(q.interests)
        p = q
    assert p.initial_snapshot == snapshot


@given(st.integers(0, len(FIX.personas) - 1), st.integers(0, len(FIX.websites) - 1))
def test_reset_contaminate_reset(pi, si):
    p = FIX.personas[pi]
    s = FIX.websites[si]
    assert reset_to_snapshot(contaminate(reset_to_snapshot(p), s.id, s.content_categories)) == reset_to_snapshot(p)


def test_persona_store_round_trip(tmp_path, personas):
    path = tmp_path / "personas.jsonl"
    save_personas(personas.values(), path)
    assert load_personas(path) == list(personas.values())


def test_demographic_map():
    m = DemographicMap.from_text("Finance\tM\t35-44\nSports\t\t\n")
    assert m.lookup("Finance/Investing") == ("M", "35-44")
    assert m.lookup("Sports") == (None, None)
    assert m.lookup(EMPTY) == (None, None)
    assert DemographicMap().lookup("Autos") == DemographicMap().lookup("Autos")
