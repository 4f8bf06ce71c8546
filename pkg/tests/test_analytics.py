import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from adscape.adpipe import Classification
from adscape.analytics import (
    REPORT_FILES,
    UNKNOWN,
    CategoryMapping,
    InsufficientPairs,
    TooFewPersonas,
    advertiser_rank_curve,
    advertisers_per_page,
    analyze_all,
    categorize_advertiser,
    contribution_curves,
    estimate_frequency_caps,
    heat_map,
    normalize,
    pearson_chi2,
    placements_distribution,
    targeted_fraction,
    targeting_test,
    top_share,
)
from adscape.controller import LONG, ImpressionRecord
from adscape.ecosystem import AdvertiserSpec, Catalog, TargetingPredicate, WebsiteSpec
from adscape.fixtures import Scenario, _campaign, fixed_persona
from adscape.harvester import VisualElement
from adscape.profiles import Persona
from adscape.special import chi2_sf


def rec(website, persona, visit, ad=None, landing="brand.example", rep=1, strategy="long"):
    el = VisualElement(ad or "http://cdn.example/logo.gif", None, f"http://{landing}/" if landing else None, 300, 250, None)
    cls = Classification(ad is not None, ad is not None, True, True, None)
    return ImpressionRecord(website, persona, strategy, rep, visit, el, cls, ad, None, landing if ad else None, None, "")


def spread(website, ad, counts, visits=10):
    """``counts[i]`` impressions of ``ad`` for persona i over ``visits`` page views each."""
    out = []
    for i, n in enumerate(counts):
        for v in range(1, visits + 1):
            out.append(rec(website, f"p{i}", v, ad if v <= n else None))
    return out


def test_chi2_examples():
    [r] = targeting_test(spread("w", "a", [2, 2, 2, 2, 2]), "w").values()
    assert r.chi2 == 0 and r.p_value == 1.0 and not r.targeted
    [r] = targeting_test(spread("w", "a", [10, 0, 0, 0, 0]), "w").values()
    assert r.chi2 == pytest.approx(40.0) and r.df == 4
    assert r.p_value == pytest.approx(4.3e-8, rel=0.02) and r.targeted
    assert r.low_expected  # E = 2 < 5 is flagged but still tested
    with pytest.raises(TooFewPersonas):
        targeting_test(spread("w", "a", [3]), "w")


def test_unequal_visits_use_proportional_expectation():
    recs = spread("w", "a", [4], visits=8) + [r.__class__(**{**r.__dict__, "persona": "p1"}) for r in spread("w", "a", [2], visits=4)]
    [r] = targeting_test(recs, "w").values()
    assert r.chi2 == pytest.approx(0.0)


@given(st.lists(st.integers(0, 9), min_size=2, max_size=6), st.randoms())
def test_relabel_invariance(counts, rnd):
    base = targeting_test(spread("w", "a", counts), "w")
    shuffled = counts[:]
    rnd.shuffle(shuffled)
    again = targeting_test(spread("w", "a", shuffled), "w")
    for ad in base:
        assert base[ad].chi2 == pytest.approx(again[ad].chi2)
        assert base[ad].p_value == pytest.approx(again[ad].p_value)


@given(st.floats(0, 60), st.floats(0, 60), st.integers(1, 12))
def test_p_value_monotone_in_statistic(a, b, df):
    lo, hi = sorted((a, b))
    assert chi2_sf(hi, df) <= chi2_sf(lo, df)


def test_pearson_chi2_skips_zero_expected():
    assert pearson_chi2([1, 0], [1, 0]) == 0


def test_targeted_fraction_rules():
    recs = []
    for j in range(4):
        recs += spread("w", f"ad{j}", [3] * 10)
    assert targeted_fraction(recs, "w") == 0.0
    with pytest.raises(InsufficientPairs):
        targeted_fraction(recs, "w", min_pairs=11)


def gender_scenario(personas=12, campaigns=30):
    site = "gender.example"
    ages = ("18-24", "25-34", "35-44")
    people = {}
    for i in range(personas):
        pid = f"g{i:02d}"
        people[pid] = Persona(pid, "Sports", ("Sports",), "M" if i % 2 else "F", ages[i % 3], ("Sports",))
    advertisers, camps = [], []
    for j in range(campaigns):
        adv = f"brand{j:02d}.example"
        advertisers.append(AdvertiserSpec(adv, 100 + j, "Shopping"))
        camps.append(_campaign(f"c{j:02d}", adv, TargetingPredicate(gender="M" if j % 2 else "F")))
    return Scenario(Catalog([WebsiteSpec(site, 2)], advertisers, camps), people, {})


def test_gender_plant_detected():
    sc = gender_scenario()
    recs = sc.crawl(LONG, seed=3)
    frac = targeted_fraction(recs, "gender.example", "gender", sc.personas)
    assert frac >= 0.9
    # demographic test drops personas without both attributes
    sc.personas["g00"] = fixed_persona("g00", ["Sports"])
    res = targeting_test(recs, "gender.example", sc.personas, "gender")
    assert all(sum(r.counts) <= 100 * 2 * 11 for r in res.values())


def cap_records(ad, per_pair, visits=20):
    out = []
    for i, n in enumerate(per_pair):
        for v in range(1, visits + 1):
            out.append(rec("w", f"p{i}", v, ad if v <= n else None))
    return out


def test_frequency_cap_examples():
    [once] = estimate_frequency_caps(cap_records("a", [1] * 8))
    assert not once.accepted and once.empirical_frequency == 1
    [seven] = estimate_frequency_caps(cap_records("b", [7] * 6 + [3, 5]))
    assert seven.accepted and seven.empirical_frequency == 7 and seven.support == 6
    [thin] = estimate_frequency_caps(cap_records("c", [7] * 4 + [3]))
    assert not thin.accepted
    [always] = estimate_frequency_caps(cap_records("d", [19] * 8))
    assert not always.accepted and "almost every" in always.reason


@given(st.lists(st.integers(0, 30), min_size=1, max_size=10), st.integers(2, 12))
def test_cap_estimate_never_exceeds_plant(shows, cap):
    per_pair = [min(s, cap) for s in shows]
    for est in estimate_frequency_caps(cap_records("x", per_pair, visits=40)):
        assert est.empirical_frequency <= cap
        if est.accepted:
            assert est.empirical_frequency >= 2 and est.support >= 5


def page_records(website, slots, views=1, advertisers=None):
    out = []
    for v in range(1, views + 1):
        for s in range(slots):
            adv = advertisers[s] if advertisers else f"adv{s}.example"
            out.append(rec(website, "p", v, f"{website}/{v}/{s}", adv))
    return out


def test_placements_examples():
    assert normalize(placements_distribution(page_records("w", 3))) == {3: 1.0}
    recs = page_records("a", 2, 5) + page_records("b", 3, 4) + page_records("big", 16, 1)
    hist = placements_distribution(recs)
    assert max(hist) == 16
    assert sum(hist.values()) == len({r.page_view for r in recs}) == 10


def test_advertisers_per_page():
    recs = page_records("a", 2, 3, ["one.example"] * 2) + page_records("b", 3, 2, ["x.example", "y.example", "x.example"])
    recs.append(rec("c", "p", 1, "c/ad", landing=None))
    app = advertisers_per_page(recs)
    assert app.cells == {(2, 1): 3, (3, 2): 2}
    assert app.excluded == 1 and app.included == 5


def test_rank_curve_flat_and_exchangeable():
    recs = []
    for pid in ("p1", "p2", "EMPTY"):
        for v in range(1, 6):
            recs.append(rec("w", pid, v, f"{pid}{v}", "brand.example"))
    curves = advertiser_rank_curve(recs, {"brand.example": 42})
    assert {p.mean for g in curves.values() for p in g} == {42.0}
    assert [p.n for p in curves["empty"]] == [1] * 5
    mixed = [rec("w", p, v, f"{p}{v}", random.Random(v).choice(["a.example", "b.example"])) for p in ("p1", "p2", "p3") for v in range(1, 6)]
    ranks = {"a.example": 1, "b.example": 500}
    by_pair = [mixed[i:i + 5] for i in range(0, 15, 5)]
    shuffled = [r for chunk in reversed(by_pair) for r in chunk]
    assert advertiser_rank_curve(mixed, ranks) == advertiser_rank_curve(shuffled, ranks)


def test_contribution_curves():
    single = contribution_curves(page_records("only", 3, 2))
    assert single.websites == [("only", 6)] and single.total == 6
    recs = page_records("big", 4, 10) + page_records("mid", 2, 3) + page_records("small", 1, 1)
    c = contribution_curves(recs)
    assert [w for w, _ in c.websites] == ["big", "mid", "small"]
    assert c.websites[-1][1] == c.personas[-1][1] == c.total == 47
    assert top_share(c.websites, c.total, 0.3) == pytest.approx(40 / 47)


ANSWER_KEY = {
    "fordparts.example": "Autos",
    "carmart.example": "Autos",
    "tirehub.example": "Autos",
    "pizzaplace.example": "Restaurants",
    "sushibar.example": "Restaurants",
    "burgerjoint.example": "Restaurants",
    "safeinsure.example": "Insurance",
    "lifecover.example": "Insurance",
    "bigbank.example": "Finance",
    "tradeapp.example": "Finance",
    "flyaway.example": "Travel",
    "hotelhub.example": "Travel",
    "shoestore.example": "Shopping",
    "gadgetbarn.example": "Shopping",
    "dailynews.example": "News",
    "techwire.example": "News",
    "gymclub.example": "Sports",
    "skiresort.example": "Sports",
    "mystery.example": UNKNOWN,
    "blank.example": UNKNOWN,
}
PRIMARY = {
    "fordparts.example": "Business/Automotive",
    "carmart.example": "Business/Automotive",
    "pizzaplace.example": "Food & Drink/Restaurants",
    "sushibar.example": "Food & Drink/Restaurants",
    "safeinsure.example": "Finance/Insurance",
    "bigbank.example": "Finance/Banking",
    "flyaway.example": "Travel/Air Travel",
    "shoestore.example": "Shopping/Apparel",
    "dailynews.example": "News/Newspapers",
    "gymclub.example": "Sports/Fitness",
}
SECONDARY = {
    "carmart.example": "Shopping",  # conflict: primary wins
    "tirehub.example": "Vehicles",
    "burgerjoint.example": "Dining",
    "lifecover.example": "Insurance",
    "tradeapp.example": "Investing",
    "hotelhub.example": "Lodging",
    "gadgetbarn.example": "Shopping",
    "techwire.example": "Media",
    "skiresort.example": "Recreation",
}
RESOLVE = {
    "Business/Automotive": "Autos", "Vehicles": "Autos",
    "Food & Drink/Restaurants": "Restaurants", "Dining": "Restaurants",
    "Finance/Insurance": "Insurance", "Insurance": "Insurance",
    "Finance/Banking": "Finance", "Investing": "Finance",
    "Travel/Air Travel": "Travel", "Lodging": "Travel",
    "Shopping/Apparel": "Shopping", "Shopping": "Shopping",
    "News/Newspapers": "News", "Media": "News",
    "Sports/Fitness": "Sports", "Recreation": "Sports",
}


def key_mapping():
    return CategoryMapping({"primary": PRIMARY, "secondary": SECONDARY}, RESOLVE, ["primary", "secondary"])


def test_categorize_answer_key():
    m = key_mapping()
    assert categorize_advertiser(m, "fordparts.example") == "Autos"
    assert categorize_advertiser(m, "carmart.example") == "Autos"
    assert categorize_advertiser(m, "www.pizzaplace.example") == "Restaurants"
    assert categorize_advertiser(m, None) == UNKNOWN
    assert {d: categorize_advertiser(m, d) for d in ANSWER_KEY} == ANSWER_KEY
    again = CategoryMapping.from_text(m.to_text())
    assert {d: categorize_advertiser(again, d) for d in ANSWER_KEY} == ANSWER_KEY
    with pytest.raises(ValueError):
        CategoryMapping({"primary": {"a.example": "Nowhere"}}, {}, ["primary"])


def test_heat_map_examples():
    m = key_mapping()
    one = heat_map([rec("w", "p1", 1, "ad", "pizzaplace.example")], m, {"p1": "Sports"})
    assert one.cells == {("Sports", "Restaurants"): 1.0}
    rows = {"p1": "Sports", "p2": "Arts", "p3": "News", "p4": "EMPTY"}
    recs = [rec("w", p, 1, "ad", "pizzaplace.example") for p in rows]
    hm = heat_map(recs, m, rows)
    assert all(hm.raw[(r, "Restaurants")] == 0.25 for r in rows.values())
    assert all(hm.row_sum(r) == pytest.approx(1.0) for r in rows.values())


@given(st.lists(st.tuples(st.sampled_from(["p1", "p2", "p3", "p4"]), st.integers(0, 5), st.sampled_from(sorted(ANSWER_KEY))), min_size=1))
def test_heat_map_rows_normalized(rows):
    owner = {}
    recs = []
    for pid, a, dom in rows:
        dom = owner.setdefault(a, dom)
        recs.append(rec("w", pid, len(recs) + 1, f"ad{a}", dom))
    rows_of = {"p1": "A", "p2": "B", "p3": "A", "p4": "EMPTY"}
    hm = heat_map(recs, key_mapping(), rows_of)
    for r in hm.rows:
        if r not in hm.zero_rows:
            assert abs(hm.row_sum(r) - 1.0) <= 1e-9
    # with one impression per (ad, persona) the raw mass counts distinct ads
    firsts = {(r.ad_id, r.persona): r for r in recs}
    hm1 = heat_map(list(firsts.values()), key_mapping(), rows_of)
    assert math.fsum(hm1.raw.values()) == pytest.approx(len({a for a, _ in firsts}))


def test_analytics_are_pure(survey_records, personas, eco, tmp_path):
    recs = list(survey_records)
    before = [r.to_json() for r in recs]
    a = analyze_all(recs, tmp_path / "a", personas, {}, eco.mapping, min_pairs=2)
    blocks = {}
    for r in recs:
        blocks.setdefault(r.pair, []).append(r)
    # permute whole pairs, keeping each pair's visit order
    permuted = [r for pair in sorted(blocks, reverse=True) for r in blocks[pair]]
    b = analyze_all(permuted, tmp_path / "b", personas, {}, eco.mapping, min_pairs=2)
    assert [p.name for p in a] == list(REPORT_FILES)
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    assert [r.to_json() for r in recs] == before
    header = (tmp_path / "a" / "heat_map.csv").read_text().splitlines()[0]
    assert header.startswith("profile_category,")
