import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from adscape.controller import LONG, SHORT
from adscape.fixtures import skewed_survey
from adscape.planner import (
    CoverStep,
    FocusSet,
    InstanceTooLarge,
    ObservationSet,
    UnsatisfiableCoverage,
    brute_force_cover,
    build_focus_set,
    cover_value,
    greedy_max_cover,
    visit_budget,
)

X, Y, Z = ("x.example", "p1"), ("y.example", "p1"), ("z.example", "p1")
XYZ = ObservationSet({X: {"1", "2", "3"}, Y: {"3", "4"}, Z: {"5"}})


def naive_greedy(obs, budget):
    # recompute every gain on every round, smallest pair wins ties
    covered, out = set(), []
    remaining = set(obs.entries)
    while remaining and len(out) < budget:
        best = min(remaining, key=lambda p: (-len(obs.entries[p] - covered), p))
        out.append(CoverStep(best, len(obs.entries[best] - covered)))
        covered |= obs.entries[best]
        remaining.discard(best)
    return out


def test_examples():
    assert greedy_max_cover(ObservationSet({X: {"a", "b"}}), 4) == [CoverStep(X, 2)]
    steps = greedy_max_cover(XYZ, 2)
    assert [s.pair for s in steps] == [X, Y] and [s.gain for s in steps] == [3, 1]
    assert cover_value(steps) == XYZ.coverage([X, Y]) == 4
    assert greedy_max_cover(ObservationSet(), 3) == []
    with pytest.raises(ValueError):
        greedy_max_cover(XYZ, 0)


def test_brute_force_examples():
    assert brute_force_cover(XYZ, 2)[0] == 4
    assert brute_force_cover(XYZ, 5)[0] == len(XYZ.all_ads)
    disjoint = ObservationSet({(f"w{i}", "p"): {f"{i}-{j}" for j in range(3)} for i in range(6)})
    assert brute_force_cover(disjoint, 4)[0] == 12
    big = ObservationSet({(f"w{i}", "p"): {str(i)} for i in range(21)})
    with pytest.raises(InstanceTooLarge):
        brute_force_cover(big, 2)


instances = st.dictionaries(
    st.tuples(st.sampled_from("abcdef"), st.sampled_from(["p", "q"])),
    st.frozensets(st.integers(0, 19).map(str), max_size=8),
    min_size=1,
    max_size=12,
).map(ObservationSet)


@given(instances, st.integers(1, 14))
def test_lazy_greedy_matches_naive(obs, budget):
    assert greedy_max_cover(obs, budget) == naive_greedy(obs, budget)


@given(instances, st.integers(1, 5))
def test_greedy_bound_and_gains(obs, budget):
    steps = greedy_max_cover(obs, budget)
    gains = [s.gain for s in steps]
    assert gains == sorted(gains, reverse=True)
    assert cover_value(steps) == obs.coverage(s.pair for s in steps)
    opt, subset = brute_force_cover(obs, budget)
    assert obs.coverage(subset) == opt
    assert cover_value(steps) >= (1 - 1 / math.e) * opt
    assert cover_value(steps) <= opt


@given(instances, st.integers(1, 12))
def test_coverage_monotone_in_budget(obs, budget):
    assert cover_value(greedy_max_cover(obs, budget + 1)) >= cover_value(greedy_max_cover(obs, budget))
    # greedy is a prefix process
    assert greedy_max_cover(obs, budget + 1)[:budget] == greedy_max_cover(obs, budget)


def grid(sites, personas):
    return ObservationSet({(f"w{i}", f"p{j}"): {f"{i}.{j}"} for i in range(sites) for j in range(personas)})


def test_focus_set_only_baselines_when_covered():
    obs = grid(3, 3)
    cover = greedy_max_cover(obs, 100)
    fs = build_focus_set(cover, obs, top_k=9)
    assert fs.count("cover") == 9 and fs.count("coverage-fix") == 0
    assert fs.count("empty-baseline") == 3
    assert fs.pairs[-3:] == [("w0", "EMPTY"), ("w1", "EMPTY"), ("w2", "EMPTY")]


def test_focus_set_fixes_and_unsatisfiable():
    obs = grid(4, 4)
    cover = greedy_max_cover(obs, 100)
    fs = build_focus_set(cover, obs, top_k=2)
    counts_w, counts_p = {}, {}
    for w, p in fs.pairs:
        if p != "EMPTY":
            counts_w[w] = counts_w.get(w, 0) + 1
            counts_p[p] = counts_p.get(p, 0) + 1
    top = fs.pairs[:2]
    assert all(counts_w[w] >= 3 and counts_p[p] >= 3 for w, p in top)
    assert fs.count("coverage-fix") > 0
    assert len(set(fs.pairs)) == len(fs.pairs)
    thin = grid(2, 2)
    with pytest.raises(UnsatisfiableCoverage):
        build_focus_set(greedy_max_cover(thin, 10), thin, top_k=1)


def test_focus_set_rejects_foreign_pairs():
    with pytest.raises(ValueError):
        build_focus_set([("nowhere", "p")], XYZ, top_k=1)


def test_full_scale_focus_set():
    obs = skewed_survey()
    assert len(obs) == 314 * 340
    cover = greedy_max_cover(obs, 1_000_000)
    fs = build_focus_set(cover, obs, top_k=1700, min_occurrences=3)
    assert len(fs) == 1700 + fs.count("coverage-fix") + fs.count("empty-baseline")
    assert fs.count("empty-baseline") == len(fs.websites)
    per_persona = {}
    for _, p in fs.pairs:
        per_persona[p] = per_persona.get(p, 0) + 1
    assert all(n >= 3 for p, n in per_persona.items() if p != "EMPTY")


def test_visit_budget_identity():
    assert visit_budget(1900, [LONG, SHORT]) == 1900 * 100 + 1900 * 10 * 5 == 285_000
    assert visit_budget(1, [SHORT]) == 50


@given(instances)
def test_file_round_trips(obs):
    assert ObservationSet.from_text(obs.to_text()) == obs
    cover = greedy_max_cover(obs, 100)
    pairs = [s.pair for s in cover]
    fs = FocusSet(pairs, {p: "cover" for p in pairs}, len(pairs))
    back = FocusSet.from_text(fs.to_text())
    assert back.pairs == fs.pairs and back.provenance == fs.provenance


def test_files_on_disk(tmp_path):
    XYZ.save(tmp_path / "obs.tsv")
    assert ObservationSet.load(tmp_path / "obs.tsv") == XYZ
    fs = build_focus_set(greedy_max_cover(grid(3, 3), 9), grid(3, 3), 9)
    fs.save(tmp_path / "focus.tsv")
    assert FocusSet.load(tmp_path / "focus.tsv").pairs == fs.pairs
