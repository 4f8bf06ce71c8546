import os

import pytest
from hypothesis import HealthCheck, settings

from adscape.adpipe import AdClassifier, DimensionList, LandingResolver
from adscape.controller import CrawlPlan, Harvester, ImpressionStore, StrategySpec, execute_plan
from adscape.ecosystem import EcosystemState, SimulatorSource
from adscape.generate import EcosystemConfig, build_personas, generate_ecosystem
from adscape.profiles import DemographicMap, empty_persona
from adscape.taxonomy import default_tree

settings.register_profile("default", max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def tree():
    return default_tree()


@pytest.fixture(scope="session")
def eco(tree):
    return generate_ecosystem(EcosystemConfig(), tree)


@pytest.fixture(scope="session")
def personas(eco, tree):
    out = {p.id: p for p in build_personas(tree, eco.persona_targets, eco.catalog, EcosystemConfig().profile_sites, DemographicMap())}
    out["EMPTY"] = empty_persona()
    return out


def run_crawl(eco, personas, pairs, strategies, seed=0, fault_rate=0.0, workers=1, keep_log=False):
    state = EcosystemState(eco.catalog, seed, fault_rate, keep_log=keep_log)
    harvester = Harvester(SimulatorSource(state), AdClassifier(eco.filters, DimensionList()), LandingResolver(state.click_network()))
    store = ImpressionStore()
    summary = execute_plan(CrawlPlan.for_pairs(pairs, strategies, workers), harvester, personas, store)
    return store.records, summary, state


@pytest.fixture(scope="session")
def survey_records(eco, personas):
    pairs = [(w.id, p) for w in eco.catalog.pool for p in personas]
    records, _, _ = run_crawl(eco, personas, pairs, [StrategySpec("survey", 5, 1)], seed=11)
    return records


# one line per acceptance criterion, echoed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1][2:])):
            terminalreporter.write_line(line)
