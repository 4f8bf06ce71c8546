"""Command-line entry point: ``adscape <subcommand> [--config FILE] [--key value ...]``.

Stages write into ``<out>/<stage>/`` via a temporary directory that is renamed
into place, each with a ``manifest.json`` holding the content hashes of its
inputs, the seed and the config; a stage whose manifest still matches is skipped.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import random
import shutil
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Optional

from adscape import __version__
from adscape.adpipe import AdClassifier, DimensionList, FilterList, LandingResolver
from adscape.analytics import CategoryMapping, analyze_all
from adscape.controller import (
    CrawlPlan,
    Harvester,
    ImpressionStore,
    RunSummary,
    execute_plan,
    parse_strategy,
    read_log,
    survey_pass,
)
from adscape.ecosystem import Catalog, EcosystemState, SimulatorSource
from adscape.generate import EcosystemConfig, build_personas, generate_ecosystem, persona_targets
from adscape.harvester import FaultInjectingSource, MissLog
from adscape.planner import ObservationSet, brute_force_cover, build_focus_set, greedy_max_cover, visit_budget
from adscape.profiles import DemographicMap, build_persona, empty_persona, load_personas, save_personas
from adscape.taxonomy import read_tree

logger = logging.getLogger("adscape")

STAGES = ("ecosystem", "personas", "survey", "plan", "crawl", "report")


class StageFailed(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


class InvalidConfig(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 7
    out: str = "runs/default"
    # external inputs; when unset the ecosystem stage generates them
    catalog: str = ""
    taxonomy: str = ""
    filters: str = ""
    dimensions: str = ""
    categories: str = ""
    # ecosystem generation
    sites: int = 20
    personas: int = 24
    persona_levels: str = "2,3"
    profile_sites: int = 10
    networks: int = 4
    withheld_networks: int = 0
    advertisers: int = 80
    network_campaigns: int = 60
    site_campaigns: int = 8
    targeted_fraction: float = 0.5
    capped_fraction: float = 0.5
    premium_sites: int = 1
    empty_restaurant_campaigns: int = 4
    # survey and planning
    survey_visits: int = 5
    cover_budget: int = 1_000_000
    top_k: int = 30
    min_occurrences: int = 3
    # crawling
    strategy: str = "short,long"
    workers: int = 1
    timeout_s: float = 70.0
    retries: int = 2
    max_hops: int = 10
    fetch_fault_rate: float = 0.0
    resolver_fault_rate: float = 0.0
    wall_clock: bool = False
    # analysis
    min_pairs: int = 10
    freq_cap_support: int = 5

    def validate(self) -> None:
        if self.top_k < 1 or self.cover_budget < 1:
            raise InvalidConfig("top_k and cover_budget must be positive")
        if not 0 <= self.fetch_fault_rate < 1 or not 0 <= self.resolver_fault_rate < 1:
            raise InvalidConfig("fault rates must lie in [0, 1)")
        if self.sites < 1 or self.personas < 1:
            raise InvalidConfig("need at least one site and one persona")
        for path in (self.catalog, self.taxonomy, self.filters, self.dimensions, self.categories):
            if path and not Path(path).exists():
                raise InvalidConfig(f"missing input file {path}")
        self.strategies()

    def strategies(self):
        try:
            return [parse_strategy(s.strip()) for s in self.strategy.split(",") if s.strip()]
        except ValueError as exc:
            raise InvalidConfig(f"bad strategy list {self.strategy!r}") from exc

    def ecosystem_config(self) -> EcosystemConfig:
        return EcosystemConfig(
            seed=self.seed,
            sites=self.sites,
            personas=self.personas,
            persona_levels=self.levels(),
            profile_sites=self.profile_sites,
            networks=self.networks,
            withheld_networks=self.withheld_networks,
            advertisers=self.advertisers,
            network_campaigns=self.network_campaigns,
            site_campaigns=self.site_campaigns,
            targeted_fraction=self.targeted_fraction,
            capped_fraction=self.capped_fraction,
            premium_sites=self.premium_sites,
            empty_restaurant_campaigns=self.empty_restaurant_campaigns,
        )

    def levels(self) -> tuple[int, ...]:
        return tuple(int(x) for x in self.persona_levels.split(",") if x.strip())

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d.pop("out")
        return json.dumps(d, sort_keys=True)


def parse_config_file(path: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _coerce(field_type, value):
    if field_type in (bool, "bool"):
        if isinstance(value, bool):
            return value
        return str(value).lower() in ("1", "true", "yes", "on")
    if field_type in (int, "int"):
        return int(value)
    if field_type in (float, "float"):
        return float(value)
    return str(value)


def make_config(file_values: dict[str, str], overrides: dict[str, object]) -> RunConfig:
    known = {f.name: f.type for f in fields(RunConfig)}
    kwargs = {}
    for key, value in {**file_values, **{k: v for k, v in overrides.items() if v is not None}}.items():
        if key not in known:
            raise InvalidConfig(f"unknown config key {key!r}")
        kwargs[key] = _coerce(known[key], value)
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


# --- stage plumbing ---------------------------------------------------------------


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def derive_seed(seed: int, *label) -> int:
    digest = hashlib.blake2b(repr((seed,) + label).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


class Workspace:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.root = Path(cfg.out)

    def stage_dir(self, stage: str) -> Path:
        return self.root / stage

    def manifest_for(self, stage: str, inputs: list[Path]) -> dict:
        return {
            "stage": stage,
            "version": __version__,
            "seed": self.cfg.seed,
            "config": json.loads(self.cfg.to_json()),
            "inputs": {str(p.relative_to(self.root) if p.is_relative_to(self.root) else p): sha256_file(p) for p in inputs},
        }

    def up_to_date(self, stage: str, manifest: dict) -> bool:
        path = self.stage_dir(stage) / "manifest.json"
        if not path.exists():
            return False
        try:
            old = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            return False
        if {k: v for k, v in old.items() if k != "outputs"} != manifest:
            return False
        return all((self.stage_dir(stage) / name).exists() for name in old.get("outputs", {}))

    def run(self, stage: str, inputs: list[Path], body: Callable[[Path], None]) -> bool:
        """Run ``body`` into a temp dir and swap it into place; False when skipped."""
        missing = [p for p in inputs if not p.exists()]
        if missing:
            raise StageFailed(stage, FileNotFoundError(f"missing inputs {[str(m) for m in missing]}"))
        manifest = self.manifest_for(stage, inputs)
        if self.up_to_date(stage, manifest):
            logger.info("%s: up to date", stage)
            return False
        self.root.mkdir(parents=True, exist_ok=True)
        tmp = self.root / f".{stage}.tmp"
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir()
        started = time.perf_counter()
        try:
            body(tmp)
        except Exception as exc:
            shutil.rmtree(tmp, ignore_errors=True)
            raise StageFailed(stage, exc) from exc
        manifest["outputs"] = {p.name: sha256_file(p) for p in sorted(tmp.iterdir()) if p.is_file()}
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        final = self.stage_dir(stage)
        if final.exists():
            shutil.rmtree(final)
        tmp.rename(final)
        logger.info("%s: done in %.1fs", stage, time.perf_counter() - started)
        return True

    # paths
    def eco(self, name: str) -> Path:
        return self.stage_dir("ecosystem") / name


def stage_ecosystem(ws: Workspace) -> None:
    cfg = ws.cfg
    external = [Path(p) for p in (cfg.catalog, cfg.taxonomy, cfg.filters, cfg.dimensions, cfg.categories) if p]

    def body(tmp: Path) -> None:
        tree = read_tree(cfg.taxonomy) if cfg.taxonomy else None
        eco = generate_ecosystem(cfg.ecosystem_config(), tree)
        if cfg.catalog:
            shutil.copyfile(cfg.catalog, tmp / "catalog.tsv")
        else:
            eco.catalog.save(tmp / "catalog.tsv")
        if cfg.taxonomy:
            shutil.copyfile(cfg.taxonomy, tmp / "taxonomy.tsv")
        else:
            from adscape.taxonomy import default_tree

            (tmp / "taxonomy.tsv").write_text(default_tree().to_text(), encoding="utf-8")
        if cfg.filters:
            shutil.copyfile(cfg.filters, tmp / "filters.txt")
        else:
            (tmp / "filters.txt").write_text(eco.filters.to_text(), encoding="utf-8")
        if cfg.dimensions:
            shutil.copyfile(cfg.dimensions, tmp / "dimensions.txt")
        else:
            (tmp / "dimensions.txt").write_text(DimensionList().to_text(), encoding="utf-8")
        if cfg.categories:
            shutil.copyfile(cfg.categories, tmp / "categories.tsv")
        else:
            (tmp / "categories.tsv").write_text(eco.mapping.to_text(), encoding="utf-8")
        if not cfg.catalog:
            (tmp / "truth.json").write_text(json.dumps(eco.truth, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        # validate what will be consumed downstream
        Catalog.load(tmp / "catalog.tsv")
        read_tree(tmp / "taxonomy.tsv")
        CategoryMapping.load(tmp / "categories.tsv")

    ws.run("ecosystem", external, body)


def stage_personas(ws: Workspace) -> None:
    cfg = ws.cfg

    def body(tmp: Path) -> None:
        tree = read_tree(ws.eco("taxonomy.tsv"))
        catalog = Catalog.load(ws.eco("catalog.tsv"))
        targets = persona_targets(tree, cfg.personas, cfg.levels(), cfg.seed)
        demo = DemographicMap(salt=f"demographics:{cfg.seed}")
        personas = build_personas(tree, targets, catalog, cfg.profile_sites, demo)
        personas.append(empty_persona())
        save_personas(personas, tmp / "personas.jsonl")

    ws.run("personas", [ws.eco("catalog.tsv"), ws.eco("taxonomy.tsv")], body)


def _harvester(ws: Workspace, catalog: Catalog, label: str, tmp: Path) -> tuple[Harvester, LandingResolver]:
    cfg = ws.cfg
    state = EcosystemState(catalog, derive_seed(cfg.seed, label, "sim"), cfg.resolver_fault_rate)
    source = SimulatorSource(state)
    if cfg.fetch_fault_rate:
        source = FaultInjectingSource(source, cfg.fetch_fault_rate, derive_seed(cfg.seed, label, "faults"))
    classifier = AdClassifier(FilterList.from_file(ws.eco("filters.txt")), DimensionList.from_file(ws.eco("dimensions.txt")))
    resolver = LandingResolver(state.click_network(), cfg.max_hops)
    harvester = Harvester(
        source, classifier, resolver, cfg.timeout_s, cfg.retries, MissLog(tmp / "misses.jsonl"), cfg.wall_clock,
    )
    (tmp / "misses.jsonl").touch()
    return harvester, resolver


def _personas_by_id(ws: Workspace) -> dict:
    return {p.id: p for p in load_personas(ws.stage_dir("personas") / "personas.jsonl")}


def stage_survey(ws: Workspace) -> None:
    cfg = ws.cfg
    inputs = [ws.eco("catalog.tsv"), ws.eco("filters.txt"), ws.eco("dimensions.txt"), ws.stage_dir("personas") / "personas.jsonl"]

    def body(tmp: Path) -> None:
        catalog = Catalog.load(ws.eco("catalog.tsv"))
        personas = {pid: p for pid, p in _personas_by_id(ws).items() if not p.is_empty}
        harvester, resolver = _harvester(ws, catalog, "survey", tmp)
        store = ImpressionStore(tmp / "impressions.jsonl")
        (tmp / "impressions.jsonl").touch()
        obs = survey_pass([w.id for w in catalog.pool], personas, harvester, store, cfg.survey_visits, cfg.workers)
        obs.save(tmp / "observations.tsv")
        resolver.save(tmp / "resolver_cache.tsv")

    ws.run("survey", inputs, body)


def stage_plan(ws: Workspace) -> None:
    cfg = ws.cfg
    obs_path = ws.stage_dir("survey") / "observations.tsv"

    def body(tmp: Path) -> None:
        obs = ObservationSet.load(obs_path)
        cover = greedy_max_cover(obs, cfg.cover_budget)
        (tmp / "cover.tsv").write_text("".join(f"{s.pair[0]}\t{s.pair[1]}\t{s.gain}\n" for s in cover), encoding="utf-8")
        focus = build_focus_set(cover, obs, cfg.top_k, cfg.min_occurrences)
        focus.save(tmp / "focus.tsv")
        strategies = cfg.strategies()
        lines = {
            "pairs": len(focus),
            "cover": focus.count("cover"),
            "coverage_fix": focus.count("coverage-fix"),
            "empty_baseline": focus.count("empty-baseline"),
            "websites": len(focus.websites),
            "personas": len(focus.personas),
            "visit_budget": visit_budget(len(focus), strategies),
            "survey_distinct_ads": len(obs.all_ads),
            "focus_distinct_ads": obs.coverage(p for p in focus.pairs if p in obs.entries),
        }
        (tmp / "plan.txt").write_text("".join(f"{k}={v}\n" for k, v in lines.items()), encoding="utf-8")

    ws.run("plan", [obs_path], body)


def stage_crawl(ws: Workspace) -> RunSummary:
    cfg = ws.cfg
    focus_path = ws.stage_dir("plan") / "focus.tsv"
    inputs = [focus_path, ws.eco("catalog.tsv"), ws.eco("filters.txt"), ws.eco("dimensions.txt"), ws.stage_dir("personas") / "personas.jsonl"]

    def body(tmp: Path) -> None:
        from adscape.planner import FocusSet

        catalog = Catalog.load(ws.eco("catalog.tsv"))
        focus = FocusSet.load(focus_path)
        harvester, resolver = _harvester(ws, catalog, "crawl", tmp)
        store = ImpressionStore(tmp / "impressions.jsonl")
        (tmp / "impressions.jsonl").touch()
        plan = CrawlPlan.for_pairs(focus.pairs, cfg.strategies(), cfg.workers, cfg.seed)
        summary = execute_plan(plan, harvester, _personas_by_id(ws), store)
        resolver.save(tmp / "resolver_cache.tsv")
        (tmp / "summary.txt").write_text(summary.to_kv(), encoding="utf-8")

    ws.run("crawl", inputs, body)
    return RunSummary.from_kv((ws.stage_dir("crawl") / "summary.txt").read_text(encoding="utf-8"))


def stage_report(ws: Workspace) -> None:
    cfg = ws.cfg
    log_path = ws.stage_dir("crawl") / "impressions.jsonl"
    inputs = [log_path, ws.stage_dir("personas") / "personas.jsonl", ws.eco("catalog.tsv"), ws.eco("categories.tsv")]

    def body(tmp: Path) -> None:
        records = read_log(log_path)
        catalog = Catalog.load(ws.eco("catalog.tsv"))
        analyze_all(
            records, tmp, _personas_by_id(ws), catalog.advertiser_ranks(), CategoryMapping.load(ws.eco("categories.tsv")),
            cfg.min_pairs, cfg.freq_cap_support,
        )

    ws.run("report", inputs, body)


STAGE_FUNCS = {
    "ecosystem": stage_ecosystem,
    "personas": stage_personas,
    "survey": stage_survey,
    "plan": stage_plan,
    "crawl": stage_crawl,
    "report": stage_report,
}


def run_pipeline(cfg: RunConfig) -> Workspace:
    ws = Workspace(cfg)
    for stage in STAGES:
        STAGE_FUNCS[stage](ws)
    return ws


def run_oracle(instances: int, seed: int, max_pairs: int = 12, max_ads: int = 20, max_budget: int = 5) -> tuple[int, int, float]:
    """Greedy vs exact cover on random instances; returns (passed, total, worst ratio)."""
    import math

    rng = random.Random(seed)
    bound = 1 - 1 / math.e
    passed, worst = 0, 1.0
    for _ in range(instances):
        obs = random_instance(rng, max_pairs, max_ads)
        budget = rng.randint(1, max_budget)
        greedy = sum(s.gain for s in greedy_max_cover(obs, budget))
        best, _ = brute_force_cover(obs, budget)
        ratio = greedy / best if best else 1.0
        worst = min(worst, ratio)
        passed += greedy >= bound * best
    return passed, instances, worst


def random_instance(rng: random.Random, max_pairs: int = 12, max_ads: int = 20) -> ObservationSet:
    n_pairs = rng.randint(1, max_pairs)
    n_ads = rng.randint(1, max_ads)
    entries = {}
    for i in range(n_pairs):
        k = rng.randint(0, n_ads)
        entries[(f"w{i % 4}", f"p{i:02d}")] = frozenset(f"a{j}" for j in rng.sample(range(n_ads), k))
    return ObservationSet(entries)


# --- argument parsing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adscape", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen-ecosystem": "generate the simulated catalog, filter list and category mapping",
        "build-personas": "build the persona pool by simulated browsing",
        "survey": "visit every website x persona pair a few times",
        "plan": "greedy max-cover plus focus-set post-processing",
        "crawl": "crawl the focus set with the configured strategies",
        "analyze": "write the CSV report from the crawl log",
        "pipeline": "run every stage, skipping those already up to date",
        "oracle": "check greedy cover against brute force on random instances",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="key = value config file; flags override it")
        p.add_argument("-v", "--verbose", action="store_true")
        for f in fields(RunConfig):
            flag = "--" + f.name.replace("_", "-")
            default = f.default
            if f.type in (bool, "bool"):
                p.add_argument(flag, dest=f.name, nargs="?", const="true", default=None, help=f"(default: {default})")
            else:
                p.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper(), help=f"(default: {default})")
        if name == "oracle":
            p.add_argument("--instances", type=int, default=1000)
        if name == "analyze":
            p.add_argument("--all", action="store_true", help="write every report CSV (always on; kept for symmetry)")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
    try:
        cfg = make_config(parse_config_file(args.config) if args.config else {}, overrides)
    except (InvalidConfig, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.command == "oracle":
        passed, total, worst = run_oracle(args.instances, cfg.seed)
        print(f"instances={total}\npassed={passed}\nworst_ratio={worst:.6f}")
        return 0 if passed == total else 1

    ws = Workspace(cfg)
    stage = {
        "gen-ecosystem": "ecosystem",
        "build-personas": "personas",
        "survey": "survey",
        "plan": "plan",
        "crawl": "crawl",
        "analyze": "report",
    }.get(args.command)
    try:
        if stage is None:
            run_pipeline(cfg)
        else:
            STAGE_FUNCS[stage](ws)
    except StageFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command in ("crawl", "pipeline"):
        print((ws.stage_dir("crawl") / "summary.txt").read_text(encoding="utf-8"), end="")
    if args.command in ("plan", "pipeline"):
        print((ws.stage_dir("plan") / "plan.txt").read_text(encoding="utf-8"), end="")
    if args.command in ("analyze", "pipeline"):
        print(f"report={ws.stage_dir('report')}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
