import json
import time

import pytest

from adscape.cli import RunConfig, Workspace, build_parser, main, make_config, parse_config_file, run_oracle, stage_report
from adscape.analytics import REPORT_FILES

TINY = ["--sites", "5", "--personas", "6", "--top-k", "10", "--min-pairs", "3"]


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny") / "run"
    started = time.perf_counter()
    code = main(["pipeline", "--out", str(out), *TINY])
    return out, code, time.perf_counter() - started


def snapshot(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_tiny_pipeline(tiny_run, capsys):
    out, code, elapsed = tiny_run
    assert code == 0
    assert elapsed < 60
    for stage in ("ecosystem", "personas", "survey", "plan", "crawl", "report"):
        manifest = json.loads((out / stage / "manifest.json").read_text())
        assert manifest["stage"] == stage and manifest["seed"] == 7
        for name, digest in manifest["outputs"].items():
            assert (out / stage / name).exists() and len(digest) == 64
    assert sorted(p.name for p in (out / "report").glob("*.csv")) == sorted(REPORT_FILES)
    plan = dict(line.split("=") for line in (out / "plan" / "plan.txt").read_text().split())
    assert int(plan["pairs"]) == int(plan["cover"]) + int(plan["coverage_fix"]) + int(plan["empty_baseline"])


def test_rerun_is_noop(tiny_run, capsys):
    out, _, _ = tiny_run
    before = snapshot(out)
    mtimes = {p: p.stat().st_mtime_ns for p in out.rglob("*") if p.is_file()}
    assert main(["pipeline", "--out", str(out), *TINY]) == 0
    assert snapshot(out) == before
    assert {p: p.stat().st_mtime_ns for p in out.rglob("*") if p.is_file()} == mtimes


def test_deleted_report_regenerates(tiny_run, capsys):
    out, _, _ = tiny_run
    before = snapshot(out / "report")
    for p in (out / "report").iterdir():
        p.unlink()
    assert main(["analyze", "--all", "--out", str(out), *TINY]) == 0
    assert snapshot(out / "report") == before


def test_config_change_reruns_downstream(tiny_run, tmp_path, capsys):
    out, _, _ = tiny_run
    ws = Workspace(make_config({}, {"out": str(out), "sites": 5, "personas": 6, "top_k": 10, "min_pairs": 4}))
    report = snapshot(out / "report")
    stage_report(ws)
    assert json.loads((out / "report" / "manifest.json").read_text())["config"]["min_pairs"] == 4
    # restore for the other tests
    assert main(["analyze", "--out", str(out), *TINY]) == 0
    assert snapshot(out / "report") == report


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("# tiny run\nseed = 11\nsites = 5   # trailing comment\nstrategy = short\nwall-clock = yes\n")
    values = parse_config_file(str(path))
    cfg = make_config(values, {"sites": "6", "personas": None})
    assert (cfg.seed, cfg.sites, cfg.strategy, cfg.wall_clock) == (11, 6, "short", True)
    assert cfg.personas == RunConfig().personas


def test_invalid_config_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.conf"
    bad.write_text("no_such_key = 1\n")
    assert main(["plan", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert main(["plan", "--top-k", "0", "--out", str(tmp_path / "x")]) == 2
    assert main(["crawl", "--strategy", "short:a:b", "--out", str(tmp_path / "x")]) == 2
    assert main(["survey", "--catalog", str(tmp_path / "missing.tsv"), "--out", str(tmp_path / "x")]) == 2


def test_stage_failure_exit_code(tmp_path, capsys):
    # nothing upstream exists
    assert main(["analyze", "--out", str(tmp_path / "empty")]) == 1
    assert "report" in capsys.readouterr().err
    assert not (tmp_path / "empty" / ".report.tmp").exists()


def test_gen_ecosystem_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        assert main(["gen-ecosystem", "--out", str(tmp_path / name), "--seed", "5"]) == 0
    a, b = snapshot(tmp_path / "a" / "ecosystem"), snapshot(tmp_path / "b" / "ecosystem")
    assert a == b


def test_external_inputs_are_copied(tiny_run, tmp_path, capsys):
    out, _, _ = tiny_run
    catalog = out / "ecosystem" / "catalog.tsv"
    assert main(["gen-ecosystem", "--out", str(tmp_path / "ext"), "--catalog", str(catalog)]) == 0
    assert (tmp_path / "ext" / "ecosystem" / "catalog.tsv").read_bytes() == catalog.read_bytes()
    manifest = json.loads((tmp_path / "ext" / "ecosystem" / "manifest.json").read_text())
    assert list(manifest["inputs"].values()) == [__import__("hashlib").sha256(catalog.read_bytes()).hexdigest()]


def test_oracle_command(capsys):
    assert main(["oracle", "--instances", "200", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "passed=200" in out
    passed, total, worst = run_oracle(100, 1)
    assert passed == total == 100 and worst >= 1 - 1 / 2.718281828459045


def test_help_documents_every_key():
    sub = build_parser()._subparsers._group_actions[0].choices
    assert set(sub) == {"gen-ecosystem", "build-personas", "survey", "plan", "crawl", "analyze", "pipeline", "oracle"}
    text = sub["pipeline"].format_help()
    for key in RunConfig.__dataclass_fields__:
        assert "--" + key.replace("_", "-") in text
