from __future__ import annotations

import json

import pytest
from click.testing import CliRunner

from escomatch.cli import main

from conftest import make_taxonomy, write_jsonl


@pytest.fixture
def runner():
    return CliRunner()


def write_taxonomy_jsonl(path, n=8):
    tax = make_taxonomy(n)
    write_jsonl(
        path,
        [
            {
                "id": s.id,
                "preferred_label": s.preferred_label,
                "alt_labels": list(s.alt_labels),
                "description": s.description,
            }
            for s in tax.skills
        ],
    )
    return tax


@pytest.fixture
def workspace(tmp_path, runner):
    """Taxonomy + corpus + indices + bank built via CLI with mock providers."""
    taxonomy_path = tmp_path / "skills.jsonl"
    tax = write_taxonomy_jsonl(taxonomy_path)
    common = ["--taxonomy", str(taxonomy_path), "--format", "jsonl"]
    result = runner.invoke(
        main,
        ["gen-data", *common, "--out", str(tmp_path / "corpus.jsonl"),
         "--report", str(tmp_path / "gen_report.json"), "--provider", "mock"],
    )
    assert result.exit_code == 0, result.output
    result = runner.invoke(
        main,
        ["embed", *common, "--corpus", str(tmp_path / "corpus.jsonl"),
         "--labels-out", str(tmp_path / "labels.idx"),
         "--sentences-out", str(tmp_path / "sentences.idx"), "--provider", "mock"],
    )
    assert result.exit_code == 0, result.output
    result = runner.invoke(
        main,
        ["train", "--corpus", str(tmp_path / "corpus.jsonl"),
         "--sentences", str(tmp_path / "sentences.idx"),
         "--out", str(tmp_path / "bank.bin")],
    )
    assert result.exit_code == 0, result.output
    return tmp_path, tax, common


def test_ingest_reports_counts(tmp_path, runner):
    taxonomy_path = tmp_path / "skills.jsonl"
    write_taxonomy_jsonl(taxonomy_path, n=5)
    result = runner.invoke(main, ["ingest", "--taxonomy", str(taxonomy_path), "--format", "jsonl"])
    assert result.exit_code == 0
    assert "skills loaded: 5" in result.output


def test_ingest_missing_file_exits_2(runner):
    result = runner.invoke(main, ["ingest", "--taxonomy", "/nonexistent/skills.csv"])
    assert result.exit_code == 2


def test_bad_config_file_exits_2(tmp_path, runner):
    taxonomy_path = tmp_path / "skills.jsonl"
    write_taxonomy_jsonl(taxonomy_path, n=3)
    bad_config = tmp_path / "config.json"
    bad_config.write_text("not json {")
    result = runner.invoke(
        main,
        ["gen-data", "--taxonomy", str(taxonomy_path), "--format", "jsonl",
         "--out", str(tmp_path / "c.jsonl"), "--config", str(bad_config)],
    )
    assert result.exit_code == 2


def test_pipeline_error_exits_1(tmp_path, runner):
    # corrupt corpus -> pipeline error, not usage error
    taxonomy_path = tmp_path / "skills.jsonl"
    write_taxonomy_jsonl(taxonomy_path, n=3)
    corpus = tmp_path / "corpus.jsonl"
    corpus.write_text("{broken\n")
    result = runner.invoke(
        main,
        ["embed", "--taxonomy", str(taxonomy_path), "--format", "jsonl",
         "--corpus", str(corpus), "--labels-out", str(tmp_path / "l.idx"),
         "--sentences-out", str(tmp_path / "s.idx")],
    )
    assert result.exit_code == 1


def test_match_prints_candidates_and_ranking(workspace, runner):
    tmp_path, tax, common = workspace
    span = f"strong {tax.skills[0].preferred_label} required"
    result = runner.invoke(
        main,
        ["match", *common, "--span", span,
         "--labels", str(tmp_path / "labels.idx"),
         "--sentences", str(tmp_path / "sentences.idx"),
         "--bank", str(tmp_path / "bank.bin"),
         "--sources", "both", "--variant", "code", "--provider", "mock"],
    )
    assert result.exit_code == 0, result.output
    assert "candidates (" in result.output
    assert "ranked:" in result.output
    assert tax.skills[0].preferred_label in result.output


def test_eval_deterministic_byte_identical_reports(workspace, runner):
    tmp_path, tax, common = workspace
    dataset = tmp_path / "eval.jsonl"
    write_jsonl(
        dataset,
        [
            {"span": f"job needs {s.preferred_label} daily", "gold": [s.id],
             "subset": "house" if i % 2 == 0 else "tech"}
            for i, s in enumerate(tax.skills[:6])
        ],
    )
    outputs = []
    for run in range(2):
        out = tmp_path / f"report{run}.json"
        result = runner.invoke(
            main,
            ["eval", *common, "--dataset", str(dataset),
             "--labels", str(tmp_path / "labels.idx"),
             "--sentences", str(tmp_path / "sentences.idx"),
             "--bank", str(tmp_path / "bank.bin"),
             "--sources", "similarity", "--variant", "natural",
             "--provider", "mock", "--seed", "3", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]
    report = json.loads(outputs[0])
    assert set(report["subsets"]) == {"house", "tech"}
    assert report["metadata"]["seed"] == 3
    assert "config_hash" in report["metadata"]
    assert "template_version" in report["metadata"]


def test_cache_command_stats_and_clear(workspace, runner):
    tmp_path, tax, common = workspace
    cache_dir = tmp_path / "cache"
    span = f"uses {tax.skills[1].preferred_label}"
    invoke = lambda: runner.invoke(
        main,
        ["match", *common, "--span", span,
         "--labels", str(tmp_path / "labels.idx"),
         "--sources", "similarity", "--provider", "mock",
         "--cache-dir", str(cache_dir)],
    )
    assert invoke().exit_code == 0
    result = runner.invoke(main, ["cache", "--cache-dir", str(cache_dir)])
    assert result.exit_code == 0
    assert "entries: 1" in result.output
    result = runner.invoke(main, ["cache", "--cache-dir", str(cache_dir), "--clear"])
    assert "removed 1" in result.output
    assert "entries: 0" in runner.invoke(main, ["cache", "--cache-dir", str(cache_dir)]).output
