import json

from click.testing import CliRunner

from treenas.cli import main
from treenas.configtree import render_config
from treenas.mining import load_db

from .conftest import CORPUS_DIR, FIXTURES, make_small_tree


def test_mine_search_report_round_trip(tmp_path):
    runner = CliRunner()
    db_path = tmp_path / "db.json"
    result = runner.invoke(main, [
        "mine", str(CORPUS_DIR), str(FIXTURES / "corpus_extra" / "classifier.py"),
        "--out", str(db_path)])
    assert result.exit_code == 0, result.output
    db = load_db(db_path)
    assert len(db.records) == 16  # 15-class corpus + classifier wrapper

    base_path = tmp_path / "base.cfg"
    base_path.write_text(render_config(make_small_tree()))
    rundir = tmp_path / "run"
    result = runner.invoke(main, [
        "search", "--db", str(db_path), "--base", str(base_path),
        "--budget", "5", "--workers", "2", "--epsilon", "0.5",
        "--llm", "simulated:7", "--evaluator", "synthetic",
        "--seed", "11", "--out", str(rundir)])
    assert result.exit_code == 0, result.output
    assert "best metric" in result.output
    assert (rundir / "trials.jsonl").exists()

    result = runner.invoke(main, ["report", str(rundir)])
    assert result.exit_code == 0
    assert "evaluated architectures: 5" in result.output


def test_render_is_canonical(tmp_path):
    runner = CliRunner()
    cfg = FIXTURES / "arch_imagenet16.cfg"
    result = runner.invoke(main, ["render", str(cfg)])
    assert result.exit_code == 0
    assert result.output == cfg.read_text()


def test_parse_reports_module_count(tmp_path):
    runner = CliRunner()
    path = tmp_path / "m.cfg"
    path.write_text("model = dict(type='X', sub=dict(type='Y'))\n")
    result = runner.invoke(main, ["parse", str(path)])
    assert result.exit_code == 0
    assert "2 module nodes" in result.output


def test_parse_rejects_bad_config(tmp_path):
    runner = CliRunner()
    path = tmp_path / "bad.cfg"
    path.write_text("model = dict(type='X', a=1+1)\n")
    result = runner.invoke(main, ["parse", str(path)])
    assert result.exit_code == 1


def test_inspect_db(tmp_path):
    runner = CliRunner()
    db_path = tmp_path / "db.json"
    result = runner.invoke(main, ["mine", str(CORPUS_DIR), "--out", str(db_path)])
    assert result.exit_code == 0
    result = runner.invoke(main, ["inspect", "--db", str(db_path)])
    assert result.exit_code == 0
    assert "records: 15" in result.output
    assert "arity histogram:" in result.output


def test_search_resume_from_checkpoint(tmp_path):
    runner = CliRunner()
    db_path = tmp_path / "db.json"
    runner.invoke(main, ["mine", str(CORPUS_DIR),
                         str(FIXTURES / "corpus_extra" / "classifier.py"),
                         "--out", str(db_path)])
    base_path = tmp_path / "base.cfg"
    base_path.write_text(render_config(make_small_tree()))
    rundir = tmp_path / "run1"
    result = runner.invoke(main, [
        "search", "--db", str(db_path), "--base", str(base_path),
        "--budget", "3", "--llm", "simulated", "--evaluator", "synthetic",
        "--seed", "5", "--out", str(rundir)])
    assert result.exit_code == 0, result.output
    rundir2 = tmp_path / "run2"
    result = runner.invoke(main, [
        "search", "--db", str(db_path), "--base", str(base_path),
        "--budget", "6", "--llm", "simulated", "--evaluator", "synthetic",
        "--seed", "5", "--out", str(rundir2),
        "--resume", str(rundir / "checkpoint.json")])
    assert result.exit_code == 0, result.output
    summary = json.loads((rundir2 / "summary.json").read_text())
    assert summary["evaluated"] == 6


def test_search_with_dead_evaluator_exits_cleanly(tmp_path):
    runner = CliRunner()
    db_path = tmp_path / "db.json"
    runner.invoke(main, ["mine", str(CORPUS_DIR),
                         str(FIXTURES / "corpus_extra" / "classifier.py"),
                         "--out", str(db_path)])
    base_path = tmp_path / "base.cfg"
    base_path.write_text(render_config(make_small_tree()))
    result = runner.invoke(main, [
        "search", "--db", str(db_path), "--base", str(base_path),
        "--budget", "2", "--llm", "simulated", "--evaluator", "/no/such/worker",
        "--out", str(tmp_path / "run")])
    assert result.exit_code == 1
    assert "aborted" in result.output + str(result.stderr or "")
