"""Command-line interface: mine, search, render/parse, inspect, report."""

from __future__ import annotations

import os
import sys
from collections import Counter
from pathlib import Path

import click

from .configtree import attr, parse_config, render_config
from .errors import BudgetExhaustedByFailures, TreenasError
from .evaluators import HttpEvaluator, SubprocessEvaluator, SyntheticEvaluator
from .llm import HttpEndpoint, MockEndpoint
from .mining import DEFAULT_BASE_NAMES, build_db, load_db, mine_source, save_db
from .search import RunConfig, checkpoint_load, run_search
from .simulate import SimulatedEndpoint

LLM_TOKEN_ENV = "TREENAS_LLM_TOKEN"


@click.group()
def main():
    """Tree-transformation architecture search."""


@main.command()
@click.argument("paths", nargs=-1, required=True,
                type=click.Path(exists=True, path_type=Path))
@click.option("--out", required=True, type=click.Path(path_type=Path),
              help="Output module-database JSON file.")
@click.option("--base-names", default=",".join(sorted(DEFAULT_BASE_NAMES)),
              show_default=True, help="Comma-separated module base-class names.")
def mine(paths, out, base_names):
    """Mine module records from Python source files or directories."""
    bases = {b.strip() for b in base_names.split(",") if b.strip()}
    records = []
    files: list[Path] = []
    for path in paths:
        if path.is_dir():
            files.extend(sorted(path.rglob("*.py")))
        else:
            files.append(path)
    for path in files:
        prefix = ".".join(part for part in path.with_suffix("").parts if part not in (".",))
        try:
            records.extend(mine_source(path.read_text(errors="replace"), prefix, bases))
        except TreenasError as exc:
            click.echo(f"skipping {path}: {exc}", err=True)
    db = build_db(records)
    save_db(db, out)
    click.echo(f"mined {len(records)} records from {len(files)} files -> {out}")


def _make_llm(spec: str):
    if spec.startswith("mock:"):
        return MockEndpoint.from_file(spec[len("mock:"):])
    if spec.startswith("simulated"):
        _, _, seed = spec.partition(":")
        return SimulatedEndpoint(seed=int(seed) if seed else 0)
    token = os.environ.get(LLM_TOKEN_ENV)
    return HttpEndpoint(spec, token=token)


def _make_evaluator(spec: str, dataset: str, epochs: int, seed: int, input_shape):
    if spec == "synthetic":
        return SyntheticEvaluator()
    if spec.startswith("http:") or spec.startswith("https:"):
        return HttpEvaluator(spec, dataset=dataset, epochs=epochs, seed=seed,
                             input_shape=input_shape)
    return SubprocessEvaluator(spec, dataset=dataset, epochs=epochs, seed=seed,
                               input_shape=input_shape)


@main.command()
@click.option("--db", "db_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--base", "base_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--budget", required=True, type=int)
@click.option("--workers", default=4, show_default=True, type=int)
@click.option("--top-k", default=None, type=int,
              help="Base sampling pool size (default: 5, or 25 for budgets >= 500).")
@click.option("--epsilon", default=0.5, show_default=True, type=float)
@click.option("--max-params", default=10 ** 9, show_default=True, type=int)
@click.option("--max-flops", default=10 ** 12, show_default=True, type=int)
@click.option("--llm", "llm_spec", default="simulated",
              show_default=True, help="Endpoint URL, mock:<script.json>, or simulated[:seed].")
@click.option("--evaluator", "evaluator_spec", default="synthetic", show_default=True,
              help="'synthetic', an http(s) URL, or a worker command line.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--attempt-cap", default=None, type=int)
@click.option("--dataset", default="synthetic", show_default=True)
@click.option("--epochs", default=1, show_default=True, type=int)
@click.option("--input-shape", default="3x32x32", show_default=True)
@click.option("--parallel", default="lockstep", show_default=True,
              type=click.Choice(["lockstep", "thread"]))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--resume", "resume_path", default=None, type=click.Path(exists=True, path_type=Path))
def search(db_path, base_path, budget, workers, top_k, epsilon, max_params, max_flops,
           llm_spec, evaluator_spec, seed, attempt_cap, dataset, epochs, input_shape,
           parallel, out_dir, resume_path):
    """Run the evolution loop from a base config against a module database."""
    db = load_db(db_path)
    base = parse_config(base_path.read_text())
    shape = tuple(int(x) for x in input_shape.lower().split("x"))
    cfg = RunConfig(budget=budget, workers=workers, top_k=top_k, epsilon=epsilon,
                    max_params=max_params, max_flops=max_flops, seed=seed,
                    attempt_cap=attempt_cap, parallel=parallel)
    llm = _make_llm(llm_spec)
    evaluator = _make_evaluator(evaluator_spec, dataset, epochs, seed, shape)
    resume = checkpoint_load(resume_path) if resume_path else None
    try:
        report = run_search(cfg, db, base, evaluator, llm,
                            out_dir=out_dir, resume=resume)
    except BudgetExhaustedByFailures as exc:
        click.echo(str(exc), err=True)
        click.echo(exc.report.summary_text())
        sys.exit(1)
    except TreenasError as exc:
        click.echo(f"search aborted: {exc}", err=True)
        sys.exit(1)
    click.echo(report.summary_text())


@main.command()
@click.argument("config", type=click.Path(exists=True, path_type=Path))
def render(config):
    """Parse a config file and print its canonical rendering."""
    click.echo(render_config(parse_config(config.read_text())), nl=False)


@main.command(name="parse")
@click.argument("config", type=click.Path(exists=True, path_type=Path))
def parse_cmd(config):
    """Validate a config file against the grammar."""
    try:
        tree = parse_config(config.read_text())
    except TreenasError as exc:
        click.echo(f"invalid: {exc}", err=True)
        sys.exit(1)
    click.echo(f"ok: {len(attr(tree))} module nodes")


@main.command()
@click.option("--db", "db_path", required=True, type=click.Path(exists=True, path_type=Path))
def inspect(db_path):
    """Print statistics about a module database."""
    db = load_db(db_path)
    arities = Counter(rec.arity for rec in db.records.values())
    todo = sum(1 for rec in db.records.values()
               for _, d in rec.params if d == "<TODO>")
    click.echo(f"records: {len(db.records)} (+{len(db.specials)} builtin specials)")
    click.echo(f"parameters without mineable defaults: {todo}")
    click.echo("arity histogram:")
    for arity, count in sorted(arities.items()):
        click.echo(f"  in={arity[0]} out={arity[1]}: {count}")


@main.command()
@click.argument("rundir", type=click.Path(exists=True, path_type=Path))
def report(rundir):
    """Print the human summary of a finished run directory."""
    summary = Path(rundir) / "summary.txt"
    if not summary.exists():
        click.echo("no summary.txt in run directory", err=True)
        sys.exit(1)
    click.echo(summary.read_text(), nl=False)


if __name__ == "__main__":
    main()
