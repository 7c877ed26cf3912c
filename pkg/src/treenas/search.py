"""Architecture/history databases, the evolution run loop, and checkpoints.

Trials run as `workers` logical evolution streams, each with its own seeded
RNG (seed = run_seed * 10007 + worker_index), executed in a deterministic
round-robin rotation.  Decisions and database appends are serialized; with
hermetic endpoints the whole trajectory is reproducible and resumable from a
checkpoint.  A threaded mode exists for slow real endpoints; its updates stay
correct (commutative counts) but trajectories then depend on scheduling.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .bandit import BanditState, sample_category, sample_operation, update
from .configtree import ArchTree, parse_config, render_config
from .decision import fill_placeholders, sample_template
from .errors import (
    BudgetExhaustedByFailures,
    CorruptCheckpoint,
    NoCandidates,
    NoRepeatableHistory,
    TrialInfeasible,
)
from .evaluators import Evaluator
from .feasibility import Budget, run_feasibility
from .llm import LLMEndpoint
from .mining import ModuleDB
from .ops import Operation
from .prompts import TEMPLATE_REGISTRY, render_history_block
from .transforms import (
    RepeatSource,
    Transformation,
    apply_change_hparam,
    apply_create,
    apply_insert,
    apply_remove,
    apply_repeat,
    apply_swap,
)

log = logging.getLogger(__name__)

DECISION_RESAMPLES = 10
CHECKPOINT_VERSION = 1


@dataclass
class ArchEntry:
    id: int
    tree: ArchTree
    metric: float
    parent_id: int | None = None
    transformation_id: int | None = None
    params: int | None = None
    flops: int | None = None


@dataclass
class HistoryEntry:
    id: int
    transformation: Transformation
    base_id: int
    child_id: int
    delta: float
    sign: int
    summary: str

    def __post_init__(self):
        if self.sign != int(self.delta > 0):
            raise ValueError("sign must equal [delta > 0]")


def textualize(entry: HistoryEntry) -> str:
    """One history line as shown to the LLM."""
    verdict = "Improved" if entry.sign == 1 else "Deteriorated"
    return f"Changes: {entry.summary}\nPerformance: {verdict}"


@dataclass
class RunConfig:
    budget: int
    workers: int = 4
    top_k: int | None = None
    epsilon: float = 0.5
    max_params: int = 10 ** 9
    max_flops: int = 10 ** 12
    seed: int = 0
    attempt_cap: int | None = None
    history_window: int = 20
    retries: int = 2
    parallel: str = "lockstep"  # lockstep (deterministic) | thread

    def __post_init__(self):
        if self.budget < 1 or self.workers < 1:
            raise ValueError("budget and workers must be at least 1")
        if self.top_k is None:
            self.top_k = 25 if self.budget >= 500 else 5
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")
        if self.attempt_cap is None:
            self.attempt_cap = 5 * self.budget
        if self.parallel not in ("lockstep", "thread"):
            raise ValueError("parallel must be 'lockstep' or 'thread'")

    @property
    def budget_limits(self) -> Budget:
        return Budget(self.max_params, self.max_flops)


def sample_base(entries: list[ArchEntry], k: int, rng: random.Random) -> ArchEntry:
    """Uniform over the top-min(k, n) entries by metric, ties by insertion order."""
    ranked = sorted(enumerate(entries), key=lambda pair: (-pair[1].metric, pair[0]))
    top = [entry for _, entry in ranked[:k]]
    return top[rng.randrange(len(top))]


@dataclass
class SearchState:
    entries: list[ArchEntry] = field(default_factory=list)
    history: list[HistoryEntry] = field(default_factory=list)
    bandit: BanditState = field(default_factory=BanditState.fresh)
    rng_states: list | None = None
    evaluated: int = 0
    attempts: int = 0
    records: list[dict] = field(default_factory=list)

    def entry_by_id(self, entry_id: int) -> ArchEntry:
        return next(e for e in self.entries if e.id == entry_id)

    def lineage_ids(self, entry: ArchEntry) -> set[int]:
        ids = set()
        current: ArchEntry | None = entry
        while current is not None:
            ids.add(current.id)
            current = (self.entry_by_id(current.parent_id)
                       if current.parent_id is not None else None)
        return ids


def find_repeatables(state: SearchState, base_entry: ArchEntry) -> list[RepeatSource]:
    """Improving history steps whose result lies on the base's lineage."""
    lineage = state.lineage_ids(base_entry)
    sources = []
    for h in state.history:
        if h.sign != 1 or h.child_id not in lineage:
            continue
        parent = state.entry_by_id(h.base_id)
        child = state.entry_by_id(h.child_id)
        edit = h.transformation.edits[0]
        sources.append(RepeatSource(
            op=h.transformation.op, summary=h.summary,
            base_tree=parent.tree, result_tree=child.tree,
            base_metric=parent.metric, result_metric=child.metric,
            module_new=edit.new_type, module_pre=edit.old_type,
            location=edit.address))
    return sources


@dataclass
class RunReport:
    config: RunConfig
    entries: list[ArchEntry]
    history: list[HistoryEntry]
    bandit: BanditState
    evaluated: int
    attempts: int
    records: list[dict]
    state: SearchState

    @property
    def best(self) -> ArchEntry:
        return max(self.entries, key=lambda e: (e.metric, -e.id))

    @property
    def acceptance_rate(self) -> float:
        return self.evaluated / self.attempts if self.attempts else 0.0

    def lineage_of(self, entry: ArchEntry) -> list[ArchEntry]:
        chain = [entry]
        while chain[-1].parent_id is not None:
            chain.append(self.state.entry_by_id(chain[-1].parent_id))
        return list(reversed(chain))

    def summary_text(self) -> str:
        best = self.best
        lines = [
            f"evaluated architectures: {self.evaluated} (attempts: {self.attempts}, "
            f"acceptance rate: {self.acceptance_rate:.2f})",
            f"best metric: {best.metric:.4f} (entry {best.id}, "
            f"params={best.params}, flops={best.flops})",
            "lineage: " + " -> ".join(str(e.id) for e in self.lineage_of(best)),
            "operation arms (alpha, beta):",
        ]
        for op, (a, b) in self.bandit.op_arms.items():
            lines.append(f"  {op.value}: ({a}, {b})")
        lines.append("category arms (alpha, beta):")
        for (op, cat), (a, b) in self.bandit.cat_arms.items():
            lines.append(f"  {op.value}/{cat.value}: ({a}, {b})")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# One trial
# ---------------------------------------------------------------------------

_APPLY = {
    Operation.SWAP_MODULE: apply_swap,
    Operation.INSERT_MODULE: apply_insert,
    Operation.DELETE_MODULE: apply_remove,
    Operation.CREATE_MODULE: apply_create,
    Operation.CHANGE_HYPERPARAMETER: apply_change_hparam,
}


def _decide(state: SearchState, base_entry: ArchEntry, db: ModuleDB, registry,
            rng: random.Random):
    """Sample (op, cat, template, assignment); resample the operation on dead ends."""
    for _ in range(DECISION_RESAMPLES):
        op = sample_operation(state.bandit, rng)
        cat = sample_category(state.bandit, op, rng)
        template = sample_template(op, cat, registry, rng)
        if op is Operation.REPEAT_PREVIOUS:
            repeatables = find_repeatables(state, base_entry)
            if not repeatables:
                continue
            return op, cat, template, None, repeatables
        try:
            assignment = fill_placeholders(template, base_entry.tree, db, rng)
        except NoCandidates:
            continue
        return op, cat, template, assignment, None
    raise NoCandidates("no operation produced candidates after resampling")


def _run_trial(state: SearchState, cfg: RunConfig, db: ModuleDB,
               evaluator: Evaluator, llm: LLMEndpoint, registry,
               rng: random.Random, worker: int, attempt: int) -> dict:
    record: dict = {"attempt": attempt, "worker": worker}
    base_entry = sample_base(state.entries, cfg.top_k, rng)
    record["base_id"] = base_entry.id
    try:
        op, cat, template, assignment, repeatables = _decide(
            state, base_entry, db, registry, rng)
    except NoCandidates as exc:
        record.update(status="no-candidates", reason=str(exc))
        return record
    record.update(op=op.value, cat=cat.value, template=template.index)

    history_block = render_history_block(
        [(h.summary, h.sign == 1) for h in state.history], cfg.history_window)
    try:
        if op is Operation.REPEAT_PREVIOUS:
            result, t = apply_repeat(base_entry.tree, repeatables, db, llm, rng,
                                     template=template, retries=cfg.retries)
        else:
            result, t = _APPLY[op](base_entry.tree, db, template, assignment, llm,
                                   history_block=history_block, retries=cfg.retries)
    except (TrialInfeasible, NoRepeatableHistory) as exc:
        record.update(status="infeasible", reason=str(exc))
        return record

    report = run_feasibility(base_entry.tree, result, t, db, cfg.budget_limits,
                             evaluator=evaluator)
    if not report.overall:
        reasons = "; ".join(r for r in (report.exec_reason,
                                        "" if report.const_ok else "budget exceeded",
                                        report.intend_reason) if r)
        record.update(status="rejected", reason=reasons,
                      params=report.params, flops=report.flops)
        return record

    metric = evaluator.train(result)
    delta = metric - base_entry.metric
    sign = int(delta > 0)
    record.update(status="evaluated", metric=metric, delta=delta, sign=sign,
                  params=report.params, flops=report.flops,
                  transformation=t.to_json())
    record["result"] = (base_entry.id, t, result, metric, delta, sign, report)
    return record


def _commit(state: SearchState, record: dict) -> None:
    """Append the evaluated trial's results and update the bandit."""
    base_id, t, result, metric, delta, sign, report = record.pop("result")
    if metric != metric or metric in (float("inf"), float("-inf")):
        record.update(status="rejected", reason="evaluator returned a non-finite metric")
        return
    entry_id = max((e.id for e in state.entries), default=-1) + 1
    hist_id = len(state.history)
    entry = ArchEntry(id=entry_id, tree=result, metric=metric, parent_id=base_id,
                      transformation_id=hist_id, params=report.params,
                      flops=report.flops)
    state.entries.append(entry)
    state.history.append(HistoryEntry(
        id=hist_id, transformation=t, base_id=base_id, child_id=entry_id,
        delta=delta, sign=sign, summary=t.summary))
    state.bandit = update(state.bandit, t.op, t.cat, sign)
    state.evaluated += 1
    record["arch_id"] = entry_id


# ---------------------------------------------------------------------------
# Run loop
# ---------------------------------------------------------------------------


def _seed_state(cfg: RunConfig, db: ModuleDB, bases: list[ArchTree],
                evaluator: Evaluator) -> SearchState:
    state = SearchState(bandit=BanditState.fresh(cfg.epsilon))
    for i, base in enumerate(bases):
        report = run_feasibility(base, base, _noop_transformation(), db,
                                 cfg.budget_limits, evaluator=evaluator)
        if not (report.exec_ok and report.const_ok):
            raise ValueError(
                f"seed architecture {i} is not feasible: "
                f"{report.exec_reason or 'over budget'} "
                f"(params={report.params}, flops={report.flops})")
        metric = evaluator.train(base)
        if metric != metric or metric in (float("inf"), float("-inf")):
            raise ValueError(f"seed architecture {i} evaluated to a non-finite metric")
        state.entries.append(ArchEntry(id=i, tree=base, metric=metric,
                                       params=report.params, flops=report.flops))
    return state


def _noop_transformation() -> Transformation:
    from .decision import PlaceholderAssignment
    from .ops import PromptCategory
    from .transforms import Edit
    return Transformation(Operation.REPEAT_PREVIOUS, PromptCategory.MINIMUM_LLM,
                          (Operation.REPEAT_PREVIOUS, PromptCategory.MINIMUM_LLM, 0),
                          PlaceholderAssignment(), [Edit("repeat", "model")], "", "seed")


def run_search(cfg: RunConfig, db: ModuleDB, base: ArchTree | list[ArchTree],
               evaluator: Evaluator, llm: LLMEndpoint, registry=None, out_dir=None,
               resume: SearchState | None = None,
               stop_after_attempts: int | None = None) -> RunReport:
    """Run the evolution loop until `budget` architectures are evaluated.

    `base` may be a single architecture or a list of seed architectures.
    Raises BudgetExhaustedByFailures (with .report attached) when attempt_cap
    is consumed first.  `resume` continues a checkpointed state; in lockstep
    mode the resumed trajectory matches the uninterrupted one exactly.
    """
    registry = registry or TEMPLATE_REGISTRY
    bases = base if isinstance(base, list) else [base]
    state = resume if resume is not None else _seed_state(cfg, db, bases, evaluator)

    rngs = [random.Random(cfg.seed * 10007 + w) for w in range(cfg.workers)]
    if state.rng_states is not None:
        for rng, saved in zip(rngs, state.rng_states):
            rng.setstate(_rng_state_from_json(saved))

    lock = threading.Lock()
    attempts_this_call = 0

    def one_attempt():
        nonlocal attempts_this_call
        with lock:
            worker = state.attempts % cfg.workers
            attempt = state.attempts
            state.attempts += 1
            attempts_this_call += 1
        record = _run_trial(state, cfg, db, evaluator, llm, registry,
                            rngs[worker], worker, attempt)
        with lock:
            if "result" in record:
                _commit(state, record)
            state.records.append(record)

    def should_continue() -> bool:
        if stop_after_attempts is not None and attempts_this_call >= stop_after_attempts:
            return False
        return state.evaluated < cfg.budget and state.attempts < cfg.attempt_cap

    if cfg.parallel == "thread" and cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            while should_continue():
                # Bound the batch so a burst of successes cannot overshoot the
                # evaluation budget or the attempt cap.
                n = min(cfg.workers,
                        cfg.budget - state.evaluated,
                        cfg.attempt_cap - state.attempts)
                if stop_after_attempts is not None:
                    n = min(n, stop_after_attempts - attempts_this_call)
                if n <= 0:
                    break
                batch = [pool.submit(one_attempt) for _ in range(n)]
                for f in batch:
                    f.result()
    else:
        while should_continue():
            one_attempt()

    state.rng_states = [_rng_state_to_json(rng.getstate()) for rng in rngs]
    report = RunReport(config=cfg, entries=state.entries, history=state.history,
                       bandit=state.bandit, evaluated=state.evaluated,
                       attempts=state.attempts, records=state.records, state=state)
    if out_dir is not None:
        write_outputs(report, out_dir)
    interrupted = stop_after_attempts is not None and attempts_this_call >= stop_after_attempts
    if state.evaluated < cfg.budget and not interrupted:
        exc = BudgetExhaustedByFailures(
            f"attempt cap {cfg.attempt_cap} consumed with only "
            f"{state.evaluated}/{cfg.budget} architectures evaluated")
        exc.report = report
        raise exc
    return report


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _rng_state_to_json(rng_state) -> list:
    version, internal, gauss = rng_state
    return [version, list(internal), gauss]


def _rng_state_from_json(saved) -> tuple:
    version, internal, gauss = saved
    return (version, tuple(internal), gauss)


def _entry_to_json(entry: ArchEntry) -> dict:
    return {"id": entry.id, "tree": render_config(entry.tree), "metric": entry.metric,
            "parent_id": entry.parent_id, "transformation_id": entry.transformation_id,
            "params": entry.params, "flops": entry.flops}


def _entry_from_json(d: dict) -> ArchEntry:
    return ArchEntry(id=d["id"], tree=parse_config(d["tree"]), metric=d["metric"],
                     parent_id=d["parent_id"], transformation_id=d["transformation_id"],
                     params=d["params"], flops=d["flops"])


def state_to_json(state: SearchState) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "evaluated": state.evaluated,
        "attempts": state.attempts,
        "bandit": state.bandit.to_json(),
        "entries": [_entry_to_json(e) for e in state.entries],
        "history": [
            {"id": h.id, "transformation": h.transformation.to_json(),
             "base_id": h.base_id, "child_id": h.child_id, "delta": h.delta,
             "sign": h.sign, "summary": h.summary}
            for h in state.history
        ],
        "rng_states": state.rng_states,
        "records": state.records,
    }


def state_from_json(payload: dict) -> SearchState:
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CorruptCheckpoint(f"unsupported checkpoint version {payload.get('version')!r}")
    state = SearchState(bandit=BanditState.from_json(payload["bandit"]))
    state.entries = [_entry_from_json(d) for d in payload["entries"]]
    state.history = [
        HistoryEntry(id=d["id"], transformation=Transformation.from_json(d["transformation"]),
                     base_id=d["base_id"], child_id=d["child_id"], delta=d["delta"],
                     sign=d["sign"], summary=d["summary"])
        for d in payload["history"]
    ]
    state.rng_states = payload["rng_states"]
    state.evaluated = payload["evaluated"]
    state.attempts = payload["attempts"]
    state.records = payload["records"]
    return state


def checkpoint_save(state: SearchState, path) -> None:
    payload = state_to_json(state)
    blob = json.dumps(payload, sort_keys=True)
    sha = hashlib.sha256(blob.encode()).hexdigest()
    with open(path, "w") as fh:
        json.dump({"sha256": sha, "payload": payload}, fh, sort_keys=True)


def checkpoint_load(path) -> SearchState:
    try:
        with open(path) as fh:
            wrapper = json.load(fh)
    except (OSError, ValueError) as exc:
        raise CorruptCheckpoint(f"cannot read checkpoint: {exc}") from exc
    if not isinstance(wrapper, dict) or "payload" not in wrapper or "sha256" not in wrapper:
        raise CorruptCheckpoint("checkpoint is missing payload or digest")
    blob = json.dumps(wrapper["payload"], sort_keys=True)
    if hashlib.sha256(blob.encode()).hexdigest() != wrapper["sha256"]:
        raise CorruptCheckpoint("checkpoint digest mismatch")
    return state_from_json(wrapper["payload"])


def write_outputs(report: RunReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trials.jsonl", "w") as fh:
        for record in report.records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    best = report.best
    (out / "best.cfg").write_text(render_config(best.tree))
    summary = {
        "evaluated": report.evaluated,
        "attempts": report.attempts,
        "acceptance_rate": report.acceptance_rate,
        "best": {"id": best.id, "metric": best.metric,
                 "params": best.params, "flops": best.flops},
        "bandit": report.bandit.to_json(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "summary.txt").write_text(report.summary_text())
    checkpoint_save(report.state, out / "checkpoint.json")
