"""Feasibility gate: executability, budget constraints, and intent verification.

A trial's result is stored and evaluated only when all three indicators pass.
Executability is a static pass over the tree (plus an optional evaluator
dry-run); constraints come from the evaluator or a deterministic synthetic
cost model; intent checks are rule-based node-value comparisons per operation.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .configtree import (
    ArchNode,
    ArchTree,
    NodeAddress,
    attr,
    contains_todo,
    get_subtree,
    parse_config,
    render_config,
    replace,
    values_equal,
)
from .errors import BadAddress, UnknownModule
from .mining import MERGE_OPERATIONS, ModuleDB
from .ops import Operation
from .transforms import Transformation

SYNTHETIC_LEAF_CAP = 10 ** 6


@dataclass(frozen=True)
class Budget:
    max_params: int
    max_flops: int

    def __post_init__(self):
        if self.max_params <= 0 or self.max_flops <= 0:
            raise ValueError("budget limits must be positive")


@dataclass
class FeasibilityReport:
    exec_ok: bool
    exec_reason: str
    const_ok: bool
    intend_ok: bool
    intend_reason: str
    params: int | None = None
    flops: int | None = None

    @property
    def overall(self) -> bool:
        return self.exec_ok and self.const_ok and self.intend_ok


# ---------------------------------------------------------------------------
# Executability
# ---------------------------------------------------------------------------


def _module_nodes(value, address):
    if isinstance(value, ArchNode):
        if value.is_module:
            yield address, value
        for key, sub in value.items():
            yield from _module_nodes(sub, address.child(key))
    elif isinstance(value, (list, tuple)):
        for i, sub in enumerate(value):
            yield from _module_nodes(sub, address.child(i))


def check_exec(tree: ArchTree, db: ModuleDB, evaluator=None) -> tuple[bool, str]:
    """Static executability: grammar, type resolution, key and combinator rules."""
    try:
        if parse_config(render_config(tree)) != tree:
            return False, "render/parse round trip changed the tree"
    except Exception as exc:
        return False, f"config does not round-trip: {exc}"

    if contains_todo(tree.root):
        return False, 'a "<TODO>" marker survives in the config'

    root_addr = NodeAddress(("model",))
    for address, node_val in _module_nodes(tree.root, root_addr):
        name = node_val.module_type
        try:
            record = db.lookup(name)
        except UnknownModule:
            return False, f"unknown module {name!r} at {address.render()}"
        allowed = {p for p, _ in record.params}
        extra = [k for k in node_val.keys() if k != "type" and k not in allowed]
        if extra:
            return False, (f"{name} at {address.render()} has unknown "
                           f"parameters: {', '.join(extra)}")
        if name == "ParallelWithConfig":
            for branch in ("module_cfg1", "module_cfg2"):
                sub = node_val.get(branch)
                if not (isinstance(sub, ArchNode) and sub.is_module):
                    return False, (f"ParallelWithConfig at {address.render()} "
                                   f"is missing branch {branch}")
            merge = node_val.get("merge_operation", "add")
            if merge not in MERGE_OPERATIONS:
                return False, (f"invalid merge_operation {merge!r} at {address.render()}")

    if evaluator is not None:
        result = evaluator.dry_run(tree)
        if not result.ok:
            return False, f"evaluator dry run failed: {result.reason}"
    return True, ""


# ---------------------------------------------------------------------------
# Constraints
# ---------------------------------------------------------------------------


def synthetic_cost(tree: ArchTree) -> tuple[int, int]:
    """Deterministic hermetic cost: module count plus capped integer leaves."""
    params = 0
    for _, node_val in _module_nodes(tree.root, NodeAddress(("model",))):
        params += 1
        for key, value in node_val.items():
            if key == "type" or isinstance(value, bool):
                continue
            if isinstance(value, int):
                params += min(max(value, 0), SYNTHETIC_LEAF_CAP)
    return params, params * 100


def check_const(tree: ArchTree, budget: Budget, evaluator=None,
                cost_model=None) -> tuple[bool, int, int]:
    """Measure (params, flops) and compare against the budget (inclusive)."""
    if evaluator is not None:
        result = evaluator.dry_run(tree)
        params, flops = result.params, result.flops
        if not result.ok or params is None or flops is None:
            return False, params or 0, flops or 0
    else:
        params, flops = (cost_model or synthetic_cost)(tree)
    return params <= budget.max_params and flops <= budget.max_flops, params, flops


# ---------------------------------------------------------------------------
# Intent
# ---------------------------------------------------------------------------


def _attr_pairs(tree: ArchTree) -> list[tuple[str, str]]:
    return [(a.render(), m) for a, m in attr(tree)]


def _list_length_at(tree: ArchTree, address: NodeAddress) -> int | None:
    try:
        parent = get_subtree(tree, address.parent)
    except BadAddress:
        return None
    return len(parent) if isinstance(parent, list) else None


def check_intend(base: ArchTree, result: ArchTree,
                 t: Transformation) -> tuple[bool, str]:
    """Rule-based verification that the result reflects the planned edit."""
    handlers = {
        Operation.SWAP_MODULE: _intend_swap,
        Operation.INSERT_MODULE: _intend_insert,
        Operation.DELETE_MODULE: _intend_delete,
        Operation.CHANGE_HYPERPARAMETER: _intend_change,
        Operation.CREATE_MODULE: _intend_create,
        Operation.REPEAT_PREVIOUS: _intend_repeat,
    }
    return handlers[t.op](base, result, t)


def _intend_swap(base, result, t):
    edit = t.edits[0]
    address = NodeAddress.parse(edit.address)
    try:
        new_sub = get_subtree(result, address)
    except BadAddress:
        return False, f"{edit.address} does not resolve in the result"
    if not isinstance(new_sub, ArchNode) or new_sub.module_type != edit.new_type:
        return False, f"result type at {edit.address} is not {edit.new_type}"
    old_sub = get_subtree(base, address)
    if values_equal(new_sub, old_sub):
        return False, "swapped sub-tree is identical to the base"
    if replace(base, address, new_sub) != result:
        return False, "result differs from the base outside the swapped sub-tree"
    return True, ""


def _intend_insert(base, result, t):
    edit = t.edits[0]
    address = NodeAddress.parse(edit.address)
    base_len = _list_length_at(base, address)
    result_len = _list_length_at(result, address)
    if base_len is None or result_len is None or result_len != base_len + 1:
        return False, "containing list did not grow by exactly one"
    try:
        new_sub = get_subtree(result, address)
    except BadAddress:
        return False, f"{edit.address} does not resolve in the result"
    if not isinstance(new_sub, ArchNode) or new_sub.module_type != edit.new_type:
        return False, f"inserted element is not a {edit.new_type}"
    from .configtree import delete_list
    if delete_list(result, address) != base:
        return False, "result differs from the base beyond the insertion"
    return True, ""


def _intend_delete(base, result, t):
    edit = t.edits[0]
    address = NodeAddress.parse(edit.address)
    base_len = _list_length_at(base, address)
    result_len = _list_length_at(result, address)
    if base_len is None or result_len is None or result_len != base_len - 1:
        return False, "containing list did not shrink by exactly one"

    def type_count(tree):
        container = get_subtree(tree, address.parent)
        return sum(1 for item in container
                   if isinstance(item, ArchNode) and item.module_type == edit.old_type)

    # Count-based: an address-based check would false-negative when a
    # same-typed sibling shifts into the removed slot.
    if type_count(result) != type_count(base) - 1:
        return False, (f"a {edit.old_type} was not removed from "
                       f"{address.parent.render()}")
    return True, ""


def _intend_change(base, result, t):
    if Counter(_attr_pairs(base)) != Counter(_attr_pairs(result)):
        return False, "module (address, type) pairs changed"
    if base == result:
        return False, "no hyperparameter actually changed"
    return True, ""


def _intend_create(base, result, t):
    edit = t.edits[0]
    address = NodeAddress.parse(edit.address)
    try:
        new_sub = get_subtree(result, address)
    except BadAddress:
        return False, f"{edit.address} does not resolve in the result"
    old_sub = get_subtree(base, address)
    if values_equal(new_sub, old_sub):
        return False, "created sub-tree is identical to the base"
    required = set()
    if t.assignment.special_constraint:
        required.add(t.assignment.special_constraint)
        if t.assignment.decided_module:
            required.add(t.assignment.decided_module)
    if required:
        from .transforms import _collect_types
        missing = required - _collect_types(new_sub)
        if missing:
            return False, f"constraint types missing: {', '.join(sorted(missing))}"
    return True, ""


def _intend_repeat(base, result, t):
    if base == result:
        return False, "repeat produced an identical architecture"
    try:
        parse_config(render_config(result))
    except Exception as exc:
        return False, f"result is not grammatical: {exc}"
    return True, ""


def run_feasibility(base: ArchTree, result: ArchTree, t: Transformation,
                    db: ModuleDB, budget: Budget, evaluator=None,
                    cost_model=None) -> FeasibilityReport:
    """Eq-style conjunction of the three indicators."""
    exec_ok, exec_reason = check_exec(result, db, evaluator=evaluator)
    const_ok, params, flops = check_const(result, budget, evaluator=evaluator,
                                          cost_model=cost_model)
    intend_ok, intend_reason = check_intend(base, result, t)
    return FeasibilityReport(exec_ok=exec_ok, exec_reason=exec_reason,
                             const_ok=const_ok, intend_ok=intend_ok,
                             intend_reason=intend_reason, params=params, flops=flops)
