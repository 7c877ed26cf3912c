import random

import pytest

from treenas.configtree import (
    ArchTree,
    NodeAddress,
    delete_list,
    insert_list,
    node,
    replace,
)
from treenas.decision import PlaceholderAssignment
from treenas.evaluators import SyntheticEvaluator
from treenas.feasibility import (
    Budget,
    FeasibilityReport,
    check_const,
    check_exec,
    check_intend,
    run_feasibility,
    synthetic_cost,
)
from treenas.mining import ModuleRecord, build_db
from treenas.ops import Operation, PromptCategory
from treenas.transforms import Edit, Transformation

from .conftest import make_small_tree


def make_t(op, edits, special_constraint=None, decided_module=None):
    asg = PlaceholderAssignment()
    asg.special_constraint = special_constraint
    asg.decided_module = decided_module
    return Transformation(op=op, cat=PromptCategory.MINIMUM_LLM,
                          template_id=(op, PromptCategory.MINIMUM_LLM, 0),
                          assignment=asg, edits=edits, transcript_digest="",
                          summary="test")


def addr(text):
    return NodeAddress.parse(text)


LAYER = "model.backbone.layer_cfgs"


class TestCheckExec:
    def test_small_tree_passes(self, engine_db, small_tree):
        ok, reason = check_exec(small_tree, engine_db)
        assert ok, reason

    def test_fixture_with_fixture_db_passes(self, imagenet16_text):
        from treenas.configtree import attr, parse_config
        tree = parse_config(imagenet16_text)
        records = []
        for _, name in attr(tree):
            if name in {"NAS_Backbone", "SequentialWithConfig", "ParallelWithConfig",
                        "MyReshape", "Identity"}:
                continue
            keys = set()
            for a, m in attr(tree):
                if m == name:
                    sub = tree.root
                    for seg in a.segments[1:]:
                        sub = sub[seg]
                    keys |= {k for k in sub.keys() if k != "type"}
            records.append(ModuleRecord(
                name=name, origin=f"fixture.{name}",
                params=tuple((k, "<TODO>") for k in sorted(keys)),
                forward_in_arity=1, forward_out_arity=1,
                source=f"class {name}: ..."))
        seen = set()
        unique = [r for r in records if not (r.name in seen or seen.add(r.name))]
        db = build_db(unique)
        ok, reason = check_exec(tree, db)
        assert ok, reason

    def test_unknown_type_fails(self, engine_db, small_tree):
        bad = replace(small_tree, addr(f"{LAYER}[0]"), node(type="Nope"))
        ok, reason = check_exec(bad, engine_db)
        assert not ok and "unknown module" in reason

    def test_leftover_todo_fails(self, engine_db, small_tree):
        bad = replace(small_tree, addr(f"{LAYER}[0]"),
                      node(type="ConvBlock", in_channels="<TODO>"))
        ok, reason = check_exec(bad, engine_db)
        assert not ok and "<TODO>" in reason

    def test_unknown_parameter_key_fails(self, engine_db, small_tree):
        bad = replace(small_tree, addr(f"{LAYER}[0]"),
                      node(type="ConvBlock", in_channels=3, bogus=1))
        ok, reason = check_exec(bad, engine_db)
        assert not ok and "bogus" in reason

    def test_parallel_needs_both_branches(self, engine_db, small_tree):
        bad = replace(small_tree, addr(f"{LAYER}[0]"),
                      node(type="ParallelWithConfig",
                           module_cfg1=node(type="GapNeck"), merge_operation="add"))
        ok, reason = check_exec(bad, engine_db)
        assert not ok and "module_cfg2" in reason

    def test_merge_operation_whitelist(self, engine_db, small_tree):
        bad = replace(small_tree, addr(f"{LAYER}[0]"),
                      node(type="ParallelWithConfig",
                           module_cfg1=node(type="GapNeck"),
                           module_cfg2=node(type="Identity"),
                           merge_operation="divide"))
        ok, reason = check_exec(bad, engine_db)
        assert not ok and "merge_operation" in reason

    def test_monotone_under_db_extension(self, engine_db, small_tree):
        ok, _ = check_exec(small_tree, engine_db)
        assert ok
        extra = ModuleRecord(name="Extra", origin="x.Extra", params=(),
                             forward_in_arity=1, forward_out_arity=1,
                             source="class Extra: ...")
        bigger = build_db(list(engine_db.records.values()) + [extra])
        ok2, reason = check_exec(small_tree, bigger)
        assert ok2, reason

    def test_evaluator_dry_run_consulted(self, engine_db, small_tree):
        class FailingEvaluator:
            def dry_run(self, tree):
                from treenas.evaluators import EvalResult
                return EvalResult(ok=False, reason="shape mismatch")

        ok, reason = check_exec(small_tree, engine_db, evaluator=FailingEvaluator())
        assert not ok and "shape mismatch" in reason


class TestCheckConst:
    def test_synthetic_cost_hand_computed(self):
        tree = ArchTree(node(
            type="ImageClassifier",
            backbone=node(type="NAS_Backbone", layer_cfgs=[
                node(type="ConvBlock", in_channels=3, out_channels=8,
                     kernel_size=3, stride=1, bias=False),
            ]),
            head=node(type="SplitHead", channels=8, num_classes=10),
        ))
        # Hand count: root 1; NAS_Backbone 1; ConvBlock 1+3+8+3+1=16;
        # SplitHead 1+8+10=19.  Total 37, flops 3700.
        assert synthetic_cost(tree) == (37, 3700)

    def test_ten_nodes_vs_budget_five(self):
        layers = [node(type="Identity") for _ in range(8)]
        tree = ArchTree(node(type="ImageClassifier",
                             backbone=node(type="NAS_Backbone", layer_cfgs=layers)))
        params, flops = synthetic_cost(tree)
        assert params == 10
        ok, p, _ = check_const(tree, Budget(max_params=5, max_flops=10 ** 9))
        assert not ok and p == 10

    def test_boundary_is_inclusive(self, small_tree):
        params, flops = synthetic_cost(small_tree)
        ok, _, _ = check_const(small_tree, Budget(max_params=params, max_flops=flops))
        assert ok

    def test_negative_and_huge_leaves_clamped(self):
        tree = ArchTree(node(type="ImageClassifier",
                             backbone=node(type="MyReshape", shape_hint=-5,
                                           big=10 ** 9)))
        params, _ = synthetic_cost(tree)
        assert params == 2 + 0 + 10 ** 6

    def test_evaluator_path(self, small_tree):
        ok, params, flops = check_const(small_tree,
                                        Budget(max_params=10 ** 9, max_flops=10 ** 12),
                                        evaluator=SyntheticEvaluator())
        assert ok and params == synthetic_cost(small_tree)[0]

    def test_budget_validation(self):
        with pytest.raises(ValueError):
            Budget(max_params=0, max_flops=1)


def intent_table_cases(base):
    """18 crafted (base, result, transformation) triples, all six operations."""
    if True:
        b1 = addr(f"{LAYER}[1]")
        mbconv = node(type="MBConvBlock", in_channels=16, out_channels=16,
                      expand_ratio=2, drop_path=0.0)
        cases = []

        # --- Swap ---
        cases.append(("swap/valid", True,
                      replace(base, b1, mbconv),
                      make_t(Operation.SWAP_MODULE,
                             [Edit("replace", b1.render(), "BasicBlock", "MBConvBlock")])))
        cases.append(("swap/identity-result", False,
                      base,
                      make_t(Operation.SWAP_MODULE,
                             [Edit("replace", b1.render(), "BasicBlock", "BasicBlock")])))
        off_target = replace(replace(base, b1, mbconv),
                             addr("model.head"),
                             node(type="SplitHead", channels=64, num_classes=10))
        cases.append(("swap/extra-edit-elsewhere", False,
                      off_target,
                      make_t(Operation.SWAP_MODULE,
                             [Edit("replace", b1.render(), "BasicBlock", "MBConvBlock")])))

        # --- Insert ---
        gated = node(type="GatedFuse", channels=32, gate_bias=0.5)
        inserted_at_2 = insert_list(base, b1, gated)
        cases.append(("insert/valid", True,
                      inserted_at_2,
                      make_t(Operation.INSERT_MODULE,
                             [Edit("insert", f"{LAYER}[2]", None, "GatedFuse")])))
        wrong_position = insert_list(base, addr(f"{LAYER}[3]"), gated)
        cases.append(("insert/wrong-position", False,
                      wrong_position,
                      make_t(Operation.INSERT_MODULE,
                             [Edit("insert", f"{LAYER}[2]", None, "GatedFuse")])))
        cases.append(("insert/no-growth", False,
                      replace(base, addr(f"{LAYER}[2]"), gated),
                      make_t(Operation.INSERT_MODULE,
                             [Edit("insert", f"{LAYER}[2]", None, "GatedFuse")])))

        # --- Delete ---
        cases.append(("delete/valid", True,
                      delete_list(base, addr(f"{LAYER}[4]")),
                      make_t(Operation.DELETE_MODULE,
                             [Edit("delete", f"{LAYER}[4]", "GatedFuse", None)])))
        cases.append(("delete/pair-still-present", False,
                      delete_list(base, addr(f"{LAYER}[4]")),
                      make_t(Operation.DELETE_MODULE,
                             [Edit("delete", f"{LAYER}[3]", "MBConvBlock", None)])))
        cases.append(("delete/no-shrink", False,
                      base,
                      make_t(Operation.DELETE_MODULE,
                             [Edit("delete", f"{LAYER}[4]", "GatedFuse", None)])))

        # --- Change hyperparameter ---
        tweaked = replace(base, addr(f"{LAYER}[0]"),
                          node(type="ConvBlock", in_channels=3, out_channels=24,
                               kernel_size=3, stride=1, bias=False))
        cases.append(("hparam/valid", True, tweaked,
                      make_t(Operation.CHANGE_HYPERPARAMETER,
                             [Edit("hparam", "model")])))
        cases.append(("hparam/type-changed", False,
                      replace(base, b1, mbconv),
                      make_t(Operation.CHANGE_HYPERPARAMETER,
                             [Edit("hparam", "model")])))
        cases.append(("hparam/no-change", False, base,
                      make_t(Operation.CHANGE_HYPERPARAMETER,
                             [Edit("hparam", "model")])))

        # --- Create ---
        composite = node(type="ParallelWithConfig",
                         module_cfg1=node(type="MBConvBlock", in_channels=32,
                                          out_channels=32),
                         module_cfg2=node(type="Identity"),
                         merge_operation="add", concat_dim=1)
        create_addr = addr(f"{LAYER}[3]")
        cases.append(("create/valid-with-constraint", True,
                      replace(base, create_addr, composite),
                      make_t(Operation.CREATE_MODULE,
                             [Edit("replace", create_addr.render(), "MBConvBlock",
                                   "ParallelWithConfig")],
                             special_constraint="ParallelWithConfig",
                             decided_module="MBConvBlock")))
        plain = node(type="SequentialWithConfig",
                     module_cfgs=[node(type="ConvBlock", in_channels=32,
                                       out_channels=32)])
        cases.append(("create/constraint-missing", False,
                      replace(base, create_addr, plain),
                      make_t(Operation.CREATE_MODULE,
                             [Edit("replace", create_addr.render(), "MBConvBlock",
                                   "SequentialWithConfig")],
                             special_constraint="ParallelWithConfig",
                             decided_module="MBConvBlock")))
        cases.append(("create/identical-subtree", False, base,
                      make_t(Operation.CREATE_MODULE,
                             [Edit("replace", create_addr.render(), "MBConvBlock",
                                   "MBConvBlock")])))

        # --- Repeat previous ---
        cases.append(("repeat/leaf-changed", True, tweaked,
                      make_t(Operation.REPEAT_PREVIOUS, [Edit("repeat", "model")])))
        cases.append(("repeat/identity", False, base,
                      make_t(Operation.REPEAT_PREVIOUS, [Edit("repeat", "model")])))
        cases.append(("repeat/structural-change", True,
                      delete_list(base, addr(f"{LAYER}[4]")),
                      make_t(Operation.REPEAT_PREVIOUS, [Edit("repeat", "model")])))
        return cases


class TestIntendTable:
    def test_table_has_18_cases_covering_all_operations(self):
        cases = intent_table_cases(make_small_tree())
        assert len(cases) == 18
        ops = {t.op for _, _, _, t in cases}
        assert ops == set(Operation)

    def test_each_case(self):
        base = make_small_tree()
        for name, expected, result, t in intent_table_cases(base):
            ok, reason = check_intend(base, result, t)
            assert ok is expected, f"{name}: expected {expected}, got {ok} ({reason})"


class TestRunFeasibility:
    def test_overall_is_pure_conjunction(self, engine_db, small_tree):
        report = FeasibilityReport(exec_ok=True, exec_reason="", const_ok=True,
                                   intend_ok=False, intend_reason="x")
        assert not report.overall
        report2 = FeasibilityReport(exec_ok=True, exec_reason="", const_ok=True,
                                    intend_ok=True, intend_reason="")
        assert report2.overall

    def test_closed_loop_smoke(self, engine_db, small_tree):
        from treenas.decision import fill_placeholders
        from treenas.simulate import SimulatedEndpoint
        from treenas.prompts import TEMPLATE_REGISTRY
        from treenas.transforms import apply_swap

        template = TEMPLATE_REGISTRY[(Operation.SWAP_MODULE, PromptCategory.MINIMUM_LLM)][0]
        rng = random.Random(5)
        asg = fill_placeholders(template, small_tree, engine_db, rng)
        result, t = apply_swap(small_tree, engine_db, template, asg,
                               SimulatedEndpoint(seed=11))
        report = run_feasibility(small_tree, result, t, engine_db,
                                 Budget(10 ** 9, 10 ** 12),
                                 evaluator=SyntheticEvaluator())
        assert report.overall, (report.exec_reason, report.intend_reason)
        assert report.params is not None
