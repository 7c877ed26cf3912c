import random
from collections import Counter

import pytest

from treenas.configtree import ArchTree, attr, attr_list, node
from treenas.decision import (
    ADDRESS_SAMPLE,
    MODULE_SAMPLE,
    fill_placeholders,
    sample_template,
)
from treenas.errors import NoCandidates
from treenas.mining import retrieve_compatible
from treenas.ops import Operation, PromptCategory
from treenas.prompts import TEMPLATE_REGISTRY


def get_template(op, cat, index=0, **match):
    family = TEMPLATE_REGISTRY[(op, cat)]
    if match:
        family = [t for t in family
                  if all(getattr(t, k) == v for k, v in match.items())]
    return family[index]


class TestSampleTemplate:
    def test_singleton_family(self):
        rng = random.Random(0)
        t = sample_template(Operation.REPEAT_PREVIOUS, PromptCategory.MINIMUM_LLM,
                            TEMPLATE_REGISTRY, rng)
        assert t.operation is Operation.REPEAT_PREVIOUS

    def test_uniform_over_minimum_change_variants(self):
        rng = random.Random(1)
        counts = Counter(
            sample_template(Operation.CHANGE_HYPERPARAMETER, PromptCategory.MINIMUM_LLM,
                            TEMPLATE_REGISTRY, rng).index
            for _ in range(14_000))
        assert set(counts) == set(range(14))
        for index in range(14):
            assert abs(counts[index] / 14_000 - 1 / 14) < 0.015

    def test_unknown_family_errors(self):
        with pytest.raises(KeyError):
            sample_template(Operation.REPEAT_PREVIOUS, PromptCategory.RELY_LLM,
                            TEMPLATE_REGISTRY, random.Random(0))


class TestSwapPlaceholders:
    def test_minimum_precommits_pair(self, engine_db, small_tree):
        template = get_template(Operation.SWAP_MODULE, PromptCategory.MINIMUM_LLM,
                                skips_llm=False)
        rng = random.Random(3)
        asg = fill_placeholders(template, small_tree, engine_db, rng)
        pairs = {(a.render(), m) for a, m in attr(small_tree)}
        assert (asg.decided_address.render(), asg.decided_module) in pairs
        compatible = retrieve_compatible([asg.decided_module], engine_db)
        assert set(asg.candidate_modules) <= set(compatible)
        assert asg.values["decided_module_attribute"] == asg.decided_address.render()

    def test_skip_variant_precommits_module_too(self, engine_db, small_tree):
        template = get_template(Operation.SWAP_MODULE, PromptCategory.MINIMUM_LLM,
                                skips_llm=True)
        rng = random.Random(4)
        asg = fill_placeholders(template, small_tree, engine_db, rng)
        assert asg.new_module in retrieve_compatible([asg.decided_module], engine_db)

    def test_rely_sampled_addresses_subset_of_attr(self, engine_db, small_tree):
        template = get_template(Operation.SWAP_MODULE, PromptCategory.RELY_LLM,
                                uses_all_attributes=False)
        rng = random.Random(5)
        asg = fill_placeholders(template, small_tree, engine_db, rng)
        all_addresses = {a.render() for a, _ in attr(small_tree)}
        sampled = {a.render() for a in asg.candidate_addresses}
        assert sampled <= all_addresses
        assert len(sampled) == min(ADDRESS_SAMPLE, len(all_addresses))
        assert len(asg.candidate_modules) <= MODULE_SAMPLE

    def test_rely_all_addresses_variant(self, engine_db, small_tree):
        template = get_template(Operation.SWAP_MODULE, PromptCategory.RELY_LLM,
                                uses_all_attributes=True)
        asg = fill_placeholders(template, small_tree, engine_db, random.Random(6))
        assert len(asg.candidate_addresses) == len(attr(small_tree))
        assert "all_module_attributes" in asg.values


class TestInsertPlaceholders:
    def test_listless_tree_raises(self, engine_db):
        tree = ArchTree(node(type="ImageClassifier", backbone=node(type="GapNeck")))
        template = get_template(Operation.INSERT_MODULE, PromptCategory.RELY_LLM)
        with pytest.raises(NoCandidates):
            fill_placeholders(template, tree, engine_db, random.Random(0))

    def test_candidates_from_list_positions(self, engine_db, small_tree):
        template = get_template(Operation.INSERT_MODULE, PromptCategory.RELY_LLM)
        asg = fill_placeholders(template, small_tree, engine_db, random.Random(7))
        listed = {a.render() for a, _ in attr_list(small_tree)}
        assert {a.render() for a in asg.candidate_addresses} <= listed


class TestRemovePlaceholders:
    def test_skip_samples_list_position(self, engine_db, small_tree):
        template = get_template(Operation.DELETE_MODULE, PromptCategory.MINIMUM_LLM)
        assert template.skips_llm
        asg = fill_placeholders(template, small_tree, engine_db, random.Random(8))
        listed = {(a.render(), m) for a, m in attr_list(small_tree)}
        assert (asg.decided_address.render(), asg.decided_module) in listed

    def test_rely_shows_candidate_sources(self, engine_db, small_tree):
        template = get_template(Operation.DELETE_MODULE, PromptCategory.RELY_LLM)
        asg = fill_placeholders(template, small_tree, engine_db, random.Random(9))
        assert "sampled_module_attributes" in asg.values
        assert "class" in asg.values["candidate_module_codes"]


class TestCreatePlaceholders:
    def test_replace_variant(self, engine_db, small_tree):
        template = get_template(Operation.CREATE_MODULE, PromptCategory.RELY_LLM,
                                merge_variant=False, with_custom_modules=False)
        asg = fill_placeholders(template, small_tree, engine_db, random.Random(10))
        assert asg.merge_count == 0
        assert asg.decided_address is not None
        assert "pytorch_modules_dict" in asg.values
        assert "special_modules_code" in asg.values

    def test_merge_variant_addresses_consecutive(self, engine_db, small_tree):
        template = get_template(Operation.CREATE_MODULE, PromptCategory.RELY_LLM,
                                merge_variant=True, with_custom_modules=False)
        for seed in range(12):
            asg = fill_placeholders(template, small_tree, engine_db, random.Random(seed))
            assert asg.merge_count in (2, 3)
            assert len(asg.merge_addresses) == asg.merge_count
            indices = [a.final for a in asg.merge_addresses]
            assert indices == list(range(indices[0], indices[0] + asg.merge_count))
            parents = {a.parent.render() for a in asg.merge_addresses}
            assert len(parents) == 1

    def test_merge_variant_needs_consecutive_elements(self, engine_db):
        tree = ArchTree(node(type="ImageClassifier",
                             backbone=node(type="NAS_Backbone",
                                           layer_cfgs=[node(type="GapNeck")])))
        template = get_template(Operation.CREATE_MODULE, PromptCategory.RELY_LLM,
                                merge_variant=True, with_custom_modules=False)
        with pytest.raises(NoCandidates):
            fill_placeholders(template, tree, engine_db, random.Random(0))

    def test_minimum_adds_special_constraint(self, engine_db, small_tree):
        template = get_template(Operation.CREATE_MODULE, PromptCategory.MINIMUM_LLM,
                                merge_variant=False, with_custom_modules=False)
        asg = fill_placeholders(template, small_tree, engine_db, random.Random(11))
        assert asg.special_constraint in engine_db.specials
        assert asg.values["random_special_module_name"] == asg.special_constraint
        assert asg.values["original_module_name"] == asg.decided_module

    def test_custom_modules_sampled_from_db(self, engine_db, small_tree):
        template = get_template(Operation.CREATE_MODULE, PromptCategory.RELY_LLM,
                                merge_variant=False, with_custom_modules=True)
        asg = fill_placeholders(template, small_tree, engine_db, random.Random(12))
        assert 0 < len(asg.custom_modules) <= 4
        assert set(asg.custom_modules) <= set(engine_db.records)


class TestNoOpAssignments:
    def test_change_hparam_and_repeat_take_no_samples(self, engine_db, small_tree):
        for op in (Operation.CHANGE_HYPERPARAMETER, Operation.REPEAT_PREVIOUS):
            cat = (PromptCategory.RELY_LLM if op is Operation.CHANGE_HYPERPARAMETER
                   else PromptCategory.MINIMUM_LLM)
            template = TEMPLATE_REGISTRY[(op, cat)][0]
            asg = fill_placeholders(template, small_tree, engine_db, random.Random(1))
            assert asg.values == {}
