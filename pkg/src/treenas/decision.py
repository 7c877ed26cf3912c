"""Template selection and rule-based placeholder sampling (the fine end of the stack).

Given a template, this stage enumerates candidate node addresses from the tree
and candidate modules from the database, then samples the restricted subsets
the prompt will show.  Minimum-reliance templates pre-commit choices here so the
LLM only resolves what genuinely needs code understanding.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .configtree import ArchTree, NodeAddress, attr, attr_list, get_subtree, render_value
from .errors import NoCandidates, UnknownModule
from .mining import ModuleDB, get_code, retrieve_compatible
from .ops import Operation, PromptCategory
from .prompts import PromptTemplate

ADDRESS_SAMPLE = 5
MODULE_SAMPLE = 8
CUSTOM_MODULE_SAMPLE = 4
PRIMITIVE_SAMPLE = 8
MERGE_COUNTS = (2, 3)

# Shown in create prompts; widely known torch layers with their init parameters.
PRIMITIVE_MODULES: dict[str, str] = {
    "Conv2d": "dict(in_channels=<TODO>, out_channels=<TODO>, kernel_size=<TODO>, stride=1, "
              "padding=0, dilation=1, groups=1, bias=True, padding_mode='zeros', "
              "device=None, dtype=None)",
    "BatchNorm2d": "dict(num_features=<TODO>, eps=1e-05, momentum=0.1, affine=True, "
                   "track_running_stats=True, device=None, dtype=None)",
    "GroupNorm": "dict(num_groups=<TODO>, num_channels=<TODO>, eps=1e-05, affine=True)",
    "LayerNorm": "dict(normalized_shape=<TODO>, eps=1e-05, elementwise_affine=True)",
    "Linear": "dict(in_features=<TODO>, out_features=<TODO>, bias=True)",
    "ReLU": "dict(inplace=False)",
    "GELU": "dict(approximate='none')",
    "SiLU": "dict(inplace=False)",
    "Sigmoid": "dict()",
    "Tanh": "dict()",
    "MaxPool2d": "dict(kernel_size=<TODO>, stride=None, padding=0)",
    "AvgPool2d": "dict(kernel_size=<TODO>, stride=None, padding=0)",
    "AdaptiveAvgPool2d": "dict(output_size=<TODO>)",
    "Dropout": "dict(p=0.5, inplace=False)",
    "Dropout2d": "dict(p=0.5, inplace=False)",
    "Upsample": "dict(size=None, scale_factor=None, mode='nearest')",
}

RULE_SAMPLED = "sampled-by-rule"
LLM_CHOSEN = "chosen-by-llm"


@dataclass
class PlaceholderAssignment:
    """Rule-sampled degrees of freedom plus the rendered prompt substitutions."""

    values: dict[str, str] = field(default_factory=dict)
    provenance: dict[str, str] = field(default_factory=dict)
    decided_address: NodeAddress | None = None
    decided_module: str | None = None
    new_module: str | None = None
    candidate_addresses: list[NodeAddress] = field(default_factory=list)
    candidate_modules: list[str] = field(default_factory=list)
    merge_addresses: list[NodeAddress] = field(default_factory=list)
    merge_count: int = 0
    special_constraint: str | None = None
    custom_modules: list[str] = field(default_factory=list)


def sample_template(op: Operation, cat: PromptCategory,
                    registry: dict[tuple[Operation, PromptCategory], list[PromptTemplate]],
                    rng: random.Random) -> PromptTemplate:
    """p3: uniform over the (operation, category) template family."""
    family = registry[(op, cat)]
    return family[rng.randrange(len(family))]


def render_name_list(names) -> str:
    return "[" + ", ".join(f"'{n}'" for n in names) + "]"


def _sample(rng: random.Random, population: list, k: int) -> list:
    return rng.sample(population, min(k, len(population)))


def _unique_names(pairs) -> list[str]:
    seen: dict[str, None] = {}
    for _, name in pairs:
        seen.setdefault(name)
    return list(seen)


def _code_or_stub(names, db: ModuleDB) -> str:
    chunks = []
    for name in names:
        try:
            chunks.append(db.lookup(name).source)
        except UnknownModule:
            chunks.append(f"# (source of {name} not in the module database)")
    return "\n\n".join(chunks)


def fill_placeholders(template: PromptTemplate, tree: ArchTree, db: ModuleDB,
                      rng: random.Random) -> PlaceholderAssignment:
    """p4: resolve the template's rule-sampled placeholders against tree and DB."""
    op, cat = template.operation, template.category
    if op is Operation.CHANGE_HYPERPARAMETER or op is Operation.REPEAT_PREVIOUS:
        return PlaceholderAssignment()
    if op is Operation.SWAP_MODULE:
        return _fill_swap(template, tree, db, rng)
    if op is Operation.INSERT_MODULE:
        return _fill_insert(template, tree, db, rng)
    if op is Operation.DELETE_MODULE:
        return _fill_remove(template, tree, db, rng)
    if op is Operation.CREATE_MODULE:
        return _fill_create(template, tree, db, rng)
    raise ValueError(f"unhandled operation {op}")


def _fill_swap(template: PromptTemplate, tree: ArchTree, db: ModuleDB,
               rng: random.Random) -> PlaceholderAssignment:
    pairs = attr(tree)
    asg = PlaceholderAssignment()
    if template.category is PromptCategory.MINIMUM_LLM:
        addr, name = pairs[rng.randrange(len(pairs))]
        modules = retrieve_compatible([name], db)
        if not modules:
            raise NoCandidates(f"no arity-compatible module for {name}")
        asg.decided_address, asg.decided_module = addr, name
        asg.provenance["decided_module_attribute"] = RULE_SAMPLED
        if template.skips_llm:
            asg.new_module = modules[rng.randrange(len(modules))]
            asg.provenance["new_module"] = RULE_SAMPLED
            return asg
        asg.candidate_modules = _sample(rng, modules, MODULE_SAMPLE)
        asg.values = {
            "decided_module_attribute": addr.render(),
            "candidate_module_codes": get_code(asg.candidate_modules, db),
            "candidate_module_names": render_name_list(asg.candidate_modules),
        }
        asg.provenance["candidate_module_names"] = RULE_SAMPLED
        return asg

    if template.uses_all_attributes:
        shown = list(pairs)
        attr_key = "all_module_attributes"
    else:
        shown = _sample(rng, pairs, ADDRESS_SAMPLE)
        attr_key = "sampled_module_attributes"
    seeds = _unique_names(shown)
    modules = retrieve_compatible(seeds, db)
    if not modules:
        raise NoCandidates("no arity-compatible swap candidates")
    asg.candidate_addresses = [a for a, _ in shown]
    asg.candidate_modules = _sample(rng, modules, MODULE_SAMPLE)
    asg.values = {
        attr_key: render_name_list(a.render() for a in asg.candidate_addresses),
        "candidate_module_codes": get_code(asg.candidate_modules, db),
        "candidate_module_names": render_name_list(asg.candidate_modules),
    }
    asg.provenance[attr_key] = RULE_SAMPLED
    asg.provenance["candidate_module_names"] = RULE_SAMPLED
    return asg


def _fill_insert(template: PromptTemplate, tree: ArchTree, db: ModuleDB,
                 rng: random.Random) -> PlaceholderAssignment:
    pairs = attr_list(tree)
    if not pairs:
        raise NoCandidates("tree has no list-structured modules to insert after")
    asg = PlaceholderAssignment()
    if template.category is PromptCategory.MINIMUM_LLM:
        addr, name = pairs[rng.randrange(len(pairs))]
        modules = retrieve_compatible([name], db)
        if not modules:
            raise NoCandidates(f"no arity-compatible module for {name}")
        asg.decided_address, asg.decided_module = addr, name
        asg.provenance["decided_module_attribute"] = RULE_SAMPLED
        if template.skips_llm:
            asg.new_module = modules[rng.randrange(len(modules))]
            asg.provenance["new_module"] = RULE_SAMPLED
            return asg
        asg.candidate_modules = _sample(rng, modules, MODULE_SAMPLE)
        asg.values = {
            "decided_module_attribute": addr.render(),
            "candidate_module_codes": get_code(asg.candidate_modules, db),
            "candidate_module_names": render_name_list(asg.candidate_modules),
        }
        return asg

    shown = _sample(rng, pairs, ADDRESS_SAMPLE)
    seeds = _unique_names(shown)
    modules = retrieve_compatible(seeds, db)
    if not modules:
        raise NoCandidates("no arity-compatible insert candidates")
    asg.candidate_addresses = [a for a, _ in shown]
    asg.candidate_modules = _sample(rng, modules, MODULE_SAMPLE)
    asg.values = {
        "sampled_module_attributes": render_name_list(a.render() for a in asg.candidate_addresses),
        "candidate_module_codes": get_code(asg.candidate_modules, db),
        "candidate_module_names": render_name_list(asg.candidate_modules),
    }
    return asg


def _fill_remove(template: PromptTemplate, tree: ArchTree, db: ModuleDB,
                 rng: random.Random) -> PlaceholderAssignment:
    pairs = attr_list(tree)
    if not pairs:
        raise NoCandidates("tree has no list-structured modules to remove")
    asg = PlaceholderAssignment()
    if template.skips_llm:
        addr, name = pairs[rng.randrange(len(pairs))]
        asg.decided_address, asg.decided_module = addr, name
        asg.provenance["decided_module_attribute"] = RULE_SAMPLED
        return asg
    shown = _sample(rng, pairs, ADDRESS_SAMPLE)
    asg.candidate_addresses = [a for a, _ in shown]
    asg.values = {
        "sampled_module_attributes": render_name_list(a.render() for a in asg.candidate_addresses),
        "candidate_module_codes": _code_or_stub(_unique_names(shown), db),
    }
    return asg


def _consecutive_runs(tree: ArchTree) -> list[tuple[NodeAddress, int]]:
    """List positions that have at least one following sibling (merge anchors)."""
    anchors = []
    for addr, _ in attr_list(tree):
        parent = get_subtree(tree, addr.parent)
        available = len(parent) - addr.final
        if available >= 2:
            anchors.append((addr, available))
    return anchors


def _fill_create(template: PromptTemplate, tree: ArchTree, db: ModuleDB,
                 rng: random.Random) -> PlaceholderAssignment:
    asg = PlaceholderAssignment()
    values: dict[str, str] = {}

    if template.merge_variant:
        anchors = _consecutive_runs(tree)
        if not anchors:
            raise NoCandidates("no consecutive list modules to merge")
        addr, available = anchors[rng.randrange(len(anchors))]
        counts = [n for n in MERGE_COUNTS if n <= available]
        n = counts[rng.randrange(len(counts))]
        asg.merge_addresses = [addr.parent.child(addr.final + i) for i in range(n)]
        asg.merge_count = n
        asg.decided_address = addr
        merged = [get_subtree(tree, a) for a in asg.merge_addresses]
        asg.decided_module = merged[0].module_type
        merged_names = list(dict.fromkeys(m.module_type for m in merged))
        values["num"] = str(n)
        values["decided_sequential_attributes"] = render_name_list(
            a.render() for a in asg.merge_addresses)
        values["original_module_code"] = _code_or_stub(merged_names, db)
        values["used_parameters"] = "\n\n".join(render_value(m, 0) for m in merged)
    else:
        pairs = attr(tree)
        addr, name = pairs[rng.randrange(len(pairs))]
        asg.decided_address, asg.decided_module = addr, name
        values["decided_module_attribute"] = addr.render()
        values["original_module_code"] = _code_or_stub([name], db)
        values["used_parameters"] = render_value(get_subtree(tree, addr), 0)

    primitives = list(PRIMITIVE_MODULES)
    if template.category in (PromptCategory.INVERSE_LLM, PromptCategory.MINIMUM_LLM):
        primitives = _sample(rng, primitives, PRIMITIVE_SAMPLE)
    values["pytorch_modules_dict"] = "\n" + "\n".join(
        f"{name}: {PRIMITIVE_MODULES[name]}" for name in primitives)

    specials = list(db.specials)
    values["special_modules_code"] = "\n" + get_code(specials, db)

    if template.with_custom_modules:
        asg.custom_modules = _sample(rng, list(db.records), CUSTOM_MODULE_SAMPLE)
        values["custom_modules_code"] = get_code(asg.custom_modules, db)

    if template.category is PromptCategory.MINIMUM_LLM:
        special = specials[rng.randrange(len(specials))]
        asg.special_constraint = special
        values["random_special_module_name"] = special
        values["original_module_name"] = asg.decided_module or ""

    asg.values = values
    asg.provenance.update({k: RULE_SAMPLED for k in values})
    return asg
