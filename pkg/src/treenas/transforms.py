"""Execute a fully sampled decision as a concrete tree transformation.

Swap and insert run two LLM turns (choice, then hyperparameters); remove asks
for the post-removal config; create and change-hyperparameter are single-turn
full generations; repeat-previous replays an improving direction.  Invalid
replies get a bounded number of corrective retries, then the trial is
abandoned as infeasible.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass

from .configtree import (
    ArchNode,
    ArchTree,
    NodeAddress,
    attr_list,
    contains_todo,
    delete_list,
    get_subtree,
    insert_list,
    render_config,
    render_value,
    replace,
)
from .decision import PlaceholderAssignment, _code_or_stub, render_name_list
from .errors import (
    EndpointTimeout,
    MalformedReply,
    NoCodeBlock,
    NoRepeatableHistory,
    TransportError,
    TrialInfeasible,
)
from .llm import ChatTranscript, LLMEndpoint, complete
from .mining import ModuleDB, get_code, get_default
from .ops import Operation, PromptCategory
from .prompts import (
    INSERT_TURN2,
    REMOVE_TURN2,
    REPEAT_BODY,
    REPEAT_INTRODUCTIONS,
    REPEAT_RESTRICTIONS,
    SUMMARY_REQUEST,
    SWAP_TURN2,
    SYSTEM_PROMPT,
    PromptTemplate,
    assemble_turn1,
    fill_template,
    parse_config_block,
    parse_structured,
)

MAX_REPLY_RETRIES = 2

_CORRECTIVE = ("Your previous reply was invalid: {reason}. "
               "Please answer again, strictly following the requested format.")


@dataclass(frozen=True)
class Edit:
    kind: str  # replace | insert | delete | hparam | repeat
    address: str
    old_type: str | None = None
    new_type: str | None = None
    subtree_digest: str | None = None

    def to_json(self) -> dict:
        return {"kind": self.kind, "address": self.address, "old_type": self.old_type,
                "new_type": self.new_type, "subtree_digest": self.subtree_digest}

    @classmethod
    def from_json(cls, d: dict) -> "Edit":
        return cls(**d)


@dataclass
class Transformation:
    op: Operation
    cat: PromptCategory
    template_id: tuple
    assignment: PlaceholderAssignment
    edits: list[Edit]
    transcript_digest: str
    summary: str

    def to_json(self) -> dict:
        return {
            "op": self.op.value,
            "cat": self.cat.value,
            "template_id": [self.template_id[0].value, self.template_id[1].value,
                            self.template_id[2]],
            "edits": [e.to_json() for e in self.edits],
            "transcript_digest": self.transcript_digest,
            "summary": self.summary,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Transformation":
        return cls(
            op=Operation(d["op"]),
            cat=PromptCategory(d["cat"]),
            template_id=(Operation(d["template_id"][0]),
                         PromptCategory(d["template_id"][1]), d["template_id"][2]),
            assignment=PlaceholderAssignment(),
            edits=[Edit.from_json(e) for e in d["edits"]],
            transcript_digest=d["transcript_digest"],
            summary=d["summary"],
        )


def _digest(value) -> str:
    return hashlib.sha256(render_value(value, 0).encode()).hexdigest()


def _complete_or_retry(transcript: ChatTranscript, llm: LLMEndpoint,
                       attempt: int, retries: int) -> str | None:
    """One completion; transport failures are retryable, so return None."""
    try:
        return complete(transcript, llm)
    except (EndpointTimeout, TransportError) as exc:
        if attempt >= retries:
            raise TrialInfeasible(f"endpoint kept failing: {exc}") from exc
        return None


def _ask_structured(transcript: ChatTranscript, llm: LLMEndpoint,
                    expected_keys: list[str], validators: dict[str, set[str]],
                    retries: int = MAX_REPLY_RETRIES):
    """Complete, parse, and validate; corrective retries then TrialInfeasible."""
    for attempt in range(retries + 1):
        reply = _complete_or_retry(transcript, llm, attempt, retries)
        if reply is None:
            continue
        try:
            parsed = parse_structured(reply, expected_keys)
        except MalformedReply as exc:
            reason = str(exc)
        else:
            bad = [key for key, allowed in validators.items()
                   if parsed.values.get(key) not in allowed]
            if not bad:
                return parsed
            reason = "; ".join(
                f"{key} must be one of {render_name_list(sorted(validators[key]))}"
                for key in bad)
        if attempt < retries:
            transcript.append("user", _CORRECTIVE.replace("{reason}", reason))
    raise TrialInfeasible(f"structured reply still invalid after {retries} retries")


def _ask_config(transcript: ChatTranscript, llm: LLMEndpoint, want_tree: bool,
                retries: int = MAX_REPLY_RETRIES, check=None):
    """Ask for a fenced config; optionally validate with ``check(parsed) -> reason``."""
    for attempt in range(retries + 1):
        reply = _complete_or_retry(transcript, llm, attempt, retries)
        if reply is None:
            continue
        reason = None
        try:
            parsed = parse_config_block(reply)
        except (NoCodeBlock, Exception) as exc:  # grammar errors included
            reason = str(exc) or exc.__class__.__name__
            parsed = None
        if parsed is not None:
            if want_tree and not isinstance(parsed, ArchTree):
                reason = "expected a full `model = dict(...)` config"
            elif not want_tree and not isinstance(parsed, (ArchTree, ArchNode)):
                reason = "expected a dict(...) sub-tree"
            else:
                reason = check(parsed) if check else None
                if reason is None:
                    return parsed
        if attempt < retries:
            transcript.append("user", _CORRECTIVE.replace("{reason}", reason))
    raise TrialInfeasible(f"config reply still invalid after {retries} retries")


def _summarize(transcript: ChatTranscript, llm: LLMEndpoint, fallback: str) -> str:
    transcript.append("user", SUMMARY_REQUEST)
    try:
        reply = complete(transcript, llm)
    except Exception:
        return fallback
    line = reply.strip().splitlines()[0].strip() if reply.strip() else ""
    return line or fallback


def _resolve_params(transcript: ChatTranscript, llm: LLMEndpoint, new_module: str,
                    defaults: dict, retries: int = MAX_REPLY_RETRIES) -> ArchNode:
    """Turn-2 parameter resolution: reply dict must keep keys and clear TODOs."""
    allowed = set(defaults)

    def check(parsed):
        node_val = parsed.root if isinstance(parsed, ArchTree) else parsed
        if not isinstance(node_val, ArchNode):
            return "expected a dict(...) of parameters"
        extra = [k for k in node_val.keys() if k not in allowed and k != "type"]
        if extra:
            return f"adding new parameters is not allowed: {', '.join(extra)}"
        merged = dict(defaults)
        merged.update({k: v for k, v in node_val.items() if k != "type"})
        if contains_todo(ArchNode(merged)):
            return 'a "<TODO>" is still present in the parameters'
        return None

    parsed = _ask_config(transcript, llm, want_tree=False, retries=retries, check=check)
    node_val = parsed.root if isinstance(parsed, ArchTree) else parsed
    entries: dict = {"type": new_module}
    merged = dict(defaults)
    merged.update({k: v for k, v in node_val.items() if k != "type"})
    entries.update(merged)
    return ArchNode(entries)


def _turn2_values(tree: ArchTree, db: ModuleDB, address: NodeAddress,
                  new_module: str) -> dict[str, str]:
    old_sub = get_subtree(tree, address)
    old_name = old_sub.module_type or "(unknown)"
    defaults = get_default(new_module, db)
    return {
        "original_module_name": old_name,
        "original_module_code": _code_or_stub([old_name], db),
        "used_parameters": render_value(old_sub, 0),
        "decided_module_name": new_module,
        "decided_module_code": get_code([new_module], db),
        "decided_module_default_param": render_value(ArchNode(defaults), 0),
    }


# ---------------------------------------------------------------------------
# Swap / Insert
# ---------------------------------------------------------------------------


def _choose_target(tree: ArchTree, template: PromptTemplate,
                   assignment: PlaceholderAssignment, llm: LLMEndpoint,
                   history_block: str, where_key: str,
                   retries: int) -> tuple[NodeAddress, str, ChatTranscript]:
    """Turn 1 (when needed): decide the address and the new module name."""
    if template.skips_llm:
        transcript = ChatTranscript()
        transcript.append("system", SYSTEM_PROMPT)
        return assignment.decided_address, assignment.new_module, transcript

    body = fill_template(template.body, assignment.values)
    transcript = assemble_turn1(render_config(tree), history_block, body)

    if template.category is PromptCategory.MINIMUM_LLM:
        parsed = _ask_structured(
            transcript, llm, ["New Module Name to Use"],
            {"New Module Name to Use": set(assignment.candidate_modules)}, retries)
        new_module = parsed.values["New Module Name to Use"]
        assignment.provenance["new_module"] = "chosen-by-llm"
        return assignment.decided_address, new_module, transcript

    allowed_addresses = {a.render() for a in assignment.candidate_addresses}
    parsed = _ask_structured(
        transcript, llm, ["New Module Name to Use", where_key],
        {"New Module Name to Use": set(assignment.candidate_modules),
         where_key: allowed_addresses}, retries)
    new_module = parsed.values["New Module Name to Use"]
    address = NodeAddress.parse(parsed.values[where_key])
    assignment.provenance["new_module"] = "chosen-by-llm"
    assignment.provenance["address"] = "chosen-by-llm"
    return address, new_module, transcript


def apply_swap(tree: ArchTree, db: ModuleDB, template: PromptTemplate,
               assignment: PlaceholderAssignment, llm: LLMEndpoint,
               history_block: str = "",
               retries: int = MAX_REPLY_RETRIES) -> tuple[ArchTree, Transformation]:
    address, new_module, transcript = _choose_target(
        tree, template, assignment, llm, history_block, "Where to be Used", retries)
    values = _turn2_values(tree, db, address, new_module)
    old_name = values["original_module_name"]
    transcript.append("user", fill_template(SWAP_TURN2, values))
    new_sub = _resolve_params(transcript, llm, new_module,
                              get_default(new_module, db), retries)
    result = replace(tree, address, new_sub)
    edit = Edit("replace", address.render(), old_name, new_module, _digest(new_sub))
    summary = f"Change {old_name} at {address.render()} into {new_module}"
    return result, Transformation(Operation.SWAP_MODULE, template.category, template.id,
                                  assignment, [edit], transcript.digest(), summary)


def apply_insert(tree: ArchTree, db: ModuleDB, template: PromptTemplate,
                 assignment: PlaceholderAssignment, llm: LLMEndpoint,
                 history_block: str = "",
                 retries: int = MAX_REPLY_RETRIES) -> tuple[ArchTree, Transformation]:
    address, new_module, transcript = _choose_target(
        tree, template, assignment, llm, history_block, "Where to be Inserted", retries)
    values = _turn2_values(tree, db, address, new_module)
    transcript.append("user", fill_template(INSERT_TURN2, values))
    new_sub = _resolve_params(transcript, llm, new_module,
                              get_default(new_module, db), retries)
    result = insert_list(tree, address, new_sub)
    inserted = address.parent.child(address.final + 1)
    edit = Edit("insert", inserted.render(), None, new_module, _digest(new_sub))
    summary = f"Insert {new_module} at {inserted.render()}"
    return result, Transformation(Operation.INSERT_MODULE, template.category, template.id,
                                  assignment, [edit], transcript.digest(), summary)


# ---------------------------------------------------------------------------
# Remove
# ---------------------------------------------------------------------------


def _surrounding(tree: ArchTree, address: NodeAddress) -> list[NodeAddress]:
    parent = get_subtree(tree, address.parent)
    found = []
    if address.final - 1 >= 0:
        found.append(address.parent.child(address.final - 1))
    if address.final + 1 < len(parent):
        found.append(address.parent.child(address.final + 1))
    return found


def apply_remove(tree: ArchTree, db: ModuleDB, template: PromptTemplate,
                 assignment: PlaceholderAssignment, llm: LLMEndpoint,
                 history_block: str = "",
                 retries: int = MAX_REPLY_RETRIES) -> tuple[ArchTree, Transformation]:
    if template.skips_llm:
        address = assignment.decided_address
        transcript = None
    else:
        body = fill_template(template.body, assignment.values)
        transcript = assemble_turn1(render_config(tree), history_block, body)
        allowed = {a.render() for a in assignment.candidate_addresses}
        parsed = _ask_structured(transcript, llm, ["Where to be Removed"],
                                 {"Where to be Removed": allowed}, retries)
        address = NodeAddress.parse(parsed.values["Where to be Removed"])
        assignment.provenance["address"] = "chosen-by-llm"

    old_sub = get_subtree(tree, address)
    old_name = old_sub.module_type or "(unknown)"
    around = _surrounding(tree, address)
    around_types = [get_subtree(tree, a).module_type or "(unknown)" for a in around]
    turn2 = fill_template(REMOVE_TURN2, {
        "decided_module_attribute": address.render(),
        "surrounding_module_attributes": render_name_list(a.render() for a in around),
        "decided_module_code": _code_or_stub([old_name], db),
        "surrounding_modules_code": _code_or_stub(around_types, db),
    })
    if transcript is None:
        # Skip variant: the removal request is the only turn, so it must carry
        # the config context the generation depends on.
        transcript = assemble_turn1(render_config(tree), history_block, turn2)
    else:
        transcript.append("user", turn2)
    result = _ask_config(transcript, llm, want_tree=True, retries=retries)
    edit = Edit("delete", address.render(), old_name, None)
    summary = f"Remove {old_name} at {address.render()}"
    return result, Transformation(Operation.DELETE_MODULE, template.category, template.id,
                                  assignment, [edit], transcript.digest(), summary)


# ---------------------------------------------------------------------------
# Create
# ---------------------------------------------------------------------------


def _collect_types(value) -> set[str]:
    out: set[str] = set()
    if isinstance(value, ArchNode):
        if value.is_module:
            out.add(value.module_type)
        for sub in value.values():
            out |= _collect_types(sub)
    elif isinstance(value, (list, tuple)):
        for item in value:
            out |= _collect_types(item)
    return out


def apply_create(tree: ArchTree, db: ModuleDB, template: PromptTemplate,
                 assignment: PlaceholderAssignment, llm: LLMEndpoint,
                 history_block: str = "",
                 retries: int = MAX_REPLY_RETRIES) -> tuple[ArchTree, Transformation]:
    body = fill_template(template.body, assignment.values)
    transcript = assemble_turn1(render_config(tree), history_block, body)

    required: set[str] = set()
    if assignment.special_constraint:
        required = {assignment.special_constraint}
        if assignment.decided_module:
            required.add(assignment.decided_module)

    def check(parsed):
        node_val = parsed.root if isinstance(parsed, ArchTree) else parsed
        if not isinstance(node_val, ArchNode) or not node_val.is_module:
            return "expected a module sub-tree dict(type=..., ...)"
        missing = required - _collect_types(node_val)
        if missing:
            return f"the sub-tree must use at least: {', '.join(sorted(missing))}"
        return None

    parsed = _ask_config(transcript, llm, want_tree=False, retries=retries, check=check)
    new_sub = parsed.root if isinstance(parsed, ArchTree) else parsed

    address = assignment.decided_address
    old_name = assignment.decided_module
    result = replace(tree, address, new_sub)
    edits = [Edit("replace", address.render(), old_name,
                  new_sub.module_type, _digest(new_sub))]
    if assignment.merge_count > 1:
        for i in range(assignment.merge_count - 1, 0, -1):
            victim = address.parent.child(address.final + i)
            removed = get_subtree(tree, victim)
            result = delete_list(result, victim)
            edits.append(Edit("delete", victim.render(), removed.module_type, None))

    fallback = f"Create a composite module at {address.render()}"
    summary = _summarize(transcript, llm, fallback)
    return result, Transformation(Operation.CREATE_MODULE, template.category, template.id,
                                  assignment, edits, transcript.digest(), summary)


# ---------------------------------------------------------------------------
# Change hyperparameter
# ---------------------------------------------------------------------------


def apply_change_hparam(tree: ArchTree, db: ModuleDB, template: PromptTemplate,
                        assignment: PlaceholderAssignment, llm: LLMEndpoint,
                        history_block: str = "",
                        retries: int = MAX_REPLY_RETRIES) -> tuple[ArchTree, Transformation]:
    transcript = assemble_turn1(render_config(tree), history_block, template.body)
    result = _ask_config(transcript, llm, want_tree=True, retries=retries)
    edit = Edit("hparam", "model", None, None,
                hashlib.sha256(render_config(result).encode()).hexdigest())
    fallback = "Adjusted hyperparameter values across the config"
    summary = _summarize(transcript, llm, fallback)
    return result, Transformation(Operation.CHANGE_HYPERPARAMETER, template.category,
                                  template.id, assignment, [edit],
                                  transcript.digest(), summary)


# ---------------------------------------------------------------------------
# Repeat previous
# ---------------------------------------------------------------------------


@dataclass
class RepeatSource:
    """An improving step on the base's lineage that can be repeated."""

    op: Operation
    summary: str
    base_tree: ArchTree      # config before the improving step
    result_tree: ArchTree    # config after the improving step
    base_metric: float
    result_metric: float
    module_new: str | None = None
    module_pre: str | None = None
    location: str | None = None


def apply_repeat(tree: ArchTree, repeatables: list[RepeatSource], db: ModuleDB,
                 llm: LLMEndpoint, rng: random.Random,
                 template: PromptTemplate | None = None,
                 retries: int = MAX_REPLY_RETRIES) -> tuple[ArchTree, Transformation]:
    if not repeatables:
        raise NoRepeatableHistory("no improving history entry applies to this base")
    source = repeatables[-1]  # most recent improving step

    intro_body = REPEAT_INTRODUCTIONS[rng.randrange(len(REPEAT_INTRODUCTIONS))]
    restrictions = REPEAT_RESTRICTIONS[source.op]
    restriction = restrictions[rng.randrange(len(restrictions))]

    listed = attr_list(tree)
    random_location = (listed[rng.randrange(len(listed))][0].render()
                       if listed else "model")
    relevant = [name for name in (source.module_new, source.module_pre) if name]
    values = {
        "pre_pre_cfg": render_config(source.base_tree),
        "pre_cfg": render_config(source.result_tree),
        "pre_transform": source.summary,
        "pre_pre_acc": f"{source.base_metric:.2f}",
        "pre_acc": f"{source.result_metric:.2f}",
        "module_new": source.module_new or "(module)",
        "module_pre": source.module_pre or "(module)",
        "location": source.location or "model",
        "random_location": random_location,
        "relevant_source_code": _code_or_stub(relevant, db) if relevant else "(none)",
    }
    values["INTRODUCTION"] = fill_template(intro_body, values)
    values["RESTRICTION"] = fill_template(restriction, values)
    prompt = fill_template(REPEAT_BODY, values)

    transcript = ChatTranscript()
    transcript.append("system", SYSTEM_PROMPT)
    transcript.append("user", prompt)
    result = _ask_config(transcript, llm, want_tree=True, retries=retries)

    assignment = PlaceholderAssignment(values={"RESTRICTION": values["RESTRICTION"]})
    edit = Edit("repeat", "model", None, None,
                hashlib.sha256(render_config(result).encode()).hexdigest())
    fallback = f"Repeat a previous improving change ({source.summary})"
    summary = _summarize(transcript, llm, fallback)
    tpl_id = template.id if template else (Operation.REPEAT_PREVIOUS,
                                           PromptCategory.MINIMUM_LLM, 0)
    return result, Transformation(Operation.REPEAT_PREVIOUS,
                                  PromptCategory.MINIMUM_LLM, tpl_id, assignment,
                                  [edit], transcript.digest(), summary)
