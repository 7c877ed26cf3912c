"""Prompt templates, turn assembly, and parsers for structured replies.

Template texts are organized per operation into three categories: leaning on
the LLM's own judgement (rely), pushing against it (inverse), and keeping the
LLM's role minimal (minimum).  Some minimum templates skip the first LLM turn
entirely; placeholder sampling then pre-commits every choice.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .configtree import ArchTree, ConfigValue, parse_config, parse_value
from .errors import MalformedReply, NoCodeBlock, UnresolvedPlaceholder
from .llm import ChatTranscript
from .ops import Operation, PromptCategory, REPEAT_CATEGORY

SYSTEM_PROMPT = (
    "You are a helpful assistant to create a Python-based config file of the "
    "MMPretrain. Your mission is to create an innovative model architecture which "
    "outperforms previous works. Take account the information you will be provided "
    "and create a great model config. Don't talk about dataloader, augmentation, "
    "optimizer, and learning rate. You just need to create the model config. "
    "You are not allowed to use pretrained weight."
)

TURN1_WRAPPER = """Please improve the config: {pre_cfg}

Below is a summary of previous experiments. Analyze what could improve performance and consider what to do next.

------
# Previous experiments
{HISTORY}

Tips for utilizing previous experiments:
- Reverting to previous modules/hyperparameters is not interesting because we already know the performance of the previous model. Do not do that!
- Changing the same positions repeatedly is inefficient. Extract the essence and apply it to other positions.
- We want an innovative model, so trying new things that have never been done is important.
------

{OPERATION_PROMPT}"""

EMPTY_HISTORY_SENTINEL = "(no previous experiments)"
HISTORY_WINDOW = 20

SUMMARY_REQUEST = "Please describe the transformation in short one sentence."


@dataclass(frozen=True)
class PromptTemplate:
    operation: Operation
    category: PromptCategory
    index: int
    body: str
    skips_llm: bool = False
    merge_variant: bool = False    # create: merge consecutive modules vs replace one
    with_custom_modules: bool = False  # create: show extra mined modules
    uses_all_attributes: bool = False  # swap rely: unrestricted address list

    @property
    def id(self) -> tuple[Operation, PromptCategory, int]:
        return (self.operation, self.category, self.index)

    @property
    def required_placeholders(self) -> frozenset[str]:
        return frozenset(_PLACEHOLDER_RE.findall(self.body))


_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


def fill_template(body: str, values: dict[str, str]) -> str:
    """Substitute {name} placeholders; unknown names are left intact."""
    def sub(match: re.Match) -> str:
        name = match.group(1)
        return str(values[name]) if name in values else match.group(0)
    return _PLACEHOLDER_RE.sub(sub, body)


def unresolved_placeholders(text: str) -> list[str]:
    return sorted(set(_PLACEHOLDER_RE.findall(text)))


# ---------------------------------------------------------------------------
# Change Hyperparameter
# ---------------------------------------------------------------------------

_CHANGE_BODY = (
    "This time, please improve the model's performance by {GUIDANCE}. Change only "
    "hyperparameters. Do not add additional hyperparameters. Just change the values "
    "of existing hyperparameters. Also, do not change the architecture or modules. "
    "In other words, do not change the value of each \"type\". "
    "Please provide a fully modified model config."
)

_CHANGE_GUIDANCE = {
    PromptCategory.RELY_LLM: [
        "changing a few hyperparameters in the config",
        "changing some important hyperparameters in the config",
        "changing hyperparameters that are likely to affect model performance",
        "modifying hyperparameters which you think weird in the config",
    ],
    PromptCategory.INVERSE_LLM: [
        "changing hyperparameters that have not been changed until now",
        "changing hyperparameters to values not tried before",
        "changing hyperparameters to unexpected values",
    ],
    PromptCategory.MINIMUM_LLM: [
        "slightly increasing the channel width of some layers",
        "slightly decreasing the channel width of some layers",
        "slightly increasing the channel width of the initial layers",
        "slightly decreasing the channel width of the initial layers",
        "slightly increasing the channel width of the middle layers",
        "slightly decreasing the channel width of the middle layers",
        "slightly increasing the channel width of the final layers",
        "slightly decreasing the channel width of the final layers",
        "changing some boolean hyperparameters in the config",
        "changing some float hyperparameters in the config",
        "changing some integer hyperparameters in the config",
        "changing some string hyperparameters in the config",
        "changing the receptive field of some layers",
        "changing the stride of some layers",
    ],
}

# ---------------------------------------------------------------------------
# Swap Module
# ---------------------------------------------------------------------------

_SWAP_RELY_BODY = """This time, let's try to improve the model's performance by using one of the following modules:
{candidate_module_codes}
Analyze the source codes, especially how they work and what the input and output tensor shapes are, to replace previous modules. Then, which module should be used and where should it be replaced in the original config?
I will ask later about the appropriate hyperparameters, so please answer in the following format.
##########
Knowledge from Previous Experiments: XXX
{GUIDANCE} (More Improvement Needed Positions): XXX
Pros and Cons of the New Candidate Modules: XXX
Input and Output Shape Compatibility of the New Candidate Modules against Previous Modules: XXX
New Module Name to Use: YYY
Where to be Used: ZZZ
##########
Fill XXX based on your analysis.
YYY can be chosen from {candidate_module_names}.
Select ZZZ from {CANDIDATE_ATTRIBUTES}."""

_SWAP_GUIDANCE = ["Positions with Some Issues", "Positions Previously Not Changed Much"]
_SWAP_ATTRIBUTE_SOURCES = ["{all_module_attributes}", "{sampled_module_attributes}"]

_SWAP_INVERSE_BODIES = [
    """This time, let's try to improve the model's performance by using one of the following modules:
{candidate_module_codes},
but I want to try an unexpected module this time.
Analyze the source codes, especially how they work and what the input and output tensor shapes are, to replace previous modules.
Then, which module should be used and where should it be replaced in the original config?
I will ask later about the appropriate hyperparameters, so please answer in the following format.
##########
Knowledge from Previous Experiments: XXX
Positions Previously Not Changed Much (More Improvement Needed Positions): XXX
New Candidate Modules which seems Nobody will Tried (This time, I want to try novel changes): XXX
Input and Output Shape Compatibility of the New Candidate Modules against Previous Modules: XXX
New Module Name to Use: YYY
Where to be Used: ZZZ
##########
Fill XXX based on your analysis.
YYY can be chosen from {candidate_module_names}.
Select ZZZ from {sampled_module_attributes}.""",
    """This time, let's try to improve the model's performance by using one of the following modules:
{candidate_module_codes}
Analyze the source codes, especially how they work and what the input and output tensor shapes are, to replace previous modules.
Then, which module should be used and where should it be replaced in the original config?
I will ask later about the appropriate hyperparameters, so please answer in the following format.
##########
Knowledge from Previous Experiments: XXX
Positions where Nobody will tried (This time, I want to try novel changes): XXX
Pros and Cons of the New Candidate Modules: XXX
Input and Output Shape Compatibility of the New Candidate Modules against Previous Modules: XXX
New Module Name to Use: YYY
Where to be Used: ZZZ
##########
Fill XXX based on your analysis.
YYY can be chosen from {candidate_module_names}.
Select ZZZ from {sampled_module_attributes}.""",
]

_SWAP_MINIMUM_BODY = """This time, let's try to improve the model's performance by replacing the module in {decided_module_attribute} with one of the following modules:
{candidate_module_codes}
Analyze the source codes, especially about how they work and what are the input and output tensor shapes to replace with the previous module.
Then, answer which module should be used.
I'll ask later about the adequate hyperparameters, so please answer in the following format.
##########
Knowledge from Previous Experiments: XXX
Pros and Cons of the New Candidate Modules: XXX
Input and Output Shape Compatibility of the New Candidate Modules against Previous Modules: XXX
New Module Name to Use: YYY
##########
Fill XXX based on your analysis.
YYY can be chosen from {candidate_module_names}."""

SWAP_TURN2 = """Now, I want to ask how to replace. The original module, {original_module_name}, is
{original_module_code},
and the used parameters of __init__ function are
{used_parameters}.
The new module, {decided_module_name}, is
{decided_module_code},
and the default parameters of __init__ function are
{decided_module_default_param}.
To replace the original module with the new module, modifications to the default parameters are needed to ensure the input and output tensor shapes match those of the original module.
If there is a "<TODO>" in the default parameters, it must be replaced with an appropriate parameter. Moreover, further modification of the default parameters might be desired to improve the performance. However, adding new parameters (keys of the dict) are not allowed.
Considering above, please modify the default parameters of
{decided_module_default_param}.
Note that you need to modify the values of the dict and don't need to modify the keys of the dict."""

# ---------------------------------------------------------------------------
# Insert Module
# ---------------------------------------------------------------------------

_INSERT_RELY_BODIES = [
    """This time, let's try to improve the model's performance by inserting an additional module after on of the following positions: {sampled_module_attributes}. We can use one of the following modules:
{candidate_module_codes}
Analyze the source codes, especially about how they work and what are the input and output tensor shapes. Then, answer which module should be used and where it should be inserted. I'll ask later about the adequate hyperparameters, so please answer in the following format.
##########
Knowledge from Previous Experiments: XXX
Positions Previously Not Inserted Much (More Improvement Might be Possible): XXX
Pros and Cons of the Candidate Modules: XXX
Analysis of the Candidate Inserting Positions: XXX
Input and Output Shape Compatibility of the Candidate Modules to Insert: XXX
New Module Name to Use: YYY
Where to be Inserted: ZZZ
##########
Fill XXX based on your analysis.
YYY can be chosen from {candidate_module_names}.
ZZZ can be chosen from {sampled_module_attributes}.""",
    """This time, let's try to improve the model's performance by inserting an additional module after on of the following positions: {sampled_module_attributes}. We can use one of the following modules:
{candidate_module_codes}
Analyze the source codes, especially about how they work and what are the input and output tensor shapes. Then, answer which module should be used and where it should be inserted. I'll ask later about the adequate hyperparameters, so please answer in the following format.
##########
Knowledge from Previous Experiments: XXX
Pros and Cons of the Candidate Modules: XXX
Positions Previously Not Inserted Much (More Improvement Might be Possible): XXX
Analysis about Where Lacks the Expressiveness: XXX
Input and Output Shape Compatibility of the Candidate Modules to Insert: XXX
New Module Name to Use: YYY
Where to be Inserted: ZZZ
##########
Fill XXX based on your analysis.
YYY can be chosen from {candidate_module_names}.
ZZZ can be chosen from {sampled_module_attributes}.""",
]

_INSERT_INVERSE_BODIES = [
    """This time, let's try to improve the model's performance by inserting an additional module after on of the following positions: {sampled_module_attributes}. We can use one of the following modules:
{candidate_module_codes},
but I want to try an unexpected module this time.
Analyze the source codes, especially about how they work and what are the input and output tensor shapes. Then, answer which module should be used and where it should be inserted. I'll ask later about the adequate hyperparameters, so please answer in the following format.
##########
Knowledge from Previous Experiments: XXX
Positions Previously Not Inserted Much (More Improvement Might be Possible): XXX
New Candidate Modules which Seems Nobody will Tried (This time, I want to try novel changes): XXX
Analysis of the Candidate Inserting Positions: XXX
Input and Output Shape Compatibility of the Candidate Modules to Insert: XXX
New Module Name to Use: YYY
Where to be Inserted: ZZZ
##########
Fill XXX based on your analysis.
YYY can be chosen from {candidate_module_names}.
ZZZ can be chosen from {sampled_module_attributes}.""",
    """This time, let's try to improve the model's performance by inserting an additional module after on of the following positions: {sampled_module_attributes}, especially focusing on novel changes. We can use one of the following modules:
{candidate_module_codes}
Analyze the source codes, especially about how they work and what are the input and output tensor shapes. Then, answer which module should be used and where it should be inserted. I'll ask later about the adequate hyperparameters, so please answer in the following format.
##########
Knowledge from Previous Experiments: XXX
Pros and Cons of the Candidate Modules: XXX
Positions where Nobody will Insert (This time, I want to try novel changes): XXX
Input and Output Shape Compatibility of the Candidate Modules to Insert: XXX
New Module Name to Use: YYY
Where to be Inserted: ZZZ
##########
Fill XXX based on your analysis.
YYY can be chosen from {candidate_module_names}.
ZZZ can be chosen from {sampled_module_attributes}.""",
]

_INSERT_MINIMUM_BODY = """This time, let's try to improve the model's performance by inserting an additional module after {decided_module_attribute}. We can use one of the following modules:
{candidate_module_codes}
Analyze the source codes, especially about how they work and what are the input and output tensor shapes to insert after {decided_module_attribute}. Then, answer which module should be used. I'll ask later about the adequate hyperparameters, so please answer in the following format.
##########
Knowledge from Previous Experiments: XXX
Pros and Cons of the Candidate Modules: XXX
Input and Output Shape Compatibility of the Candidate Modules to Insert After {decided_module_attribute}: XXX
New Module Name to Use: YYY
##########
Fill XXX based on your analysis.
YYY can be chosen from {candidate_module_names}."""

INSERT_TURN2 = """Now, I want to ask how to insert it. The previous module, {original_module_name}, is
{original_module_code},
and the used parameters of __init__ function are
{used_parameters}.
The new module, {decided_module_name}, is
{decided_module_code},
and the default parameters of __init__ function are
{decided_module_default_param}.
To insert it, modifications to the default parameters are needed to ensure both the input and output tensor shapes of the inserting module match the the output tensor shapes of the previous module.
If there is a "<TODO>" in the default parameters, it must be replaced with an appropriate parameter. Moreover, further modification of the default parameters might be desired to improve the performance. However, adding new parameters (keys of the dict) are not allowed.
Considering above, please modify the default parameters of
{decided_module_default_param}.
Note that you need to modify the values of the dict and don't need to modify the keys of the dict."""

# ---------------------------------------------------------------------------
# Remove Module
# ---------------------------------------------------------------------------

_REMOVE_RELY_BODIES = [
    """This time, let's try to improve the model's performance by removing a module from {sampled_module_attributes}. The source codes of the modules are as follows:
{candidate_module_codes}
Analyze the source codes. Then, answer which module should be removed. I'll ask later about the adequate hyperparameters, so please answer in the following format.
##########
Knowledge from Previous Experiments: XXX
Positions Previously Not Removed Much (More Improvement Might be Possible): XXX
Positions Where You Think Weird: XXX
Where to be Removed: YYY
##########
Fill XXX based on your analysis.
YYY can be chosen from {sampled_module_attributes}.""",
    """This time, let's try to improve the model's efficiency by removing a module from {sampled_module_attributes}. The source codes of the modules are as follows:
{candidate_module_codes}
Analyze the source codes. Then, answer which module should be removed. I'll ask later about the adequate hyperparameters, so please answer in the following format.
##########
Knowledge from Previous Experiments: XXX
Positions Previously Not Removed Much (More Improvement Might be Possible): XXX
Where to be Removed: YYY
##########
Fill XXX based on your analysis.
YYY can be chosen from {sampled_module_attributes}.""",
]

_REMOVE_INVERSE_BODIES = [
    """This time, let's try to improve the model's performance by removing a module from {sampled_module_attributes}, especially focusing on unexpected positions. The source codes of the modules are as follows:
{candidate_module_codes}
Analyze the source codes. Then, answer which module should be removed. I'll ask later about the adequate hyperparameters, so please answer in the following format.
##########
Knowledge from Previous Experiments: XXX
Positions where Nobody will Remove (This time, I want to try novel changes): XXX
Where to be Removed: YYY
##########
Fill XXX based on your analysis.
YYY can be chosen from {sampled_module_attributes}.""",
    """This time, let's try to improve the model's efficiency by removing a module from {sampled_module_attributes}, especially focusing on novel changes. The source codes of the modules are as follows:
{candidate_module_codes}
Analyze the source codes. Then, answer which module should be removed. I'll ask later about the adequate hyperparameters, so please answer in the following format.
##########
Knowledge from Previous Experiments: XXX
Positions where You think Important (This time, I want to try novel changes): XXX
Where to be Removed: YYY
##########
Fill XXX based on your analysis.
YYY can be chosen from {sampled_module_attributes}.""",
]

REMOVE_TURN2 = """Now, I want to ask how to remove the module at {decided_module_attribute}. I want you to create a config without this module. You might need to modify hyperparameters for surrounding modules at {surrounding_module_attributes} to make the model work well without the removed module.
First, refer to the following source codes of relevant modules:
{decided_module_code}
{surrounding_modules_code}
Then, please provide the complete model config after removing the module at {decided_module_attribute} and modifying hyperparameters of surrounding modules as needed."""

# ---------------------------------------------------------------------------
# Create Module
# ---------------------------------------------------------------------------

_CREATE_EXAMPLE = """```python
dict(type='ParallelWithConfig',
    module_cfg1=dict(
        type='SequentialWithConfig',
        module_cfgs=[
            dict(type='Conv2d', in_channels=32, out_channels=64,
                kernel_size=1, stride=1, padding=0, dilation=1, groups=1,
                bias=True, padding_mode='zeros', device=None, dtype=None),
            dict(type='GELU', approximate='tanh'),
            dict(type='Conv2d', in_channels=64, out_channels=32,
                kernel_size=3, stride=1, padding=0, dilation=1, groups=1,
                bias=True, padding_mode='zeros', device=None, dtype=None),
            dict(type='Sigmoid')
        ]
    ),
    module_cfg2=dict(type='Identity'),
    merge_operation='mul',
)
```"""

_CREATE_HOW_AND_WHERE = [
    "replacing {decided_module_attribute} with",
    "merging {num} modules at {decided_sequential_attributes} into",
]

_CREATE_CUSTOM_MODULES = [
    "Original module:{original_module_code}",
    "Original modules and Custom modules:{original_module_code}\n{custom_modules_code}",
]

_CREATE_EXTRAS = {
    PromptCategory.RELY_LLM: "",
    PromptCategory.INVERSE_LLM: (
        "I expect you to create a novel module configuration that nobody has tried "
        "before, so please try to combine the modules in a unique way.\n"),
    PromptCategory.MINIMUM_LLM: (
        "This time, please use the {original_module_name} and "
        "{random_special_module_name} at least.\n"
        "Creating a module which previously not tried is important.\n"),
}

_CREATE_SHAPE_LINE = {
    PromptCategory.RELY_LLM: "Input and Output Shape of the Previous Module(s): XXX",
    PromptCategory.INVERSE_LLM: "Input and Output Shape of the Previous Module: XXX",
    PromptCategory.MINIMUM_LLM: "Input and Output Shape of the Previous Module: XXX",
}


def _create_body(category: PromptCategory, how_and_where: str, custom: str) -> str:
    return f"""This time, let's try to improve the model's performance by {how_and_where} a new module created by combining some of the following modules:
PyTorch modules (I only show the __init__ parameters since you know well):{{pytorch_modules_dict}}
{custom}
Special modules which flexibly combine these modules with config dictionaries:{{special_modules_code}}
For example, you can create a module like as follows:
{_CREATE_EXAMPLE}
Note that we have to make the input and output tensor shapes compatible with the previous module(s) with the following parameters:{{used_parameters}}
{_CREATE_EXTRAS[category]}Please answer in the following format.
##########
Knowledge from Previous Experiments: XXX
{_CREATE_SHAPE_LINE[category]}
New Module Configuration:
```python
XXX
```
##########
Fill XXX based on your analysis."""

# ---------------------------------------------------------------------------
# Repeat Previous
# ---------------------------------------------------------------------------

REPEAT_INTRODUCTIONS = [
    "From the previous config:  {pre_pre_cfg} we created a following config:  {pre_cfg} by \"{pre_transform}\". Then, the accuracy was improved from {pre_pre_acc}% to {pre_acc}%.",
    "The previous config was  {pre_pre_cfg}. By \"{pre_transform}\", we successfully achieved better accuracy with the following config:  {pre_cfg}.",
    "The previous config was  {pre_pre_cfg}. From this config, performance is improved by \"{pre_transform}\". The config is  {pre_cfg}.",
    "The previous config (Accuracy: {pre_pre_acc}%) was  {pre_pre_cfg}. From this config, we improved the accuracy to {pre_acc}% by \"{pre_transform}\". The improved config is  {pre_cfg}.",
    "The config:  {pre_cfg} is created from the previous config:  {pre_pre_cfg} by \"{pre_transform}\", resulting in an accuracy improvement from {pre_pre_acc}% to {pre_acc}%.",
    "By \"{pre_transform}\", we successfully created a better config:  {pre_cfg}.",
    "The config:  {pre_cfg} is created by \"{pre_transform}\".",
]

REPEAT_RESTRICTIONS: dict[Operation, list[str]] = {
    Operation.CHANGE_HYPERPARAMETER: [
        "extracting the essence and refining it",
        "extracting the essence and improving the new config furthermore",
        "making the same change but with a slightly larger magnitude",
        "slightly increasing the strength of the change",
        "slightly increasing the strength of the change in the same positions",
        "applying the same or similar changes to other hyperparameters in the same modules",
        "applying the same or similar changes to other hyperparameters in the surrounding modules",
        "applying the same or similar changes to other hyperparameters in the far away modules",
        "applying the same or similar changes to other hyperparameters in one different module",
    ],
    Operation.SWAP_MODULE: [
        "extracting the essence and improving the new config furthermore",
        "replacing one or two other positions into {module_new}",
        "replacing a module around {location} into {module_new}",
        "replacing a module in the far away positions from {location} into {module_new}",
    ],
    Operation.INSERT_MODULE: [
        "extracting the essence and improving the new config furthermore",
        "inserting one more {module_new} before the {location}",
        "inserting one more {module_new} after the {location}",
        "inserting one more {module_new} in a far away position from {location}",
        "inserting one more {module_new} at {random_location}",
    ],
    Operation.DELETE_MODULE: [
        "extracting the essence and improving the new config furthermore",
        "removing a module at {location} from the new config",
        "removing a module at {location} from the new config",
        "removing a module working similar to {module_pre}",
        "removing a similar module to {module_pre} around {location}",
        "removing a similar module to {module_pre} far away from {location}",
    ],
    Operation.CREATE_MODULE: [
        "extracting the essence and improving the new config furthermore",
        "doing something similar to the new config",
        "making a further change in the same direction to the new config",
    ],
    Operation.REPEAT_PREVIOUS: [
        "extracting the essence and improving the new config furthermore",
        "doing something similar to the new config",
        "making a further change in the same direction to the new config",
    ],
}

REPEAT_BODY = """{INTRODUCTION}
I think the change, "{pre_transform}", is a good idea. So, this time, I want you to further improve the performance by {RESTRICTION}.
You can refer the source code of relevant modules below: {relevant_source_code}
Please provide the improved complete config."""


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


def build_template_registry() -> dict[tuple[Operation, PromptCategory], list[PromptTemplate]]:
    registry: dict[tuple[Operation, PromptCategory], list[PromptTemplate]] = {}

    def add(op, cat, body, **flags):
        entries = registry.setdefault((op, cat), [])
        entries.append(PromptTemplate(op, cat, len(entries), body, **flags))

    for cat, guidances in _CHANGE_GUIDANCE.items():
        for guidance in guidances:
            add(Operation.CHANGE_HYPERPARAMETER, cat,
                fill_template(_CHANGE_BODY, {"GUIDANCE": guidance}))

    for guidance in _SWAP_GUIDANCE:
        for attr_source in _SWAP_ATTRIBUTE_SOURCES:
            body = fill_template(_SWAP_RELY_BODY,
                                 {"GUIDANCE": guidance, "CANDIDATE_ATTRIBUTES": attr_source})
            add(Operation.SWAP_MODULE, PromptCategory.RELY_LLM, body,
                uses_all_attributes=(attr_source == "{all_module_attributes}"))
    for body in _SWAP_INVERSE_BODIES:
        add(Operation.SWAP_MODULE, PromptCategory.INVERSE_LLM, body)
    add(Operation.SWAP_MODULE, PromptCategory.MINIMUM_LLM, _SWAP_MINIMUM_BODY)
    add(Operation.SWAP_MODULE, PromptCategory.MINIMUM_LLM, "", skips_llm=True)

    for body in _INSERT_RELY_BODIES:
        add(Operation.INSERT_MODULE, PromptCategory.RELY_LLM, body)
    for body in _INSERT_INVERSE_BODIES:
        add(Operation.INSERT_MODULE, PromptCategory.INVERSE_LLM, body)
    add(Operation.INSERT_MODULE, PromptCategory.MINIMUM_LLM, _INSERT_MINIMUM_BODY)
    add(Operation.INSERT_MODULE, PromptCategory.MINIMUM_LLM, "", skips_llm=True)

    for body in _REMOVE_RELY_BODIES:
        add(Operation.DELETE_MODULE, PromptCategory.RELY_LLM, body)
    for body in _REMOVE_INVERSE_BODIES:
        add(Operation.DELETE_MODULE, PromptCategory.INVERSE_LLM, body)
    add(Operation.DELETE_MODULE, PromptCategory.MINIMUM_LLM, "", skips_llm=True)

    for cat in PromptCategory:
        for how in _CREATE_HOW_AND_WHERE:
            for custom in _CREATE_CUSTOM_MODULES:
                add(Operation.CREATE_MODULE, cat, _create_body(cat, how, custom),
                    merge_variant=("merging" in how),
                    with_custom_modules=("Custom modules" in custom))

    add(Operation.REPEAT_PREVIOUS, REPEAT_CATEGORY, REPEAT_BODY)
    return registry


TEMPLATE_REGISTRY = build_template_registry()


# ---------------------------------------------------------------------------
# Turn assembly
# ---------------------------------------------------------------------------


def render_history_block(entries: list[tuple[str, bool]],
                         limit: int = HISTORY_WINDOW) -> str:
    """Render (summary, improved) pairs; most recent ``limit``, newest last."""
    entries = entries[-limit:]
    if not entries:
        return ""
    lines = ["------"]
    for summary, improved in entries:
        lines.append(f"Changes: {summary}")
        lines.append(f"Performance: {'Improved' if improved else 'Deteriorated'}")
        lines.append("------")
    return "\n".join(lines)


def assemble_turn1(base_text: str, history_block: str, template_filled: str) -> ChatTranscript:
    """Build the system + first-user-turn transcript."""
    leftover = unresolved_placeholders(template_filled)
    if leftover:
        raise UnresolvedPlaceholder(leftover[0])
    history = history_block if history_block else EMPTY_HISTORY_SENTINEL
    turn1 = TURN1_WRAPPER.replace("{pre_cfg}", base_text) \
                         .replace("{HISTORY}", history) \
                         .replace("{OPERATION_PROMPT}", template_filled)
    transcript = ChatTranscript()
    transcript.append("system", SYSTEM_PROMPT)
    transcript.append("user", turn1)
    return transcript


# ---------------------------------------------------------------------------
# Reply parsing
# ---------------------------------------------------------------------------

_FENCE_LINE = "##########"
_CODE_BLOCK_RE = re.compile(r"```(?:[A-Za-z0-9_+-]*)\n(.*?)```", re.DOTALL)


@dataclass
class StructuredReply:
    values: dict[str, str] = field(default_factory=dict)
    config_block: str | None = None


def parse_structured(reply: str, expected_keys: list[str]) -> StructuredReply:
    """Extract key/value lines from the last ##########-fenced block."""
    lines = reply.splitlines()
    fence_rows = [i for i, line in enumerate(lines) if line.strip() == _FENCE_LINE]
    if len(fence_rows) < 2:
        raise MalformedReply(reason="reply has no ########## block")
    start, end = fence_rows[-2], fence_rows[-1]
    block = "\n".join(lines[start + 1:end])

    values: dict[str, str] = {}
    missing: list[str] = []
    for key in expected_keys:
        pattern = re.compile(rf"^\s*{re.escape(key)}\s*:\s*(.*)$", re.MULTILINE)
        m = pattern.search(block)
        if m is None:
            missing.append(key)
        else:
            values[key] = m.group(1).strip()
    if missing:
        raise MalformedReply(missing_keys=missing)

    code = _CODE_BLOCK_RE.findall(block)
    return StructuredReply(values=values, config_block=code[-1].strip() if code else None)


def parse_config_block(reply: str) -> ArchTree | ConfigValue:
    """Parse the last fenced code block as a full config or a bare sub-tree."""
    blocks = _CODE_BLOCK_RE.findall(reply)
    if not blocks:
        raise NoCodeBlock("reply has no fenced code block")
    text = blocks[-1].strip()
    if re.match(r"^\s*model\s*=", text):
        return parse_config(text)
    return parse_value(text)
