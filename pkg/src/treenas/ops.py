"""Operation and prompt-category enums shared across the decision stack."""

from enum import Enum


class Operation(Enum):
    """Tree transformation operations; REPEAT_PREVIOUS is meta-level."""

    CHANGE_HYPERPARAMETER = "change_hyperparameter"
    SWAP_MODULE = "swap_module"
    INSERT_MODULE = "insert_module"
    DELETE_MODULE = "delete_module"
    CREATE_MODULE = "create_module"
    REPEAT_PREVIOUS = "repeat_previous"


# Fixed order used for uniform sampling and argmax tie-breaking.
OPERATION_ORDER = tuple(Operation)

BASIC_OPERATIONS = tuple(op for op in Operation if op is not Operation.REPEAT_PREVIOUS)


class PromptCategory(Enum):
    """How much of the decision is delegated to the LLM."""

    RELY_LLM = "rely_llm"
    INVERSE_LLM = "inverse_llm"
    MINIMUM_LLM = "minimum_llm"


CATEGORY_ORDER = tuple(PromptCategory)

# The meta-level operation keeps a single degenerate category arm.
REPEAT_CATEGORY = PromptCategory.MINIMUM_LLM
