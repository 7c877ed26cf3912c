"""Tree-transformation architecture search over code-mined module databases."""

from .bandit import BanditState, sample_category, sample_operation, update
from .configtree import (
    ArchNode,
    ArchTree,
    NodeAddress,
    attr,
    attr_list,
    delete_list,
    get_subtree,
    insert_list,
    node,
    parse_config,
    render_config,
    replace,
)
from .evaluators import SubprocessEvaluator, SyntheticEvaluator
from .feasibility import Budget, check_const, check_exec, check_intend, run_feasibility
from .llm import ChatTranscript, HttpEndpoint, MockEndpoint
from .mining import (
    ModuleDB,
    ModuleRecord,
    build_db,
    get_code,
    get_default,
    load_db,
    mine_source,
    retrieve_compatible,
    save_db,
)
from .ops import Operation, PromptCategory
from .search import RunConfig, checkpoint_load, checkpoint_save, run_search, sample_base
from .simulate import SimulatedEndpoint

__version__ = "0.1.0"

__all__ = [
    "ArchNode", "ArchTree", "BanditState", "Budget", "ChatTranscript",
    "HttpEndpoint", "MockEndpoint", "ModuleDB", "ModuleRecord", "NodeAddress",
    "Operation", "PromptCategory", "RunConfig", "SimulatedEndpoint",
    "SubprocessEvaluator", "SyntheticEvaluator", "attr", "attr_list", "build_db",
    "check_const", "check_exec", "check_intend", "checkpoint_load",
    "checkpoint_save", "delete_list", "get_code", "get_default", "get_subtree",
    "insert_list", "load_db", "mine_source", "node", "parse_config",
    "render_config", "replace", "retrieve_compatible", "run_feasibility",
    "run_search", "sample_base", "sample_category", "sample_operation",
    "save_db", "update",
]
