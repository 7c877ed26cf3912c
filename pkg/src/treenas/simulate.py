"""Rule-following simulated endpoint and synthetic fitness for hermetic runs.

The simulated endpoint reads the prompt it was sent, extracts the candidate
lists, parameter dicts, and configs embedded in it, and answers with a valid
reply.  Its randomness is derived from (seed, transcript digest), so replies
are a pure function of the conversation: runs replay identically across
processes and after checkpoint resume.
"""

from __future__ import annotations

import ast
import random
import re

from .configtree import (
    ArchNode,
    ArchTree,
    TODO_MARKER,
    node,
    parse_config,
    parse_value,
    render_config,
    render_value,
)
from .llm import ChatTranscript
from .prompts import SUMMARY_REQUEST

_LIST_PHRASES = {
    "modules": "YYY can be chosen from ",
    "swap_addresses": "Select ZZZ from ",
    "insert_addresses": "ZZZ can be chosen from ",
}

_CONSTRAINT_RE = re.compile(r"please use the (\S+) and (\S+) at least")
_REMOVE_AT_RE = re.compile(r"how to remove the module at (\S+)\.")


def _balanced_slice(text: str, start: int) -> str:
    """Slice from ``start`` through its balanced closing bracket (string-aware)."""
    depth = 0
    quote: str | None = None
    i = min(idx for idx in (text.find("(", start), text.find("[", start)) if idx >= 0)
    begin = start
    while i < len(text):
        ch = text[i]
        if quote:
            if ch == "\\":
                i += 2
                continue
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
            if depth == 0:
                return text[begin:i + 1]
        i += 1
    raise ValueError("unbalanced call in prompt")


def _extract_config_text(text: str) -> str | None:
    idx = text.rfind("model = dict(")
    if idx < 0:
        return None
    return _balanced_slice(text, idx)


def _fill_todos(value, filler):
    if isinstance(value, str) and value == TODO_MARKER:
        return filler()
    if isinstance(value, ArchNode):
        return ArchNode({k: _fill_todos(v, filler) for k, v in value.items()})
    if isinstance(value, (list, tuple)):
        return type(value)(_fill_todos(v, filler) for v in value)
    return value


def _mutable_leaves(value, path=()):
    """(path, key, value) triples for scalar entries safe to perturb."""
    out = []
    if isinstance(value, ArchNode):
        for k, v in value.items():
            if k in ("type", "merge_operation"):
                continue
            if isinstance(v, bool) or (isinstance(v, (int, float)) and not isinstance(v, bool)):
                out.append((path, k, v))
            else:
                out.extend(_mutable_leaves(v, path + (k,)))
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            out.extend(_mutable_leaves(v, path + (i,)))
    return out


def _set_leaf(value, path, key, new):
    if not path:
        return value.with_entry(key, new)
    seg = path[0]
    if isinstance(value, ArchNode):
        return value.with_entry(seg, _set_leaf(value[seg], path[1:], key, new))
    items = list(value)
    items[seg] = _set_leaf(items[seg], path[1:], key, new)
    return type(value)(items)


def _perturb_leaf(tree: ArchTree, rng: random.Random) -> ArchTree:
    leaves = _mutable_leaves(tree.root)
    if not leaves:
        return tree
    path, key, value = leaves[rng.randrange(len(leaves))]
    if isinstance(value, bool):
        new = not value
    elif isinstance(value, int):
        new = value + rng.choice([1, 2, 4, 8])
    else:
        new = round(value * 1.5 + 0.01, 6)
    return ArchTree(_set_leaf(tree.root, path, key, new))


def _fenced(text: str) -> str:
    return f"```python\n{text}```" if text.endswith("\n") else f"```python\n{text}\n```"


class SimulatedEndpoint:
    """Deterministic prompt-following assistant for hermetic search runs."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def _rng(self, transcript: ChatTranscript) -> random.Random:
        return random.Random(f"{self.seed}:{transcript.digest()}")

    def complete(self, transcript: ChatTranscript) -> str:
        last = transcript.messages[-1].text
        rng = self._rng(transcript)

        if last.strip() == SUMMARY_REQUEST:
            return "Applied the requested structural change to the architecture."
        if "please modify the default parameters of" in last:
            return self._turn2_params(last, rng)
        if "how to remove the module at" in last:
            return self._remove(transcript, last, rng)
        if "New Module Configuration:" in last:
            return self._create(last, rng)
        if "Where to be Removed: YYY" in last:
            return self._pick_removal(last, rng)
        if "Where to be Used: ZZZ" in last or "Where to be Inserted: ZZZ" in last:
            return self._pick_module_and_place(last, rng)
        if "New Module Name to Use: YYY" in last:
            return self._pick_module_only(last, rng)
        if "Change only hyperparameters" in last:
            return self._change_hparams(last, rng)
        if "Please provide the improved complete config." in last:
            return self._repeat(last, rng)
        return "I would proceed with a reasonable architectural refinement."

    # -- helpers -----------------------------------------------------------

    def _turn2_params(self, prompt: str, rng: random.Random) -> str:
        marker = "please modify the default parameters of"
        region = prompt[prompt.rindex(marker) + len(marker):]
        start = region.index("dict(")
        params = parse_value(_balanced_slice(region, start))
        filled = _fill_todos(params, lambda: rng.choice([4, 8, 16, 32]))
        return "Here are suitable parameters.\n" + _fenced(render_value(filled, 0))

    def _pick(self, prompt: str, which: str, rng: random.Random) -> str:
        phrase = _LIST_PHRASES[which]
        idx = prompt.rindex(phrase)
        options = ast.literal_eval(_balanced_slice(prompt, prompt.index("[", idx)))
        return options[rng.randrange(len(options))]

    def _pick_module_and_place(self, prompt: str, rng: random.Random) -> str:
        name = self._pick(prompt, "modules", rng)
        if "Where to be Inserted: ZZZ" in prompt:
            where_key, which = "Where to be Inserted", "insert_addresses"
        else:
            where_key, which = "Where to be Used", "swap_addresses"
        address = self._pick(prompt, which, rng)
        return ("##########\n"
                "Knowledge from Previous Experiments: (simulated analysis)\n"
                f"New Module Name to Use: {name}\n"
                f"{where_key}: {address}\n"
                "##########")

    def _pick_module_only(self, prompt: str, rng: random.Random) -> str:
        name = self._pick(prompt, "modules", rng)
        return ("##########\n"
                "Knowledge from Previous Experiments: (simulated analysis)\n"
                f"New Module Name to Use: {name}\n"
                "##########")

    def _pick_removal(self, prompt: str, rng: random.Random) -> str:
        address = self._pick(prompt, "modules", rng)  # YYY list holds addresses here
        return ("##########\n"
                "Knowledge from Previous Experiments: (simulated analysis)\n"
                f"Where to be Removed: {address}\n"
                "##########")

    def _remove(self, transcript: ChatTranscript, last: str, rng: random.Random) -> str:
        address = _REMOVE_AT_RE.search(last).group(1)
        config_text = None
        for msg in transcript.messages:
            if msg.role == "user" and "Please improve the config:" in msg.text:
                config_text = _extract_config_text(msg.text)
        tree = parse_config(config_text)
        from .configtree import NodeAddress, delete_list
        result = delete_list(tree, NodeAddress.parse(address))
        return "Removed as requested.\n" + _fenced(render_config(result))

    def _create(self, prompt: str, rng: random.Random) -> str:
        marker = "with the following parameters:"
        region = prompt[prompt.rindex(marker) + len(marker):]
        start = region.index("dict(")
        original = parse_value(_balanced_slice(region, start))
        constraint = _CONSTRAINT_RE.search(prompt)
        special = constraint.group(2) if constraint else "ParallelWithConfig"
        composite = self._compose(original, special)
        return ("##########\n"
                "Knowledge from Previous Experiments: (simulated analysis)\n"
                "Input and Output Shape of the Previous Module: preserved\n"
                "New Module Configuration:\n"
                + _fenced(render_value(composite, 0)) + "\n"
                "##########")

    @staticmethod
    def _compose(original: ArchNode, special: str) -> ArchNode:
        if special == "ParallelWithConfig":
            return node(type="ParallelWithConfig", module_cfg1=original,
                        module_cfg2=node(type="Identity"),
                        merge_operation="add", concat_dim=1)
        if special == "NAS_Backbone":
            return node(type="NAS_Backbone", layer_cfgs=[original])
        if special == "MyReshape":
            return node(type="SequentialWithConfig",
                        module_cfgs=[original, node(type="MyReshape", shape=[-1, 4, 4, 4])])
        if special == "Identity":
            return node(type="SequentialWithConfig",
                        module_cfgs=[original, node(type="Identity")])
        return node(type="SequentialWithConfig",
                    module_cfgs=[original, node(type="Identity")])

    def _change_hparams(self, prompt: str, rng: random.Random) -> str:
        tree = parse_config(_extract_config_text(prompt))
        changed = _perturb_leaf(tree, rng)
        return "Tuned a few values.\n" + _fenced(render_config(changed))

    def _repeat(self, prompt: str, rng: random.Random) -> str:
        tree = parse_config(_extract_config_text(prompt))
        changed = _perturb_leaf(tree, rng)
        return "Continued in the same direction.\n" + _fenced(render_config(changed))


def designated_module_count(tree: ArchTree, designated: str) -> int:
    from .configtree import attr
    return sum(1 for _, name in attr(tree) if name == designated)
