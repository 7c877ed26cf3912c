"""Hierarchical architecture trees, their config-text grammar, and structural edits.

An architecture is the value bound to the top-level name ``model`` in a config
file.  Values are plain Python data (int, float, bool, None, str, tuple, list)
plus :class:`ArchNode` for ``dict(...)`` calls.  A node is a *module node* when
it carries a string ``type`` entry.  All edits are persistent: they return new
trees and never mutate their input.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Any, Iterable, Iterator

from .errors import BadAddress, ConfigSyntaxError, DuplicateKey, NotAListPosition

log = logging.getLogger(__name__)

TODO_MARKER = "<TODO>"

ConfigValue = Any  # int | float | bool | None | str | tuple | list | ArchNode


def values_equal(a: ConfigValue, b: ConfigValue) -> bool:
    """Structural equality with strict scalar types (1 != True != 1.0)."""
    if isinstance(a, ArchNode) and isinstance(b, ArchNode):
        if list(a.keys()) != list(b.keys()):
            return False
        return all(values_equal(a[k], b[k]) for k in a.keys())
    if type(a) is not type(b):
        return False
    if isinstance(a, (list, tuple)):
        return len(a) == len(b) and all(values_equal(x, y) for x, y in zip(a, b))
    return a == b


class ArchNode:
    """Immutable ordered mapping of entry name to config value."""

    __slots__ = ("_entries",)

    def __init__(self, entries: dict[str, ConfigValue] | Iterable[tuple[str, ConfigValue]] = ()):
        self._entries: dict[str, ConfigValue] = dict(entries)

    def __getitem__(self, key: str) -> ConfigValue:
        return self._entries[key]

    def get(self, key: str, default: ConfigValue = None) -> ConfigValue:
        return self._entries.get(key, default)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def keys(self):
        return self._entries.keys()

    def items(self):
        return self._entries.items()

    def values(self):
        return self._entries.values()

    @property
    def module_type(self) -> str | None:
        t = self._entries.get("type")
        return t if isinstance(t, str) else None

    @property
    def is_module(self) -> bool:
        return self.module_type is not None

    def with_entry(self, key: str, value: ConfigValue) -> "ArchNode":
        entries = dict(self._entries)
        entries[key] = value
        return ArchNode(entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ArchNode):
            return NotImplemented
        return values_equal(self, other)

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v!r}" for k, v in self._entries.items())
        return f"ArchNode({inner})"


def node(**entries: ConfigValue) -> ArchNode:
    """Convenience constructor for tests and builders."""
    return ArchNode(entries)


class ArchTree:
    """The whole architecture: the node bound to ``model``."""

    __slots__ = ("root",)

    def __init__(self, root: ArchNode):
        if not isinstance(root, ArchNode) or not root.is_module:
            raise ValueError("tree root must be a module node (a dict with a string 'type')")
        self.root = root

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ArchTree):
            return NotImplemented
        return values_equal(self.root, other.root)

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"ArchTree({self.root!r})"


# --------------------------------------------------------------------------
# Node addresses
# --------------------------------------------------------------------------

_ADDR_TOKEN = re.compile(r"\.([A-Za-z_][A-Za-z0-9_]*)|\[(\d+)\]")


@dataclass(frozen=True)
class NodeAddress:
    """Path to a value: ``model.backbone.layer_cfgs[4].act_cfg``."""

    segments: tuple[str | int, ...]

    def __post_init__(self):
        if not self.segments or self.segments[0] != "model":
            raise BadAddress(f"address must start at 'model': {self.segments!r}")

    @classmethod
    def parse(cls, text: str) -> "NodeAddress":
        text = text.strip()
        if not text.startswith("model"):
            raise BadAddress(f"address must start at 'model': {text!r}")
        segments: list[str | int] = ["model"]
        pos = len("model")
        while pos < len(text):
            m = _ADDR_TOKEN.match(text, pos)
            if m is None:
                raise BadAddress(f"cannot parse address at offset {pos}: {text!r}")
            segments.append(m.group(1) if m.group(1) is not None else int(m.group(2)))
            pos = m.end()
        return cls(tuple(segments))

    def render(self) -> str:
        parts = ["model"]
        for seg in self.segments[1:]:
            parts.append(f"[{seg}]" if isinstance(seg, int) else f".{seg}")
        return "".join(parts)

    def __str__(self) -> str:
        return self.render()

    def child(self, segment: str | int) -> "NodeAddress":
        return NodeAddress(self.segments + (segment,))

    @property
    def parent(self) -> "NodeAddress":
        if len(self.segments) == 1:
            raise BadAddress("root address has no parent")
        return NodeAddress(self.segments[:-1])

    @property
    def final(self) -> str | int:
        return self.segments[-1]

    @property
    def is_list_position(self) -> bool:
        return isinstance(self.segments[-1], int)


ROOT_ADDRESS = NodeAddress(("model",))


# --------------------------------------------------------------------------
# Tokenizer
# --------------------------------------------------------------------------

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"[+-]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?")

_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\", "'": "'", '"': '"', "0": "\0"}


@dataclass
class _Token:
    kind: str  # IDENT NUMBER STRING ( ) [ ] , = NEWLINE EOF
    value: Any
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    i, n = 0, len(text)
    depth = 0  # bracket depth; newlines inside brackets are whitespace

    def err(msg: str, expected: str | None = None):
        raise ConfigSyntaxError(msg, line, col, expected)

    while i < n:
        ch = text[i]
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch == "\n":
            if depth == 0:
                tokens.append(_Token("NEWLINE", None, line, col))
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch in "([":
            depth += 1
            tokens.append(_Token(ch, ch, line, col))
            i += 1
            col += 1
            continue
        if ch in ")]":
            depth = max(0, depth - 1)
            tokens.append(_Token(ch, ch, line, col))
            i += 1
            col += 1
            continue
        if ch in ",=":
            tokens.append(_Token(ch, ch, line, col))
            i += 1
            col += 1
            continue
        if ch in "'\"":
            quote = ch
            start_line, start_col = line, col
            i += 1
            col += 1
            buf = []
            while True:
                if i >= n:
                    raise ConfigSyntaxError("unterminated string", start_line, start_col)
                c = text[i]
                if c == "\n":
                    raise ConfigSyntaxError("newline inside string", line, col)
                if c == "\\":
                    if i + 1 >= n:
                        raise ConfigSyntaxError("dangling escape", line, col)
                    esc = text[i + 1]
                    buf.append(_ESCAPES.get(esc, esc))
                    i += 2
                    col += 2
                    continue
                if c == quote:
                    i += 1
                    col += 1
                    break
                buf.append(c)
                i += 1
                col += 1
            tokens.append(_Token("STRING", "".join(buf), start_line, start_col))
            continue
        if ch.isdigit() or ch == "." or (ch in "+-" and i + 1 < n and (text[i + 1].isdigit() or text[i + 1] == ".")):
            m = _NUMBER_RE.match(text, i)
            if m is None:
                err(f"bad number at {ch!r}")
            raw = m.group(0)
            value = float(raw) if any(c in raw for c in ".eE") else int(raw)
            if isinstance(value, float) and (value != value or value in
                                             (float("inf"), float("-inf"))):
                err(f"number {raw!r} overflows to a non-finite float")
            tokens.append(_Token("NUMBER", value, line, col))
            col += len(raw)
            i = m.end()
            continue
        m = _IDENT_RE.match(text, i)
        if m is not None:
            tokens.append(_Token("IDENT", m.group(0), line, col))
            col += len(m.group(0))
            i = m.end()
            continue
        err(f"unexpected character {ch!r}")
    tokens.append(_Token("EOF", None, line, col))
    return tokens


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            raise ConfigSyntaxError(f"found {tok.kind}", tok.line, tok.col, expected=kind)
        return self.advance()

    def skip_newlines(self):
        while self.peek().kind == "NEWLINE":
            self.advance()

    def parse_file(self) -> dict[str, ConfigValue]:
        assigns: dict[str, ConfigValue] = {}
        self.skip_newlines()
        while self.peek().kind != "EOF":
            name_tok = self.expect("IDENT")
            self.expect("=")
            value = self.parse_expr(path=(name_tok.value,))
            if name_tok.value in assigns:
                raise DuplicateKey(name_tok.value, name_tok.value)
            assigns[name_tok.value] = value
            if self.peek().kind == "NEWLINE":
                self.advance()
            elif self.peek().kind != "EOF":
                tok = self.peek()
                raise ConfigSyntaxError(f"found {tok.kind}", tok.line, tok.col, expected="NEWLINE")
            self.skip_newlines()
        return assigns

    def parse_expr(self, path: tuple) -> ConfigValue:
        tok = self.peek()
        if tok.kind == "IDENT":
            if tok.value == "dict":
                return self.parse_dictcall(path)
            if tok.value == "True":
                self.advance()
                return True
            if tok.value == "False":
                self.advance()
                return False
            if tok.value == "None":
                self.advance()
                return None
            raise ConfigSyntaxError(
                f"unexpected identifier {tok.value!r}", tok.line, tok.col,
                expected="dict, True, False or None")
        if tok.kind == "NUMBER" or tok.kind == "STRING":
            self.advance()
            return tok.value
        if tok.kind == "[":
            return self.parse_seq("]", list, path)
        if tok.kind == "(":
            return self.parse_seq(")", tuple, path)
        raise ConfigSyntaxError(f"found {tok.kind}", tok.line, tok.col, expected="expression")

    def parse_seq(self, closing: str, factory, path: tuple):
        self.advance()  # opening bracket
        items: list[ConfigValue] = []
        while True:
            if self.peek().kind == closing:
                self.advance()
                return factory(items)
            items.append(self.parse_expr(path + (len(items),)))
            tok = self.peek()
            if tok.kind == ",":
                self.advance()
                continue
            if tok.kind == closing:
                self.advance()
                return factory(items)
            raise ConfigSyntaxError(f"found {tok.kind}", tok.line, tok.col, expected=f"',' or '{closing}'")

    def parse_dictcall(self, path: tuple) -> ArchNode:
        self.advance()  # 'dict'
        self.expect("(")
        entries: dict[str, ConfigValue] = {}
        while True:
            if self.peek().kind == ")":
                self.advance()
                return ArchNode(entries)
            key_tok = self.expect("IDENT")
            self.expect("=")
            value = self.parse_expr(path + (key_tok.value,))
            if key_tok.value in entries:
                raise DuplicateKey(_path_text(path), key_tok.value)
            entries[key_tok.value] = value
            tok = self.peek()
            if tok.kind == ",":
                self.advance()
                continue
            if tok.kind == ")":
                self.advance()
                return ArchNode(entries)
            raise ConfigSyntaxError(f"found {tok.kind}", tok.line, tok.col, expected="',' or ')'")


def _path_text(path: tuple) -> str:
    parts = [str(path[0])] if path else []
    for seg in path[1:]:
        parts.append(f"[{seg}]" if isinstance(seg, int) else f".{seg}")
    return "".join(parts)


def parse_config(text: str) -> ArchTree:
    """Parse a full config file; only the ``model`` assignment is kept."""
    assigns = _Parser(_tokenize(text)).parse_file()
    for name in assigns:
        if name != "model":
            log.warning("ignoring non-'model' top-level assignment %r", name)
    if "model" not in assigns:
        raise ConfigSyntaxError("no 'model' assignment", 1, 1, expected="model = dict(...)")
    root = assigns["model"]
    if not isinstance(root, ArchNode) or not root.is_module:
        raise ConfigSyntaxError("'model' must be a dict call with a string 'type'", 1, 1)
    return ArchTree(root)


def parse_value(text: str) -> ConfigValue:
    """Parse a bare expression (e.g. a ``dict(...)`` sub-tree)."""
    parser = _Parser(_tokenize(text))
    parser.skip_newlines()
    value = parser.parse_expr(path=("<value>",))
    parser.skip_newlines()
    tok = parser.peek()
    if tok.kind != "EOF":
        raise ConfigSyntaxError(f"trailing {tok.kind} after expression", tok.line, tok.col)
    return value


# --------------------------------------------------------------------------
# Canonical renderer
# --------------------------------------------------------------------------

_INDENT = "    "


def _render_scalar(value: ConfigValue) -> str:
    if value is None:
        return "None"
    if value is True:
        return "True"
    if value is False:
        return "False"
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace("'", "\\'").replace("\n", "\\n")
        return f"'{escaped}'"
    if isinstance(value, float):
        if value != value or value in (float("inf"), float("-inf")):
            raise ValueError("floats in config trees must be finite")
        return repr(value)
    return repr(value)


def render_value(value: ConfigValue, indent: int = 0) -> str:
    pad = _INDENT * indent
    inner = _INDENT * (indent + 1)
    if isinstance(value, ArchNode):
        if len(value) == 0:
            return "dict()"
        if len(value) == 1:
            key, sub = next(iter(value.items()))
            return f"dict({key}={render_value(sub, indent)})"
        lines = ["dict("]
        entries = list(value.items())
        for i, (key, sub) in enumerate(entries):
            tail = "," if i < len(entries) - 1 else ")"
            lines.append(f"{inner}{key}={render_value(sub, indent + 1)}{tail}")
        return "\n".join(lines)
    if isinstance(value, (list, tuple)):
        opening, closing = ("[", "]") if isinstance(value, list) else ("(", ")")
        if len(value) == 0:
            return opening + closing
        lines = [opening]
        for item in value:
            lines.append(f"{inner}{render_value(item, indent + 1)},")
        lines.append(f"{pad}{closing}")
        return "\n".join(lines)
    return _render_scalar(value)


def render_config(tree: ArchTree) -> str:
    """Deterministic canonical text; ``parse_config(render_config(t)) == t``."""
    return f"model = {render_value(tree.root, 0)}\n"


# --------------------------------------------------------------------------
# Traversal
# --------------------------------------------------------------------------


def _walk(value: ConfigValue, address: NodeAddress, out: list[tuple[NodeAddress, str]]):
    if isinstance(value, ArchNode):
        if value.is_module:
            out.append((address, value.module_type))
        for key, sub in value.items():
            _walk(sub, address.child(key), out)
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _walk(item, address.child(i), out)


def attr(tree: ArchTree) -> list[tuple[NodeAddress, str]]:
    """Every module node's (address, type), depth-first document order."""
    out: list[tuple[NodeAddress, str]] = []
    _walk(tree.root, ROOT_ADDRESS, out)
    return out


def attr_list(tree: ArchTree) -> list[tuple[NodeAddress, str]]:
    """The subset of :func:`attr` sitting directly inside list structures."""
    return [(a, m) for a, m in attr(tree) if a.is_list_position]


def get_subtree(tree: ArchTree, address: NodeAddress) -> ConfigValue:
    value: ConfigValue = tree.root
    for seg in address.segments[1:]:
        if isinstance(seg, str):
            if not isinstance(value, ArchNode) or seg not in value:
                raise BadAddress(f"no entry {seg!r} under {address.render()}")
            value = value[seg]
        else:
            if not isinstance(value, (list, tuple)) or not 0 <= seg < len(value):
                raise BadAddress(f"no index [{seg}] under {address.render()}")
            value = value[seg]
    return value


def _edited(value: ConfigValue, segments: tuple, fn) -> ConfigValue:
    """Path-copying edit: rebuild the spine, share everything else."""
    if not segments:
        return fn(value)
    seg = segments[0]
    if isinstance(seg, str):
        if not isinstance(value, ArchNode) or seg not in value:
            raise BadAddress(f"no entry {seg!r}")
        return value.with_entry(seg, _edited(value[seg], segments[1:], fn))
    if not isinstance(value, (list, tuple)) or not 0 <= seg < len(value):
        raise BadAddress(f"no index [{seg}]")
    items = list(value)
    items[seg] = _edited(items[seg], segments[1:], fn)
    return type(value)(items)


def replace(tree: ArchTree, address: NodeAddress, sub: ConfigValue) -> ArchTree:
    """Persistent replacement of the value at ``address``."""
    if len(address.segments) == 1:
        if not isinstance(sub, ArchNode) or not sub.is_module:
            raise BadAddress("root can only be replaced by a module node")
        return ArchTree(sub)
    new_root = _edited(tree.root, address.segments[1:], lambda _: sub)
    return ArchTree(new_root)


def _list_edit(tree: ArchTree, address: NodeAddress, list_fn) -> ArchTree:
    if not address.is_list_position:
        raise NotAListPosition(f"{address.render()} is not a list position")
    index = address.final
    parent_segments = address.segments[1:-1]

    def edit_parent(container: ConfigValue) -> ConfigValue:
        if not isinstance(container, list):
            raise NotAListPosition(f"{address.parent.render()} is not a list")
        if not 0 <= index < len(container):
            raise BadAddress(f"index [{index}] out of range at {address.parent.render()}")
        return list_fn(container, index)

    new_root = _edited(tree.root, parent_segments, edit_parent)
    return ArchTree(new_root)


def delete_list(tree: ArchTree, address: NodeAddress) -> ArchTree:
    """Remove the element at a list position; later siblings shift down."""
    return _list_edit(tree, address, lambda items, i: items[:i] + items[i + 1:])


def insert_list(tree: ArchTree, address: NodeAddress, sub: ConfigValue) -> ArchTree:
    """Insert ``sub`` immediately after the element at a list position."""
    return _list_edit(tree, address, lambda items, i: items[: i + 1] + [sub] + items[i + 1:])


def contains_todo(value: ConfigValue) -> bool:
    """True when the TODO marker survives anywhere in the value."""
    if isinstance(value, str):
        return value == TODO_MARKER
    if isinstance(value, ArchNode):
        return any(contains_todo(v) for v in value.values())
    if isinstance(value, (list, tuple)):
        return any(contains_todo(v) for v in value)
    return False
