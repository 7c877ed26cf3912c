"""Static mining of network-module classes into a searchable module database.

Source files are parsed, never executed.  A class is recognized as a module
when one of its base names is in the configured base-name set or when it
transitively inherits (within the same file) from such a class.  Records are
self-contained: only the class's own ``__init__`` and ``forward`` contribute
parameters and arity, so every record's source snippet re-mines to itself.
"""

from __future__ import annotations

import ast
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .configtree import TODO_MARKER, ConfigValue, parse_value, render_value
from .errors import ParseError, UnknownModule

log = logging.getLogger(__name__)

DEFAULT_BASE_NAMES = frozenset({"Module", "nn.Module", "torch.nn.Module", "BaseModule"})


@dataclass(frozen=True)
class ModuleRecord:
    """One mined building block: its tunable parameters and metadata."""

    name: str
    origin: str
    params: tuple[tuple[str, ConfigValue], ...]
    forward_in_arity: int
    forward_out_arity: int
    source: str

    def __post_init__(self):
        seen = set()
        for pname, _ in self.params:
            if not pname.isidentifier():
                raise ValueError(f"invalid parameter name {pname!r} in {self.name}")
            if pname in seen:
                raise ValueError(f"duplicate parameter {pname!r} in {self.name}")
            seen.add(pname)
        if self.forward_in_arity < 0 or self.forward_out_arity < 1:
            raise ValueError(f"bad forward arity on {self.name}")

    @property
    def arity(self) -> tuple[int, int]:
        return (self.forward_in_arity, self.forward_out_arity)


# --------------------------------------------------------------------------
# Source analysis
# --------------------------------------------------------------------------


def _dotted_name(expr: ast.expr) -> str | None:
    if isinstance(expr, ast.Subscript):  # Generic[...] bases
        return _dotted_name(expr.value)
    if isinstance(expr, ast.Name):
        return expr.id
    if isinstance(expr, ast.Attribute):
        prefix = _dotted_name(expr.value)
        return f"{prefix}.{expr.attr}" if prefix else None
    return None


def _literal_default(expr: ast.expr) -> ConfigValue:
    """Literal defaults survive; anything else becomes the TODO marker."""
    if isinstance(expr, ast.Constant) and isinstance(expr.value, (int, float, str, bool, type(None))):
        return expr.value
    if isinstance(expr, ast.UnaryOp) and isinstance(expr.op, (ast.USub, ast.UAdd)):
        inner = _literal_default(expr.operand)
        if isinstance(inner, (int, float)) and not isinstance(inner, bool):
            return -inner if isinstance(expr.op, ast.USub) else inner
        return TODO_MARKER
    if isinstance(expr, (ast.Tuple, ast.List)):
        items = [_literal_default(e) for e in expr.elts]
        if any(item == TODO_MARKER for item in items):
            return TODO_MARKER
        return tuple(items) if isinstance(expr, ast.Tuple) else items
    return TODO_MARKER


def _init_params(cls: ast.ClassDef) -> tuple[tuple[str, ConfigValue], ...]:
    init = next((n for n in cls.body
                 if isinstance(n, ast.FunctionDef) and n.name == "__init__"), None)
    if init is None:
        return ()
    args = init.args
    positional = list(args.posonlyargs) + list(args.args)
    if positional:
        positional = positional[1:]  # drop the receiver
    defaults: list[ast.expr | None] = [None] * (len(positional) - len(args.defaults))
    defaults += list(args.defaults)
    params: list[tuple[str, ConfigValue]] = []
    for arg, default in zip(positional, defaults):
        params.append((arg.arg, TODO_MARKER if default is None else _literal_default(default)))
    for arg, default in zip(args.kwonlyargs, args.kw_defaults):
        params.append((arg.arg, TODO_MARKER if default is None else _literal_default(default)))
    return tuple(params)


def _forward_arity(cls: ast.ClassDef) -> tuple[int, int]:
    fwd = next((n for n in cls.body
                if isinstance(n, ast.FunctionDef) and n.name == "forward"), None)
    if fwd is None:
        log.warning("class %s has no forward; assuming arity (1, 1)", cls.name)
        return (1, 1)

    args = fwd.args
    positional = (list(args.posonlyargs) + list(args.args))[1:]  # drop receiver
    defaults: list[ast.expr | None] = [None] * (len(positional) - len(args.defaults))
    defaults += list(args.defaults)
    in_arity = 0
    for i, (arg, default) in enumerate(zip(positional, defaults)):
        optional = (default is not None and isinstance(default, ast.Constant)
                    and default.value is None)
        if i > 0 and optional:
            continue  # optional inputs beyond the first do not count
        in_arity += 1
    for arg, default in zip(args.kwonlyargs, args.kw_defaults):
        if default is None:
            in_arity += 1

    returns = _own_returns(fwd)
    if not returns:
        log.warning("forward of %s never returns a value; assuming out arity 1", cls.name)
        return (in_arity, 1)
    last = max(returns, key=lambda n: (n.lineno, n.col_offset))
    if last.value is None:
        log.warning("forward of %s ends in a bare return; assuming out arity 1", cls.name)
        return (in_arity, 1)
    out = len(last.value.elts) if isinstance(last.value, ast.Tuple) else 1
    if out == 0:
        log.warning("forward of %s returns an empty tuple; assuming out arity 1", cls.name)
        out = 1
    return (in_arity, out)


def _own_returns(fn: ast.FunctionDef) -> list[ast.Return]:
    """Return statements of fn itself, skipping nested defs and lambdas."""
    returns: list[ast.Return] = []

    def visit(node: ast.AST):
        for child in ast.iter_child_nodes(node):
            if isinstance(child, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef, ast.Lambda)):
                continue
            if isinstance(child, ast.Return):
                returns.append(child)
            visit(child)

    visit(fn)
    return returns


def _class_source(source_text: str, cls: ast.ClassDef) -> str:
    lines = source_text.splitlines()
    start = cls.lineno
    for dec in cls.decorator_list:
        start = min(start, dec.lineno)
    return "\n".join(lines[start - 1: cls.end_lineno])


def mine_source(source_text: str, origin_prefix: str,
                base_names: Iterable[str] = DEFAULT_BASE_NAMES) -> list[ModuleRecord]:
    """Extract one record per module class found in ``source_text``."""
    if not origin_prefix:
        raise ValueError("origin_prefix must be non-empty")
    try:
        tree = ast.parse(source_text)
    except SyntaxError as exc:
        raise ParseError(exc.msg or "invalid syntax", exc.lineno or 0, exc.offset or 0) from exc

    base_set = set(base_names)
    classes = [n for n in tree.body if isinstance(n, ast.ClassDef)]
    bases_of = {c.name: [b for b in (_dotted_name(e) for e in c.bases) if b] for c in classes}

    module_names: set[str] = set()
    changed = True
    while changed:
        changed = False
        for cls in classes:
            if cls.name in module_names:
                continue
            if any(b in base_set or b in module_names for b in bases_of[cls.name]):
                module_names.add(cls.name)
                changed = True

    records = []
    for cls in classes:
        if cls.name not in module_names:
            continue
        in_arity, out_arity = _forward_arity(cls)
        records.append(ModuleRecord(
            name=cls.name,
            origin=f"{origin_prefix}.{cls.name}",
            params=_init_params(cls),
            forward_in_arity=in_arity,
            forward_out_arity=out_arity,
            source=_class_source(source_text, cls),
        ))
    return records


# --------------------------------------------------------------------------
# Builtin special combinators
# --------------------------------------------------------------------------

_SPECIAL_SOURCES = {
    "NAS_Backbone": '''class NAS_Backbone(nn.Module):
    """Backbone that runs a list of module configs sequentially."""

    def __init__(self, layer_cfgs: list):
        super().__init__()
        self.layers = nn.ModuleList(build_module(cfg) for cfg in layer_cfgs)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x''',
    "SequentialWithConfig": '''class SequentialWithConfig(nn.Module):
    """Sequential container built from a list of module configs."""

    def __init__(self, module_cfgs: list):
        super().__init__()
        self.layers = nn.ModuleList(build_module(cfg) for cfg in module_cfgs)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x''',
    "ParallelWithConfig": '''class ParallelWithConfig(nn.Module):
    """Runs two config-built branches on the same input and merges them.

    merge_operation is one of 'add', 'mul', or 'concat'; 'concat' joins the
    branch outputs along concat_dim.
    """

    def __init__(self, module_cfg1, module_cfg2, merge_operation='add', concat_dim=1):
        super().__init__()
        self.branch1 = build_module(module_cfg1)
        self.branch2 = build_module(module_cfg2)
        self.merge_operation = merge_operation
        self.concat_dim = concat_dim

    def forward(self, x):
        y1 = self.branch1(x)
        y2 = self.branch2(x)
        if self.merge_operation == 'add':
            return y1 + y2
        if self.merge_operation == 'mul':
            return y1 * y2
        return torch.cat([y1, y2], dim=self.concat_dim)''',
    "MyReshape": '''class MyReshape(nn.Module):
    """Reshapes the input tensor to the configured shape."""

    def __init__(self, shape: list):
        super().__init__()
        self.shape = shape

    def forward(self, x):
        return x.reshape(*self.shape)''',
    "Identity": '''class Identity(nn.Module):
    """Returns the input unchanged."""

    def forward(self, x):
        return x''',
}

_SPECIAL_PARAMS: dict[str, tuple[tuple[str, ConfigValue], ...]] = {
    "NAS_Backbone": (("layer_cfgs", TODO_MARKER),),
    "SequentialWithConfig": (("module_cfgs", TODO_MARKER),),
    "ParallelWithConfig": (("module_cfg1", TODO_MARKER), ("module_cfg2", TODO_MARKER),
                           ("merge_operation", "add"), ("concat_dim", 1)),
    "MyReshape": (("shape", TODO_MARKER),),
    "Identity": (),
}

MERGE_OPERATIONS = ("add", "mul", "concat")


def builtin_specials() -> dict[str, ModuleRecord]:
    return {
        name: ModuleRecord(
            name=name,
            origin=f"nas_special_modules.{name}",
            params=_SPECIAL_PARAMS[name],
            forward_in_arity=1,
            forward_out_arity=1,
            source=_SPECIAL_SOURCES[name],
        )
        for name in _SPECIAL_SOURCES
    }


# --------------------------------------------------------------------------
# Database
# --------------------------------------------------------------------------


@dataclass
class ModuleDB:
    """Name-indexed mined records plus the fixed combinator specials."""

    records: dict[str, ModuleRecord] = field(default_factory=dict)
    specials: dict[str, ModuleRecord] = field(default_factory=builtin_specials)

    def lookup(self, name: str) -> ModuleRecord:
        rec = self.records.get(name) or self.specials.get(name)
        if rec is None:
            raise UnknownModule(name)
        return rec

    def __contains__(self, name: str) -> bool:
        return name in self.records or name in self.specials

    @property
    def names(self) -> list[str]:
        return list(self.records) + [s for s in self.specials if s not in self.records]

    def __len__(self) -> int:
        return len(self.names)


def build_db(records: Sequence[ModuleRecord]) -> ModuleDB:
    """Index records by name, resolving collisions with _2, _3, ... suffixes.

    Builtin special names are reserved; a mined record with such a name is
    suffixed like any other collision.
    """
    specials = builtin_specials()
    indexed: dict[str, ModuleRecord] = {}

    def free_name(base: str) -> str:
        if base not in indexed and base not in specials:
            return base
        k = 2
        while f"{base}_{k}" in indexed or f"{base}_{k}" in specials:
            k += 1
        return f"{base}_{k}"

    for rec in records:
        name = free_name(rec.name)
        if name != rec.name:
            rec = ModuleRecord(name, rec.origin, rec.params,
                               rec.forward_in_arity, rec.forward_out_arity, rec.source)
        indexed[name] = rec
    return ModuleDB(records=indexed, specials=specials)


def get_code(names: Sequence[str], db: ModuleDB) -> str:
    """Source snippets of the named modules, in request order."""
    return "\n\n".join(db.lookup(name).source for name in names)


def get_default(name: str, db: ModuleDB) -> dict[str, ConfigValue]:
    """Constructor defaults (or the TODO marker), in declaration order."""
    return dict(db.lookup(name).params)


def retrieve_compatible(seed_names: Sequence[str], db: ModuleDB) -> list[str]:
    """Mined records whose forward arity matches at least one seed's, seeds excluded."""
    seed_arities = {db.lookup(name).arity for name in seed_names}
    seeds = set(seed_names)
    return sorted(name for name, rec in db.records.items()
                  if name not in seeds and rec.arity in seed_arities)


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

DB_VERSION = 1


def _encode_default(value: ConfigValue) -> str:
    if value == TODO_MARKER:
        return TODO_MARKER
    return render_value(value, 0)


def _decode_default(text: str) -> ConfigValue:
    if text == TODO_MARKER:
        return TODO_MARKER
    return parse_value(text)


def db_to_json(db: ModuleDB) -> str:
    payload = {
        "records": [
            {
                "name": rec.name,
                "origin": rec.origin,
                "params": [{"name": p, "default": _encode_default(d)} for p, d in rec.params],
                "in_arity": rec.forward_in_arity,
                "out_arity": rec.forward_out_arity,
                "source": rec.source,
            }
            for rec in db.records.values()
        ],
        "version": DB_VERSION,
    }
    return json.dumps(payload, indent=2) + "\n"


def db_from_json(text: str) -> ModuleDB:
    payload = json.loads(text)
    if payload.get("version") != DB_VERSION:
        raise ValueError(f"unsupported module database version: {payload.get('version')!r}")
    records = {}
    for item in payload["records"]:
        rec = ModuleRecord(
            name=item["name"],
            origin=item["origin"],
            params=tuple((p["name"], _decode_default(p["default"])) for p in item["params"]),
            forward_in_arity=item["in_arity"],
            forward_out_arity=item["out_arity"],
            source=item["source"],
        )
        records[rec.name] = rec
    return ModuleDB(records=records, specials=builtin_specials())


def save_db(db: ModuleDB, path) -> None:
    with open(path, "w") as fh:
        fh.write(db_to_json(db))


def load_db(path) -> ModuleDB:
    with open(path) as fh:
        return db_from_json(fh.read())
