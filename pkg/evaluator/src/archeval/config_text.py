"""Safe parsing of model config text (the `model = dict(...)` format).

The text is Python surface syntax restricted to literals and dict(...) calls,
so it parses with the standard ast module and a small whitelist walker.  The
config is data, never executed.
"""

from __future__ import annotations

import ast


class ConfigTextError(ValueError):
    pass


def _eval_node(node: ast.expr):
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id != "dict":
            raise ConfigTextError(f"only dict(...) calls allowed, got {ast.dump(node.func)}")
        if node.args:
            raise ConfigTextError("dict(...) takes keyword arguments only")
        out = {}
        for kw in node.keywords:
            if kw.arg is None:
                raise ConfigTextError("**kwargs is not allowed in configs")
            if kw.arg in out:
                raise ConfigTextError(f"duplicate key {kw.arg!r}")
            out[kw.arg] = _eval_node(kw.value)
        return out
    if isinstance(node, ast.Constant):
        if isinstance(node.value, (int, float, str, bool, type(None))):
            return node.value
        raise ConfigTextError(f"unsupported constant {node.value!r}")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        value = _eval_node(node.operand)
        if not isinstance(value, (int, float)):
            raise ConfigTextError("unary sign on a non-number")
        return -value if isinstance(node.op, ast.USub) else value
    if isinstance(node, ast.List):
        return [_eval_node(item) for item in node.elts]
    if isinstance(node, ast.Tuple):
        return tuple(_eval_node(item) for item in node.elts)
    raise ConfigTextError(f"unsupported expression: {ast.dump(node)[:80]}")


def parse_model_config(text: str) -> dict:
    """Return the dict bound to ``model`` in the config text."""
    try:
        tree = ast.parse(text)
    except SyntaxError as exc:
        raise ConfigTextError(f"config text is not parseable: {exc}") from exc
    model = None
    for stmt in tree.body:
        if not isinstance(stmt, ast.Assign):
            continue
        if len(stmt.targets) == 1 and isinstance(stmt.targets[0], ast.Name):
            if stmt.targets[0].id == "model":
                model = _eval_node(stmt.value)
    if model is None:
        raise ConfigTextError("no 'model' assignment found")
    if not isinstance(model, dict) or not isinstance(model.get("type"), str):
        raise ConfigTextError("'model' must be a dict with a string 'type'")
    return model
