"""Symbolic expression DAG.

Every instantiated equation in the circuit model lives here: construction
through the factory functions, hash-consed so structurally equal nodes are
the same object, canonicalization (commutative sort, constant folding,
x/1 elimination), evaluation, central-difference sensitivity, and a
deterministic text rendering that doubles as the serialization format,
e.g. ``div(gm[P1],mul(2,pi,C[n8]))``.

No general computer algebra: canonicalization normalizes, it does not
simplify.
"""

from __future__ import annotations

import math
from typing import Iterable, Mapping

__all__ = [
    "Expr",
    "const",
    "var",
    "add",
    "sub",
    "neg",
    "mul",
    "div",
    "sqrt",
    "pow2",
    "absv",
    "minv",
    "atan",
    "ge",
    "lt",
    "guard_and",
    "when",
    "case",
    "canonicalize",
    "evaluate",
    "fd_sensitivity",
    "render",
    "parse_expr",
    "EvalError",
    "PI",
]

# Node kinds. ge/lt/and/when only appear inside case guards.
_NARY = {"add", "mul", "min"}
_UNARY = {"neg", "sqrt", "pow2", "abs", "atan"}
_BINARY = {"sub", "div", "ge", "lt"}


class Expr:
    """Immutable, interned DAG node. Compare with ``is`` or ``==`` (same)."""

    __slots__ = ("kind", "value", "children", "_render")

    def __init__(self, kind, value, children):
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "children", children)
        object.__setattr__(self, "_render", None)

    def __setattr__(self, name, value):  # pragma: no cover - guard
        raise AttributeError("Expr nodes are immutable")

    def __repr__(self):
        return f"Expr({render(self)})"

    def variables(self) -> set[str]:
        out: set[str] = set()
        stack = [self]
        seen: set[int] = set()
        while stack:
            e = stack.pop()
            if id(e) in seen:
                continue
            seen.add(id(e))
            if e.kind == "var":
                out.add(e.value)
            stack.extend(e.children)
        return out


_INTERN: dict[tuple, Expr] = {}


def _node(kind: str, value, children: tuple) -> Expr:
    key = (kind, value, tuple(id(c) for c in children))
    node = _INTERN.get(key)
    if node is None:
        node = Expr(kind, value, children)
        _INTERN[key] = node
    return node


def const(v: float) -> Expr:
    return _node("const", float(v), ())


def var(name: str) -> Expr:
    return _node("var", name, ())


PI = var("pi")


def add(*args: Expr) -> Expr:
    if not args:
        return const(0.0)
    if len(args) == 1:
        return args[0]
    return _node("add", None, tuple(args))


def mul(*args: Expr) -> Expr:
    if not args:
        return const(1.0)
    if len(args) == 1:
        return args[0]
    return _node("mul", None, tuple(args))


def sub(a: Expr, b: Expr) -> Expr:
    return _node("sub", None, (a, b))


def neg(a: Expr) -> Expr:
    return _node("neg", None, (a,))


def div(a: Expr, b: Expr) -> Expr:
    return _node("div", None, (a, b))


def sqrt(a: Expr) -> Expr:
    return _node("sqrt", None, (a,))


def pow2(a: Expr) -> Expr:
    return _node("pow2", None, (a,))


def absv(a: Expr) -> Expr:
    return _node("abs", None, (a,))


def minv(*args: Expr) -> Expr:
    if len(args) == 1:
        return args[0]
    return _node("min", None, tuple(args))


def atan(a: Expr) -> Expr:
    return _node("atan", None, (a,))


def ge(a: Expr, b: Expr) -> Expr:
    return _node("ge", None, (a, b))


def lt(a: Expr, b: Expr) -> Expr:
    return _node("lt", None, (a, b))


def guard_and(*conds: Expr) -> Expr:
    if len(conds) == 1:
        return conds[0]
    return _node("and", None, tuple(conds))


def when(cond: Expr, value: Expr) -> Expr:
    return _node("when", None, (cond, value))


def case(*branches: Expr) -> Expr:
    """case(when(c1,e1), when(c2,e2), ...): exactly one guard must hold."""
    return _node("case", None, tuple(branches))


# ---------------------------------------------------------------------------
# canonicalization

def _const_value(e: Expr):
    return e.value if e.kind == "const" else None


def canonicalize(e: Expr, _memo: dict | None = None) -> Expr:
    """Normal form: sub -> add/neg, flattened sorted add/mul, folded
    constants, x/1 -> x, neg(neg(x)) -> x. Idempotent."""
    if _memo is None:
        _memo = {}
    got = _memo.get(id(e))
    if got is not None:
        return got
    kids = tuple(canonicalize(c, _memo) for c in e.children)
    out = _rebuild(e.kind, e.value, kids)
    _memo[id(e)] = out
    return out


def _rebuild(kind: str, value, kids: tuple) -> Expr:
    if kind == "const":
        return const(value)
    if kind == "var":
        return var(value)
    if kind == "sub":
        return _rebuild("add", None, (kids[0], _rebuild("neg", None, (kids[1],))))
    if kind == "neg":
        (a,) = kids
        if a.kind == "const":
            return const(-a.value)
        if a.kind == "neg":
            return a.children[0]
        return _node("neg", None, (a,))
    if kind in ("add", "mul"):
        flat: list[Expr] = []
        for k in kids:
            if k.kind == kind:
                flat.extend(k.children)
            else:
                flat.append(k)
        unit = 0.0 if kind == "add" else 1.0
        acc = unit
        rest: list[Expr] = []
        for k in flat:
            if k.kind == "const":
                acc = acc + k.value if kind == "add" else acc * k.value
            else:
                rest.append(k)
        if kind == "mul" and acc == 0.0:
            return const(0.0)
        rest.sort(key=render)
        if acc != unit or not rest:
            rest.insert(0, const(acc))
        if len(rest) == 1:
            return rest[0]
        return _node(kind, None, tuple(rest))
    if kind == "div":
        a, b = kids
        if b.kind == "const" and b.value == 1.0:
            return a
        if a.kind == "const" and b.kind == "const" and b.value != 0.0:
            return const(a.value / b.value)
        return _node("div", None, (a, b))
    return _node(kind, value, kids)


# ---------------------------------------------------------------------------
# evaluation

class EvalError(ValueError):
    pass


_BUILTIN = {"pi": math.pi}


def evaluate(e: Expr, bindings: Mapping[str, float]) -> float:
    return _eval(e, bindings, {})


def _eval(e: Expr, b: Mapping[str, float], memo: dict) -> float:
    got = memo.get(id(e))
    if got is not None:
        return got
    k = e.kind
    if k == "const":
        v = e.value
    elif k == "var":
        if e.value in b:
            v = float(b[e.value])
        elif e.value in _BUILTIN:
            v = _BUILTIN[e.value]
        else:
            raise EvalError(f"unbound variable {e.value!r}")
    elif k == "add":
        v = math.fsum(_eval(c, b, memo) for c in e.children)
    elif k == "mul":
        v = 1.0
        for c in e.children:
            v *= _eval(c, b, memo)
    elif k == "sub":
        v = _eval(e.children[0], b, memo) - _eval(e.children[1], b, memo)
    elif k == "neg":
        v = -_eval(e.children[0], b, memo)
    elif k == "div":
        den = _eval(e.children[1], b, memo)
        if den == 0.0:
            raise EvalError("division by zero")
        v = _eval(e.children[0], b, memo) / den
    elif k == "sqrt":
        x = _eval(e.children[0], b, memo)
        if x < 0.0:
            raise EvalError("sqrt of negative value")
        v = math.sqrt(x)
    elif k == "pow2":
        x = _eval(e.children[0], b, memo)
        v = x * x
    elif k == "abs":
        v = abs(_eval(e.children[0], b, memo))
    elif k == "min":
        v = min(_eval(c, b, memo) for c in e.children)
    elif k == "atan":
        v = math.atan(_eval(e.children[0], b, memo))
    elif k == "case":
        hits = [br for br in e.children if _guard(br.children[0], b, memo)]
        if len(hits) != 1:
            raise EvalError(f"case selected {len(hits)} branches, expected 1")
        v = _eval(hits[0].children[1], b, memo)
    else:
        raise EvalError(f"cannot evaluate node kind {k!r}")
    memo[id(e)] = v
    return v


def _guard(c: Expr, b: Mapping[str, float], memo: dict) -> bool:
    if c.kind == "and":
        return all(_guard(x, b, memo) for x in c.children)
    if c.kind == "ge":
        return _eval(c.children[0], b, memo) >= _eval(c.children[1], b, memo)
    if c.kind == "lt":
        return _eval(c.children[0], b, memo) < _eval(c.children[1], b, memo)
    raise EvalError(f"bad guard kind {c.kind!r}")


def fd_sensitivity(e: Expr, name: str, bindings: Mapping[str, float], h: float) -> float:
    """Central difference d e / d name at the given point."""
    up = dict(bindings)
    dn = dict(bindings)
    x = float(bindings[name])
    up[name] = x + h
    dn[name] = x - h
    return (evaluate(e, up) - evaluate(e, dn)) / (2.0 * h)


# ---------------------------------------------------------------------------
# rendering / parsing

def _fmt_const(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def render(e: Expr) -> str:
    cached = e._render
    if cached is not None:
        return cached
    k = e.kind
    if k == "const":
        s = _fmt_const(e.value)
    elif k == "var":
        s = e.value
    else:
        s = f"{k}({','.join(render(c) for c in e.children)})"
    object.__setattr__(e, "_render", s)
    return s


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def parse(self) -> Expr:
        e = self._expr()
        if self.pos != len(self.text):
            raise ValueError(f"trailing input at {self.pos} in {self.text!r}")
        return e

    def _expr(self) -> Expr:
        start = self.pos
        t = self.text
        n = len(t)
        i = start
        while i < n and (t[i].isalnum() or t[i] in "_.+-[]"):
            # stop identifier scan at '(' / ',' / ')' boundaries only
            i += 1
        head = t[start:i]
        if i < n and t[i] == "(":
            self.pos = i + 1
            args = []
            if self.text[self.pos] != ")":
                while True:
                    args.append(self._expr())
                    ch = self.text[self.pos]
                    self.pos += 1
                    if ch == ")":
                        break
                    if ch != ",":
                        raise ValueError(f"expected ',' or ')' at {self.pos - 1}")
            else:
                self.pos += 1
            return _node(head, None, tuple(args))
        self.pos = i
        if not head:
            raise ValueError(f"empty token at {start} in {t!r}")
        try:
            return const(float(head))
        except ValueError:
            return var(head)


def parse_expr(text: str) -> Expr:
    """Inverse of render() for canonical text."""
    return _Parser(text).parse()
