"""OCL-subset expressions: AST, kind checking, compilation and evaluation.

Expressions are immutable dataclasses.  Before evaluation an expression is
*resolved* against a metamodel: attribute accesses get their flattened
index, quantifiers without an explicit collection get their domain
inferred, and kinds are checked.  Resolved expressions compile to plain
Python closures ``fn(model, env)`` where ``env`` maps variable names to
values; object values inside closures are bare integer oids.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Mapping, NamedTuple, Optional, Tuple, Union

from .errors import EvalError, SourceSpan, SpecSemanticError
from .model import Metamodel, ModelState

Kind = Union[str, Tuple[str, str]]  # "int" | "bool" | "ident" | ("obj", cls) | ("coll", cls)

_SPAN = dict(default=None, compare=False, repr=False)


class Expr:
    """Base class of expression nodes."""

    span: Optional[SourceSpan]


@dataclass(frozen=True)
class Lit(Expr):
    value: Union[int, bool, str]
    span: Optional[SourceSpan] = field(**_SPAN)


@dataclass(frozen=True)
class ObjLit(Expr):
    """Reference to a declared object by name, written ``'name``."""

    name: str
    span: Optional[SourceSpan] = field(**_SPAN)


@dataclass(frozen=True)
class Var(Expr):
    name: str
    span: Optional[SourceSpan] = field(**_SPAN)


@dataclass(frozen=True)
class Attr(Expr):
    obj: Expr
    name: str
    span: Optional[SourceSpan] = field(**_SPAN)
    index: Optional[int] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class AllInstances(Expr):
    cls: str
    span: Optional[SourceSpan] = field(**_SPAN)


@dataclass(frozen=True)
class Quant(Expr):
    op: str  # "exists" | "forAll"
    coll: Optional[Expr]
    var: str
    body: Expr
    span: Optional[SourceSpan] = field(**_SPAN)


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr
    span: Optional[SourceSpan] = field(**_SPAN)


@dataclass(frozen=True)
class Not(Expr):
    operand: Expr
    span: Optional[SourceSpan] = field(**_SPAN)


class Handle(NamedTuple):
    """An object value as returned by :func:`eval_expr`."""

    oid: int


COMPARISONS = ("=", "<>", "<", "<=", ">", ">=")
ARITH = ("+", "-", "*", "div")
LOGIC = ("and", "or", "implies")

PREC = {"implies": 1, "or": 2, "and": 3, "not": 4, **{op: 5 for op in COMPARISONS}, "+": 6, "-": 6, "*": 7, "div": 7}
POSTFIX = 8
ATOM = 9


# -- generic traversal ---------------------------------------------------------


def free_vars(e: Expr) -> frozenset:
    if isinstance(e, Var):
        return frozenset([e.name])
    if isinstance(e, (Lit, ObjLit, AllInstances)):
        return frozenset()
    if isinstance(e, Attr):
        return free_vars(e.obj)
    if isinstance(e, Not):
        return free_vars(e.operand)
    if isinstance(e, BinOp):
        return free_vars(e.left) | free_vars(e.right)
    if isinstance(e, Quant):
        inner = free_vars(e.body) - {e.var}
        return inner | (free_vars(e.coll) if e.coll is not None else frozenset())
    raise TypeError(e)


def object_literals(e: Expr) -> frozenset:
    if isinstance(e, ObjLit):
        return frozenset([e.name])
    children = ()
    if isinstance(e, Attr):
        children = (e.obj,)
    elif isinstance(e, Not):
        children = (e.operand,)
    elif isinstance(e, BinOp):
        children = (e.left, e.right)
    elif isinstance(e, Quant):
        children = (e.body,) if e.coll is None else (e.coll, e.body)
    out = frozenset()
    for c in children:
        out |= object_literals(c)
    return out


# -- kind checking / resolution -------------------------------------------------


def _kind_str(k: Kind) -> str:
    if isinstance(k, tuple):
        return f"{k[1]}" if k[0] == "obj" else f"collection of {k[1]}"
    return k


def _attr_users(e: Expr, var: str, acc: list):
    """Attribute names accessed directly on variable ``var`` (not shadowed)."""
    if isinstance(e, Attr):
        if isinstance(e.obj, Var) and e.obj.name == var:
            acc.append(e.name)
        _attr_users(e.obj, var, acc)
    elif isinstance(e, Not):
        _attr_users(e.operand, var, acc)
    elif isinstance(e, BinOp):
        _attr_users(e.left, var, acc)
        _attr_users(e.right, var, acc)
    elif isinstance(e, Quant):
        if e.coll is not None:
            _attr_users(e.coll, var, acc)
        if e.var != var:
            _attr_users(e.body, var, acc)


def _infer_domain(q: Quant, mm: Metamodel) -> str:
    names = []
    _attr_users(q.body, q.var, names)
    if not names:
        raise SpecSemanticError(f"cannot infer the domain of {q.op}({q.var} | ...): no attribute of {q.var} is used", q.span)
    owners = [mc.name for mc in mm.metaclasses if any(a.name == names[0] for a in mc.attributes)]
    if len(owners) != 1:
        what = "no" if not owners else "several"
        raise SpecSemanticError(f"cannot infer the domain of {q.var}: {what} metaclasses declare {names[0]!r}", q.span)
    return owners[0]


class Checker:
    """Resolves and kind-checks expressions against a metamodel.

    ``objects`` maps declared object names to their metaclass, used to
    type ``'name`` literals.
    """

    def __init__(self, mm: Metamodel, objects: Optional[Mapping[str, str]] = None):
        self.mm = mm
        self.objects = dict(objects or {})

    def resolve(self, e: Expr, env: Mapping[str, Kind]) -> Tuple[Expr, Kind]:
        mm = self.mm
        if isinstance(e, Lit):
            v = e.value
            return e, "bool" if isinstance(v, bool) else "int" if isinstance(v, int) else "ident"
        if isinstance(e, ObjLit):
            cls = self.objects.get(e.name)
            if cls is None:
                raise SpecSemanticError(f"unbound object literal '{e.name}", e.span)
            return e, ("obj", cls)
        if isinstance(e, Var):
            if e.name not in env:
                raise SpecSemanticError(f"unbound variable {e.name!r}", e.span)
            return e, env[e.name]
        if isinstance(e, Attr):
            obj, k = self.resolve(e.obj, env)
            if not (isinstance(k, tuple) and k[0] == "obj"):
                raise SpecSemanticError(f"attribute access .{e.name} on a value of kind {_kind_str(k)}", e.span)
            found = mm.attribute(k[1], e.name)
            if found is None:
                raise SpecSemanticError(f"metaclass {k[1]} has no attribute {e.name!r}", e.span)
            index, attr = found
            return replace(e, obj=obj, index=index), attr.kind
        if isinstance(e, AllInstances):
            if e.cls not in mm.classes:
                raise SpecSemanticError(f"unknown metaclass {e.cls!r}", e.span)
            return e, ("coll", e.cls)
        if isinstance(e, Quant):
            if e.coll is None:
                coll = AllInstances(_infer_domain(e, mm), span=e.span)
            else:
                coll = e.coll
            coll, ck = self.resolve(coll, env)
            if not (isinstance(ck, tuple) and ck[0] == "coll"):
                raise SpecSemanticError(f"{e.op} applied to a value of kind {_kind_str(ck)}", e.span)
            inner = dict(env)
            inner[e.var] = ("obj", ck[1])
            body, bk = self.resolve(e.body, inner)
            if bk != "bool":
                raise SpecSemanticError(f"{e.op} body must be boolean, got {_kind_str(bk)}", e.body.span)
            return replace(e, coll=coll, body=body), "bool"
        if isinstance(e, Not):
            inner, k = self.resolve(e.operand, env)
            if k != "bool":
                raise SpecSemanticError(f"'not' applied to {_kind_str(k)}", e.span)
            return replace(e, operand=inner), "bool"
        if isinstance(e, BinOp):
            left, lk = self.resolve(e.left, env)
            right, rk = self.resolve(e.right, env)
            op = e.op
            out = replace(e, left=left, right=right)
            if op in LOGIC:
                if lk != "bool" or rk != "bool":
                    raise SpecSemanticError(f"'{op}' needs boolean operands, got {_kind_str(lk)} and {_kind_str(rk)}", e.span)
                return out, "bool"
            if op in ARITH:
                if lk != "int" or rk != "int":
                    raise SpecSemanticError(f"'{op}' needs integer operands, got {_kind_str(lk)} and {_kind_str(rk)}", e.span)
                return out, "int"
            if op in ("=", "<>"):
                same = lk == rk or (
                    isinstance(lk, tuple) and isinstance(rk, tuple) and lk[0] == rk[0] == "obj" and mm.related(lk[1], rk[1])
                )
                if not same or (isinstance(lk, tuple) and lk[0] == "coll"):
                    raise SpecSemanticError(f"cannot compare {_kind_str(lk)} with {_kind_str(rk)}", e.span)
                return out, "bool"
            if op in COMPARISONS:
                if lk != "int" or rk != "int":
                    raise SpecSemanticError(f"'{op}' needs integer operands, got {_kind_str(lk)} and {_kind_str(rk)}", e.span)
                return out, "bool"
            raise SpecSemanticError(f"unknown operator {op!r}", e.span)
        raise TypeError(e)


# -- compilation ----------------------------------------------------------------

Compiled = Callable[[ModelState, dict], object]


def _int_div(a: int, b: int) -> int:
    if b == 0:
        raise EvalError("division by zero")
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


_CMP = {
    "=": lambda a, b: a == b,
    "<>": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "div": _int_div,
}


def compile_expr(e: Expr) -> Compiled:
    """Compile a resolved expression.  Attribute indexes must be filled in."""
    if isinstance(e, Lit):
        v = e.value
        return lambda m, env: v
    if isinstance(e, ObjLit):
        name, span = e.name, e.span

        def objlit(m, env):
            oid = m.by_name(name)
            if oid is None:
                raise EvalError(f"unbound object literal '{name}", span)
            return oid

        return objlit
    if isinstance(e, Var):
        name, span = e.name, e.span

        def var(m, env):
            try:
                return env[name]
            except KeyError:
                raise EvalError(f"unbound variable {name!r}", span) from None

        return var
    if isinstance(e, Attr):
        if e.index is None:
            raise ValueError("compile_expr needs a resolved expression")
        idx, span, attr = e.index, e.span, e.name
        if isinstance(e.obj, Var):
            vname = e.obj.name

            def var_attr(m, env):
                try:
                    return m.objects[env[vname]].values[idx]
                except KeyError:
                    raise EvalError(f"cannot read {vname}.{attr}: object missing or variable unbound", span) from None

            return var_attr
        of = compile_expr(e.obj)

        def attr_access(m, env):
            try:
                return m.objects[of(m, env)].values[idx]
            except KeyError:
                raise EvalError(f"cannot read .{attr}: object no longer exists", span) from None

        return attr_access
    if isinstance(e, AllInstances):
        cls = e.cls
        return lambda m, env: m.instances(cls)
    if isinstance(e, Quant):
        coll = compile_expr(e.coll)
        body = compile_expr(e.body)
        var_name = e.var
        if e.op == "exists":

            def exists(m, env):
                inner = dict(env)
                for oid in coll(m, env):
                    inner[var_name] = oid
                    if body(m, inner):
                        return True
                return False

            return exists

        def forall(m, env):
            inner = dict(env)
            for oid in coll(m, env):
                inner[var_name] = oid
                if not body(m, inner):
                    return False
            return True

        return forall
    if isinstance(e, Not):
        f = compile_expr(e.operand)
        return lambda m, env: not f(m, env)
    if isinstance(e, BinOp):
        lf = compile_expr(e.left)
        rf = compile_expr(e.right)
        op = e.op
        if op == "and":
            return lambda m, env: lf(m, env) and rf(m, env)
        if op == "or":
            return lambda m, env: lf(m, env) or rf(m, env)
        if op == "implies":
            return lambda m, env: (not lf(m, env)) or rf(m, env)
        fn = _CMP[op]
        return lambda m, env: fn(lf(m, env), rf(m, env))
    raise TypeError(e)


def _value_kind(model: ModelState, value) -> Kind:
    if isinstance(value, Handle):
        return ("obj", model.objects[value.oid].cls)
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "int"
    if isinstance(value, str):
        return "ident"
    raise EvalError(f"unsupported binding value {value!r}")


@functools.lru_cache(maxsize=4096)
def _compiled_for(e: Expr, mm: Metamodel, var_kinds: tuple, objects: tuple):
    resolved, kind = Checker(mm, dict(objects)).resolve(e, dict(var_kinds))
    return compile_expr(resolved), kind


def eval_expr(e: Expr, model: ModelState, bindings: Optional[Mapping[str, object]] = None):
    """Evaluate ``e`` in ``model``; object values come back as :class:`Handle`.

    Object bindings may be given as :class:`Handle` values.  Collections are
    returned as tuples.
    """
    bindings = dict(bindings or {})
    var_kinds = tuple(sorted((k, _value_kind(model, v)) for k, v in bindings.items()))
    objects = tuple(sorted((o.name, o.cls) for o in model.objects.values() if o.name))
    try:
        fn, kind = _compiled_for(e, model.mm, var_kinds, objects)
    except SpecSemanticError as err:
        raise EvalError(err.message, err.span) from None
    env = {k: (v.oid if isinstance(v, Handle) else v) for k, v in bindings.items()}
    value = fn(model, env)
    if isinstance(kind, tuple):
        if kind[0] == "obj":
            return Handle(value)
        return tuple(Handle(o) for o in value)
    return value


# -- printing --------------------------------------------------------------------


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return PREC[e.op]
    if isinstance(e, Not):
        return PREC["not"]
    if isinstance(e, Quant) and e.coll is not None:
        return POSTFIX
    if isinstance(e, (Attr, AllInstances)):
        return POSTFIX
    return ATOM


def _lit_text(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_text(e: Expr, min_prec: int = 0) -> str:
    """Render with the minimal parentheses the grammar needs."""
    if isinstance(e, Lit):
        s = _lit_text(e.value)
    elif isinstance(e, ObjLit):
        s = "'" + e.name
    elif isinstance(e, Var):
        s = e.name
    elif isinstance(e, Attr):
        s = f"{to_text(e.obj, POSTFIX)}.{e.name}"
    elif isinstance(e, AllInstances):
        s = f"{e.cls}.allInstances"
    elif isinstance(e, Quant):
        inner = f"{e.op}({e.var} | {to_text(e.body)})"
        s = inner if e.coll is None else f"{to_text(e.coll, POSTFIX)} -> {inner}"
    elif isinstance(e, Not):
        s = f"not {to_text(e.operand, PREC['not'])}"
    elif isinstance(e, BinOp):
        p = PREC[e.op]
        if e.op == "implies":
            left, right = to_text(e.left, p + 1), to_text(e.right, p)
            sym = "->"
        elif e.op in COMPARISONS:
            left, right = to_text(e.left, p + 1), to_text(e.right, p + 1)
            sym = e.op
        else:
            left, right = to_text(e.left, p), to_text(e.right, p + 1)
            sym = e.op
        s = f"{left} {sym} {right}"
    else:
        raise TypeError(e)
    return f"({s})" if _prec(e) < min_prec else s
