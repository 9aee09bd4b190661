"""Textual specification language (``.cdsl``): lexer, parser and printer.

A specification bundles a metamodel, named initial models, timed rules and
named boolean propositions in one file::

    metamodel rttp {
      abstract metaclass Message { attr sealed: bool }
      metaclass Node { attr id: ident  ref clock: Clock [1] }
      ...
    }
    model rttpModel { n1: Node { id := "n1" }  link n1.clock = clock1 }
    rule Transfer atomic duration [5,20] {
      lhs { m: Message where m.sealed }
      rhs { m { sealed := false } }
    }
    prop bigRtt = exists(n | n.rtt > 40)

Expression precedence, loosest first: ``->`` (implication), ``or``,
``and``, ``not``, comparisons, ``+ -``, ``* div``, then postfix ``.attr``
and ``-> exists(...)``/``-> forAll(...)``.  Identifier literals are
double-quoted; ``'name`` refers to a declared object.  ``//`` starts a
comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Tuple

from .errors import SourceSpan, SpecSemanticError, SpecSyntaxError
from .expr import AllInstances, Attr, BinOp, Checker, Expr, Lit, Not, ObjLit, Quant, Var, to_text
from .formula import AndF, Always, Eventually, FalseF, Implies, LtlFormula, NotF, OrF, Prop, TrueF, Until, props_of
from .model import Attribute, Metaclass, Metamodel, ModelState, Obj, Reference, value_matches_kind
from .rules import (
    ATOMIC,
    ONGOING,
    Assign,
    CompiledRule,
    CreateNode,
    Effect,
    KeepNode,
    Pattern,
    PatternLink,
    PatternNode,
    Rhs,
    Rule,
    check_rule,
)

KEYWORDS = {
    "metamodel", "metaclass", "abstract", "extends", "attr", "ref", "model", "link", "rule", "atomic",
    "ongoing", "limit", "duration", "periodic", "noneager", "lhs", "nac", "rhs", "effect", "where", "prop",
    "and", "or", "not", "div", "true", "false", "exists", "forAll",
}  # fmt: skip


class Token(NamedTuple):
    kind: str  # IDENT INT STRING OBJLIT KW SYM EOF
    value: object
    span: SourceSpan


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|//[^\n]*)
  | (?P<INT>\d+)
  | (?P<OBJLIT>'[A-Za-z_][A-Za-z0-9_]*)
  | (?P<IDENT>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<STRING>"(?:[^"\\\n]|\\.)*")
  | (?P<SYM>:=|->|<>|<=|>=|\.\.|[{}()\[\],:.|=<>+\-*])
    """,
    re.VERBOSE,
)


def tokenize(text: str, file: str = "<input>") -> List[Token]:
    tokens = []
    pos, line, col = 0, 1, 1
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            span = SourceSpan(file, line, col, line, col + 1)
            raise SpecSyntaxError(f"unexpected character {text[pos]!r}", span)
        lexeme = m.group()
        kind = m.lastgroup
        nl = lexeme.count("\n")
        end_line = line + nl
        end_col = (len(lexeme) - lexeme.rfind("\n")) if nl else col + len(lexeme)
        span = SourceSpan(file, line, col, end_line, end_col)
        if kind != "ws":
            if kind == "INT":
                value = int(lexeme)
            elif kind == "STRING":
                value = re.sub(r"\\(.)", r"\1", lexeme[1:-1])
            elif kind == "OBJLIT":
                value = lexeme[1:]
            elif kind == "IDENT" and lexeme in KEYWORDS:
                kind, value = "KW", lexeme
            else:
                value = lexeme
            tokens.append(Token(kind, value, span))
        pos = m.end()
        line, col = end_line, end_col
    tokens.append(Token("EOF", None, SourceSpan(file, line, col, line, col)))
    return tokens


def _join(a: SourceSpan, b: SourceSpan) -> SourceSpan:
    return SourceSpan(a.file, a.line, a.column, b.end_line, b.end_column)


@dataclass
class Spec:
    metamodel: Metamodel
    models: Dict[str, ModelState] = field(default_factory=dict)
    rules: Tuple[Rule, ...] = ()
    props: Dict[str, Expr] = field(default_factory=dict)
    model_spans: Dict[str, SourceSpan] = field(default_factory=dict, compare=False, repr=False)
    _compiled: Optional[Tuple[CompiledRule, ...]] = field(default=None, compare=False, repr=False)

    def compiled_rules(self) -> Tuple[CompiledRule, ...]:
        if self._compiled is None:
            self._compiled = tuple(CompiledRule(r, self.metamodel, i) for i, r in enumerate(self.rules))
        return self._compiled

    def rule(self, name: str) -> Rule:
        for r in self.rules:
            if r.name == name:
                return r
        raise KeyError(name)

    def object_classes(self) -> Dict[str, str]:
        names: Dict[str, str] = {}
        for model in self.models.values():
            for obj in model.objects.values():
                if obj.name:
                    names.setdefault(obj.name, obj.cls)
        return names

    def checker(self) -> Checker:
        return Checker(self.metamodel, self.object_classes())

    def model(self, name: str) -> ModelState:
        try:
            return self.models[name]
        except KeyError:
            raise SpecSemanticError(f"unknown model {name!r}; declared: {', '.join(self.models) or 'none'}") from None

    def resolve_query(self, query) -> Expr:
        """Parse (if text) and kind-check a boolean query."""
        if isinstance(query, str):
            query = parse_query(query)
        resolved, kind = self.checker().resolve(query, {})
        if kind != "bool":
            raise SpecSemanticError("query must be boolean", query.span)
        return resolved


class _Parser:
    def __init__(self, text: str, file: str):
        self.toks = tokenize(text, file)
        self.i = 0
        self.file = file

    # -- token helpers

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, kind: str, value=None) -> bool:
        t = self.tok
        return t.kind == kind and (value is None or t.value == value)

    def at_sym(self, value) -> bool:
        return self.at("SYM", value)

    def at_kw(self, value) -> bool:
        return self.at("KW", value)

    def advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def fail(self, expected) -> SpecSyntaxError:
        t = self.tok
        found = "end of input" if t.kind == "EOF" else repr(t.value)
        expected = tuple(expected)
        return SpecSyntaxError(f"expected {' or '.join(expected)}, found {found}", t.span, expected)

    def expect_sym(self, value) -> Token:
        if not self.at_sym(value):
            raise self.fail([repr(value)])
        return self.advance()

    def expect_kw(self, value) -> Token:
        if not self.at_kw(value):
            raise self.fail([repr(value)])
        return self.advance()

    def ident(self, what="identifier") -> Token:
        if not self.at("IDENT"):
            raise self.fail([what])
        return self.advance()

    def nat(self) -> Token:
        if not self.at("INT"):
            raise self.fail(["natural number"])
        return self.advance()

    # -- expressions

    def expr(self) -> Expr:
        left = self.or_expr()
        if self.at_sym("->") and not self._quant_follows():
            self.advance()
            right = self.expr()
            return BinOp("implies", left, right, span=_join(left.span, right.span))
        return left

    def _quant_follows(self) -> bool:
        nxt = self.peek()
        return nxt.kind == "KW" and nxt.value in ("exists", "forAll")

    def or_expr(self) -> Expr:
        left = self.and_expr()
        while self.at_kw("or"):
            self.advance()
            right = self.and_expr()
            left = BinOp("or", left, right, span=_join(left.span, right.span))
        return left

    def and_expr(self) -> Expr:
        left = self.not_expr()
        while self.at_kw("and"):
            self.advance()
            right = self.not_expr()
            left = BinOp("and", left, right, span=_join(left.span, right.span))
        return left

    def not_expr(self) -> Expr:
        if self.at_kw("not"):
            start = self.advance()
            inner = self.not_expr()
            return Not(inner, span=_join(start.span, inner.span))
        return self.cmp_expr()

    def cmp_expr(self) -> Expr:
        left = self.add_expr()
        if self.tok.kind == "SYM" and self.tok.value in ("=", "<>", "<", "<=", ">", ">="):
            op = self.advance().value
            right = self.add_expr()
            return BinOp(op, left, right, span=_join(left.span, right.span))
        return left

    def add_expr(self) -> Expr:
        left = self.mul_expr()
        while self.tok.kind == "SYM" and self.tok.value in ("+", "-"):
            op = self.advance().value
            right = self.mul_expr()
            left = BinOp(op, left, right, span=_join(left.span, right.span))
        return left

    def mul_expr(self) -> Expr:
        left = self.postfix()
        while self.at_sym("*") or self.at_kw("div"):
            op = self.advance().value
            right = self.postfix()
            left = BinOp(op, left, right, span=_join(left.span, right.span))
        return left

    def postfix(self) -> Expr:
        e = self.primary()
        while True:
            if self.at_sym("."):
                self.advance()
                name = self.ident("attribute name")
                if name.value == "allInstances":
                    if not isinstance(e, Var):
                        raise SpecSyntaxError("allInstances needs a metaclass name", name.span)
                    e = AllInstances(e.name, span=_join(e.span, name.span))
                else:
                    e = Attr(e, name.value, span=_join(e.span, name.span))
            elif self.at_sym("->") and self._quant_follows():
                self.advance()
                e = self.quantifier(e)
            else:
                return e

    def quantifier(self, coll: Optional[Expr]) -> Expr:
        op = self.advance()
        self.expect_sym("(")
        var = self.ident("variable")
        self.expect_sym("|")
        body = self.expr()
        end = self.expect_sym(")")
        start = coll.span if coll is not None else op.span
        return Quant(op.value, coll, var.value, body, span=_join(start, end.span))

    def primary(self) -> Expr:
        t = self.tok
        if t.kind == "INT":
            self.advance()
            return Lit(t.value, span=t.span)
        if t.kind == "SYM" and t.value == "-" and self.peek().kind == "INT":
            self.advance()
            n = self.advance()
            return Lit(-n.value, span=_join(t.span, n.span))
        if t.kind == "STRING":
            self.advance()
            return Lit(t.value, span=t.span)
        if t.kind == "KW" and t.value in ("true", "false"):
            self.advance()
            return Lit(t.value == "true", span=t.span)
        if t.kind == "OBJLIT":
            self.advance()
            return ObjLit(t.value, span=t.span)
        if t.kind == "IDENT":
            self.advance()
            return Var(t.value, span=t.span)
        if t.kind == "KW" and t.value in ("exists", "forAll"):
            return self.quantifier(None)
        if t.kind == "SYM" and t.value == "(":
            self.advance()
            e = self.expr()
            self.expect_sym(")")
            return e
        raise self.fail(["expression"])

    # -- spec structure

    def spec(self) -> Tuple[Metamodel, list, list, list]:
        mm = self.metamodel()
        models, rules, props = [], [], []
        while not self.at("EOF"):
            if self.at_kw("model"):
                models.append(self.model_decl())
            elif self.at_kw("rule"):
                rules.append(self.rule_decl())
            elif self.at_kw("prop"):
                props.append(self.prop_decl())
            else:
                raise self.fail(["'model'", "'rule'", "'prop'", "end of input"])
        return mm, models, rules, props

    def metamodel(self) -> Metamodel:
        start = self.expect_kw("metamodel")
        name = self.ident("metamodel name")
        self.expect_sym("{")
        classes = []
        while not self.at_sym("}"):
            classes.append(self.metaclass())
        end = self.expect_sym("}")
        return Metamodel(name.value, classes, span=_join(start.span, end.span))

    def metaclass(self) -> Metaclass:
        start = self.tok
        abstract = False
        if self.at_kw("abstract"):
            self.advance()
            abstract = True
        if not self.at_kw("metaclass"):
            raise self.fail(["'metaclass'", "'abstract'", "'}'"])
        self.advance()
        name = self.ident("metaclass name")
        parent = None
        if self.at_kw("extends"):
            self.advance()
            parent = self.ident("metaclass name").value
        self.expect_sym("{")
        attrs, refs = [], []
        while not self.at_sym("}"):
            if self.at_kw("attr"):
                s = self.advance()
                aname = self.ident("attribute name")
                self.expect_sym(":")
                kind = self.ident("attribute kind (int, bool, ident)")
                if kind.value not in ("int", "bool", "ident"):
                    raise SpecSyntaxError(f"unknown attribute kind {kind.value!r}", kind.span, ("int", "bool", "ident"))
                attrs.append(Attribute(aname.value, kind.value, span=_join(s.span, kind.span)))
            elif self.at_kw("ref"):
                s = self.advance()
                rname = self.ident("reference name")
                self.expect_sym(":")
                target = self.ident("metaclass name")
                mult, end = self.multiplicity()
                refs.append(Reference(rname.value, target.value, mult, span=_join(s.span, end)))
            else:
                raise self.fail(["'attr'", "'ref'", "'}'"])
        end = self.expect_sym("}")
        return Metaclass(name.value, abstract, parent, tuple(attrs), tuple(refs), span=_join(start.span, end.span))

    def multiplicity(self) -> Tuple[str, SourceSpan]:
        self.expect_sym("[")
        lo = self.nat()
        if self.at_sym("]"):
            end = self.advance()
            if lo.value != 1:
                raise SpecSyntaxError("multiplicity must be [1], [0..1] or [0..*]", lo.span)
            return "1", end.span
        self.expect_sym("..")
        if self.at_sym("*"):
            self.advance()
            hi = "*"
        else:
            hi = self.nat().value
        end = self.expect_sym("]")
        mult = f"{lo.value}..{hi}"
        if mult not in ("0..1", "0..*"):
            raise SpecSyntaxError("multiplicity must be [1], [0..1] or [0..*]", lo.span)
        return mult, end.span

    def literal(self):
        t = self.tok
        if t.kind == "INT":
            self.advance()
            return t.value, t.span
        if t.kind == "SYM" and t.value == "-" and self.peek().kind == "INT":
            self.advance()
            n = self.advance()
            return -n.value, _join(t.span, n.span)
        if t.kind == "STRING":
            self.advance()
            return t.value, t.span
        if t.kind == "KW" and t.value in ("true", "false"):
            self.advance()
            return t.value == "true", t.span
        raise self.fail(["literal"])

    def model_decl(self):
        start = self.expect_kw("model")
        name = self.ident("model name")
        self.expect_sym("{")
        objects, links = [], []
        while not self.at_sym("}"):
            if self.at_kw("link"):
                links.append(self.link())
            elif self.at("IDENT"):
                oname = self.advance()
                self.expect_sym(":")
                cls = self.ident("metaclass name")
                values = []
                end = cls.span
                if self.at_sym("{"):
                    self.advance()
                    while not self.at_sym("}"):
                        aname = self.ident("attribute name")
                        self.expect_sym(":=")
                        value, vspan = self.literal()
                        values.append((aname, value, vspan))
                    end = self.expect_sym("}").span
                objects.append((oname, cls, values, _join(oname.span, end)))
            else:
                raise self.fail(["object declaration", "'link'", "'}'"])
        end = self.expect_sym("}")
        return name, objects, links, _join(start.span, end.span)

    def link(self) -> PatternLink:
        start = self.expect_kw("link")
        src = self.ident("object or variable")
        self.expect_sym(".")
        ref = self.ident("reference name")
        self.expect_sym("=")
        tgt = self.ident("object or variable")
        return PatternLink(src.value, ref.value, tgt.value, span=_join(start.span, tgt.span))

    def rule_decl(self) -> Rule:
        start = self.expect_kw("rule")
        name = self.ident("rule name")
        lo = hi = 0
        period = limit = None
        eager = True
        if self.at_kw("atomic"):
            kind = ATOMIC
            self.advance()
            self.expect_kw("duration")
            self.expect_sym("[")
            lo_t = self.nat()
            self.expect_sym(",")
            hi_t = self.nat()
            end = self.expect_sym("]")
            lo, hi = lo_t.value, hi_t.value
            if lo > hi:
                raise SpecSemanticError("empty duration interval", _join(lo_t.span, end.span))
            if self.at_kw("periodic"):
                self.advance()
                p = self.nat()
                if p.value <= 0:
                    raise SpecSemanticError("period must be positive", p.span)
                period = p.value
            if self.at_kw("noneager"):
                self.advance()
                eager = False
        elif self.at_kw("ongoing"):
            kind = ONGOING
            self.advance()
            if self.at_kw("limit"):
                self.advance()
                limit = self.nat().value
        else:
            raise self.fail(["'atomic'", "'ongoing'"])
        self.expect_sym("{")
        self.expect_kw("lhs")
        lhs = self.pattern()
        nacs = []
        while self.at_kw("nac"):
            self.advance()
            nacs.append(self.pattern())
        rhs, effects = None, ()
        if kind == ATOMIC:
            rhs = self.rhs()
        else:
            effects = self.effects()
        end = self.expect_sym("}")
        return Rule(name.value, kind, lhs, tuple(nacs), rhs, effects, lo, hi, period, eager, limit, span=_join(start.span, end.span))

    def pattern(self) -> Pattern:
        start = self.expect_sym("{")
        nodes, links = [], []
        while not self.at_sym("}"):
            if self.at_kw("link"):
                links.append(self.link())
            elif self.at("IDENT"):
                var = self.advance()
                self.expect_sym(":")
                cls = self.ident("metaclass name")
                guard = None
                end = cls.span
                if self.at_kw("where"):
                    self.advance()
                    guard = self.expr()
                    end = guard.span
                nodes.append(PatternNode(var.value, cls.value, guard, span=_join(var.span, end)))
            else:
                raise self.fail(["pattern node", "'link'", "'}'"])
        end = self.expect_sym("}")
        return Pattern(tuple(nodes), tuple(links), span=_join(start.span, end.span))

    def assigns(self) -> Tuple[Assign, ...]:
        self.expect_sym("{")
        out = []
        while not self.at_sym("}"):
            attr = self.ident("attribute name")
            self.expect_sym(":=")
            e = self.expr()
            out.append(Assign(attr.value, e, span=_join(attr.span, e.span)))
        self.expect_sym("}")
        return tuple(out)

    def rhs(self) -> Rhs:
        if not self.at_kw("rhs"):
            raise self.fail(["'nac'", "'rhs'"])
        start = self.advance()
        self.expect_sym("{")
        keeps, creates, links = [], [], []
        while not self.at_sym("}"):
            if self.at_kw("link"):
                links.append(self.link())
            elif self.at("IDENT"):
                var = self.advance()
                if self.at_sym(":"):
                    self.advance()
                    cls = self.ident("metaclass name")
                    inits = self.assigns() if self.at_sym("{") else ()
                    creates.append(CreateNode(var.value, cls.value, inits, span=_join(var.span, self.toks[self.i - 1].span)))
                else:
                    updates = self.assigns() if self.at_sym("{") else ()
                    keeps.append(KeepNode(var.value, updates, span=_join(var.span, self.toks[self.i - 1].span)))
            else:
                raise self.fail(["rhs node", "'link'", "'}'"])
        end = self.expect_sym("}")
        return Rhs(tuple(keeps), tuple(creates), tuple(links), span=_join(start.span, end.span))

    def effects(self) -> Tuple[Effect, ...]:
        if not self.at_kw("effect"):
            raise self.fail(["'nac'", "'effect'"])
        self.advance()
        self.expect_sym("{")
        out = []
        while not self.at_sym("}"):
            var = self.ident("variable")
            self.expect_sym(".")
            attr = self.ident("attribute name")
            self.expect_sym(":=")
            e = self.expr()
            out.append(Effect(var.value, attr.value, e, span=_join(var.span, e.span)))
        self.expect_sym("}")
        return tuple(out)

    def prop_decl(self):
        start = self.expect_kw("prop")
        name = self.ident("proposition name")
        self.expect_sym("=")
        e = self.expr()
        return name, e, _join(start.span, e.span)


# -- public entry points ---------------------------------------------------------


def parse_query(text: str, file: str = "<query>") -> Expr:
    p = _Parser(text, file)
    e = p.expr()
    if not p.at("EOF"):
        raise p.fail(["end of input"])
    return e


def parse_spec(text: str, file: str = "<spec>") -> Spec:
    """Parse and check a whole specification.

    Raises :class:`SpecSyntaxError` or :class:`SpecSemanticError`, both
    carrying the source span of the offending construct.
    """
    p = _Parser(text, file)
    mm, model_decls, rule_decls, prop_decls = p.spec()
    problems = mm.validate()
    if problems:
        msg, span = problems[0]
        raise SpecSemanticError(msg, span or mm.span)

    models: Dict[str, ModelState] = {}
    spans: Dict[str, SourceSpan] = {}
    object_classes: Dict[str, str] = {}
    for name, objects, links, span in model_decls:
        if name.value in models:
            raise SpecSemanticError(f"duplicate model {name.value!r}", name.span)
        models[name.value] = _build_model(mm, objects, links, object_classes)
        spans[name.value] = span

    checker = Checker(mm, object_classes)
    rules = []
    seen = set()
    for rule in rule_decls:
        if rule.name in seen:
            raise SpecSemanticError(f"duplicate rule {rule.name!r}", rule.span)
        seen.add(rule.name)
        rules.append(check_rule(rule, mm, object_classes))

    props: Dict[str, Expr] = {}
    for name, e, span in prop_decls:
        if name.value in props:
            raise SpecSemanticError(f"duplicate proposition {name.value!r}", name.span)
        resolved, kind = checker.resolve(e, {})
        if kind != "bool":
            raise SpecSemanticError(f"proposition {name.value!r} is not boolean", e.span)
        props[name.value] = resolved
    return Spec(mm, models, tuple(rules), props, spans)


def _build_model(mm: Metamodel, objects, links, object_classes: Dict[str, str]) -> ModelState:
    oids: Dict[str, int] = {}
    built: Dict[int, Obj] = {}
    for oname, cls, values, span in objects:
        if oname.value in oids:
            raise SpecSemanticError(f"duplicate object {oname.value!r}", oname.span)
        if cls.value not in mm.classes:
            raise SpecSemanticError(f"unknown metaclass {cls.value!r}", cls.span)
        previous = object_classes.get(oname.value)
        if previous is not None and previous != cls.value:
            raise SpecSemanticError(f"object name {oname.value!r} already names a {previous}", oname.span)
        object_classes[oname.value] = cls.value
        attrs = mm.attributes(cls.value)
        slots = [None] * len(attrs)
        for aname, value, vspan in values:
            found = mm.attribute(cls.value, aname.value)
            if found is None:
                raise SpecSemanticError(f"metaclass {cls.value} has no attribute {aname.value!r}", aname.span)
            index, attr = found
            if slots[index] is not None:
                raise SpecSemanticError(f"attribute {aname.value!r} given twice", aname.span)
            if not value_matches_kind(value, attr.kind):
                raise SpecSemanticError(f"{cls.value}.{aname.value} expects {attr.kind}", vspan)
            slots[index] = value
        oid = len(oids)
        oids[oname.value] = oid
        built[oid] = Obj(cls.value, tuple(slots), oname.value)
    link_set = set()
    for link in links:
        for end in (link.src, link.tgt):
            if end not in oids:
                raise SpecSemanticError(f"link endpoint {end!r} is not a declared object", link.span)
        src_cls = built[oids[link.src]].cls
        if link.ref not in mm.references(src_cls):
            raise SpecSemanticError(f"metaclass {src_cls} has no reference {link.ref!r}", link.span)
        link_set.add((oids[link.src], link.ref, oids[link.tgt]))
    return ModelState(mm, built, frozenset(link_set))


# -- LTL formulas ----------------------------------------------------------------------

_LTL_RE = re.compile(r"(?P<ws>\s+)|(?P<SYM>\[\]|<>|->|/\\|\\/|[~()])|(?P<IDENT>[A-Za-z_][A-Za-z0-9_]*)")


def parse_formula(text: str, props: Optional[Mapping] = None) -> LtlFormula:
    """Parse an LTL formula.

    Precedence, loosest first: ``->``, ``\\/``, ``/\\``, ``U``, then the
    unary ``~ [] <>``.  ``->`` and ``U`` associate to the right.  When
    ``props`` is given every proposition must be one of its keys.
    """
    toks = []
    pos, n = 0, len(text)
    while pos < n:
        m = _LTL_RE.match(text, pos)
        if m is None:
            span = SourceSpan("<formula>", 1, pos + 1, 1, pos + 2)
            raise SpecSyntaxError(f"unexpected character {text[pos]!r}", span)
        if m.lastgroup != "ws":
            toks.append((m.lastgroup, m.group(), SourceSpan("<formula>", 1, pos + 1, 1, m.end() + 1)))
        pos = m.end()
    toks.append(("EOF", None, SourceSpan("<formula>", 1, n + 1, 1, n + 1)))
    i = 0

    def fail(expected):
        kind, value, span = toks[i]
        found = "end of input" if kind == "EOF" else repr(value)
        return SpecSyntaxError(f"expected {expected}, found {found}", span, (expected,))

    def at(value):
        return toks[i][1] == value and toks[i][0] != "EOF"

    def implies():
        nonlocal i
        left = disj()
        if at("->"):
            i += 1
            return Implies(left, implies())
        return left

    def disj():
        nonlocal i
        left = conj()
        while at("\\/"):
            i += 1
            left = OrF(left, conj())
        return left

    def conj():
        nonlocal i
        left = until()
        while at("/\\"):
            i += 1
            left = AndF(left, until())
        return left

    def until():
        nonlocal i
        left = unary()
        if at("U"):
            i += 1
            return Until(left, until())
        return left

    def unary():
        nonlocal i
        kind, value, span = toks[i]
        if value == "~":
            i += 1
            return NotF(unary())
        if value == "[]":
            i += 1
            return Always(unary())
        if value == "<>":
            i += 1
            return Eventually(unary())
        if value == "(":
            i += 1
            inner = implies()
            if not at(")"):
                raise fail("')'")
            i += 1
            return inner
        if kind == "IDENT" and value != "U":
            i += 1
            if value == "true":
                return TrueF()
            if value == "false":
                return FalseF()
            if props is not None and value not in props:
                raise SpecSemanticError(f"unknown proposition {value!r}", span)
            return Prop(value)
        raise fail("formula")

    f = implies()
    if toks[i][0] != "EOF":
        raise fail("end of input")
    return f


# -- printing ---------------------------------------------------------------------------


def _lit(v) -> str:
    return to_text(Lit(v))


def print_spec(spec: Spec) -> str:
    """Render a spec so that ``parse_spec(print_spec(s)) == s``."""
    mm = spec.metamodel
    out = [f"metamodel {mm.name} {{"]
    for mc in mm.metaclasses:
        head = ("abstract " if mc.abstract else "") + f"metaclass {mc.name}"
        if mc.parent:
            head += f" extends {mc.parent}"
        feats = [f"attr {a.name}: {a.kind}" for a in mc.attributes]
        feats += [f"ref {r.name}: {r.target} [{r.multiplicity}]" for r in mc.references]
        if feats:
            out.append(f"  {head} {{")
            out.extend(f"    {f}" for f in feats)
            out.append("  }")
        else:
            out.append(f"  {head} {{ }}")
    out.append("}")
    for name, model in spec.models.items():
        out.append("")
        out.append(f"model {name} {{")
        out.extend(model_lines(model, "  "))
        out.append("}")
    for rule in spec.rules:
        out.append("")
        out.extend(_print_rule(rule))
    if spec.props:
        out.append("")
    for name, e in spec.props.items():
        out.append(f"prop {name} = {to_text(e)}")
    return "\n".join(out) + "\n"


def model_lines(model: ModelState, indent: str = "") -> List[str]:
    """Objects (oid order) and links of a model in model-block syntax;
    unnamed objects are called ``o<oid>``."""
    mm = model.mm
    out = []
    names = {}
    for oid in sorted(model.objects):
        obj = model.objects[oid]
        oname = obj.name or f"o{oid}"
        names[oid] = oname
        vals = [f"{a.name} := {_lit(v)}" for a, v in zip(mm.attributes(obj.cls), obj.values) if v is not None]
        out.append(f"{indent}{oname}: {obj.cls} {{ {'  '.join(vals)} }}" if vals else f"{indent}{oname}: {obj.cls} {{ }}")
    for src, ref, tgt in sorted(model.links):
        out.append(f"{indent}link {names[src]}.{ref} = {names[tgt]}")
    return out


def _print_pattern(keyword: str, pattern: Pattern) -> List[str]:
    lines = [f"  {keyword} {{"]
    for node in pattern.nodes:
        guard = f" where {to_text(node.guard)}" if node.guard is not None else ""
        lines.append(f"    {node.var}: {node.cls}{guard}")
    for l in pattern.links:
        lines.append(f"    link {l.src}.{l.ref} = {l.tgt}")
    lines.append("  }")
    return lines


def _print_assigns(assigns) -> str:
    return "{ " + "  ".join(f"{a.attr} := {to_text(a.expr)}" for a in assigns) + " }"


def _print_rule(rule: Rule) -> List[str]:
    if rule.kind == ATOMIC:
        head = f"rule {rule.name} atomic duration [{rule.lo},{rule.hi}]"
        if rule.period is not None:
            head += f" periodic {rule.period}"
        if not rule.eager:
            head += " noneager"
    else:
        head = f"rule {rule.name} ongoing"
        if rule.limit is not None:
            head += f" limit {rule.limit}"
    lines = [head + " {"]
    lines += _print_pattern("lhs", rule.lhs)
    for nac in rule.nacs:
        lines += _print_pattern("nac", nac)
    if rule.rhs is not None:
        lines.append("  rhs {")
        for k in rule.rhs.keeps:
            lines.append(f"    {k.var} {_print_assigns(k.updates)}" if k.updates else f"    {k.var}")
        for c in rule.rhs.creates:
            lines.append(f"    {c.var}: {c.cls} {_print_assigns(c.inits)}")
        for l in rule.rhs.links:
            lines.append(f"    link {l.src}.{l.ref} = {l.tgt}")
        lines.append("  }")
    else:
        lines.append("  effect {")
        for e in rule.effects:
            lines.append(f"    {e.var}.{e.attr} := {to_text(e.expr)}")
        lines.append("  }")
    lines.append("}")
    return lines


def load_spec(path) -> Spec:
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read(), str(path))
