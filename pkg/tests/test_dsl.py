from __future__ import annotations

import random

import pytest

from timedmt import SpecSemanticError, SpecSyntaxError, TimedMTError, parse_formula, parse_query, parse_spec, print_spec
from timedmt.dsl import tokenize
from timedmt.expr import Attr, BinOp, Lit, Not, ObjLit, Quant, Var, to_text
from timedmt.formula import Always, AndF, Eventually, Implies, NotF, OrF, Prop, Until

from conftest import TOY, spec_path

BUNDLED = ["rttp.cdsl", "rttp_noloss.cdsl", "edf.cdsl", "edf_overload.cdsl"]


def strip(e):
    """Expression tree without source spans, for golden comparisons."""
    if isinstance(e, BinOp):
        return (e.op, strip(e.left), strip(e.right))
    if isinstance(e, Not):
        return ("not", strip(e.operand))
    if isinstance(e, Attr):
        return (".", strip(e.obj), e.name)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Lit):
        return e.value
    if isinstance(e, ObjLit):
        return "'" + e.name
    if isinstance(e, Quant):
        return (e.op, strip(e.coll), e.var, strip(e.body))
    return type(e).__name__


@pytest.mark.parametrize("name", BUNDLED)
def test_round_trip_bundled(name):
    spec = parse_spec(spec_path(name).read_text(), name)
    text = print_spec(spec)
    again = parse_spec(text, "printed")
    assert again == spec
    # printing is a fixpoint after one pass
    assert print_spec(again) == text


def test_round_trip_metamodel_only():
    spec = parse_spec("metamodel empty { }")
    assert parse_spec(print_spec(spec)) == spec
    assert spec.models == {} and spec.rules == ()


def test_round_trip_toy():
    spec = parse_spec(TOY)
    assert parse_spec(print_spec(spec)) == spec


def test_rttp_contents(rttp):
    assert list(rttp.models) == ["rttpModel"]
    assert [r.name for r in rttp.rules] == ["Request", "Transfer", "Lost", "Response", "ComputeRtt", "LocalTimeElapse"]
    request = rttp.rule("Request")
    assert (request.lo, request.hi, request.period, request.eager) == (0, 0, 100, True)
    transfer = rttp.rule("Transfer")
    assert (transfer.lo, transfer.hi) == (5, 20)
    assert not rttp.rule("Lost").eager
    assert rttp.rule("LocalTimeElapse").kind == "ongoing"
    model = rttp.model("rttpModel")
    assert len(model.objects) == 4 and len(model.links) == 2


def test_empty_duration_interval_is_located():
    text = spec_path("rttp.cdsl").read_text().replace("duration [5,20]", "duration [20,5]")
    with pytest.raises(SpecSemanticError) as info:
        parse_spec(text, "bad.cdsl")
    err = info.value
    assert "empty duration interval" in err.message
    line = text.splitlines()[err.span.line - 1]
    at = line.index("[20,5]")
    assert at <= err.span.column - 1 < at + len("[20,5]")


def test_query_syntax_error_at_end():
    with pytest.raises(SpecSyntaxError) as info:
        parse_query("1 +")
    assert info.value.span.column == 4


def test_unknown_metaclass_is_rejected():
    text = TOY.replace("x: Box where x.open", "x: Crate where x.open")
    with pytest.raises(SpecSemanticError, match="Crate"):
        parse_spec(text)


def test_precedence_golden():
    e = parse_query("not a = 1 and b or c -> d")
    assert strip(e) == ("implies", ("or", ("and", ("not", ("=", "a", 1)), "b"), "c"), "d")
    e = parse_query("1 + 2 * 3 - 4 div 2 < 5")
    assert strip(e) == ("<", ("-", ("+", 1, ("*", 2, 3)), ("div", 4, 2)), 5)
    e = parse_query("Node.allInstances -> exists(n | n.rtt > 40 or n.rtt < 10)")
    assert strip(e)[0] == "exists" and strip(e)[2] == "n"
    assert strip(e)[3] == ("or", (">", (".", "n", "rtt"), 40), ("<", (".", "n", "rtt"), 10))
    assert strip(parse_query("'clock1.time <> 'clock2.time")) == ("<>", (".", "'clock1", "time"), (".", "'clock2", "time"))


@pytest.mark.parametrize("text", [
    "not a = 1 and b or c -> d",
    "1 + 2 * 3 - 4 div 2 < 5 and not true or false",
    "(a or b) and c",
    "a - (b - c)",
    "not (a and b)",
    "Node.allInstances -> forAll(n | n.rtt >= 10 and n.rtt <= 40)",
])
def test_expression_printing_round_trips(text):
    e = parse_query(text)
    assert strip(parse_query(to_text(e))) == strip(e)


PROPS = {"p": None, "q": None, "bigRtt": None}


def test_formula_golden():
    assert parse_formula("[] ~ bigRtt", PROPS) == Always(NotF(Prop("bigRtt")))
    assert parse_formula("p -> []q", PROPS) == Implies(Prop("p"), Always(Prop("q")))
    # unary temporal operators bind tighter than U
    assert parse_formula("<> p U q", PROPS) == Until(Eventually(Prop("p")), Prop("q"))
    assert parse_formula("p /\\ q \\/ p", PROPS) == OrF(AndF(Prop("p"), Prop("q")), Prop("p"))
    assert parse_formula("p -> q -> p", PROPS) == Implies(Prop("p"), Implies(Prop("q"), Prop("p")))


def test_formula_errors():
    with pytest.raises(SpecSemanticError, match="unknown proposition"):
        parse_formula("[] foo", PROPS)
    with pytest.raises(SpecSyntaxError):
        parse_formula("[] (p", PROPS)


def test_formula_str_round_trips():
    for text in ["[] ~ bigRtt", "p -> []q", "<> p U q", "~(p U q) \\/ [] <> p", "(p -> q) -> p"]:
        f = parse_formula(text, PROPS)
        assert parse_formula(str(f), PROPS) == f


def _within(span, text: str) -> bool:
    lines = text.splitlines()
    return 1 <= span.line <= len(lines) + 1 and span.column >= 1


def test_error_locality_under_token_mutations():
    """Deleting or duplicating one token either keeps the spec valid or
    yields an error whose span lies in the file and inside the rule or
    model that was mutated."""
    text = spec_path("rttp.cdsl").read_text()
    toks = [t for t in tokenize(text, "m.cdsl") if t.kind != "eof"]
    base = parse_spec(text)
    rule_spans = {r.name: r.span for r in base.rules}
    rng = random.Random(7)
    rejected = 0
    for _ in range(300):
        tok = rng.choice(toks)
        start = _offset(text, tok.span.line, tok.span.column)
        end = _offset(text, tok.span.end_line, tok.span.end_column)
        if rng.random() < 0.5:
            mutated = text[:start] + text[end:]
        else:
            mutated = text[:end] + " " + text[start:end] + text[end:]
        try:
            parse_spec(mutated, "m.cdsl")
        except TimedMTError as err:
            rejected += 1
            assert err.span is not None, str(err)
            assert _within(err.span, mutated), str(err)
            # a mutation inside a rule body is reported no earlier than that rule
            owner = [n for n, s in rule_spans.items() if s.contains(tok.span)]
            if owner:
                first_line = rule_spans[owner[0]].line
                assert err.span.line >= first_line - 1, (owner, str(err))
    assert rejected > 100


def _offset(text: str, line: int, column: int) -> int:
    lines = text.splitlines(keepends=True)
    return sum(len(l) for l in lines[: line - 1]) + column - 1
