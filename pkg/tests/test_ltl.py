from __future__ import annotations

import itertools
import json

import pytest

from timedmt import Engine, Exhaustive, SpecSemanticError, model_check, parse_formula, parse_spec, search
from timedmt.formula import Always, AndF, Eventually, FalseF, Implies, NotF, OrF, Prop, TrueF, Until
from timedmt.ltl import holds_on_lasso, state_query, to_buchi, verify_counterexample

P2 = {"p": None, "q": None}

CORPUS = [
    "p",
    "[] p",
    "<> p",
    "p U q",
    "[] <> p",
    "<> [] p",
    "[] (p -> <> q)",
    "~ (p U q)",
    "(p U q) \\/ [] p",
    "<> (p /\\ ~ q)",
    "[] (p \\/ q) -> <> q",
    "p U (q U ~ p)",
]
assert len(CORPUS) == 12

LETTERS = [frozenset(s) for s in ([], ["p"], ["q"], ["p", "q"])]


def lassos(max_stem=4, max_loop=4):
    for s in range(max_stem + 1):
        for stem in itertools.product(LETTERS, repeat=s):
            for l in range(1, max_loop + 1):
                for loop in itertools.product(LETTERS, repeat=l):
                    yield stem, loop


def oracle(f, stem, loop) -> bool:
    """Direct LTL semantics on ``stem loop^ω`` by walking positions."""
    word = list(stem) + list(loop)
    n, start = len(word), len(stem)

    def path(i):
        # every position reachable from i, in order, each listed once
        seen, out = set(), []
        while i not in seen:
            seen.add(i)
            out.append(i)
            i = i + 1 if i + 1 < n else start
        return out

    def sat(g, i) -> bool:
        if isinstance(g, TrueF):
            return True
        if isinstance(g, FalseF):
            return False
        if isinstance(g, Prop):
            return g.name in word[i]
        if isinstance(g, NotF):
            return not sat(g.sub, i)
        if isinstance(g, AndF):
            return sat(g.left, i) and sat(g.right, i)
        if isinstance(g, OrF):
            return sat(g.left, i) or sat(g.right, i)
        if isinstance(g, Implies):
            return not sat(g.left, i) or sat(g.right, i)
        if isinstance(g, Always):
            return all(sat(g.sub, j) for j in path(i))
        if isinstance(g, Eventually):
            return any(sat(g.sub, j) for j in path(i))
        if isinstance(g, Until):
            for j in path(i):
                if sat(g.right, j):
                    return True
                if not sat(g.left, j):
                    return False
            return False
        raise TypeError(g)

    return sat(f, 0)


@pytest.mark.parametrize("text", CORPUS)
def test_buchi_corpus_against_lasso_semantics(text):
    f = parse_formula(text, P2)
    aut = to_buchi(f)
    checked = 0
    for stem, loop in lassos():
        expected = oracle(f, stem, loop)
        assert aut.accepts(stem, loop) == expected, (text, stem, loop)
        assert holds_on_lasso(f, stem, loop) == expected, (text, stem, loop)
        checked += 1
    assert checked == 341 * 340


def test_textbook_automata():
    p = frozenset({"p"})
    q = frozenset({"q"})
    e = frozenset()
    assert to_buchi(parse_formula("p U q", P2)).accepts([p, p, q], [q])
    assert not to_buchi(parse_formula("p U q", P2)).accepts([], [p])
    assert not to_buchi(parse_formula("[] p", P2)).accepts([p, p], [e])
    assert to_buchi(parse_formula("<> p", P2)).accepts([e, e, p], [e])


# -- model checking


DETERMINISTIC = """
metamodel d { metaclass C { attr n: int  attr t: int } }
model m { c: C { n := 0  t := 0 } }
rule Inc atomic duration [0,0] periodic 3 { lhs { c: C } rhs { c { n := c.n + 1 } } }
rule Clock ongoing { lhs { c: C } effect { c.t := c.t + T } }
prop even = C.allInstances -> exists(c | c.n div 2 * 2 = c.n)
prop big = C.allInstances -> exists(c | c.n >= 3)
prop early = C.allInstances -> exists(c | c.t < 4)
"""

DET_FORMULAS = ["[] even", "<> big", "early U big", "[] (big -> [] big)", "<> [] big", "[] <> even",
                "early -> <> ~early", "~ early U even", "[] early", "<> (even /\\ big)"]


@pytest.mark.parametrize("text", DET_FORMULAS)
def test_duality_on_a_single_path(text):
    spec = parse_spec(DETERMINISTIC)
    f = parse_formula(text, spec.props)
    pos = model_check(spec, "m", f, 10, invariants=False)
    neg = model_check(spec, "m", NotF(f), 10, invariants=False)
    assert pos.holds != neg.holds
    witness = neg.counterexample if pos.holds else pos.counterexample
    assert witness is not None


def test_invariant_path_agrees_with_automaton(toy):
    for text in ["[] anyOpen", "[] ~ bigToken", "[] (anyOpen \\/ ~ bigToken)", "[] true", "[] (bigToken -> anyOpen)"]:
        fast = model_check(toy, "start", text, 6)
        slow = model_check(toy, "start", text, 6, invariants=False)
        assert fast.method == "invariant" and slow.method == "ndfs"
        assert fast.holds == slow.holds, text
        for r in (fast, slow):
            if not r.holds:
                verify_counterexample(Engine(toy), toy, r.formula, 6, Exhaustive(), "start",
                                      r.counterexample.path, r.counterexample.loop_start)


@pytest.mark.parametrize("prop", ["anyOpen", "bigToken"])
def test_search_and_check_agree_on_toy(toy, prop):
    for bound in (2, 4, 6):
        found = search(toy, "start", toy.props[prop], bound).found
        assert model_check(toy, "start", f"[] ~ {prop}", bound, invariants=False).holds == (not found)


def test_search_and_check_agree_on_rttp(rttp):
    for prop in ("bigRtt", "rttChanged", "rttOutOfBounds"):
        found = search(rttp, "rttpModel", rttp.props[prop], 25).found
        assert model_check(rttp, "rttpModel", f"[] ~ {prop}", 25).holds == (not found)


def test_big_rtt_never_within_small_bound(rttp):
    result = model_check(rttp, "rttpModel", "[] ~ bigRtt", 60)
    assert result.holds and result.counterexample is None


def test_rtt_changed_fails_with_loss(rttp):
    result = model_check(rttp, "rttpModel", "<> rttChanged", 40)
    assert not result.holds and result.method == "ndfs"
    cex = result.counterexample
    assert all("rttChanged" not in s.props for s in cex.steps)
    assert cex.steps[-1].config.now == 40
    realized = {e.rule for s in cex.steps for e in s.events if e.kind == "Realized"}
    assert "ComputeRtt" not in realized
    again = verify_counterexample(Engine(rttp), rttp, result.formula, 40, Exhaustive(), "rttpModel", cex.path, cex.loop_start)
    assert len(again.steps) == len(cex.steps)
    data = json.loads(json.dumps(cex.to_json("<> rttChanged", 40)))
    assert data["loop_start"] == cex.loop_start and len(data["steps"]) == len(cex.steps)


def test_rtt_changed_holds_without_loss(rttp_noloss):
    # every round trip completes, and some completes in other than 10 units
    result = model_check(rttp_noloss, "rttpModel", "<> rttChanged", 60)
    assert not result.holds  # the all-10 schedule exists: min legs give rtt 10
    assert model_check(rttp_noloss, "rttpModel", "[] ~ bigRtt", 60).holds


def test_true_always_holds(rttp):
    assert model_check(rttp, "rttpModel", "[] true", 30).holds
    assert model_check(rttp, "rttpModel", "[] true", 30, invariants=False).holds


def test_unknown_proposition(rttp):
    with pytest.raises(SpecSemanticError):
        model_check(rttp, "rttpModel", "[] nope", 10)
    with pytest.raises(SpecSemanticError):
        model_check(rttp, "rttpModel", Always(Prop("nope")), 10)


def test_state_query_translation(rttp):
    f = parse_formula("bigRtt -> ~ clocksEqual", rttp.props)
    q = state_query(f, rttp.props)
    assert search(rttp, "rttpModel", q, 0).found
