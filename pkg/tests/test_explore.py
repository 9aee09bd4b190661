from __future__ import annotations

import random
from collections import deque

import pytest

from timedmt import BudgetExceeded, Configuration, Engine, Exhaustive, ScheduledAction, canonicalize, reachable_graph, search
from timedmt.explore import compile_query, replay
from timedmt.rules import Match, apply

TOY_QUERIES = [
    "Box.allInstances -> forAll(b | not b.open)",
    "Token.allInstances -> exists(k | k.v > 4)",
    "Token.allInstances -> exists(k | k.v = 2) and Box.allInstances -> exists(b | b.open)",
    "Token.allInstances -> forAll(k | k.v > 0)",
    "Box.allInstances -> exists(b | b.n = 2)",
    "Token.allInstances -> exists(k | k.v = 9)",
]

RTT_QUERIES = [
    "Node.allInstances -> exists(n | n.rtt = 17)",
    "Node.allInstances -> exists(n | n.rtt > 40 or n.rtt < 10)",
    "Node.allInstances -> forAll(n | n.rtt = 12)",
    "Node.allInstances -> exists(n | n.rtt = 11) and 'clock1.time > 21",
    "'clock1.time <> 'clock2.time",
    "ResponseMessage.allInstances -> exists(m | not m.sealed)",
]


def naive_reachable(spec, model, bound, mode=Exhaustive()):
    """Every configuration reachable within ``bound``, deduplicated only by
    exact equality (no renaming, no canonical keys)."""
    eng = Engine(spec)
    start = eng.initial(model)
    exact = lambda c: (c.now, c.model, c.agenda, c.fired, c.usage)
    seen = {exact(start)}
    out = [start]
    todo = deque([start])
    while todo:
        c = todo.popleft()
        for c2, _ in eng.successors(c, bound, mode):
            k = exact(c2)
            if k not in seen:
                seen.add(k)
                out.append(c2)
                todo.append(c2)
    return out


def permuted(c: Configuration, perm) -> Configuration:
    agenda = tuple(sorted(e._replace(oids=tuple(perm.get(o, o) for o in e.oids)) for e in c.agenda))
    fired = frozenset((r, tuple(sorted(perm.get(o, o) for o in oids))) for r, oids in c.fired)
    return c._replace(model=c.model.renamed(perm), agenda=agenda, fired=fired)


# -- canonical keys


def test_key_is_invariant_under_oid_permutation(rttp):
    model = apply(rttp.rule("Request"), Match(("n", "c"), (0, 2)), rttp.model("rttpModel"))
    c = Configuration(model, 4, (ScheduledAction(1, (4,), 0, 5, 20),), 5)
    perm = {0: 4, 1: 0, 2: 3, 3: 1, 4: 2}
    assert canonicalize(permuted(c, perm)) == canonicalize(c)


def test_key_separates_attribute_values_and_time(rttp):
    c = Configuration(rttp.model("rttpModel"), 0, (), 4)
    assert canonicalize(c) != canonicalize(c._replace(model=c.model.with_attr(0, "rtt", 11)))
    # same model and relative offsets, different absolute time
    a = c._replace(now=3, agenda=(ScheduledAction(0, (0, 2), 3, 5, 5),))
    b = c._replace(now=4, agenda=(ScheduledAction(0, (0, 2), 4, 6, 6),))
    assert canonicalize(a) != canonicalize(b)
    assert canonicalize(a)[2:] == canonicalize(b)[2:]


def test_key_distinguishes_which_object_is_scheduled(rttp):
    model = apply(rttp.rule("Request"), Match(("n", "c"), (0, 2)), rttp.model("rttpModel"))
    model = apply(rttp.rule("Request"), Match(("n", "c"), (1, 3)), model)
    model = model.with_attr(3, "time", 1)
    a = Configuration(model, 1, (ScheduledAction(1, (4,), 0, 5, 5),), 6)
    b = Configuration(model, 1, (ScheduledAction(1, (5,), 0, 5, 5),), 6)
    assert canonicalize(a) != canonicalize(b)


def test_symmetric_objects_merge(rttp):
    # two requests differing only by identity: scheduling either is the same state
    model = apply(rttp.rule("Request"), Match(("n", "c"), (0, 2)), rttp.model("rttpModel"))
    model = apply(rttp.rule("Request"), Match(("n", "c"), (0, 2)), model)
    a = Configuration(model, 1, (ScheduledAction(1, (4,), 0, 5, 5),), 6)
    b = Configuration(model, 1, (ScheduledAction(1, (5,), 0, 5, 5),), 6)
    assert canonicalize(a) == canonicalize(b)


# -- search


@pytest.mark.parametrize("bound", [0, 2, 5])
def test_search_agrees_with_naive_oracle(toy, bound):
    states = naive_reachable(toy, "start", bound)
    for q in TOY_QUERIES:
        test = compile_query(toy, q)
        expected = any(test(c.model) for c in states)
        result = search(toy, "start", q, bound)
        assert result.found == expected, q
        if expected:
            first = min(c.now for c in states if test(c.model))
            assert result.solutions[0].elapsed == first, q


def test_state_count_matches_naive_modulo_renaming(toy):
    states = naive_reachable(toy, "start", 4)
    distinct = {canonicalize(c) for c in states}
    result = search(toy, "start", "false", 4)
    assert result.outcome == "no-solution"
    assert result.states == len(distinct)


@pytest.mark.parametrize("bound", [3, 6])
def test_eager_and_lazy_branching_agree(toy, bound):
    for q in TOY_QUERIES:
        lazy = search(toy, "start", q, bound)
        eager = search(toy, "start", q, bound, mode=Exhaustive(branching="eager"))
        assert lazy.found == eager.found, q
        if lazy.found:
            assert lazy.solutions[0].elapsed == eager.solutions[0].elapsed


def test_eager_and_lazy_agree_on_rttp(rttp):
    for q in RTT_QUERIES[:3]:
        lazy = search(rttp, "rttpModel", q, 16, factor=False)
        eager = search(rttp, "rttpModel", q, 16, factor=False, mode=Exhaustive(branching="eager"))
        assert (lazy.found, [s.elapsed for s in lazy.solutions]) == (eager.found, [s.elapsed for s in eager.solutions])


class ShuffledEngine(Engine):
    """Successor order permuted by a seed-dependent function of the state."""

    def __init__(self, spec, seed):
        super().__init__(spec)
        self.seed = seed

    def successors(self, c, bound, mode=Exhaustive()):
        succ = super().successors(c, bound, mode)
        random.Random(hash((self.seed, canonicalize(c)))).shuffle(succ)
        return succ


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_outcomes_do_not_depend_on_successor_order(toy, rttp, seed):
    for spec, model, bound, queries in ((toy, "start", 6, TOY_QUERIES), (rttp, "rttpModel", 14, RTT_QUERIES[:4])):
        for q in queries:
            ref = search(spec, model, q, bound, factor=False)
            got = search(spec, model, q, bound, factor=False, engine=ShuffledEngine(spec, seed))
            assert got.found == ref.found, q
            if not ref.found:
                assert got.states == ref.states
            else:
                assert got.solutions[0].elapsed == ref.solutions[0].elapsed


@pytest.mark.parametrize("q", RTT_QUERIES)
def test_factored_search_matches_plain(rttp, q):
    plain = search(rttp, "rttpModel", q, 26, factor=False)
    grouped = search(rttp, "rttpModel", q, 26, factor=True)
    assert grouped.outcome == plain.outcome
    assert [s.elapsed for s in grouped.solutions] == [s.elapsed for s in plain.solutions]
    if not plain.found:
        assert grouped.states == plain.states


def test_solutions_replay(rttp):
    result = search(rttp, "rttpModel", RTT_QUERIES[0], 40, max_solutions=3)
    assert len(result.solutions) == 3
    eng = Engine(rttp)
    test = compile_query(rttp, RTT_QUERIES[0])
    for sol in result.solutions:
        configs, _ = replay(eng, sol.path, 40, Exhaustive(), eng.initial("rttpModel"))
        assert test(configs[-1].model)
        assert canonicalize(configs[-1]) == canonicalize(sol.config)
        assert sol.elapsed == configs[-1].now == 17


def test_rtt_17_witness_splits_the_legs(rttp):
    sol = search(rttp, "rttpModel", RTT_QUERIES[0], 40).solutions[0]
    transfers = [e for e in sol.events if e.kind == "Realized" and e.rule == "Transfer"]
    legs = [e.get("due") - e.get("trigger") for e in transfers]
    assert len(legs) >= 2 and all(5 <= d <= 20 for d in legs)
    # the request leg and its response leg add up to 17
    assert any(a + b == 17 for a in legs for b in legs)


def test_initial_state_is_examined(rttp):
    result = search(rttp, "rttpModel", "'clock1.time = 0", 10)
    assert result.solutions[0].elapsed == 0 and result.solutions[0].path == ()


def test_bound_monotonicity(toy):
    for q in TOY_QUERIES:
        found = [search(toy, "start", q, b).found for b in range(0, 7)]
        assert found == sorted(found), q


def test_depth_bound_reports_exhaustion(rttp):
    result = search(rttp, "rttpModel", "'clock1.time > 50", 300, max_depth=10)
    assert result.outcome == "bound-exhausted"
    with pytest.raises(ValueError):
        search(rttp, "rttpModel", "'clock1.time > 50", 300, max_depth=10, factor=True)


def test_state_budget(rttp):
    with pytest.raises(BudgetExceeded) as info:
        search(rttp, "rttpModel", "false", 300, max_states=500, factor=False)
    assert info.value.states > 500
    with pytest.raises(BudgetExceeded):
        search(rttp, "rttpModel", "Node.allInstances -> exists(n | n.rtt > 40)", 300, max_states=500)


def test_callable_queries(toy):
    result = search(toy, "start", lambda m: len(m.instances("Token")) >= 3, 6)
    assert result.found


def test_edf_searches(edf, edf_overload):
    q = "Server.allInstances -> exists(s | s.deadline < s.remExecTime)"
    assert search(edf, "edfModel", q, 20).outcome == "no-solution"
    assert search(edf_overload, "edfModel", q, 24).solutions[0].elapsed == 6


# -- reachable graphs


def test_reachable_graph_bound_zero(rttp):
    g = reachable_graph(rttp, "rttpModel", {}, 0)
    assert all(c.now == 0 for c in g.configs)
    naive = {canonicalize(c) for c in naive_reachable(rttp, "rttpModel", 0)}
    assert {canonicalize(c) for c in g.configs} == naive


def test_reachable_graph_labels_and_totality(rttp):
    g = reachable_graph(rttp, "rttpModel", {"clocksEqual": rttp.props["clocksEqual"], "rttChanged": rttp.props["rttChanged"]}, 25)
    assert g.labels["clocksEqual"] == frozenset(range(len(g)))
    assert g.labels["rttChanged"] and len(g.labels["rttChanged"]) < len(g)
    assert all(g.succ[s] for s in range(len(g)))
    for s in g.frontier:
        assert g.succ[s] == [(s, -1)]
    assert any(g.configs[s].now == 25 for s in g.frontier)
