"""LTL model checking over the time-bounded state graph.

The negated formula is turned into a generalized Büchi automaton with the
on-the-fly tableau of Gerth, Peled, Vardi and Wolper, then degeneralized
with a counter.  The product with the state graph is searched for an
accepting cycle with nested depth-first search.

Time never decreases along a transition, so every cycle of the product
lies inside a single time layer.  The product is therefore built layer by
layer: nested DFS runs over the edges that stay inside the current layer,
and edges that tick into the next layer only seed that layer.  Memory is
bounded by two layers plus compact parent arrays.

States without successors (at the time bound, or deadlocked) get a
self-loop, so the checked structure is total; results hold for this
bounded, stutter-closed structure.

Invariants ``[] p`` with ``p`` free of temporal operators skip the
automaton: they hold iff no reachable state violates ``p``, which the
search explorer decides (with write-only attributes factored out when the
spec has them).  Every finite path extends to a lasso ending in a
self-loop at the time bound, so a violating state yields a counterexample.
"""

from __future__ import annotations

import time
from array import array
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from .engine import Configuration, Engine, Exhaustive, TraceEvent
from .errors import BudgetExceeded, SpecSemanticError, TimedMTError
from .explore import _Interner, canonicalize, compile_query, search
from .expr import BinOp, Expr, Lit, Not
from .formula import (
    Always,
    AndF,
    FalseF,
    Implies,
    LtlFormula,
    NotF,
    OrF,
    Prop,
    Release,
    TrueF,
    Until,
    nnf,
    props_of,
)

# -- automaton --------------------------------------------------------------------


@dataclass
class BuchiAutomaton:
    """State-labelled Büchi automaton: a run visits state ``q`` on a letter
    (set of true propositions) containing ``pos[q]`` and disjoint from
    ``neg[q]``."""

    pos: List[FrozenSet[str]]
    neg: List[FrozenSet[str]]
    succ: List[Tuple[int, ...]]
    initial: Tuple[int, ...]
    accepting: FrozenSet[int]
    _admitted: Dict[FrozenSet[str], FrozenSet[int]] = field(default_factory=dict, repr=False, compare=False)

    def __len__(self):
        return len(self.pos)

    def admits(self, q: int, letter: FrozenSet[str]) -> bool:
        return self.pos[q] <= letter and not (self.neg[q] & letter)

    def admitted(self, letter: FrozenSet[str]) -> FrozenSet[int]:
        hit = self._admitted.get(letter)
        if hit is None:
            hit = self._admitted[letter] = frozenset(q for q in range(len(self)) if self.admits(q, letter))
        return hit

    def accepts(self, stem: Sequence[FrozenSet[str]], loop: Sequence[FrozenSet[str]]) -> bool:
        """Acceptance of the ultimately periodic word ``stem loop^ω``."""
        if not loop:
            raise ValueError("loop must be nonempty")
        word = list(stem) + list(loop)
        n, start = len(word), len(stem)
        ok = [self.admitted(letter) for letter in word]
        succ: Dict[Tuple[int, int], list] = {}

        def kids(v):
            out = succ.get(v)
            if out is None:
                i = v[0] + 1 if v[0] + 1 < n else start
                out = succ[v] = [(i, q) for q in self.succ[v[1]] if q in ok[i]]
            return out

        reach, todo = set(), [(0, q) for q in self.initial if q in ok[0]]
        while todo:
            v = todo.pop()
            if v not in reach:
                reach.add(v)
                todo.extend(kids(v))
        # an accepting node that lies on a cycle
        for v in reach:
            if v[1] not in self.accepting:
                continue
            seen, todo = set(), list(kids(v))
            while todo:
                w = todo.pop()
                if w == v:
                    return True
                if w not in seen:
                    seen.add(w)
                    todo.extend(kids(w))
        return False


def _is_literal(f) -> bool:
    return isinstance(f, (Prop, TrueF, FalseF)) or (isinstance(f, NotF) and isinstance(f.sub, Prop))


def _negated(f):
    if isinstance(f, Prop):
        return NotF(f)
    if isinstance(f, NotF):
        return f.sub
    if isinstance(f, TrueF):
        return FalseF()
    return TrueF()


def to_buchi(f: LtlFormula) -> BuchiAutomaton:
    """Büchi automaton accepting exactly the words satisfying ``f``."""
    f = nnf(f)
    nodes: List[dict] = []  # each: incoming set, old, next
    index: Dict[Tuple[frozenset, frozenset], int] = {}
    INIT = -1

    todo = [(frozenset([INIT]), frozenset([f]), frozenset(), frozenset())]
    while todo:
        incoming, new, old, nxt = todo.pop()
        if not new:
            key = (old, nxt)
            j = index.get(key)
            if j is not None:
                nodes[j]["incoming"] |= incoming
                continue
            j = index[key] = len(nodes)
            nodes.append({"incoming": set(incoming), "old": old, "next": nxt})
            todo.append((frozenset([j]), nxt, frozenset(), frozenset()))
            continue
        eta = next(iter(sorted(new, key=repr)))
        new = new - {eta}
        if _is_literal(eta):
            if isinstance(eta, FalseF) or _negated(eta) in old:
                continue
            todo.append((incoming, new, old | {eta}, nxt))
        elif isinstance(eta, AndF):
            todo.append((incoming, new | ({eta.left, eta.right} - old), old | {eta}, nxt))
        elif isinstance(eta, OrF):
            todo.append((incoming, new | ({eta.left} - old), old | {eta}, nxt))
            todo.append((incoming, new | ({eta.right} - old), old | {eta}, nxt))
        elif isinstance(eta, Until):
            todo.append((incoming, new | ({eta.left} - old), old | {eta}, nxt | {eta}))
            todo.append((incoming, new | ({eta.right} - old), old | {eta}, nxt))
        elif isinstance(eta, Release):
            todo.append((incoming, new | ({eta.right} - old), old | {eta}, nxt | {eta}))
            todo.append((incoming, new | ({eta.left, eta.right} - old), old | {eta}, nxt))
        else:
            raise TypeError(f"not in negation normal form: {eta}")

    untils = sorted({u for nd in nodes for u in nd["old"] if isinstance(u, Until)}, key=repr)
    fsets = [frozenset(i for i, nd in enumerate(nodes) if u not in nd["old"] or u.right in nd["old"]) for u in untils]
    k = max(1, len(fsets))
    if not fsets:
        fsets = [frozenset(range(len(nodes)))]

    n = len(nodes)
    g_succ = [[] for _ in range(n)]
    g_init = []
    for j, nd in enumerate(nodes):
        for i in nd["incoming"]:
            if i == INIT:
                g_init.append(j)
            else:
                g_succ[i].append(j)

    def literals(nd):
        pos = frozenset(l.name for l in nd["old"] if isinstance(l, Prop))
        neg = frozenset(l.sub.name for l in nd["old"] if isinstance(l, NotF) and isinstance(l.sub, Prop))
        return pos, neg

    # degeneralize: state (q, i) waits for acceptance set i
    pos, neg, succ = [], [], []
    for q in range(n):
        p, m = literals(nodes[q])
        for _ in range(k):
            pos.append(p)
            neg.append(m)
    for q in range(n):
        for i in range(k):
            j = (i + 1) % k if q in fsets[i] else i
            succ.append(tuple(sorted(q2 * k + j for q2 in g_succ[q])))
    initial = tuple(sorted(q * k for q in g_init))
    accepting = frozenset(q * k for q in range(n) if q in fsets[0])
    return BuchiAutomaton(pos, neg, succ, initial, accepting)


# -- direct semantics on lassos (used to validate counterexamples) ---------------------


def holds_on_lasso(f: LtlFormula, stem: Sequence[FrozenSet[str]], loop: Sequence[FrozenSet[str]]) -> bool:
    """Truth of ``f`` at position 0 of ``stem loop^ω``, by fixpoint over the
    finitely many distinct positions."""
    word = list(stem) + list(loop)
    n, start = len(word), len(stem)
    succ = [i + 1 if i + 1 < n else start for i in range(n)]
    f = nnf(f)
    memo: Dict[int, List[bool]] = {}

    def sat(g) -> List[bool]:
        key = id(g)
        if key in memo:
            return memo[key]
        if isinstance(g, TrueF):
            out = [True] * n
        elif isinstance(g, FalseF):
            out = [False] * n
        elif isinstance(g, Prop):
            out = [g.name in word[i] for i in range(n)]
        elif isinstance(g, NotF):
            out = [not v for v in sat(g.sub)]
        elif isinstance(g, AndF):
            a, b = sat(g.left), sat(g.right)
            out = [x and y for x, y in zip(a, b)]
        elif isinstance(g, OrF):
            a, b = sat(g.left), sat(g.right)
            out = [x or y for x, y in zip(a, b)]
        elif isinstance(g, Until):
            # least fixpoint of  b or (a and X u)
            a, b = sat(g.left), sat(g.right)
            out = [False] * n
            for _ in range(n + 1):
                out = [b[i] or (a[i] and out[succ[i]]) for i in range(n)]
        elif isinstance(g, Release):
            # greatest fixpoint of  b and (a or X r)
            a, b = sat(g.left), sat(g.right)
            out = [True] * n
            for _ in range(n + 1):
                out = [b[i] and (a[i] or out[succ[i]]) for i in range(n)]
        else:
            raise TypeError(g)
        memo[key] = out
        return out

    return sat(f)[0]


# -- model checking ----------------------------------------------------------------


@dataclass
class LassoStep:
    config: Configuration
    props: FrozenSet[str]
    events: List[TraceEvent]  # events of the transition into this state


@dataclass
class Counterexample:
    steps: List[LassoStep]
    loop_start: int  # the last step moves back to steps[loop_start]
    path: Tuple[int, ...]  # successor ordinals; -1 is a closing self-loop

    @property
    def stem(self) -> List[LassoStep]:
        return self.steps[: self.loop_start]

    @property
    def loop(self) -> List[LassoStep]:
        return self.steps[self.loop_start :]

    def to_json(self, formula: str = "", bound: Optional[int] = None) -> dict:
        return {
            "formula": formula,
            "time_bound": bound,
            "loop_start": self.loop_start,
            "path": list(self.path),
            "steps": [
                {
                    "t": s.config.now,
                    "props": sorted(s.props),
                    "events": [e.to_json() for e in s.events],
                }
                for s in self.steps
            ],
        }


@dataclass
class CheckResult:
    holds: bool
    counterexample: Optional[Counterexample]
    formula: LtlFormula
    time_bound: int
    states: int = 0
    product_states: int = 0
    automaton_states: int = 0
    seconds: float = 0.0
    method: str = "ndfs"  # "ndfs" | "invariant"


class _Layer:
    """Kripke and product bookkeeping for one time layer."""

    __slots__ = ("kid", "config", "label", "ksucc", "pid", "seeds", "psucc")

    def __init__(self):
        self.kid: Dict[tuple, int] = {}  # state key -> kripke id
        self.config: Dict[int, Configuration] = {}
        self.label: Dict[int, FrozenSet[str]] = {}
        self.ksucc: Dict[int, list] = {}
        self.pid: Dict[Tuple[int, int], int] = {}  # (kripke id, automaton state) -> product id
        self.seeds: List[int] = []
        self.psucc: Dict[int, list] = {}


class _Checker:
    def __init__(self, engine: Engine, spec, formula: LtlFormula, bound: int, mode: Exhaustive, max_states: Optional[int]):
        self.engine = engine
        self.bound = bound
        self.mode = mode
        self.max_states = max_states
        names = sorted(props_of(formula))
        for p in names:
            if p not in spec.props:
                raise SpecSemanticError(f"unknown proposition {p!r}")
        self.tests = [(p, compile_query(spec, spec.props[p])) for p in names]
        self.aut = to_buchi(NotF(formula))
        self.interner = _Interner()
        self.kstates = 0
        self.khash = array("q")  # hash of each Kripke state's canonical form, for replay
        # product nodes: parent product id, kripke ordinal of the parent edge
        self.ppar = array("q")
        self.pord = array("l")
        self.pkid: List[int] = []
        self.paut = array("l")

    def labels(self, c: Configuration) -> FrozenSet[str]:
        return frozenset(p for p, test in self.tests if test(c.model))

    def kstate(self, layer: _Layer, c: Configuration) -> int:
        key = self.interner.key(c)
        k = layer.kid.get(key)
        if k is None:
            k = layer.kid[key] = self.kstates
            self.kstates += 1
            self.khash.append(hash(canonicalize(c)))
            if self.max_states is not None and self.kstates > self.max_states:
                raise BudgetExceeded(f"state budget of {self.max_states} exceeded", self.kstates)
            layer.config[k] = c
            layer.label[k] = self.labels(c)
        return k

    def pnode(self, layer: _Layer, k: int, q: int, parent: int, ordinal: int) -> Tuple[int, bool]:
        key = (k, q)
        p = layer.pid.get(key)
        if p is not None:
            return p, False
        p = layer.pid[key] = len(self.pkid)
        self.ppar.append(parent)
        self.pord.append(ordinal)
        self.pkid.append(k)
        self.paut.append(q)
        return p, True

    def kripke_succ(self, layer: _Layer, nxt: _Layer, k: int) -> list:
        found = layer.ksucc.get(k)
        if found is None:
            c = layer.config[k]
            found = []
            for ordinal, (c2, _) in enumerate(self.engine.successors(c, self.bound, self.mode)):
                if c2.now == c.now:
                    found.append((self.kstate(layer, c2), ordinal, True))
                else:
                    found.append((self.kstate(nxt, c2), ordinal, False))
            if not found:
                found.append((k, -1, True))
            layer.ksucc[k] = found
        return found

    def product_succ(self, layer: _Layer, nxt: _Layer, p: int) -> list:
        found = layer.psucc.get(p)
        if found is not None:
            return found
        found = []
        aut = self.aut
        k, q = self.pkid[p], self.paut[p]
        for k2, ordinal, intra in self.kripke_succ(layer, nxt, k):
            target = layer if intra else nxt
            letter = target.label[k2]
            for q2 in aut.succ[q]:
                if not aut.admits(q2, letter):
                    continue
                p2, fresh = self.pnode(target, k2, q2, p, ordinal)
                if intra:
                    found.append((p2, ordinal))
                elif fresh:
                    nxt.seeds.append(p2)
        layer.psucc[p] = found
        return found

    def run(self, start: Configuration):
        layer, nxt = _Layer(), _Layer()
        k0 = self.kstate(layer, start)
        for q in self.aut.initial:
            if self.aut.admits(q, layer.label[k0]):
                p, _ = self.pnode(layer, k0, q, -1, 0)
                layer.seeds.append(p)
        while layer.seeds:
            cycle = self.ndfs(layer, nxt)
            if cycle is not None:
                return cycle
            layer, nxt = nxt, _Layer()
            if layer.config:
                self.interner.forget_before(min(c.now for c in layer.config.values()))
        return None

    def ndfs(self, layer: _Layer, nxt: _Layer):
        """Nested DFS restricted to intra-layer edges.  Returns the cycle as
        a list of ``(product id, ordinal into it)`` pairs, or ``None``."""
        accepting = self.aut.accepting
        paut = self.paut
        blue: set = set()
        red: set = set()
        for seed in layer.seeds:
            if seed in blue:
                continue
            cyan = {seed: 0}
            stack = [(seed, iter(self.product_succ(layer, nxt, seed)))]
            path = [seed]
            while stack:
                node, it = stack[-1]
                advanced = False
                for p2, _ in it:
                    if p2 in blue or p2 in cyan:
                        continue
                    cyan[p2] = len(path)
                    path.append(p2)
                    stack.append((p2, iter(self.product_succ(layer, nxt, p2))))
                    advanced = True
                    break
                if advanced:
                    continue
                if paut[node] in accepting:
                    found = self.red(layer, nxt, node, cyan, red)
                    if found is not None:
                        # cycle: blue path from the hit cyan state to node, then the red path back
                        hit, red_path = found
                        blue_part = path[cyan[hit]:]
                        return blue_part + red_path
                stack.pop()
                path.pop()
                del cyan[node]
                blue.add(node)
        return None

    def red(self, layer: _Layer, nxt: _Layer, seed: int, cyan: dict, red: set):
        stack = [(seed, iter(self.product_succ(layer, nxt, seed)))]
        trail = []
        while stack:
            node, it = stack[-1]
            advanced = False
            for p2, _ in it:
                if p2 in cyan:
                    return p2, trail + [p2]
                if p2 in red:
                    continue
                red.add(p2)
                trail.append(p2)
                stack.append((p2, iter(self.product_succ(layer, nxt, p2))))
                advanced = True
                break
            if not advanced:
                stack.pop()
                if trail:
                    trail.pop()
        return None

    def kripke_path(self, cycle: List[int]) -> Tuple[List[int], List[int]]:
        """Kripke ids from the initial state to the cycle, and around it."""
        stem = []
        p = cycle[0]
        while p >= 0:
            stem.append(self.pkid[p])
            p = self.ppar[p]
        stem.reverse()
        return stem, [self.pkid[p] for p in cycle[1:]]

    def replay_kids(self, start: Configuration, kids: Sequence[int]) -> Tuple[int, ...]:
        """Concrete successor ordinals visiting the given Kripke states.

        Kripke states are classes of isomorphic configurations, and the
        successor order of two isomorphic configurations may differ, so the
        ordinals are recomputed by matching canonical keys."""
        engine = self.engine
        c = start
        ordinals = []
        for k in kids:
            succ = engine.successors(c, self.bound, self.mode)
            if not succ:
                if hash(canonicalize(c)) != self.khash[k]:
                    raise TimedMTError("internal error: lasso leaves a state without successors")
                ordinals.append(-1)
                continue
            want = self.khash[k]
            for ordinal, (c2, _) in enumerate(succ):
                if hash(canonicalize(c2)) == want:
                    ordinals.append(ordinal)
                    c = c2
                    break
            else:
                raise TimedMTError("internal error: lasso step not found on replay")
        return tuple(ordinals)


def model_check(spec, model, formula, time_bound: int, mode: Exhaustive = Exhaustive(), engine: Optional[Engine] = None,
                max_states: Optional[int] = None, invariants: bool = True) -> CheckResult:
    """Check ``formula`` on the bounded, stutter-closed state graph.  With
    ``invariants`` false, ``[] p`` goes through the automaton like any
    other formula."""
    from .dsl import parse_formula

    if isinstance(formula, str):
        formula = parse_formula(formula, spec.props)
    for p in sorted(props_of(formula)):
        if p not in spec.props:
            raise SpecSemanticError(f"unknown proposition {p!r}")
    engine = engine or Engine(spec)
    began = time.perf_counter()
    start = engine.initial(model)
    state_part = invariant_body(formula) if invariants else None
    if state_part is not None:
        result = _check_invariant(engine, spec, formula, state_part, time_bound, mode, start, max_states)
        result.seconds = time.perf_counter() - began
        return result
    checker = _Checker(engine, spec, formula, time_bound, mode, max_states)
    cycle = checker.run(start)
    result = CheckResult(cycle is None, None, formula, time_bound, checker.kstates, len(checker.pkid), len(checker.aut))
    if cycle is not None:
        stem_kids, loop_kids = checker.kripke_path(cycle)
        ordinals = checker.replay_kids(start, stem_kids[1:] + loop_kids)
        n_stem = len(stem_kids) - 1
        result.counterexample = build_counterexample(
            engine, spec, formula, time_bound, mode, start, ordinals[:n_stem], ordinals[n_stem:]
        )
    result.seconds = time.perf_counter() - began
    return result


def _propositional(f: LtlFormula) -> bool:
    if isinstance(f, (TrueF, FalseF, Prop)):
        return True
    if isinstance(f, NotF):
        return _propositional(f.sub)
    if isinstance(f, (AndF, OrF, Implies)):
        return _propositional(f.left) and _propositional(f.right)
    return False


def invariant_body(f: LtlFormula) -> Optional[LtlFormula]:
    """``p`` if ``f`` is ``[] p`` with ``p`` propositional, else ``None``."""
    if isinstance(f, Always) and _propositional(f.sub):
        return f.sub
    return None


def state_query(f: LtlFormula, props: Dict[str, Expr]) -> Expr:
    """A propositional formula as a query expression over the spec's props."""
    if isinstance(f, TrueF):
        return Lit(True)
    if isinstance(f, FalseF):
        return Lit(False)
    if isinstance(f, Prop):
        return props[f.name]
    if isinstance(f, NotF):
        return Not(state_query(f.sub, props))
    op = {AndF: "and", OrF: "or", Implies: "implies"}[type(f)]
    return BinOp(op, state_query(f.left, props), state_query(f.right, props))


def _check_invariant(engine: Engine, spec, formula: LtlFormula, body: LtlFormula, bound: int, mode: Exhaustive,
                     start: Configuration, max_states: Optional[int]) -> CheckResult:
    found = search(spec, start.model, Not(state_query(body, spec.props)), bound, mode=mode, engine=engine,
                   max_states=max_states)
    result = CheckResult(not found.found, None, formula, bound, found.states, method="invariant")
    if found.found:
        # run on from the violating state to one without successors; the
        # last successor is the tick whenever time may advance, so optional
        # zero-time cycles (non-eager rules) are never followed
        stem = list(found.solutions[0].path)
        c = found.solutions[0].config
        while True:
            succ = engine.successors(c, bound, mode)
            if not succ:
                break
            stem.append(len(succ) - 1)
            c = succ[-1][0]
        result.counterexample = build_counterexample(engine, spec, formula, bound, mode, start, stem, [-1])
    return result


def build_counterexample(engine: Engine, spec, formula: LtlFormula, bound: int, mode: Exhaustive, start: Configuration,
                         stem: Sequence[int], loop: Sequence[int]) -> Counterexample:
    """Replay a lasso given as successor ordinals and check that it is a
    real path which violates ``formula``."""
    tests = [(p, compile_query(spec, spec.props[p])) for p in sorted(props_of(formula))]

    def label(c):
        return frozenset(p for p, test in tests if test(c.model))

    path = tuple(stem) + tuple(loop)
    steps = [LassoStep(start, label(start), [])]
    c = start
    for ordinal in path:
        if ordinal == -1:
            if engine.successors(c, bound, mode):
                raise TimedMTError("self-loop on a state that has successors")
            nxt, events = c, []
        else:
            succ = engine.successors(c, bound, mode)
            if not 0 <= ordinal < len(succ):
                raise TimedMTError("counterexample does not replay")
            nxt, raw = succ[ordinal]
            events = [engine.export(e) for e in raw]
        steps.append(LassoStep(nxt, label(nxt), events))
        c = nxt
    loop_start = len(stem)
    # the last step closes the loop: it must be the state at loop_start
    interner = _Interner()
    if interner.key(steps[-1].config) != interner.key(steps[loop_start].config):
        raise TimedMTError("counterexample loop does not close")
    steps.pop()
    cex = Counterexample(steps, loop_start, path)
    if holds_on_lasso(formula, [s.props for s in cex.stem], [s.props for s in cex.loop]):
        raise TimedMTError("counterexample does not violate the formula")
    return cex


def verify_counterexample(engine: Engine, spec, formula: LtlFormula, bound: int, mode: Exhaustive, model,
                          path: Sequence[int], loop_start: int) -> Counterexample:
    start = engine.initial(model)
    return build_counterexample(engine, spec, formula, bound, mode, start, path[:loop_start], path[loop_start:])
