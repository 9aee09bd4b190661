"""Time-bounded exhaustive exploration: canonical state keys, search and
reachable graphs.

States are explored one time layer at a time (all configurations at
``now = t`` before any at ``t + 1``), so the first solution found is
time-minimal.  Since ``now`` is part of every key, states of different
layers can never be merged, and only the visited set of the current and
next layer is kept in memory.  A path is stored as parent pointers plus
the ordinal of the successor taken, and rebuilt by replaying
:meth:`Engine.successors` from the initial configuration.
"""

from __future__ import annotations

import itertools
import time
from array import array
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .engine import Configuration, Engine, Event, Exhaustive, TraceEvent
from .errors import BudgetExceeded, EvalError, TimedMTError
from .expr import Expr, compile_expr
from .model import ModelState

# -- canonical keys ---------------------------------------------------------------


def _orderable(value):
    # attribute values are int/bool/str, or None in non-conforming models
    if value is None:
        return (0, 0)
    if isinstance(value, bool):
        return (1, int(value))
    if isinstance(value, int):
        return (2, value)
    return (3, value)


def _sig(obj) -> tuple:
    return (obj.cls, obj.name, tuple(_orderable(v) for v in obj.values))


def _model_part(model: ModelState):
    """``(index, part)`` where ``index`` maps oids to canonical positions if
    object signatures alone determine them, else ``None``."""
    memo = model.memo
    hit = memo.get("canon")
    if hit is not None:
        return hit
    objects = model.objects
    try:
        order = sorted(objects, key=lambda o: (objects[o].cls, objects[o].name, objects[o].values))
        sigs = [objects[o] for o in order]
        sigs = [(o.cls, o.name, o.values) for o in sigs]
    except TypeError:
        order = sorted(objects, key=lambda o: _sig(objects[o]))
        sigs = [(objects[o].cls, objects[o].name, objects[o].values) for o in order]
    unique = all(sigs[i] != sigs[i + 1] for i in range(len(sigs) - 1))
    if unique:
        index = {oid: i for i, oid in enumerate(order)}
        links = tuple(sorted((index[s], r, index[t]) for s, r, t in model.links))
        hit = (index, (tuple(sigs), links))
    else:
        hit = (None, None)
    memo["canon"] = hit
    return hit


def _agenda_part(c: Configuration, index: Dict[int, int]):
    now = c.now
    get = index.get
    agenda = tuple(sorted((e.rule, tuple(get(o, -1) for o in e.oids), e.lo - now, e.hi - now) for e in c.agenda))
    fired = tuple(sorted((r, tuple(sorted(get(o, -1) for o in oids))) for r, oids in c.fired))
    usage = tuple(sorted(((r, tuple(get(o, -1) for o in oids)), u) for (r, oids), u in c.usage))
    return agenda, fired, usage


def canonicalize(c: Configuration) -> tuple:
    """A key equal for two configurations iff they are the same up to a
    renaming of oids.  Trigger times and the zero-time step counter are not
    part of a state; deleted participants of pending actions all map to -1."""
    index, part = _model_part(c.model)
    if index is None:
        index, part = _refined_order(c)
    return (c.now, part) + _agenda_part(c, index)


def _refined_order(c: Configuration):
    """Colour refinement plus individualization, keeping the smallest key."""
    model = c.model
    objects = model.objects
    oids = sorted(objects)
    now = c.now
    sig = {o: _sig(objects[o]) for o in oids}
    ranks = {s: i for i, s in enumerate(sorted(set(sig.values())))}
    base = {o: ranks[sig[o]] for o in oids}

    # per-object structural neighbourhood: links and agenda roles
    adj: Dict[int, list] = {o: [] for o in oids}
    for s, r, t in model.links:
        adj[s].append(("out", r, t))
        adj[t].append(("in", r, s))
    roles: Dict[int, list] = {o: [] for o in oids}
    for e in c.agenda:
        for pos, o in enumerate(e.oids):
            if o in roles:
                roles[o].append(("a", e.rule, pos, e.lo - now, e.hi - now, tuple(x in objects for x in e.oids)))
    for r, key in c.fired:
        for pos, o in enumerate(key):
            if o in roles:
                roles[o].append(("f", r, pos))
    for (r, key), u in c.usage:
        for pos, o in enumerate(key):
            if o in roles:
                roles[o].append(("u", r, pos, u))
    for o in oids:
        roles[o].sort()

    def refine(colour):
        while True:
            sigs = {
                o: (colour[o], tuple(sorted((d, r, colour[x]) for d, r, x in adj[o])), tuple(roles[o]))
                for o in oids
            }
            ranking = {s: i for i, s in enumerate(sorted(set(sigs.values())))}
            new = {o: ranking[sigs[o]] for o in oids}
            if len(set(new.values())) == len(set(colour.values())):
                return new
            colour = new

    best = [None, None]

    def key_for(colour):
        order = sorted(oids, key=lambda o: colour[o])
        index = {o: i for i, o in enumerate(order)}
        part = (
            tuple((objects[o].cls, objects[o].name, objects[o].values) for o in order),
            tuple(sorted((index[s], r, index[t]) for s, r, t in model.links)),
        )
        full = (part,) + _agenda_part(c, index)
        return index, part, full

    def search(colour):
        counts: Dict[int, int] = {}
        for o in oids:
            counts[colour[o]] = counts.get(colour[o], 0) + 1
        tied = sorted(k for k, n in counts.items() if n > 1)
        if not tied:
            index, part, full = key_for(colour)
            rep = repr(full)  # total order even when values mix kinds
            if best[0] is None or rep < best[0][0]:
                best[0] = (rep, index, part)
            return
        cell = tied[0]
        for o in oids:
            if colour[o] == cell:
                split = {x: 2 * colour[x] + (0 if x == o else 1) for x in oids}
                search(refine(split))

    search(refine({o: base[o] for o in oids}))
    _, index, part = best[0]
    return index, part


# -- results --------------------------------------------------------------------------


@dataclass
class Solution:
    config: Configuration
    elapsed: int
    path: Tuple[int, ...]  # successor ordinals from the initial configuration
    events: List[TraceEvent]


@dataclass
class SearchResult:
    outcome: str  # "solution" | "no-solution" | "bound-exhausted"
    solutions: List[Solution]
    states: int
    transitions: int
    time_bound: int
    max_depth: Optional[int] = None
    seconds: float = 0.0
    peak_agenda: int = 0

    @property
    def found(self) -> bool:
        return bool(self.solutions)


class _Interner:
    """Maps the (large) model part of keys to small ints so per-state keys
    hash cheaply.  Ids are assigned per time layer; old layers are released
    with :meth:`forget_before`.  Ids cached in a model's memo are tagged
    with the interner's serial, since models (the initial one especially)
    are shared between runs."""

    _serials = itertools.count()

    def __init__(self):
        self.layers: Dict[int, Dict[tuple, int]] = {}
        self.serial = next(self._serials)

    def forget_before(self, now: int) -> None:
        for t in [t for t in self.layers if t < now]:
            del self.layers[t]

    def key(self, c: Configuration) -> tuple:
        now = c.now
        index, part = _model_part(c.model)
        ids = self.layers.get(now)
        if ids is None:
            ids = self.layers[now] = {}
        if index is None:
            index, part = _refined_order(c)
            mid = ids.setdefault(part, len(ids))
        else:
            memo = c.model.memo
            tag = ("mid", self.serial, now)
            mid = memo.get(tag)
            if mid is None:
                mid = memo[tag] = ids.setdefault(part, len(ids))
        return (now, mid) + _agenda_part(c, index)


def compile_query(spec, query) -> Callable[[ModelState], bool]:
    resolved = spec.resolve_query(query)
    fn = compile_expr(resolved)
    return lambda model: fn(model, {})


def replay(engine: Engine, path: Sequence[int], bound: int, mode: Exhaustive, start: Configuration):
    """Follow successor ordinals; returns the configurations and events."""
    c = start
    configs = [c]
    events: List[Event] = []
    for ordinal in path:
        succ = engine.successors(c, bound, mode)
        if not 0 <= ordinal < len(succ):
            raise TimedMTError(f"replay failed: step {len(configs)} has no successor #{ordinal}")
        c, evs = succ[ordinal]
        configs.append(c)
        events.extend(evs)
    return configs, events


class Explorer:
    """Breadth-first, time-layered exploration of the exhaustive semantics."""

    def __init__(self, engine: Engine, time_bound: int, mode: Exhaustive = Exhaustive(), max_depth: Optional[int] = None,
                 max_states: Optional[int] = None):
        if time_bound < 0:
            raise ValueError("time bound must be nonnegative")
        self.engine = engine
        self.bound = time_bound
        self.mode = mode
        self.max_depth = max_depth
        self.max_states = max_states
        self.parent = array("q")
        self.ordinal = array("l")
        self.depth = array("l")
        self.states = 0
        self.transitions = 0
        self.truncated = False
        self.peak_agenda = 0

    def _add(self, parent: int, ordinal: int, depth: int) -> int:
        self.parent.append(parent)
        self.ordinal.append(ordinal)
        self.depth.append(depth)
        self.states += 1
        if self.max_states is not None and self.states > self.max_states:
            raise BudgetExceeded(f"state budget of {self.max_states} exceeded", self.states)
        return self.states - 1

    def path_to(self, idx: int) -> Tuple[int, ...]:
        out = []
        while idx > 0:
            out.append(self.ordinal[idx])
            idx = self.parent[idx]
        return tuple(reversed(out))

    def run(self, start: Configuration, visit: Callable[[int, Configuration], bool]) -> bool:
        """Explore from ``start``; ``visit(index, config)`` is called once per
        distinct state and stops the run by returning True."""
        interner = _Interner()
        engine, bound, mode = self.engine, self.bound, self.mode
        max_depth = self.max_depth
        root = self._add(-1, 0, 0)
        if visit(root, start):
            return True
        layer_seen = {interner.key(start): root}
        queue = deque([(root, start)])
        next_seen: Dict[tuple, int] = {}
        next_queue: deque = deque()
        now = start.now
        while queue or next_queue:
            if not queue:
                queue, next_queue = next_queue, deque()
                layer_seen, next_seen = next_seen, {}
                now += 1
                interner.forget_before(now)
            idx, c = queue.popleft()
            d = self.depth[idx]
            if max_depth is not None and d >= max_depth:
                if engine.successors(c, bound, mode):
                    self.truncated = True
                continue
            succ = engine.successors(c, bound, mode)
            self.transitions += len(succ)
            for ordinal, (c2, _) in enumerate(succ):
                k = interner.key(c2)
                if c2.now == now:
                    seen, q = layer_seen, queue
                else:
                    seen, q = next_seen, next_queue
                if k in seen:
                    continue
                j = self._add(idx, ordinal, d + 1)
                seen[k] = j
                if len(c2.agenda) > self.peak_agenda:
                    self.peak_agenda = len(c2.agenda)
                if visit(j, c2):
                    return True
                q.append((j, c2))
        return False


def search(spec, model, query, time_bound: int, max_solutions: int = 1, max_depth: Optional[int] = None,
           mode: Exhaustive = Exhaustive(), engine: Optional[Engine] = None, max_states: Optional[int] = None,
           factor: Optional[bool] = None) -> SearchResult:
    """First configurations (in time-layered BFS order) whose model satisfies
    ``query``; the initial configuration is examined too.

    ``factor`` selects exploration with write-only attributes factored out
    (see :mod:`timedmt.factored`).  By default it is used whenever the spec
    has such attributes, the query is an expression and no depth bound is
    given.  Solutions are time-minimal either way."""
    from .factored import observer_slots

    engine = engine or Engine(spec)
    start = engine.initial(model)
    if factor is None:
        factor = not callable(query) and max_depth is None and bool(observer_slots(spec))
    if factor:
        if callable(query) or max_depth is not None:
            raise ValueError("factored search needs an expression query and no depth bound")
        return _factored_search(spec, engine, start, query, time_bound, max_solutions, mode, max_states)
    test = compile_query(spec, query) if not callable(query) else query
    explorer = Explorer(engine, time_bound, mode, max_depth, max_states)
    found: List[Tuple[int, Configuration]] = []
    began = time.perf_counter()

    def visit(idx, c):
        if test(c.model):
            found.append((idx, c))
            return len(found) >= max_solutions
        return False

    explorer.run(start, visit)
    solutions = []
    for idx, c in found:
        path = explorer.path_to(idx)
        _, events = replay(engine, path, time_bound, mode, start)
        solutions.append(Solution(c, c.now - start.now, path, [engine.export(e) for e in events]))
    if solutions:
        outcome = "solution"
    elif explorer.truncated:
        outcome = "bound-exhausted"
    else:
        outcome = "no-solution"
    return SearchResult(outcome, solutions, explorer.states, explorer.transitions, time_bound, max_depth,
                        time.perf_counter() - began, explorer.peak_agenda)


def _factored_search(spec, engine, start, query, time_bound, max_solutions, mode, max_states) -> SearchResult:
    from .factored import FactoredExplorer, FactoredQuery, footprint, observer_slots

    observers = observer_slots(spec)
    resolved = spec.resolve_query(query)
    fn = compile_expr(resolved)
    fq = FactoredQuery(lambda m: fn(m, {}), footprint(resolved, spec.metamodel), observers, spec.metamodel)
    explorer = FactoredExplorer(engine, time_bound, observers, mode, max_states)
    found: List[Tuple[int, tuple]] = []
    began = time.perf_counter()

    def visit(entry, c, layout, delta):
        for w in sorted(fq.hits(c, layout, delta), key=repr):
            found.append((entry, w))
            if len(found) >= max_solutions:
                return True
        return False

    explorer.run(start, visit)
    solutions = []
    for entry, w in found:
        path = explorer.path_to(entry, w)
        configs, events = replay(engine, path, time_bound, mode, start)
        c = configs[-1]
        solutions.append(Solution(c, c.now - start.now, path, [engine.export(e) for e in events]))
    return SearchResult("solution" if solutions else "no-solution", solutions, explorer.states, explorer.transitions,
                        time_bound, None, time.perf_counter() - began, explorer.peak_agenda)


# -- explicit Kripke structures ------------------------------------------------------


@dataclass
class KripkeStructure:
    configs: List[Configuration]
    succ: List[List[Tuple[int, int]]]  # (target, successor ordinal); ordinal -1 marks a closing self-loop
    labels: Dict[str, frozenset]
    initial: int = 0
    frontier: frozenset = frozenset()

    def __len__(self):
        return len(self.configs)

    def props_at(self, state: int) -> frozenset:
        return frozenset(p for p, states in self.labels.items() if state in states)


def reachable_graph(spec, model, props: Dict[str, Expr], time_bound: int, mode: Exhaustive = Exhaustive(),
                    engine: Optional[Engine] = None, max_states: Optional[int] = 200000) -> KripkeStructure:
    """The whole bounded state graph, labelled; states without successors
    (at the bound, or deadlocked) get a self-loop."""
    engine = engine or Engine(spec)
    tests = {name: compile_query(spec, e) for name, e in props.items()}
    interner = _Interner()
    start = engine.initial(model)
    index = {interner.key(start): 0}
    configs = [start]
    succ: List[List[Tuple[int, int]]] = []
    frontier = set()
    i = 0
    while i < len(configs):
        c = configs[i]
        edges = []
        for ordinal, (c2, _) in enumerate(engine.successors(c, time_bound, mode)):
            k = interner.key(c2)
            j = index.get(k)
            if j is None:
                j = index[k] = len(configs)
                configs.append(c2)
                if max_states is not None and len(configs) > max_states:
                    raise BudgetExceeded(f"state budget of {max_states} exceeded", len(configs))
            edges.append((j, ordinal))
        if not edges:
            edges.append((i, -1))
            frontier.add(i)
        succ.append(edges)
        i += 1
    labels = {name: frozenset(s for s, c in enumerate(configs) if test(c.model)) for name, test in tests.items()}
    return KripkeStructure(configs, succ, labels, 0, frozenset(frontier))
