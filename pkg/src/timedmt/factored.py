"""Exhaustive exploration with write-only attributes factored out.

An attribute that rules assign but never read (an *observer*, like a
measured round trip time) cannot influence which rules fire, when, or what
any other attribute becomes.  Two configurations that differ only in
observer values have the same successors up to those values.  So instead of
one entry per concrete state, the explorer keeps one representative per
class, with every observer slot set to :data:`HOLE`, plus the set of observer
value tuples reached in that class.  A transition maps the whole set at once:
each slot of the successor either keeps the value of a slot of the parent or
gets a constant written by the transition.

The concrete states visited are exactly those of the plain explorer (same
time layers, same canonical dedup), only in a different order inside an
instant.  Paths to individual concrete states are rebuilt on demand.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from operator import itemgetter
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

from .engine import Configuration, Engine, Exhaustive
from .errors import BudgetExceeded, TimedMTError
from .expr import AllInstances, Attr, BinOp, Expr, Not, ObjLit, Quant
from .explore import _Interner, _model_part, _refined_order
from .model import Metamodel, ModelState
from .rules import write_values


class _Hole:
    """Stands for an observer value in a representative configuration."""

    __slots__ = ()

    def __lt__(self, other):
        return False

    __gt__ = __lt__

    def __le__(self, other):
        return other is self

    __ge__ = __le__

    def __hash__(self):
        return 0x686F6C65

    def __repr__(self):
        return "?"

    def __reduce__(self):
        return "HOLE"


HOLE = _Hole()

Slot = Tuple[int, int]  # (oid, attribute index)


# -- static analysis ----------------------------------------------------------------


def _read_attrs(e: Optional[Expr], acc: set) -> None:
    if e is None:
        return
    if isinstance(e, Attr):
        acc.add(e.name)
        _read_attrs(e.obj, acc)
    elif isinstance(e, Not):
        _read_attrs(e.operand, acc)
    elif isinstance(e, BinOp):
        _read_attrs(e.left, acc)
        _read_attrs(e.right, acc)
    elif isinstance(e, Quant):
        _read_attrs(e.coll, acc)
        _read_attrs(e.body, acc)


def observer_slots(spec) -> Dict[str, Tuple[int, ...]]:
    """Per concrete metaclass, the indexes of attributes that some rule
    assigns and no rule reads.  Attributes are matched by name, which only
    errs on the side of treating an attribute as read."""
    read: Set[str] = set()
    written: Set[str] = set()
    for rule in spec.rules:
        for pattern in (rule.lhs,) + tuple(rule.nacs):
            for node in pattern.nodes:
                _read_attrs(node.guard, read)
        if rule.rhs is not None:
            for keep in rule.rhs.keeps:
                for a in keep.updates:
                    written.add(a.attr)
                    _read_attrs(a.expr, read)
            for create in rule.rhs.creates:
                for a in create.inits:
                    _read_attrs(a.expr, read)
        for eff in rule.effects:
            written.add(eff.attr)
            _read_attrs(eff.expr, read)
    observers = written - read
    mm = spec.metamodel
    out = {}
    for mc in mm.metaclasses:
        if mc.abstract:
            continue
        idx = tuple(i for i, a in enumerate(mm.attributes(mc.name)) if a.name in observers)
        if idx:
            out[mc.name] = idx
    return out


@dataclass(frozen=True)
class Footprint:
    """What a resolved query can look at: the instances of ``classes``
    (closed under subclassing), the objects called ``names``, and the
    attributes ``attrs`` of those."""

    attrs: FrozenSet[str]
    classes: FrozenSet[str]
    names: Tuple[str, ...]


def footprint(e: Expr, mm: Metamodel) -> Footprint:
    attrs: Set[str] = set()
    classes: Set[str] = set()
    names: Set[str] = set()

    def walk(x):
        if x is None:
            return
        if isinstance(x, Attr):
            attrs.add(x.name)
            walk(x.obj)
        elif isinstance(x, AllInstances):
            classes.update(mm.descendants(x.cls))
        elif isinstance(x, ObjLit):
            names.add(x.name)
        elif isinstance(x, Not):
            walk(x.operand)
        elif isinstance(x, BinOp):
            walk(x.left)
            walk(x.right)
        elif isinstance(x, Quant):
            walk(x.coll)
            walk(x.body)

    walk(e)
    return Footprint(frozenset(attrs), frozenset(classes), tuple(sorted(names)))


# -- queries over classes of states --------------------------------------------------


class FactoredQuery:
    """Evaluates a boolean query on every concrete state of an entry.

    If the query reads no observer attribute it is evaluated once on the
    representative.  Otherwise results are memoized on the part of the
    state the query can see, so each distinct combination of observer
    values is evaluated once rather than once per state."""

    def __init__(self, test: Callable[[ModelState], bool], fp: Footprint, observers: Dict[str, Tuple[int, ...]], mm: Metamodel):
        self.test = test
        self.fp = fp
        names = {a.name for cls, idx in observers.items() for i, a in enumerate(mm.attributes(cls)) if i in idx}
        self.independent = not (fp.attrs & names)
        self.memo: Dict[tuple, Tuple[set, set]] = {}

    def hits(self, c: Configuration, layout: Tuple[Slot, ...], delta: Set[tuple]) -> Iterable[tuple]:
        model = c.model
        if self.independent:
            return delta if self.test(model) else ()
        fp = self.fp
        rel = set()
        for cls in fp.classes:
            rel.update(model.instances(cls))
        named = tuple(model.by_name(n) for n in fp.names)
        rel.update(o for o in named if o is not None)
        positions = [j for j, (oid, _) in enumerate(layout) if oid in rel]
        objects = model.objects
        key = (tuple((o, objects[o]) for o in sorted(rel)), named, tuple(layout[j] for j in positions))
        cached = self.memo.get(key)
        if cached is None:
            if len(self.memo) > 100000:
                self.memo.clear()
            cached = self.memo[key] = (set(), set())
        known, bad = cached
        if len(positions) == len(layout):
            project = None
            seen = delta
        else:
            project = _getter(positions)
            seen = {project(w) for w in delta}
        slots = key[2]
        for v in seen - known:
            if self.test(write_values(model, [(o, i, x) for (o, i), x in zip(slots, v)])):
                bad.add(v)
            known.add(v)
        if bad.isdisjoint(seen):
            return ()
        if project is None:
            return delta & bad
        return [w for w in delta if project(w) in bad]


def _getter(positions: Sequence[int]) -> Callable[[tuple], tuple]:
    if not positions:
        return lambda w: ()
    if len(positions) == 1:
        j = positions[0]
        return lambda w: (w[j],)
    return itemgetter(*positions)


# -- the explorer ---------------------------------------------------------------------


class FactoredExplorer:
    """Time-layered BFS over (representative, set of observer tuples)."""

    def __init__(self, engine: Engine, time_bound: int, observers: Dict[str, Tuple[int, ...]],
                 mode: Exhaustive = Exhaustive(), max_states: Optional[int] = None):
        if time_bound < 0:
            raise ValueError("time bound must be nonnegative")
        self.engine = engine
        self.bound = time_bound
        self.mode = mode
        self.observers = observers
        self._layout_tag = ("layout", tuple(sorted(observers.items())))
        self.max_states = max_states
        self.contrib: List[List[Tuple[int, int]]] = []  # per entry: (parent entry, successor ordinal)
        self.states = 0
        self.transitions = 0
        self.entries = 0
        self.peak_agenda = 0
        self.start: Optional[Configuration] = None
        self.w0: tuple = ()

    # -- splitting configurations

    def split(self, c: Configuration, interner: _Interner):
        """``(representative, layout, constants, key)``: observer slots of
        ``c`` holding values are replaced by holes and reported in
        ``constants``; ``layout`` lists all observer slots in canonical
        order."""
        model = c.model
        observers = self.observers
        consts: Dict[Slot, object] = {}
        writes = []
        for oid, obj in model.objects.items():
            idx = observers.get(obj.cls)
            if idx:
                values = obj.values
                for i in idx:
                    v = values[i]
                    if v is not HOLE:
                        consts[(oid, i)] = v
                        writes.append((oid, i, HOLE))
        if writes:
            c = c._replace(model=write_values(model, writes))
            model = c.model
        layout = model.memo.get(self._layout_tag)
        if layout is None:
            index, _ = _model_part(model)
            fast = index is not None
            if not fast:
                index, _ = _refined_order(c)
            slots = [(oid, i) for oid, obj in model.objects.items() for i in observers.get(obj.cls, ())]
            slots.sort(key=lambda s: (index[s[0]], s[1]))
            layout = tuple(slots)
            if fast:
                model.memo[self._layout_tag] = layout
        return c, layout, consts, interner.key(c)

    @staticmethod
    def recipe(parent_layout: Tuple[Slot, ...], layout: Tuple[Slot, ...], consts: Dict[Slot, object]):
        """``None`` for the identity, else ``(sources, constants, n)`` where
        ``n`` is the parent tuple length and a source ``j >= n`` picks a
        constant."""
        if not consts and layout == parent_layout:
            return None
        ppos = {s: j for j, s in enumerate(parent_layout)}
        n = len(parent_layout)
        src = []
        cvals = []
        for s in layout:
            if s in consts:
                src.append(n + len(cvals))
                cvals.append(consts[s])
            else:
                src.append(ppos[s])
        return tuple(src), tuple(cvals), n

    @staticmethod
    def image(delta: Set[tuple], recipe, pool: dict) -> Set[tuple]:
        if recipe is None:
            return delta
        src, cvals, _ = recipe
        get = _getter(src)
        intern = pool.setdefault
        if cvals:
            return {intern(t, t) for t in (get(w + cvals) for w in delta)}
        return {intern(t, t) for t in map(get, delta)}

    def _count(self, n: int) -> None:
        self.states += n
        if self.max_states is not None and self.states > self.max_states:
            raise BudgetExceeded(f"state budget of {self.max_states} exceeded", self.states)

    def run(self, start: Configuration, visit: Callable[[int, Configuration, tuple, Set[tuple]], bool]) -> bool:
        """``visit(entry, representative, layout, new_tuples)`` is called
        for every entry; returning True stops the run."""
        engine, bound, mode = self.engine, self.bound, self.mode
        interner = _Interner()
        pool: dict = {}
        self.start = start
        h0, layout0, consts0, k0 = self.split(start, interner)
        self.w0 = tuple(consts0[s] for s in layout0)
        contrib = self.contrib
        contrib.append([(-1, 0)])
        self._count(1)
        pending: Dict[int, Set[tuple]] = {0: {self.w0}}
        reps: Dict[int, tuple] = {0: (h0, layout0)}
        layer_seen = {k0: [0, {self.w0}]}
        next_seen: Dict[tuple, list] = {}
        queue, next_queue = deque([0]), deque()
        now = start.now

        def new_entry(parent, ordinal, rep, layout, members, q):
            j = len(contrib)
            contrib.append([(parent, ordinal)])
            pending[j] = members
            reps[j] = (rep, layout)
            q.append(j)
            if len(rep.agenda) > self.peak_agenda:
                self.peak_agenda = len(rep.agenda)
            return j

        while queue or next_queue:
            if not queue:
                queue, next_queue = next_queue, deque()
                layer_seen, next_seen = next_seen, {}
                now += 1
                interner.forget_before(now)
                pool = {}
            e = queue.popleft()
            delta = pending.pop(e)
            c, layout = reps.pop(e)
            if visit(e, c, layout, delta):
                return True
            succ = engine.successors(c, bound, mode)
            self.transitions += len(succ) * len(delta)
            for ordinal, (c2, _) in enumerate(succ):
                h2, layout2, consts2, k = self.split(c2, interner)
                members = self.image(delta, self.recipe(layout, layout2, consts2), pool)
                if h2.now == now:
                    seen, q = layer_seen, queue
                else:
                    seen, q = next_seen, next_queue
                rec = seen.get(k)
                if rec is None:
                    self._count(len(members))
                    seen[k] = [new_entry(e, ordinal, h2, layout2, set(members), q), set(members)]
                    continue
                j, known = rec
                fresh = members - known
                if not fresh:
                    continue
                self._count(len(fresh))
                known |= fresh
                if j in pending:
                    pending[j] |= fresh
                    contrib[j].append((e, ordinal))
                else:
                    rec[0] = new_entry(e, ordinal, h2, layout2, fresh, q)
        self.entries = len(contrib)
        return False

    # -- witnesses

    def _child(self, parent: tuple, ordinal: int, interner: _Interner):
        c, layout = parent
        succ = self.engine.successors(c, self.bound, self.mode)
        h2, layout2, consts, key = self.split(succ[ordinal][0], interner)
        return (h2, layout2), self.recipe(layout, layout2, consts), key

    def path_to(self, entry: int, w: tuple) -> Tuple[int, ...]:
        """Successor ordinals leading from the initial configuration to the
        concrete state ``(entry, w)``."""
        interner = _Interner()
        reps: Dict[int, tuple] = {}

        def rep(e: int) -> tuple:
            chain = []
            x = e
            while x not in reps and x != 0:
                chain.append(x)
                x = self.contrib[x][0][0]
            if 0 not in reps:
                h0, layout0, _, _ = self.split(self.start, interner)
                reps[0] = (h0, layout0)
            for x in reversed(chain):
                p, o = self.contrib[x][0]
                reps[x], _, _ = self._child(reps[p], o, interner)
            return reps[e]

        # backward search for a chain of contributions whose value constraints
        # are met by the initial tuple
        target = {j: v for j, v in enumerate(w)}
        failed: Set[tuple] = set()
        stack = [(entry, target, iter(self.contrib[entry]))]
        chain: List[Tuple[int, int]] = []
        while stack:
            e, pattern, it = stack[-1]
            if e == 0 and all(self.w0[j] == v for j, v in pattern.items()):
                break
            step = None
            for p, o in it:
                if p < 0:
                    continue
                _, rcp, _ = self._child(rep(p), o, interner)
                pre = _preimage(pattern, rcp)
                if pre is None:
                    continue
                sig = (p, tuple(sorted(pre.items())))
                if sig in failed:
                    continue
                step = (p, o, pre)
                break
            if step is None:
                failed.add((e, tuple(sorted(pattern.items()))))
                stack.pop()
                if chain:
                    chain.pop()
                continue
            p, o, pre = step
            chain.append((p, o))
            stack.append((p, pre, iter(self.contrib[p])))
        else:
            raise TimedMTError("internal error: no concrete path to a reached state")
        chain.reverse()
        return self._concrete(chain, rep, interner)

    def _concrete(self, chain: List[Tuple[int, int]], rep, interner: _Interner) -> Tuple[int, ...]:
        """Turn entry-level steps into ordinals on concrete configurations,
        matching successors by representative key and observer tuple."""
        engine = self.engine
        c = self.start
        w = self.w0
        ordinals = []
        for p, o in chain:
            _, rcp, key = self._child(rep(p), o, interner)
            w = next(iter(self.image({w}, rcp, {})))
            for ordinal, (c2, _) in enumerate(engine.successors(c, self.bound, self.mode)):
                _, layout2, consts2, k2 = self.split(c2, interner)
                if k2 == key and tuple(consts2[s] for s in layout2) == w:
                    ordinals.append(ordinal)
                    c = c2
                    break
            else:
                raise TimedMTError("internal error: witness step not found on replay")
        return tuple(ordinals)


def _preimage(pattern: Dict[int, object], recipe) -> Optional[Dict[int, object]]:
    """Constraints on the parent tuple under which the transition yields a
    tuple matching ``pattern``; ``None`` if no parent tuple does."""
    if recipe is None:
        return pattern
    src, cvals, n = recipe
    out: Dict[int, object] = {}
    for j, v in pattern.items():
        s = src[j]
        if s >= n:
            if cvals[s - n] != v:
                return None
            continue
        if out.get(s, v) != v:
            return None
        out[s] = v
    return out
