"""Timed operational semantics and the simulation driver.

Time is a nonnegative integer and advances one unit at a time.  Within an
instant the engine repeats micro-steps until quiescent:

1. realize one agenda entry that is due now (abort it if its match is gone);
2. otherwise trigger every eager atomic match that is not already
   scheduled with the same participants (periodic rules only at multiples
   of their period, once per period instant);
3. otherwise the instant is quiescent: non-eager rules may fire, or time
   advances, applying ongoing effects with ``T = 1`` first.

Under a :class:`Policy` every choice is resolved deterministically, giving a
single run.  :meth:`Engine.successors` instead returns every choice, which
is what search and model checking explore.  With ``branching="lazy"`` the
duration of an atomic action is not picked at trigger time; the entry keeps
an undecided window and, at each tick inside it, branches between
realizing now and waiting one more unit.  Both forms reach the same model
sequences; the lazy one shares far more states.
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

from .errors import LivelockError, RuleApplicationError, SpecSemanticError
from .model import ModelState
from .rules import CompiledRule, write_values

ABORT_MODES = ("full-lhs", "existence")


class ScheduledAction(NamedTuple):
    """A triggered atomic action.  ``lo == hi`` means its due time is fixed;
    otherwise it will be realized at some instant of ``[lo, hi]``."""

    rule: int
    oids: Tuple[int, ...]
    trigger: int
    lo: int
    hi: int

    @property
    def committed(self) -> bool:
        return self.lo == self.hi


class Configuration(NamedTuple):
    model: ModelState
    now: int
    agenda: Tuple[ScheduledAction, ...]
    next_oid: int
    fired: frozenset = frozenset()  # periodic (rule, participants) already triggered at this instant
    usage: tuple = ()  # ((rule, oids), used) for ongoing rules with a limit
    micro: int = 0  # zero-time steps taken at this instant


class Event(NamedTuple):
    """Raw trace event; ``rule`` is an index into the spec's rules."""

    t: int
    kind: str
    rule: Optional[int] = None
    oids: Tuple[int, ...] = ()
    info: tuple = ()  # kind-specific (name, value) pairs


@dataclass(frozen=True)
class TraceEvent:
    t: int
    kind: str  # Triggered Realized Aborted TimeAdvance OngoingApplied
    rule: Optional[str] = None
    participants: Tuple[int, ...] = ()
    extra: Tuple[Tuple[str, object], ...] = ()

    def get(self, key, default=None):
        return dict(self.extra).get(key, default)

    def to_json(self) -> dict:
        record = {"t": self.t, "kind": self.kind, "rule": self.rule, "participants": list(self.participants)}
        record.update(self.extra)
        return record


@dataclass(frozen=True)
class Policy:
    """How a simulation resolves nondeterminism.

    ``durations`` is ``min``, ``max`` or ``uniform``; ``non_eager`` is
    ``never``, ``always`` or ``p`` (each enabled match fires with
    probability ``p``, decided once per instant).  Ties are broken by rule
    declaration order, then by oid.
    """

    durations: str = "min"
    non_eager: str = "never"
    p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.durations not in ("min", "max", "uniform"):
            raise ValueError(f"unknown duration policy {self.durations!r}")
        if self.non_eager not in ("never", "always", "p"):
            raise ValueError(f"unknown non-eager policy {self.non_eager!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("probability must lie in [0, 1]")


@dataclass(frozen=True)
class Exhaustive:
    """Branch over every choice.  ``non_eager``: ``branch``, ``never`` or
    ``always`` (treat non-eager rules as eager)."""

    branching: str = "lazy"
    non_eager: str = "branch"

    def __post_init__(self):
        if self.branching not in ("lazy", "eager"):
            raise ValueError(f"unknown branching {self.branching!r}")
        if self.non_eager not in ("branch", "never", "always"):
            raise ValueError(f"unknown non-eager mode {self.non_eager!r}")


def _key(oids) -> Tuple[int, ...]:
    return tuple(sorted(oids))


class Engine:
    def __init__(self, spec, abort_on: str = "full-lhs", livelock_limit: int = 10000):
        if abort_on not in ABORT_MODES:
            raise ValueError(f"abort_on must be one of {ABORT_MODES}")
        self.spec = spec
        self.abort_on = abort_on
        self.livelock_limit = livelock_limit
        self.rules: Tuple[CompiledRule, ...] = spec.compiled_rules()
        self.eager = tuple(cr for cr in self.rules if cr.rule.atomic and cr.rule.eager)
        self.non_eager = tuple(cr for cr in self.rules if cr.rule.atomic and not cr.rule.eager)
        self.ongoing = tuple(cr for cr in self.rules if not cr.rule.atomic)

    # -- basics

    def initial(self, model) -> Configuration:
        if isinstance(model, str):
            model = self.spec.model(model)
        return Configuration(model, 0, (), model.next_oid())

    def rule_name(self, index: int) -> str:
        return self.rules[index].name

    def matches(self, cr: CompiledRule, model: ModelState) -> List[Tuple[int, ...]]:
        memo = model.memo
        key = ("m", cr)  # the compiled rule itself: models may be shared between specs
        found = memo.get(key)
        if found is None:
            found = memo[key] = cr.matches(model)
        return found

    def due(self, c: Configuration) -> List[ScheduledAction]:
        now = c.now
        return [e for e in c.agenda if e.hi == now and e.lo == now]

    def is_valid(self, c: Configuration, entry: ScheduledAction) -> bool:
        objects = c.model.objects
        if any(o not in objects for o in entry.oids):
            return False
        if self.abort_on == "existence":
            return True
        return self.rules[entry.rule].is_match(c.model, entry.oids)

    def _excluded(self, c: Configuration) -> set:
        out = {(e.rule, _key(e.oids)) for e in c.agenda}
        out.update(c.fired)
        return out

    def _enabled(self, c: Configuration, rules: Sequence[CompiledRule]) -> List[Tuple[int, Tuple[int, ...]]]:
        now = c.now
        excluded = None
        out = []
        for cr in rules:
            period = cr.rule.period
            if period is not None and now % period:
                continue
            ms = self.matches(cr, c.model)
            if not ms:
                continue
            if excluded is None:
                excluded = self._excluded(c)
            idx = cr.index
            for oids in ms:
                if (idx, _key(oids)) not in excluded:
                    out.append((idx, oids))
        return out

    def triggerable(self, c: Configuration, include_non_eager: bool = False):
        """Eager matches that must be scheduled now, in tie order."""
        found = self._enabled(c, self.eager)
        if include_non_eager:
            found += self._enabled(c, self.non_eager)
            found.sort()
        return found

    def non_eager_enabled(self, c: Configuration):
        return self._enabled(c, self.non_eager)

    # -- transitions

    def realize(self, c: Configuration, entry: ScheduledAction) -> Tuple[Configuration, Event]:
        agenda = tuple(e for e in c.agenda if e is not entry)
        if len(agenda) == len(c.agenda):
            agenda = list(c.agenda)
            agenda.remove(entry)
            agenda = tuple(agenda)
        info = (("trigger", entry.trigger), ("due", c.now))
        if self.is_valid(c, entry):
            cr = self.rules[entry.rule]
            model, next_oid = cr.apply(c.model, entry.oids, c.next_oid)
            event = Event(c.now, "Realized", entry.rule, entry.oids, info)
            return c._replace(model=model, agenda=agenda, next_oid=next_oid, micro=c.micro + 1), event
        event = Event(c.now, "Aborted", entry.rule, entry.oids, info)
        return c._replace(agenda=agenda, micro=c.micro + 1), event

    def schedule(self, c: Configuration, triggers, windows) -> Tuple[Configuration, List[Event]]:
        """Add one agenda entry per trigger with the given absolute ``(lo, hi)``."""
        now = c.now
        agenda = list(c.agenda)
        fired = c.fired
        events = []
        new_fired = []
        for (idx, oids), (lo, hi) in zip(triggers, windows):
            agenda.append(ScheduledAction(idx, oids, now, lo, hi))
            if self.rules[idx].rule.period is not None:
                new_fired.append((idx, _key(oids)))
            info = (("due", lo),) if lo == hi else (("window", [lo, hi]),)
            events.append(Event(now, "Triggered", idx, oids, info))
        if new_fired:
            fired = fired | frozenset(new_fired)
        agenda.sort()
        return c._replace(agenda=tuple(agenda), fired=fired, micro=c.micro + 1), events

    def apply_ongoing(self, c: Configuration, delta: int) -> Tuple[Configuration, List[Event]]:
        """Apply every ongoing rule for ``delta`` units, all matches read from the pre-state."""
        if delta == 0 or not self.ongoing:
            return c, []
        model = c.model
        usage = dict(c.usage)
        writes = []
        written: Dict[Tuple[int, int], str] = {}
        events = []
        for cr in self.ongoing:
            limit = cr.rule.limit
            count = 0
            for oids in self.matches(cr, model):
                elapsed = delta
                if limit is not None:
                    used = usage.get((cr.index, oids), 0)
                    elapsed = min(delta, limit - used)
                    if elapsed <= 0:
                        continue
                    usage[(cr.index, oids)] = used + elapsed
                for w in cr.effect_writes(model, oids, elapsed):
                    slot = (w[0], w[1])
                    other = written.get(slot)
                    if other is not None:
                        obj = model.objects[w[0]]
                        attr = model.mm.attributes(obj.cls)[w[1]].name
                        raise RuleApplicationError(
                            f"ongoing rules {other} and {cr.name} both write {obj.name or w[0]}.{attr} in one step"
                        )
                    written[slot] = cr.name
                    writes.append(w)
                count += 1
            if count:
                events.append(Event(c.now, "OngoingApplied", cr.index, (), (("count", count), ("delta", delta))))
        if usage:
            objects = model.objects
            usage = {k: v for k, v in usage.items() if all(o in objects for o in k[1])}
        return c._replace(model=write_values(model, writes), usage=tuple(sorted(usage.items()))), events

    def advance(self, c: Configuration) -> Tuple[Configuration, List[Event]]:
        """One unit tick: ``now + 1``, then ongoing effects with ``T = 1``."""
        for e in c.agenda:
            if e.lo == e.hi == c.now:
                raise RuntimeError("advance with an action due now")
        c = c._replace(now=c.now + 1, fired=frozenset(), micro=0)
        c, events = self.apply_ongoing(c, 1)
        return c, [Event(c.now, "TimeAdvance", None, (), (("delta", 1),))] + events

    # -- exhaustive successor relation

    def _windows(self, idx: int, now: int, branching: str) -> List[Tuple[int, int]]:
        rule = self.rules[idx].rule
        lo, hi = now + rule.lo, now + rule.hi
        if lo == hi:
            return [(lo, lo)]
        if branching == "eager":
            return [(d, d) for d in range(lo, hi + 1)]
        if lo == now:
            rest = (now + 1, hi)
            return [(now, now), rest]
        return [(lo, hi)]

    def _trigger_branches(self, c: Configuration, triggers, branching: str):
        options = [self._windows(idx, c.now, branching) for idx, _ in triggers]
        out = []
        for windows in itertools.product(*options):
            out.append(self.schedule(c, triggers, windows))
        return out

    def _advance_branches(self, c: Configuration):
        c1, events = self.advance(c)
        # windows only arise from lazy triggers, but resolve them whatever the
        # mode so any configuration can be explored either way
        now = c1.now
        pending = [i for i, e in enumerate(c1.agenda) if e.lo == now and e.hi > now]
        if not pending:
            return [(c1, events)]
        objects = c1.model.objects
        options = []
        for i in pending:
            e = c1.agenda[i]
            commit = e._replace(hi=now)
            if any(o not in objects for o in e.oids):
                options.append((commit,))  # participants gone: it can only abort
            else:
                options.append((commit, e._replace(lo=now + 1)))
        out = []
        for choice in itertools.product(*options):
            agenda = list(c1.agenda)
            for i, e in zip(pending, choice):
                agenda[i] = e
            agenda.sort()
            out.append((c1._replace(agenda=tuple(agenda)), events))
        return out

    def successors(self, c: Configuration, bound: int, mode: Exhaustive = Exhaustive()) -> List[Tuple[Configuration, List[Event]]]:
        """All one-step successors, in a fixed order.  Empty iff ``c`` is
        quiescent at ``bound`` with nothing left to fire."""
        if c.micro >= self.livelock_limit:
            raise LivelockError(
                f"instantaneous livelock at t={c.now}: more than {self.livelock_limit} zero-time steps",
                tuple(sorted({self.rule_name(e.rule) for e in c.agenda})),
            )
        now = c.now
        due = [e for e in c.agenda if e.lo == now and e.hi == now]
        if due:
            out = []
            for e in due:
                c1, ev = self.realize(c, e)
                out.append((c1, [ev]))
            return out
        triggers = self.triggerable(c, include_non_eager=mode.non_eager == "always")
        if triggers:
            return self._trigger_branches(c, triggers, mode.branching)
        out = []
        if mode.non_eager == "branch":
            for trig in self.non_eager_enabled(c):
                out.extend(self._trigger_branches(c, [trig], mode.branching))
        if now < bound:
            out.extend(self._advance_branches(c))
        return out

    def step(self, c: Configuration, mode, bound: Optional[int] = None) -> List[Configuration]:
        """Successor configurations under a policy (one) or exhaustively (all)."""
        if isinstance(mode, Exhaustive):
            return [s for s, _ in self.successors(c, c.now + 1 if bound is None else bound, mode)]
        run = _PolicyRun(self, mode)
        return [run.step(c, c.now + 1 if bound is None else bound)[0]]

    # -- simulation

    def simulate(self, model, time_bound: int, policy: Policy = Policy()) -> Tuple[List[TraceEvent], Configuration]:
        """Run instants ``0 .. time_bound - 1`` to quiescence, ending with the
        tick that reaches ``time_bound``.  With bound 0 only the initial
        instant runs."""
        if time_bound < 0:
            raise ValueError("time bound must be nonnegative")
        c = self.initial(model)
        run = _PolicyRun(self, policy)
        events: List[Event] = []
        if time_bound == 0:
            c, events, _ = run.step(c, 0)
        while c.now < time_bound:
            c, evs, _ = run.step(c, time_bound)
            events.extend(evs)
        return [self.export(e) for e in events], c

    def export(self, e: Event) -> TraceEvent:
        name = self.rule_name(e.rule) if e.rule is not None else None
        return TraceEvent(e.t, e.kind, name, tuple(e.oids), tuple(e.info))


class _PolicyRun:
    """Resolves one run's choices; holds the RNG and per-instant bookkeeping."""

    def __init__(self, engine: Engine, policy: Policy):
        self.engine = engine
        self.policy = policy
        self.rng = random.Random(policy.seed)
        self.decided = set()
        self.decided_at = None

    def duration(self, idx: int) -> int:
        rule = self.engine.rules[idx].rule
        if self.policy.durations == "min" or rule.lo == rule.hi:
            return rule.lo
        if self.policy.durations == "max":
            return rule.hi
        return self.rng.randint(rule.lo, rule.hi)

    def step(self, c: Configuration, bound: int):
        """Run one instant to quiescence, then advance if below ``bound``.
        Returns ``(configuration, events, advanced)``."""
        eng = self.engine
        events: List[Event] = []
        if self.decided_at != c.now:
            self.decided, self.decided_at = set(), c.now
        while True:
            if c.micro >= eng.livelock_limit:
                recent = [eng.rule_name(e.rule) for e in events[-50:] if e.rule is not None]
                rules = tuple(sorted(set(recent)))
                raise LivelockError(
                    f"instantaneous livelock at t={c.now}: more than {eng.livelock_limit} zero-time steps", rules
                )
            due = eng.due(c)
            if due:
                c, ev = eng.realize(c, due[0])
                events.append(ev)
                continue
            triggers = eng.triggerable(c, include_non_eager=self.policy.non_eager == "always")
            if triggers:
                windows = []
                for idx, _ in triggers:
                    d = c.now + self.duration(idx)
                    windows.append((d, d))
                c, evs = eng.schedule(c, triggers, windows)
                events.extend(evs)
                continue
            if self.policy.non_eager == "p":
                chosen = None
                for trig in eng.non_eager_enabled(c):
                    if trig in self.decided:
                        continue
                    self.decided.add(trig)
                    if self.rng.random() < self.policy.p:
                        chosen = trig
                        break
                if chosen is not None:
                    d = c.now + self.duration(chosen[0])
                    c, evs = eng.schedule(c, [chosen], [(d, d)])
                    events.extend(evs)
                    continue
            break
        if c.now >= bound:
            return c, events, False
        c, evs = eng.advance(c)
        events.extend(evs)
        return c, events, True


# -- trace I/O -------------------------------------------------------------------


def trace_lines(events: Iterable[TraceEvent]) -> str:
    return "".join(json.dumps(e.to_json(), sort_keys=False, separators=(",", ":")) + "\n" for e in events)


def write_trace(path, events: Iterable[TraceEvent]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(trace_lines(events))


def read_trace(path) -> List[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
