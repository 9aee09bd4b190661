"""Timed rewrite rules: representation, NAC-aware matching and application.

A rule ``l : [NAC]* x LHS -> RHS`` matches injectively: distinct pattern
variables bind distinct objects.  NAC patterns may mention LHS variables,
which are then pre-bound; their own variables are existential.  Applying
an atomic rule evaluates every attribute computation against the
pre-state, deletes LHS nodes missing from the RHS (with their incident
links), deletes LHS links missing from the RHS, and creates the RHS-only
nodes and links.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, NamedTuple, Optional, Tuple

from .errors import EvalError, RuleApplicationError, SourceSpan, SpecSemanticError
from .expr import Checker, Expr, compile_expr, free_vars
from .model import Metamodel, ModelState, Obj, multiplicity_problems

_SPAN = dict(default=None, compare=False, repr=False)

ATOMIC = "atomic"
ONGOING = "ongoing"


@dataclass(frozen=True)
class PatternNode:
    var: str
    cls: str
    guard: Optional[Expr] = None
    span: Optional[SourceSpan] = field(**_SPAN)


@dataclass(frozen=True)
class PatternLink:
    src: str
    ref: str
    tgt: str
    span: Optional[SourceSpan] = field(**_SPAN)


@dataclass(frozen=True)
class Pattern:
    nodes: Tuple[PatternNode, ...] = ()
    links: Tuple[PatternLink, ...] = ()
    span: Optional[SourceSpan] = field(**_SPAN)

    @property
    def variables(self) -> Tuple[str, ...]:
        return tuple(n.var for n in self.nodes)


@dataclass(frozen=True)
class Assign:
    """``attr := expr`` inside a kept or created RHS node."""

    attr: str
    expr: Expr
    span: Optional[SourceSpan] = field(**_SPAN)


@dataclass(frozen=True)
class KeepNode:
    var: str
    updates: Tuple[Assign, ...] = ()
    span: Optional[SourceSpan] = field(**_SPAN)


@dataclass(frozen=True)
class CreateNode:
    var: str
    cls: str
    inits: Tuple[Assign, ...] = ()
    span: Optional[SourceSpan] = field(**_SPAN)


@dataclass(frozen=True)
class Rhs:
    keeps: Tuple[KeepNode, ...] = ()
    creates: Tuple[CreateNode, ...] = ()
    links: Tuple[PatternLink, ...] = ()
    span: Optional[SourceSpan] = field(**_SPAN)


@dataclass(frozen=True)
class Effect:
    """``var.attr := expr`` of an ongoing rule; ``T`` is the elapsed time."""

    var: str
    attr: str
    expr: Expr
    span: Optional[SourceSpan] = field(**_SPAN)


@dataclass(frozen=True)
class Rule:
    name: str
    kind: str
    lhs: Pattern
    nacs: Tuple[Pattern, ...] = ()
    rhs: Optional[Rhs] = None
    effects: Tuple[Effect, ...] = ()
    lo: int = 0
    hi: int = 0
    period: Optional[int] = None
    eager: bool = True
    limit: Optional[int] = None
    span: Optional[SourceSpan] = field(**_SPAN)

    @property
    def atomic(self) -> bool:
        return self.kind == ATOMIC


class Match(NamedTuple):
    """Injective binding of pattern variables to oids."""

    vars: Tuple[str, ...]
    oids: Tuple[int, ...]

    def __getitem__(self, key):
        if isinstance(key, str):
            return self.oids[self.vars.index(key)]
        return tuple.__getitem__(self, key)

    def as_dict(self) -> Dict[str, int]:
        return dict(zip(self.vars, self.oids))


def participants(match: Match) -> FrozenSet[int]:
    return frozenset(match.oids)


# -- static checking --------------------------------------------------------------


def _check_pattern(pattern: Pattern, mm: Metamodel, checker: Checker, outer: Mapping[str, str], what: str) -> Pattern:
    """Check a pattern; ``outer`` holds pre-bound variables (LHS vars for NACs)."""
    classes: Dict[str, str] = dict(outer)
    seen = set()
    for node in pattern.nodes:
        if node.var in seen:
            raise SpecSemanticError(f"duplicate variable {node.var!r} in {what}", node.span)
        seen.add(node.var)
        if node.cls not in mm.classes:
            raise SpecSemanticError(f"unknown metaclass {node.cls!r}", node.span)
        if node.var in outer and not mm.related(node.cls, outer[node.var]):
            raise SpecSemanticError(f"{node.var!r} redeclared with unrelated metaclass {node.cls!r}", node.span)
        if node.var == "T":
            raise SpecSemanticError("'T' is reserved for elapsed time", node.span)
        classes[node.var] = node.cls
    env = {v: ("obj", c) for v, c in classes.items()}
    nodes = []
    for node in pattern.nodes:
        guard = node.guard
        if guard is not None:
            guard, kind = checker.resolve(guard, env)
            if kind != "bool":
                raise SpecSemanticError(f"guard of {node.var!r} is not boolean", node.guard.span)
        nodes.append(PatternNode(node.var, node.cls, guard, span=node.span))
    for link in pattern.links:
        _check_link(link, classes, mm)
    return Pattern(tuple(nodes), pattern.links, span=pattern.span)


def _check_link(link: PatternLink, classes: Mapping[str, str], mm: Metamodel):
    for v in (link.src, link.tgt):
        if v not in classes:
            raise SpecSemanticError(f"link endpoint {v!r} is not a declared node", link.span)
    ref = mm.references(classes[link.src]).get(link.ref)
    if ref is None:
        raise SpecSemanticError(f"metaclass {classes[link.src]} has no reference {link.ref!r}", link.span)
    if not mm.related(classes[link.tgt], ref.target):
        raise SpecSemanticError(f"{link.src}.{link.ref} expects a {ref.target}, {link.tgt!r} is a {classes[link.tgt]}", link.span)


def check_rule(rule: Rule, mm: Metamodel, objects: Optional[Mapping[str, str]] = None) -> Rule:
    """Well-formedness against ``mm``; returns the rule with resolved expressions."""
    checker = Checker(mm, objects)
    if rule.kind == ATOMIC:
        if not (0 <= rule.lo <= rule.hi):
            raise SpecSemanticError("empty duration interval", rule.span)
        if rule.period is not None and rule.period <= 0:
            raise SpecSemanticError("period must be positive", rule.span)
        if rule.limit is not None:
            raise SpecSemanticError("only ongoing rules take a time limit", rule.span)
        if rule.rhs is None or rule.effects:
            raise SpecSemanticError("atomic rules need an rhs block", rule.span)
    elif rule.kind == ONGOING:
        if rule.rhs is not None:
            raise SpecSemanticError("ongoing rules take an effect block, not an rhs", rule.span)
        if rule.period is not None or rule.lo or rule.hi:
            raise SpecSemanticError("ongoing rules have no duration or period", rule.span)
        if rule.limit is not None and rule.limit < 0:
            raise SpecSemanticError("time limit must be nonnegative", rule.span)
    else:
        raise SpecSemanticError(f"unknown rule kind {rule.kind!r}", rule.span)

    lhs = _check_pattern(rule.lhs, mm, checker, {}, "lhs")
    lhs_classes = {n.var: n.cls for n in lhs.nodes}
    nacs = tuple(_check_pattern(nac, mm, checker, lhs_classes, "nac") for nac in rule.nacs)
    env = {v: ("obj", c) for v, c in lhs_classes.items()}

    rhs = None
    if rule.rhs is not None:
        keeps, creates = [], []
        rhs_classes = {}
        for keep in rule.rhs.keeps:
            if keep.var not in lhs_classes:
                raise SpecSemanticError(f"rhs keeps {keep.var!r} which is not an lhs node", keep.span)
            if keep.var in rhs_classes:
                raise SpecSemanticError(f"{keep.var!r} appears twice in rhs", keep.span)
            rhs_classes[keep.var] = lhs_classes[keep.var]
            keeps.append(KeepNode(keep.var, _check_assigns(keep.updates, lhs_classes[keep.var], mm, checker, env), span=keep.span))
        for new in rule.rhs.creates:
            if new.var in lhs_classes or new.var in rhs_classes:
                raise SpecSemanticError(f"created node {new.var!r} clashes with an existing variable", new.span)
            mc = mm.classes.get(new.cls)
            if mc is None:
                raise SpecSemanticError(f"unknown metaclass {new.cls!r}", new.span)
            if mc.abstract:
                raise SpecSemanticError(f"cannot create an instance of abstract metaclass {new.cls!r}", new.span)
            inits = _check_assigns(new.inits, new.cls, mm, checker, env)
            given = {a.attr for a in inits}
            missing = [a.name for a in mm.attributes(new.cls) if a.name not in given]
            if missing:
                raise SpecSemanticError(f"created {new.cls} lacks initial values for {', '.join(missing)}", new.span)
            rhs_classes[new.var] = new.cls
            creates.append(CreateNode(new.var, new.cls, inits, span=new.span))
        for link in rule.rhs.links:
            _check_link(link, rhs_classes, mm)
        rhs = Rhs(tuple(keeps), tuple(creates), rule.rhs.links, span=rule.rhs.span)

    effects = []
    if rule.effects:
        eff_env = dict(env)
        eff_env["T"] = "int"
        written = set()
        for eff in rule.effects:
            if eff.var not in lhs_classes:
                raise SpecSemanticError(f"effect on {eff.var!r} which is not an lhs node", eff.span)
            found = mm.attribute(lhs_classes[eff.var], eff.attr)
            if found is None:
                raise SpecSemanticError(f"metaclass {lhs_classes[eff.var]} has no attribute {eff.attr!r}", eff.span)
            if (eff.var, eff.attr) in written:
                raise SpecSemanticError(f"{eff.var}.{eff.attr} assigned twice", eff.span)
            written.add((eff.var, eff.attr))
            expr, kind = checker.resolve(eff.expr, eff_env)
            if kind != found[1].kind:
                raise SpecSemanticError(f"{eff.var}.{eff.attr} is {found[1].kind}, expression is {kind}", eff.span)
            effects.append(Effect(eff.var, eff.attr, expr, span=eff.span))

    return Rule(
        rule.name, rule.kind, lhs, nacs, rhs, tuple(effects), rule.lo, rule.hi, rule.period, rule.eager, rule.limit, span=rule.span
    )


def _check_assigns(assigns, cls, mm, checker, env) -> Tuple[Assign, ...]:
    out, seen = [], set()
    for a in assigns:
        found = mm.attribute(cls, a.attr)
        if found is None:
            raise SpecSemanticError(f"metaclass {cls} has no attribute {a.attr!r}", a.span)
        if a.attr in seen:
            raise SpecSemanticError(f"attribute {a.attr!r} assigned twice", a.span)
        seen.add(a.attr)
        expr, kind = checker.resolve(a.expr, env)
        if kind != found[1].kind:
            raise SpecSemanticError(f"{cls}.{a.attr} is {found[1].kind}, expression is {kind}", a.span)
        out.append(Assign(a.attr, expr, span=a.span))
    return tuple(out)


# -- compiled matching ----------------------------------------------------------------


class _Step(NamedTuple):
    var: str
    classes: FrozenSet[str]
    source: tuple  # ("all", cls) | ("out", var, ref) | ("in", var, ref)
    links: tuple  # (src_var, ref, tgt_var) fully bound after this step
    guards: tuple  # compiled guards fully bound after this step


class _Plan:
    """Search order for a pattern, given variables bound beforehand."""

    def __init__(self, pattern: Pattern, mm: Metamodel, prebound: Iterable[str] = ()):
        prebound = set(prebound)
        self.prechecks_links = tuple((l.src, l.ref, l.tgt) for l in pattern.links if l.src in prebound and l.tgt in prebound)
        guards = [(free_vars(n.guard), compile_expr(n.guard)) for n in pattern.nodes if n.guard is not None]
        self.prechecks_guards = tuple(g for fv, g in guards if fv <= prebound)
        # prebound nodes re-declared in the pattern must also satisfy the class
        self.prechecks_classes = tuple(
            (n.var, mm.descendants(n.cls)) for n in pattern.nodes if n.var in prebound
        )
        pending = [n for n in pattern.nodes if n.var not in prebound]
        bound = set(prebound)
        steps = []
        remaining_links = [(l.src, l.ref, l.tgt) for l in pattern.links if not (l.src in prebound and l.tgt in prebound)]
        remaining_guards = [(fv, g) for fv, g in guards if not fv <= prebound]
        while pending:
            chosen, source = None, None
            for node in pending:
                for src, ref, tgt in remaining_links:
                    if tgt == node.var and src in bound:
                        chosen, source = node, ("out", src, ref)
                        break
                    if src == node.var and tgt in bound:
                        chosen, source = node, ("in", tgt, ref)
                        break
                if chosen:
                    break
            if chosen is None:
                chosen = pending[0]
                source = ("all", chosen.cls)
            pending.remove(chosen)
            bound.add(chosen.var)
            links_now = tuple(l for l in remaining_links if l[0] in bound and l[2] in bound)
            remaining_links = [l for l in remaining_links if l not in links_now]
            guards_now = tuple(g for fv, g in remaining_guards if fv <= bound)
            remaining_guards = [(fv, g) for fv, g in remaining_guards if not fv <= bound]
            steps.append(_Step(chosen.var, mm.descendants(chosen.cls), source, links_now, guards_now))
        self.steps = tuple(steps)

    def prechecks(self, model: ModelState, env: dict) -> bool:
        objects = model.objects
        for var, classes in self.prechecks_classes:
            if objects[env[var]].cls not in classes:
                return False
        links = model.links
        for src, ref, tgt in self.prechecks_links:
            if (env[src], ref, env[tgt]) not in links:
                return False
        for g in self.prechecks_guards:
            if not g(model, env):
                return False
        return True

    def search(self, model: ModelState, env: dict, used: set, first_only: bool):
        """All completions of ``env`` (or just whether one exists)."""
        out = []
        steps = self.steps
        n = len(steps)
        objects = model.objects
        links = model.links

        def rec(i):
            if i == n:
                if first_only:
                    return True
                out.append(dict(env))
                return False
            step = steps[i]
            src = step.source
            if src[0] == "all":
                cands = model.instances(src[1])
                typed = True
            elif src[0] == "out":
                cands = model.targets(env[src[1]], src[2])
                typed = False
            else:
                cands = model.sources(env[src[1]], src[2])
                typed = False
            var = step.var
            for oid in cands:
                if oid in used:
                    continue
                if not typed and objects[oid].cls not in step.classes:
                    continue
                env[var] = oid
                ok = True
                for a, ref, b in step.links:
                    if (env[a], ref, env[b]) not in links:
                        ok = False
                        break
                if ok:
                    for g in step.guards:
                        if not g(model, env):
                            ok = False
                            break
                if ok:
                    used.add(oid)
                    found = rec(i + 1)
                    used.discard(oid)
                    if found:
                        del env[var]
                        return True
            env.pop(var, None)
            return False

        found = rec(0)
        return found if first_only else out


class CompiledRule:
    """A checked rule with its matching plans and RHS templates prepared."""

    def __init__(self, rule: Rule, mm: Metamodel, index: int = 0):
        self.rule = rule
        self.name = rule.name
        self.index = index
        self.mm = mm
        self.vars = rule.lhs.variables
        self.lhs_plan = _Plan(rule.lhs, mm)
        lhs_vars = set(self.vars)
        self.nac_plans = tuple(_Plan(nac, mm, prebound=lhs_vars & _pattern_vars(nac)) for nac in rule.nacs)
        self.check_plan = _Plan(rule.lhs, mm, prebound=lhs_vars)
        self.lhs_classes = tuple(mm.descendants(n.cls) for n in rule.lhs.nodes)
        if rule.rhs is not None:
            self._prepare_rhs(rule.rhs)
        self.effects = tuple(
            (self.vars.index(e.var), mm.attribute(rule.lhs.nodes[self.vars.index(e.var)].cls, e.attr)[0], e.attr, compile_expr(e.expr))
            for e in rule.effects
        )

    def _prepare_rhs(self, rhs: Rhs):
        mm = self.mm
        pos = {v: i for i, v in enumerate(self.vars)}
        kept = {k.var for k in rhs.keeps}
        self.deleted = tuple(i for i, v in enumerate(self.vars) if v not in kept)
        cls_of = {n.var: n.cls for n in self.rule.lhs.nodes}
        self.updates = tuple(
            (pos[k.var], tuple((mm.attribute(cls_of[k.var], a.attr)[0], compile_expr(a.expr)) for a in k.updates))
            for k in rhs.keeps
            if k.updates
        )
        creates = []
        for c in rhs.creates:
            attrs = mm.attributes(c.cls)
            by_name = {a.attr: compile_expr(a.expr) for a in c.inits}
            creates.append((c.cls, tuple(by_name[a.name] for a in attrs)))
        self.creates = tuple(creates)
        create_pos = {c.var: j for j, c in enumerate(rhs.creates)}

        def endpoint(v):
            return ("lhs", pos[v]) if v in pos else ("new", create_pos[v])

        lhs_links = {(l.src, l.ref, l.tgt) for l in self.rule.lhs.links}
        rhs_links = {(l.src, l.ref, l.tgt) for l in rhs.links}
        self.removed_links = tuple(
            (pos[s], r, pos[t]) for (s, r, t) in sorted(lhs_links - rhs_links) if s in kept and t in kept
        )
        self.added_links = tuple((endpoint(s), r, endpoint(t)) for (s, r, t) in sorted(rhs_links - lhs_links))

    # -- matching

    def matches(self, model: ModelState) -> List[Tuple[int, ...]]:
        """LHS matches surviving every NAC, sorted by oid tuple."""
        found = self.lhs_plan.search(model, {}, set(), False)
        if not found:
            return []
        vars_ = self.vars
        result = []
        for env in found:
            if self.nac_plans and self._blocked(model, env):
                continue
            result.append(tuple(env[v] for v in vars_))
        result.sort()
        return result

    def _blocked(self, model: ModelState, env: dict) -> bool:
        used = set(env.values())
        for plan in self.nac_plans:
            if plan.prechecks(model, env) and plan.search(model, dict(env), set(used), True):
                return True
        return False

    def is_match(self, model: ModelState, oids: Tuple[int, ...], nacs: bool = True) -> bool:
        objects = model.objects
        for oid, classes in zip(oids, self.lhs_classes):
            obj = objects.get(oid)
            if obj is None or obj.cls not in classes:
                return False
        env = dict(zip(self.vars, oids))
        if not self.check_plan.prechecks(model, env):
            return False
        if nacs and self.nac_plans and self._blocked(model, env):
            return False
        return True

    # -- application

    def apply(self, model: ModelState, oids: Tuple[int, ...], next_oid: int) -> Tuple[ModelState, int]:
        env = dict(zip(self.vars, oids))
        objects = dict(model.objects)
        new_values = []
        for p, assigns in self.updates:
            obj = model.objects[oids[p]]
            values = list(obj.values)
            for index, fn in assigns:
                values[index] = fn(model, env)
            new_values.append((oids[p], obj._replace(values=tuple(values))))
        created = []
        for cls, inits in self.creates:
            created.append(Obj(cls, tuple(fn(model, env) for fn in inits)))
        for oid, obj in new_values:
            objects[oid] = obj
        links = model.links
        touched = set()
        if self.deleted:
            gone = {oids[p] for p in self.deleted}
            for p in self.deleted:
                del objects[oids[p]]
            kept_links = []
            for l in links:
                if l[0] in gone or l[2] in gone:
                    touched.add(l[0])
                else:
                    kept_links.append(l)
            links = frozenset(kept_links)
        new_oids = []
        for obj in created:
            objects[next_oid] = obj
            new_oids.append(next_oid)
            next_oid += 1
        if self.removed_links:
            drop = {(oids[s], r, oids[t]) for s, r, t in self.removed_links}
            touched.update(l[0] for l in drop)
            links = links - drop
        if self.added_links:
            add = set()
            for (sk, si), r, (tk, ti) in self.added_links:
                s = oids[si] if sk == "lhs" else new_oids[si]
                t = oids[ti] if tk == "lhs" else new_oids[ti]
                add.add((s, r, t))
                touched.add(s)
            links = links | add
        result = ModelState(model.mm, objects, links)
        touched.update(new_oids)
        if touched:
            problems = multiplicity_problems(result, sorted(touched))
            if problems:
                raise RuleApplicationError(f"rule {self.name} breaks conformance: {problems[0]}")
        return result, next_oid

    def effect_writes(self, model: ModelState, oids: Tuple[int, ...], elapsed: int):
        """``(oid, index, value)`` triples of an ongoing rule, read from the pre-state."""
        env = dict(zip(self.vars, oids))
        env["T"] = elapsed
        return [(oids[p], index, fn(model, env)) for p, index, _attr, fn in self.effects]


def _pattern_vars(pattern: Pattern) -> set:
    names = set(pattern.variables)
    for l in pattern.links:
        names.update((l.src, l.tgt))
    for n in pattern.nodes:
        if n.guard is not None:
            names |= free_vars(n.guard)
    return names


# -- functional API ------------------------------------------------------------------


@functools.lru_cache(maxsize=256)
def _compiled(rule: Rule, mm: Metamodel) -> CompiledRule:
    return CompiledRule(rule, mm)


def _resolved_rule(pattern: Pattern, nacs: Tuple[Pattern, ...], mm: Metamodel) -> Rule:
    return check_rule(Rule("_", ATOMIC, pattern, nacs, rhs=Rhs(keeps=tuple(KeepNode(v) for v in pattern.variables))), mm)


@functools.lru_cache(maxsize=256)
def _pattern_rule(pattern: Pattern, nacs: Tuple[Pattern, ...], mm: Metamodel) -> CompiledRule:
    return CompiledRule(_resolved_rule(pattern, nacs, mm), mm)


def find_matches(pattern: Pattern, nacs: Iterable[Pattern], model: ModelState) -> List[Match]:
    """Injective matches of ``pattern`` for which no NAC extends."""
    compiled = _pattern_rule(pattern, tuple(nacs), model.mm)
    return [Match(compiled.vars, oids) for oids in compiled.matches(model)]


def apply(rule: Rule, match: Match, model: ModelState, fresh: Optional[int] = None) -> ModelState:
    """Realize an atomic rule at ``match``.  ``fresh`` is the first unused oid."""
    if not rule.atomic:
        raise ValueError(f"rule {rule.name} is not atomic")
    compiled = _compiled(rule, model.mm)
    oids = _oids_for(compiled, match)
    result, _ = compiled.apply(model, oids, model.next_oid() if fresh is None else fresh)
    return result


def apply_effect(rule: Rule, match: Match, model: ModelState, elapsed: int) -> ModelState:
    """Apply an ongoing rule's effect for ``elapsed`` time units at ``match``."""
    if rule.atomic:
        raise ValueError(f"rule {rule.name} is not ongoing")
    if elapsed == 0:
        return model
    compiled = _compiled(rule, model.mm)
    return write_values(model, compiled.effect_writes(model, _oids_for(compiled, match), elapsed))


def write_values(model: ModelState, writes) -> ModelState:
    if not writes:
        return model
    objects = dict(model.objects)
    changed: Dict[int, list] = {}
    for oid, index, value in writes:
        vals = changed.get(oid)
        if vals is None:
            vals = changed[oid] = list(objects[oid].values)
        vals[index] = value
    for oid, vals in changed.items():
        objects[oid] = objects[oid]._replace(values=tuple(vals))
    return ModelState(model.mm, objects, model.links)


def _oids_for(compiled: CompiledRule, match) -> Tuple[int, ...]:
    if isinstance(match, Match):
        if match.vars == compiled.vars:
            return match.oids
        lookup = match.as_dict()
        return tuple(lookup[v] for v in compiled.vars)
    if isinstance(match, Mapping):
        return tuple(match[v] for v in compiled.vars)
    return tuple(match)
