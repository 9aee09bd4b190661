"""Metamodels, object models and conformance checking.

A :class:`Metamodel` is a set of metaclasses with single inheritance,
typed attributes and references.  A :class:`ModelState` is an immutable
object graph: objects keyed by an opaque integer oid plus a set of
``(source, reference, target)`` links.

Attribute values of an object are stored as a tuple in *flattened*
order: inherited attributes first, root class outermost.  An attribute
declared on class ``C`` therefore sits at the same index for ``C`` and
for every descendant of ``C``, which lets compiled expressions resolve
attribute positions statically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Tuple

from .errors import EvalError, SourceSpan

ATTR_KINDS = ("int", "bool", "ident")
MULTIPLICITIES = ("1", "0..1", "0..*")


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: str
    span: Optional[SourceSpan] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Reference:
    name: str
    target: str
    multiplicity: str
    span: Optional[SourceSpan] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Metaclass:
    name: str
    abstract: bool = False
    parent: Optional[str] = None
    attributes: Tuple[Attribute, ...] = ()
    references: Tuple[Reference, ...] = ()
    span: Optional[SourceSpan] = field(default=None, compare=False, repr=False)


class Metamodel:
    """Schema of a modelling language, with precomputed lookup tables."""

    def __init__(self, name: str, metaclasses: Iterable[Metaclass] = (), span: Optional[SourceSpan] = None):
        self.name = name
        self.metaclasses: Tuple[Metaclass, ...] = tuple(metaclasses)
        self.span = span
        self.classes: Dict[str, Metaclass] = {}
        for mc in self.metaclasses:
            self.classes.setdefault(mc.name, mc)
        self._attrs: Dict[str, Tuple[Attribute, ...]] = {}
        self._refs: Dict[str, Dict[str, Reference]] = {}
        self._ancestors: Dict[str, Tuple[str, ...]] = {}
        self._descendants: Dict[str, FrozenSet[str]] = {}

    def __eq__(self, other):
        if not isinstance(other, Metamodel):
            return NotImplemented
        return self.name == other.name and self.metaclasses == other.metaclasses

    def __hash__(self):
        return hash((self.name, self.metaclasses))

    def __repr__(self):
        return f"Metamodel({self.name!r}, {len(self.metaclasses)} metaclasses)"

    # -- structural queries -------------------------------------------------

    def validate(self) -> List[Tuple[str, Optional[SourceSpan]]]:
        """Problems with the metamodel itself, as ``(message, span)`` pairs."""
        problems = []
        seen = set()
        for mc in self.metaclasses:
            if mc.name in seen:
                problems.append((f"duplicate metaclass {mc.name!r}", mc.span))
            seen.add(mc.name)
        for mc in self.metaclasses:
            if mc.parent is not None and mc.parent not in self.classes:
                problems.append((f"metaclass {mc.name!r} extends unknown metaclass {mc.parent!r}", mc.span))
        for mc in self.metaclasses:
            chain, cur = [], mc.name
            while cur is not None and cur in self.classes:
                if cur in chain:
                    problems.append((f"inheritance cycle through {mc.name!r}", mc.span))
                    break
                chain.append(cur)
                cur = self.classes[cur].parent
        if problems:
            return problems
        for mc in self.metaclasses:
            names = set()
            for cname in reversed(self.ancestors(mc.name)):
                owner = self.classes[cname]
                for feat in owner.attributes + owner.references:
                    if feat.name in names and cname == mc.name:
                        problems.append((f"duplicate feature {feat.name!r} in {mc.name!r}", feat.span))
                    names.add(feat.name)
            for attr in mc.attributes:
                if attr.kind not in ATTR_KINDS:
                    problems.append((f"unknown attribute kind {attr.kind!r}", attr.span))
            for ref in mc.references:
                if ref.target not in self.classes:
                    problems.append((f"reference {mc.name}.{ref.name} targets unknown metaclass {ref.target!r}", ref.span))
                if ref.multiplicity not in MULTIPLICITIES:
                    problems.append((f"bad multiplicity {ref.multiplicity!r}", ref.span))
        return problems

    def ancestors(self, cls: str) -> Tuple[str, ...]:
        """``cls`` followed by its parents up to the root."""
        try:
            return self._ancestors[cls]
        except KeyError:
            pass
        chain = []
        cur = cls
        while cur is not None and cur not in chain:
            chain.append(cur)
            cur = self.classes[cur].parent if cur in self.classes else None
        result = tuple(chain)
        self._ancestors[cls] = result
        return result

    def is_subclass(self, cls: str, ancestor: str) -> bool:
        return ancestor in self.ancestors(cls)

    def descendants(self, cls: str) -> FrozenSet[str]:
        """``cls`` and every metaclass inheriting from it."""
        try:
            return self._descendants[cls]
        except KeyError:
            pass
        result = frozenset(mc.name for mc in self.metaclasses if cls in self.ancestors(mc.name))
        self._descendants[cls] = result
        return result

    def attributes(self, cls: str) -> Tuple[Attribute, ...]:
        """Flattened attributes, inherited ones first."""
        try:
            return self._attrs[cls]
        except KeyError:
            pass
        attrs: List[Attribute] = []
        for cname in reversed(self.ancestors(cls)):
            attrs.extend(self.classes[cname].attributes)
        result = tuple(attrs)
        self._attrs[cls] = result
        return result

    def attribute(self, cls: str, name: str) -> Optional[Tuple[int, Attribute]]:
        for i, attr in enumerate(self.attributes(cls)):
            if attr.name == name:
                return i, attr
        return None

    def references(self, cls: str) -> Dict[str, Reference]:
        try:
            return self._refs[cls]
        except KeyError:
            pass
        refs: Dict[str, Reference] = {}
        for cname in reversed(self.ancestors(cls)):
            for ref in self.classes[cname].references:
                refs[ref.name] = ref
        self._refs[cls] = refs
        return refs

    def related(self, a: str, b: str) -> bool:
        """True when one class is an ancestor of the other."""
        return self.is_subclass(a, b) or self.is_subclass(b, a)


class Obj(NamedTuple):
    cls: str
    values: tuple
    name: str = ""


Link = Tuple[int, str, int]


class ModelState:
    """Immutable object graph.  Never mutate ``objects`` or ``links``."""

    __slots__ = ("mm", "objects", "links", "_by_class", "_out", "_in", "_names", "memo")

    def __init__(self, mm: Metamodel, objects: Dict[int, Obj], links: FrozenSet[Link] = frozenset()):
        self.mm = mm
        self.objects = objects
        self.links = links if isinstance(links, frozenset) else frozenset(links)
        self._by_class = None
        self._out = None
        self._in = None
        self._names = None
        self.memo = {}  # per-state caches owned by callers (matches, keys)

    def __eq__(self, other):
        if not isinstance(other, ModelState):
            return NotImplemented
        return self.objects == other.objects and self.links == other.links

    def __hash__(self):
        return hash((frozenset(self.objects.items()), self.links))

    def __repr__(self):
        return f"ModelState({len(self.objects)} objects, {len(self.links)} links)"

    # -- indexes (built lazily, cached) ---------------------------------------

    def instances(self, cls: str) -> Tuple[int, ...]:
        """Oids whose metaclass is ``cls`` or a descendant, sorted."""
        index = self._by_class
        if index is None:
            index = {}
            for oid in sorted(self.objects):
                index.setdefault(self.objects[oid].cls, []).append(oid)
            index = {k: tuple(v) for k, v in index.items()}
            self._by_class = index
        key = "*" + cls
        hit = index.get(key)
        if hit is None:
            members = []
            for sub in self.mm.descendants(cls):
                members.extend(index.get(sub, ()))
            hit = tuple(sorted(members))
            index[key] = hit
        return hit

    def targets(self, oid: int, ref: str) -> Tuple[int, ...]:
        out = self._out
        if out is None:
            out = {}
            for src, r, tgt in self.links:
                out.setdefault((src, r), []).append(tgt)
            out = {k: tuple(sorted(v)) for k, v in out.items()}
            self._out = out
        return out.get((oid, ref), ())

    def sources(self, oid: int, ref: str) -> Tuple[int, ...]:
        inc = self._in
        if inc is None:
            inc = {}
            for src, r, tgt in self.links:
                inc.setdefault((tgt, r), []).append(src)
            inc = {k: tuple(sorted(v)) for k, v in inc.items()}
            self._in = inc
        return inc.get((oid, ref), ())

    def by_name(self, name: str) -> Optional[int]:
        names = self._names
        if names is None:
            names = {obj.name: oid for oid, obj in self.objects.items() if obj.name}
            self._names = names
        return names.get(name)

    def attr(self, oid: int, name: str):
        obj = self.objects[oid]
        found = self.mm.attribute(obj.cls, name)
        if found is None:
            raise EvalError(f"object {oid} of {obj.cls} has no attribute {name!r}")
        return obj.values[found[0]]

    def next_oid(self) -> int:
        return max(self.objects, default=-1) + 1

    # -- derived states --------------------------------------------------------

    def renamed(self, mapping: Dict[int, int]) -> "ModelState":
        """Apply an oid bijection."""
        objects = {mapping[oid]: obj for oid, obj in self.objects.items()}
        links = frozenset((mapping[s], r, mapping[t]) for s, r, t in self.links)
        return ModelState(self.mm, objects, links)

    def with_attr(self, oid: int, name: str, value) -> "ModelState":
        obj = self.objects[oid]
        index = self.mm.attribute(obj.cls, name)[0]
        values = list(obj.values)
        values[index] = value
        objects = dict(self.objects)
        objects[oid] = obj._replace(values=tuple(values))
        return ModelState(self.mm, objects, self.links)

    def without_object(self, oid: int) -> "ModelState":
        objects = dict(self.objects)
        del objects[oid]
        links = frozenset(l for l in self.links if l[0] != oid and l[2] != oid)
        return ModelState(self.mm, objects, links)

    def without_link(self, link: Link) -> "ModelState":
        return ModelState(self.mm, self.objects, self.links - {link})


def all_instances(model: ModelState, metaclass: str) -> Tuple[int, ...]:
    """Objects of ``metaclass`` or any descendant, oid-sorted."""
    if metaclass not in model.mm.classes:
        raise EvalError(f"unknown metaclass {metaclass!r}")
    return model.instances(metaclass)


@dataclass(frozen=True)
class Diagnostic:
    oid: Optional[int]
    feature: Optional[str]
    reason: str

    def __str__(self):
        where = "" if self.oid is None else f"object {self.oid}"
        if self.feature:
            where += f".{self.feature}"
        return f"{where}: {self.reason}" if where else self.reason


def value_matches_kind(value, kind: str) -> bool:
    if kind == "bool":
        return isinstance(value, bool)
    if kind == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == "ident":
        return isinstance(value, str)
    return False


def conforms(model: ModelState, mm: Metamodel) -> List[Diagnostic]:
    """All violations of the metamodel's structural rules; empty when valid."""
    diags: List[Diagnostic] = []
    for oid in sorted(model.objects):
        obj = model.objects[oid]
        mc = mm.classes.get(obj.cls)
        if mc is None:
            diags.append(Diagnostic(oid, None, f"unknown metaclass {obj.cls!r}"))
            continue
        if mc.abstract:
            diags.append(Diagnostic(oid, None, f"instance of abstract metaclass {obj.cls!r}"))
        attrs = mm.attributes(obj.cls)
        for i, attr in enumerate(attrs):
            if i >= len(obj.values) or obj.values[i] is None:
                diags.append(Diagnostic(oid, attr.name, "missing attribute value"))
            elif not value_matches_kind(obj.values[i], attr.kind):
                diags.append(Diagnostic(oid, attr.name, f"value {obj.values[i]!r} is not of kind {attr.kind}"))
        if len(obj.values) > len(attrs):
            diags.append(Diagnostic(oid, None, "too many attribute values"))
    counts: Dict[Tuple[int, str], int] = {}
    for src, ref, tgt in sorted(model.links):
        if src not in model.objects or tgt not in model.objects:
            diags.append(Diagnostic(src, ref, f"dangling link to {tgt}"))
            continue
        src_cls = model.objects[src].cls
        decl = mm.references(src_cls).get(ref) if src_cls in mm.classes else None
        if decl is None:
            diags.append(Diagnostic(src, ref, f"reference not declared on {src_cls}"))
            continue
        if not mm.is_subclass(model.objects[tgt].cls, decl.target):
            diags.append(Diagnostic(src, ref, f"target {tgt} is not a {decl.target}"))
        counts[(src, ref)] = counts.get((src, ref), 0) + 1
    for oid in sorted(model.objects):
        cls = model.objects[oid].cls
        if cls not in mm.classes:
            continue
        for ref in mm.references(cls).values():
            n = counts.get((oid, ref.name), 0)
            if ref.multiplicity == "1" and n != 1:
                diags.append(Diagnostic(oid, ref.name, f"multiplicity [1] violated ({n} links)"))
            elif ref.multiplicity == "0..1" and n > 1:
                diags.append(Diagnostic(oid, ref.name, f"multiplicity [0..1] violated ({n} links)"))
    return diags


def multiplicity_problems(model: ModelState, oids: Iterable[int]) -> List[Diagnostic]:
    """Cheap local re-check of reference multiplicities for a few objects."""
    diags = []
    mm = model.mm
    for oid in oids:
        obj = model.objects.get(oid)
        if obj is None:
            continue
        for ref in mm.references(obj.cls).values():
            if ref.multiplicity == "0..*":
                continue
            n = len(model.targets(oid, ref.name))
            if ref.multiplicity == "1" and n != 1:
                diags.append(Diagnostic(oid, ref.name, f"multiplicity [1] violated ({n} links)"))
            elif ref.multiplicity == "0..1" and n > 1:
                diags.append(Diagnostic(oid, ref.name, f"multiplicity [0..1] violated ({n} links)"))
    return diags
