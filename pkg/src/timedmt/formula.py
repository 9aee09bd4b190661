"""LTL formula AST and negation normal form."""

from __future__ import annotations

from dataclasses import dataclass


class LtlFormula:
    pass


@dataclass(frozen=True)
class TrueF(LtlFormula):
    def __str__(self):
        return "true"


@dataclass(frozen=True)
class FalseF(LtlFormula):
    def __str__(self):
        return "false"


@dataclass(frozen=True)
class Prop(LtlFormula):
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class NotF(LtlFormula):
    sub: LtlFormula

    def __str__(self):
        return f"~ {_wrap(self.sub, 5)}"


@dataclass(frozen=True)
class AndF(LtlFormula):
    left: LtlFormula
    right: LtlFormula

    def __str__(self):
        return f"{_wrap(self.left, 3)} /\\ {_wrap(self.right, 4)}"


@dataclass(frozen=True)
class OrF(LtlFormula):
    left: LtlFormula
    right: LtlFormula

    def __str__(self):
        return f"{_wrap(self.left, 2)} \\/ {_wrap(self.right, 3)}"


@dataclass(frozen=True)
class Implies(LtlFormula):
    left: LtlFormula
    right: LtlFormula

    def __str__(self):
        return f"{_wrap(self.left, 2)} -> {_wrap(self.right, 1)}"


@dataclass(frozen=True)
class Always(LtlFormula):
    sub: LtlFormula

    def __str__(self):
        return f"[] {_wrap(self.sub, 5)}"


@dataclass(frozen=True)
class Eventually(LtlFormula):
    sub: LtlFormula

    def __str__(self):
        return f"<> {_wrap(self.sub, 5)}"


@dataclass(frozen=True)
class Until(LtlFormula):
    left: LtlFormula
    right: LtlFormula

    def __str__(self):
        return f"{_wrap(self.left, 5)} U {_wrap(self.right, 4)}"


@dataclass(frozen=True)
class Release(LtlFormula):
    """Dual of until; produced by :func:`nnf`, not by the parser."""

    left: LtlFormula
    right: LtlFormula

    def __str__(self):
        return f"({self.left}) R ({self.right})"


_LEVEL = {Implies: 1, OrF: 2, AndF: 3, Until: 4, Release: 4}


def _wrap(f: LtlFormula, level: int) -> str:
    text = str(f)
    return f"({text})" if _LEVEL.get(type(f), 5) < level else text


def props_of(f: LtlFormula) -> frozenset:
    if isinstance(f, Prop):
        return frozenset([f.name])
    out = frozenset()
    for child in _children(f):
        out |= props_of(child)
    return out


def _children(f):
    if isinstance(f, (NotF, Always, Eventually)):
        return (f.sub,)
    if isinstance(f, (AndF, OrF, Implies, Until, Release)):
        return (f.left, f.right)
    return ()


def nnf(f: LtlFormula, negate: bool = False) -> LtlFormula:
    """Negation normal form over true/false/literals, and/or, U and R."""
    if isinstance(f, TrueF):
        return FalseF() if negate else f
    if isinstance(f, FalseF):
        return TrueF() if negate else f
    if isinstance(f, Prop):
        return NotF(f) if negate else f
    if isinstance(f, NotF):
        return nnf(f.sub, not negate)
    if isinstance(f, AndF):
        l, r = nnf(f.left, negate), nnf(f.right, negate)
        return OrF(l, r) if negate else AndF(l, r)
    if isinstance(f, OrF):
        l, r = nnf(f.left, negate), nnf(f.right, negate)
        return AndF(l, r) if negate else OrF(l, r)
    if isinstance(f, Implies):
        return nnf(OrF(NotF(f.left), f.right), negate)
    if isinstance(f, Always):
        # [] a == false R a
        sub = nnf(f.sub, negate)
        return Until(TrueF(), sub) if negate else Release(FalseF(), sub)
    if isinstance(f, Eventually):
        sub = nnf(f.sub, negate)
        return Release(FalseF(), sub) if negate else Until(TrueF(), sub)
    if isinstance(f, Until):
        l, r = nnf(f.left, negate), nnf(f.right, negate)
        return Release(l, r) if negate else Until(l, r)
    if isinstance(f, Release):
        l, r = nnf(f.left, negate), nnf(f.right, negate)
        return Until(l, r) if negate else Release(l, r)
    raise TypeError(f)
