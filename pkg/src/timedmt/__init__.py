"""Executable semantics for timed in-place model transformations.

A spec (``.cdsl``) declares a metamodel, object models, timed rules and
named state propositions.  The engine simulates it under a policy, the
explorer searches its time-bounded state space, and the LTL checker
model-checks formulas over the propositions.
"""

from .dsl import Spec, load_spec, parse_formula, parse_query, parse_spec, print_spec
from .engine import Configuration, Engine, Exhaustive, Policy, ScheduledAction, TraceEvent
from .errors import (
    BudgetExceeded,
    EvalError,
    LivelockError,
    RuleApplicationError,
    SourceSpan,
    SpecSemanticError,
    SpecSyntaxError,
    TimedMTError,
)
from .explore import SearchResult, Solution, canonicalize, reachable_graph, search
from .ltl import CheckResult, Counterexample, model_check
from .model import Metamodel, ModelState, Obj

__version__ = "0.1.0"

__all__ = [
    "BudgetExceeded", "CheckResult", "Configuration", "Counterexample", "Engine", "EvalError", "Exhaustive",
    "LivelockError", "Metamodel", "ModelState", "Obj", "Policy", "RuleApplicationError", "ScheduledAction",
    "SearchResult", "Solution", "SourceSpan", "Spec", "SpecSemanticError", "SpecSyntaxError", "TimedMTError",
    "TraceEvent", "canonicalize", "load_spec", "model_check", "parse_formula", "parse_query", "parse_spec",
    "print_spec", "reachable_graph", "search",
]
