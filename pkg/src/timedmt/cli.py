"""Command line: ``timedmt validate | simulate | search | check``.

Exit codes report tool health, not verification outcomes: 0 when the run
completed (whatever it found), 1 for errors in the spec, query or formula
(including livelocks and non-conforming rule applications), 2 for I/O
errors and 3 when a state budget ran out.  The outcome itself is printed
and, with ``--report``, written as JSON.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from importlib import resources
from pathlib import Path
from typing import List, Optional

from .dsl import Spec, model_lines, parse_formula, parse_spec
from .engine import Engine, Exhaustive, Policy, write_trace
from .errors import BudgetExceeded, LivelockError, TimedMTError
from .explore import compile_query, replay, search
from .ltl import model_check, verify_counterexample
from .model import ModelState, conforms

EXIT_OK, EXIT_SPEC, EXIT_IO, EXIT_BUDGET = 0, 1, 2, 3


class _IOFailure(Exception):
    pass


# -- spec files ---------------------------------------------------------------


def bundled_specs() -> dict:
    """Example specs shipped with the package, by file name."""
    root = resources.files("timedmt") / "specs"
    return {p.name: p for p in root.iterdir() if p.name.endswith(".cdsl")}


def resolve_spec_path(arg: str) -> Path:
    """``arg`` itself if it exists, else a bundled spec of the same file
    name (so ``examples/rttp.cdsl`` works from any directory)."""
    path = Path(arg)
    if path.exists():
        return path
    found = bundled_specs().get(path.name)
    if found is not None and path.parent.name in ("", "examples"):
        return Path(str(found))
    return path


def _read(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise _IOFailure(f"cannot read {path}: {exc.strerror or exc}") from None


def _load(arg: str):
    path = resolve_spec_path(arg)
    text = _read(path)
    return parse_spec(text, str(arg)), hashlib.sha256(text.encode("utf-8")).hexdigest()


def _pick_model(spec: Spec, name: Optional[str]) -> str:
    if name is None:
        if len(spec.models) != 1:
            raise TimedMTError(f"--model is required; the spec declares {', '.join(spec.models) or 'no models'}")
        name = next(iter(spec.models))
    model = spec.model(name)
    problems = conforms(model, spec.metamodel)
    if problems:
        raise TimedMTError(f"model {name} does not conform to the metamodel: {problems[0]}")
    return name


def _write_json(path: str, data) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise _IOFailure(f"cannot write {path}: {exc.strerror or exc}") from None


def _write_text(path: str, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise _IOFailure(f"cannot write {path}: {exc.strerror or exc}") from None


def to_dot(model: ModelState, title: str = "model") -> str:
    """Graphviz rendering of an object model: one record per object, one
    edge per link."""
    mm = model.mm
    lines = [f'digraph "{title}" {{', "  node [shape=record, fontname=monospace];"]
    for oid in sorted(model.objects):
        obj = model.objects[oid]
        name = obj.name or f"o{oid}"
        attrs = "\\l".join(f"{a.name} = {v!r}" for a, v in zip(mm.attributes(obj.cls), obj.values))
        label = f"{{{name} : {obj.cls}|{attrs}\\l}}".replace('"', '\\"')
        lines.append(f'  n{oid} [label="{label}"];')
    for src, ref, tgt in sorted(model.links):
        lines.append(f'  n{src} -> n{tgt} [label="{ref}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


# -- option handling ------------------------------------------------------------


def _exhaustive(args) -> Exhaustive:
    loss = args.loss or "branch"
    if loss not in ("never", "branch", "always"):
        raise TimedMTError(f"--loss {loss} is not available for exhaustive runs; use never, branch or always")
    return Exhaustive(branching=args.branching, non_eager=loss)


def _policy(args) -> Policy:
    loss = args.loss or "never"
    if loss == "branch":
        raise TimedMTError("--loss branch only applies to search and check; simulate needs never, always or p=<0..1>")
    if loss.startswith("p="):
        try:
            p = float(loss[2:])
        except ValueError:
            raise TimedMTError(f"bad probability in --loss {loss}") from None
        if not 0.0 <= p <= 1.0:
            raise TimedMTError(f"--loss {loss}: probability must lie in [0, 1]")
        return Policy(durations=args.durations, non_eager="p", p=p, seed=args.seed)
    if loss not in ("never", "always"):
        raise TimedMTError(f"unknown --loss value {loss!r}")
    return Policy(durations=args.durations, non_eager=loss, seed=args.seed)


def _engine(spec: Spec, args) -> Engine:
    return Engine(spec, abort_on=args.abort_on, livelock_limit=args.livelock_limit)


def _report(args, spec_hash: str, outcome: str, stats: dict, artifacts: dict, **extra) -> None:
    if not args.report:
        return
    data = {
        "command": ["timedmt"] + list(args.argv),
        "spec_sha256": spec_hash,
        "outcome": outcome,
        "statistics": stats,
        "artifacts": {k: v for k, v in artifacts.items() if v},
    }
    data.update(extra)
    _write_json(args.report, data)


def _events_text(events, indent: str = "  ") -> List[str]:
    out = []
    for e in events:
        if e.kind == "TimeAdvance":
            continue
        who = f" {e.rule}" if e.rule else ""
        parts = f" {list(e.participants)}" if e.participants else ""
        extra = "".join(f" {k}={v}" for k, v in e.extra if k in ("due", "window", "count"))
        out.append(f"{indent}t={e.t} {e.kind}{who}{parts}{extra}")
    return out


# -- commands ---------------------------------------------------------------------


def cmd_validate(args) -> int:
    spec, digest = _load(args.spec)
    failed = False
    for name, model in spec.models.items():
        for d in conforms(model, spec.metamodel):
            span = spec.model_spans.get(name)
            print(f"{span or args.spec}: model {name}: {d}", file=sys.stderr)
            failed = True
    if failed:
        return EXIT_SPEC
    print(f"ok: {len(spec.metamodel.metaclasses)} metaclasses, {len(spec.models)} models, "
          f"{len(spec.rules)} rules, {len(spec.props)} props")
    if args.dot:
        name = _pick_model(spec, args.model)
        _write_text(args.dot, to_dot(spec.model(name), name))
    _report(args, digest, "valid", {}, {"dot": args.dot})
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec, digest = _load(args.spec)
    name = _pick_model(spec, args.model)
    policy = _policy(args)
    engine = _engine(spec, args)
    began = time.perf_counter()
    events, final = engine.simulate(spec.model(name), args.time_bound, policy)
    seconds = time.perf_counter() - began
    if args.trace:
        try:
            write_trace(args.trace, events)
        except OSError as exc:
            raise _IOFailure(f"cannot write {args.trace}: {exc.strerror or exc}") from None
    realized = sum(1 for e in events if e.kind == "Realized")
    aborted = sum(1 for e in events if e.kind == "Aborted")
    print(f"simulated {name} up to t={final.now}: {realized} realized, {aborted} aborted, {len(final.agenda)} pending")
    for line in model_lines(final.model, "  "):
        print(line)
    if args.dot:
        _write_text(args.dot, to_dot(final.model, name))
    stats = {"events": len(events), "realized": realized, "aborted": aborted, "pending": len(final.agenda),
             "seconds": round(seconds, 3)}
    _report(args, digest, "completed", stats, {"trace": args.trace, "dot": args.dot},
            time_bound=args.time_bound, seed=args.seed)
    return EXIT_OK


def cmd_search(args) -> int:
    spec, digest = _load(args.spec)
    if args.replay:
        return _replay_witness(spec, digest, args)
    if not args.query or args.time_bound is None:
        args.parser.error("search needs --query and --time-bound")
    name = _pick_model(spec, args.model)
    mode = _exhaustive(args)
    engine = _engine(spec, args)
    factor = False if args.no_factor else None
    result = search(spec, name, args.query, args.time_bound, max_solutions=args.max_solutions,
                    max_depth=args.max_depth, mode=mode, engine=engine, max_states=args.max_states, factor=factor)
    print(f"search in {name} within time bound {args.time_bound}: {args.query}")
    if not result.solutions:
        print("No solution." if result.outcome == "no-solution" else "No solution within the depth bound.")
    for i, sol in enumerate(result.solutions, 1):
        print(f"Solution {i}: elapsed {sol.elapsed}, {len(sol.path)} steps")
        for line in model_lines(sol.config.model, "  "):
            print(line)
        if args.show_path:
            print("path:")
            for line in _events_text(sol.events, "  "):
                print(line)
    print(f"states: {result.states}  transitions: {result.transitions}")
    witness = None
    if result.solutions and args.witness:
        sol = result.solutions[0]
        witness = {
            "kind": "search-witness",
            "spec_sha256": digest,
            "model": name,
            "query": args.query,
            "time_bound": args.time_bound,
            "mode": {"branching": mode.branching, "non_eager": mode.non_eager},
            "abort_on": args.abort_on,
            "elapsed": sol.elapsed,
            "path": list(sol.path),
            "events": [e.to_json() for e in sol.events],
        }
        _write_json(args.witness, witness)
    if args.dot:
        shown = result.solutions[0].config.model if result.solutions else spec.model(name)
        _write_text(args.dot, to_dot(shown, name))
    stats = {"states": result.states, "transitions": result.transitions, "peak_agenda": result.peak_agenda,
             "seconds": round(result.seconds, 3)}
    _report(args, digest, result.outcome, stats, {"witness": args.witness if witness else None, "dot": args.dot},
            time_bound=args.time_bound, query=args.query,
            elapsed=[s.elapsed for s in result.solutions])
    return EXIT_OK


def cmd_check(args) -> int:
    spec, digest = _load(args.spec)
    if args.replay:
        return _replay_counterexample(spec, digest, args)
    if not args.formula or args.time_bound is None:
        args.parser.error("check needs --formula and --time-bound")
    name = _pick_model(spec, args.model)
    mode = _exhaustive(args)
    engine = _engine(spec, args)
    formula = parse_formula(args.formula, spec.props)
    result = model_check(spec, name, formula, args.time_bound, mode=mode, engine=engine, max_states=args.max_states,
                         invariants=not args.no_invariant_path)
    print(f"check in {name} within time bound {args.time_bound}: {formula}")
    cex = result.counterexample
    if result.holds:
        print(f"holds (within bound {args.time_bound})")
    else:
        print(f"counterexample (within bound {args.time_bound}): stem of {cex.loop_start} steps, "
              f"loop of {len(cex.steps) - cex.loop_start} steps")
        for i, step in enumerate(cex.steps):
            mark = "loop" if i == cex.loop_start else "    "
            for line in _events_text(step.events, "        "):
                print(line)
            print(f"  {mark} #{i} t={step.config.now} {{{', '.join(sorted(step.props))}}}")
    print(f"states: {result.states}  method: {result.method}")
    if cex is not None and args.witness:
        data = cex.to_json(str(formula), args.time_bound)
        data.update({"kind": "lasso", "spec_sha256": digest, "model": name,
                     "mode": {"branching": mode.branching, "non_eager": mode.non_eager}, "abort_on": args.abort_on})
        _write_json(args.witness, data)
    if args.dot and cex is not None:
        _write_text(args.dot, to_dot(cex.steps[-1].config.model, name))
    stats = {"states": result.states, "product_states": result.product_states,
             "automaton_states": result.automaton_states, "seconds": round(result.seconds, 3)}
    _report(args, digest, "holds" if result.holds else "counterexample", stats,
            {"witness": args.witness if cex is not None else None, "dot": args.dot if cex is not None else None},
            time_bound=args.time_bound, formula=str(formula), method=result.method)
    return EXIT_OK


# -- witness verification (hidden --replay) -------------------------------------------


def _load_witness(path: str, kind: str, digest: str) -> dict:
    try:
        data = json.loads(_read(Path(path)))
    except json.JSONDecodeError as exc:
        raise TimedMTError(f"{path}: not a JSON witness ({exc.msg})") from None
    if data.get("kind") != kind:
        raise TimedMTError(f"{path}: expected a {kind} file, found {data.get('kind')!r}")
    if data.get("spec_sha256") not in (None, digest):
        raise TimedMTError(f"{path} was produced from a different spec file")
    return data


def _replay_witness(spec: Spec, digest: str, args) -> int:
    data = _load_witness(args.replay, "search-witness", digest)
    engine = Engine(spec, abort_on=data.get("abort_on", "full-lhs"))
    mode = Exhaustive(**data["mode"])
    start = engine.initial(data["model"])
    configs, events = replay(engine, data["path"], data["time_bound"], mode, start)
    final = configs[-1]
    if not compile_query(spec, data["query"])(final.model):
        raise TimedMTError("witness replays, but its last state does not satisfy the query")
    if final.now - start.now != data["elapsed"]:
        raise TimedMTError(f"witness replays to elapsed time {final.now - start.now}, file says {data['elapsed']}")
    recorded = data.get("events")
    if recorded is not None and recorded != [e.to_json() for e in map(engine.export, events)]:
        raise TimedMTError("witness replays, but the recorded events differ")
    print(f"replay ok: {len(data['path'])} steps, elapsed {data['elapsed']}")
    return EXIT_OK


def _replay_counterexample(spec: Spec, digest: str, args) -> int:
    data = _load_witness(args.replay, "lasso", digest)
    formula = parse_formula(data["formula"], spec.props)
    engine = Engine(spec, abort_on=data.get("abort_on", "full-lhs"))
    mode = Exhaustive(**data["mode"])
    cex = verify_counterexample(engine, spec, formula, data["time_bound"], mode, data["model"], data["path"],
                                data["loop_start"])
    print(f"replay ok: lasso of {len(cex.steps)} states violates {formula}")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timedmt", description="Timed in-place model transformation engine.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("spec", help="spec file (.cdsl); bundled examples resolve as examples/<name>.cdsl")
    common.add_argument("--model", help="model to start from (default: the only model)")
    common.add_argument("--report", metavar="PATH", help="write a JSON run report")
    common.add_argument("--dot", metavar="PATH", help="write a Graphviz snapshot of the relevant model")
    common.add_argument("--abort-on", choices=("full-lhs", "existence"), default="full-lhs",
                        help="when a due action is aborted: its LHS no longer matches (default) or a participant is gone")
    common.add_argument("--livelock-limit", type=int, default=10000, metavar="N",
                        help="zero-time steps allowed in one instant")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=1, help="accepted for compatibility; runs use one process")

    timed = argparse.ArgumentParser(add_help=False)
    timed.add_argument("--time-bound", type=int, metavar="B", help="required except with --replay")
    timed.add_argument("--loss", help="non-eager rules (e.g. Lost): never | branch | always (default branch)")
    timed.add_argument("--branching", choices=("lazy", "eager"), default="lazy",
                       help="duration branching: decide each unit (lazy) or enumerate all durations at trigger")
    timed.add_argument("--max-states", type=int, metavar="N", help="abort with exit 3 past N states")
    timed.add_argument("--witness", metavar="PATH", help="write the witness or counterexample as JSON")
    timed.add_argument("--replay", metavar="PATH", help=argparse.SUPPRESS)

    p = sub.add_parser("validate", parents=[common], help="parse a spec and check its models")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", parents=[common], help="run one execution under a policy")
    p.add_argument("--time-bound", type=int, default=100, metavar="B")
    p.add_argument("--loss", help="never | always | p=<0..1> (default never)")
    p.add_argument("--durations", choices=("min", "max", "uniform"), default="uniform")
    p.add_argument("--trace", metavar="PATH", help="write the JSON-lines trace")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("search", parents=[common, timed], help="time-bounded reachability search")
    p.add_argument("--query", help="boolean expression over the model")
    p.add_argument("--max-solutions", type=int, default=1)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--show-path", action="store_true", help="print the events leading to each solution")
    p.add_argument("--no-factor", action="store_true", help="do not factor write-only attributes out of the search")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("check", parents=[common, timed], help="LTL model checking within a time bound")
    p.add_argument("--formula", help="LTL formula over the spec's props")
    p.add_argument("--no-invariant-path", action="store_true", help="check [] p through the automaton too")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    args.parser = parser
    if args.workers != 1:
        print("note: --workers is accepted but exploration runs in one process", file=sys.stderr)
    if (getattr(args, "time_bound", None) or 0) < 0:
        parser.error("--time-bound must be nonnegative")
    try:
        return args.func(args)
    except _IOFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except BudgetExceeded as exc:
        print(f"error: {exc} after {exc.states} states", file=sys.stderr)
        return EXIT_BUDGET
    except LivelockError as exc:
        rules = ", ".join(exc.rules)
        print(f"error: {exc}" + (f" (rules: {rules})" if rules else ""), file=sys.stderr)
        return EXIT_SPEC
    except TimedMTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC


if __name__ == "__main__":
    sys.exit(main())
