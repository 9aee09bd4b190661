"""Acceptance criteria 1-8.

Each test prints one ``criterion N: PASS|FAIL`` line, collected again in
the terminal summary.  Every criterion is exact (a boolean outcome or an
integer instant); the only numeric limits are the run budgets of 1 and 2,
pinned below.
"""

from __future__ import annotations

import json
import os
import resource
import subprocess
import sys
from pathlib import Path


from timedmt import Engine, Policy, search

from conftest import ACCEPTANCE_LINES, DEADLINE_MISS, run_cli
from edf_oracle import OVERLOAD, SCHEDULABLE, first_miss

# run budgets for the bound-300 searches
MAX_SECONDS = 600.0
MAX_RSS_BYTES = 2 * 1024**3

HERE = Path(__file__).parent


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def peak_rss() -> int:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def _no_solution(r) -> bool:
    return r.code == 0 and "No solution." in r.out.splitlines()


def test_criterion_1_rtt_bounds(cli_cache):
    r = cli_cache.rtt_bounds()
    ok = _no_solution(r) and r.seconds < MAX_SECONDS and peak_rss() < MAX_RSS_BYTES
    verdict(1, ok, f"rtt outside [10,40] at bound 300: {r.out.splitlines()[1]!r} "
                   f"in {r.seconds:.1f}s, peak rss {peak_rss() / 2**20:.0f} MiB")


def test_criterion_2_clock_synchrony(cli_cache):
    r = cli_cache.clock_sync()
    ok = _no_solution(r) and r.seconds < MAX_SECONDS and peak_rss() < MAX_RSS_BYTES
    verdict(2, ok, f"clocks differ at bound 300: {r.out.splitlines()[1]!r} in {r.seconds:.1f}s")


def test_criterion_3_rtt_17_witness(cli_cache):
    r = cli_cache.rtt_17()
    witness = json.loads(Path(cli_cache.path("rtt17.json")).read_text())
    legs = [e["due"] - e["trigger"] for e in witness["events"]
            if e["kind"] == "Realized" and e["rule"] == "Transfer"]
    replayed = run_cli("search", "examples/rttp.cdsl", "--replay", cli_cache.path("rtt17.json"))
    split = any(a + b == 17 for i, a in enumerate(legs) for b in legs[i + 1:])
    ok = r.code == 0 and "Solution 1:" in r.out and replayed.code == 0 and split
    verdict(3, ok, f"rtt = 17 witness, Transfer legs {legs}, replay exit {replayed.code}")


def test_criterion_4_simulation_sanity(rttp):
    engine = Engine(rttp)
    bad = []
    for seed in range(100):
        events, final = engine.simulate("rttpModel", 300, Policy(durations="uniform", non_eager="never", seed=seed))
        rtts = [final.model.attr(n, "rtt") for n in final.model.instances("Node")]
        requests = sorted({e.t for e in events if e.kind == "Triggered" and e.rule == "Request"})
        if not all(10 <= v <= 40 for v in rtts) or requests != [0, 100, 200]:
            bad.append((seed, rtts, requests))
    verdict(4, not bad, f"100 seeded runs, loss never: {len(bad)} violations {bad[:3]}")


def test_criterion_5_edf_schedulable(edf):
    result = search(edf, "edfModel", DEADLINE_MISS, 20)
    oracle = first_miss(SCHEDULABLE, 20)
    ok = result.outcome == "no-solution" and oracle is None
    verdict(5, ok, f"U=0.9 bound 20: search {result.outcome}, oracle first miss {oracle}")


def test_criterion_6_edf_overload(edf_overload):
    result = search(edf_overload, "edfModel", DEADLINE_MISS, 24)
    elapsed = result.solutions[0].elapsed if result.solutions else None
    oracle = {first_miss(OVERLOAD, 24, all_ties=t) for t in (True, False)}
    ok = elapsed is not None and oracle == {elapsed}
    verdict(6, ok, f"U=1.25 bound 24: witness elapsed {elapsed}, oracle first miss {sorted(oracle)}")


def test_criterion_7_ltl_agrees_with_search(cli_cache):
    holds = "holds (within bound 300)" in cli_cache.big_rtt().out
    no_solution = _no_solution(cli_cache.rtt_bounds())
    cex = cli_cache.rtt_changed()
    replayed = run_cli("check", "examples/rttp.cdsl", "--replay", cli_cache.path("rttChanged.json"))
    found = cex.code == 0 and "counterexample (within bound 300)" in cex.out
    ok = holds == no_solution and holds and found and replayed.code == 0
    verdict(7, ok, f"[] ~bigRtt holds={holds}, search no-solution={no_solution}; "
                   f"<> rttChanged counterexample={found}, replay exit {replayed.code}")


PROPERTY_SUITES = [
    "tests/test_properties.py",
    "tests/test_ltl.py::test_buchi_corpus_against_lasso_semantics",
    "tests/test_dsl.py::test_round_trip_bundled",
]


def test_criterion_8_property_suites():
    root = HERE.parent
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *PROPERTY_SUITES],
        cwd=root, capture_output=True, text=True, env={**os.environ, "PYTHONHASHSEED": "0"},
    )
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    verdict(8, proc.returncode == 0 and "failed" not in tail, f"property suites, Buchi corpus, round-trip: {tail}")
