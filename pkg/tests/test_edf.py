"""EDF scheduling: the bundled specs against an independent simulator."""

from __future__ import annotations

import random
import re

import pytest

from timedmt import Engine, Policy, parse_spec, search

from conftest import spec_path
from edf_oracle import OVERLOAD, SCHEDULABLE, Server, first_miss, utilization

MISS = "Server.allInstances -> exists(s | s.deadline < s.remExecTime)"


def edf_spec(servers):
    """The bundled EDF rules over an arbitrary server set."""
    text = spec_path("edf_overload.cdsl").read_text()
    lines = "\n".join(
        f'  {s.name}: Server {{ id := "{s.name}"  period := {s.period}  execTime := {s.exec_time}  deadline := 0  remExecTime := 0 }}'
        for s in servers
    )
    model = "model edfModel {\n" + lines + "\n  p: Processor { }\n}"
    return parse_spec(re.sub(r"model edfModel \{.*?\n\}", model, text, flags=re.S))


def test_bundled_parameters(edf, edf_overload):
    def params(spec):
        m = spec.model("edfModel")
        return tuple(
            (m.attr(o, "period"), m.attr(o, "execTime")) for o in m.instances("Server")
        )

    assert params(edf) == tuple((s.period, s.exec_time) for s in SCHEDULABLE)
    assert params(edf_overload) == tuple((s.period, s.exec_time) for s in OVERLOAD)
    assert utilization(SCHEDULABLE) == pytest.approx(0.9)
    assert utilization(OVERLOAD) == pytest.approx(1.25)


def test_oracle_sanity():
    assert first_miss(SCHEDULABLE, 200) is None
    assert first_miss(OVERLOAD, 40) == first_miss(OVERLOAD, 40, all_ties=False) == 6
    # a single server that owes more than its period misses at once
    assert first_miss([Server("a", 2, 3)], 5) == 0


def test_schedulable_set_never_misses(edf):
    result = search(edf, "edfModel", MISS, 20)
    assert result.outcome == "no-solution"
    assert first_miss(SCHEDULABLE, 20) is None


def test_overload_first_miss_matches_oracle(edf_overload):
    result = search(edf_overload, "edfModel", MISS, 24)
    assert result.found
    assert result.solutions[0].elapsed == first_miss(OVERLOAD, 24) == 6


def random_sets(n, seed=7):
    """Random server sets; seed 7 gives a mix of missing and safe ones."""
    rng = random.Random(seed)
    for _ in range(n):
        k = rng.choice([1, 2, 2, 3])
        out = []
        for i in range(k):
            period = rng.randint(2, 7)
            out.append(Server(f"s{i + 1}", period, rng.randint(1, period)))
        yield tuple(out)


RANDOM_SETS = list(random_sets(80))


def test_random_sample_covers_both_outcomes():
    outcomes = [first_miss(s, 20) is None for s in RANDOM_SETS]
    assert 10 <= sum(outcomes) <= 70


@pytest.mark.parametrize("servers", RANDOM_SETS, ids=lambda s: "-".join(f"{x.period}/{x.exec_time}" for x in s))
def test_random_server_sets_against_oracle(servers):
    horizon = 20
    expected = first_miss(servers, horizon)
    result = search(edf_spec(servers), "edfModel", MISS, horizon)
    if expected is None:
        assert result.outcome == "no-solution"
    else:
        assert result.found and result.solutions[0].elapsed == expected


def test_simulation_of_schedulable_set_has_no_miss(edf):
    events, final = Engine(edf).simulate("edfModel", 100, Policy())
    assert final.now == 100
    m = final.model
    assert all(m.attr(s, "deadline") >= m.attr(s, "remExecTime") for s in m.instances("Server"))
