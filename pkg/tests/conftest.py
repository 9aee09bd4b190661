from __future__ import annotations

import contextlib
import io
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from timedmt import Engine, load_spec, parse_spec
from timedmt.cli import main

SPECS = Path(__file__).resolve().parents[1] / "src" / "timedmt" / "specs"

# A tiny spec used where the bundled ones are too large to brute-force.
TOY = """
metamodel toy {
  metaclass Box {
    attr n: int
    attr open: bool
    ref next: Box [0..1]
  }
  metaclass Token {
    attr v: int
  }
}

model start {
  a: Box { n := 0  open := true }
  b: Box { n := 1  open := false }
  t: Token { v := 0 }
  link a.next = b
}

rule Close atomic duration [1,3] {
  lhs { x: Box where x.open }
  rhs { x { open := false  n := x.n + 1 } }
}

rule Spawn atomic duration [0,2] noneager {
  lhs { x: Box where not x.open }
  nac { k: Token where k.v = x.n }
  rhs { x  k: Token { v := x.n } }
}

rule Drop atomic duration [0,0] noneager {
  lhs { k: Token where k.v > 0 }
  rhs { }
}

rule Age ongoing {
  lhs { k: Token }
  effect { k.v := k.v + T }
}

prop anyOpen = Box.allInstances -> exists(b | b.open)
prop bigToken = Token.allInstances -> exists(k | k.v > 3)
"""


def spec_path(name: str) -> Path:
    return SPECS / name


@pytest.fixture(scope="session")
def rttp():
    return load_spec(spec_path("rttp.cdsl"))


@pytest.fixture(scope="session")
def rttp_noloss():
    return load_spec(spec_path("rttp_noloss.cdsl"))


@pytest.fixture(scope="session")
def edf():
    return load_spec(spec_path("edf.cdsl"))


@pytest.fixture(scope="session")
def edf_overload():
    return load_spec(spec_path("edf_overload.cdsl"))


@pytest.fixture(scope="session")
def toy():
    return parse_spec(TOY, "toy.cdsl")


@pytest.fixture
def rttp_engine(rttp):
    return Engine(rttp)


# -- running the command line in-process


@dataclass
class CliRun:
    code: int
    out: str
    err: str
    seconds: float


def run_cli(*argv: str) -> CliRun:
    out, err = io.StringIO(), io.StringIO()
    start = time.perf_counter()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        try:
            code = main(list(argv))
        except SystemExit as exc:  # argparse usage errors
            code = exc.code
    return CliRun(code, out.getvalue(), err.getvalue(), time.perf_counter() - start)


RTT_BOUNDS = "Node.allInstances -> exists(n | n.rtt > 40 or n.rtt < 10)"
CLOCK_SYNC = "'clock1.time <> 'clock2.time"
RTT_17 = "Node.allInstances -> exists(n | n.rtt = 17)"
DEADLINE_MISS = "Server.allInstances -> exists(s | s.deadline < s.remExecTime)"


class _Cache:
    """Expensive command-line runs, done once per session and shared by
    the CLI and acceptance tests."""

    def __init__(self, tmp: Path):
        self.tmp = tmp
        self.runs = {}

    def get(self, key: str, *argv: str) -> CliRun:
        if key not in self.runs:
            self.runs[key] = run_cli(*argv)
        return self.runs[key]

    def path(self, name: str) -> str:
        return str(self.tmp / name)

    def rtt_bounds(self):
        return self.get("bounds", "search", "examples/rttp.cdsl", "--query", RTT_BOUNDS, "--time-bound", "300",
                        "--report", self.path("bounds.json"))

    def clock_sync(self):
        return self.get("sync", "search", "examples/rttp.cdsl", "--query", CLOCK_SYNC, "--time-bound", "300")

    def rtt_17(self):
        return self.get("rtt17", "search", "examples/rttp.cdsl", "--query", RTT_17, "--time-bound", "300",
                        "--witness", self.path("rtt17.json"), "--show-path")

    def big_rtt(self):
        return self.get("bigRtt", "check", "examples/rttp.cdsl", "--formula", "[] ~bigRtt", "--time-bound", "300")

    def rtt_changed(self):
        return self.get("rttChanged", "check", "examples/rttp.cdsl", "--formula", "<> rttChanged", "--time-bound",
                        "300", "--loss", "branch", "--witness", self.path("rttChanged.json"),
                        "--report", self.path("rttChanged-report.json"))


@pytest.fixture(scope="session")
def cli_cache(tmp_path_factory):
    return _Cache(tmp_path_factory.mktemp("cli"))


# -- acceptance summary

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
