"""Independent discrete-time EDF simulator used as a test oracle.

Deliberately shares no code with the transformation engine.  Each server has
a period and an execution budget per round.  At every unit tick the running
server works off one unit, and every server's deadline (time left in the
round) shrinks by one.  A server whose deadline reached 0 starts a new round
(deadline := period, owed work += budget).  The processor runs the waiting
server with the earliest deadline and preempts only for a strictly earlier
one.  A miss is any instant where some deadline is below the owed work.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple


@dataclass(frozen=True)
class Server:
    name: str
    period: int
    exec_time: int


State = Tuple[Tuple[int, ...], Tuple[int, ...], Optional[int]]  # deadlines, owed, running


def _missed(deadline, owed) -> bool:
    return any(d < r for d, r in zip(deadline, owed))


def _dispatch(servers, deadline, owed, running) -> List[Optional[int]]:
    """Every EDF-consistent choice of the running server (ties branch)."""
    if running is not None and owed[running] == 0:
        running = None
    waiting = [i for i in range(len(servers)) if owed[i] > 0 and i != running]
    if not waiting:
        return [running]
    best = min(deadline[i] for i in waiting)
    if running is not None and deadline[running] <= best:
        return [running]
    return [i for i in waiting if deadline[i] == best]


def _instant(servers, state: State, first: bool):
    """Tick (unless at time 0), roll over rounds, then dispatch.  Returns
    ``(missed, successor states)``."""
    deadline, owed, running = list(state[0]), list(state[1]), state[2]
    if not first:
        if running is not None and owed[running] > 0:
            owed[running] -= 1
        deadline = [d - 1 if d > 0 else d for d in deadline]
    if _missed(deadline, owed):
        return True, []
    for i, s in enumerate(servers):
        if deadline[i] == 0:
            deadline[i] = s.period
            owed[i] += s.exec_time
    if _missed(deadline, owed):
        return True, []
    return False, [(tuple(deadline), tuple(owed), r) for r in _dispatch(servers, deadline, owed, running)]


def first_miss(servers: Sequence[Server], horizon: int, all_ties: bool = True) -> Optional[int]:
    """Earliest instant in ``0..horizon`` at which some schedule misses a
    deadline.  With ``all_ties`` false only the lowest-index choice is taken
    at each tie."""
    n = len(servers)
    frontier = {((0,) * n, (0,) * n, None)}
    for t in range(horizon + 1):
        nxt = set()
        for state in sorted(frontier, key=repr):
            missed, succ = _instant(servers, state, t == 0)
            if missed:
                return t
            nxt.update(succ if all_ties else succ[:1])
        frontier = nxt
    return None


def utilization(servers: Sequence[Server]) -> float:
    return sum(s.exec_time / s.period for s in servers)


SCHEDULABLE = (Server("s1", 5, 2), Server("s2", 10, 3), Server("s3", 20, 4))
OVERLOAD = (Server("s1", 4, 3), Server("s2", 6, 3))
