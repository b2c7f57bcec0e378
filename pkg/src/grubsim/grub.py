"""Single-core reservation-server mechanics.

A server cycles through INACTIVE -> READY/EXECUTING -> ACT_NON_CONTENDING ->
INACTIVE. While executing, its virtual time advances at rate
``active_util / utilization``, so spare bandwidth on the core slows budget
consumption down (greedy reclaiming). When the virtual time catches up with
the scheduling deadline the budget for the current window is spent and the
deadline is postponed by one server period.

These functions mutate the server and the ledger they are given; the event
engine owns all sequencing.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable

from .errors import InvariantViolation
from .model import ServerRuntime, ServerState


class ReadyQueue:
    """Servers contending on one core, ordered by (deadline, server id).

    Deadline ties break toward the lowest server id so dispatch is
    deterministic. Sizes are small (tens of servers), so a plain dict with
    a linear min scan beats a heap with lazy deletion here.
    """

    def __init__(self) -> None:
        self._members: dict[int, ServerRuntime] = {}

    def __len__(self) -> int:
        return len(self._members)

    def __contains__(self, sid: int) -> bool:
        return sid in self._members

    def add(self, server: ServerRuntime) -> None:
        self._members[server.sid] = server

    def discard(self, sid: int) -> None:
        self._members.pop(sid, None)

    def servers(self) -> Iterable[ServerRuntime]:
        return self._members.values()

    def head(self) -> ServerRuntime | None:
        best = None
        for s in self._members.values():
            if best is None or (s.sched_deadline, s.sid) < (best.sched_deadline, best.sid):
                best = s
        return best


def dispatch(queue: ReadyQueue) -> int | None:
    """Return the id of the server to execute, or None when the core idles."""
    head = queue.head()
    return None if head is None else head.sid


def on_job_arrival(server: ServerRuntime, t: int | Fraction, ledger) -> None:
    """Apply the arrival rules for a new job of the served task.

    From INACTIVE the server starts a fresh window (virtual time = now,
    deadline = now + period) and its bandwidth joins the active utilization.
    From ACT_NON_CONTENDING it re-enters READY without touching its
    variables: the bandwidth consumed earlier is still accounted for. An
    arrival while READY/EXECUTING just queues behind the job in service.
    """
    if server.state is ServerState.INACTIVE:
        server.virtual_time = Fraction(t)
        server.sched_deadline = Fraction(t) + server.params.period
        server.state = ServerState.READY
        server.bump()
        ledger.activate(server)
    elif server.state is ServerState.ACT_NON_CONTENDING:
        server.state = ServerState.READY
        server.bump()
    # READY / EXECUTING: nothing changes


def advance_executing(server: ServerRuntime, dt: Fraction, active_util: Fraction) -> Fraction:
    """Advance the virtual time of an executing server by ``dt`` time units.

    ``active_util`` must be constant over the interval; the engine guarantees
    this by segmenting execution at every event.
    """
    if dt < 0:
        raise InvariantViolation(f"negative advance dt={dt}")
    server.virtual_time += (active_util / server.utilization) * dt
    return server.virtual_time


def exhaustion_horizon(server: ServerRuntime, active_util: Fraction) -> Fraction:
    """Execution time after which the virtual time reaches the deadline."""
    if active_util <= 0:
        raise InvariantViolation("executing server with zero active utilization")
    gap = server.sched_deadline - server.virtual_time
    if gap <= 0:
        return Fraction(0)
    return gap * server.utilization / active_util


def postpone_deadline(server: ServerRuntime) -> None:
    """Move the scheduling deadline one period past the virtual time.

    Only legal once the budget is spent (virtual time >= deadline); the
    server may lose the CPU afterwards because its priority dropped.
    """
    if server.virtual_time < server.sched_deadline:
        raise InvariantViolation(
            f"postpone before exhaustion: V={server.virtual_time} < d={server.sched_deadline}"
        )
    server.sched_deadline = server.virtual_time + server.params.period


def on_job_completion(server: ServerRuntime, t: Fraction, ledger, pending: bool = False) -> None:
    """Apply the exit rules when the in-service job finishes at ``t``.

    With another job queued the server keeps serving (FIFO), variables
    untouched. Otherwise it stays active while its virtual time is in the
    future (ACT_NON_CONTENDING) or drops to INACTIVE, releasing its
    bandwidth from the active utilization.
    """
    if pending:
        return
    if server.virtual_time > t:
        server.state = ServerState.ACT_NON_CONTENDING
        server.bump()
    else:
        server.state = ServerState.INACTIVE
        server.bump()
        ledger.deactivate(server)


def on_virtual_time_reached(server: ServerRuntime, t: Fraction, ledger) -> None:
    """ACT_NON_CONTENDING -> INACTIVE once real time catches the virtual time."""
    if server.state is not ServerState.ACT_NON_CONTENDING:
        raise InvariantViolation(f"server {server.sid} not act-non-contending")
    if server.virtual_time != t:
        raise InvariantViolation(
            f"virtual-time timer fired at {t}, expected {server.virtual_time}"
        )
    server.state = ServerState.INACTIVE
    server.bump()
    ledger.deactivate(server)
    if server.is_temporary:
        ledger.sub_migrated(server.granted_util)
