"""Global-EDF reservation scheduling with parallel or sequential reclaiming.

Both baselines keep a single system-wide ready queue; the m
earliest-deadline servers run, and a server already running keeps its core
whenever it stays among the m earliest so migrations are not inflated by the
dispatcher. They differ in where spare bandwidth is pooled: the parallel
scheme keeps one global active-utilization figure, the sequential scheme
books each active server's bandwidth on the core it last ran on and reclaims
per core.

The exact reclaiming rules are reconstructions calibrated to the published
qualitative behavior (many more migrations than partitioned schemes, no
benefit at saturation); they are isolated behind ``reclaim_bandwidth`` so
they can be swapped out without touching the dispatcher.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import InvariantViolation
from .model import ServerRuntime
from .rational import ZERO


class ReclaimMode(enum.Enum):
    PARALLEL = "parallel"
    SEQUENTIAL = "sequential"


@dataclass
class GlobalLedger:
    """Active-utilization bookkeeping for a global scheduler.

    In parallel mode only ``active_total`` matters (one shared figure); in
    sequential mode ``booked`` tracks, per core, the bandwidth of active
    servers last run there. A server that never ran is booked on core
    ``sid % m`` until its first dispatch.
    """

    mode: ReclaimMode
    m: int
    active_total: Fraction = ZERO
    booked: list[Fraction] = field(default_factory=list)
    booked_core: dict[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.booked:
            self.booked = [ZERO] * self.m

    def _booking(self, server: ServerRuntime) -> int:
        return self.booked_core.setdefault(server.sid, server.sid % self.m)

    def activate(self, server: ServerRuntime) -> None:
        self.active_total += server.utilization
        self.booked[self._booking(server)] += server.utilization

    def deactivate(self, server: ServerRuntime) -> None:
        u = server.utilization
        if self.active_total < u:
            raise InvariantViolation("global active utilization underflow")
        self.active_total -= u
        core = self._booking(server)
        if self.booked[core] < u:
            raise InvariantViolation(f"booked utilization underflow on core {core}")
        self.booked[core] -= u

    def rebook(self, server: ServerRuntime, core: int) -> None:
        """Move an active server's booking to the core it now runs on."""
        old = self._booking(server)
        if old == core:
            return
        u = server.utilization
        if self.booked[old] < u:
            raise InvariantViolation(f"booked utilization underflow on core {old}")
        self.booked[old] -= u
        self.booked[core] += u
        self.booked_core[server.sid] = core

    @property
    def spare(self) -> Fraction:
        return Fraction(self.m) - self.active_total


def reclaim_bandwidth(server: ServerRuntime, ledger: GlobalLedger, core: int) -> Fraction:
    """Effective contending bandwidth driving the server's virtual time.

    The virtual time advances at (effective bandwidth / own utilization).
    Sequential: the bandwidth booked on the server's core, so all local
    spare is reclaimed. Parallel: the global active utilization less what
    the other m-1 cores can absorb, floored at the server's own bandwidth;
    at full load this leaves no reclaiming, and on one core it degenerates
    to the plain single-core rule.
    """
    if ledger.mode is ReclaimMode.SEQUENTIAL:
        return ledger.booked[core]
    return max(server.utilization, ledger.active_total - (ledger.m - 1))


def reclaim_rate(server: ServerRuntime, ledger: GlobalLedger, core: int) -> Fraction:
    return reclaim_bandwidth(server, ledger, core) / server.utilization


def global_dispatch(
    ready: list[ServerRuntime],
    running: dict[int, int | None],
    last_core: dict[int, int | None],
) -> tuple[dict[int, int | None], list[tuple[int, int, int]]]:
    """Assign the m earliest-deadline servers to cores, minimally displacing.

    ``running`` maps core id to the server currently on it (or None).
    Returns the new assignment plus the migrations it caused as
    (sid, from_core, to_core) triples; a server's first dispatch is not a
    migration.
    """
    m = len(running)
    order = sorted(ready, key=lambda s: (s.sched_deadline, s.sid))
    chosen = {s.sid for s in order[:m]}

    assignment: dict[int, int | None] = {}
    placed: set[int] = set()
    for core in sorted(running):
        sid = running[core]
        if sid is not None and sid in chosen:
            assignment[core] = sid
            placed.add(sid)
        else:
            assignment[core] = None

    incoming = [s.sid for s in order[:m] if s.sid not in placed]
    free_cores = [c for c in sorted(assignment) if assignment[c] is None]
    migrations: list[tuple[int, int, int]] = []
    for sid, core in zip(incoming, free_cores):
        assignment[core] = sid
        prev = last_core.get(sid)
        if prev is not None and prev != core:
            migrations.append((sid, prev, core))
    return assignment, migrations


def global_edf_admission_test(utilizations: list[Fraction], m: int) -> bool:
    """Density-bound schedulability filter for global EDF."""
    if not utilizations:
        return True
    total = sum(utilizations, ZERO)
    return total <= m - (m - 1) * max(utilizations)
