"""Fixed-step fluid reference for single-core reservation scheduling.

Independent cross-check for the event-driven engine: time advances in steps
of 1/1024 tick and all state changes (completions, drains, arrivals,
deadline postponements) are detected at step boundaries, in the same
same-instant order the engine uses. Job demands are supplied explicitly so
the oracle shares nothing with the engine but the task parameters.

The step size is a power of two, so job-demand bookkeeping is exact in
floating point; quiet ticks (no boundary can fall inside them) are advanced
in one multiplication, which changes nothing but the rounding of the
virtual-time sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

STEP = 1.0 / 1024.0
EPS = 1e-9

INACTIVE = 0
CONTENDING = 1  # ready or executing
LINGERING = 2  # active, no pending job, virtual time in the future


@dataclass
class OracleTask:
    period: int  # task and server period
    budget: int
    jobs: list[tuple[int, int]]  # (arrival tick, demand ticks), arrival-sorted


@dataclass
class OracleEvents:
    completions: list[tuple[int, float, float, float]] = field(default_factory=list)
    # (task index, time, virtual time, rate at completion)
    postponements: list[tuple[int, float]] = field(default_factory=list)


class _Srv:
    __slots__ = ("idx", "period", "util", "state", "v", "d", "queue", "remaining")

    def __init__(self, idx: int, task: OracleTask):
        self.idx = idx
        self.period = task.period
        self.util = task.budget / task.period
        self.state = INACTIVE
        self.v = 0.0
        self.d = 0.0
        self.queue: list[int] = []  # remaining demands, FIFO
        self.remaining = 0.0


def run_oracle(tasks: list[OracleTask], horizon: int, step: float = STEP) -> OracleEvents:
    servers = [_Srv(i, t) for i, t in enumerate(tasks)]
    arrivals: dict[int, list[tuple[int, int]]] = {}
    for i, t in enumerate(tasks):
        for a, c in t.jobs:
            arrivals.setdefault(a, []).append((i, c))

    events = OracleEvents()
    active_util = 0.0

    def contending():
        return [s for s in servers if s.state == CONTENDING and s.queue]

    def pick():
        cands = contending()
        if not cands:
            return None
        return min(cands, key=lambda s: (s.d, s.idx))

    def boundary(t: float) -> None:
        """Apply all state changes due at one step boundary, engine order."""
        nonlocal active_util
        # 1. completions
        for s in sorted(servers, key=lambda s: s.idx):
            if s.state == CONTENDING and s.queue and s.queue[0] <= EPS:
                rate = active_util / s.util
                events.completions.append((s.idx, t, s.v, rate))
                s.queue.pop(0)
                if not s.queue:
                    if s.v > t + EPS:
                        s.state = LINGERING
                    else:
                        s.state = INACTIVE
                        active_util -= s.util
        # 2. lingering servers drain
        for s in servers:
            if s.state == LINGERING and s.v <= t + EPS:
                s.state = INACTIVE
                active_util -= s.util
        # 3. arrivals (integer boundaries only)
        ti = int(round(t))
        if abs(t - ti) < EPS and ti in arrivals:
            for idx, demand in arrivals[ti]:
                s = servers[idx]
                s.queue.append(float(demand))
                if s.state == INACTIVE:
                    s.v = float(ti)
                    s.d = ti + s.period
                    s.state = CONTENDING
                    active_util += s.util
                elif s.state == LINGERING:
                    s.state = CONTENDING
        # 4. exhaustion of the executing server (repeat: postponing may
        # promote another exhausted server). The crossing happens exactly at
        # V = d in the fluid limit, so the postponed deadline is exactly
        # d + P; keeping deadlines on that exact lattice preserves
        # deadline-tie resolution despite the quantization of V.
        while True:
            s = pick()
            if s is None or s.v < s.d - EPS:
                break
            s.d = s.d + s.period
            events.postponements.append((s.idx, t))

    t = 0.0
    end = float(horizon)
    while t < end - EPS:
        boundary(t)
        s = pick()
        if s is None:
            # idle until something can happen: next arrival or a drain
            nxt = end
            future = [a for a in arrivals if a > t + EPS]
            if future:
                nxt = min(nxt, float(min(future)))
            for srv in servers:
                if srv.state == LINGERING:
                    nxt = min(nxt, srv.v)
            t = _align_up(max(nxt, t + step), step)
            continue
        # quiet-tick test: nothing can cross a boundary strictly inside
        # (t, t + 1], so a whole tick advances in one shot
        rate = active_util / s.util
        whole = (
            abs(t - round(t)) < EPS
            and s.queue[0] > 1.0 + 2 * step
            and (s.d - s.v) / rate > 1.0 + 2 * step
            and all(
                srv.v > t + 1.0 + 2 * step for srv in servers if srv.state == LINGERING
            )
        )
        dt = 1.0 if whole else step
        s.v += rate * dt
        s.queue[0] -= dt
        t += dt
    boundary(t)
    return events


def _align_up(x: float, step: float) -> float:
    """Round up to the step grid."""
    k = int(x / step)
    if k * step < x - EPS:
        k += 1
    return k * step
