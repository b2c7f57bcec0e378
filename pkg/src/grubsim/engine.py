"""Deterministic event-driven simulation loop.

Events carry exact rational timestamps: virtual-time crossings (budget
exhaustion, drain timers) fall at rational instants and are ordered against
integer-tick events by exact comparison, so two runs of the same scenario
produce byte-identical traces. At equal timestamps the order is: job
completions, drain/virtual-time timers, job arrivals, exhaustion checks,
balancer timeouts, task insertions, task removals, metrics samples; ties
inside a class break by entity id.

Between two consecutive events every executing server sees a constant
contending bandwidth, so virtual times advance in closed form per segment.
Provisional events (the executing server's completion and exhaustion
instants) are invalidated by per-core version counters whenever dispatch or
the contending bandwidth changes.
"""

from __future__ import annotations

import heapq
import random
from collections import deque
from dataclasses import dataclass, field, replace
from fractions import Fraction

from . import grub
from .balancer import (
    BalancerConfig,
    Heuristic,
    MissWindow,
    Outcome,
    PlacementKind,
    decide_placement,
    deferral_satisfied,
)
from .errors import ConfigError, InvariantViolation
from .global_sched import GlobalLedger, ReclaimMode, global_dispatch, reclaim_bandwidth
from .migration import (
    MigrationConfig,
    admitted_migrating_utilization,
    benefit_check,
    benefit_denominator,
    is_eligible,
    select_destination_core,
)
from .model import CoreLedger, Job, ServerRuntime, ServerState, TaskKind, TaskRuntime
from .rational import ONE, ZERO, frac_str
from .workload import GeneratedTask, Scenario, sample_exec

# event kinds; the _PRIO table defines the same-timestamp processing order
K_COMPLETION = 0
K_VREACHED = 1
K_RELEASE = 2  # deferred decrement of a source core's allocated utilization
K_ARRIVAL = 3
K_EXHAUST = 4
K_LB_TIMEOUT = 5
K_INSERT = 6
K_REMOVE = 7
K_METRICS = 8

_PRIO = {
    K_COMPLETION: 0,
    K_VREACHED: 1,
    K_RELEASE: 1,
    K_ARRIVAL: 2,
    K_EXHAUST: 3,
    K_LB_TIMEOUT: 4,
    K_INSERT: 5,
    K_REMOVE: 6,
    K_METRICS: 7,
}


@dataclass(frozen=True)
class PolicyConfig:
    """What scheduler runs on top of the scenario.

    Partitioned policies pick a bin-packing heuristic and may enable
    temporary migration and load balancing; global policies pick a
    reclaiming mode and ignore both flags.
    """

    kind: str  # "partitioned" | "global"
    heuristic: Heuristic = Heuristic.WORST_FIT
    reclaiming: ReclaimMode = ReclaimMode.SEQUENTIAL
    migration: MigrationConfig = MigrationConfig()
    balancing: BalancerConfig = BalancerConfig(enabled=False)

    def __post_init__(self) -> None:
        if self.kind not in ("partitioned", "global"):
            raise ConfigError(f"unknown policy kind: {self.kind}")

    @property
    def label(self) -> str:
        if self.kind == "global":
            return "g-par" if self.reclaiming is ReclaimMode.PARALLEL else "g-seq"
        name = self.heuristic.value
        if self.balancing.enabled:
            return name + "+lb"
        if not self.migration.enabled:
            return name + "-a"
        return name


def parse_policy(
    name: str,
    migration_on: bool = True,
    balancing_on: bool = False,
    epsilon: int = 2,
    window: int = 20,
) -> PolicyConfig:
    """Build a policy from its CLI name (wf, bf, ff, g-par, g-seq)."""
    name = name.lower()
    if name in ("g-par", "gpar"):
        return PolicyConfig(kind="global", reclaiming=ReclaimMode.PARALLEL)
    if name in ("g-seq", "gseq"):
        return PolicyConfig(kind="global", reclaiming=ReclaimMode.SEQUENTIAL)
    table = {"ff": Heuristic.FIRST_FIT, "bf": Heuristic.BEST_FIT, "wf": Heuristic.WORST_FIT}
    if name not in table:
        raise ConfigError(f"unknown policy: {name}")
    h = table[name]
    return PolicyConfig(
        kind="partitioned",
        heuristic=h,
        migration=MigrationConfig(enabled=migration_on, epsilon=epsilon),
        balancing=BalancerConfig(heuristic=h, window_size=window, enabled=balancing_on),
    )


@dataclass
class MetricsTrace:
    """Aggregates and optional per-tick series collected from one run."""

    jobs_total: int = 0
    jobs_missed: int = 0
    arrivals: int = 0
    temp_migrations: int = 0
    perm_migrations: int = 0
    gedf_migrations: int = 0
    rejections: int = 0
    postponements: int = 0
    server_deadline_misses: int = 0
    # series are populated only when a sampling stride is set
    sample_times: list[int] = field(default_factory=list)
    active_util: list[list[float]] = field(default_factory=list)  # per core
    active_util_ema: list[list[float]] = field(default_factory=list)
    window_miss_ratio: list[list[float]] = field(default_factory=list)

    @property
    def unfinished(self) -> int:
        return self.arrivals - self.jobs_total

    @property
    def miss_ratio(self) -> float:
        return self.jobs_missed / self.jobs_total if self.jobs_total else 0.0

    @property
    def migrations(self) -> int:
        return self.temp_migrations + self.perm_migrations + self.gedf_migrations

    @property
    def migrations_per_job(self) -> float:
        return self.migrations / self.jobs_total if self.jobs_total else 0.0


@dataclass
class SimResult:
    metrics: MetricsTrace
    trace: list[str]
    finished_jobs: list[Job]


@dataclass
class _Request:
    """A balancing or admission request: active on a target core (incoming
    migrations disabled there) or queued behind another active request."""

    rid: int
    kind: PlacementKind
    task_id: int
    util: Fraction
    deadline: Fraction
    payload: GeneratedTask | None = None


class Engine:
    """One simulation run; owns all mutable scheduler state."""

    def __init__(
        self,
        scenario: Scenario,
        policy: PolicyConfig,
        horizon: int | None = None,
        debug: bool = False,
        sample_stride: int | None = None,
        collect_trace: bool = False,
        ema_ratio: float = 1.0 / 200.0,
    ) -> None:
        self.scenario = scenario
        self.policy = policy
        self.horizon = horizon if horizon is not None else scenario.config.horizon
        self.debug = debug
        self.sample_stride = sample_stride
        self.collect_trace = collect_trace
        self.ema_ratio = ema_ratio

        self.m = scenario.config.m
        self.now: Fraction = ZERO
        self._heap: list = []
        self._seq = 0
        self._dirty: set[int] = set()
        self.metrics = MetricsTrace()
        self.trace: list[str] = []
        self.finished_jobs: list[Job] = []

        self.tasks: dict[int, TaskRuntime] = {}
        self.servers: dict[int, ServerRuntime] = {}
        self.task_rngs: dict[int, random.Random] = {}
        self._next_sid = 0
        self._seen_server_misses: set[tuple[int, Fraction]] = set()

        self.partitioned = policy.kind == "partitioned"
        if self.partitioned:
            self.cores = [CoreLedger(core_id=c) for c in range(self.m)]
            self.ready = [grub.ReadyQueue() for _ in range(self.m)]
            self.executing: list[int | None] = [None] * self.m
            self.version = [0] * self.m
            self.windows: dict[int, MissWindow] = {}
            self.active_placement: dict[int, _Request] = {}
            self.queued: dict[int, deque[_Request]] = {c: deque() for c in range(self.m)}
            self._next_rid = 0
            self._released: set[int] = set()  # tasks whose allocation was given back
            self._max_period = 1
        else:
            if scenario.dynamic_tasks():
                raise ConfigError("dynamic task events need a partitioned policy")
            self.glob = GlobalLedger(mode=policy.reclaiming, m=self.m)
            self.gready = grub.ReadyQueue()
            self.running: dict[int, int | None] = {c: None for c in range(self.m)}
            self.last_core: dict[int, int | None] = {}
            self.version = [0] * self.m

        self._setup()

    # ------------------------------------------------------------- setup --

    def _setup(self) -> None:
        partition = None
        if self.partitioned:
            partition = self.scenario.partitions.get(self.policy.heuristic.value)
            if partition is None:
                raise ConfigError(
                    f"scenario has no partition for heuristic {self.policy.heuristic.value}"
                )
        for gt in self.scenario.static_tasks():
            core = partition[gt.spec.id] if self.partitioned else gt.spec.id % self.m
            self._add_task(gt, core)
        for gt in self.scenario.dynamic_tasks():
            if gt.spec.arrival_time <= self.horizon:
                self._push(Fraction(gt.spec.arrival_time), K_INSERT, gt.spec.id, (gt,))
        if self.sample_stride:
            self._ema = [0.0] * self.m
            window = self.policy.balancing.window_size if self.partitioned else 20
            self._core_outcomes: list[deque[bool]] = [
                deque(maxlen=window) for _ in range(self.m)
            ]
            self.metrics.active_util = [[] for _ in range(self.m)]
            self.metrics.active_util_ema = [[] for _ in range(self.m)]
            self.metrics.window_miss_ratio = [[] for _ in range(self.m)]
            self._push(ZERO, K_METRICS, 0, (0,))

    def _add_task(self, gt: GeneratedTask, core: int) -> None:
        sid = self._next_sid
        self._next_sid += 1
        server = ServerRuntime(sid=sid, task_id=gt.spec.id, params=gt.server, bound_core=core)
        task = TaskRuntime(spec=gt.spec, server_sid=sid, home_core=core)
        self.servers[sid] = server
        self.tasks[gt.spec.id] = task
        self.task_rngs[gt.spec.id] = random.Random(gt.rng_seed)
        if self.partitioned:
            self.cores[core].add_allocated(gt.server.utilization)
            self.windows[gt.spec.id] = MissWindow(
                self.policy.balancing.window_size, self.policy.balancing.miss_threshold
            )
            self._max_period = max(self._max_period, gt.server.period)
        arrival = gt.spec.arrival_time
        if arrival <= self.horizon and self._before_departure(task, arrival):
            self._push(Fraction(arrival), K_ARRIVAL, gt.spec.id, (gt.spec.id, arrival))
        if gt.spec.departure_time is not None and gt.spec.departure_time <= self.horizon:
            self._push(Fraction(gt.spec.departure_time), K_REMOVE, gt.spec.id, (gt.spec.id,))

    @staticmethod
    def _before_departure(task: TaskRuntime, t: int) -> bool:
        dep = task.spec.departure_time
        return dep is None or t < dep

    # ------------------------------------------------------- event queue --

    def _push(self, t: Fraction, kind: int, entity: int, payload: tuple) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, _PRIO[kind], entity, self._seq, kind, payload))

    def _emit(self, line: str) -> None:
        if self.collect_trace:
            self.trace.append(f"t={frac_str(self.now)} {line}")

    # ---------------------------------------------------------- main loop --

    def run(self) -> SimResult:
        handlers = {
            K_COMPLETION: self._on_completion,
            K_VREACHED: self._on_vreached,
            K_RELEASE: self._on_release,
            K_ARRIVAL: self._on_arrival,
            K_EXHAUST: self._on_exhaustion,
            K_LB_TIMEOUT: self._on_lb_timeout,
            K_INSERT: self._on_insert,
            K_REMOVE: self._on_remove,
            K_METRICS: self._on_metrics,
        }
        horizon = Fraction(self.horizon)
        while self._heap:
            t, _, _, _, kind, payload = heapq.heappop(self._heap)
            if t > horizon:
                break
            if self.debug:
                self._scan_server_deadlines(t)
            self._advance_to(t)
            handlers[kind](*payload)
            self._refresh()
            if self.debug:
                self._debug_checks()
        return SimResult(self.metrics, self.trace, self.finished_jobs)

    def _advance_to(self, t: Fraction) -> None:
        dt = t - self.now
        if dt == 0:
            return
        if dt < 0:
            raise InvariantViolation(f"time went backwards: {self.now} -> {t}")
        for c in range(self.m):
            sid = self.executing[c] if self.partitioned else self.running[c]
            if sid is None:
                continue
            s = self.servers[sid]
            grub.advance_executing(s, dt, self._effective_bw(s, c))
            job = self.tasks[s.task_id].pending[0]
            job.remaining -= dt
            if job.remaining < 0:
                raise InvariantViolation(
                    f"job overshoot: task {s.task_id} remaining {job.remaining}"
                )
            if s.is_temporary:
                job.consumed_away += dt
            else:
                job.consumed_home += dt
        self.now = t

    def _effective_bw(self, server: ServerRuntime, core: int) -> Fraction:
        """Contending bandwidth that drives this server's virtual time."""
        if self.partitioned:
            return self.cores[core].active_util
        bw = reclaim_bandwidth(server, self.glob, core)
        # a core cannot supply more than itself; over-booked cores reclaim nothing
        return min(bw, ONE)

    # ---------------------------------------------------- dispatch refresh --

    def _mark_dirty(self, core: int) -> None:
        self._dirty.add(core if self.partitioned else 0)

    def _refresh(self) -> None:
        if not self._dirty:
            return
        if self.partitioned:
            for c in sorted(self._dirty):
                self._refresh_core(c)
        else:
            self._refresh_global()
        self._dirty.clear()

    def _refresh_core(self, c: int) -> None:
        head = self.ready[c].head()
        new = head.sid if head is not None else None
        cur = self.executing[c]
        if new != cur:
            if cur is not None:
                prev = self.servers.get(cur)
                if prev is not None and prev.state is ServerState.EXECUTING:
                    prev.state = ServerState.READY
            if new is not None:
                self.servers[new].state = ServerState.EXECUTING
            self.executing[c] = new
        self.version[c] += 1
        if new is not None:
            self._push_provisional(self.servers[new], c)

    def _refresh_global(self) -> None:
        ready_servers = list(self.gready.servers())
        assignment, migs = global_dispatch(ready_servers, self.running, self.last_core)
        for sid, frm, to in migs:
            self.metrics.gedf_migrations += 1
            self._emit(f"ev=gedf_migration server={sid} from={frm} to={to}")
        for core in sorted(assignment):
            sid = assignment[core]
            old = self.running[core]
            if old != sid:
                if old is not None:
                    prev = self.servers.get(old)
                    if prev is not None and prev.state is ServerState.EXECUTING:
                        prev.state = ServerState.READY
                if sid is not None:
                    s = self.servers[sid]
                    s.state = ServerState.EXECUTING
                    self.last_core[sid] = core
                    self.glob.rebook(s, core)
                self.running[core] = sid
        for core in range(self.m):
            self.version[core] += 1
            sid = self.running[core]
            if sid is not None:
                self._push_provisional(self.servers[sid], core)

    def _push_provisional(self, s: ServerRuntime, c: int) -> None:
        job = self.tasks[s.task_id].pending[0]
        self._push(self.now + job.remaining, K_COMPLETION, s.sid, (c, self.version[c], s.sid))
        if s.virtual_time >= s.sched_deadline:
            self._push(self.now, K_EXHAUST, s.sid, (c, self.version[c], s.sid))
        else:
            dt = grub.exhaustion_horizon(s, self._effective_bw(s, c))
            self._push(self.now + dt, K_EXHAUST, s.sid, (c, self.version[c], s.sid))

    def _ledger_for(self, s: ServerRuntime):
        return self.cores[s.bound_core] if self.partitioned else self.glob

    def _queue_for(self, s: ServerRuntime) -> grub.ReadyQueue:
        return self.ready[s.bound_core] if self.partitioned else self.gready

    def _current_sid(self, c: int) -> int | None:
        return self.executing[c] if self.partitioned else self.running[c]

    # ------------------------------------------------------------ arrivals --

    def _on_arrival(self, tid: int, arrival: int) -> None:
        task = self.tasks[tid]
        if task.departed or not self._before_departure(task, arrival):
            return
        rng = self.task_rngs[tid]
        demand = sample_exec(task.spec.exec_model, rng)
        job = Job(
            task_id=tid,
            index=task.next_index,
            arrival=arrival,
            exec_demand=demand,
            remaining=Fraction(demand),
        )
        task.next_index += 1
        task.pending.append(job)
        self.metrics.arrivals += 1
        self._emit(f"ev=arrival task={tid} job={job.index} demand={demand}")

        nxt = arrival + task.spec.period
        if task.spec.kind is TaskKind.SPORADIC:
            nxt += rng.randint(0, task.spec.period // 5)
        if nxt <= self.horizon and self._before_departure(task, nxt):
            self._push(Fraction(nxt), K_ARRIVAL, tid, (tid, nxt))

        if len(task.pending) == 1 and task.serving_sid is None:
            s = self.servers[task.server_sid]
            if s.state not in (ServerState.INACTIVE, ServerState.ACT_NON_CONTENDING):
                raise InvariantViolation(f"idle task {tid} with contending server")
            grub.on_job_arrival(s, arrival, self._ledger_for(s))
            self._queue_for(s).add(s)
            self._mark_dirty(s.bound_core)

    # --------------------------------------------------------- completions --

    def _on_completion(self, c: int, version: int, sid: int) -> None:
        if version != self.version[c]:
            return
        s = self.servers[sid]
        task = self.tasks[s.task_id]
        job = task.pending.popleft()
        if job.remaining != 0:
            raise InvariantViolation(f"completion with remaining {job.remaining}")
        job.finish = self.now
        job.missed = self.now > job.arrival + task.spec.period
        self.metrics.jobs_total += 1
        if job.missed:
            self.metrics.jobs_missed += 1
        self.finished_jobs.append(job)
        self._emit(
            f"ev=completion task={task.spec.id} job={job.index} missed={int(job.missed)}"
            f" v={frac_str(s.virtual_time)}"
        )
        if self.sample_stride:
            self._core_outcomes[task.home_core].append(job.missed)

        if s.is_temporary:
            task.serving_sid = None
            task.migrated_flag = False
            self._emit(f"ev=temp_return task={task.spec.id}")
            grub.on_job_completion(s, self.now, self.cores[c], pending=False)
            self.ready[c].discard(s.sid)
            if s.state is ServerState.INACTIVE:
                self._destroy_temp(s)
            else:
                self._push(s.virtual_time, K_VREACHED, s.sid, (s.sid, s.epoch))
            self._mark_dirty(c)
            if task.pending:
                hs = self.servers[task.server_sid]
                grub.on_job_arrival(hs, self.now, self._ledger_for(hs))
                self._queue_for(hs).add(hs)
                self._mark_dirty(hs.bound_core)
            else:
                self._maybe_release_departed(task)
        else:
            pending = bool(task.pending)
            grub.on_job_completion(s, self.now, self._ledger_for(s), pending=pending)
            if not pending:
                self._queue_for(s).discard(s.sid)
                if s.state is ServerState.ACT_NON_CONTENDING:
                    self._push(s.virtual_time, K_VREACHED, s.sid, (s.sid, s.epoch))
                else:
                    self._maybe_release_departed(task)
            self._mark_dirty(s.bound_core)

        if (
            self.partitioned
            and self.policy.balancing.enabled
            and not task.departed
            and not task.placement_pending
        ):
            if self.windows[task.spec.id].record(job.missed):
                self._trigger_permanent_migration(task)
                self.windows[task.spec.id].reset()

    def _destroy_temp(self, s: ServerRuntime) -> None:
        self.cores[s.bound_core].sub_migrated(s.granted_util)
        self.ready[s.bound_core].discard(s.sid)
        del self.servers[s.sid]
        self._check_placements(s.bound_core)

    # ------------------------------------------------------------- timers --

    def _on_vreached(self, sid: int, epoch: int) -> None:
        s = self.servers.get(sid)
        if s is None or s.epoch != epoch or s.state is not ServerState.ACT_NON_CONTENDING:
            return
        ledger = self._ledger_for(s)
        if s.is_temporary:
            # sub_migrated happens inside the grub rule for temporaries
            grub.on_virtual_time_reached(s, self.now, ledger)
            self.ready[s.bound_core].discard(s.sid)
            del self.servers[s.sid]
            self._check_placements(s.bound_core)
        else:
            grub.on_virtual_time_reached(s, self.now, ledger)
            self._emit(f"ev=inactive server={sid}")
            self._maybe_release_departed(self.tasks[s.task_id])
        self._mark_dirty(s.bound_core)

    def _on_release(self, core: int, num: int, den: int) -> None:
        self.cores[core].sub_allocated(Fraction(num, den))
        self._check_placements(core)

    # --------------------------------------------------------- exhaustion --

    def _on_exhaustion(self, c: int, version: int, sid: int) -> None:
        if version != self.version[c]:
            return
        if self._current_sid(c) != sid:
            raise InvariantViolation(f"exhaustion for non-executing server {sid}")
        s = self.servers[sid]
        if s.virtual_time != s.sched_deadline:
            raise InvariantViolation(
                f"exhaustion with V={s.virtual_time} != d={s.sched_deadline}"
            )
        task = self.tasks[s.task_id]
        if self.partitioned and self.policy.migration.enabled:
            self._attempt_temporary_migration(s, task, c)
        else:
            self._postpone(s, c)

    def _postpone(self, s: ServerRuntime, c: int) -> None:
        grub.postpone_deadline(s)
        self.metrics.postponements += 1
        self._emit(f"ev=postpone server={s.sid} deadline={frac_str(s.sched_deadline)}")
        self._mark_dirty(c)

    def _attempt_temporary_migration(self, s: ServerRuntime, task: TaskRuntime, c: int) -> None:
        """One pass of the migration decision; either moves the job to a
        temporary server on the least-loaded core or postpones the deadline.

        The per-task flag limits every job to one migration per exhaustion
        cycle: a second exhaustion with the flag set postpones and clears it.
        """
        cfg = self.policy.migration
        if not is_eligible(s, self.now) or task.migrated_flag:
            task.migrated_flag = False
            self._postpone(s, c)
            return
        dest = select_destination_core(self.cores, source=c)
        if dest is None:
            task.migrated_flag = False
            self._postpone(s, c)
            return
        grant = admitted_migrating_utilization(
            s.params.migrating_utilization, self.cores[dest]
        )
        if not benefit_check(
            grant, s.sched_deadline, self.now, benefit_denominator(self.cores[dest], cfg), cfg
        ):
            task.migrated_flag = False
            self._postpone(s, c)
            return

        temp = ServerRuntime(
            sid=self._next_sid,
            task_id=task.spec.id,
            params=s.params,
            bound_core=dest,
            state=ServerState.READY,
            virtual_time=Fraction(self.now),
            sched_deadline=s.sched_deadline,
            is_temporary=True,
            parent_sid=s.parent_sid if s.is_temporary else s.sid,
            granted_util=grant,
        )
        self._next_sid += 1
        self.servers[temp.sid] = temp
        self.cores[dest].add_migrated(grant)
        self.cores[dest].activate(temp)
        self.ready[dest].add(temp)
        task.serving_sid = temp.sid
        task.migrated_flag = True
        if cfg.migration_cost:
            task.pending[0].remaining += cfg.migration_cost

        # the source server drops out of contention; its virtual time is
        # beyond the deadline, hence beyond now, so it stays active
        if s.virtual_time <= self.now:
            raise InvariantViolation("migrating server should have V > t")
        self.ready[c].discard(s.sid)
        s.state = ServerState.ACT_NON_CONTENDING
        s.bump()
        self._push(s.virtual_time, K_VREACHED, s.sid, (s.sid, s.epoch))

        self.metrics.temp_migrations += 1
        self._emit(
            f"ev=temp_migration task={task.spec.id} from={c} to={dest} grant={frac_str(grant)}"
        )
        self._mark_dirty(c)
        self._mark_dirty(dest)

    # ------------------------------------------------------ load balancing --

    def _deferred_timeout(self) -> int:
        cfg = self.policy.balancing
        return cfg.deferred_timeout if cfg.deferred_timeout is not None else 2 * self._max_period

    def _new_request(
        self, kind: PlacementKind, task_id: int, util: Fraction, payload: GeneratedTask | None
    ) -> _Request:
        self._next_rid += 1
        return _Request(
            rid=self._next_rid,
            kind=kind,
            task_id=task_id,
            util=util,
            deadline=self.now + self._deferred_timeout(),
            payload=payload,
        )

    def _start_deferral(self, req: _Request, core: int) -> None:
        self.active_placement[core] = req
        self.cores[core].incoming_migrations_enabled = False
        self._push(req.deadline, K_LB_TIMEOUT, core, (core, req.rid))
        self._emit(f"ev=lb_deferred task={req.task_id} core={core}")

    def _dispatch_request(self, req: _Request, exclude: int | None) -> None:
        """Run the three-way placement decision and act on the outcome."""
        blocked = set(self.active_placement)
        decision = decide_placement(
            req.util, self.cores, self.policy.balancing.heuristic, exclude, blocked
        )
        if decision.outcome is Outcome.IMMEDIATE:
            self._complete_request(req, decision.core)
            return
        if decision.outcome is Outcome.DEFERRED:
            task = self.tasks.get(req.task_id)
            if task is not None:
                task.placement_pending = True
            self._start_deferral(req, decision.core)
            return
        # a core busy with another placement may still qualify: queue FIFO
        unblocked = decide_placement(
            req.util, self.cores, self.policy.balancing.heuristic, exclude
        )
        if unblocked.outcome is Outcome.DEFERRED and unblocked.core in self.active_placement:
            task = self.tasks.get(req.task_id)
            if task is not None:
                task.placement_pending = True
            self.queued[unblocked.core].append(req)
            self._push(req.deadline, K_LB_TIMEOUT, unblocked.core, (unblocked.core, req.rid))
            self._emit(f"ev=lb_deferred task={req.task_id} core={unblocked.core}")
            return
        if req.kind is PlacementKind.NEW_TASK_ADMISSION:
            self.metrics.rejections += 1
            self._emit(f"ev=task_rejected task={req.task_id}")

    def _complete_request(self, req: _Request, core: int) -> None:
        if req.kind is PlacementKind.NEW_TASK_ADMISSION:
            self._place_inserted(req.payload, core)
        else:
            task = self.tasks[req.task_id]
            task.placement_pending = False
            self._finalize_permanent_migration(task, core)

    def _trigger_permanent_migration(self, task: TaskRuntime) -> None:
        util = self.servers[task.server_sid].params.utilization
        req = self._new_request(PlacementKind.PERMANENT_MIGRATION, task.spec.id, util, None)
        self._dispatch_request(req, exclude=task.home_core)

    def _finalize_permanent_migration(self, task: TaskRuntime, dst: int) -> None:
        """Move the task's server (with its variables) to the destination.

        The destination allocation grows immediately; the source allocation
        is given back only once the server's virtual time has been reached,
        which keeps both cores' books conservative during the hand-over.
        """
        s = self.servers[task.server_sid]
        src = task.home_core
        if s.state in (ServerState.READY, ServerState.EXECUTING):
            self.ready[src].discard(s.sid)
            if s.state is ServerState.EXECUTING:
                s.state = ServerState.READY
            self.cores[src].deactivate(s)
            self.cores[dst].activate(s)
            self.ready[dst].add(s)
        elif s.state is ServerState.ACT_NON_CONTENDING:
            self.cores[src].deactivate(s)
            self.cores[dst].activate(s)
        s.bound_core = dst
        task.home_core = dst
        u = s.params.utilization
        self.cores[dst].add_allocated(u)
        if s.virtual_time <= self.now:
            self.cores[src].sub_allocated(u)
            self._check_placements(src)
        else:
            self._push(
                s.virtual_time, K_RELEASE, src, (src, u.numerator, u.denominator)
            )
        self.metrics.perm_migrations += 1
        self._emit(f"ev=perm_migration task={task.spec.id} from={src} to={dst}")
        self.windows[task.spec.id].reset()
        self._mark_dirty(src)
        self._mark_dirty(dst)

    def _check_placements(self, core: int) -> None:
        """Re-test the core's active deferral after its books shrank."""
        req = self.active_placement.get(core)
        if req is not None and deferral_satisfied(req.util, self.cores[core]):
            del self.active_placement[core]
            self.cores[core].incoming_migrations_enabled = True
            self._complete_request(req, core)
            self._drain_queue(core)

    def _drain_queue(self, core: int) -> None:
        while core not in self.active_placement and self.queued[core]:
            req = self.queued[core].popleft()
            if not self._request_alive(req):
                continue
            exclude = None
            if req.kind is PlacementKind.PERMANENT_MIGRATION:
                exclude = self.tasks[req.task_id].home_core
            self._dispatch_request(req, exclude)

    def _request_alive(self, req: _Request) -> bool:
        if req.kind is PlacementKind.NEW_TASK_ADMISSION:
            return req.task_id not in self.tasks
        task = self.tasks.get(req.task_id)
        return task is not None and not task.departed

    def _on_lb_timeout(self, core: int, rid: int) -> None:
        req = self.active_placement.get(core)
        if req is not None and req.rid == rid:
            del self.active_placement[core]
            self.cores[core].incoming_migrations_enabled = True
            self._abort_request(req)
            self._drain_queue(core)
            return
        for queued in self.queued[core]:
            if queued.rid == rid:
                self.queued[core].remove(queued)
                if self._request_alive(queued):
                    self._abort_request(queued)
                return

    def _abort_request(self, req: _Request) -> None:
        if req.kind is PlacementKind.NEW_TASK_ADMISSION:
            self.metrics.rejections += 1
            self._emit(f"ev=task_rejected task={req.task_id}")
        else:
            task = self.tasks.get(req.task_id)
            if task is not None:
                task.placement_pending = False
            self._emit(f"ev=lb_abort task={req.task_id}")

    # ------------------------------------------------------ dynamic tasks --

    def _on_insert(self, gt: GeneratedTask) -> None:
        req = self._new_request(
            PlacementKind.NEW_TASK_ADMISSION, gt.spec.id, gt.server.utilization, gt
        )
        self._dispatch_request(req, exclude=None)

    def _place_inserted(self, gt: GeneratedTask, core: int) -> None:
        # releases start at the next whole tick at or after the placement
        start = int(self.now) + (0 if self.now == int(self.now) else 1)
        dep = gt.spec.departure_time
        if dep is not None and start >= dep:
            # the admission deferral outlived the task's whole stay
            self.metrics.rejections += 1
            self._emit(f"ev=task_rejected task={gt.spec.id}")
            return
        spec = gt.spec
        if start != spec.arrival_time:
            spec = replace(spec, arrival_time=start)
            gt = GeneratedTask(spec, gt.server, gt.rng_seed, gt.dynamic)
        self._add_task(gt, core)
        self._emit(f"ev=task_placed task={gt.spec.id} core={core}")

    def _on_remove(self, tid: int) -> None:
        task = self.tasks.get(tid)
        if task is None:
            return
        task.departed = True
        # drop any outstanding placement request of this task
        for core, req in list(self.active_placement.items()):
            if req.task_id == tid and req.kind is PlacementKind.PERMANENT_MIGRATION:
                del self.active_placement[core]
                self.cores[core].incoming_migrations_enabled = True
                self._drain_queue(core)
        self._emit(f"ev=task_departed task={tid}")
        self._maybe_release_departed(task)

    def _maybe_release_departed(self, task: TaskRuntime) -> None:
        if not (self.partitioned and task.departed):
            return
        if task.pending or task.spec.id in self._released:
            return
        s = self.servers.get(task.server_sid)
        if s is None or s.state is not ServerState.INACTIVE:
            return
        self._released.add(task.spec.id)
        self.cores[task.home_core].sub_allocated(s.params.utilization)
        self._check_placements(task.home_core)

    # ----------------------------------------------------------- metrics --

    def _on_metrics(self, t: int) -> None:
        alpha = self.ema_ratio
        for c in range(self.m):
            ua = float(self.cores[c].active_util) if self.partitioned else float(
                min(self.glob.booked[c], ONE)
            )
            self._ema[c] = (1.0 - alpha) * self._ema[c] + alpha * ua
            self.metrics.active_util[c].append(ua)
            self.metrics.active_util_ema[c].append(self._ema[c])
            outcomes = self._core_outcomes[c]
            ratio = (sum(outcomes) / len(outcomes)) if outcomes else 0.0
            self.metrics.window_miss_ratio[c].append(ratio)
        self.metrics.sample_times.append(t)
        nxt = t + self.sample_stride
        if nxt <= self.horizon:
            self._push(Fraction(nxt), K_METRICS, 0, (nxt,))

    # ------------------------------------------------------- debug checks --

    def _scan_server_deadlines(self, t: Fraction) -> None:
        """Record contending servers whose deadline passed with unspent budget."""
        for s in self.servers.values():
            if s.state in (ServerState.READY, ServerState.EXECUTING):
                if s.sched_deadline < t and s.virtual_time < s.sched_deadline:
                    key = (s.sid, s.sched_deadline)
                    if key not in self._seen_server_misses:
                        self._seen_server_misses.add(key)
                        self.metrics.server_deadline_misses += 1

    def _debug_checks(self) -> None:
        if self.partitioned:
            self._debug_checks_partitioned()
        else:
            self._debug_checks_global()

    def _debug_checks_partitioned(self) -> None:
        active = [ZERO] * self.m
        for s in self.servers.values():
            if s.is_active:
                active[s.bound_core] += s.utilization
            if s.state is ServerState.ACT_NON_CONTENDING and s.virtual_time < self.now:
                raise InvariantViolation(f"server {s.sid} lingering past its virtual time")
        for c in range(self.m):
            ledger = self.cores[c]
            if ledger.active_util != active[c]:
                raise InvariantViolation(
                    f"core {c}: ledger active {ledger.active_util} != recomputed {active[c]}"
                )
            if ledger.active_util > ledger.allocated_util + ledger.migrated_util:
                raise InvariantViolation(f"core {c}: active exceeds allocated+migrated")
            if ledger.allocated_util + ledger.migrated_util > 1:
                raise InvariantViolation(f"core {c}: allocated+migrated exceeds 1")
            head = self.ready[c].head()
            want = head.sid if head is not None else None
            if self.executing[c] != want:
                raise InvariantViolation(f"core {c}: dispatch out of date")
            for s in self.ready[c].servers():
                if s.bound_core != c or s.state not in (
                    ServerState.READY,
                    ServerState.EXECUTING,
                ):
                    raise InvariantViolation(f"core {c}: stale ready entry {s.sid}")

    def _debug_checks_global(self) -> None:
        total = ZERO
        booked = [ZERO] * self.m
        for s in self.servers.values():
            if s.is_active:
                total += s.utilization
                booked[self.glob.booked_core.get(s.sid, s.sid % self.m)] += s.utilization
        if total != self.glob.active_total:
            raise InvariantViolation("global active utilization out of sync")
        if booked != self.glob.booked:
            raise InvariantViolation("per-core booked utilization out of sync")
        if self.glob.spare + self.glob.active_total != self.m:
            raise InvariantViolation("spare bandwidth conservation broken")


def run_simulation(
    scenario: Scenario,
    policy: PolicyConfig,
    horizon: int | None = None,
    debug: bool = False,
    sample_stride: int | None = None,
    collect_trace: bool = False,
    ema_ratio: float = 1.0 / 200.0,
) -> SimResult:
    """Simulate one scenario under one policy; deterministic in all inputs."""
    engine = Engine(
        scenario,
        policy,
        horizon=horizon,
        debug=debug,
        sample_stride=sample_stride,
        collect_trace=collect_trace,
        ema_ratio=ema_ratio,
    )
    return engine.run()
