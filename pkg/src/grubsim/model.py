"""Domain types shared by all schedulers: tasks, jobs, servers and cores.

Time is measured in integer ticks. Virtual times, event timestamps and
residual demands become exact rationals at run time because the reclaiming
rate of a reservation server is a ratio of bandwidths.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import ConfigError
from .rational import ZERO, bandwidth_add, bandwidth_sub


class TaskKind(enum.Enum):
    PERIODIC = "periodic"
    SPORADIC = "sporadic"


class ExecKind(enum.Enum):
    TWO_LEVEL_UNIFORM = "two_level_uniform"
    WEIBULL = "weibull"


@dataclass(frozen=True)
class ExecModel:
    """Distribution of job execution times for one task.

    The two-level uniform model draws from ``[minexec, budget]`` with
    probability ``pm`` and from ``[budget+1, maxexec]`` otherwise, so the
    fraction of jobs exceeding the reserved budget is exactly ``1 - pm``.
    The Weibull model (shape ``wk``, scale ``wlam``, location ``wtheta``)
    is sampled by inverse transform and rejection-truncated to
    ``[minexec, maxexec]``.
    """

    kind: ExecKind
    minexec: int
    maxexec: int
    budget: int
    pm: float
    wk: float | None = None
    wlam: float | None = None
    wtheta: float | None = None

    def __post_init__(self) -> None:
        if not (0 < self.minexec < self.maxexec):
            raise ConfigError(f"bad exec range [{self.minexec}, {self.maxexec}]")
        if not (self.minexec <= self.budget < self.maxexec):
            raise ConfigError(f"budget {self.budget} outside [{self.minexec}, {self.maxexec})")
        if not (0.0 <= self.pm <= 1.0):
            raise ConfigError(f"pm {self.pm} outside [0, 1]")
        if self.kind is ExecKind.WEIBULL and (self.wk is None or self.wlam is None or self.wtheta is None):
            raise ConfigError("weibull model needs wk, wlam, wtheta")


@dataclass(frozen=True)
class TaskSpec:
    """A periodic or sporadic task; relative deadline equals the period."""

    id: int
    period: int
    kind: TaskKind
    exec_model: ExecModel
    arrival_time: int = 0
    departure_time: int | None = None

    def __post_init__(self) -> None:
        if self.period <= 0:
            raise ConfigError(f"task {self.id}: period must be positive")
        if self.arrival_time < 0:
            raise ConfigError(f"task {self.id}: arrival_time must be >= 0")
        if self.departure_time is not None and self.departure_time < self.arrival_time:
            raise ConfigError(f"task {self.id}: departure precedes arrival")

    @property
    def deadline(self) -> int:
        return self.period


@dataclass(frozen=True)
class ServerParams:
    """Static parameters of a reservation server: budget Q every period P."""

    budget: int
    period: int
    utilization: Fraction
    migrating_utilization: Fraction

    def __post_init__(self) -> None:
        if self.budget <= 0 or self.period <= 0:
            raise ConfigError("server budget and period must be positive")
        if self.utilization != Fraction(self.budget, self.period):
            raise ConfigError("server utilization must equal budget/period exactly")
        if not (0 < self.utilization <= 1):
            raise ConfigError(f"server utilization {self.utilization} outside (0, 1]")
        if not (0 <= self.migrating_utilization <= 1):
            raise ConfigError("migrating utilization outside [0, 1]")


@dataclass
class Job:
    """One released instance of a task."""

    task_id: int
    index: int
    arrival: int
    exec_demand: int
    remaining: Fraction
    finish: Fraction | None = None
    missed: bool = False
    # Split of the consumed demand between the home core and temporary
    # servers on other cores; used by conservation checks.
    consumed_home: Fraction = ZERO
    consumed_away: Fraction = ZERO


class ServerState(enum.Enum):
    INACTIVE = "inactive"
    READY = "ready"
    EXECUTING = "executing"
    ACT_NON_CONTENDING = "act_non_contending"


ACTIVE_STATES = (ServerState.READY, ServerState.EXECUTING, ServerState.ACT_NON_CONTENDING)


@dataclass
class ServerRuntime:
    """Mutable scheduler state of one reservation server.

    ``virtual_time`` advances at rate (active utilization / own utilization)
    while the server executes; when it reaches ``sched_deadline`` the budget
    for the current deadline window is spent. Temporary servers are created
    by job migration and destroyed once they drain back to INACTIVE.
    """

    sid: int
    task_id: int
    params: ServerParams
    bound_core: int
    state: ServerState = ServerState.INACTIVE
    virtual_time: Fraction = ZERO
    sched_deadline: Fraction = ZERO
    is_temporary: bool = False
    parent_sid: int | None = None
    granted_util: Fraction = ZERO
    # epoch invalidates stale timers whenever the state changes
    epoch: int = 0

    @property
    def utilization(self) -> Fraction:
        return self.granted_util if self.is_temporary else self.params.utilization

    @property
    def is_active(self) -> bool:
        return self.state in ACTIVE_STATES

    def bump(self) -> None:
        self.epoch += 1


@dataclass
class CoreLedger:
    """Per-core bandwidth bookkeeping with conservation counters.

    ``allocated_util`` counts permanently assigned servers (active or not),
    ``migrated_util`` counts live temporary servers, and ``active_util``
    counts all active servers including temporaries. Every increment must be
    matched by a decrement when the corresponding server drains; subtraction
    below zero aborts the simulation.
    """

    core_id: int
    allocated_util: Fraction = ZERO
    migrated_util: Fraction = ZERO
    active_util: Fraction = ZERO
    incoming_migrations_enabled: bool = True
    # running totals of all increments, for trace-level conservation checks
    inc_allocated: Fraction = ZERO
    inc_migrated: Fraction = ZERO
    inc_active: Fraction = ZERO

    def add_allocated(self, u: Fraction) -> None:
        self.allocated_util = bandwidth_add(self.allocated_util, u)
        self.inc_allocated += u

    def sub_allocated(self, u: Fraction) -> None:
        self.allocated_util = bandwidth_sub(self.allocated_util, u)

    def add_migrated(self, u: Fraction) -> None:
        self.migrated_util = bandwidth_add(self.migrated_util, u)
        self.inc_migrated += u

    def sub_migrated(self, u: Fraction) -> None:
        self.migrated_util = bandwidth_sub(self.migrated_util, u)

    def activate(self, server: ServerRuntime) -> None:
        self.active_util = bandwidth_add(self.active_util, server.utilization)
        self.inc_active += server.utilization

    def deactivate(self, server: ServerRuntime) -> None:
        self.active_util = bandwidth_sub(self.active_util, server.utilization)


@dataclass
class TaskRuntime:
    """Per-task run-time bookkeeping owned by the engine.

    Jobs queue FIFO here; a job cannot start before its predecessor
    finishes, even when the predecessor runs on a temporary server on
    another core. ``migrated_flag`` is the per-task migration flag that
    limits repeat migrations of the same job.
    """

    spec: TaskSpec
    server_sid: int
    home_core: int
    pending: deque[Job] = field(default_factory=deque)
    migrated_flag: bool = False
    serving_sid: int | None = None  # temporary server currently holding the head job
    next_index: int = 0
    departed: bool = False
    placement_pending: bool = False
