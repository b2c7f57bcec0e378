"""Load balancing: miss-triggered permanent migration and task admission.

A task that misses too many deadlines within a monitoring window of recent
jobs is moved, together with its server, to another core. The move is
immediate when the destination has room for the task next to the bandwidth
already migrated there; otherwise incoming migrations on the destination are
disabled and the move waits (bounded by a timeout) for the migrated
bandwidth to drain. The same three-way decision admits tasks entering the
system at run time.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

from .model import CoreLedger
from .rational import ONE


class Heuristic(enum.Enum):
    FIRST_FIT = "ff"
    BEST_FIT = "bf"
    WORST_FIT = "wf"


@dataclass(frozen=True)
class BalancerConfig:
    heuristic: Heuristic = Heuristic.WORST_FIT
    window_size: int = 20
    miss_threshold: Fraction = Fraction(1, 10)
    deferred_timeout: int | None = None  # None: 2 x largest server period
    enabled: bool = True

    def __post_init__(self) -> None:
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if self.deferred_timeout is not None and self.deferred_timeout <= 0:
            raise ValueError("deferred_timeout must be positive")


class MissWindow:
    """Ring buffer of the last ``window_size`` job outcomes of one task.

    The trigger requires a full window with a miss ratio strictly above the
    threshold; the window is cleared after every placement decision so a
    fresh burst of evidence is needed before the next attempt.
    """

    def __init__(self, window_size: int, threshold: Fraction) -> None:
        self.window_size = window_size
        self.threshold = threshold
        self._outcomes: deque[bool] = deque(maxlen=window_size)

    def record(self, missed: bool) -> bool:
        """Record one finished job; return True when the trigger fires."""
        self._outcomes.append(missed)
        if len(self._outcomes) < self.window_size:
            return False
        misses = sum(self._outcomes)
        return Fraction(misses, self.window_size) > self.threshold

    def reset(self) -> None:
        self._outcomes.clear()

    @property
    def miss_ratio(self) -> Fraction:
        if not self._outcomes:
            return Fraction(0)
        return Fraction(sum(self._outcomes), len(self._outcomes))


class PlacementKind(enum.Enum):
    PERMANENT_MIGRATION = "permanent_migration"
    NEW_TASK_ADMISSION = "new_task_admission"


@dataclass
class PendingPlacement:
    """A placement waiting for migrated bandwidth on the target to drain."""

    placement_id: int
    task_id: int
    target_core: int
    utilization: Fraction
    deadline: Fraction
    kind: PlacementKind


class Outcome(enum.Enum):
    IMMEDIATE = "immediate"
    DEFERRED = "deferred"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class PlacementDecision:
    outcome: Outcome
    core: int | None = None


def select_core_heuristic(
    candidates: list[tuple[int, Fraction]], heuristic: Heuristic
) -> int | None:
    """Pick a core from (core id, residual) pairs already known to fit.

    First fit takes the lowest id, best fit the tightest residual and worst
    fit the largest residual; residual ties break toward the lowest id.
    """
    if not candidates:
        return None
    if heuristic is Heuristic.FIRST_FIT:
        return min(candidates, key=lambda c: c[0])[0]
    if heuristic is Heuristic.BEST_FIT:
        return min(candidates, key=lambda c: (c[1], c[0]))[0]
    return min(candidates, key=lambda c: (-c[1], c[0]))[0]


def decide_placement(
    util: Fraction,
    ledgers: list[CoreLedger],
    heuristic: Heuristic,
    exclude: int | None = None,
    blocked: set[int] | None = None,
) -> PlacementDecision:
    """Three-way placement decision shared by balancing and admission.

    Immediate placement needs room next to the bandwidth currently migrated
    onto the core; a deferred placement only needs room next to the
    permanent allocation and waits for the migrated share to drain. Cores
    with an active pending placement are skipped for new deferrals.
    """
    blocked = blocked or set()
    immediate = []
    deferred = []
    for ledger in ledgers:
        if ledger.core_id == exclude:
            continue
        hard_residual = ONE - ledger.allocated_util
        if hard_residual < util:
            continue
        soft_residual = hard_residual - ledger.migrated_util
        if soft_residual >= util:
            immediate.append((ledger.core_id, soft_residual))
        elif ledger.core_id not in blocked:
            deferred.append((ledger.core_id, hard_residual))
    core = select_core_heuristic(immediate, heuristic)
    if core is not None:
        return PlacementDecision(Outcome.IMMEDIATE, core)
    core = select_core_heuristic(deferred, heuristic)
    if core is not None:
        return PlacementDecision(Outcome.DEFERRED, core)
    return PlacementDecision(Outcome.INFEASIBLE)


def deferral_satisfied(util: Fraction, ledger: CoreLedger) -> bool:
    """True once the migrated bandwidth has drained enough to finalize."""
    return ledger.migrated_util <= ONE - (util + ledger.allocated_util)
