"""Temporary migration of an in-flight job to a less loaded core.

A job becomes eligible when its server's budget is spent (virtual time
reached the scheduling deadline) while the deadline is still in the future.
Instead of postponing, the scheduler may move the job to the core with the
smallest active utilization, carried by a short-lived temporary server that
keeps the same deadline. The migrating utilization granted on the
destination is clamped to the destination's residual capacity, which is what
keeps every core's bandwidth ledgers below one.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

from .model import CoreLedger, ServerRuntime
from .rational import ONE


class BenefitDenominator(enum.Enum):
    """What the benefit test divides by: the destination's active
    utilization (default) or only its migrated utilization."""

    DEST_ACTIVE = "dest_active"
    DEST_MIGRATED = "dest_migrated"


@dataclass(frozen=True)
class MigrationConfig:
    """Tuning knobs for temporary migration.

    ``epsilon`` is the minimum estimated useful execution time (in ticks) a
    migration must buy to be worth its overhead. ``migration_cost`` ticks
    are added to the job's remaining demand on every migration (zero keeps
    migrations free, which is the default).
    """

    enabled: bool = True
    epsilon: int = 2
    denominator: BenefitDenominator = BenefitDenominator.DEST_ACTIVE
    migration_cost: int = 0

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.migration_cost < 0:
            raise ValueError("migration_cost must be >= 0")


def is_eligible(server: ServerRuntime, t: Fraction) -> bool:
    """Budget spent, deadline still ahead: worth trying another core."""
    return server.virtual_time >= server.sched_deadline and server.sched_deadline > t


def select_destination_core(
    ledgers: list[CoreLedger], source: int
) -> int | None:
    """Core with the smallest active utilization that accepts migrations.

    Ties break toward the lowest core id; returns None when every other
    core has incoming migrations disabled.
    """
    best: CoreLedger | None = None
    for ledger in ledgers:
        if ledger.core_id == source or not ledger.incoming_migrations_enabled:
            continue
        if best is None or ledger.active_util < best.active_util:
            best = ledger
    return None if best is None else best.core_id


def admitted_migrating_utilization(
    migrating_util: Fraction, dest: CoreLedger
) -> Fraction:
    """Clamp the migrating utilization to what the destination can host.

    The residual is one minus the destination's allocated plus already
    migrated bandwidth; a zero grant means the core is saturated.
    """
    residual = ONE - (dest.allocated_util + dest.migrated_util)
    if residual < 0:
        from .errors import InvariantViolation

        raise InvariantViolation(
            f"core {dest.core_id} over-committed: allocated={dest.allocated_util} "
            f"migrated={dest.migrated_util}"
        )
    return min(migrating_util, residual)


def benefit_check(
    u_granted: Fraction,
    deadline: Fraction,
    t: Fraction,
    dest_load: Fraction,
    cfg: MigrationConfig,
) -> bool:
    """Estimate the service the job would receive before its deadline on the
    destination and require strictly more than epsilon ticks of it.

    ``u_granted * (d - t) / (u_granted + dest_load)`` is evaluated in exact
    rationals; a zero grant or a deadline at/behind ``t`` never passes.
    """
    if u_granted <= 0:
        return False
    gain = u_granted * (deadline - t) / (u_granted + dest_load)
    return gain > cfg.epsilon


def benefit_denominator(dest: CoreLedger, cfg: MigrationConfig) -> Fraction:
    if cfg.denominator is BenefitDenominator.DEST_MIGRATED:
        return dest.migrated_util
    return dest.active_util
