"""Exact rational bandwidth arithmetic.

All bandwidth and virtual-time bookkeeping is done with ``fractions.Fraction``
so that admission tests and deadline comparisons are exact: there is no
floating-point drift anywhere in the scheduler state. Fractions are always
stored in reduced form, which makes equality comparisons canonical.
"""

from __future__ import annotations

from fractions import Fraction

Bandwidth = Fraction

ZERO = Fraction(0)
ONE = Fraction(1)


def bandwidth(value: int | str | Fraction, den: int | None = None) -> Fraction:
    """Build a bandwidth value from an int, a ``"p/q"`` string or a pair.

    Raises ``ValueError`` for negative values; bandwidths are never negative.
    """
    b = Fraction(value, den) if den is not None else Fraction(value)
    if b < 0:
        raise ValueError(f"bandwidth cannot be negative: {b}")
    return b


def bandwidth_add(a: Fraction, b: Fraction) -> Fraction:
    return a + b


def bandwidth_sub(a: Fraction, b: Fraction) -> Fraction:
    """Subtract ``b`` from ``a``; going negative signals ledger corruption.

    Ledger decrements must always be matched by earlier increments, so a
    negative intermediate value is a bug in the caller, never valid data.
    """
    from .errors import LedgerCorruptionError

    r = a - b
    if r < 0:
        raise LedgerCorruptionError(f"bandwidth underflow: {a} - {b} = {r}")
    return r


def bandwidth_cmp(a: Fraction, b: Fraction) -> int:
    """Three-way exact comparison: -1, 0 or +1."""
    if a < b:
        return -1
    if a > b:
        return 1
    return 0


def frac_str(x: Fraction | int) -> str:
    """Canonical compact text form: ``"5"`` or ``"5/2"``."""
    f = Fraction(x)
    if f.denominator == 1:
        return str(f.numerator)
    return f"{f.numerator}/{f.denominator}"


def parse_frac(s: str | int | float) -> Fraction:
    """Parse scenario-file numbers: ints, ``"p/q"`` strings or decimal text.

    Floats are accepted for convenience but are converted through their
    decimal representation so ``0.1`` means exactly 1/10.
    """
    if isinstance(s, int):
        return Fraction(s)
    if isinstance(s, float):
        return Fraction(str(s))
    return Fraction(s)
