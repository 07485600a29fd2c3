"""Wigner 3-j and 6-j symbols for half-integer angular momenta.

Both symbols are evaluated with the Racah closed-form sums in exact integer
arithmetic; only the final square root is taken in floating point. Arguments
may be ints, floats or ``Fraction`` values as long as twice the value is an
integer.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from math import factorial, sqrt


class AngularMomentumError(ValueError):
    """Raised for arguments that are not half-integers."""


def _twice(x) -> int:
    """Return 2*x as an int, insisting that x is a half-integer."""
    d = 2 * x
    n = round(d)
    if abs(d - n) > 1e-9:
        raise AngularMomentumError(f"{x!r} is not a half-integer")
    return int(n)


def _triangle_ok(a2: int, b2: int, c2: int) -> bool:
    # arguments are doubled
    return (a2 + b2 + c2) % 2 == 0 and abs(a2 - b2) <= c2 <= a2 + b2


def _delta_sq(a2: int, b2: int, c2: int) -> Fraction:
    """Squared triangle coefficient Delta(abc)^2, doubled arguments."""
    return Fraction(
        factorial((a2 + b2 - c2) // 2)
        * factorial((a2 - b2 + c2) // 2)
        * factorial((-a2 + b2 + c2) // 2),
        factorial((a2 + b2 + c2) // 2 + 1),
    )


def _signed_sqrt(sign: int, value: Fraction) -> float:
    return sign * sqrt(float(value))


@lru_cache(maxsize=65536)
def _wigner3j_2(j1: int, j2: int, j3: int, m1: int, m2: int, m3: int) -> float:
    if m1 + m2 + m3 != 0:
        return 0.0
    for j, m in ((j1, m1), (j2, m2), (j3, m3)):
        if abs(m) > j or (j + m) % 2:
            return 0.0
    if not _triangle_ok(j1, j2, j3):
        return 0.0
    # integers after halving
    a = (j1 + j2 - j3) // 2
    b = (j1 - m1) // 2
    c = (j2 + m2) // 2
    d = (j3 - j2 + m1) // 2
    e = (j3 - j1 - m2) // 2
    kmin = max(0, -d, -e)
    kmax = min(a, b, c)
    total = Fraction(0)
    for k in range(kmin, kmax + 1):
        term = Fraction(
            (-1) ** k,
            factorial(k)
            * factorial(a - k)
            * factorial(b - k)
            * factorial(c - k)
            * factorial(d + k)
            * factorial(e + k),
        )
        total += term
    if total == 0:
        return 0.0
    pre = _delta_sq(j1, j2, j3) * (
        factorial((j1 + m1) // 2)
        * factorial((j1 - m1) // 2)
        * factorial((j2 + m2) // 2)
        * factorial((j2 - m2) // 2)
        * factorial((j3 + m3) // 2)
        * factorial((j3 - m3) // 2)
    )
    phase = -1 if ((j1 - j2 - m3) // 2) % 2 else 1
    sign = phase * (1 if total > 0 else -1)
    return _signed_sqrt(sign, pre * total * total)


def wigner3j(j1, j2, j3, m1, m2, m3) -> float:
    """Wigner 3-j symbol (j1 j2 j3; m1 m2 m3).

    Returns exactly 0.0 when the triangle rule, the projection bounds or the
    m-sum rule fail.
    """
    return _wigner3j_2(*(_twice(x) for x in (j1, j2, j3, m1, m2, m3)))


@lru_cache(maxsize=65536)
def _wigner6j_2(j1: int, j2: int, j3: int, j4: int, j5: int, j6: int) -> float:
    triads = ((j1, j2, j3), (j1, j5, j6), (j4, j2, j6), (j4, j5, j3))
    if min(j1, j2, j3, j4, j5, j6) < 0 or not all(_triangle_ok(*t) for t in triads):
        return 0.0
    t_sums = [sum(t) // 2 for t in triads]
    q_sums = [(j1 + j2 + j4 + j5) // 2, (j2 + j3 + j5 + j6) // 2, (j3 + j1 + j6 + j4) // 2]
    total = Fraction(0)
    for z in range(max(t_sums), min(q_sums) + 1):
        den = factorial(q_sums[0] - z) * factorial(q_sums[1] - z) * factorial(q_sums[2] - z)
        for t in t_sums:
            den *= factorial(z - t)
        total += Fraction((-1) ** z * factorial(z + 1), den)
    if total == 0:
        return 0.0
    pre = Fraction(1)
    for t in triads:
        pre *= _delta_sq(*t)
    return _signed_sqrt(1 if total > 0 else -1, pre * total * total)


def wigner6j(j1, j2, j3, j4, j5, j6) -> float:
    """Wigner 6-j symbol {j1 j2 j3; j4 j5 j6}; zero if any triad fails."""
    return _wigner6j_2(*(_twice(x) for x in (j1, j2, j3, j4, j5, j6)))
