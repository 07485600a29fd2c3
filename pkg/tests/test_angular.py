import itertools
import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st
from sympy import Rational
from sympy.physics.wigner import wigner_3j as sym3j, wigner_6j as sym6j

from ramandetect.angular import AngularMomentumError, wigner3j, wigner6j

HALF = [Fraction(k, 2) for k in range(0, 11)]  # 0 .. 5


def _r(x):
    return Rational(x.numerator, x.denominator)


def test_3j_examples():
    assert wigner3j(1, 1, 0, 0, 0, 0) == pytest.approx(-1 / math.sqrt(3), abs=1e-15)
    assert wigner3j(1, 1, 1, 0, 0, 0) == 0.0
    assert wigner3j(1, 1, 1, 1, 0, 0) == 0.0


def test_6j_examples():
    assert wigner6j(0.5, 0.5, 1, 0.5, 0.5, 1) == pytest.approx(1 / 6, abs=1e-15)
    assert wigner6j(1, 1, 3, 1, 1, 1) == 0.0
    for j, jp in itertools.product(HALF[:7], repeat=2):
        # the (j, j', 0) triads force j = j'
        expect = (-1) ** int(j + jp) / math.sqrt((2 * j + 1) * (2 * jp + 1)) if j == jp else 0.0
        assert wigner6j(j, j, 0, jp, jp, 0) == pytest.approx(expect, abs=1e-14)
    # general closed form {a b c; b a 0}
    for a, b in itertools.product(HALF[:7], repeat=2):
        for k in range(int(a + b - abs(a - b)) + 1):
            c = abs(a - b) + k
            expect = (-1) ** int(a + b + c) / math.sqrt((2 * a + 1) * (2 * b + 1))
            assert wigner6j(a, b, c, b, a, 0) == pytest.approx(expect, abs=1e-14)


def test_non_half_integer_rejected():
    with pytest.raises(AngularMomentumError):
        wigner3j(0.3, 1, 1, 0, 0, 0)


def _random_3j(rng):
    j1, j2 = rng.choice(HALF), rng.choice(HALF)
    lo, hi = abs(j1 - j2), min(j1 + j2, Fraction(5))
    if lo > hi:
        return None
    j3 = lo + rng.randint(0, int(hi - lo))
    m1 = -j1 + rng.randint(0, int(2 * j1))
    m2 = -j2 + rng.randint(0, int(2 * j2))
    return j1, j2, j3, m1, m2, -m1 - m2


def test_3j_matches_sympy_oracle_up_to_j5():
    rng = random.Random(3)
    n = 0
    while n < 1500:
        args = _random_3j(rng)
        if args is None:
            continue
        n += 1
        ref = float(sym3j(*map(_r, args)))
        assert abs(wigner3j(*args) - ref) < 1e-12, args


def test_6j_matches_sympy_oracle_up_to_j5():
    rng = random.Random(4)
    for _ in range(1500):
        args = [rng.choice(HALF) for _ in range(6)]
        try:
            ref = float(sym6j(*map(_r, args)))
        except ValueError:
            ref = 0.0  # sympy refuses non-triangular or non-integer sums
        assert abs(wigner6j(*args) - ref) < 1e-12, args


def _racah_w_from_3j(j1, j2, j3, j4, j5, j6):
    # independent route: 6j as a contraction of four 3j symbols
    total = 0.0
    ms = lambda j: [-j + k for k in range(int(2 * j) + 1)]
    for m1 in ms(j1):
        for m2 in ms(j2):
            m3 = -m1 - m2
            if abs(m3) > j3:
                continue
            for m4 in ms(j4):
                m5 = m1 + m4  # solves the remaining selection rules
                m6 = m4 - m2
                if abs(m5) > j5 or abs(m6) > j6:
                    continue
                phase = (-1) ** int(j4 + j5 + j6 + m4 + m5 + m6)
                total += (
                    phase
                    * wigner3j(j1, j2, j3, m1, m2, m3)
                    * wigner3j(j1, j5, j6, m1, -m5, m6)
                    * wigner3j(j4, j2, j6, m4, m2, -m6)
                    * wigner3j(j4, j5, j3, -m4, m5, m3)
                )
    return total / (2 * j3 + 1)


def test_6j_matches_3j_contraction():
    rng = random.Random(5)
    for _ in range(60):
        args = [rng.choice(HALF[:7]) for _ in range(6)]
        assert abs(wigner6j(*args) - _racah_w_from_3j(*args)) < 1e-12, args


@pytest.mark.parametrize("j1,j2", [(a, b) for a in HALF[:7] for b in HALF[:7]])
def test_3j_orthogonality(j1, j2):
    for j3 in [abs(j1 - j2) + k for k in range(int(j1 + j2 - abs(j1 - j2)) + 1)]:
        for j3p in [abs(j1 - j2) + k for k in range(int(j1 + j2 - abs(j1 - j2)) + 1)]:
            m3 = -min(j3, j3p)
            s = 0.0
            for m1 in [-j1 + k for k in range(int(2 * j1) + 1)]:
                for m2 in [-j2 + k for k in range(int(2 * j2) + 1)]:
                    s += wigner3j(j1, j2, j3, m1, m2, m3) * wigner3j(j1, j2, j3p, m1, m2, m3)
            expect = 1.0 / (2 * j3 + 1) if j3 == j3p else 0.0
            assert abs(s - expect) < 1e-10


half = st.integers(0, 8).map(lambda k: Fraction(k, 2))


@given(half, half, half, st.data())
def test_3j_symmetries(j1, j2, j3, data):
    m1 = -j1 + data.draw(st.integers(0, int(2 * j1)))
    m2 = -j2 + data.draw(st.integers(0, int(2 * j2)))
    m3 = -m1 - m2
    v = wigner3j(j1, j2, j3, m1, m2, m3)
    # even permutation
    assert wigner3j(j2, j3, j1, m2, m3, m1) == pytest.approx(v, abs=1e-14)
    # odd permutation and m reversal carry (-1)^(j1+j2+j3)
    sign = (-1) ** int(j1 + j2 + j3) if (j1 + j2 + j3).denominator == 1 else 1
    assert wigner3j(j2, j1, j3, m2, m1, m3) == pytest.approx(sign * v, abs=1e-14)
    assert wigner3j(j1, j2, j3, -m1, -m2, -m3) == pytest.approx(sign * v, abs=1e-14)


@given(half, half, half, half, half, half)
def test_6j_column_symmetry(a, b, c, d, e, f):
    v = wigner6j(a, b, c, d, e, f)
    assert wigner6j(b, a, c, e, d, f) == pytest.approx(v, abs=1e-14)
    assert wigner6j(d, e, c, a, b, f) == pytest.approx(v, abs=1e-14)
