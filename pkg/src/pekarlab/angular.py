"""Angular-momentum algebra for integer ``l``: 3j and 6j symbols and the
matrix elements of spherical tensors in the bipolar (coupled) basis.

Conventions: ``C^k_q = sqrt(4 pi/(2k+1)) Y_kq`` (Racah-normalized harmonics),
coupled states ``|(l1 l2) L M> = sum <l1 m1 l2 m2|L M> Y_l1m1(x) Y_l2m2(y)``,
reduced elements in the Edmonds convention
``<j' m'|T^k_q|j m> = (-1)^(j'-m') (j' k j; -m' q m) <j'||T^k||j>``.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from math import factorial, sqrt

__all__ = [
    "wigner_3j",
    "wigner_6j",
    "clebsch_gordan",
    "reduced_c",
    "scalar_product_element",
    "one_particle_reduced",
    "one_particle_element",
]


def _triangle(a: int, b: int, c: int) -> bool:
    return abs(a - b) <= c <= a + b and (a + b + c) == int(a + b + c)


def _delta_sq(a: int, b: int, c: int) -> Fraction:
    return Fraction(factorial(a + b - c) * factorial(a - b + c) * factorial(-a + b + c),
                    factorial(a + b + c + 1))


@lru_cache(maxsize=None)
def wigner_3j(j1: int, j2: int, j3: int, m1: int, m2: int, m3: int) -> float:
    """Wigner 3j symbol for integer arguments (Racah formula)."""
    if m1 + m2 + m3 != 0 or not _triangle(j1, j2, j3):
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(m3) > j3:
        return 0.0
    pre = _delta_sq(j1, j2, j3) * (factorial(j1 + m1) * factorial(j1 - m1) * factorial(j2 + m2)
                                   * factorial(j2 - m2) * factorial(j3 + m3) * factorial(j3 - m3))
    kmin = max(0, j2 - j3 - m1, j1 - j3 + m2)
    kmax = min(j1 + j2 - j3, j1 - m1, j2 + m2)
    total = Fraction(0)
    for k in range(kmin, kmax + 1):
        den = (factorial(k) * factorial(j1 + j2 - j3 - k) * factorial(j1 - m1 - k)
               * factorial(j2 + m2 - k) * factorial(j3 - j2 + m1 + k) * factorial(j3 - j1 - m2 + k))
        total += Fraction((-1) ** k, den)
    sign = -1 if (j1 - j2 - m3) % 2 else 1
    return sign * float(total) * sqrt(pre)


@lru_cache(maxsize=None)
def wigner_6j(j1: int, j2: int, j3: int, j4: int, j5: int, j6: int) -> float:
    """Wigner 6j symbol ``{j1 j2 j3; j4 j5 j6}`` for integer arguments."""
    triads = ((j1, j2, j3), (j1, j5, j6), (j4, j2, j6), (j4, j5, j3))
    if not all(_triangle(*t) for t in triads):
        return 0.0
    pre = Fraction(1)
    for t in triads:
        pre *= _delta_sq(*t)
    a1, a2, a3, a4 = (sum(t) for t in triads)
    b1, b2, b3 = j1 + j2 + j4 + j5, j2 + j3 + j5 + j6, j3 + j1 + j6 + j4
    total = Fraction(0)
    for k in range(max(a1, a2, a3, a4), min(b1, b2, b3) + 1):
        den = (factorial(k - a1) * factorial(k - a2) * factorial(k - a3) * factorial(k - a4)
               * factorial(b1 - k) * factorial(b2 - k) * factorial(b3 - k))
        total += Fraction((-1) ** k * factorial(k + 1), den)
    return float(total) * sqrt(pre)


def clebsch_gordan(j1: int, m1: int, j2: int, m2: int, j: int, m: int) -> float:
    """``<j1 m1 j2 m2 | j m>``."""
    sign = -1 if (j1 - j2 + m) % 2 else 1
    return sign * sqrt(2 * j + 1) * wigner_3j(j1, j2, j, m1, m2, -m)


@lru_cache(maxsize=None)
def reduced_c(lp: int, k: int, l: int) -> float:
    """``<l'||C^k||l> = (-1)^l' sqrt((2l'+1)(2l+1)) (l' k l; 0 0 0)``."""
    sign = -1 if lp % 2 else 1
    return sign * sqrt((2 * lp + 1) * (2 * l + 1)) * wigner_3j(lp, k, l, 0, 0, 0)


@lru_cache(maxsize=None)
def scalar_product_element(ap: int, bp: int, a: int, b: int, L: int, k: int) -> float:
    """``<(a'b')L M| C^k(x).C^k(y) |(ab)L M>``, i.e. the matrix element of ``P_k(x.y)``.

    Independent of ``M``.
    """
    sign = -1 if (a + bp + L) % 2 else 1
    return sign * wigner_6j(L, bp, ap, k, a, b) * reduced_c(ap, k, a) * reduced_c(bp, k, b)


@lru_cache(maxsize=None)
def one_particle_reduced(ap: int, bp: int, Lp: int, a: int, b: int, L: int, k: int,
                         particle: int) -> float:
    """``<(a'b')L'||C^k(particle)||(ab)L>`` for ``particle`` in {1, 2}."""
    pre = sqrt((2 * L + 1) * (2 * Lp + 1))
    if particle == 1:
        if bp != b:
            return 0.0
        sign = -1 if (ap + b + L + k) % 2 else 1
        return sign * pre * wigner_6j(ap, Lp, b, L, a, k) * reduced_c(ap, k, a)
    if ap != a:
        return 0.0
    sign = -1 if (a + b + Lp + k) % 2 else 1
    return sign * pre * wigner_6j(bp, Lp, a, L, b, k) * reduced_c(bp, k, b)


def one_particle_element(ap: int, bp: int, Lp: int, Mp: int, a: int, b: int, L: int, M: int,
                         k: int, q: int, particle: int) -> float:
    """``<(a'b')L'M'| C^k_q(particle) |(ab)L M>`` via the Wigner-Eckart theorem."""
    sign = -1 if (Lp - Mp) % 2 else 1
    return sign * wigner_3j(Lp, k, L, -Mp, q, M) * one_particle_reduced(ap, bp, Lp, a, b, L, k, particle)
