"""Independent reference implementations used only by the tests."""

from fractions import Fraction
from itertools import combinations


def brute_force_count(sets, tau, variant):
    """Resolvable count straight from the set definitions, with Fractions throughout."""
    sets = [frozenset(s) for s in sets]
    n = len(sets)
    tau = Fraction(str(tau))
    delta = {}
    for i, j in combinations(range(n), 2):
        union = sets[i] | sets[j]
        d = Fraction(0) if not union else 1 - Fraction(len(sets[i] & sets[j]), len(union))
        delta[i, j] = delta[j, i] = d
    total = Fraction(0)
    for i in range(n):
        covered = 1 if sets[i] else 0
        others = [m for m in range(n) if m != i]
        separated = all(delta[i, m] > tau for m in others)
        psi = sum(1 for m in others if delta[i, m] <= tau)
        if separated:
            total += covered
        elif covered:
            if variant == "literal-guarded":
                total += Fraction(1, psi)
            else:
                total += Fraction(1, 1 + psi)
    return total
