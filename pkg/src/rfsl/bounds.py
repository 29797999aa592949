"""How many co-present targets a link layout can tell apart.

Each target is described by the set of links whose Fresnel region it
occupies. Two targets are distinguishable when the Jaccard distance between
their link sets exceeds a threshold. The resolvable count is computed with
exact rational arithmetic so that accuracy indicators never depend on
floating-point ties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .geometry import (
    MembershipConfig,
    NetworkGraph,
    SubjectProfile,
    TargetParams,
    pair_fresnel_regions,
    pair_membership,
    sample_targets,
)

VARIANTS = ("cluster-consistent", "literal-guarded")


@dataclass(frozen=True)
class LinkSetFamily:
    sets: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        clean = tuple(tuple(sorted(set(int(i) for i in s))) for s in self.sets)
        object.__setattr__(self, "sets", clean)

    @property
    def n_targets(self) -> int:
        return len(self.sets)

    @classmethod
    def from_matrix(cls, member: np.ndarray) -> "LinkSetFamily":
        return cls(tuple(tuple(np.nonzero(row)[0].tolist()) for row in np.asarray(member, dtype=bool)))


@dataclass(frozen=True)
class BoundConfig:
    tau: float = 0.2
    variant: str = "cluster-consistent"

    def __post_init__(self):
        if not 0 <= self.tau < 1:
            raise ValueError("tau must lie in [0, 1)")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")

    @property
    def tau_fraction(self) -> Fraction:
        # the decimal the user wrote, not the nearest binary double
        return Fraction(repr(self.tau))


@dataclass(frozen=True)
class BoundResult:
    n_hat: Fraction
    theta1: tuple[int, ...]
    theta2: tuple[int, ...]
    psi: tuple[int, ...]

    def rounded(self) -> int:
        return round_half_up(self.n_hat)


def round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def link_sets(graph: NetworkGraph, targets: Sequence[TargetParams], wavelength: float,
              cfg: MembershipConfig = MembershipConfig()) -> LinkSetFamily:
    """Link sets over the graph's directed links.

    Both directions of a node pair share one Fresnel region, so membership is
    decided once per pair and expanded.
    """
    member = pair_membership(graph, targets, wavelength, cfg)
    return LinkSetFamily.from_matrix(member[:, graph.link_pair])


def jaccard_distance(q_n, q_m) -> Fraction:
    a, b = set(q_n), set(q_m)
    union = len(a | b)
    if union == 0:
        return Fraction(0)
    return 1 - Fraction(len(a & b), union)


def theta2(q_n) -> int:
    return int(len(q_n) > 0)


def _close_matrix(member: np.ndarray, tau: Fraction) -> np.ndarray:
    """close[n, m] is True when delta(n, m) <= tau, using integer arithmetic only."""
    m = member.astype(np.int64)
    inter = m @ m.T
    sizes = m.sum(axis=1)
    union = sizes[:, None] + sizes[None, :] - inter
    # 1 - I/U <= p/q  <=>  q (U - I) <= p U ; holds for U = 0 as well
    return tau.denominator * (union - inter) <= tau.numerator * union


def _psi_excl(close: np.ndarray) -> np.ndarray:
    return close.sum(axis=1) - np.diagonal(close)


def theta1(n: int, family: LinkSetFamily, tau: float) -> int:
    t = Fraction(repr(tau))
    q_n = family.sets[n]
    return int(all(jaccard_distance(q_n, q_m) > t for m, q_m in enumerate(family.sets) if m != n))


def _as_matrix(family: LinkSetFamily) -> np.ndarray:
    width = 1 + max((s[-1] for s in family.sets if s), default=-1)
    out = np.zeros((family.n_targets, width), dtype=bool)
    for i, s in enumerate(family.sets):
        out[i, list(s)] = True
    return out


def resolvable_count_matrix(member: np.ndarray, cfg: BoundConfig = BoundConfig()) -> BoundResult:
    """Resolvable count from a boolean (targets, links) membership matrix."""
    member = np.asarray(member, dtype=bool)
    n = member.shape[0]
    if n == 0:
        return BoundResult(Fraction(0), (), (), ())
    close = _close_matrix(member, cfg.tau_fraction)
    psi = _psi_excl(close)
    th1 = (psi == 0).astype(int)
    th2 = member.any(axis=1).astype(int)
    offset = 1 if cfg.variant == "cluster-consistent" else 0
    total = Fraction(int((th1 * th2).sum()))
    for i in np.nonzero((th1 == 0) & (th2 == 1))[0]:
        total += Fraction(1, int(psi[i]) + offset)
    return BoundResult(total, tuple(th1.tolist()), tuple(th2.tolist()), tuple(int(p) for p in psi))


def resolvable_count(family: LinkSetFamily, cfg: BoundConfig = BoundConfig()) -> BoundResult:
    return resolvable_count_matrix(_as_matrix(family), cfg)


def trial_seed(base_seed: int, n_targets: int, trial: int) -> list[int]:
    """Seed material for one Monte Carlo trial, independent of execution order."""
    return [int(base_seed), int(n_targets), int(trial)]


@dataclass(frozen=True)
class AccuracyResult:
    n_targets: int
    accuracy: float
    n_hat_mean: float
    n_trials: int


def accuracy_trials(graph: NetworkGraph, n_targets: int, profile: SubjectProfile, cfg: BoundConfig,
                    wavelength: float, n_trials: int, rng_seed: int,
                    membership: MembershipConfig = MembershipConfig()) -> AccuracyResult:
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    regions = pair_fresnel_regions(graph, wavelength)
    hits = 0
    n_hat_sum = Fraction(0)
    for i in range(n_trials):
        targets = sample_targets(n_targets, graph.area, profile, trial_seed(rng_seed, n_targets, i))
        # Jaccard distances are unchanged when each pair is counted once instead of twice
        member = pair_membership(graph, targets, wavelength, membership, regions)
        res = resolvable_count_matrix(member, cfg)
        hits += res.rounded() == n_targets
        n_hat_sum += res.n_hat
    return AccuracyResult(n_targets, hits / n_trials, float(n_hat_sum / n_trials), n_trials)


def accuracy_bound(graph: NetworkGraph, n_targets: int, profile: SubjectProfile, cfg: BoundConfig,
                   wavelength: float, n_trials: int, rng_seed: int,
                   membership: MembershipConfig = MembershipConfig()) -> float:
    """Fraction of random placements whose rounded resolvable count equals ``n_targets``."""
    return accuracy_trials(graph, n_targets, profile, cfg, wavelength, n_trials, rng_seed, membership).accuracy
