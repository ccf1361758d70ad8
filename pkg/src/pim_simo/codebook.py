"""Permutational index-modulation codebooks.

A codebook is the set of multiset permutations of a reference vector whose
entries are L unipolar amplitude levels, level l repeated K_l times.  This
module builds the amplitude grid and the partition policy {K_l}, computes
the combinatorial and information-theoretic figures of the resulting code
(cardinality, spectral efficiency, code rate, entropy limit, Stirling-type
bounds), and provides exact enumeration plus uniform random draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from .errors import SizeLimitError

LOG2E = math.log2(math.e)

DEFAULT_ENUMERATION_CAP = 10**6
DEFAULT_COMPOSITION_CAP = 10**7


@dataclass(frozen=True, eq=False)
class AmplitudeSet:
    """Unipolar amplitude grid {sqrt(eps_1)=0 < ... < sqrt(eps_L)}.

    ``levels`` holds the amplitudes sqrt(eps_l); ``energies`` the powers
    eps_l.  The first level is always 0 (the inactive-subcarrier level).
    """

    levels: np.ndarray

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        object.__setattr__(self, "levels", levels)
        if levels.ndim != 1 or len(levels) < 2:
            raise ValueError("amplitude set needs at least two levels")
        if levels[0] != 0.0:
            raise ValueError("lowest amplitude level must be 0")
        if np.any(np.diff(levels) <= 0):
            raise ValueError("amplitude levels must be strictly ascending")

    @property
    def L(self) -> int:
        return len(self.levels)

    @property
    def energies(self) -> np.ndarray:
        return self.levels**2

    @property
    def mean_energy(self) -> float:
        """Average power under the uniform policy, (1/L) sum_l eps_l."""
        return float(np.mean(self.energies))


def build_amplitude_set(L: int) -> AmplitudeSet:
    """Equally spaced unipolar grid sqrt(eps_l) = (l-1)*d, normalized so
    the uniform-policy average power (1/L) sum_l eps_l equals one.
    """
    if L < 2:
        raise ValueError(f"invalid constellation: L must be >= 2, got {L}")
    d = math.sqrt(L / sum((l - 1) ** 2 for l in range(1, L + 1)))
    return AmplitudeSet(d * np.arange(L))


@dataclass(frozen=True)
class PartitionPolicy:
    """Level multiplicities {K_l}: level l appears K_l times per codeword."""

    multiplicities: tuple[int, ...]

    def __post_init__(self):
        mult = tuple(int(m) for m in self.multiplicities)
        object.__setattr__(self, "multiplicities", mult)
        if not mult:
            raise ValueError("policy needs at least one multiplicity")
        if any(m < 0 for m in mult):
            raise ValueError("multiplicities must be non-negative")
        if sum(mult) < 1:
            raise ValueError("policy must place at least one subcarrier")

    @property
    def K(self) -> int:
        return sum(self.multiplicities)

    @property
    def L(self) -> int:
        return len(self.multiplicities)

    @property
    def fractions(self) -> np.ndarray:
        """Level fractions p_l = K_l / K."""
        return np.asarray(self.multiplicities, dtype=float) / self.K

    @property
    def boundaries(self) -> tuple[int, ...]:
        """Positions in the sorted reference vector where the level changes:
        the partial sums of the first j multiplicities, j = 1..L-1,
        restricted to 1..K-1 (degenerate sums from zero multiplicities at
        either end carry no boundary).
        """
        sums = np.cumsum(self.multiplicities)[:-1]
        return tuple(sorted({int(s) for s in sums if 1 <= s <= self.K - 1}))

    def matches(self, level_indices: np.ndarray) -> bool:
        """Whether a 1-based level-index vector has this policy's histogram."""
        counts = np.bincount(np.asarray(level_indices), minlength=self.L + 1)
        return len(counts) == self.L + 1 and tuple(counts[1:]) == self.multiplicities


def uniform_policy(K: int, L: int) -> PartitionPolicy:
    """Uniform policy K_l = K/L; requires L | K."""
    if K % L != 0:
        raise ValueError(f"uniform policy needs L | K, got K={K}, L={L}")
    return PartitionPolicy((K // L,) * L)


@dataclass(frozen=True, eq=False)
class ReferenceVector:
    """Sorted amplitude template: level l's amplitude repeated K_l times."""

    entries: np.ndarray
    level_of: np.ndarray

    @property
    def K(self) -> int:
        return len(self.entries)


def reference_vector(policy: PartitionPolicy, amplitudes: AmplitudeSet) -> ReferenceVector:
    if policy.L != amplitudes.L:
        raise ValueError(
            f"policy has {policy.L} levels but amplitude set has {amplitudes.L}"
        )
    level_of = np.repeat(np.arange(1, policy.L + 1), policy.multiplicities)
    return ReferenceVector(entries=amplitudes.levels[level_of - 1], level_of=level_of)


@dataclass(frozen=True, eq=False)
class Codeword:
    """One multiset permutation of the reference vector.

    ``level_indices`` are 1-based level labels per subcarrier; ``amplitudes``
    the corresponding transmitted values x_k.
    """

    level_indices: np.ndarray
    amplitudes: np.ndarray

    @property
    def K(self) -> int:
        return len(self.level_indices)


def codeword_from_levels(level_indices, amplitudes: AmplitudeSet) -> Codeword:
    levels = np.asarray(level_indices, dtype=np.int64)
    return Codeword(level_indices=levels, amplitudes=amplitudes.levels[levels - 1])


def cardinality(policy: PartitionPolicy) -> int:
    """Exact codebook size K! / prod_l K_l!, as an arbitrary-precision int."""
    result = math.factorial(policy.K)
    for m in policy.multiplicities:
        result //= math.factorial(m)
    return result


def _log2_factorial(x: float) -> float:
    return math.lgamma(x + 1.0) / math.log(2.0)


def spectral_efficiency(policy: PartitionPolicy) -> float:
    """Bits per channel use: (1/K) (log2 K! - sum_l log2 K_l!).

    Evaluated through the log-gamma function, so it stays finite and
    accurate for K in the thousands.
    """
    terms = [_log2_factorial(policy.K)]
    terms += [-_log2_factorial(m) for m in policy.multiplicities]
    return math.fsum(terms) / policy.K


def code_rate(policy: PartitionPolicy, L: int | None = None) -> float:
    """Spectral efficiency normalized by the uncoded log2(L) bpcu."""
    if L is None:
        L = policy.L
    if L < 2:
        raise ValueError("code rate needs L >= 2")
    return spectral_efficiency(policy) / math.log2(L)


def entropy_limit(policy: PartitionPolicy) -> float:
    """Shannon entropy H({p_l}) in bits, the large-K limit of the SE."""
    p = policy.fractions
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def stirling_bounds(alpha: int) -> tuple[float, float]:
    """Lower/upper bounds on log2(alpha!) from the Stirling series.

    g_low = log2(sqrt(2 pi a) a^a / e^a) + log2(e)/(12a+1), g_up the same
    with log2(e)/(12a).  The gap shrinks like 1/a^2, so the pair brackets
    the log-factorial tightly for every alpha >= 1.
    """
    if alpha < 1:
        raise ValueError(f"stirling_bounds needs alpha >= 1, got {alpha}")
    base = 0.5 * math.log2(2.0 * math.pi * alpha) + alpha * math.log2(alpha) - alpha * LOG2E
    return base + LOG2E / (12 * alpha + 1), base + LOG2E / (12 * alpha)


def se_upper_bound(policy: PartitionPolicy) -> float:
    """Upper bound on the SE: (1/K)(g_up(K) - sum_l g_low(K_l)).

    Needs every K_l >= 1; exceeds the exact SE, and for uniform policies
    with enough subcarriers per level drops below the entropy limit.
    """
    if any(m < 1 for m in policy.multiplicities):
        raise ValueError("se_upper_bound needs all multiplicities >= 1")
    up = stirling_bounds(policy.K)[1]
    low = math.fsum(stirling_bounds(m)[0] for m in policy.multiplicities)
    return (up - low) / policy.K


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    # lexicographically ascending compositions of `total` into `parts` >= 0
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def best_policy(K: int, L: int, max_compositions: int = DEFAULT_COMPOSITION_CAP) -> PartitionPolicy:
    """SE-maximizing partition of K subcarriers into L levels, by exhaustive
    search over all non-negative compositions.  Ties go to the
    lexicographically smallest multiplicity vector.
    """
    if not K >= L >= 2:
        raise ValueError(f"best_policy needs K >= L >= 2, got K={K}, L={L}")
    n_comp = math.comb(K + L - 1, L - 1)
    if n_comp > max_compositions:
        raise SizeLimitError(
            f"{n_comp} compositions exceed the cap of {max_compositions}"
        )
    # maximizing the SE is minimizing sum_l log(K_l!); fsum keeps the
    # objective identical across permutations of the same multiset
    best = None
    best_obj = math.inf
    for comp in _compositions(K, L):
        obj = math.fsum(math.lgamma(m + 1) for m in comp)
        if obj < best_obj:
            best_obj = obj
            best = comp
    return PartitionPolicy(best)


def _next_multiset_permutation(a: list[int]) -> bool:
    # classic in-place next-permutation step; False once `a` is the last one
    i = len(a) - 2
    while i >= 0 and a[i] >= a[i + 1]:
        i -= 1
    if i < 0:
        return False
    j = len(a) - 1
    while a[j] <= a[i]:
        j -= 1
    a[i], a[j] = a[j], a[i]
    a[i + 1 :] = a[:i:-1]
    return True


@lru_cache(maxsize=32)
def _codebook_level_array(multiplicities: tuple[int, ...], cap: int) -> np.ndarray:
    """All level-index vectors of the codebook, lexicographically ascending,
    as an (M, K) int64 array.  Cached per policy."""
    policy = PartitionPolicy(multiplicities)
    M = cardinality(policy)
    if M > cap:
        raise SizeLimitError(f"codebook of size {M} exceeds the cap of {cap}")
    out = np.empty((M, policy.K), dtype=np.int64)
    current = list(np.repeat(np.arange(1, policy.L + 1), multiplicities))
    row = 0
    while True:
        out[row] = current
        row += 1
        if not _next_multiset_permutation(current):
            break
    assert row == M
    return out


def enumerate_codebook(
    policy: PartitionPolicy,
    amplitudes: AmplitudeSet,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> Iterator[Codeword]:
    """Yield every codeword exactly once, in lexicographic order of its
    level indices.  Raises SizeLimitError when the codebook exceeds `cap`.
    """
    for levels in _codebook_level_array(policy.multiplicities, cap):
        yield Codeword(level_indices=levels, amplitudes=amplitudes.levels[levels - 1])


def random_codeword(
    policy: PartitionPolicy, amplitudes: AmplitudeSet, rng: np.random.Generator
) -> Codeword:
    """Uniform draw over the codebook: an unbiased shuffle of the reference
    vector's level labels."""
    ref = reference_vector(policy, amplitudes)
    levels = rng.permutation(ref.level_of)
    return Codeword(level_indices=levels, amplitudes=amplitudes.levels[levels - 1])
