"""Detectors for permutational index modulation in the covariance eigenbasis.

Every detector here consumes a ReceivedBlock (rotated observations r_k) and
returns a Decision whose codeword always honors the partition policy.  Two
families are provided:

* Likelihood detectors: exhaustive search over the codebook and a trellis
  dynamic program over level-usage counts, both minimizing the identical
  per-subcarrier metric table.  On isotropic channels the metric ordering
  collapses to a single energy sort, which is the third ML variant.

* Quadratic energy estimators: per-subcarrier statistics r^H A r with a
  diagonal weighting A chosen per scheme (flat, inverse-eigenvalue, or the
  decision-directed minimum-variance design), debiased and then sorted
  against the reference amplitudes.

All tie-breaking is deterministic: stable sorts keyed by subcarrier index,
and trellis ties resolved toward the smaller level at the earliest stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .channel import EigenBasis, ReceivedBlock
from .codebook import (
    DEFAULT_ENUMERATION_CAP,
    AmplitudeSet,
    Codeword,
    PartitionPolicy,
    _codebook_level_array,
    cardinality,
    codeword_from_levels,
    reference_vector,
)
from .errors import SizeLimitError

EIGENVALUE_FLOOR = 1e-10
DEFAULT_STATE_CAP = 10**7
_BRUTE_CHUNK = 1 << 14

DETECTOR_KINDS = (
    "ml-brute",
    "ml-viterbi",
    "ml-iso-sort",
    "ed",
    "hsnr",
    "abque",
    "bque-genie",
    "hsnr-limit",
)


@dataclass(frozen=True, eq=False)
class MetricTable:
    """Per-subcarrier, per-level negative log-likelihoods, shape (K, L)."""

    c: np.ndarray

    @property
    def K(self) -> int:
        return self.c.shape[0]

    @property
    def L(self) -> int:
        return self.c.shape[1]


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Diagonal of a quadratic estimator's weighting matrix in the eigenbasis.

    Conditional unbiasedness pins sum_n diag[n] * gamma_n = 1.
    """

    diag: np.ndarray
    kind: str


@dataclass(frozen=True, eq=False)
class IsotropicMetrics:
    """Sorting statistics: received energies u_k and the reference-ordered
    inverse variances v_j = 1/(eps at position j + sigma_z^2)."""

    u: np.ndarray
    v: np.ndarray


@dataclass(frozen=True, eq=False)
class Decision:
    """Detector output.

    ``permutation`` is the ascending-metric subcarrier order for the
    sorting detectors (None for the trellis/exhaustive ones); ``llr`` the
    reliability scalar where defined; ``metrics`` whatever per-subcarrier
    statistics drove the decision; ``cost`` the achieved objective for the
    likelihood detectors.
    """

    codeword: Codeword
    permutation: np.ndarray | None = None
    llr: float | None = None
    metrics: object | None = None
    cost: float | None = None


Detector = Callable[[ReceivedBlock], Decision]


def _abs2(r: np.ndarray) -> np.ndarray:
    return r.real**2 + r.imag**2


def _metric_constants(
    gamma: np.ndarray, sigma2: float, energies: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Constants of the per-level metric: inverse variances (N, L) and the
    summed log-variances (L,), so a block's table is one matmul."""
    denom = energies[:, None] * gamma[None, :] + sigma2
    return np.ascontiguousarray((1.0 / denom).T), np.log(denom).sum(axis=1)


def ml_metric_table(
    block: ReceivedBlock,
    eig: EigenBasis,
    sigma2: float,
    amplitudes: AmplitudeSet,
) -> MetricTable:
    """c[k][l] = sum_n |r_kn|^2/(eps_l gamma_n + sigma2) + ln(eps_l gamma_n + sigma2).

    The table is everything the likelihood detectors need; rows are
    independent across subcarriers.
    """
    if sigma2 <= 0:
        raise ValueError(
            f"likelihood metrics need a positive noise power, got {sigma2}"
        )
    inv_t, logdet = _metric_constants(eig.gamma, sigma2, amplitudes.energies)
    return MetricTable(_abs2(block.r) @ inv_t + logdet)


def brute_force_ml(
    table: MetricTable,
    policy: PartitionPolicy,
    amplitudes: AmplitudeSet,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> Decision:
    """Exhaustive minimization of sum_k c[k][l(k)] over the whole codebook.

    Codewords are scanned in lexicographic level order and the first
    minimum kept, so ties resolve toward the smallest level indices.
    """
    levels_all = _codebook_level_array(policy.multiplicities, cap)
    cols = np.arange(table.K)
    best_cost = math.inf
    best_row = -1
    for start in range(0, len(levels_all), _BRUTE_CHUNK):
        chunk = levels_all[start : start + _BRUTE_CHUNK]
        costs = table.c[cols, chunk - 1].sum(axis=1)
        i = int(np.argmin(costs))
        if costs[i] < best_cost:
            best_cost = float(costs[i])
            best_row = start + i
    return Decision(
        codeword=codeword_from_levels(levels_all[best_row], amplitudes),
        metrics=table,
        cost=best_cost,
    )


def trellis_state_count(policy: PartitionPolicy) -> int:
    """Number of level-usage-count states, prod_l (K_l + 1)."""
    return math.prod(m + 1 for m in policy.multiplicities)


class _Trellis:
    """Static structure of the level-count trellis for one policy.

    States are usage-count vectors (n_1..n_L), n_l in 0..K_l, packed as
    mixed-radix codes.  Only states whose counts sum to k are reachable at
    stage k, so the states are grouped into per-stage shells and the
    transition "assign level l" is precomputed as parallel index arrays
    between consecutive shells.  Built once per policy, reused across
    blocks and batches.
    """

    def __init__(self, policy: PartitionPolicy, state_cap: int):
        count = trellis_state_count(policy)
        if count > state_cap:
            raise SizeLimitError(
                f"trellis needs {count} states (cap {state_cap}); use the "
                "exhaustive or sort-based detectors instead"
            )
        mult = policy.multiplicities
        K, L = policy.K, len(mult)
        radix = np.asarray([m + 1 for m in mult])
        strides = np.concatenate(([1], np.cumprod(radix[:-1])))
        codes = np.arange(count)
        digits = [(codes // strides[l]) % radix[l] for l in range(L)]
        shell_of = sum(digits)
        shells = [np.flatnonzero(shell_of == k) for k in range(K + 1)]
        # src_sel[k][l]: positions within shell k whose count of level l is
        # not yet exhausted; step[k][l]: the successor's position in shell
        # k+1, aligned with shell k (-1 where the transition is invalid)
        self.src_sel: list[list[np.ndarray]] = []
        self.step: list[np.ndarray] = []
        pos_next = np.empty(count, dtype=np.int64)
        for k in range(K):
            pos_next[shells[k + 1]] = np.arange(len(shells[k + 1]))
            sel_k = []
            step_k = np.full((L, len(shells[k])), -1, dtype=np.int64)
            for l in range(L):
                sel = np.flatnonzero(digits[l][shells[k]] < mult[l])
                sel_k.append(sel)
                step_k[l, sel] = pos_next[shells[k][sel] + strides[l]]
            self.src_sel.append(sel_k)
            self.step.append(step_k)
        self.shell_sizes = [len(s) for s in shells]
        self.strides = strides
        self.n_states = count
        self.K = K
        self.L = L

    def decode_batch(self, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Min-cost level assignments for a stack of metric tables (B, K, L),
        with the smallest-level-earliest-stage tie-break.

        Backward pass over shells: cost-to-go per reachable state,
        recording at each stage the smallest level that attains it.
        Forward pass: follow those choices from the empty state.  The walk
        replays the very floats the minimization produced, so the
        tie-break is exact.
        """
        B = c.shape[0]
        K, L = self.K, self.L
        ctg = np.zeros((B, 1))
        choices: list[np.ndarray] = [None] * K
        for k in range(K - 1, -1, -1):
            m = self.shell_sizes[k]
            nxt = np.full((B, m), np.inf)
            ch = np.full((B, m), -1, dtype=np.int8)
            for l in range(L):
                src = self.src_sel[k][l]
                if src.size == 0:
                    continue
                cand = c[:, k, l][:, None] + ctg[:, self.step[k][l, src]]
                cur = nxt[:, src]
                mask = cand < cur
                nxt[:, src] = np.where(mask, cand, cur)
                ch[:, src] = np.where(mask, np.int8(l), ch[:, src])
            ctg = nxt
            choices[k] = ch
        costs = ctg[:, 0].copy()
        levels = np.empty((B, K), dtype=np.int64)
        rows = np.arange(B)
        pos = np.zeros(B, dtype=np.int64)
        for k in range(K):
            lv = choices[k][rows, pos].astype(np.int64)
            assert lv.min() >= 0, "walk reached a dead state; trellis is inconsistent"
            levels[:, k] = lv + 1
            pos = self.step[k][lv, pos]
        return levels, costs

    def decode(self, c: np.ndarray) -> tuple[np.ndarray, float]:
        levels, costs = self.decode_batch(c[None])
        return levels[0], float(costs[0])


@lru_cache(maxsize=16)
def _trellis(multiplicities: tuple[int, ...], state_cap: int) -> _Trellis:
    return _Trellis(PartitionPolicy(multiplicities), state_cap)


def viterbi_ml(
    table: MetricTable,
    policy: PartitionPolicy,
    amplitudes: AmplitudeSet,
    state_cap: int = DEFAULT_STATE_CAP,
) -> Decision:
    """Trellis dynamic program equivalent to brute_force_ml, decision and
    tie-break included, at prod(K_l + 1) states instead of K!/prod K_l!
    codewords."""
    levels, cost = _trellis(policy.multiplicities, state_cap).decode(table.c)
    return Decision(
        codeword=codeword_from_levels(levels, amplitudes),
        metrics=table,
        cost=cost,
    )


def _sort_assign(
    values: np.ndarray,
    policy: PartitionPolicy,
    amplitudes: AmplitudeSet,
    metrics: object,
    llr_v: np.ndarray | None = None,
) -> Decision:
    """Shared tail of every sorting detector: stable ascending argsort of
    the per-subcarrier statistics, reference amplitudes assigned in order
    (K_1 smallest values get level 1, the next K_2 level 2, ...)."""
    ref = reference_vector(policy, amplitudes)
    order = np.argsort(values, kind="stable")
    levels = np.empty(policy.K, dtype=np.int64)
    levels[order] = ref.level_of
    llr = None
    if llr_v is not None:
        llr = llr_isotropic(values[order], llr_v, policy)
    return Decision(
        codeword=Codeword(level_indices=levels, amplitudes=amplitudes.levels[levels - 1]),
        permutation=order,
        llr=llr,
        metrics=metrics,
    )


def isotropic_metrics(
    block: ReceivedBlock,
    sigma2: float,
    policy: PartitionPolicy,
    amplitudes: AmplitudeSet,
) -> IsotropicMetrics:
    if sigma2 <= 0:
        raise ValueError(f"need a positive noise power, got {sigma2}")
    ref = reference_vector(policy, amplitudes)
    return IsotropicMetrics(
        u=_abs2(block.r).sum(axis=1),
        v=1.0 / (ref.entries**2 + sigma2),
    )


def isotropic_ml(
    block: ReceivedBlock,
    sigma2: float,
    policy: PartitionPolicy,
    amplitudes: AmplitudeSet,
) -> Decision:
    """ML detection for an uncorrelated channel: on such channels the
    likelihood ordering reduces to pairing ascending received energies
    with ascending reference amplitudes, one stable sort per block.
    Callable on any channel as a (suboptimal) heuristic.  The returned
    Decision carries the reliability LLR.
    """
    m = isotropic_metrics(block, sigma2, policy, amplitudes)
    return _sort_assign(m.u, policy, amplitudes, metrics=m, llr_v=m.v)


def llr_isotropic(u_sorted: np.ndarray, v: np.ndarray, policy: PartitionPolicy) -> float:
    """Log-likelihood ratio of the sorting decision against the runner-up.

    The runner-up differs by one swap across a level boundary, so the LLR
    is min over boundaries b of (u_sorted[b] - u_sorted[b-1]) * (v[b-1] - v[b]),
    in nats.  Non-negative; zero when a tie straddles a boundary; +inf for
    a single-level policy (nothing to confuse).
    """
    u_sorted = np.asarray(u_sorted, dtype=float)
    v = np.asarray(v, dtype=float)
    if len(u_sorted) != policy.K or len(v) != policy.K:
        raise ValueError("u and v must both have one entry per subcarrier")
    if np.any(np.diff(u_sorted) < 0):
        raise ValueError("u must be sorted ascending")
    bounds = policy.boundaries
    if not bounds:
        return math.inf
    return float(
        min((u_sorted[b] - u_sorted[b - 1]) * (v[b - 1] - v[b]) for b in bounds)
    )


def weights_ed(eig: EigenBasis) -> WeightMatrix:
    """Flat weighting I/tr(Gamma): plain received energy, rescaled."""
    tr = float(eig.gamma.sum())
    if tr <= 0:
        raise ValueError("correlation eigenvalues sum to zero")
    return WeightMatrix(diag=np.full(eig.N, 1.0 / tr), kind="ed")


def weights_hsnr(eig: EigenBasis) -> WeightMatrix:
    """Inverse-eigenvalue weighting Gamma^{-1}/N, the vanishing-noise
    optimum.  Eigenvalues at or below the floor are dropped and the
    unbiasedness constraint renormalized over the retained set.
    """
    keep = eig.gamma > EIGENVALUE_FLOOR
    n_keep = int(np.count_nonzero(keep))
    if n_keep == 0:
        raise ValueError("all correlation eigenvalues are numerically zero")
    diag = np.zeros(eig.N)
    diag[keep] = 1.0 / (n_keep * eig.gamma[keep])
    return WeightMatrix(diag=diag, kind="hsnr")


def _abque_diag(gamma: np.ndarray, sigma2: float, eps_hat: np.ndarray) -> np.ndarray:
    """Rows of minimum-variance weights, one per eps_hat entry: with
    d_n = eps_hat*gamma_n + sigma2, diag_n = (gamma_n/d_n^2) / sum_m (gamma_m/d_m)^2."""
    d = np.asarray(eps_hat, dtype=float)[:, None] * gamma[None, :] + sigma2
    w = gamma / d**2
    return w / (w * gamma).sum(axis=1, keepdims=True)


def weights_abque(eig: EigenBasis, sigma2: float, eps_hat: float) -> WeightMatrix:
    """Variance-minimizing unbiased weighting at an assumed transmit energy.

    Interpolates between the flat and inverse-eigenvalue weightings: at
    eps_hat = 0 (or any isotropic channel) it reduces to weights_ed, and
    as eps_hat grows it tends to weights_hsnr.
    """
    if sigma2 <= 0:
        raise ValueError(f"need a positive noise power, got {sigma2}")
    if eps_hat < 0:
        raise ValueError(f"assumed energy must be >= 0, got {eps_hat}")
    return WeightMatrix(
        diag=_abque_diag(eig.gamma, sigma2, np.asarray([eps_hat]))[0],
        kind="abque",
    )


def energy_estimates(
    block: ReceivedBlock,
    weights: WeightMatrix | Sequence[WeightMatrix] | np.ndarray,
    sigma2: float,
) -> np.ndarray:
    """Debiased quadratic energy estimates, one per subcarrier:
    eps_hat_k = sum_n diag_k[n] |r_kn|^2 - sigma2 * sum_n diag_k[n].

    `weights` is one WeightMatrix shared by all subcarriers, a length-K
    sequence of them, or a raw (K, N) diagonal array.  Estimates may come
    out negative at low SNR; the sorting step does not care.
    """
    if isinstance(weights, WeightMatrix):
        diag = weights.diag
    elif isinstance(weights, np.ndarray):
        diag = weights
    else:
        diag = np.stack([w.diag for w in weights])
    p = _abs2(block.r)
    if diag.ndim == 1:
        return p @ diag - sigma2 * diag.sum()
    if diag.shape != p.shape:
        raise ValueError(
            f"per-subcarrier weights of shape {diag.shape} do not match block {p.shape}"
        )
    return (p * diag).sum(axis=1) - sigma2 * diag.sum(axis=1)


def _slice_to_energies(eps_hat: np.ndarray, amplitudes: AmplitudeSet) -> np.ndarray:
    """Nearest-level slicing, per subcarrier, ignoring the multiset
    constraint.  Kept as the weaker first-round alternative."""
    dist = np.abs(eps_hat[:, None] - amplitudes.energies[None, :])
    return amplitudes.energies[np.argmin(dist, axis=1)]


def detect_quadratic(
    kind: str,
    block: ReceivedBlock,
    eig: EigenBasis,
    sigma2: float,
    policy: PartitionPolicy,
    amplitudes: AmplitudeSet,
    first_round: str = "codeword",
) -> Decision:
    """Quadratic-statistic detectors: estimate per-subcarrier energies,
    then sort-assign the reference amplitudes.

    ed / hsnr run one estimation pass.  abque runs two rounds: the first
    is a full ed decision (the multiset-respecting reading; set
    first_round="slicing" for per-subcarrier nearest-level slicing
    instead), whose decided energies parameterize per-subcarrier
    minimum-variance weights for the second pass.  bque-genie is the
    unrealizable benchmark: round two fed the true transmitted energies,
    so the block must carry its ground truth.
    """
    if kind == "ed":
        eps = energy_estimates(block, weights_ed(eig), sigma2)
    elif kind == "hsnr":
        eps = energy_estimates(block, weights_hsnr(eig), sigma2)
    elif kind in ("abque", "bque-genie"):
        if kind == "bque-genie":
            if block.truth is None:
                raise ValueError(
                    "the genie benchmark needs the transmitted codeword on the block"
                )
            assumed = block.truth.amplitudes**2
        elif first_round == "codeword":
            first = detect_quadratic("ed", block, eig, sigma2, policy, amplitudes)
            assumed = first.codeword.amplitudes**2
        elif first_round == "slicing":
            eps0 = energy_estimates(block, weights_ed(eig), sigma2)
            assumed = _slice_to_energies(eps0, amplitudes)
        else:
            raise ValueError(f"unknown first-round mode {first_round!r}")
        diag = _abque_diag(eig.gamma, sigma2, assumed)
        eps = energy_estimates(block, diag, sigma2)
    else:
        raise ValueError(f"unknown quadratic detector kind {kind!r}")
    return _sort_assign(eps, policy, amplitudes, metrics=eps)


def detect_hsnr_limit(
    block: ReceivedBlock,
    eig: EigenBasis,
    policy: PartitionPolicy,
    amplitudes: AmplitudeSet,
    active_set: Sequence[int],
) -> Decision:
    """Vanishing-noise diagnostic with a genie-provided active set: sorts
    the inverse-eigenvalue quadratic forms over the active subcarriers,
    assigns the nonzero reference amplitudes ascending, and pins the rest
    to level 1.
    """
    k_inactive = policy.multiplicities[0]
    active = np.unique(np.asarray(list(active_set), dtype=np.int64))
    if len(active) != policy.K - k_inactive:
        raise ValueError(
            f"active set has {len(active)} distinct indices, policy requires "
            f"{policy.K - k_inactive}"
        )
    if len(active) and (active[0] < 0 or active[-1] >= policy.K):
        raise ValueError("active-set indices out of range")
    keep = eig.gamma > EIGENVALUE_FLOOR
    if not np.any(keep):
        raise ValueError("all correlation eigenvalues are numerically zero")
    q = _abs2(block.r)[:, keep] @ (1.0 / eig.gamma[keep])
    ref = reference_vector(policy, amplitudes)
    inactive = np.setdiff1d(np.arange(policy.K), active)
    order = np.concatenate(
        [inactive, active[np.argsort(q[active], kind="stable")]]
    ).astype(np.int64)
    levels = np.empty(policy.K, dtype=np.int64)
    levels[order] = ref.level_of
    return Decision(
        codeword=Codeword(level_indices=levels, amplitudes=amplitudes.levels[levels - 1]),
        permutation=order,
        metrics=q,
    )


class BoundDetector:
    """A detector kind bound to one operating point.

    Calling it detects a single block.  ``levels_batch`` is the fast lane
    for the Monte Carlo harness: it takes a stack of rotated observations
    (B, K, N) plus the stacked true level indices (needed only by the
    genie-fed kinds) and returns the (B, K) decided levels, row for row
    identical in distribution to the per-block path.
    """

    def __init__(self, kind: str, fn: Detector, batch_fn=None):
        self.kind = kind
        self._fn = fn
        self._batch_fn = batch_fn

    def __call__(self, block: ReceivedBlock) -> Decision:
        return self._fn(block)

    @property
    def supports_batch(self) -> bool:
        return self._batch_fn is not None

    def levels_batch(
        self, r_stack: np.ndarray, truth_levels: np.ndarray | None = None
    ) -> np.ndarray:
        if self._batch_fn is None:
            raise NotImplementedError(f"{self.kind} has no batch path")
        return self._batch_fn(r_stack, truth_levels)


def _assign_sorted_rows(values: np.ndarray, ref_levels: np.ndarray) -> np.ndarray:
    """Row-wise sort-assignment: per row, ascending values receive the
    reference levels in order (stable, index tie-break)."""
    order = np.argsort(values, axis=1, kind="stable")
    levels = np.empty(values.shape, dtype=np.int64)
    np.put_along_axis(
        levels, order, np.broadcast_to(ref_levels, values.shape), axis=1
    )
    return levels


_VITERBI_BATCH_CHUNK = 64


def make_detector(
    kind: str,
    eig: EigenBasis,
    sigma2: float,
    policy: PartitionPolicy,
    amplitudes: AmplitudeSet,
    state_cap: int = DEFAULT_STATE_CAP,
    enum_cap: int = DEFAULT_ENUMERATION_CAP,
) -> BoundDetector:
    """Bind a detector kind to one operating point.  Feasibility (codebook
    or trellis size) and metric constants are resolved here, once, not per
    block.

    The genie-fed kinds (bque-genie, hsnr-limit) read the transmitted
    codeword off the block and refuse blocks without one.
    """
    if kind not in DETECTOR_KINDS:
        raise ValueError(
            f"unknown detector {kind!r}; expected one of {', '.join(DETECTOR_KINDS)}"
        )
    ref_levels = reference_vector(policy, amplitudes).level_of
    gamma = eig.gamma

    if kind in ("ml-brute", "ml-viterbi"):
        if sigma2 <= 0:
            raise ValueError(
                f"likelihood metrics need a positive noise power, got {sigma2}"
            )
        inv_t, logdet = _metric_constants(gamma, sigma2, amplitudes.energies)

        def table_of(block: ReceivedBlock) -> MetricTable:
            return MetricTable(_abs2(block.r) @ inv_t + logdet)

        if kind == "ml-brute":
            size = cardinality(policy)
            if size > enum_cap:
                raise SizeLimitError(
                    f"codebook of size {size} exceeds the cap of {enum_cap}"
                )
            return BoundDetector(
                kind,
                lambda block: brute_force_ml(table_of(block), policy, amplitudes, enum_cap),
            )

        trellis = _trellis(policy.multiplicities, state_cap)

        def viterbi_batch(r_stack, truth_levels):
            c = _abs2(r_stack) @ inv_t + logdet
            levels = np.empty(c.shape[:2], dtype=np.int64)
            for s in range(0, len(c), _VITERBI_BATCH_CHUNK):
                chunk = c[s : s + _VITERBI_BATCH_CHUNK]
                levels[s : s + len(chunk)] = trellis.decode_batch(chunk)[0]
            return levels

        return BoundDetector(
            kind,
            lambda block: viterbi_ml(table_of(block), policy, amplitudes, state_cap),
            viterbi_batch,
        )

    if kind == "ml-iso-sort":
        if sigma2 <= 0:
            raise ValueError(f"need a positive noise power, got {sigma2}")
        return BoundDetector(
            kind,
            lambda block: isotropic_ml(block, sigma2, policy, amplitudes),
            lambda r_stack, truth_levels: _assign_sorted_rows(
                _abs2(r_stack).sum(axis=-1), ref_levels
            ),
        )

    if kind in ("ed", "hsnr", "abque", "bque-genie"):
        fn = lambda block: detect_quadratic(kind, block, eig, sigma2, policy, amplitudes)

        if kind in ("ed", "hsnr"):
            diag = (weights_ed if kind == "ed" else weights_hsnr)(eig).diag
            bias = sigma2 * diag.sum()
            batch = lambda r_stack, truth_levels: _assign_sorted_rows(
                _abs2(r_stack) @ diag - bias, ref_levels
            )
            return BoundDetector(kind, fn, batch)

        if sigma2 <= 0:
            raise ValueError(f"need a positive noise power, got {sigma2}")
        ed_diag = weights_ed(eig).diag
        ed_bias = sigma2 * ed_diag.sum()
        energies = amplitudes.energies

        def round_two(p: np.ndarray, assumed: np.ndarray) -> np.ndarray:
            d = assumed[..., None] * gamma + sigma2
            w = gamma / d**2
            diag = w / (w * gamma).sum(axis=-1, keepdims=True)
            return (p * diag).sum(axis=-1) - sigma2 * diag.sum(axis=-1)

        def quad_batch(r_stack, truth_levels):
            p = _abs2(r_stack)
            if kind == "bque-genie":
                if truth_levels is None:
                    raise ValueError(
                        "the genie benchmark needs the transmitted levels"
                    )
                assumed = energies[truth_levels - 1]
            else:
                first = _assign_sorted_rows(p @ ed_diag - ed_bias, ref_levels)
                assumed = energies[first - 1]
            return _assign_sorted_rows(round_two(p, assumed), ref_levels)

        return BoundDetector(kind, fn, quad_batch)

    # vanishing-noise diagnostic with a genie active set
    keep = gamma > EIGENVALUE_FLOOR
    if not np.any(keep):
        raise ValueError("all correlation eigenvalues are numerically zero")
    inv_gamma = 1.0 / gamma[keep]

    def limit_fn(block: ReceivedBlock) -> Decision:
        if block.truth is None:
            raise ValueError(
                "the vanishing-noise diagnostic needs the transmitted codeword "
                "on the block to derive its active set"
            )
        active = np.flatnonzero(block.truth.level_indices > 1)
        return detect_hsnr_limit(block, eig, policy, amplitudes, active)

    def limit_batch(r_stack, truth_levels):
        if truth_levels is None:
            raise ValueError("the vanishing-noise diagnostic needs the true levels")
        q = _abs2(r_stack)[:, :, keep] @ inv_gamma
        masked = np.where(truth_levels == 1, -np.inf, q)
        return _assign_sorted_rows(masked, ref_levels)

    return BoundDetector(kind, limit_fn, limit_batch)
