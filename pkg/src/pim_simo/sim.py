"""Monte Carlo harness: SER estimation, parameter sweeps, required-SNR search.

Reproducibility is the organizing principle.  Every trial owns a private
random stream keyed by (master seed, trial index), so results are exact
functions of the seed and the experiment parameters, independent of worker
count and scheduling.  Trials are dispatched in fixed-size batches; the
fixed-error-count stopping rule is applied to the per-trial error sequence
itself, which makes the stopping trial (and hence every reported number)
identical whether the batches ran on one thread or eight.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ._version import __version__
from .channel import (
    ChannelSpec,
    CorrelationModel,
    exponential_correlation,
    hermitian_eig,
    noise_power_for_snr,
    random_block,
    sample_block_full,
    snr_db_to_linear,
)
from .codebook import (
    AmplitudeSet,
    PartitionPolicy,
    build_amplitude_set,
    random_codeword,
    spectral_efficiency,
)
from .detect import DETECTOR_KINDS, Decision, Detector, make_detector

_BATCH = 256
_SEED_MASK = (1 << 64) - 1

SWEEP_AXES = ("snr", "antennas", "correlation", "policy")

DEFAULT_BRACKET_DB = (-5.0, 60.0)


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: code, channel, operating grid, stopping rule, seed."""

    policy: PartitionPolicy
    L: int
    N: int
    rho: float
    snr_db: tuple[float, ...]
    detectors: tuple[str, ...]
    min_errors: int = 200
    max_trials: int = 100_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        object.__setattr__(self, "detectors", tuple(self.detectors))
        if self.L != self.policy.L:
            raise ValueError(
                f"policy has {self.policy.L} levels but L = {self.L} was given"
            )
        if self.N < 1:
            raise ValueError(f"need at least one antenna, got {self.N}")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"correlation must be in [0, 1), got {self.rho}")
        if not self.snr_db or not all(math.isfinite(s) for s in self.snr_db):
            raise ValueError("SNR grid must be non-empty and finite")
        for kind in self.detectors:
            if kind not in DETECTOR_KINDS:
                raise ValueError(
                    f"unknown detector {kind!r}; expected one of {', '.join(DETECTOR_KINDS)}"
                )
        if self.min_errors < 1:
            raise ValueError("min_errors must be >= 1")
        if self.max_trials < 1:
            raise ValueError("trial budget must be >= 1")
        if not 0 <= self.seed <= _SEED_MASK:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    @property
    def amplitudes(self) -> AmplitudeSet:
        return build_amplitude_set(self.L)


@dataclass(frozen=True)
class SerEstimate:
    """Symbol-error-rate estimate with its binomial standard error."""

    ser: float
    symbol_errors: int
    symbols: int
    std_error: float
    trials: int


def _estimate(symbol_errors: int, trials: int, K: int) -> SerEstimate:
    symbols = trials * K
    ser = symbol_errors / symbols
    return SerEstimate(
        ser=ser,
        symbol_errors=symbol_errors,
        symbols=symbols,
        std_error=math.sqrt(ser * (1.0 - ser) / symbols),
        trials=trials,
    )


@dataclass(frozen=True)
class SweepResult:
    """Per-detector SER series along one experiment axis, with provenance."""

    axis: str
    values: tuple
    detectors: tuple[str, ...]
    series: dict[str, tuple[SerEstimate, ...]]
    spectral_efficiency: tuple[float, ...] | None
    config_hash: str
    seed: int
    code_version: str


def trial_rng(master_seed: int, trial_index: int) -> np.random.Generator:
    """Private random stream for one trial.

    Seeding hashes the (seed, index) pair through SeedSequence, so streams
    are statistically independent across indices and depend only on the
    pair, never on execution order.
    """
    if not 0 <= master_seed <= _SEED_MASK:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    if trial_index < 0:
        raise ValueError("trial index must be non-negative")
    ss = np.random.SeedSequence([master_seed, trial_index])
    return np.random.Generator(np.random.PCG64(ss))


def _operating_point(
    spec: ExperimentSpec,
    snr_db: float,
    N: int | None = None,
    rho: float | None = None,
    policy: PartitionPolicy | None = None,
) -> tuple[ChannelSpec, CorrelationModel, PartitionPolicy, AmplitudeSet]:
    policy = spec.policy if policy is None else policy
    amps = build_amplitude_set(policy.L)
    model = exponential_correlation(
        spec.N if N is None else N, spec.rho if rho is None else rho
    )
    sigma2 = noise_power_for_snr(snr_db_to_linear(snr_db), policy, amps)
    return ChannelSpec(eig=hermitian_eig(model), sigma2=sigma2), model, policy, amps


def _resolve_detectors(
    detectors: Sequence[str | Detector],
    chspec: ChannelSpec,
    policy: PartitionPolicy,
    amps: AmplitudeSet,
) -> list[Detector]:
    return [
        make_detector(d, chspec.eig, chspec.sigma2, policy, amps)
        if isinstance(d, str)
        else d
        for d in detectors
    ]


def _batch_errors(
    start: int,
    size: int,
    seed: int,
    chspec: ChannelSpec,
    model: CorrelationModel,
    policy: PartitionPolicy,
    amps: AmplitudeSet,
    detectors: Sequence[Detector],
    sampler: str,
) -> np.ndarray:
    """Per-trial symbol-error counts for trials [start, start+size), one row
    per detector.  All detectors see the same block each trial; detectors
    with a vectorized lane process the whole stack at once."""
    blocks = []
    for i in range(size):
        rng = trial_rng(seed, start + i)
        if sampler == "eigen":
            blocks.append(random_block(chspec, policy, amps, rng))
        else:
            word = random_codeword(policy, amps, rng)
            blocks.append(sample_block_full(chspec, model, word, rng))
    truth = np.stack([b.truth.level_indices for b in blocks])
    out = np.zeros((len(detectors), size), dtype=np.int64)
    r_stack = None
    for j, det in enumerate(detectors):
        if getattr(det, "supports_batch", False):
            if r_stack is None:
                r_stack = np.stack([b.r for b in blocks])
            out[j] = np.count_nonzero(det.levels_batch(r_stack, truth) != truth, axis=1)
        else:
            for i, block in enumerate(blocks):
                out[j, i] = np.count_nonzero(
                    det(block).codeword.level_indices != truth[i]
                )
    return out


def run_ser_multi(
    spec: ExperimentSpec,
    snr_db: float,
    detectors: Sequence[str | Detector] | None = None,
    threads: int = 1,
    sampler: str = "eigen",
    min_errors: int | None = None,
    max_trials: int | None = None,
    N: int | None = None,
    rho: float | None = None,
    policy: PartitionPolicy | None = None,
) -> list[SerEstimate]:
    """SER at one operating point for several detectors over shared blocks.

    Each detector stops independently at the exact trial where its
    cumulative symbol errors first reach min_errors (or at the trial cap),
    so every returned estimate equals the single-detector run bit for bit.
    """
    if sampler not in ("eigen", "full"):
        raise ValueError(f"unknown sampler {sampler!r}")
    if detectors is None:
        detectors = spec.detectors
    min_errors = spec.min_errors if min_errors is None else min_errors
    max_trials = spec.max_trials if max_trials is None else max_trials
    if max_trials < 1:
        raise ValueError("trial budget must be >= 1")
    chspec, model, policy, amps = _operating_point(spec, snr_db, N, rho, policy)
    bound = _resolve_detectors(detectors, chspec, policy, amps)

    n_det = len(bound)
    totals = [0] * n_det
    trials = [0] * n_det
    done = [False] * n_det
    next_start = 0
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        while not all(done) and next_start < max_trials:
            active = [j for j in range(n_det) if not done[j]]
            active_dets = [bound[j] for j in active]
            wave = []
            for _ in range(max(1, threads)):
                if next_start >= max_trials:
                    break
                size = min(_BATCH, max_trials - next_start)
                wave.append((next_start, size))
                next_start += size
            futures = [
                pool.submit(
                    _batch_errors,
                    start,
                    size,
                    spec.seed,
                    chspec,
                    model,
                    policy,
                    amps,
                    active_dets,
                    sampler,
                )
                for start, size in wave
            ]
            for (start, size), fut in zip(wave, futures):
                rows = fut.result()
                for row, j in zip(rows, active):
                    if done[j]:
                        continue
                    csum = totals[j] + np.cumsum(row)
                    hit = np.flatnonzero(csum >= min_errors)
                    if hit.size:
                        t = int(hit[0])
                        totals[j] = int(csum[t])
                        trials[j] = start + t + 1
                        done[j] = True
                    else:
                        totals[j] = int(csum[-1])
                        trials[j] = start + size
                        if trials[j] >= max_trials:
                            done[j] = True
    return [_estimate(totals[j], trials[j], policy.K) for j in range(n_det)]


def run_ser(
    spec: ExperimentSpec,
    snr_db: float,
    detector: str | Detector,
    threads: int = 1,
    **kwargs,
) -> SerEstimate:
    """SER of one detector at one operating point; see run_ser_multi."""
    return run_ser_multi(spec, snr_db, [detector], threads=threads, **kwargs)[0]


def _policy_label(value) -> str:
    if isinstance(value, PartitionPolicy):
        return "-".join(str(m) for m in value.multiplicities)
    if isinstance(value, (tuple, list)):
        return "-".join(str(int(m)) for m in value)
    return str(value)


def axis_value_label(axis: str, value) -> str:
    """Stable text form of one axis point, used in CSV and JSON output."""
    if axis == "policy":
        return _policy_label(value)
    if axis == "antennas":
        return str(int(value))
    return format(float(value), "g")


def sweep(
    spec: ExperimentSpec,
    axis: str,
    values: Sequence | None = None,
    threads: int = 1,
) -> SweepResult:
    """Run the spec's detectors along one axis: snr (dB grid), antennas,
    correlation, or policy.  Non-snr axes hold the channel's other
    parameters fixed and use the spec's first SNR grid point.  The policy
    axis additionally records each policy's spectral efficiency.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown axis {axis!r}; expected one of {', '.join(SWEEP_AXES)}")
    if not spec.detectors:
        raise ValueError("experiment lists no detectors")
    if values is None:
        if axis != "snr":
            raise ValueError(f"axis {axis!r} needs explicit values")
        values = spec.snr_db
    if len(values) == 0:
        raise ValueError("axis values must be non-empty")

    base_snr = spec.snr_db[0]
    se_values = None
    points = []
    if axis == "snr":
        points = [dict(snr_db=float(v)) for v in values]
        values = tuple(float(v) for v in values)
    elif axis == "antennas":
        points = [dict(snr_db=base_snr, N=int(v)) for v in values]
        values = tuple(int(v) for v in values)
    elif axis == "correlation":
        points = [dict(snr_db=base_snr, rho=float(v)) for v in values]
        values = tuple(float(v) for v in values)
    else:
        policies = [
            v if isinstance(v, PartitionPolicy) else PartitionPolicy(tuple(v))
            for v in values
        ]
        points = [dict(snr_db=base_snr, policy=p) for p in policies]
        values = tuple(p.multiplicities for p in policies)
        se_values = tuple(spectral_efficiency(p) for p in policies)

    series: dict[str, list[SerEstimate]] = {k: [] for k in spec.detectors}
    for point in points:
        ests = run_ser_multi(spec, threads=threads, **point)
        for kind, est in zip(spec.detectors, ests):
            series[kind].append(est)
    return SweepResult(
        axis=axis,
        values=values,
        detectors=spec.detectors,
        series={k: tuple(v) for k, v in series.items()},
        spectral_efficiency=se_values,
        config_hash=config_hash(spec, axis, values),
        seed=spec.seed,
        code_version=__version__,
    )


def required_snr(
    spec: ExperimentSpec,
    detector: str | Detector,
    target_ser: float,
    tol_db: float = 0.25,
    lo_db: float = DEFAULT_BRACKET_DB[0],
    hi_db: float = DEFAULT_BRACKET_DB[1],
    threads: int = 1,
    probe: Callable[[float], float] | None = None,
) -> float | None:
    """Smallest SNR (dB, within tol_db) achieving the target SER, by
    bisection over the dB bracket; None when the detector's error floor
    sits above the target even at the top of the bracket.

    Each probe runs enough symbols to resolve the target (at least
    100/target_ser, capped by the spec's trial budget) and stops early at
    100 errors.  `probe` swaps in a synthetic SER curve for testing.
    """
    if not 0.0 < target_ser < 1.0:
        raise ValueError(f"target SER must be in (0, 1), got {target_ser}")
    if tol_db <= 0:
        raise ValueError(f"tolerance must be positive, got {tol_db}")
    if lo_db >= hi_db:
        raise ValueError(f"bracket [{lo_db}, {hi_db}] dB is not increasing")
    if probe is None:
        probe_trials = min(
            spec.max_trials, math.ceil(100.0 / (target_ser * spec.policy.K))
        )

        def probe(snr_db: float) -> float:
            return run_ser(
                spec,
                snr_db,
                detector,
                threads=threads,
                min_errors=100,
                max_trials=probe_trials,
            ).ser

    if probe(hi_db) > target_ser:
        return None
    if probe(lo_db) <= target_ser:
        return lo_db
    lo, hi = lo_db, hi_db
    while hi - lo > tol_db:
        mid = 0.5 * (lo + hi)
        if probe(mid) <= target_ser:
            hi = mid
        else:
            lo = mid
    return hi


def _spec_payload(spec: ExperimentSpec) -> dict:
    return {
        "policy": list(spec.policy.multiplicities),
        "L": spec.L,
        "N": spec.N,
        "rho": spec.rho,
        "snr_db": list(spec.snr_db),
        "detectors": list(spec.detectors),
        "min_errors": spec.min_errors,
        "max_trials": spec.max_trials,
        "seed": spec.seed,
    }


def config_hash(spec: ExperimentSpec, axis: str, values) -> str:
    payload = {
        "experiment": _spec_payload(spec),
        "axis": axis,
        "values": [axis_value_label(axis, v) for v in values],
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def write_sweep_csv(result: SweepResult, path) -> None:
    """One row per (axis point, detector).  The leading comment line pins
    the configuration hash and seed; numeric formatting is fixed so equal
    results produce byte-equal files.
    """
    lines = [
        f"# config={result.config_hash} seed={result.seed} "
        f"axis={result.axis} version={result.code_version}",
        "value,detector,ser,std_error,symbols,errors,seed",
    ]
    for vi, value in enumerate(result.values):
        label = axis_value_label(result.axis, value)
        for kind in result.detectors:
            est = result.series[kind][vi]
            lines.append(
                f"{label},{kind},{est.ser:.6e},{est.std_error:.6e},"
                f"{est.symbols},{est.symbol_errors},{result.seed}"
            )
    Path(path).write_text("\n".join(lines) + "\n")


def write_summary_json(result: SweepResult, spec: ExperimentSpec, path) -> None:
    """Full provenance record: experiment parameters, axis, and every
    estimate, in a stable key order."""
    labels = [axis_value_label(result.axis, v) for v in result.values]
    doc = {
        "config_hash": result.config_hash,
        "code_version": result.code_version,
        "seed": result.seed,
        "axis": result.axis,
        "values": labels,
        "detectors": list(result.detectors),
        "experiment": _spec_payload(spec),
        "spectral_efficiency": (
            None
            if result.spectral_efficiency is None
            else dict(zip(labels, result.spectral_efficiency))
        ),
        "series": {
            kind: [
                {
                    "value": labels[vi],
                    "ser": est.ser,
                    "std_error": est.std_error,
                    "symbols": est.symbols,
                    "errors": est.symbol_errors,
                    "trials": est.trials,
                }
                for vi, est in enumerate(result.series[kind])
            ]
            for kind in result.detectors
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
