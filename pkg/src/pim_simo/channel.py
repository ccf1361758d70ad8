"""Noncoherent SIMO channel model.

Per subcarrier k the N-antenna receive vector is y_k = h_k x_k + z_k with
h_k ~ CN(0, Sigma_h) and z_k ~ CN(0, sigma_z^2 I).  Neither h_k nor its
realization is known anywhere; only Sigma_h is.  Diagonalizing
Sigma_h = U diag(gamma) U^H and rotating r_k = U^H y_k turns each
subcarrier into a product of independent complex Gaussians with variances
|x_k|^2 gamma_n + sigma_z^2, which is the representation every detector in
this package consumes.  Sampling can therefore happen directly in the
eigenbasis; a full-basis path via y_k exists as a cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .codebook import AmplitudeSet, Codeword, PartitionPolicy, random_codeword

EIG_SYMMETRY_TOL = 1e-12
EIG_NEGATIVE_TOL = -1e-10
EIG_ORTHO_TOL = 1e-10
EIG_RECON_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class CorrelationModel:
    """Antenna correlation matrix Sigma_h, Hermitian PSD with unit diagonal."""

    matrix: np.ndarray

    @property
    def N(self) -> int:
        return self.matrix.shape[0]


def exponential_correlation(N: int, rho: float) -> CorrelationModel:
    """[Sigma_h]_{m,n} = rho^|n-m| for a uniform linear array."""
    if N < 1:
        raise ValueError(f"need N >= 1 antennas, got {N}")
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"correlation coefficient must be in [0, 1), got {rho}")
    idx = np.arange(N)
    return CorrelationModel(rho ** np.abs(idx[:, None] - idx[None, :]))


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """Eigendecomposition Sigma_h = U diag(gamma) U^H, gamma descending."""

    gamma: np.ndarray
    U: np.ndarray

    @property
    def N(self) -> int:
        return len(self.gamma)


def hermitian_eig(model: CorrelationModel) -> EigenBasis:
    """Eigendecomposition of the correlation matrix with PSD hygiene:
    symmetry is enforced up to a tolerance, eigenvalues are clamped at zero
    (tiny negatives only; anything below -1e-10 is an error), sorted
    descending, and the factorization is verified before returning.

    An exactly diagonal matrix short-circuits to gamma = sorted diagonal
    and a permutation of the identity, so the uncorrelated case keeps
    bit-exact unit eigenvalues.
    """
    S = np.asarray(model.matrix)
    off = S - np.diag(np.diag(S))
    if not np.any(off):
        # stable descending sort: equal diagonal entries (the uncorrelated
        # case) keep their positions, so the identity maps to itself
        order = np.argsort(-np.real(np.diag(S)), kind="stable")
        gamma = np.real(np.diag(S))[order].astype(float)
        U = np.eye(len(gamma), dtype=complex)[:, order]
        return EigenBasis(gamma=gamma, U=U)
    asym = np.max(np.abs(S - S.conj().T))
    if asym > EIG_SYMMETRY_TOL:
        raise ValueError(f"correlation matrix asymmetry {asym:.3e} exceeds tolerance")
    S = 0.5 * (S + S.conj().T)
    gamma, U = np.linalg.eigh(S)
    if gamma[0] < EIG_NEGATIVE_TOL:
        raise ValueError(f"correlation matrix has negative eigenvalue {gamma[0]:.3e}")
    gamma = np.maximum(gamma, 0.0)
    gamma, U = gamma[::-1].copy(), U[:, ::-1].copy()
    N = len(gamma)
    ortho_err = np.max(np.abs(U.conj().T @ U - np.eye(N)))
    if ortho_err > EIG_ORTHO_TOL:
        raise ValueError(f"eigenvector orthonormality error {ortho_err:.3e}")
    recon_err = np.max(np.abs((U * gamma) @ U.conj().T - S))
    if recon_err > EIG_RECON_TOL:
        raise ValueError(f"eigendecomposition residual {recon_err:.3e}")
    return EigenBasis(gamma=gamma, U=U)


@dataclass(frozen=True, eq=False)
class ChannelSpec:
    """Everything the sampler and the detectors need about the channel:
    the eigenbasis of Sigma_h and the per-antenna noise power sigma_z^2.

    sigma2 = 0 is allowed as a diagnostic limit for the sampler; metric
    construction rejects it separately.
    """

    eig: EigenBasis
    sigma2: float

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError(f"noise power must be >= 0, got {self.sigma2}")

    @property
    def N(self) -> int:
        return self.eig.N


def noise_power_for_snr(
    snr_linear: float,
    policy: PartitionPolicy | None = None,
    amplitudes: AmplitudeSet | None = None,
) -> float:
    """sigma_z^2 realizing a given average SNR.

    With tr(Sigma_h) = N the SNR is sum_l p_l eps_l / sigma_z^2, so
    sigma_z^2 = mean transmit power / SNR.  Without a policy the mean
    power defaults to the unit normalization of the amplitude grid.
    """
    if snr_linear <= 0:
        raise ValueError(f"SNR must be positive, got {snr_linear}")
    if (policy is None) != (amplitudes is None):
        raise ValueError("pass policy and amplitudes together or not at all")
    if policy is None:
        mean_power = 1.0
    else:
        mean_power = float(policy.fractions @ amplitudes.energies)
    return mean_power / snr_linear


def snr_db_to_linear(snr_db: float) -> float:
    return 10.0 ** (snr_db / 10.0)


@dataclass(frozen=True, eq=False)
class ReceivedBlock:
    """One transmitted codeword seen in the eigenbasis: rows are the rotated
    receive vectors r_k = U^H y_k.  ``truth`` carries the transmitted
    codeword for error counting and for the genie-aided detectors.
    """

    r: np.ndarray
    truth: Codeword | None = None

    @property
    def K(self) -> int:
        return self.r.shape[0]

    @property
    def N(self) -> int:
        return self.r.shape[1]


def sample_block_eigen(
    spec: ChannelSpec,
    codeword: Codeword,
    rng: np.random.Generator,
) -> ReceivedBlock:
    """Draw r directly in the eigenbasis: (r_k)_n ~ CN(0, eps_k gamma_n + sigma_z^2)
    independently over k and n.  One standard_normal call of shape (2, K, N)
    per block keeps the draw order fixed for reproducibility.
    """
    energies = codeword.amplitudes**2
    var = energies[:, None] * spec.eig.gamma[None, :] + spec.sigma2
    w = rng.standard_normal((2, len(energies), spec.N))
    r = (w[0] + 1j * w[1]) * np.sqrt(var / 2.0)
    return ReceivedBlock(r=r, truth=codeword)


def sample_block_full(
    spec: ChannelSpec,
    model: CorrelationModel,
    codeword: Codeword,
    rng: np.random.Generator,
) -> ReceivedBlock:
    """Cross-check sampler through the physical model: draw h_k ~ CN(0, Sigma_h)
    via a matrix square root, form y_k = h_k x_k + z_k, then rotate into
    the eigenbasis.  Statistically identical to sample_block_eigen but not
    stream-compatible with it.
    """
    N = model.N
    K = codeword.K
    try:
        A = np.linalg.cholesky(model.matrix)
    except np.linalg.LinAlgError:
        # PSD but singular: fall back to the eigenvalue square root
        A = spec.eig.U * np.sqrt(spec.eig.gamma)
    wh = rng.standard_normal((2, K, N))
    h = (wh[0] + 1j * wh[1]) / math.sqrt(2.0) @ A.conj().T
    wz = rng.standard_normal((2, K, N))
    z = (wz[0] + 1j * wz[1]) * math.sqrt(spec.sigma2 / 2.0)
    y = h * codeword.amplitudes[:, None] + z
    return ReceivedBlock(r=y @ np.conj(spec.eig.U), truth=codeword)


def random_block(
    spec: ChannelSpec,
    policy: PartitionPolicy,
    amplitudes: AmplitudeSet,
    rng: np.random.Generator,
) -> ReceivedBlock:
    """Uniform codeword draw followed by an eigenbasis channel draw, the
    per-trial unit of every Monte Carlo experiment here."""
    return sample_block_eigen(spec, random_codeword(policy, amplitudes, rng), rng)
