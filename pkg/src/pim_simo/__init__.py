"""Permutational index modulation over a noncoherent massive SIMO channel.

Codeword = a multiset permutation of a fixed amplitude template across
OFDM subcarriers; the receiver knows only the channel statistics.  The
package provides the codebook combinatorics and rate formulas, the
correlated-fading channel model in its covariance eigenbasis, the full
detector family (exhaustive/trellis/sorting ML and the quadratic energy
estimators), and a reproducible Monte Carlo harness with a CLI.
"""

from ._version import __version__
from .channel import (
    ChannelSpec,
    CorrelationModel,
    EigenBasis,
    ReceivedBlock,
    exponential_correlation,
    hermitian_eig,
    noise_power_for_snr,
    random_block,
    sample_block_eigen,
    sample_block_full,
    snr_db_to_linear,
)
from .codebook import (
    AmplitudeSet,
    Codeword,
    PartitionPolicy,
    ReferenceVector,
    best_policy,
    build_amplitude_set,
    cardinality,
    code_rate,
    codeword_from_levels,
    entropy_limit,
    enumerate_codebook,
    random_codeword,
    reference_vector,
    se_upper_bound,
    spectral_efficiency,
    stirling_bounds,
    uniform_policy,
)
from .detect import (
    DETECTOR_KINDS,
    BoundDetector,
    Decision,
    IsotropicMetrics,
    MetricTable,
    WeightMatrix,
    brute_force_ml,
    detect_hsnr_limit,
    detect_quadratic,
    energy_estimates,
    isotropic_metrics,
    isotropic_ml,
    llr_isotropic,
    make_detector,
    ml_metric_table,
    trellis_state_count,
    viterbi_ml,
    weights_abque,
    weights_ed,
    weights_hsnr,
)
from .errors import ConfigError, SizeLimitError
from .sim import (
    ExperimentSpec,
    SerEstimate,
    SweepResult,
    required_snr,
    run_ser,
    run_ser_multi,
    sweep,
    trial_rng,
    write_summary_json,
    write_sweep_csv,
)

__all__ = [name for name in dir() if not name.startswith("_")]
