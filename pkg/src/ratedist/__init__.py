"""Rate-distortion toolkit: discrete R(D) by alternating minimization,
Gaussian reverse water-filling and Wyner-Ziv bounds, dithered nested-lattice
simulation, and the Nash/KKT rate-allocation game."""

from .errors import (
    ConvergenceError,
    DomainError,
    InfeasibleError,
    NumericalDegeneracyError,
    RateDistError,
    ValidationError,
)
from .prob import Distribution, JointDistribution, entropy, kl_divergence, mutual_information
from .rd_solver import DistortionMatrix, RDCurve, RDPoint, gibbs_update, solve_rd_point, trace_curve
from .gaussian import (
    GaussianSource,
    JointGaussian,
    WaterfillResult,
    conditional_covariance,
    gaussian_rate,
    rate_from_snr,
    reverse_waterfill,
    snr_db,
    snr_of,
    wyner_ziv_rate,
)
from .lattice import (
    DitheredQuantizer,
    Lattice,
    OneBitQuantizer,
    dithered_decode,
    dithered_encode,
    lloyd_one_bit,
    nearest_point,
    quantization_error,
    sample_dither,
)
from .wz import NestedPair, PipelineReport, WZConfig, bin_index, run_pipeline, wz_decode, wz_encode
from .game import (
    Allocation,
    AllocationGame,
    best_response,
    kkt_verify,
    nash_solve,
    quality,
)

__version__ = "0.1.0"
