"""OAMP-based joint activity and data detection for grant-free random access.

A large device population shares a short partial-DFT spreading code pool;
only a few devices transmit per slot. The detectors here recover which
devices were active and what they sent, without channel state or knowledge
of the activity level, by interleaving orthogonal AMP iterations with
expectation-maximisation updates of the sparsity ratio and noise variance.
"""
from .baselines import amp_mmv, gene_aided_oamp, oracle_ls
from .coding import (
    ConvolutionalCode,
    approx_bit_llr,
    average_abs_llr,
    bits_to_symbols,
    default_code,
    exact_bit_llr,
    symbols_to_bits,
)
from .detectors import (
    DetectionResult,
    DetectorConfig,
    DetectorTrace,
    decide_activity,
    detect_asl,
    detect_ssl,
)
from .exceptions import (
    ConfigurationError,
    DegenerateSupportError,
    NumericalFailure,
    SingularEstimateError,
)
from .harness import (
    SweepRow,
    SweepSpec,
    TrialRecord,
    emit_results,
    load_results,
    run_coded_trials,
    run_sweep,
    run_trials,
)
from .kernels import active_backend, set_backend
from .metrics import compute_adep, compute_ber, compute_mse, wilson_interval
from .model import (
    ActivityPattern,
    ChannelModel,
    Constellation,
    Scenario,
    SlotData,
    SpreadingMatrix,
    build_partial_dft,
    derive_rng,
    effective_sensing_matrix,
    generate_slot,
    make_constellation,
    sample_activity,
    scenario_from_config,
)
from .sic import SICConfig, SICResult, sic_detect
from .state_evolution import SEConfig, SETrace, se_run

__version__ = "0.1.0"

__all__ = [
    "ActivityPattern",
    "ChannelModel",
    "Constellation",
    "ConfigurationError",
    "ConvolutionalCode",
    "DegenerateSupportError",
    "DetectionResult",
    "DetectorConfig",
    "DetectorTrace",
    "NumericalFailure",
    "SEConfig",
    "SETrace",
    "SICConfig",
    "SICResult",
    "Scenario",
    "SingularEstimateError",
    "SlotData",
    "SpreadingMatrix",
    "SweepRow",
    "SweepSpec",
    "TrialRecord",
    "active_backend",
    "amp_mmv",
    "approx_bit_llr",
    "average_abs_llr",
    "bits_to_symbols",
    "build_partial_dft",
    "compute_adep",
    "compute_ber",
    "compute_mse",
    "decide_activity",
    "default_code",
    "derive_rng",
    "detect_asl",
    "detect_ssl",
    "effective_sensing_matrix",
    "emit_results",
    "exact_bit_llr",
    "gene_aided_oamp",
    "generate_slot",
    "load_results",
    "make_constellation",
    "oracle_ls",
    "run_coded_trials",
    "run_sweep",
    "run_trials",
    "sample_activity",
    "scenario_from_config",
    "se_run",
    "set_backend",
    "sic_detect",
    "symbols_to_bits",
    "wilson_interval",
    "__version__",
]
