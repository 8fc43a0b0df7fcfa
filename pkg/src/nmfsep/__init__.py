"""NMF-family audio source separation toolkit and benchmark harness."""

from .stft import (
    StftPlan,
    Spectrogram,
    ConsistencyKernel,
    stft,
    istft,
    consistency_project,
    inconsistency,
    bin_weights,
    spectral_energy,
    consistency_kernel,
    apply_consistency_kernel,
)
from .nmf import DivergenceKind, FactorPair, divergence, mur_step, fit_nmf
from .phase import (
    SourceEstimateSet,
    wiener_separate,
    init_from_wiener,
    griffin_lim,
    kernel_griffin_lim,
    magnitude_mismatch,
)
from .complex_nmf import (
    ComplexNmfModel,
    complex_nmf_objective,
    complex_nmf_step,
    fit_complex_nmf,
    refit_phases,
    complex_nmf_separate,
)
from .ar_nmf import (
    ArNmfModel,
    BandPosterior,
    kalman_smooth_band,
    em_step,
    fit_ar_nmf,
    ar_nmf_separate,
    stack_models,
)
from .bench import (
    METHOD_NAMES,
    ProtocolConfig,
    RunResult,
    load_config,
    run_case,
    run_benchmark,
    separate_mixture,
    aggregate_stats,
    write_result_files,
    init_study,
)

__version__ = "0.1.0"
