"""Recursive and batch deconvolution estimators of a distribution function
observed through additive Laplace noise, with plug-in bandwidth selection."""

__version__ = "0.1.0"

from .estimators import (
    EvaluationGrid,
    RecursiveCdfState,
    monotone_clip,
    nadaraya_estimate,
    recursive_estimate,
    recursive_evaluate,
    recursive_init,
    recursive_update,
    zero_bandwidth_estimate,
)
from .kernels import (
    DeconvKernelParams,
    deconv_cdf_kernel,
    deconv_kernel,
    deconv_kernel_deriv,
    fourier_inversion_oracle,
    psi_closed_form,
    psi_functional,
)
from .plugin import (
    BandwidthPlan,
    InvalidPlanError,
    PluginFunctionals,
    estimate_functionals,
    optimal_bandwidth_batch,
    optimal_bandwidth_recursive,
)
from .schedules import (
    BandwidthSchedule,
    DegenerateSampleError,
    PilotBandwidthSpec,
    StepsizeSchedule,
)
from .simlab import ScenarioConfig, TrueDistribution, run_scenario
