"""Time-varying correlation networks with FDR-controlled edge sets.

Estimates time-varying correlation functions from non-stationary
multivariate time series with mean jumps via difference-based kernel
local-linear regression, calibrates time-varying P-values with a
Gaussian multiplier bootstrap, and builds per-time networks under
Benjamini-Hochberg or Benjamini-Yekutieli FDR control.
"""

__version__ = "0.1.0"

from .bootstrap import (
    BlockSums,
    BootstrapEnsemble,
    PValueField,
    block_sums,
    draw_ensemble,
    pvalues,
    test_statistics,
)
from .estimator import (
    BandwidthSet,
    CorrFieldEstimate,
    Kernel,
    epanechnikov,
    estimate_corr_field,
    fourth_order_epanechnikov,
    local_linear_fit,
    standardized_innovations,
)
from .inference import (
    EvalReport,
    NetworkSnapshot,
    ThresholdRule,
    build_networks,
    connection_proportion,
    evaluate,
    step_up,
)
from .panel import DifferencedPanel, TimeSeriesPanel, difference, load_csv, stack_lags, write_csv
from .pipeline import AnalysisResult, PipelineOptions, analyze_panel
from .simlab import (
    GroundTruth,
    SimSpec,
    moving_window_baseline,
    run_experiment,
    run_experiment_batch,
    sensitivity_run,
    simulate_case,
)
from .tuning import TuningConfig, default_tuning, gcv_bandwidth, mv_select, refine_m

__all__ = [
    "AnalysisResult",
    "BandwidthSet",
    "BlockSums",
    "BootstrapEnsemble",
    "CorrFieldEstimate",
    "DifferencedPanel",
    "EvalReport",
    "GroundTruth",
    "Kernel",
    "NetworkSnapshot",
    "PValueField",
    "PipelineOptions",
    "SimSpec",
    "ThresholdRule",
    "TimeSeriesPanel",
    "TuningConfig",
    "analyze_panel",
    "block_sums",
    "build_networks",
    "connection_proportion",
    "default_tuning",
    "difference",
    "draw_ensemble",
    "epanechnikov",
    "estimate_corr_field",
    "evaluate",
    "fourth_order_epanechnikov",
    "gcv_bandwidth",
    "load_csv",
    "local_linear_fit",
    "moving_window_baseline",
    "mv_select",
    "pvalues",
    "refine_m",
    "run_experiment",
    "run_experiment_batch",
    "sensitivity_run",
    "simulate_case",
    "stack_lags",
    "standardized_innovations",
    "step_up",
    "test_statistics",
    "write_csv",
]
