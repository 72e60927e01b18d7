"""End-to-end orchestration: tune, estimate, bootstrap, P-values.

Shared by the CLI and the simulation experiment drivers. A run is fully
determined by (panel, options, seed); every random draw flows through
counter-based streams derived from the seed.
"""

import math
from dataclasses import dataclass, field, replace

from .bootstrap import block_sums, draw_ensemble, pvalues, test_statistics
from .estimator import KERNELS, estimate_corr_field, standardized_innovations
from .panel import difference, stack_lags
from .tuning import default_lag, default_tuning, select_parameters

_KERNEL_CACHE = {}


def default_kernel(name="epanechnikov"):
    """Shared kernel instances; 'epanechnikov' (default) or 'quartic'."""
    if name not in _KERNEL_CACHE:
        _KERNEL_CACHE[name] = KERNELS[name]()
    return _KERNEL_CACHE[name]


@dataclass(frozen=True)
class PipelineOptions:
    """Tuning overrides and bootstrap settings for one analysis run."""

    B: int = 1000
    h: int = None                 # explicit lag override
    h_coef: float = 2.0           # lag rule ceil(h_coef * log n)
    bandwidth: object = None      # scalar or p x p matrix override
    bandwidth_scale: float = 1.0  # multiplicative perturbation after selection
    w: int = None
    eta: float = None
    m: object = None              # scalar or matrix override
    lags: int = 0                 # stack K extra lags before analysis
    kernel: str = "epanechnikov"  # or "quartic" (fourth-order)

    def with_updates(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class AnalysisResult:
    """Everything produced by one pipeline run."""

    panel: object
    diffs: object
    selected: object
    bands: object
    est: object
    ensemble: object
    t_stat: object
    pfield: object
    options: PipelineOptions
    seed: int


def analyze_panel(panel, options=None, seed=0):
    """Run the full pipeline on a panel and return the analysis bundle."""
    options = options or PipelineOptions()
    if options.lags:
        panel = stack_lags(panel, options.lags)
    n = panel.n
    h = options.h if options.h is not None else default_lag(n, options.h_coef)
    diffs = difference(panel, h)
    kernel = default_kernel(options.kernel)
    cfg = default_tuning(n, h=h)
    selected, state = select_parameters(
        diffs,
        kernel,
        cfg=cfg,
        bandwidth=options.bandwidth,
        w=options.w,
        eta=options.eta,
        m=options.m,
    )
    if options.bandwidth_scale != 1.0:
        bands = selected.bands.scaled(options.bandwidth_scale)
        est = estimate_corr_field(diffs, bands, kernel, (selected.m_pair, selected.eta))
    else:
        bands = selected.bands
        est = estimate_corr_field(
            diffs, bands, kernel, (selected.m_pair, selected.eta), _surfaces=state._surfaces
        )
    g = math.ceil(n * bands.b_max)
    if not (2 <= selected.w < g):
        raise ValueError(f"selected window w={selected.w} infeasible for ceil(n b)={g}")
    xi_bar = standardized_innovations(est, bands, kernel)
    sums = block_sums(xi_bar, selected.w, bands)
    ens = draw_ensemble(sums, bands, options.B, seed)
    t_stat = test_statistics(est, bands)
    pfield = pvalues(t_stat, ens, est)
    return AnalysisResult(
        panel=panel,
        diffs=diffs,
        selected=selected,
        bands=bands,
        est=est,
        ensemble=ens,
        t_stat=t_stat,
        pfield=pfield,
        options=options,
        seed=int(seed),
    )
