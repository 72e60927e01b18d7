"""Synthetic experiments: data generators, baseline, and Monte Carlo drivers.

Case 1 (p = 6) and Case 2 (p = 9) follow a time-varying AR(1) recursion
with autoregressive level f0(t) = 0.25 - 0.1 (t - 1/2)^2, innovations
mixed within blocks of three coordinates, and piecewise-linear means
with two jumps per coordinate. Pairs inside a mixing block are the
non-null hypotheses.
"""

from concurrent import futures
from dataclasses import dataclass

import numpy as np

from . import rng
from .inference import ThresholdRule, NetworkSnapshot, build_networks, evaluate
from .panel import TimeSeriesPanel
from .pipeline import PipelineOptions, analyze_panel

CASE_DIMS = {1: 6, 2: 9}
MEAN_BREAKS = ((0.25, 0.55), (0.40, 0.70), (0.55, 0.85))
DEFAULT_EVAL_INTERVAL = (1.0 / 3.0, 2.0 / 3.0)


@dataclass(frozen=True)
class SimSpec:
    """Specification of one synthetic scenario."""

    case: int
    n: int
    seed: int
    burn_in: int = 200
    reps: int = 100

    def __post_init__(self):
        if self.case not in CASE_DIMS:
            raise ValueError(f"unknown simulation case {self.case}")
        if self.n < 300:
            raise ValueError(f"n={self.n} below the minimum 300")
        if self.burn_in < 100:
            raise ValueError(f"burn_in={self.burn_in} below the minimum 100")
        if self.reps < 1:
            raise ValueError("reps must be positive")

    @property
    def p(self):
        return CASE_DIMS[self.case]


@dataclass(frozen=True)
class GroundTruth:
    """Null/non-null bookkeeping; constant in t for Cases 1-2."""

    p: int
    null_set: frozenset

    @property
    def m(self):
        return self.p * (self.p - 1) // 2

    @property
    def nonnull_set(self):
        from .estimator import offdiag_pairs

        return frozenset(offdiag_pairs(self.p)) - self.null_set

    def null_pairs(self, t=None):
        return self.null_set

    def is_null(self, i, l):
        return (max(i, l), min(i, l)) in self.null_set

    def target_fdr(self, alpha):
        return alpha * len(self.null_set) / self.m


def f0(t):
    return 0.25 - 0.1 * (t - 0.5) ** 2


def mixing_matrix(p):
    """M = (4/5) I + (1/5) blockdiag(J3, ...): within-block innovation sharing."""
    m = 0.8 * np.eye(p)
    for start in range(0, p, 3):
        m[start : start + 3, start : start + 3] += 0.2
    return m


def mean_function(coord, t):
    """Piecewise-linear mean with jumps at the coordinate's breakpoints."""
    a1, a2 = MEAN_BREAKS[coord % 3]
    t = np.asarray(t, dtype=np.float64)
    out = np.where(
        t < a1, 0.3 + 0.4 * t, np.where(t < a2, 0.7 - 0.4 * t, 0.2 + 0.4 * t)
    )
    return out if out.ndim else float(out)


def ground_truth(case):
    p = CASE_DIMS[case]
    nulls = set()
    for i in range(p):
        for l in range(i):
            if i // 3 != l // 3:
                nulls.add((i, l))
    return GroundTruth(p=p, null_set=frozenset(nulls))


def simulate_case(spec, noise_scale=1.0, freeze_time=None, include_means=True):
    """Generate one panel plus its ground truth.

    Test hooks: `noise_scale` rescales the error process (0 leaves the
    deterministic trend), `freeze_time` pins the AR level at a fixed
    rescaled time, `include_means=False` drops the trend component.
    """
    p, n = spec.p, spec.n
    gen = rng.generator(spec.seed, rng.SIM_STREAM)
    eta = gen.standard_normal((spec.burn_in + n, p))
    mixed = np.einsum("tk,pk->tp", eta, mixing_matrix(p), optimize=False)

    t_grid = np.arange(1, n + 1) / n
    t_start = t_grid[0] if freeze_time is None else freeze_time
    coef_burn = f0(t_start)
    coef_main = f0(t_grid if freeze_time is None else np.full(n, freeze_time))

    state = np.zeros(p)
    for k in range(spec.burn_in):
        state = coef_burn * state + mixed[k]
    eps = np.empty((n, p))
    for j in range(n):
        state = coef_main[j] * state + mixed[spec.burn_in + j]
        eps[j] = state

    values = noise_scale * eps
    if include_means:
        for c in range(p):
            values[:, c] += mean_function(c, t_grid)
    labels = [f"x{i + 1}" for i in range(p)]
    return TimeSeriesPanel(values, labels), ground_truth(spec.case)


def stationary_block_correlation(case, tol=1e-14, max_iter=10000):
    """Within-block lag-0 correlation implied by the recursion at frozen t=1/2.

    Brute-force covariance iteration Sigma <- f^2 Sigma + M M' run to
    convergence; serves as the oracle for the generator sanity check.
    """
    p = CASE_DIMS[case]
    m = mixing_matrix(p)
    mmt = m @ m.T
    f2 = f0(0.5) ** 2
    sigma = np.zeros((p, p))
    for _ in range(max_iter):
        nxt = f2 * sigma + mmt
        if np.max(np.abs(nxt - sigma)) < tol:
            sigma = nxt
            break
        sigma = nxt
    d = np.sqrt(np.diag(sigma))
    return sigma[0, 1] / (d[0] * d[1])


# ---------------------------------------------------------------------------
# moving-window baseline


def default_mw_window(n):
    return max(5, round(n / 10))


def moving_window_baseline(panel, w, threshold):
    """Threshold the rolling sample correlations of the raw observations.

    At each grid point with a full window of w points on both sides,
    connects (i, l) when |sample correlation over rows j-w..j+w| exceeds
    the threshold.
    """
    if w < 5:
        raise ValueError(f"window w={w} below the minimum 5")
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold {threshold} outside (0, 1)")
    n, p = panel.n, panel.p
    values = panel.values
    snapshots = []
    for j in range(w + 1, n - w + 1):  # one-based index with full window
        block = values[j - 1 - w : j + w, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.corrcoef(block, rowvar=False)
        rejected = set()
        for i in range(p):
            for l in range(i):
                c = corr[i, l]
                if np.isfinite(c) and abs(c) > threshold:
                    rejected.add((i, l))
        snapshots.append(
            NetworkSnapshot(t=j / n, rejected=frozenset(rejected), p=p, labels=panel.labels)
        )
    return snapshots


# ---------------------------------------------------------------------------
# experiment drivers


@dataclass(frozen=True)
class ExperimentResult:
    """Per-replication FDP/FNP summaries plus their aggregate means."""

    method: str
    per_rep: np.ndarray        # (reps, 4): max FDP, avg FDP, max FNP, avg FNP
    trajectory: np.ndarray     # (ngrid, 3): t, mean FDP, mean FNP

    @property
    def aggregate(self):
        return tuple(self.per_rep.mean(axis=0))

    @property
    def max_fdp(self):
        return self.aggregate[0]

    @property
    def avg_fdp(self):
        return self.aggregate[1]

    @property
    def max_fnp(self):
        return self.aggregate[2]

    @property
    def avg_fnp(self):
        return self.aggregate[3]


def parse_method(method):
    """Normalize 'bh' | 'by' | 'mw:<threshold>' | tuple to (kind, param)."""
    if isinstance(method, tuple):
        kind, param = method
        return kind.lower(), param
    method = method.lower()
    if method in ("bh", "by"):
        return method, None
    if method.startswith("mw"):
        _, _, thr = method.partition(":")
        return "mw", float(thr)
    raise ValueError(f"unknown method {method!r}")


def _rep_worker(task):
    (spec, rep, master_seed, methods, alpha, options, mw_window, collect_pairs,
     interval, pvalue_override) = task
    sim_seed, boot_seed = rng.derive_seeds(master_seed, rep)
    panel, truth = simulate_case(
        SimSpec(spec.case, spec.n, sim_seed, burn_in=spec.burn_in, reps=1)
    )
    needs_pipeline = any(kind in ("bh", "by") for kind, _ in methods) or collect_pairs
    pfield = None
    if needs_pipeline:
        result = analyze_panel(panel, options, boot_seed)
        pfield = result.pfield
        if pvalue_override is not None:
            vals = np.full_like(pfield.values, float(pvalue_override))
            pfield = type(pfield)(
                n=pfield.n, indices=pfield.indices, pairs=pfield.pairs,
                values=vals, B=pfield.B,
            )
    out = {"rep": rep, "methods": {}, "pvals": {}}
    for kind, param in methods:
        label = kind if param is None else f"{kind}:{param:g}"
        if kind in ("bh", "by"):
            rule = ThresholdRule(kind.upper(), alpha, len(pfield.pairs))
            snapshots = build_networks(pfield, rule, labels=panel.labels)
        else:
            w = mw_window if mw_window is not None else default_mw_window(spec.n)
            snapshots = moving_window_baseline(panel, w, param)
        report = evaluate(snapshots, truth, interval)
        idx = np.round(np.asarray(report.times) * spec.n).astype(int)
        out["methods"][label] = (
            report.summary(),
            idx,
            report.fdp,
            report.fnp,
        )
    if collect_pairs and pfield is not None:
        lo, hi = interval
        mask = (pfield.times > lo) & (pfield.times < hi)
        for pair in collect_pairs:
            out["pvals"][tuple(pair)] = (
                pfield.indices[mask].copy(),
                pfield.for_pair(*pair)[mask].copy(),
            )
    return out


def run_experiment_batch(
    spec,
    methods,
    alpha,
    reps,
    seed,
    options=None,
    workers=1,
    mw_window=None,
    collect_pairs=None,
    interval=DEFAULT_EVAL_INTERVAL,
    _pvalue_override=None,
):
    """Run `reps` replications once and evaluate every method on them.

    Methods sharing a replication see identical panels and bootstrap
    draws, so e.g. BH and BY comparisons are seed-matched. Results are
    bitwise independent of `workers`.
    """
    methods = [parse_method(m) for m in methods]
    options = options or PipelineOptions()
    tasks = [
        (spec, rep, seed, methods, alpha, options, mw_window, collect_pairs,
         interval, _pvalue_override)
        for rep in range(reps)
    ]
    if workers and workers > 1:
        with futures.ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_rep_worker, tasks, chunksize=1))
    else:
        outs = [_rep_worker(t) for t in tasks]
    outs.sort(key=lambda o: o["rep"])

    results = {}
    for kind, param in methods:
        label = kind if param is None else f"{kind}:{param:g}"
        per_rep = np.array([o["methods"][label][0] for o in outs])
        traj = {}
        for o in outs:
            _, idx, fdp, fnp = o["methods"][label]
            for k, a, b in zip(idx, fdp, fnp):
                acc = traj.setdefault(int(k), [0.0, 0.0, 0])
                acc[0] += a
                acc[1] += b
                acc[2] += 1
        rows = [
            (k / spec.n, v[0] / v[2], v[1] / v[2]) for k, v in sorted(traj.items())
        ]
        results[label] = ExperimentResult(
            method=label, per_rep=per_rep, trajectory=np.array(rows)
        )
    collected = None
    if collect_pairs:
        collected = {
            tuple(pair): [o["pvals"][tuple(pair)] for o in outs] for pair in collect_pairs
        }
    return results, collected


def run_experiment(spec, method, alpha, reps, seed, options=None, workers=1, mw_window=None):
    """Single-method experiment; see run_experiment_batch."""
    label = "{}:{:g}".format(*parse_method(method)) if parse_method(method)[1] is not None \
        else parse_method(method)[0]
    results, _ = run_experiment_batch(
        spec, [method], alpha, reps, seed, options=options, workers=workers, mw_window=mw_window
    )
    return results[label]


PERTURBATION_KINDS = ("bandwidth", "lag")


def sensitivity_run(spec, perturbation, method="bh", alpha=0.1, reps=50, seed=0,
                    workers=1, options=None):
    """Re-run the experiment with a post-selection parameter perturbation.

    `perturbation` is (kind, fraction) with kind in {bandwidth, lag};
    e.g. ("bandwidth", +0.1) scales every selected bandwidth by 1.1 and
    ("lag", -0.1) uses h = ceil(1.8 log n). A zero fraction reproduces
    run_experiment exactly.
    """
    kind, frac = perturbation
    if kind not in PERTURBATION_KINDS:
        raise ValueError(f"unknown perturbation kind {kind!r}")
    options = options or PipelineOptions()
    if kind == "bandwidth":
        options = options.with_updates(bandwidth_scale=1.0 + frac)
    else:
        options = options.with_updates(h_coef=2.0 * (1.0 + frac))
    return run_experiment(spec, method, alpha, reps, seed, options=options, workers=workers)


# ---------------------------------------------------------------------------
# output writers


def experiment_to_csv(result, path):
    """Rows (rep, maxFDP, avgFDP, maxFNP, avgFNP) plus the aggregate."""
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _csv.writer(fh)
        w.writerow(["rep", "maxFDP", "avgFDP", "maxFNP", "avgFNP"])
        for r, row in enumerate(result.per_rep):
            w.writerow([r] + [f"{x:.17g}" for x in row])
        w.writerow(["aggregate"] + [f"{x:.17g}" for x in result.aggregate])


def trajectory_to_csv(result, path):
    """Rows (t, meanFDP, meanFNP) for trajectory plots."""
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _csv.writer(fh)
        w.writerow(["t", "meanFDP", "meanFNP"])
        for t, a, b in result.trajectory:
            w.writerow([f"{t:.17g}", f"{a:.17g}", f"{b:.17g}"])
