"""Command-line front end: analyze, simulate, experiment, baseline, tune.

Configuration comes from an optional flat ``key = value`` file plus
command-line flags; flags win. Every run writes a manifest beside its
outputs so results are reproducible from (config, seed). Exit codes:
0 success, 2 usage or configuration error, 1 runtime failure.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .estimator import dump_estimates_csv
from .bootstrap import dump_ensemble_csv
from .inference import ThresholdRule, build_networks, networks_to_json
from .panel import load_csv, write_csv
from .pipeline import PipelineOptions, analyze_panel
from .simlab import (
    SimSpec,
    experiment_to_csv,
    run_experiment_batch,
    simulate_case,
    trajectory_to_csv,
)
from .tuning import tuning_report

EMIT_CHOICES = ("networks", "estimates", "trajectories", "svg", "ensemble")

CONFIG_KEYS = {
    "input": str, "case": int, "n": int, "alpha": float, "rule": str, "B": int,
    "seed": int, "h": int, "bandwidth": float, "w": int, "eta": float, "m": int,
    "lags": int, "threshold": float, "reps": int, "out": str, "workers": int,
    "emit": str, "window": int, "kernel": str,
}


class UsageError(Exception):
    """Configuration or argument problem; maps to exit code 2."""


def read_config_file(path):
    """Parse a flat key = value config file; '#' starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in CONFIG_KEYS:
                raise UsageError(f"{path}:{lineno}: unknown configuration key {key!r}")
            try:
                values[key] = CONFIG_KEYS[key](val)
            except ValueError:
                raise UsageError(f"{path}:{lineno}: cannot parse value for {key!r}: {val!r}") from None
    return values


def _merge_settings(args):
    """Config file values overridden by explicit command-line flags."""
    settings = {}
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    for key in CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    return settings


def _validate_common(s):
    alpha = s.get("alpha", 0.1)
    if not (0.0 < alpha < 1.0):
        raise UsageError(f"alpha={alpha} outside (0, 1)")
    rule = s.get("rule", "bh").lower()
    if rule not in ("bh", "by"):
        raise UsageError(f"rule must be bh or by, got {rule!r}")
    if s.get("B", 1000) < 100:
        raise UsageError(f"B={s.get('B')} below the minimum 100")
    if ("input" in s) == ("case" in s):
        raise UsageError("exactly one of --input and --case must be given")
    kernel = s.get("kernel", "epanechnikov")
    if kernel not in ("epanechnikov", "quartic"):
        raise UsageError(f"kernel must be epanechnikov or quartic, got {kernel!r}")
    return alpha, rule.upper()


def _pipeline_options(s):
    return PipelineOptions(
        B=s.get("B", 1000),
        h=s.get("h"),
        bandwidth=s.get("bandwidth"),
        w=s.get("w"),
        eta=s.get("eta"),
        m=s.get("m"),
        lags=s.get("lags", 0),
        kernel=s.get("kernel", "epanechnikov"),
    )


def _emit_set(s):
    raw = s.get("emit", "")
    out = set()
    for token in raw.replace(",", " ").split():
        if token not in EMIT_CHOICES:
            raise UsageError(f"unknown emit target {token!r}; choose from {EMIT_CHOICES}")
        out.add(token)
    return out


def _outdir(s):
    out = s.get("out", ".")
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(outdir, command, settings):
    manifest = {
        "command": command,
        "settings": {k: settings[k] for k in sorted(settings)},
        "seed": settings.get("seed", 0),
        "tvcorrnet_version": __version__,
        "numpy_version": np.__version__,
        "python_version": sys.version.split()[0],
    }
    with open(os.path.join(outdir, "run_manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")


def _load_or_simulate(s):
    if "input" in s:
        panel = load_csv(s["input"], has_header=True)
        truth = None
    else:
        spec = SimSpec(case=s["case"], n=s.get("n", 600), seed=s.get("seed", 0))
        panel, truth = simulate_case(spec)
    return panel, truth


def _emit_svg(result_trajectory, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 3.5))
    t = result_trajectory[:, 0]
    ax.plot(t, result_trajectory[:, 1], label="mean FDP")
    ax.plot(t, result_trajectory[:, 2], label="mean FNP")
    ax.set_xlabel("t")
    ax.set_ylabel("proportion")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _edge_count_svg(snapshots, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot([s.t for s in snapshots], [s.R for s in snapshots])
    ax.set_xlabel("t")
    ax.set_ylabel("edges")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_analyze(args):
    s = _merge_settings(args)
    alpha, rule_kind = _validate_common(s)
    emit = _emit_set(s)
    outdir = _outdir(s)
    panel, _ = _load_or_simulate(s)
    seed = s.get("seed", 0)
    result = analyze_panel(panel, _pipeline_options(s), seed=seed)
    rule = ThresholdRule(rule_kind, alpha, len(result.pfield.pairs))
    snapshots = build_networks(result.pfield, rule, labels=result.panel.labels)

    networks_to_json(snapshots, result.pfield, rule, os.path.join(outdir, "networks.json"))
    _dump_pvalues_csv(result.pfield, os.path.join(outdir, "pvalues.csv"))
    with open(os.path.join(outdir, "tuning.txt"), "w", encoding="utf-8") as fh:
        fh.write(tuning_report(result.selected))
    if "estimates" in emit:
        dump_estimates_csv(result.est, os.path.join(outdir, "estimates.csv"))
    if "ensemble" in emit:
        dump_ensemble_csv(result.ensemble, os.path.join(outdir, "ensemble.csv"))
    if "svg" in emit:
        _edge_count_svg(snapshots, os.path.join(outdir, "networks.svg"))
    _write_manifest(outdir, "analyze", s)
    return 0


def _dump_pvalues_csv(pfield, path):
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _csv.writer(fh)
        w.writerow(["t", "i", "l", "pvalue"])
        for e, t in enumerate(pfield.times):
            for r, (i, l) in enumerate(pfield.pairs):
                w.writerow([f"{t:.17g}", i + 1, l + 1, f"{pfield.values[r, e]:.17g}"])


def cmd_simulate(args):
    s = _merge_settings(args)
    if "case" not in s:
        raise UsageError("simulate requires --case")
    outdir = _outdir(s)
    spec = SimSpec(case=s["case"], n=s.get("n", 600), seed=s.get("seed", 0))
    panel, truth = simulate_case(spec)
    write_csv(panel, os.path.join(outdir, "panel.csv"))
    with open(os.path.join(outdir, "truth.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "case": spec.case,
                "n": spec.n,
                "null_pairs": sorted([i + 1, l + 1] for i, l in truth.null_set),
                "m": truth.m,
            },
            fh,
            indent=1,
        )
        fh.write("\n")
    _write_manifest(outdir, "simulate", s)
    return 0


def _run_methods(args, methods, command):
    s = _merge_settings(args)
    alpha, _ = _validate_common(s) if command != "baseline" else (s.get("alpha", 0.1), "BH")
    if "case" not in s:
        raise UsageError(f"{command} requires --case")
    emit = _emit_set(s)
    outdir = _outdir(s)
    spec = SimSpec(
        case=s["case"], n=s.get("n", 600), seed=s.get("seed", 0), reps=s.get("reps", 100)
    )
    results, _ = run_experiment_batch(
        spec,
        methods,
        alpha,
        reps=spec.reps,
        seed=s.get("seed", 0),
        options=_pipeline_options(s),
        workers=s.get("workers") or os.cpu_count() or 1,
        mw_window=s.get("window"),
    )
    for label, result in results.items():
        stem = label.replace(":", "_")
        experiment_to_csv(result, os.path.join(outdir, f"experiment_{stem}.csv"))
        if "trajectories" in emit or command == "experiment":
            trajectory_to_csv(result, os.path.join(outdir, f"trajectory_{stem}.csv"))
        if "svg" in emit:
            _emit_svg(result.trajectory, os.path.join(outdir, f"trajectory_{stem}.svg"))
    _write_manifest(outdir, command, s)
    for label, result in results.items():
        agg = result.aggregate
        print(
            f"{label}: maxFDP {agg[0]:.4f} avgFDP {agg[1]:.4f} "
            f"maxFNP {agg[2]:.4f} avgFNP {agg[3]:.4f}"
        )
    return 0


def cmd_experiment(args):
    s = _merge_settings(args)
    rule = s.get("rule", "bh").lower()
    return _run_methods(args, [rule], "experiment")


def cmd_baseline(args):
    s = _merge_settings(args)
    if "threshold" not in s:
        raise UsageError("baseline requires --threshold")
    thr = s["threshold"]
    if not (0.0 < thr < 1.0):
        raise UsageError(f"threshold={thr} outside (0, 1)")
    return _run_methods(args, [("mw", thr)], "baseline")


def cmd_tune(args):
    s = _merge_settings(args)
    _validate_common(s)
    outdir = _outdir(s)
    panel, _ = _load_or_simulate(s)
    result = analyze_panel(panel, _pipeline_options(s), seed=s.get("seed", 0))
    tables = None
    if getattr(args, "verbose", False):
        import numpy as _np

        from .tuning import build_state, default_tuning, mv_select

        from .panel import difference
        from .pipeline import default_kernel

        diffs = difference(result.panel, result.selected.h)
        state = build_state(diffs, result.selected.bands, default_kernel(s.get("kernel", "epanechnikov")))
        cfg = default_tuning(result.panel.n, h=result.selected.h)
        _, _, s2 = mv_select(state, cfg, return_table=True)
        tables = {
            "per-pair GCV bandwidths": _np.array_str(result.selected.gcv_bandwidths, precision=4),
            "MV variance table (rows w, cols eta)": _np.array_str(s2, precision=5),
        }
    text = tuning_report(result.selected, os.path.join(outdir, "tuning.txt"), verbose_tables=tables)
    _write_manifest(outdir, "tune", s)
    print(text, end="")
    return 0


COMMANDS = {
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "experiment": cmd_experiment,
    "baseline": cmd_baseline,
    "tune": cmd_tune,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tvcorrnet",
        description="Time-varying correlation networks with FDR-controlled edges",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--input", help="CSV panel to analyze")
        p.add_argument("--case", type=int, choices=(1, 2), help="simulation case")
        p.add_argument("--n", type=int, help="simulated sample size")
        p.add_argument("--alpha", type=float, help="FDR level (default 0.1)")
        p.add_argument("--rule", choices=("bh", "by"), help="step-up rule (default bh)")
        p.add_argument("--B", type=int, help="bootstrap replicates (default 1000)")
        p.add_argument("--seed", type=int, help="master seed (default 0)")
        p.add_argument("--h", type=int, help="difference lag override")
        p.add_argument("--bandwidth", type=float, help="common bandwidth override")
        p.add_argument("--w", type=int, help="bootstrap block window override")
        p.add_argument("--eta", type=float, help="long-run variance bandwidth override")
        p.add_argument("--m", type=int, help="long-run variance block length override")
        p.add_argument("--lags", type=int, help="stack K extra lags before analysis")
        p.add_argument("--threshold", type=float, help="moving-window baseline threshold")
        p.add_argument("--reps", type=int, help="experiment replications")
        p.add_argument("--out", help="output directory (default .)")
        p.add_argument("--workers", type=int, help="worker processes (default: all cores)")
        p.add_argument("--emit", help="extra outputs: networks,estimates,trajectories,svg,ensemble")
        p.add_argument("--window", type=int, help="moving-window half width (baseline)")
        p.add_argument("--kernel", choices=("epanechnikov", "quartic"), help="smoothing kernel")
        p.add_argument("--verbose", action="store_true",
                       help="include full GCV/MV tables in the tuning report")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
