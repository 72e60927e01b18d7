"""Step-up FDR procedures, network snapshots and evaluation metrics."""

import json
from dataclasses import dataclass

import numpy as np

from .estimator import offdiag_pairs

EULER_GAMMA = 0.5772156649015329


@dataclass(frozen=True)
class ThresholdRule:
    """Step-up threshold sequence for m hypotheses at level alpha.

    BH uses Delta(r) = alpha r / m; BY divides by log m + gamma_Euler
    and stays valid under arbitrary dependence.
    """

    kind: str
    alpha: float
    m: int

    def __post_init__(self):
        if self.kind not in ("BH", "BY"):
            raise ValueError(f"unknown rule kind {self.kind!r}")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha={self.alpha} outside (0, 1)")
        if self.m < 1:
            raise ValueError("m must be positive")

    def thresholds(self):
        """Delta(r) for r = 1..m, non-decreasing, within [0, 1]."""
        r = np.arange(1, self.m + 1)
        delta = self.alpha * r / self.m
        if self.kind == "BY":
            delta = delta / (np.log(self.m) + EULER_GAMMA)
        return delta


def step_up(pvals, rule):
    """Step-up rejection set: indices with P <= Delta(R).

    R = max{r : P_(r) <= Delta(r)} (0 when no r qualifies); tied
    P-values are rejected or kept together by construction.
    """
    pvals = np.asarray(pvals, dtype=np.float64)
    if pvals.shape != (rule.m,):
        raise ValueError(f"expected {rule.m} P-values, got shape {pvals.shape}")
    if np.any(pvals < 0.0) or np.any(pvals > 1.0) or not np.all(np.isfinite(pvals)):
        raise ValueError("P-values must lie in [0, 1]")
    delta = rule.thresholds()
    ordered = np.sort(pvals)
    hits = np.nonzero(ordered <= delta)[0]
    if hits.size == 0:
        return frozenset()
    big_r = int(hits[-1]) + 1
    cut = delta[big_r - 1]
    return frozenset(int(k) for k in np.nonzero(pvals <= cut)[0])


@dataclass(frozen=True)
class NetworkSnapshot:
    """Rejected pair set at one grid time; edges are unordered pairs."""

    t: float
    rejected: frozenset  # 0-based (i, l) with i > l
    p: int
    labels: tuple

    @property
    def R(self):
        return len(self.rejected)

    def has_edge(self, i, l):
        if i == l:
            return False
        if i < l:
            i, l = l, i
        return (i, l) in self.rejected


def build_networks(pfield, rule, labels=None):
    """Apply the step-up rule independently at each window time."""
    if rule.m != len(pfield.pairs):
        raise ValueError(
            f"rule covers {rule.m} hypotheses but the P-value field has {len(pfield.pairs)}"
        )
    p = max(i for i, _ in pfield.pairs) + 1
    if labels is None:
        labels = tuple(f"x{i + 1}" for i in range(p))
    snapshots = []
    for e, t in enumerate(pfield.times):
        rej_idx = step_up(pfield.values[:, e], rule)
        rejected = frozenset(pfield.pairs[k] for k in rej_idx)
        snapshots.append(NetworkSnapshot(t=float(t), rejected=rejected, p=p, labels=tuple(labels)))
    return snapshots


@dataclass(frozen=True)
class EvalReport:
    """FDP/FNP trajectories over an evaluation interval with summaries."""

    times: np.ndarray
    fdp: np.ndarray
    fnp: np.ndarray

    @property
    def max_fdp(self):
        return float(self.fdp.max())

    @property
    def avg_fdp(self):
        return float(self.fdp.mean())

    @property
    def max_fnp(self):
        return float(self.fnp.max())

    @property
    def avg_fnp(self):
        return float(self.fnp.mean())

    def summary(self):
        return (self.max_fdp, self.avg_fdp, self.max_fnp, self.avg_fnp)


def _null_lookup(truth):
    if callable(truth):
        return truth
    if hasattr(truth, "null_pairs"):
        return truth.null_pairs
    fixed = frozenset((max(i, l), min(i, l)) for i, l in truth)
    return lambda t: fixed


def evaluate(snapshots, truth, interval):
    """FDP and FNP at every snapshot time strictly inside the interval.

    `truth` gives the null pair set at each time: a constant collection
    of pairs, a callable t -> pairs, or an object with null_pairs(t).
    FDP uses the max{R, 1} denominator; FNP counts undetected non-nulls
    over max{#non-nulls, 1}.
    """
    lo, hi = interval
    lookup = _null_lookup(truth)
    times, fdps, fnps = [], [], []
    for snap in snapshots:
        if not (lo < snap.t < hi):
            continue
        nulls = lookup(snap.t)
        if nulls is None:
            raise ValueError(f"truth missing at t={snap.t}")
        nulls = frozenset((max(i, l), min(i, l)) for i, l in nulls)
        universe = frozenset(offdiag_pairs(snap.p))
        if not nulls <= universe:
            raise ValueError("null set contains pairs outside the hypothesis set")
        nonnulls = universe - nulls
        false_hits = len(nulls & snap.rejected)
        fdps.append(false_hits / max(snap.R, 1))
        fnps.append(len(nonnulls - snap.rejected) / max(len(nonnulls), 1))
        times.append(snap.t)
    if not times:
        raise ValueError(f"no snapshots inside interval ({lo}, {hi})")
    return EvalReport(times=np.array(times), fdp=np.array(fdps), fnp=np.array(fnps))


def connection_proportion(snapshot, groups):
    """Per-group connection proportions r_i = |V_i|^-1 |V|^-1 sum of edges.

    `groups` must partition the node set; the inner sum ranges over all
    nodes, consistent with the |V|^-1 normalizer.
    """
    p = snapshot.p
    seen = [v for grp in groups for v in grp]
    if sorted(seen) != list(range(p)):
        raise ValueError("groups must partition the node set")
    out = []
    for grp in groups:
        total = sum(1 for v1 in grp for v2 in range(p) if snapshot.has_edge(v1, v2))
        out.append(total / (len(grp) * p))
    return out


# ---------------------------------------------------------------------------
# output writers


def networks_to_json(snapshots, pfield, rule, path):
    """One JSON document per run; edge indices are 1-based."""
    doc = {
        "n": pfield.n,
        "p": snapshots[0].p if snapshots else 0,
        "alpha": rule.alpha,
        "rule": rule.kind,
        "labels": list(snapshots[0].labels) if snapshots else [],
        "times": [float(t) for t in pfield.times],
        "snapshots": [],
    }
    for e, snap in enumerate(snapshots):
        edges = sorted([i + 1, l + 1] for i, l in snap.rejected)
        rej_p = [
            pfield.values[pfield.pairs.index(pair), e] for pair in snap.rejected
        ]
        doc["snapshots"].append(
            {
                "t": snap.t,
                "edges": edges,
                "pvalues_rejected_max": max(rej_p) if rej_p else None,
            }
        )
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def evaluation_to_csv(report, path):
    """Rows of t, FDP, FNP plus a max/avg summary row."""
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _csv.writer(fh)
        w.writerow(["t", "FDP", "FNP"])
        for t, a, b in zip(report.times, report.fdp, report.fnp):
            w.writerow([f"{t:.17g}", f"{a:.17g}", f"{b:.17g}"])
        w.writerow(["max", f"{report.max_fdp:.17g}", f"{report.max_fnp:.17g}"])
        w.writerow(["avg", f"{report.avg_fdp:.17g}", f"{report.avg_fnp:.17g}"])
