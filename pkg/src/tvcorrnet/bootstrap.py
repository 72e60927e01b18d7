"""Multiplier bootstrap for sup-statistics and time-varying P-values.

Implements the block-sum construction, the Gaussian-multiplier
sup-statistics shared across pairs within a replicate, the studentized
test statistics, and the bootstrap P-value field. Multipliers come from
counter-based Philox streams keyed by (seed, replicate), so ensembles
are bitwise reproducible under any parallel schedule.
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided, sliding_window_view

from . import rng
from .estimator import grid_kernel

MIN_REPLICATES = 100


@dataclass(frozen=True)
class BlockSums:
    """Directed block sums S_hat of standardized innovations.

    s_hat[r, j-1, s-w] holds
        sum_{a=s-w+1}^{s} XiBar(a+j, g+j) - sum_{a=s+1}^{s+w} XiBar(a+j, g+j)
    for tested pair r, j in [1, n-2g] and s in [w, 2g-w], with
    g = ceil(n b_max). Entries are exact replays of that formula.
    """

    n: int
    w: int
    g: int
    pairs: tuple
    s_hat: np.ndarray

    @property
    def s_lo(self):
        return self.w

    @property
    def s_hi(self):
        return 2 * self.g - self.w

    def for_pair(self, i, l):
        if i < l:
            i, l = l, i
        return self.s_hat[self.pairs.index((i, l))]


def block_sums(xi_bar, w, bands):
    """Block sums of the standardized innovations for window size w."""
    est = xi_bar.est
    n = est.n
    g = math.ceil(n * bands.b_max)
    w = int(w)
    if not (2 <= w < g):
        raise ValueError(f"window w={w} outside [2, ceil(n b)={g})")
    nj = n - 2 * g
    if nj < 1:
        raise ValueError("no interior points left for block sums")
    ntested = len(est.tested_pairs)
    ncols = 2 * g - 2 * w + 1
    s_hat = np.empty((ntested, nj, ncols))
    a_idx = np.arange(1, 2 * g + 1)
    for r, (i, l) in enumerate(est.tested_pairs):
        kv = bands.c_pair[i, l] * grid_kernel(xi_bar.kernel, a_idx - g, n, bands.b_pair[i, l])
        xi_row = xi_bar.xi_full[r]
        # X[j0, a0] = Xi~ at one-based index (a0+1) + (j0+1), i.e. xi_row[j0 + a0 + 1]
        x = as_strided(
            xi_row[1:], shape=(nj, 2 * g), strides=(xi_row.strides[0], xi_row.strides[0])
        )
        gam = xi_bar.gamma_sqrt[r, 1 : nj + 1]  # Gamma~ at s = g+j, j = 1..n-2g
        v = x * kv[None, :] / gam[:, None]
        acc = sliding_window_view(v, w, axis=1).sum(axis=-1)
        s_hat[r] = acc[:, : ncols] - acc[:, w : w + ncols]
    return BlockSums(n=n, w=w, g=g, pairs=tuple(est.tested_pairs), s_hat=s_hat)


@dataclass(frozen=True)
class BootstrapEnsemble:
    """B sup-statistics per tested pair, reproducible from the seed."""

    B: int
    seed: int
    pairs: tuple
    z_boot: np.ndarray  # (B, ntested), nonnegative

    def for_pair(self, i, l):
        if i < l:
            i, l = l, i
        return self.z_boot[:, self.pairs.index((i, l))]


def draw_ensemble(sums, bands, B, seed, _multipliers=None):
    """Gaussian-multiplier sup-statistics from the block sums.

    For each replicate r, one vector of n standard normals is drawn
    from the Philox stream keyed by (seed, r) and shared by every pair;
    the statistic is max_j |sum_s S_hat(j,s) R_{j+s}| / sqrt(2 w g).
    The s-sum runs over the common range [w, 2g-w]: block sums of a
    pair with a narrower bandwidth vanish outside its kernel support,
    centered at g, and the c_{i,l} factor restores the common scale.

    `_multipliers` is a test hook: a callable mapping replicate index to
    the length-n multiplier vector, replacing the Philox draws.
    """
    del bands
    B = int(B)
    if B < MIN_REPLICATES:
        raise ValueError(f"B={B} below minimum {MIN_REPLICATES}: P-value grid too coarse")
    n, w, g = sums.n, sums.w, sums.g
    nj, ncols = sums.s_hat.shape[1], sums.s_hat.shape[2]
    mult = np.empty((B, n))
    for r in range(B):
        if _multipliers is not None:
            mult[r] = np.asarray(_multipliers(r), dtype=np.float64)
        else:
            mult[r] = rng.normals(seed, r, n)

    denom = math.sqrt(2.0 * w * g)
    # R_view[b, j0, c] = mult[b, j0 + c + w] = R_{j+s} for j=j0+1, s=w+c
    r_view = as_strided(
        mult[:, w:],
        shape=(B, nj, ncols),
        strides=(mult.strides[0], mult.strides[1], mult.strides[1]),
    )
    acc = np.einsum("pjc,bjc->pbj", sums.s_hat, r_view, optimize=False)
    z_boot = (np.abs(acc).max(axis=2) / denom).T.copy()
    return BootstrapEnsemble(B=B, seed=int(seed), pairs=sums.pairs, z_boot=z_boot)


def test_statistics(est, bands):
    """Studentized statistics T = sqrt(n b_il) |rho~| / Gamma~ on the window.

    Rows follow est.tested_pairs, columns the window grid.
    """
    nwin = est.window_indices.size
    t_stat = np.empty((len(est.tested_pairs), nwin))
    for r, (i, l) in enumerate(est.tested_pairs):
        scale = math.sqrt(est.n * bands.b_pair[i, l])
        t_stat[r] = scale * np.abs(est.rho[est.pair_row(i, l)]) / np.sqrt(est.lrv[r])
    return t_stat


@dataclass(frozen=True)
class PValueField:
    """Time-varying P-values on the window grid, granularity 1/B."""

    n: int
    indices: np.ndarray  # one-based window indices
    pairs: tuple         # tested (i, l), i > l
    values: np.ndarray   # (ntested, nwin)
    B: int

    @property
    def times(self):
        return self.indices / self.n

    def for_pair(self, i, l):
        if i < l:
            i, l = l, i
        return self.values[self.pairs.index((i, l))]


def pvalues(t_stat, ens, est):
    """Fraction of bootstrap draws strictly exceeding each statistic."""
    B = ens.B
    vals = np.empty_like(t_stat)
    for r in range(len(ens.pairs)):
        z_sorted = np.sort(ens.z_boot[:, r])
        vals[r] = (B - np.searchsorted(z_sorted, t_stat[r], side="right")) / B
    return PValueField(
        n=est.n, indices=est.window_indices, pairs=ens.pairs, values=vals, B=B
    )


def dump_ensemble_csv(ens, path):
    """Diagnostic dump: pair, replicate, bootstrap statistic."""
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _csv.writer(fh)
        w.writerow(["i", "l", "replicate", "z_boot"])
        for c, (i, l) in enumerate(ens.pairs):
            for r in range(ens.B):
                w.writerow([i + 1, l + 1, r, f"{ens.z_boot[r, c]:.17g}"])
