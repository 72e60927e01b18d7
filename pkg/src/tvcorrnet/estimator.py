"""Kernel local-linear estimation of time-varying correlation fields.

Estimates, from lag-h differenced panels, the covariance-scale curve
beta(t) (local-linear fit of the product series), the derived
gamma/sigma/rho correlation surfaces, regression residuals, innovation
series, and the long-run variance field that studentizes the test
statistics.

Conventions
-----------
* Grid times are t_j = j/n with one-based index j = 1..n; all kernel
  arguments on the grid are computed from integer index differences,
  ``K(((j - s)/n) / b)``, so shared weights are bitwise identical.
* All surfaces are *evaluated* at grid points of the window
  T_n = [ceil(n b_max), n - ceil(n b_max)]. Off-window grid queries
  (needed by residuals and innovations near the boundary) reuse the
  nearest window point: local-linear fits with a fourth-order kernel
  are ill-posed near the data edge (the weighted normal matrix loses
  definiteness), so boundary values are clamped rather than fitted.
* Estimated correlations are NOT clipped to [-1, 1]; finite-sample
  values of rho may exceed 1 in magnitude and the downstream test
  statistic consumes the raw value.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

COND_LIMIT = 1e12
MIN_LOCAL_POINTS = 5
VARIANCE_FLOOR = 1e-12
KERNEL_TOL = 1e-10
RATIO_FLOOR = 0.2


class EstimationError(RuntimeError):
    """Raised when the estimation pipeline hits an invalid state."""


# ---------------------------------------------------------------------------
# kernels


@dataclass(frozen=True)
class Kernel:
    """Compactly supported symmetric kernel with cached moments.

    `fn` must vanish outside [-1, 1] and integrate to 1; moments are
    computed by quadrature at construction. The fourth-order factory
    additionally certifies a vanishing second moment.
    """

    fn: object
    mass: float = field(init=False)
    second_moment: float = field(init=False)
    roughness: float = field(init=False)

    def __post_init__(self):
        f = self.fn
        mass = quad(f, -1, 1, limit=200)[0]
        second = quad(lambda u: u * u * f(u), -1, 1, limit=200)[0]
        rough = quad(lambda u: f(u) ** 2, -1, 1, limit=200)[0]
        if abs(mass - 1.0) > KERNEL_TOL:
            raise ValueError(f"kernel mass {mass} != 1")
        for u in (1.0001, 1.5, 2.0, -1.0001, -7.3):
            if f(u) != 0.0:
                raise ValueError("kernel must vanish outside [-1, 1]")
        for u in (0.1, 0.25, 0.7, 0.99):
            if not math.isclose(f(u), f(-u), rel_tol=0, abs_tol=1e-12):
                raise ValueError("kernel must be symmetric")
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "second_moment", second)
        object.__setattr__(self, "roughness", rough)

    def evaluate(self, u):
        return self.fn(u)


def _quartic(u):
    u = np.asarray(u, dtype=np.float64)
    u2 = u * u
    v = (15.0 / 32.0) * (3.0 - 10.0 * u2 + 7.0 * u2 * u2)
    out = np.where(np.abs(u) <= 1.0, v, 0.0)
    return out if out.ndim else float(out)


def _parabolic(u):
    u = np.asarray(u, dtype=np.float64)
    v = 0.75 * (1.0 - u * u)
    out = np.where(np.abs(u) <= 1.0, v, 0.0)
    return out if out.ndim else float(out)


def fourth_order_epanechnikov():
    """Kernel K(u) = (15/32)(3 - 10u^2 + 7u^4) on [-1, 1].

    Fourth-order: integrates to 1 with vanishing second moment, so the
    local-linear bias is of higher order. Roughness kappa = 5/4.
    """
    k = Kernel(_quartic)
    if abs(k.second_moment) > KERNEL_TOL:
        raise ValueError(f"kernel second moment {k.second_moment} != 0")
    return k


def epanechnikov():
    """Kernel K(u) = (3/4)(1 - u^2) on [-1, 1]; roughness kappa = 3/5.

    The pipeline default. Its positive weights keep boundary fits
    definite and the estimated correlation fields vary on the kernel
    scale, which at realistic sample sizes calibrates the bootstrap
    noticeably better than the fourth-order kernel.
    """
    return Kernel(_parabolic)


KERNELS = {"epanechnikov": epanechnikov, "quartic": fourth_order_epanechnikov}


def grid_kernel(kernel, idx_diff, n, b):
    """Kernel weights K(((j-s)/n)/b) from integer index differences."""
    return kernel.evaluate((np.asarray(idx_diff, dtype=np.float64) / n) / b)


# ---------------------------------------------------------------------------
# bandwidths


@dataclass(frozen=True)
class BandwidthSet:
    """Symmetric p x p bandwidth matrix with the shared-scale constants.

    b_max is the largest entry (the shared scale b); c_pair holds
    c_{i,l} = sqrt(b_max / b_{i,l}). The ratio bound
    min b_{i,l} / b_max >= 0.2 keeps the shared normalization valid.
    """

    b_pair: np.ndarray
    b_max: float = field(init=False)
    c_pair: np.ndarray = field(init=False)

    def __post_init__(self):
        b = np.ascontiguousarray(self.b_pair, dtype=np.float64)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ValueError("bandwidth matrix must be square")
        if not np.array_equal(b, b.T):
            raise ValueError("bandwidth matrix must be symmetric")
        if np.any(b <= 0.0) or np.any(b >= 0.5):
            raise ValueError("bandwidths must lie in (0, 1/2)")
        bmax = float(b.max())
        if float(b.min()) / bmax < RATIO_FLOOR:
            raise ValueError(
                f"bandwidth ratio {float(b.min()) / bmax:.3f} below floor {RATIO_FLOOR}"
            )
        b.setflags(write=False)
        c = np.sqrt(bmax / b)
        c.setflags(write=False)
        object.__setattr__(self, "b_pair", b)
        object.__setattr__(self, "b_max", bmax)
        object.__setattr__(self, "c_pair", c)

    @classmethod
    def uniform(cls, b, p):
        return cls(np.full((p, p), float(b)))

    @property
    def p(self):
        return self.b_pair.shape[0]

    def scaled(self, factor):
        return BandwidthSet(self.b_pair * factor)


def all_pairs(p):
    """Ordered pairs (i, l), i >= l, 0-based: diagonal plus lower triangle."""
    return [(i, l) for i in range(p) for l in range(i + 1)]


def offdiag_pairs(p):
    """Tested pairs (i, l), i > l, in the canonical (2,1),(3,1),(3,2),... order."""
    return [(i, l) for i in range(p) for l in range(i)]


# ---------------------------------------------------------------------------
# local linear fitting


def local_linear_fit(z, t, b, kernel, times=None):
    """Weighted local-linear fit of z on its time grid at location t.

    Minimizes sum_j {z_j - eta0 - eta1 (t_j - t)}^2 K((t_j - t)/b) and
    returns (eta0, eta1) from the 2x2 weighted normal equations. By
    default the grid is the canonical t_j = j/n with n = len(z).

    Raises ValueError if fewer than 5 grid points fall in (t-b, t+b) or
    the normal matrix has condition number above 1e12.
    """
    z = np.asarray(z, dtype=np.float64)
    if times is None:
        n = z.size
        times = np.arange(1, n + 1) / n
    else:
        times = np.asarray(times, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("z contains non-finite values")
    d = times - t
    if int(np.count_nonzero(np.abs(d) < b)) < MIN_LOCAL_POINTS:
        raise ValueError(f"fewer than {MIN_LOCAL_POINTS} grid points within bandwidth of t={t}")
    w = kernel.evaluate(d / b)
    s0 = float(w.sum())
    s1 = float((w * d).sum())
    s2 = float((w * d * d).sum())
    a = np.array([[s0, s1], [s1, s2]])
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise ValueError(f"singular local-linear normal matrix at t={t} (cond={cond:.3g})")
    rhs = np.array([float((w * z).sum()), float((w * d * z).sum())])
    eta = np.linalg.solve(a, rhs)
    return float(eta[0]), float(eta[1])


def llr_grid(z_cols, data_idx, eval_idx, n, b, kernel, with_hat=False):
    """Vectorized local-linear fits on the integer grid.

    z_cols has shape (ncols, ndata) with observations at one-based indices
    `data_idx`; fits are evaluated at one-based indices `eval_idx`.
    Returns eta0 with shape (ncols, neval); with `with_hat`, also the
    self-weight of each evaluation point (requires eval_idx within
    data_idx so the K(0) weight is the point's own).
    """
    z_cols = np.atleast_2d(np.asarray(z_cols, dtype=np.float64))
    diff = data_idx[None, :] - eval_idx[:, None]
    d = diff / n
    w = kernel.evaluate(d / b)
    counts = (np.abs(d) < b).sum(axis=1)
    if counts.min() < MIN_LOCAL_POINTS:
        j = eval_idx[int(np.argmin(counts))]
        raise ValueError(
            f"fewer than {MIN_LOCAL_POINTS} grid points within bandwidth of t={j / n}"
        )
    s0 = np.einsum("ej->e", w, optimize=False)
    s1 = np.einsum("ej,ej->e", w, d, optimize=False)
    s2 = np.einsum("ej,ej,ej->e", w, d, d, optimize=False)
    det = s0 * s2 - s1 * s1
    # eigenvalues of the symmetric 2x2 normal matrix, for conditioning
    half_tr = 0.5 * (s0 + s2)
    disc = np.sqrt(0.25 * (s0 - s2) ** 2 + s1 * s1)
    lo = np.minimum(np.abs(half_tr - disc), np.abs(half_tr + disc))
    hi = np.maximum(np.abs(half_tr - disc), np.abs(half_tr + disc))
    bad = (lo <= 0.0) | (hi > COND_LIMIT * lo)
    if np.any(bad):
        j = eval_idx[int(np.argmax(bad))]
        raise ValueError(f"singular local-linear normal matrix at t={j / n}")
    t0 = np.einsum("cj,ej->ce", z_cols, w, optimize=False)
    t1 = np.einsum("cj,ej,ej->ce", z_cols, w, d, optimize=False)
    eta0 = (s2 * t0 - s1 * t1) / det
    if not with_hat:
        return eta0
    self_w = kernel.evaluate(np.zeros(1))[0] * s2 / det
    return eta0, self_w


# ---------------------------------------------------------------------------
# correlation field


@dataclass(frozen=True)
class CorrFieldEstimate:
    """Correlation surfaces, innovations and long-run variances on T_n.

    Window arrays (beta, gamma, sigma, rho, lrv) hold one column per
    window grid index j = window_lo..window_hi; full-range arrays
    (resid, xi_hat, xi_tilde) hold one column per differenced index
    j = h+1..n. Row order follows `pairs` / `tested_pairs`.
    """

    n: int
    p: int
    h: int
    labels: tuple
    window_lo: int
    window_hi: int
    pairs: tuple                 # all (i, l) with i >= l, 0-based
    tested_pairs: tuple          # (i, l) with i > l
    beta: np.ndarray             # (npairs, nwin)
    gamma: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    resid: np.ndarray            # (npairs, n - h)
    xi_hat: np.ndarray
    xi_tilde: np.ndarray
    lrv: np.ndarray              # (ntested, nwin), Gamma~^2
    m_pair: np.ndarray
    eta: float

    @property
    def window_indices(self):
        return np.arange(self.window_lo, self.window_hi + 1)

    @property
    def window_times(self):
        return self.window_indices / self.n

    def pair_row(self, i, l):
        if i < l:
            i, l = l, i
        return self.pairs.index((i, l))

    def tested_row(self, i, l):
        if i < l:
            i, l = l, i
        return self.tested_pairs.index((i, l))

    def nearest_window_pos(self, t):
        """Position in the window arrays of the grid point nearest t."""
        j = int(round(t * self.n))
        j = min(max(j, self.window_lo), self.window_hi)
        return j - self.window_lo

    def rho_at(self, i, l, t):
        return float(self.rho[self.pair_row(i, l), self.nearest_window_pos(t)])


SAFE_MARGIN = 0.4


def _fit_surfaces(diffs, bands, kernel):
    """Window fits of beta/gamma/sigma/rho plus full-range residuals and innovations.

    Each pair's curve is fitted on its safe grid, the points further
    than SAFE_MARGIN * b_{i,l} from both data edges (the quartic
    kernel's weighted normal matrix passes through singularity about
    0.2 b inside an edge); grid queries outside it reuse the nearest
    safe point. The evaluation window [ceil(n b_max), n - ceil(n b_max)]
    always lies inside every pair's safe grid.
    """
    n, p, h = diffs.n, diffs.p, diffs.h
    g = math.ceil(n * bands.b_max)
    if 2 * g >= n:
        raise EstimationError(f"window empty: ceil(n b)={g} with n={n}")
    data_idx = diffs.grid_indices()
    eval_idx = np.arange(g, n - g + 1)
    pairs = all_pairs(p)
    y = diffs.diffs
    z = np.empty((len(pairs), n - h))
    for r, (i, l) in enumerate(pairs):
        z[r] = y[:, i] * y[:, l]

    # per-bandwidth safe grids and fits; full-grid curves clamp into them
    by_band = {}
    for r, (i, l) in enumerate(pairs):
        by_band.setdefault(float(bands.b_pair[i, l]), []).append(r)
    beta = np.empty((len(pairs), eval_idx.size))       # window restriction
    beta_full = np.empty_like(z)                       # clamped full grid
    for b, rows in sorted(by_band.items()):
        margin = math.ceil(n * SAFE_MARGIN * b)
        j_lo = min(h + 1 + margin, int(eval_idx[0]))
        j_hi = max(n - margin, int(eval_idx[-1]))
        safe_idx = np.arange(j_lo, j_hi + 1)
        fit = llr_grid(z[rows], data_idx, safe_idx, n, b, kernel)
        wpos = eval_idx - j_lo
        beta[rows] = fit[:, wpos]
        fpos = np.clip(data_idx, j_lo, j_hi) - j_lo
        beta_full[rows] = fit[:, fpos]

    gamma = beta / 2.0
    gamma_full = beta_full / 2.0
    diag_row = {i: pairs.index((i, i)) for i in range(p)}
    for i in range(p):
        gi = gamma_full[diag_row[i]]
        if gi.min() <= VARIANCE_FLOOR:
            e = int(np.argmin(gi))
            raise EstimationError(
                f"marginal variance nonpositive for column {i} at t={data_idx[e] / n}"
            )

    sigma = np.empty_like(gamma)
    rho = np.empty_like(gamma)
    resid = z - beta_full
    xi_hat = np.zeros_like(z)
    xi_tilde = np.zeros_like(z)
    for r, (i, l) in enumerate(pairs):
        if i == l:
            sigma[r] = gamma[r]
            rho[r] = 1.0
            continue  # innovations identically zero for diagonal pairs
        sigma[r] = np.sqrt(gamma[diag_row[i]] * gamma[diag_row[l]])
        rho[r] = gamma[r] / sigma[r]
        gii = gamma_full[diag_row[i]]
        gll = gamma_full[diag_row[l]]
        sig_full = np.sqrt(gii * gll)
        rho_full = gamma_full[r] / sig_full
        ri, rl = diag_row[i], diag_row[l]
        xi_hat[r] = resid[r] / (2.0 * sig_full) - (rho_full / 4.0) * (
            resid[ri] / gii + resid[rl] / gll
        )
        xi_tilde[r] = z[r] / (2.0 * sig_full) - (rho_full / 4.0) * (z[ri] / gii + z[rl] / gll)
    return g, eval_idx, pairs, beta, gamma, sigma, rho, resid, xi_hat, xi_tilde


def long_run_variance(xi_hat_row, n, h, eval_idx, m, eta, kernel):
    """Residual-block estimate of Gamma^2 on the window grid.

    Sums m-length blocks of the innovation estimates into Delta_s, then
    averages Delta_s^2 with kernel weights of bandwidth eta normalized
    over the full grid. Blocks must fit inside the differenced range
    [h+1, n], so s runs over h+1 .. n-m+1.
    """
    m = int(m)
    nvalid = n - h - m + 1
    if nvalid < 1:
        raise EstimationError(f"block length m={m} too large for n-h={n - h}")
    windows = np.lib.stride_tricks.sliding_window_view(xi_hat_row, m)
    delta = windows.sum(axis=-1)
    delta2 = delta * delta
    s_idx = np.arange(h + 1, h + 1 + nvalid)
    wmat = grid_kernel(kernel, s_idx[None, :] - eval_idx[:, None], n, eta)
    denom = grid_kernel(kernel, np.arange(1, n + 1)[None, :] - eval_idx[:, None], n, eta).sum(axis=1)
    num = np.einsum("es,s->e", wmat, delta2, optimize=False)
    return (kernel.roughness / m) * num / denom


def estimate_corr_field(diffs, bands, kernel, lrv_params, _surfaces=None):
    """Full correlation-field estimate from a differenced panel.

    lrv_params is (m_pair, eta): the per-pair block lengths (p x p
    integer matrix, off-diagonal entries used) and the long-run
    variance smoothing bandwidth. `_surfaces` lets callers reuse a
    `_fit_surfaces` result computed for the same (diffs, bands, kernel).
    """
    m_pair, eta = lrv_params
    m_pair = np.asarray(m_pair, dtype=np.int64)
    n, p = diffs.n, diffs.p
    if not (0.0 < eta < 0.5):
        raise ValueError(f"eta={eta} outside (0, 1/2)")
    if m_pair.shape != (p, p):
        raise ValueError("m matrix shape mismatch")
    tested = offdiag_pairs(p)
    for i, l in tested:
        if not (2 <= m_pair[i, l] <= n / 4):
            raise ValueError(f"m[{i},{l}]={m_pair[i, l]} outside [2, n/4]")

    g, eval_idx, pairs, beta, gamma, sigma, rho, resid, xi_hat, xi_tilde = (
        _surfaces if _surfaces is not None else _fit_surfaces(diffs, bands, kernel)
    )
    pair_row = {pr: r for r, pr in enumerate(pairs)}
    lrv = np.empty((len(tested), eval_idx.size))
    for r, (i, l) in enumerate(tested):
        lrv[r] = long_run_variance(
            xi_hat[pair_row[(i, l)]], n, diffs.h, eval_idx, m_pair[i, l], eta, kernel
        )
        if lrv[r].min() <= 0.0:
            e = int(np.argmin(lrv[r]))
            raise EstimationError(
                f"long-run variance nonpositive for pair ({i},{l}) at t={eval_idx[e] / n}"
            )
    return CorrFieldEstimate(
        n=n,
        p=p,
        h=diffs.h,
        labels=tuple(diffs.labels),
        window_lo=int(eval_idx[0]),
        window_hi=int(eval_idx[-1]),
        pairs=tuple(pairs),
        tested_pairs=tuple(tested),
        beta=beta,
        gamma=gamma,
        sigma=sigma,
        rho=rho,
        resid=resid,
        xi_hat=xi_hat,
        xi_tilde=xi_tilde,
        lrv=lrv,
        m_pair=m_pair,
        eta=float(eta),
    )


# ---------------------------------------------------------------------------
# standardized innovations


class StandardizedInnovations:
    """Lazy view of the standardized innovations Xi-bar.

    value(j, s, i, l) evaluates
        c_{i,l} K_b((t_j - t_s)) Xi~_{j,i,l} / Gamma~_{i,l}(t_s)
    for one-based indices j in [1, n] (innovations at j <= h are zero by
    convention: those differenced products do not exist) and s in the
    evaluation window.
    """

    def __init__(self, est, bands, kernel):
        self.est = est
        self.bands = bands
        self.kernel = kernel
        n = est.n
        ntested = len(est.tested_pairs)
        xi_full = np.zeros((ntested, n))
        for r, (i, l) in enumerate(est.tested_pairs):
            xi_full[r, est.h :] = est.xi_tilde[est.pair_row(i, l)]
        self.xi_full = xi_full                      # column k holds one-based index j = k+1
        self.gamma_sqrt = np.sqrt(est.lrv)          # Gamma~ on the window

    def value(self, j, s, i, l):
        est = self.est
        if not (1 <= j <= est.n):
            raise ValueError(f"index j={j} outside [1, n]")
        if not (est.window_lo <= s <= est.window_hi):
            raise ValueError(f"index s={s} outside the evaluation window")
        r = est.tested_row(i, l)
        if i < l:
            i, l = l, i
        b_il = self.bands.b_pair[i, l]
        k = grid_kernel(self.kernel, np.array([j - s]), est.n, b_il)[0]
        gam = self.gamma_sqrt[r, s - est.window_lo]
        return float(self.bands.c_pair[i, l] * k * self.xi_full[r, j - 1] / gam)


def standardized_innovations(est, bands, kernel):
    """Standardized innovations consumed by the bootstrap block sums."""
    return StandardizedInnovations(est, bands, kernel)


def dump_estimates_csv(est, path):
    """One row per (pair, window t): beta, gamma, sigma, rho, lrv."""
    import csv as _csv

    times = est.window_times
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _csv.writer(fh)
        w.writerow(["i", "l", "label_i", "label_l", "t", "beta", "gamma", "sigma", "rho", "lrv"])
        for r, (i, l) in enumerate(est.pairs):
            tr = est.tested_pairs.index((i, l)) if i != l else None
            for e, t in enumerate(times):
                lrv = f"{est.lrv[tr, e]:.17g}" if tr is not None else ""
                w.writerow(
                    [
                        i + 1,
                        l + 1,
                        est.labels[i],
                        est.labels[l],
                        f"{t:.17g}",
                        f"{est.beta[r, e]:.17g}",
                        f"{est.gamma[r, e]:.17g}",
                        f"{est.sigma[r, e]:.17g}",
                        f"{est.rho[r, e]:.17g}",
                        lrv,
                    ]
                )
