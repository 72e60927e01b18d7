import math

import numpy as np
import pytest
from scipy.integrate import quad

from tvcorrnet.estimator import (
    BandwidthSet,
    EstimationError,
    epanechnikov,
    estimate_corr_field,
    fourth_order_epanechnikov,
    grid_kernel,
    llr_grid,
    local_linear_fit,
    standardized_innovations,
)
from tvcorrnet.panel import TimeSeriesPanel, difference
from tvcorrnet.simlab import SimSpec, simulate_case


def lrv_params(p, m=4, eta=0.4):
    return np.full((p, p), m, dtype=np.int64), eta


# ---------------------------------------------------------------------------
# kernels


def test_quartic_value_at_zero(quartic):
    assert quartic.evaluate(0.0) == pytest.approx(45.0 / 32.0, abs=0)
    assert quartic.evaluate(0.0) == 1.40625


def test_quartic_moments_by_quadrature(quartic):
    mass = quad(quartic.evaluate, -1, 1, limit=200)[0]
    second = quad(lambda u: u * u * quartic.evaluate(u), -1, 1, limit=200)[0]
    rough = quad(lambda u: quartic.evaluate(u) ** 2, -1, 1, limit=200)[0]
    assert abs(mass - 1.0) < 1e-10
    assert abs(second) < 1e-10
    assert abs(rough - 1.25) < 1e-10


def test_epanechnikov_moments(epa):
    assert abs(epa.mass - 1.0) < 1e-10
    assert abs(epa.roughness - 0.6) < 1e-10
    assert epa.second_moment == pytest.approx(0.2, abs=1e-10)


def test_kernel_vanishes_outside_support(quartic, epa):
    for k in (quartic, epa):
        assert k.evaluate(1.0001) == 0.0
        assert k.evaluate(-3.0) == 0.0


def test_kernel_validation_rejects_bad_mass():
    from tvcorrnet.estimator import Kernel

    with pytest.raises(ValueError, match="mass"):
        Kernel(lambda u: np.where(np.abs(u) <= 1, 0.3 * np.ones_like(np.asarray(u, float)), 0.0))


# ---------------------------------------------------------------------------
# local linear fitting


def test_local_linear_constant(quartic):
    z = np.full(80, 4.5)
    eta0, eta1 = local_linear_fit(z, 0.5, 0.2, quartic)
    assert eta0 == pytest.approx(4.5, abs=1e-10)
    assert eta1 == pytest.approx(0.0, abs=1e-8)


def test_local_linear_reproduces_lines(quartic, epa):
    n = 90
    times = np.arange(1, n + 1) / n
    z = 2.0 + 3.0 * times
    for kernel in (quartic, epa):
        for t in (0.3, 0.5, 0.77):
            eta0, eta1 = local_linear_fit(z, t, 0.25, kernel)
            assert eta0 == pytest.approx(2.0 + 3.0 * t, abs=1e-9)
            assert eta1 == pytest.approx(3.0, abs=1e-7)


def wls_oracle(z, times, t, b, kernel):
    """Direct weighted normal-equation solve, independent of the estimator."""
    d = times - t
    w = kernel.evaluate(d / b)
    x = np.column_stack([np.ones_like(d), d])
    a = x.T @ (w[:, None] * x)
    rhs = x.T @ (w * z)
    return np.linalg.solve(a, rhs)


def test_local_linear_matches_wls_oracle(quartic):
    rng = np.random.default_rng(42)
    for _ in range(25):
        times = np.sort(rng.uniform(0, 1, size=50))
        z = rng.standard_normal(50) * 3 + rng.uniform(-2, 2)
        t = rng.uniform(0.25, 0.75)
        b = rng.uniform(0.15, 0.35)
        if np.count_nonzero(np.abs(times - t) < b) < 5:
            continue
        eta = wls_oracle(z, times, t, b, quartic)
        eta0, eta1 = local_linear_fit(z, t, b, quartic, times=times)
        assert abs(eta0 - eta[0]) <= 1e-10 * max(1.0, abs(eta[0]))
        assert abs(eta1 - eta[1]) <= 1e-10 * max(1.0, abs(eta[1]))


def test_local_linear_too_few_points(quartic):
    z = np.arange(30, dtype=float)
    with pytest.raises(ValueError, match="fewer than 5"):
        local_linear_fit(z, 0.5, 0.05, quartic)


def test_local_linear_singular_matrix(quartic):
    times = np.full(10, 0.5)
    z = np.arange(10, dtype=float)
    with pytest.raises(ValueError, match="singular|ill"):
        local_linear_fit(z, 0.5, 0.3, quartic, times=times)


def test_llr_grid_matches_scalar_fit(epa):
    rng = np.random.default_rng(5)
    n = 80
    data_idx = np.arange(4, n + 1)
    z = rng.standard_normal(data_idx.size)
    eval_idx = np.arange(30, 51)
    fit = llr_grid(z, data_idx, eval_idx, n, 0.3, epa)[0]
    for k, j in enumerate(eval_idx):
        eta0, _ = local_linear_fit(z, j / n, 0.3, epa, times=data_idx / n)
        assert fit[k] == pytest.approx(eta0, rel=1e-10)


# ---------------------------------------------------------------------------
# correlation field


def test_rho_diagonal_is_exactly_one(white_diffs, small_bands, epa):
    est = estimate_corr_field(white_diffs, small_bands, epa, lrv_params(2))
    for i in range(2):
        row = est.pair_row(i, i)
        assert np.all(est.rho[row] == 1.0)


def test_equal_columns_give_rho_exactly_one(epa):
    # identical columns collapse the innovations, so only the surface fit
    # is exercised here (the long-run variance guard rightly rejects them)
    from tvcorrnet.estimator import _fit_surfaces

    rng = np.random.default_rng(8)
    col = rng.standard_normal(80)
    panel = TimeSeriesPanel(np.column_stack([col, col]), ["a", "b"])
    out = _fit_surfaces(difference(panel, 4), BandwidthSet.uniform(0.25, 2), epa)
    pairs, rho = out[2], out[6]
    assert np.all(rho[pairs.index((1, 0))] == 1.0)
    with pytest.raises(EstimationError, match="long-run variance"):
        estimate_corr_field(
            difference(panel, 4), BandwidthSet.uniform(0.25, 2), epa, lrv_params(2)
        )


def test_constant_correlation_monte_carlo_oracle(epa):
    # i.i.d. bivariate Gaussian errors with correlation 0.5, zero trend
    n = 2000
    h = math.ceil(2 * math.log(n))
    b = n ** (-0.2)
    bands = BandwidthSet.uniform(b, 2)
    target = 0.5
    mix = np.linalg.cholesky(np.array([[1.0, target], [target, 1.0]]))
    hits = 0
    reps = 100
    for seed in range(reps):
        rng = np.random.default_rng(seed)
        values = rng.standard_normal((n, 2)) @ mix.T
        est = estimate_corr_field(
            difference(TimeSeriesPanel(values, ["a", "b"]), h), bands, epa, lrv_params(2, m=8, eta=0.34)
        )
        sup_err = np.abs(est.rho[est.pair_row(1, 0)] - target).max()
        hits += sup_err < 0.1
    assert hits >= 95


def test_scale_invariance(white_panel, epa):
    scale = 7.3
    scaled = white_panel.values.copy()
    scaled[:, 0] *= scale
    bands = BandwidthSet.uniform(0.3, 2)
    est1 = estimate_corr_field(difference(white_panel, 3), bands, epa, lrv_params(2))
    est2 = estimate_corr_field(
        difference(TimeSeriesPanel(scaled, white_panel.labels), 3), bands, epa, lrv_params(2)
    )
    r = est1.pair_row(1, 0)
    tr = est1.tested_row(1, 0)
    for a, b_ in ((est1.rho[r], est2.rho[r]), (est1.xi_tilde[r], est2.xi_tilde[r]),
                  (est1.xi_hat[r], est2.xi_hat[r]), (est1.lrv[tr], est2.lrv[tr])):
        assert np.allclose(a, b_, rtol=1e-10, atol=1e-12)


def test_shift_invariance_bitwise(epa):
    # dyadic-grid values keep the shifted sums exactly representable
    rng = np.random.default_rng(17)
    values = rng.integers(-4000, 4000, size=(60, 2)).astype(np.float64) / 256.0
    shifted = values.copy()
    shifted[:, 1] += 123.0
    bands = BandwidthSet.uniform(0.3, 2)
    est1 = estimate_corr_field(difference(TimeSeriesPanel(values, ["a", "b"]), 3), bands, epa, lrv_params(2))
    est2 = estimate_corr_field(
        difference(TimeSeriesPanel(shifted, ["a", "b"]), 3), bands, epa, lrv_params(2)
    )
    for name in ("beta", "gamma", "sigma", "rho", "resid", "xi_hat", "xi_tilde", "lrv"):
        assert np.array_equal(getattr(est1, name), getattr(est2, name)), name


def test_jump_locality_bitwise(epa):
    rng = np.random.default_rng(21)
    n, h, b = 400, 6, 0.15
    values = rng.integers(-4000, 4000, size=(n, 2)).astype(np.float64) / 256.0
    jumped = values.copy()
    t0 = 0.5
    jumped[int(t0 * n) :, 0] += 3.0
    bands = BandwidthSet.uniform(b, 2)
    est1 = estimate_corr_field(difference(TimeSeriesPanel(values, ["a", "b"]), h), bands, epa, lrv_params(2))
    est2 = estimate_corr_field(difference(TimeSeriesPanel(jumped, ["a", "b"]), h), bands, epa, lrv_params(2))
    times = est1.window_times
    far = np.abs(times - t0) > bands.b_max + h / n
    assert far.sum() > 10
    for name in ("beta", "gamma", "rho"):
        a, c = getattr(est1, name), getattr(est2, name)
        assert np.array_equal(a[:, far], c[:, far]), name


def test_rho_symmetry_lookup(white_diffs, small_bands, epa):
    est = estimate_corr_field(white_diffs, small_bands, epa, lrv_params(2))
    assert est.rho_at(1, 0, 0.5) == est.rho_at(0, 1, 0.5)


def test_rho_not_clipped(epa):
    # near-identical columns and a wigglier cross-pair bandwidth leave
    # finite-sample |rho| excursions above one, which must survive
    rng = np.random.default_rng(3)
    col = rng.standard_normal(120)
    other = col + 1e-3 * rng.standard_normal(120)
    panel = TimeSeriesPanel(np.column_stack([col, other]), ["a", "b"])
    bands = BandwidthSet(np.array([[0.45, 0.12], [0.12, 0.45]]))
    est = estimate_corr_field(difference(panel, 4), bands, epa, lrv_params(2))
    assert est.rho[est.pair_row(1, 0)].max() > 1.0


def test_nonpositive_marginal_variance_errors(epa):
    # a column that is exactly zero differences to zero products
    values = np.column_stack([np.zeros(60), np.random.default_rng(0).standard_normal(60)])
    panel = TimeSeriesPanel(values, ["z", "a"])
    with pytest.raises(EstimationError, match="marginal variance"):
        estimate_corr_field(difference(panel, 3), BandwidthSet.uniform(0.3, 2), epa, lrv_params(2))


def test_estimator_validates_lrv_params(white_diffs, small_bands, epa):
    with pytest.raises(ValueError, match="eta"):
        estimate_corr_field(white_diffs, small_bands, epa, (np.full((2, 2), 4), 0.7))
    with pytest.raises(ValueError, match="m"):
        estimate_corr_field(white_diffs, small_bands, epa, (np.full((2, 2), 1), 0.4))


# ---------------------------------------------------------------------------
# bandwidth sets


def test_bandwidth_set_validation():
    with pytest.raises(ValueError, match="symmetric"):
        BandwidthSet(np.array([[0.3, 0.2], [0.25, 0.3]]))
    with pytest.raises(ValueError, match="\\(0, 1/2\\)"):
        BandwidthSet(np.full((2, 2), 0.6))
    with pytest.raises(ValueError, match="ratio"):
        BandwidthSet(np.array([[0.4, 0.05], [0.05, 0.4]]))
    bands = BandwidthSet(np.array([[0.4, 0.1], [0.1, 0.4]]))
    assert bands.b_max == 0.4
    assert bands.c_pair[0, 1] == pytest.approx(2.0)
    assert bands.c_pair[0, 0] == 1.0


# ---------------------------------------------------------------------------
# standardized innovations


def test_xi_bar_compact_support(white_diffs, small_bands, epa):
    est = estimate_corr_field(white_diffs, small_bands, epa, lrv_params(2))
    xb = standardized_innovations(est, small_bands, epa)
    s = est.window_lo
    n, b = est.n, small_bands.b_pair[1, 0]
    j_far = s + math.ceil(n * b) + 1
    assert j_far <= n
    assert xb.value(j_far, s, 1, 0) == 0.0


def test_xi_bar_matches_direct_formula(white_diffs, small_bands, epa):
    est = estimate_corr_field(white_diffs, small_bands, epa, lrv_params(2))
    xb = standardized_innovations(est, small_bands, epa)
    n = est.n
    i, l = 1, 0
    r = est.tested_row(i, l)
    for j, s in ((25, est.window_lo + 2), (40, est.window_lo + 5), (5, est.window_lo)):
        b_il = small_bands.b_pair[i, l]
        kern = epa.evaluate(((j - s) / n) / b_il)
        if j <= est.h:
            xi = 0.0
        else:
            xi = est.xi_tilde[est.pair_row(i, l)][j - est.h - 1]
        gamma = math.sqrt(est.lrv[r][s - est.window_lo])
        expected = small_bands.c_pair[i, l] * kern * xi / gamma
        assert xb.value(j, s, i, l) == pytest.approx(expected, rel=1e-12, abs=1e-300)


def test_xi_bar_unit_scale_when_bandwidths_equal(white_diffs, small_bands, epa):
    # b_il = b_max makes c = 1, so the value is K_b(t_j - t_s) Xi / Gamma
    est = estimate_corr_field(white_diffs, small_bands, epa, lrv_params(2))
    xb = standardized_innovations(est, small_bands, epa)
    j, s = 30, est.window_lo + 3
    kern = grid_kernel(epa, np.array([j - s]), est.n, small_bands.b_pair[1, 0])[0]
    xi = est.xi_tilde[est.pair_row(1, 0)][j - est.h - 1]
    gamma = math.sqrt(est.lrv[est.tested_row(1, 0)][s - est.window_lo])
    assert small_bands.c_pair[1, 0] == 1.0
    assert xb.value(j, s, 1, 0) == pytest.approx(kern * xi / gamma, rel=1e-12)


def test_xi_identities_for_simulated_case(epa):
    # the two innovation forms coincide given the same fitted surfaces
    panel, _ = simulate_case(SimSpec(case=1, n=300, seed=5))
    est = estimate_corr_field(
        difference(panel, 6), BandwidthSet.uniform(0.25, 6), epa, lrv_params(6)
    )
    r = est.pair_row(2, 0)
    assert np.allclose(est.xi_hat[r], est.xi_tilde[r], rtol=0, atol=1e-10)
