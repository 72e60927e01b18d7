import numpy as np
import pytest

from tvcorrnet.pipeline import PipelineOptions
from tvcorrnet.simlab import (
    GroundTruth,
    SimSpec,
    ground_truth,
    mean_function,
    mixing_matrix,
    moving_window_baseline,
    parse_method,
    run_experiment,
    run_experiment_batch,
    sensitivity_run,
    simulate_case,
    stationary_block_correlation,
)
from tvcorrnet.panel import TimeSeriesPanel

FAST = PipelineOptions(B=150, bandwidth=0.2, w=12, eta=0.4, m=5)


def test_sim_spec_validation():
    with pytest.raises(ValueError):
        SimSpec(case=3, n=600, seed=0)
    with pytest.raises(ValueError):
        SimSpec(case=1, n=200, seed=0)
    with pytest.raises(ValueError):
        SimSpec(case=1, n=600, seed=0, burn_in=50)


def test_generator_determinism():
    spec = SimSpec(case=1, n=400, seed=33)
    p1, t1 = simulate_case(spec)
    p2, t2 = simulate_case(spec)
    assert np.array_equal(p1.values, p2.values)
    assert t1.null_set == t2.null_set
    p3, _ = simulate_case(SimSpec(case=1, n=400, seed=34))
    assert not np.array_equal(p1.values, p3.values)


def test_zero_noise_gives_deterministic_trend():
    spec = SimSpec(case=1, n=600, seed=1)
    panel, _ = simulate_case(spec, noise_scale=0.0)
    t = panel.times()
    j300 = np.nonzero(np.isclose(t, 0.5))[0][0]
    assert panel.values[j300, 0] == pytest.approx(0.7 - 0.4 * 0.5, abs=1e-12)
    for c in range(panel.p):
        assert np.allclose(panel.values[:, c], mean_function(c, t), atol=1e-12)


def test_mean_function_branches():
    # coordinate group 0 breaks at 0.25 and 0.55
    assert mean_function(0, 0.1) == pytest.approx(0.3 + 0.04)
    assert mean_function(0, 0.3) == pytest.approx(0.7 - 0.12)
    assert mean_function(0, 0.9) == pytest.approx(0.2 + 0.36)
    # third branch applies from the second breakpoint on
    assert mean_function(0, 0.55) == pytest.approx(0.2 + 0.4 * 0.55)


def test_ground_truth_counts():
    g1 = ground_truth(1)
    assert g1.m == 15 and len(g1.null_set) == 9 and len(g1.nonnull_set) == 6
    assert g1.target_fdr(0.1) == pytest.approx(0.06)
    g2 = ground_truth(2)
    assert g2.m == 36 and len(g2.null_set) == 27
    assert g2.target_fdr(0.1) == pytest.approx(0.075)


def test_ground_truth_matches_mixing_matrix():
    for case in (1, 2):
        truth = ground_truth(case)
        m = mixing_matrix(truth.p)
        mmt = m @ m.T
        for i in range(truth.p):
            for l in range(i):
                assert truth.is_null(i, l) == (mmt[i, l] == 0.0)


def test_stationary_block_correlation_oracle():
    # frozen time, means removed: empirical within-block correlation
    # matches the covariance-iteration oracle
    spec = SimSpec(case=1, n=100_000, seed=4)
    panel, _ = simulate_case(spec, freeze_time=0.5, include_means=False)
    e = panel.values
    emp = np.corrcoef(e[:, 0], e[:, 1])[0, 1]
    oracle = stationary_block_correlation(1)
    assert emp == pytest.approx(oracle, abs=0.02)
    cross = np.corrcoef(e[:, 0], e[:, 3])[0, 1]
    assert abs(cross) < 0.02


def test_moving_window_baseline_cases():
    rng = np.random.default_rng(0)
    col = rng.standard_normal(200)
    other = rng.standard_normal(200)
    panel = TimeSeriesPanel(np.column_stack([col, col, other]), ["a", "b", "c"])
    snaps = moving_window_baseline(panel, 20, 0.999999)
    # identical columns stay connected at any threshold below one
    assert all(s.has_edge(0, 1) for s in snaps)
    assert len(snaps) == 200 - 2 * 20
    hi = moving_window_baseline(panel, 20, 0.9999995)
    assert all(s.has_edge(0, 1) for s in hi)

    with pytest.raises(ValueError):
        moving_window_baseline(panel, 4, 0.5)
    with pytest.raises(ValueError):
        moving_window_baseline(panel, 20, 1.5)


def test_moving_window_skips_incomplete_windows():
    rng = np.random.default_rng(1)
    panel = TimeSeriesPanel(rng.standard_normal((30, 2)), ["a", "b"])
    assert moving_window_baseline(panel, 20, 0.5) == []


def test_parse_method():
    assert parse_method("bh") == ("bh", None)
    assert parse_method("BY") == ("by", None)
    assert parse_method("mw:0.3") == ("mw", 0.3)
    assert parse_method(("mw", 0.1)) == ("mw", 0.1)
    with pytest.raises(ValueError):
        parse_method("unknown")


def test_run_experiment_pvalue_override_hook():
    spec = SimSpec(case=1, n=300, seed=0)
    results, _ = run_experiment_batch(
        spec, ["bh"], 0.1, reps=1, seed=5, options=FAST, _pvalue_override=1.0
    )
    per_rep = results["bh"].per_rep
    assert np.all(per_rep[:, :2] == 0.0)   # FDP identically zero
    assert np.all(per_rep[:, 2:] == 1.0)   # every non-null missed


def test_by_dominated_by_bh_on_shared_seeds():
    spec = SimSpec(case=1, n=300, seed=0)
    results, _ = run_experiment_batch(spec, ["bh", "by"], 0.1, reps=3, seed=11, options=FAST)
    bh, by = results["bh"].per_rep, results["by"].per_rep
    assert np.all(by[:, 1] <= bh[:, 1])


def test_worker_count_invariance():
    spec = SimSpec(case=1, n=300, seed=0)
    r1, c1 = run_experiment_batch(spec, ["bh"], 0.1, reps=3, seed=2, options=FAST,
                                  workers=1, collect_pairs=[(3, 0)])
    r2, c2 = run_experiment_batch(spec, ["bh"], 0.1, reps=3, seed=2, options=FAST,
                                  workers=2, collect_pairs=[(3, 0)])
    assert np.array_equal(r1["bh"].per_rep, r2["bh"].per_rep)
    for (i1, v1), (i2, v2) in zip(c1[(3, 0)], c2[(3, 0)]):
        assert np.array_equal(i1, i2) and np.array_equal(v1, v2)


def test_sensitivity_zero_perturbation_is_identity():
    spec = SimSpec(case=1, n=300, seed=0)
    base = run_experiment(spec, "bh", 0.1, reps=2, seed=3, options=FAST)
    same = sensitivity_run(spec, ("bandwidth", 0.0), method="bh", alpha=0.1,
                           reps=2, seed=3, options=FAST)
    assert np.array_equal(base.per_rep, same.per_rep)
    lag_same = sensitivity_run(spec, ("lag", 0.0), method="bh", alpha=0.1,
                               reps=2, seed=3, options=FAST)
    assert np.array_equal(base.per_rep, lag_same.per_rep)
    with pytest.raises(ValueError):
        sensitivity_run(spec, ("volume", 0.1))


def test_sensitivity_bandwidth_scale_changes_runs():
    spec = SimSpec(case=1, n=300, seed=0)
    base = run_experiment(spec, "bh", 0.1, reps=1, seed=3, options=FAST)
    pert = sensitivity_run(spec, ("bandwidth", 0.1), method="bh", alpha=0.1,
                           reps=1, seed=3, options=FAST)
    assert base.per_rep.shape == pert.per_rep.shape


def test_experiment_csv_writers(tmp_path):
    from tvcorrnet.simlab import experiment_to_csv, trajectory_to_csv

    spec = SimSpec(case=1, n=300, seed=0)
    result = run_experiment(spec, "bh", 0.1, reps=2, seed=4, options=FAST)
    path = tmp_path / "exp.csv"
    experiment_to_csv(result, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "rep,maxFDP,avgFDP,maxFNP,avgFNP"
    assert len(lines) == 1 + 2 + 1
    assert lines[-1].startswith("aggregate")

    tpath = tmp_path / "traj.csv"
    trajectory_to_csv(result, tpath)
    assert tpath.read_text().startswith("t,meanFDP,meanFNP")


def test_ground_truth_null_pairs_accessors():
    truth = ground_truth(1)
    assert truth.null_pairs(0.5) == truth.null_set
    assert truth.is_null(0, 3) and not truth.is_null(0, 1)
    assert isinstance(truth, GroundTruth)
