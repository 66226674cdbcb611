import numpy as np
import pytest

from qnet.background import BackgroundChain
from qnet.fclt import fclt_covariance, fluid_limit
from qnet.fixtures import fix_a, fix_b, fix_c, fix_d, fix_tandem_fclt
from qnet.moments import transient_first_moments
from qnet.perf import loss_metrics
from qnet.sim import (SimConfig, fclt_empirical, rep_generator, run_ensemble, run_one,
                      tagged_clients, thread_count)


def test_retry_network_loses_nothing():
    tr = run_one(SimConfig(fix_d(1.0), 20.0, 1.0, seed=3))
    assert np.all(tr.lost == 0)


def test_trajectory_invariants():
    tr = run_one(SimConfig(fix_c(), 30.0, 0.01, seed=4))
    assert np.all(tr.counts >= 0)
    assert np.all(np.diff(tr.lost) >= 0)
    assert tr.counts[0].sum() == 0


def test_mm_inf_time_average():
    tr = run_one(SimConfig(fix_a(), 200.0, 0.05, seed=5))
    window = tr.counts[tr.times >= 100.0, 0][:-1].astype(float)
    batches = window.reshape(10, -1).mean(axis=1)
    se = batches.std(ddof=1) / np.sqrt(len(batches))
    assert abs(batches.mean() - 3.0) <= 3 * se


def test_determinism():
    cfg = SimConfig(fix_b(0.5), 10.0, 0.5, reps=4, seed=42)
    a, b = run_ensemble(cfg), run_ensemble(cfg)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.loss_mean, b.loss_mean)
    assert np.array_equal(run_one(cfg, 2).counts, run_one(cfg, 2).counts)
    assert not np.array_equal(run_one(cfg, 1).counts, run_one(cfg, 2).counts)


def test_thread_count_does_not_change_results(monkeypatch):
    cfg = SimConfig(fix_b(), 5.0, 1.0, reps=50, seed=8)
    monkeypatch.setenv("QNET_THREADS", "1")
    one = run_ensemble(cfg)
    monkeypatch.setenv("QNET_THREADS", "4")
    many = run_ensemble(cfg)
    assert np.array_equal(one.mean, many.mean)


def test_thread_count_env(monkeypatch):
    monkeypatch.setenv("QNET_THREADS", "1")
    assert thread_count() == 1
    monkeypatch.setenv("QNET_THREADS", "x")
    with pytest.raises(ValueError):
        thread_count()


def test_streams_are_documented_philox():
    g = rep_generator(7, 3)
    assert isinstance(g.bit_generator, np.random.Philox)
    assert g.random() == rep_generator(7, 3).random()


def test_ensemble_mean_matches_moments():
    net = fix_b()
    ens = run_ensemble(SimConfig(net, 2.0, 1.0, reps=10_000, seed=12))
    exact = transient_first_moments(net, BackgroundChain.from_network(net), 2.0).means
    assert np.all(np.abs(ens.mean[-1] - exact) <= 3 * ens.mean_se[-1])


def test_loss_fraction_matches_omega():
    net = fix_b()
    T = 400.0
    ens = run_ensemble(SimConfig(net, T, T, reps=400, seed=13))
    omega = loss_metrics(net, BackgroundChain.from_network(net)).omega_agg
    # E L(T) = omega lam T + O(1); the offset of the unit tandem is far below the noise here
    assert abs(ens.loss_mean[-1] / T - omega) <= 3 * ens.loss_se[-1] / T


def test_standard_errors_follow_sqrt_law():
    net = fix_b()
    small = run_ensemble(SimConfig(net, 2.0, 2.0, reps=4000, seed=14))
    large = run_ensemble(SimConfig(net, 2.0, 2.0, reps=16_000, seed=15))
    ratio = small.mean_se[-1] / large.mean_se[-1]
    assert np.all(np.abs(ratio - 2.0) <= 0.4)


def test_pasta_background_at_arrivals():
    net = fix_b()
    ens = run_ensemble(SimConfig(net, 200.0, 200.0, reps=20, seed=16))
    counts = ens.arrivals_by_state
    total = counts.sum()
    pi = BackgroundChain.from_network(net).pi
    frac = counts[1] / total
    assert abs(frac - pi[1]) < 0.05


def test_fclt_empirical_fast_links_decorrelate():
    base = fix_tandem_fclt()
    c = BackgroundChain.from_network(base)
    cfg = SimConfig(base, 1.0, 1.0, reps=1500, seed=17, N=20, alpha=3.0)
    emp = fclt_empirical(cfg, 1.0, fluid_limit(base, c, 1.0).rho)
    gt = fclt_covariance(base, c, 1.0, "GT1").cov
    assert abs(emp.cov[0, 1]) <= 3 * emp.cov_se[0, 1]
    assert np.all(np.abs(np.diag(emp.cov) - np.diag(gt)) <= 3 * np.diag(emp.cov_se))


def test_fclt_empirical_requires_grid_time():
    base = fix_tandem_fclt()
    with pytest.raises(ValueError):
        fclt_empirical(SimConfig(base, 1.0, 0.5, reps=2), 0.3, np.zeros(2))


def test_tagged_clients_fix_b():
    est = tagged_clients(fix_b(), 40_000, seed=18)
    assert abs(est.omega - 0.5) <= 3 * est.omega_se
    assert abs(est.tau - 0.5) <= 3 * est.tau_se


def test_config_checks():
    with pytest.raises(ValueError):
        SimConfig(fix_a(), 0.0, 1.0)
    with pytest.raises(ValueError):
        SimConfig(fix_a(), 1.0, 1.0, reps=0)
    with pytest.raises(ValueError):
        SimConfig(fix_a(), 1.0, 0.3).times
