"""The eleven acceptance criteria, each at its stated tolerance and runtime budget.

Each test prints one ``criterion N PASS/FAIL`` line; the lines are repeated
in the pytest terminal summary.
"""

import numpy as np
import pytest
from acceptance_log import criterion
from helpers import converged_oracle, random_networks

from qnet.analytic import (SymmetricSpec, TandemParams, symmetric_fclt_xi,
                           symmetric_fclt_xi_limit, symmetric_mean, tandem_node1_pmf,
                           tandem_stationary_means)
from qnet.background import (BackgroundChain, deviation_matrix, transition_matrix,
                             transition_matrix_expm)
from qnet.fclt import (covariance_full_diffusion, fclt_covariance, fclt_covariance_path,
                       fluid_limit, stationary_fclt_covariance)
from qnet.fixtures import (FIX_D_Q_DOWN, fix_a, fix_b, fix_c, fix_d, fix_tandem_fclt,
                           symmetric_complete, tandem)
from qnet.moments import (factorial_moments, loss_fraction_limit, multi_indices,
                          stationary_first_moments)
from qnet.oracle import build_truncated, oracle_stationary, oracle_transient, pgf_residual
from qnet.perf import loss_metrics
from qnet.sim import SimConfig, fclt_empirical, run_ensemble, tagged_clients


def chain_of(net):
    return BackgroundChain.from_network(net)


@criterion(1, "M/M/inf baseline (FIX-A)", budget=1.0)
def test_c01_mm_inf_baseline():
    net = fix_a()
    ch = chain_of(net)
    st = factorial_moments(net, ch, 2)
    assert abs(st.value((1,)) - 3.0) <= 1e-12
    assert abs(st.value((2,)) - 9.0) <= 1e-12
    for t in (0.1, 0.5, 1.0, 2.0, 5.0):
        tr = factorial_moments(net, ch, 1, t=t)
        assert abs(tr.value((1,)) - 3.0 * (1 - np.exp(-t))) <= 1e-10


@criterion(2, "symmetric-network closed form (FIX-C 4/3; f=0 gives lambda/mu0)", budget=1.0)
def test_c02_symmetric_formula():
    # f = 0: the mean is lambda / mu0 whatever the link rates
    f0_err = 0.0
    for q_up, q_down in ((1, 1), (1, 3), (5, 0.2)):
        net = symmetric_complete(3, 2.0, 1.0, 1.0, q_up, q_down, f=0.0)
        means = stationary_first_moments(net, chain_of(net)).means
        f0_err = max(f0_err, float(np.abs(means - 2.0).max()))
    assert f0_err <= 1e-10, f"f=0 means differ from lambda/mu0 by {f0_err:.3g}"

    net = fix_c()
    closed = symmetric_mean(SymmetricSpec(3, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0))
    means = stationary_first_moments(net, chain_of(net)).means
    gap = float(np.abs(means - closed).max())
    assert gap <= 1e-10, (
        f"general solver gives {means[0]!r} per node, closed form {closed!r} "
        f"(gap {gap:.3g}); f=0 part passed with error {f0_err:.1e}")


@criterion(3, "tandem means and loss rate (closed form, solver, oracle)", budget=5.0)
def test_c03_tandem_means():
    expected = np.array([0.5, 0.5, 1 / 6, 1 / 3])
    closed = tandem_stationary_means(TandemParams(1.0, 1.0, 1.0, 1.0, 1.0))
    got = np.array([closed.v10, closed.v11, closed.v20, closed.v21])
    assert np.abs(got - expected).max() <= 1e-8
    assert abs(closed.loss_rate - 0.5) <= 1e-8

    net = fix_b()
    ch = chain_of(net)
    v = stationary_first_moments(net, ch).v
    assert np.abs(v.ravel() - expected).max() <= 1e-8

    dist = oracle_stationary(build_truncated(net, ch, (30, 30)))
    ov = np.concatenate([dist.factorial_moment((1, 0)), dist.factorial_moment((0, 1))])
    assert np.abs(ov - expected).max() <= 1e-8
    assert abs(dist.loss_rate - 0.5) <= 1e-8


def _decile_bins(p: np.ndarray, groups: int = 10) -> list[np.ndarray]:
    """Split the support into consecutive bins of roughly equal probability."""
    edges = np.searchsorted(np.cumsum(p), np.linspace(0, 1, groups + 1)[1:-1], side="right")
    edges = np.unique(np.concatenate([[0], edges, [len(p)]]))
    return [np.arange(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


@criterion(4, "retry tandem node-1 law: closed form vs oracle vs simulation", budget=120.0)
def test_c04_tandem_node1_law():
    reps = 20_000
    worst_tv, worst_z = 0.0, 0.0
    for q1 in FIX_D_Q_DOWN:
        net = fix_d(q1)
        params = TandemParams(20.0, 3.0, 2.0, 1.0, q1)
        dist = oracle_stationary(build_truncated(net, chain_of(net), (600, 160)))
        oracle_p = dist.marginal(0)
        exact = tandem_node1_pmf(params, np.arange(601))
        tv = 0.5 * (np.abs(oracle_p - exact).sum() + (1.0 - exact.sum()))
        worst_tv = max(worst_tv, tv)
        assert tv <= 1e-6, f"q1={q1}: total variation {tv:.3g}"

        # independent replications, each read once after the initial transient
        ens = run_ensemble(SimConfig(net, 30.0, 30.0, reps, seed=4004, keep_paths=True))
        sample = ens.counts[:, -1, 0]
        hist = np.bincount(sample, minlength=len(exact))
        full = tandem_node1_pmf(params)
        for bin_ in _decile_bins(full):
            p = full[bin_].sum()
            if reps * p < 25:
                continue
            obs = hist[bin_[bin_ < len(hist)]].sum()
            z = (obs - reps * p) / np.sqrt(reps * p * (1 - p))
            worst_z = max(worst_z, abs(z))
            assert abs(z) <= 3.0, f"q1={q1}: bin {bin_[0]}..{bin_[-1]} is {z:.2f} SE off"
    return f"max TV {worst_tv:.1e}, max |z| {worst_z:.2f}"


def _moment_errors(table, dist, n):
    return max(float(np.abs(table.state_values(r) - dist.factorial_moment(r)).max())
               for level in range(3) for r in multi_indices(n, level))


@criterion(5, "factorial-moment recursion vs oracle on 5 random networks", budget=120.0)
def test_c05_moments_vs_oracle():
    worst_st, worst_tr = 0.0, 0.0
    for net in random_networks():
        ch = chain_of(net)
        tc, dist = converged_oracle(net)
        err = _moment_errors(factorial_moments(net, ch, 2), dist, net.n)
        worst_st = max(worst_st, err)
        m0 = [1] + [0] * (net.n - 1)
        for t in (0.5, 2.0):
            odist = oracle_transient(tc, t, m0, 0, tol=1e-13)
            tab = factorial_moments(net, ch, 2, t=t, m0=m0, k0=0)
            worst_tr = max(worst_tr, _moment_errors(tab, odist, net.n))
    assert worst_st <= 1e-8, f"stationary error {worst_st:.3g}"
    assert worst_tr <= 1e-6, f"transient error {worst_tr:.3g}"
    return f"stationary {worst_st:.1e}, transient {worst_tr:.1e}"


@criterion(6, "loss probability and time to loss", budget=180.0)
def test_c06_loss_metrics():
    worst_oracle, worst_limit = 0.0, 0.0
    for net in random_networks():
        ch = chain_of(net)
        omega = loss_metrics(net, ch).omega_agg
        _, dist = converged_oracle(net)
        worst_oracle = max(worst_oracle, abs(omega - dist.loss_rate / net.lam_total))
        worst_limit = max(worst_limit, abs(omega - loss_fraction_limit(net, ch)))
    assert worst_oracle <= 1e-8, f"omega vs oracle {worst_oracle:.3g}"
    assert worst_limit <= 1e-6, f"omega vs loss limit {worst_limit:.3g}"

    net = fix_b()
    tau = loss_metrics(net, chain_of(net)).tau_agg
    est = tagged_clients(net, 100_000, seed=6006)
    z = (est.tau - tau) / est.tau_se
    assert abs(z) <= 3.0, f"tau {tau:.5f} vs simulated {est.tau:.5f} +- {est.tau_se:.5f}"
    return f"oracle {worst_oracle:.1e}, limit {worst_limit:.1e}, tau z {z:.2f}"


@criterion(7, "background algebra", budget=5.0)
def test_c07_background_algebra():
    rng = np.random.default_rng(7)
    for K in range(1, 5):
        ch = BackgroundChain(rng.uniform(0.2, 3.0, K), rng.uniform(0.2, 3.0, K))
        for t in (0.0, 0.1, 0.5, 1.0, 3.0, 10.0):
            assert np.abs(transition_matrix(ch, t) - transition_matrix_expm(ch, t)).max() <= 1e-12
        Q, D = np.asarray(ch.Q), ch.D
        Pi = np.tile(ch.pi, (ch.state_count, 1))
        target = Pi - np.eye(ch.state_count)
        assert np.abs(Q @ D - target).max() <= 1e-10
        assert np.abs(D @ Q - target).max() <= 1e-10
    for q0, q1 in ((1.0, 1.0), (0.3, 2.0), (5.0, 0.7)):
        q = q0 + q1
        D = deviation_matrix(BackgroundChain(np.array([q0]), np.array([q1])))
        assert np.abs(D - np.array([[q0, -q0], [-q1, q1]]) / q ** 2).max() <= 1e-12


@criterion(8, "symmetric FCLT closed form vs Lyapunov integral", budget=10.0)
def test_c08_symmetric_fclt():
    net = fix_c()
    ch = chain_of(net)
    spec = SymmetricSpec(3, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    times = np.linspace(0.0, 5.0, 21)
    path = fclt_covariance_path(net, ch, times, "LT1")
    worst = max(float(np.abs(res.cov - symmetric_fclt_xi(spec, t)).max())
                for t, res in zip(times, path))
    assert worst <= 1e-8, f"xi_n(t) mismatch {worst:.3g}"
    limit = symmetric_fclt_xi_limit(spec) * np.ones((3, 3)) + (4 / 3) * np.eye(3)
    assert abs(symmetric_fclt_xi_limit(spec) - 4 / 27) <= 1e-15
    stat = stationary_fclt_covariance(net, ch, "EQ1").cov
    assert np.abs(stat - (4 / 27) * np.ones((3, 3)) - (4 / 3) * np.eye(3)).max() <= 1e-8
    assert np.abs(stat - limit).max() <= 1e-8
    return f"max |RK4 - xi| {worst:.1e}"


@criterion(9, "FCLT vs simulation, tandem N=100, alpha=1", budget=300.0)
def test_c09_fclt_empirical():
    base = fix_tandem_fclt(30.0, 20.0)
    ch = chain_of(base)
    config = SimConfig(base, horizon=1.0, grid=0.5, reps=5000, seed=9009, N=100, alpha=1.0)
    worst = 0.0
    for t in (0.5, 1.0):
        theory = fclt_covariance(base, ch, t, "EQ1")
        rho = fluid_limit(base, ch, t).rho
        emp = fclt_empirical(config, t, rho)
        zm = emp.mean / emp.mean_se
        zc = (emp.cov - theory.cov) / emp.cov_se
        worst = max(worst, float(np.abs(zm).max()), float(np.abs(zc).max()))
        assert np.all(np.abs(zm) <= 3.0), f"t={t}: mean z-scores {zm}"
        assert np.all(np.abs(zc) <= 3.0), f"t={t}: covariance z-scores {zc.ravel()}"
    return f"max |z| {worst:.2f}"


@criterion(10, "stationary PGF residual of the truncated oracle", budget=60.0)
def test_c10_pgf_residual():
    notes = []
    for f, caps in ((1.0, (5, 10, 20)), (0.0, (15, 30, 60))):
        net = fix_b(f)
        ch = chain_of(net)
        res = [pgf_residual(oracle_stationary(build_truncated(net, ch, (c, c)), check=False))
               for c in caps]
        assert all(b < a for a, b in zip(res, res[1:])), f"f={f}: residuals {res}"
        assert res[-1] <= 1e-6, f"f={f}: residual {res[-1]:.3g}"
        notes.append(f"f={f:g}: " + ", ".join(f"{r:.1e}" for r in res))
    return "; ".join(notes)


@criterion(11, "compact covariance formula vs full-diffusion Lyapunov ODE", budget=30.0)
def test_c11_covariance_simplification():
    worst = 0.0
    for net in (fix_b(), fix_c(), tandem(1.0, 1.0, 1.0, 1.0, 1.0, f=0.0)):
        ch = chain_of(net)
        for t in (0.5, 2.0):
            compact = fclt_covariance(net, ch, t, "EQ1").cov
            full = covariance_full_diffusion(net, ch, t, "EQ1")
            worst = max(worst, float(np.abs(compact - full).max()))
    assert worst <= 1e-6
    return f"max difference {worst:.1e}"


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
