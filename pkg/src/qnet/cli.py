"""Command-line interface.

Every subcommand reads a JSON network file (see :mod:`qnet.config`) and
writes CSV with a header row to stdout or ``--out``.  Floats are written with
``repr`` so that the output is byte-stable.

Exit codes: 0 success, 1 configuration or validation error, 2 numerical
failure, 3 failed comparison (``compare`` only).
"""

from __future__ import annotations

import csv
import io
import sys
from dataclasses import dataclass

import click
import numpy as np

from .analytic import TandemParams, tandem_node1_pmf
from .background import BackgroundChain, NumericalFailure
from .config import ConfigError, RunConfig, parse_config
from .fclt import Regime, fclt_covariance, fluid_limit, stationary_fclt_covariance
from .moments import (STATIONARY, CapacityError, factorial_moments, loss_mean,
                      multi_indices, stationary_first_moments, transient_first_moments)
from .oracle import TruncationError, build_truncated, oracle_stationary, oracle_transient
from .perf import loss_metrics
from .sim import SimConfig, run_ensemble

EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_COMPARE = 3


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _emit(header, rows, out) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


def _load(path) -> RunConfig:
    try:
        return parse_config(path)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


def _parse_caps(text: str, n: int) -> tuple[int, ...]:
    try:
        caps = tuple(int(c) for c in text.split(","))
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {text!r}")
    if len(caps) == 1:
        caps = caps * n
    if len(caps) != n:
        raise click.BadParameter(f"expected {n} caps")
    return caps


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (NumericalFailure, TruncationError, CapacityError) as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)
        except (ConfigError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)


@click.group(cls=_Group)
def main():
    """Infinite-server queueing networks with failing links."""


_config_arg = click.argument("config", type=click.Path(exists=True, dir_okay=False))
_out_opt = click.option("--out", type=click.Path(dir_okay=False), default=None,
                        help="Write CSV here instead of stdout.")


@main.command()
@_config_arg
@_out_opt
def validate(config, out):
    """Check a network file.  CSV: key,value."""
    cfg = _load(config)
    net = cfg.net
    rows = [("nodes", net.n), ("links", len(net.links())), ("blocks", net.K),
            ("background_states", 2 ** net.K), ("N", cfg.N), ("alpha", cfg.alpha)]
    _emit(["key", "value"], rows, out)


def _time_option(stationary, t):
    if stationary == (t is not None):
        raise click.UsageError("give exactly one of --stationary and --t")
    return STATIONARY if stationary else t


@main.command()
@_config_arg
@click.option("--stationary", is_flag=True, help="Stationary moments.")
@click.option("--t", type=float, default=None, help="Time of the transient moments.")
@click.option("--order", type=int, default=2, show_default=True)
@click.option("--loss", is_flag=True, help="Include the loss count (transient only).")
@_out_opt
def moments(config, stationary, t, order, loss, out):
    """Factorial moments E[prod (M_i)_{r_i}] up to a total order.

    CSV: r_<node>... (r_loss first with --loss), value.
    """
    cfg = _load(config)
    net = cfg.net
    when = _time_option(stationary, t)
    chain = BackgroundChain.from_network(net)
    table = factorial_moments(net, chain, order, when, m0=cfg.m0, k0=cfg.k0, include_loss=loss)
    header = (["r_loss"] if loss else []) + [f"r_{nm}" for nm in net.names] + ["value"]
    rows = []
    for level in range(order + 1):
        for r in multi_indices(net.n, level, loss):
            rows.append(list(r) + [table.value(r)])
    _emit(header, rows, out)


@main.command()
@_config_arg
@_out_opt
def loss(config, out):
    """Loss probability and mean time until loss per entry node and link state.

    CSV: node,state,omega,tau,sigma; the row with node '*' holds the aggregates.
    """
    cfg = _load(config)
    net = cfg.net
    m = loss_metrics(net, BackgroundChain.from_network(net))
    rows = [(nm, k, m.omega[i, k], m.tau[i, k], m.sigma[i, k])
            for i, nm in enumerate(net.names) for k in range(m.omega.shape[1])]
    rows.append(("*", "", m.omega_agg, m.tau_agg, None))
    _emit(["node", "state", "omega", "tau", "sigma"], rows, out)


def _grid(t, t_max, steps):
    if t is not None:
        return [t]
    if t_max is None:
        raise click.UsageError("give --t or --t-max")
    return list(np.linspace(0.0, t_max, steps + 1))


@main.command()
@_config_arg
@click.option("--t", type=float, default=None)
@click.option("--t-max", type=float, default=None, help="Grid end (with --steps).")
@click.option("--steps", type=int, default=100, show_default=True)
@_out_opt
def fluid(config, t, t_max, steps, out):
    """Fluid limit rho(t) from an empty start.  CSV: t,rho_<node>..."""
    cfg = _load(config)
    net = cfg.net
    chain = BackgroundChain.from_network(net)
    rows = [[s] + list(fluid_limit(net, chain, s).rho) for s in _grid(t, t_max, steps)]
    _emit(["t"] + [f"rho_{nm}" for nm in net.names], rows, out)


@main.command()
@_config_arg
@click.option("--alpha", "regime", type=click.Choice(["lt1", "eq1", "gt1"], case_sensitive=False),
              default="eq1", show_default=True, help="Regime of the link-rate scaling.")
@click.option("--t", type=float, default=None)
@click.option("--stationary", is_flag=True)
@_out_opt
def fclt(config, regime, t, stationary, out):
    """Limiting covariance of the centred, scaled counts.  CSV: t,i,j,cov."""
    cfg = _load(config)
    net = cfg.net
    chain = BackgroundChain.from_network(net)
    when = _time_option(stationary, t)
    reg = Regime.parse(regime)
    res = stationary_fclt_covariance(net, chain, reg) if when == STATIONARY \
        else fclt_covariance(net, chain, when, reg)
    label = "inf" if when == STATIONARY else when
    rows = [(label, net.names[i], net.names[j], res.cov[i, j])
            for i in range(net.n) for j in range(net.n)]
    _emit(["t", "i", "j", "cov"], rows, out)


@main.command()
@_config_arg
@click.option("--caps", required=True, help="Queue caps, comma separated (one value for all).")
@click.option("--t", type=float, default=None, help="Transient time (stationary if omitted).")
@click.option("--marginal", default=None, help="Emit the marginal law of this node instead.")
@_out_opt
def oracle(config, caps, t, marginal, out):
    """Exact truncated chain.  CSV: quantity,value (or m,p with --marginal)."""
    cfg = _load(config)
    net = cfg.net
    chain = BackgroundChain.from_network(net)
    tc = build_truncated(net, chain, _parse_caps(caps, net.n))
    dist = oracle_stationary(tc) if t is None else oracle_transient(tc, t, cfg.m0, cfg.k0)
    if marginal is not None:
        p = dist.marginal(net.index(marginal))
        _emit(["m", "p"], list(enumerate(p)), out)
        return
    means, cov = dist.means(), dist.covariance()
    rows = [(f"mean_{nm}", means[i]) for i, nm in enumerate(net.names)]
    rows += [(f"cov_{net.names[i]}_{net.names[j]}", cov[i, j])
             for i in range(net.n) for j in range(i, net.n)]
    rows += [("loss_rate", dist.loss_rate), ("boundary_mass", dist.boundary_mass)]
    _emit(["quantity", "value"], rows, out)


def _sim_config(cfg, horizon, grid, reps, seed, N, alpha):
    return SimConfig(cfg.net, horizon, grid, reps, seed, N or cfg.N,
                     cfg.alpha if alpha is None else alpha, cfg.m0, cfg.k0)


@main.command()
@_config_arg
@click.option("--horizon", type=float, required=True)
@click.option("--grid", type=float, required=True, help="Sampling step.")
@click.option("--reps", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--N", "N", type=int, default=None, help="Scaling (default from the file).")
@click.option("--alpha", type=float, default=None, help="Link-rate exponent (default from the file).")
@_out_opt
def simulate(config, horizon, grid, reps, seed, N, alpha, out):
    """Monte-Carlo ensemble.

    CSV: t, mean_<node>, se_<node> for every node, loss_mean, loss_se.
    """
    cfg = _load(config)
    ens = run_ensemble(_sim_config(cfg, horizon, grid, reps, seed, N, alpha))
    names = cfg.net.names
    header = ["t"] + [f"mean_{nm}" for nm in names] + [f"se_{nm}" for nm in names] \
        + ["loss_mean", "loss_se"]
    rows = [[s] + list(ens.mean[g]) + list(ens.mean_se[g]) + [ens.loss_mean[g], ens.loss_se[g]]
            for g, s in enumerate(ens.times)]
    _emit(header, rows, out)


def tandem_params(cfg: RunConfig) -> TandemParams:
    """Parameters of a two-node retry tandem ``1 -> 2`` with one block."""
    net = cfg.net
    ok = (net.n == 2 and net.K == 1 and net.links() == [(0, 1)]
          and net.f[0, 1] == 0.0 and net.link_block[0, 1] == 0
          and net.mu_exit[0] == 0.0 and net.lam[1] == 0.0)
    if not ok:
        raise ConfigError("network", "tandem-pmf needs a retry tandem 1 -> 2 with one block")
    return TandemParams(float(net.lam[0]), float(net.mu[0, 1]), float(net.mu_exit[1]),
                        float(net.q_up[0]), float(net.q_down[0]))


@main.command("tandem-pmf")
@_config_arg
@click.option("--max-m", type=int, default=None, help="Largest m (default: tail below 1e-12).")
@_out_opt
def tandem_pmf(config, max_m, out):
    """Stationary law of node 1 in a retry tandem.  CSV: m,p."""
    cfg = _load(config)
    params = tandem_params(cfg)
    p = tandem_node1_pmf(params) if max_m is None \
        else tandem_node1_pmf(params, np.arange(max_m + 1))
    _emit(["m", "p"], list(enumerate(p)), out)


@dataclass(frozen=True)
class ReportRow:
    name: str
    analytic: float
    oracle: float | None
    sim: float | None
    sim_se: float | None
    tol: float

    @property
    def passed(self) -> bool:
        ok = True
        if self.oracle is not None:
            ok &= abs(self.analytic - self.oracle) <= self.tol
        if self.sim is not None:
            ok &= abs(self.analytic - self.sim) <= 3.0 * self.sim_se
        return bool(ok)


@dataclass(frozen=True)
class RunReport:
    rows: tuple[ReportRow, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def table(self):
        header = ["quantity", "analytic", "oracle", "sim", "sim_se", "tol", "pass"]
        body = [(r.name, r.analytic, r.oracle, r.sim, r.sim_se, r.tol, r.passed)
                for r in self.rows]
        return header, body


def build_report(cfg: RunConfig, caps, t: float, reps: int, seed: int,
                 tol: float = 1e-6) -> RunReport:
    """Stationary and transient means and the loss fraction from all three engines.

    The simulation runs the file's network unscaled from its initial
    condition and is compared at time ``t``.
    """
    net = cfg.net
    chain = BackgroundChain.from_network(net)
    tc = build_truncated(net, chain, caps)
    rows = []
    st = stationary_first_moments(net, chain).means
    ost = oracle_stationary(tc)
    for i, nm in enumerate(net.names):
        rows.append(ReportRow(f"mean_{nm}@stationary", st[i], ost.means()[i], None, None, tol))
    lam_bar = net.lam_total
    if lam_bar > 0:
        omega = loss_metrics(net, chain).omega_agg
        rows.append(ReportRow("loss_fraction", omega, ost.loss_rate / lam_bar, None, None, tol))
    tr = transient_first_moments(net, chain, t, cfg.m0, cfg.k0).means
    otr = oracle_transient(tc, t, cfg.m0, cfg.k0)
    ens = run_ensemble(SimConfig(net, t, t, reps, seed, 1, 1.0, cfg.m0, cfg.k0))
    for i, nm in enumerate(net.names):
        rows.append(ReportRow(f"mean_{nm}@t={t!r}", tr[i], otr.means()[i],
                              ens.mean[-1, i], ens.mean_se[-1, i], tol))
    el = loss_mean(net, chain, t, cfg.m0, cfg.k0)
    rows.append(ReportRow(f"lost@t={t!r}", el, None, ens.loss_mean[-1], ens.loss_se[-1], tol))
    return RunReport(tuple(rows))


@main.command()
@_config_arg
@click.option("--caps", required=True, help="Oracle queue caps, comma separated.")
@click.option("--reps", type=int, default=5000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--t", type=float, default=2.0, show_default=True, help="Comparison time.")
@click.option("--tol", type=float, default=1e-6, show_default=True,
              help="Allowed analytic-oracle difference.")
@_out_opt
def compare(config, caps, reps, seed, t, tol, out):
    """Confront solver, truncated oracle and simulation.

    CSV: quantity,analytic,oracle,sim,sim_se,tol,pass.  Exit 3 if any row fails.
    """
    cfg = _load(config)
    report = build_report(cfg, _parse_caps(caps, cfg.net.n), t, reps, seed, tol)
    _emit(*report.table(), out)
    if not report.passed:
        click.echo("comparison failed", err=True)
        sys.exit(EXIT_COMPARE)


if __name__ == "__main__":
    main()
