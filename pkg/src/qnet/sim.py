"""Event-driven simulation of the network with its link blocks.

Random streams
--------------
Replication ``r`` of a run with seed ``s`` draws from
``Generator(Philox(SeedSequence(s, spawn_key=(r,))))``.  Philox is a
counter-based generator, so streams of different replications are
independent and a replication gives the same path whatever thread runs it.
Results are reduced in replication order, which makes an ensemble
independent of the thread schedule.  The number of worker threads is
``os.cpu_count()`` capped by the ``QNET_THREADS`` environment variable.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .background import BackgroundChain
from .model import Network
from .moments import STATIONARY

STREAM_TAGGED = 1 << 32
"""Offset added to the spawn key of tagged-client streams."""


def rep_generator(seed: int, rep: int) -> np.random.Generator:
    """The documented stream of replication ``rep``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(rep,))))


def thread_count() -> int:
    cpus = os.cpu_count() or 1
    cap = os.environ.get("QNET_THREADS")
    if cap:
        try:
            cpus = min(cpus, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"QNET_THREADS must be an integer, got {cap!r}") from None
    return cpus


@njit(nogil=True, cache=True)
def _is_up(x, blk, K):
    if blk == -1:
        return True
    return (x >> (K - 1 - blk)) & 1 == 1


@njit(nogil=True, cache=True)
def _path(lam, mu_exit, mu, mu_tot, f, link_block, q_up, q_down, m0, x0, grid, rng,
          out_m, out_l, out_x, pasta):
    n = lam.size
    K = q_up.size
    m = m0.copy()
    x = x0
    lost = 0
    lam_tot = lam.sum()
    t = 0.0
    g = 0
    G = grid.size
    while g < G:
        rserv = 0.0
        for i in range(n):
            rserv += m[i] * mu_tot[i]
        rflip = 0.0
        for b in range(K):
            if (x >> (K - 1 - b)) & 1:
                rflip += q_down[b]
            else:
                rflip += q_up[b]
        R = lam_tot + rserv + rflip
        if R > 0.0:
            t += rng.standard_exponential() / R
        else:
            t = np.inf
        # cadlag sampling: grid points before the event see the current state
        while g < G and grid[g] < t:
            for i in range(n):
                out_m[g, i] = m[i]
            out_l[g] = lost
            out_x[g] = x
            g += 1
        if g >= G:
            break
        u = rng.random() * R
        if u < lam_tot:
            i = 0
            acc = lam[0]
            while u >= acc and i < n - 1:
                i += 1
                acc += lam[i]
            m[i] += 1
            pasta[x] += 1
        elif u < lam_tot + rserv:
            u -= lam_tot
            i = 0
            acc = m[0] * mu_tot[0]
            while u >= acc and i < n - 1:
                i += 1
                acc += m[i] * mu_tot[i]
            # position inside node i's share, reused to pick the destination
            v = (u - (acc - m[i] * mu_tot[i])) / m[i]
            if v < mu_exit[i]:
                m[i] -= 1
            else:
                v -= mu_exit[i]
                j = -1
                for jj in range(n):
                    if mu[i, jj] > 0.0:
                        j = jj
                        if v < mu[i, jj]:
                            break
                        v -= mu[i, jj]
                if _is_up(x, link_block[i, j], K):
                    m[i] -= 1
                    m[j] += 1
                else:
                    fij = f[i, j]
                    if fij >= 1.0 or (fij > 0.0 and rng.random() < fij):
                        m[i] -= 1
                        lost += 1
                    # otherwise a retry: nothing changes
        else:
            u -= lam_tot + rserv
            b = 0
            while b < K - 1:
                rate = q_down[b] if (x >> (K - 1 - b)) & 1 else q_up[b]
                if u < rate:
                    break
                u -= rate
                b += 1
            x ^= 1 << (K - 1 - b)


@njit(nogil=True, cache=True)
def _tagged(node_cdf, state_cdf, mu_exit, mu, mu_tot, f, link_block, q_up, q_down, count,
            rng, t_out, lost_out):
    n = mu_exit.size
    K = q_up.size
    for c in range(count):
        u = rng.random()
        i = 0
        while i < n - 1 and u >= node_cdf[i]:
            i += 1
        u = rng.random()
        x = 0
        while x < state_cdf.size - 1 and u >= state_cdf[x]:
            x += 1
        t = 0.0
        lost = False
        while mu_tot[i] > 0.0:
            rflip = 0.0
            for b in range(K):
                rflip += q_down[b] if (x >> (K - 1 - b)) & 1 else q_up[b]
            R = mu_tot[i] + rflip
            t += rng.standard_exponential() / R
            u = rng.random() * R
            if u < mu_tot[i]:
                if u < mu_exit[i]:
                    break
                v = u - mu_exit[i]
                j = -1
                for jj in range(n):
                    if mu[i, jj] > 0.0:
                        j = jj
                        if v < mu[i, jj]:
                            break
                        v -= mu[i, jj]
                if _is_up(x, link_block[i, j], K):
                    i = j
                else:
                    fij = f[i, j]
                    if fij >= 1.0 or (fij > 0.0 and rng.random() < fij):
                        lost = True
                        break
            else:
                u -= mu_tot[i]
                b = 0
                while b < K - 1:
                    rate = q_down[b] if (x >> (K - 1 - b)) & 1 else q_up[b]
                    if u < rate:
                        break
                    u -= rate
                    b += 1
                x ^= 1 << (K - 1 - b)
        t_out[c] = t
        lost_out[c] = lost


@dataclass(frozen=True)
class _Arrays:
    lam: np.ndarray
    mu_exit: np.ndarray
    mu: np.ndarray
    mu_tot: np.ndarray
    f: np.ndarray
    link_block: np.ndarray
    q_up: np.ndarray
    q_down: np.ndarray

    @classmethod
    def of(cls, net: Network) -> "_Arrays":
        c = np.ascontiguousarray
        return cls(c(net.lam, dtype=np.float64), c(net.mu_exit, dtype=np.float64),
                   c(net.mu, dtype=np.float64), c(net.mu_total, dtype=np.float64),
                   c(net.f, dtype=np.float64), c(net.link_block, dtype=np.int64),
                   c(net.q_up, dtype=np.float64), c(net.q_down, dtype=np.float64))


@dataclass(frozen=True)
class SimConfig:
    net: Network
    """The unscaled network; ``N`` and ``alpha`` are applied by the simulator."""
    horizon: float
    grid: float
    reps: int = 1
    seed: int = 0
    N: int = 1
    alpha: float = 1.0
    m0: tuple | None = None
    """Initial counts; empty when ``None``."""
    k0: int | str = STATIONARY
    """Initial background state, or ``"stationary"`` for a draw from its law."""
    keep_paths: bool = False

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be > 0")
        if not self.grid > 0:
            raise ValueError("grid must be > 0")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.m0 is not None and (len(self.m0) != self.net.n or min(self.m0) < 0):
            raise ValueError("m0 needs one nonnegative count per node")
        if not isinstance(self.k0, str) and not 0 <= int(self.k0) < 2 ** self.net.K:
            raise ValueError("k0 is not a background state")

    @property
    def scaled(self) -> Network:
        return self.net.with_scaling(self.N, self.alpha)

    @property
    def times(self) -> np.ndarray:
        steps = int(round(self.horizon / self.grid))
        if not np.isclose(steps * self.grid, self.horizon):
            raise ValueError("horizon must be a multiple of grid")
        return np.linspace(0.0, self.horizon, steps + 1)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    counts: np.ndarray
    """``(grid points, n)``."""
    lost: np.ndarray
    background: np.ndarray
    arrivals_by_state: np.ndarray
    """Number of arrivals that found the links in each background state."""


def _initial(config: SimConfig, rng: np.random.Generator, chain: BackgroundChain):
    m0 = np.zeros(config.net.n, dtype=np.int64) if config.m0 is None \
        else np.asarray(config.m0, dtype=np.int64)
    if isinstance(config.k0, str):
        if config.k0 != STATIONARY:
            raise ValueError(f"k0 must be an integer or {STATIONARY!r}")
        k0 = int(np.searchsorted(np.cumsum(chain.pi), rng.random(), side="right"))
        k0 = min(k0, chain.state_count - 1)
    else:
        k0 = int(config.k0)
    return m0, k0


def _run(config: SimConfig, arrays: _Arrays, chain: BackgroundChain, times, rep: int):
    rng = rep_generator(config.seed, rep)
    m0, k0 = _initial(config, rng, chain)
    G, n = times.size, config.net.n
    out_m = np.zeros((G, n), dtype=np.int64)
    out_l = np.zeros(G, dtype=np.int64)
    out_x = np.zeros(G, dtype=np.int64)
    pasta = np.zeros(chain.state_count, dtype=np.int64)
    a = arrays
    _path(a.lam, a.mu_exit, a.mu, a.mu_tot, a.f, a.link_block, a.q_up, a.q_down,
          m0, k0, times, rng, out_m, out_l, out_x, pasta)
    return out_m, out_l, out_x, pasta


def run_one(config: SimConfig, rep: int = 0) -> Trajectory:
    """One replication, sampled on ``config.times`` (last value before each grid time)."""
    net = config.scaled
    chain = BackgroundChain.from_network(net)
    times = config.times
    m, l, x, pasta = _run(config, _Arrays.of(net), chain, times, rep)
    return Trajectory(times, m, l, x, pasta)


@dataclass(frozen=True)
class SimEnsemble:
    times: np.ndarray
    reps: int
    mean: np.ndarray
    """``(G, n)`` sample means of the counts."""
    mean_se: np.ndarray
    cov: np.ndarray
    """``(G, n, n)`` sample covariances."""
    cov_se: np.ndarray
    loss_mean: np.ndarray
    loss_se: np.ndarray
    arrivals_by_state: np.ndarray
    """Arrival epochs per background state, summed over replications."""
    counts: np.ndarray | None = field(default=None, repr=False)
    """``(reps, G, n)`` raw samples when ``keep_paths`` was set."""
    lost: np.ndarray | None = field(default=None, repr=False)


def _cov_with_se(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample covariance of rows of ``x`` and the standard error of each entry."""
    r = x.shape[0]
    d = x - x.mean(axis=0)
    prod = d[:, :, None] * d[:, None, :]
    cov = prod.sum(axis=0) / max(r - 1, 1)
    se = prod.std(axis=0, ddof=1) / np.sqrt(r) if r > 1 else np.full_like(cov, np.nan)
    return cov, se


def run_ensemble(config: SimConfig) -> SimEnsemble:
    """Independent replications, run on up to :func:`thread_count` threads."""
    net = config.scaled
    chain = BackgroundChain.from_network(net)
    arrays = _Arrays.of(net)
    times = config.times
    G, n, R = times.size, net.n, config.reps
    counts = np.zeros((R, G, n), dtype=np.int64)
    lost = np.zeros((R, G), dtype=np.int64)
    pasta = np.zeros((R, chain.state_count), dtype=np.int64)

    def work(chunk):
        for rep in chunk:
            m, l, _, p = _run(config, arrays, chain, times, rep)
            counts[rep], lost[rep], pasta[rep] = m, l, p

    workers = min(thread_count(), R)
    chunks = np.array_split(np.arange(R), workers)
    if workers == 1:
        work(chunks[0])
    else:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(work, chunks))

    c = counts.astype(float)
    mean = c.mean(axis=0)
    mean_se = c.std(axis=0, ddof=1) / np.sqrt(R) if R > 1 else np.full_like(mean, np.nan)
    cov = np.empty((G, n, n))
    cov_se = np.empty((G, n, n))
    for g in range(G):
        cov[g], cov_se[g] = _cov_with_se(c[:, g])
    lf = lost.astype(float)
    loss_se = lf.std(axis=0, ddof=1) / np.sqrt(R) if R > 1 else np.full(G, np.nan)
    keep = config.keep_paths
    return SimEnsemble(times, R, mean, mean_se, cov, cov_se, lf.mean(axis=0), loss_se,
                       pasta.sum(axis=0), counts if keep else None, lost if keep else None)


@dataclass(frozen=True)
class FcltSample:
    time: float
    samples: np.ndarray
    """``(reps, n)`` values of ``(M^(N)(t) - N rho(t)) / sqrt(N)``."""
    mean: np.ndarray
    mean_se: np.ndarray
    cov: np.ndarray
    cov_se: np.ndarray


def fclt_empirical(config: SimConfig, t: float, rho: np.ndarray) -> FcltSample:
    """Centred and scaled counts at time ``t``; ``rho`` is the fluid level at ``t``.

    The run starts empty; ``t`` must be a grid time of ``config``.
    """
    if config.m0 is not None and any(config.m0):
        raise ValueError("the fluctuation comparison needs an empty start")
    times = config.times
    g = int(np.argmin(np.abs(times - t)))
    if not np.isclose(times[g], t):
        raise ValueError(f"t = {t} is not a grid time")
    ens = run_ensemble(SimConfig(config.net, config.horizon, config.grid, config.reps,
                                 config.seed, config.N, config.alpha, None, config.k0,
                                 keep_paths=True))
    N = config.N
    x = (ens.counts[:, g].astype(float) - N * np.asarray(rho)) / np.sqrt(N)
    cov, cov_se = _cov_with_se(x)
    return FcltSample(float(t), x, x.mean(axis=0), x.std(axis=0, ddof=1) / np.sqrt(len(x)),
                      cov, cov_se)


@dataclass(frozen=True)
class TaggedEstimate:
    clients: int
    omega: float
    omega_se: float
    tau: float
    """Estimate of ``E[T 1{lost}]``."""
    tau_se: float


def tagged_clients(net: Network, clients: int, seed: int = 0, chunks: int = 16) -> TaggedEstimate:
    """Follow independent clients from arrival until they leave or are lost.

    Clients do not interact in an infinite-server network, so each one is
    simulated alone.  It enters node i with probability proportional to
    ``lam_i`` and sees the stationary link law (Poisson arrivals see time
    averages).  Chunk ``c`` uses the stream of spawn key ``STREAM_TAGGED + c``.
    """
    if net.lam_total <= 0:
        raise ValueError("no arrivals")
    chain = BackgroundChain.from_network(net)
    a = _Arrays.of(net)
    node_cdf = np.cumsum(net.lam / net.lam_total)
    state_cdf = np.cumsum(chain.pi)
    t_out = np.zeros(clients)
    lost_out = np.zeros(clients, dtype=np.bool_)
    bounds = np.linspace(0, clients, min(chunks, clients) + 1).astype(int)

    def work(c):
        lo, hi = bounds[c], bounds[c + 1]
        rng = rep_generator(seed, STREAM_TAGGED + c)
        _tagged(node_cdf, state_cdf, a.mu_exit, a.mu, a.mu_tot, a.f, a.link_block,
                a.q_up, a.q_down, hi - lo, rng, t_out[lo:hi], lost_out[lo:hi])

    with ThreadPoolExecutor(min(thread_count(), len(bounds) - 1)) as pool:
        list(pool.map(work, range(len(bounds) - 1)))
    lostf = lost_out.astype(float)
    tl = t_out * lostf
    se = np.sqrt(clients)
    return TaggedEstimate(clients, lostf.mean(), lostf.std(ddof=1) / se, tl.mean(),
                          tl.std(ddof=1) / se)
