"""Exact CTMC on a truncated state space, used as ground truth.

States are ``(m_1, ..., m_n, k)`` with ``0 <= m_i <= cap_i``.  The flat index is
``k + Kbar * (m_1 + (cap_1 + 1) * (m_2 + ...))``, i.e. the background state
varies fastest and node 1 next.

Truncation policy: an arrival to a full queue is dropped, and a customer
jumping into a full queue leaves its origin and disappears (it is not
counted as lost).  The generator stays conservative; the quality of the
truncation is reported as the probability mass on states with some queue at
its cap.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from math import prod

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import scipy.stats

from .background import BackgroundChain
from .model import Network, state_rates
from .moments import STATIONARY, _initial_distribution, falling_factorial

MAX_STATES = 2_000_000
BOUNDARY_WARN = 1e-6
BOUNDARY_ERROR = 1e-3


class TruncationError(RuntimeError):
    """The truncated chain is too large or loses too much mass at its boundary."""


@dataclass(frozen=True, eq=False)
class TruncatedChain:
    net: Network
    chain: BackgroundChain
    caps: tuple[int, ...]
    generator: sp.csr_matrix
    loss_flux: np.ndarray
    """Per-state loss rate ``sum_i m_i * loss_ik``."""
    counts: np.ndarray
    """``(states, n)`` queue lengths of every state."""
    background: np.ndarray
    """``(states,)`` background state of every state."""

    @property
    def state_count(self) -> int:
        return self.generator.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c + 1 for c in self.caps) + (self.chain.state_count,)

    def flat_index(self, m, k: int) -> int:
        idx = 0
        for i in reversed(range(len(self.caps))):
            idx = idx * (self.caps[i] + 1) + int(m[i])
        return idx * self.chain.state_count + int(k)

    def on_boundary(self) -> np.ndarray:
        return np.any(self.counts == np.array(self.caps)[None, :], axis=1)


def build_truncated(net: Network, chain: BackgroundChain, caps) -> TruncatedChain:
    caps = tuple(int(c) for c in caps)
    if len(caps) != net.n or any(c < 0 for c in caps):
        raise ValueError("need one nonnegative cap per node")
    Kb = chain.state_count
    size = Kb * prod(c + 1 for c in caps)
    if size > MAX_STATES:
        raise TruncationError(f"{size} states exceed the limit of {MAX_STATES}")
    rates = state_rates(net)

    grids = np.meshgrid(*[np.arange(c + 1) for c in reversed(caps)], indexing="ij")
    # last node varies slowest: reverse so that column i is node i
    counts = np.stack([g.reshape(-1) for g in reversed(grids)], axis=1)
    counts = np.repeat(counts, Kb, axis=0)
    bg = np.tile(np.arange(Kb), size // Kb)
    strides = np.ones(net.n, dtype=np.int64)
    for i in range(1, net.n):
        strides[i] = strides[i - 1] * (caps[i - 1] + 1)
    strides *= Kb
    src = np.arange(size)
    capv = np.array(caps)

    rows, cols, vals = [], [], []

    def add(mask, dst, rate):
        sel = mask & (rate > 0)
        rows.append(src[sel])
        cols.append(dst[sel])
        vals.append(rate[sel])

    for i in range(net.n):
        m_i = counts[:, i]
        # arrivals
        add(m_i < capv[i], src + strides[i], np.full(size, net.lam[i]))
        # exits and losses, both remove the customer
        out_rate = m_i * (rates.exit[bg, i] + rates.loss[bg, i])
        add(m_i > 0, src - strides[i], out_rate)
        for j in range(net.n):
            if j == i or net.mu[i, j] == 0:
                continue
            jr = m_i * rates.mu_plus[bg, i, j]
            full = counts[:, j] >= capv[j]
            add((m_i > 0) & ~full, src - strides[i] + strides[j], jr)
            add((m_i > 0) & full, src - strides[i], jr)
    Q = np.asarray(chain.Q)
    for k in range(Kb):
        for l in range(Kb):
            if k != l and Q[k, l] > 0:
                add(bg == k, src - k + l, np.full(size, Q[k, l]))

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    G = sp.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()
    G = G - sp.diags(np.asarray(G.sum(axis=1)).ravel())
    loss_flux = (counts * rates.loss[bg]).sum(axis=1)
    return TruncatedChain(net, chain, caps, G.tocsr(), loss_flux, counts, bg)


@dataclass(frozen=True, eq=False)
class OracleDistribution:
    tc: TruncatedChain
    p: np.ndarray
    """Flat probability vector over the truncated states."""
    time: float | None = None

    @property
    def boundary_mass(self) -> float:
        return float(self.p[self.tc.on_boundary()].sum())

    def joint(self) -> np.ndarray:
        """Probabilities as an array of shape ``(cap_1+1, ..., cap_n+1, Kbar)``."""
        Kb = self.tc.chain.state_count
        rev = tuple(c + 1 for c in reversed(self.tc.caps))
        arr = self.p.reshape(rev + (Kb,))
        n = len(self.tc.caps)
        return np.transpose(arr, tuple(reversed(range(n))) + (n,))

    def marginal(self, i: int) -> np.ndarray:
        out = np.zeros(self.tc.caps[i] + 1)
        np.add.at(out, self.tc.counts[:, i], self.p)
        return out

    def background_law(self) -> np.ndarray:
        return np.bincount(self.tc.background, weights=self.p,
                           minlength=self.tc.chain.state_count)

    def factorial_moment(self, r) -> np.ndarray:
        """``E[prod_i (M_i)_{r_i} 1{X = k}]`` per background state."""
        w = np.ones(self.tc.state_count)
        for i, ri in enumerate(r):
            if ri:
                m = self.tc.counts[:, i]
                w = w * np.array([falling_factorial(int(x), int(ri)) for x in range(max(self.tc.caps[i], 0) + 1)])[m]
        return np.bincount(self.tc.background, weights=w * self.p,
                           minlength=self.tc.chain.state_count)

    def means(self) -> np.ndarray:
        return (self.tc.counts * self.p[:, None]).sum(axis=0)

    def covariance(self) -> np.ndarray:
        m = self.means()
        c = self.tc.counts.astype(float)
        return (c * self.p[:, None]).T @ c - np.outer(m, m)

    @property
    def loss_rate(self) -> float:
        """Throughput of lost customers under this distribution."""
        return float(self.p @ self.tc.loss_flux)


def _check_boundary(dist: OracleDistribution) -> None:
    bm = dist.boundary_mass
    if bm > BOUNDARY_ERROR:
        raise TruncationError(f"boundary mass {bm:.3g} exceeds {BOUNDARY_ERROR}; raise the caps")
    if bm > BOUNDARY_WARN:
        warnings.warn(f"boundary mass {bm:.3g} exceeds {BOUNDARY_WARN}", RuntimeWarning,
                      stacklevel=3)


def oracle_stationary(tc: TruncatedChain, check: bool = True) -> OracleDistribution:
    """Stationary law by a direct sparse solve of ``p G = 0, sum p = 1``.

    The unnormalized solution with ``p[0] = 1`` is obtained from the reduced
    system without row and column 0, then normalized.
    """
    A = tc.generator.T.tocsc()
    rest = spla.spsolve(A[1:, 1:].tocsc(), -A[1:, 0].toarray().ravel())
    p = np.concatenate([[1.0], np.atleast_1d(rest)])
    p = np.clip(p, 0.0, None)
    p /= p.sum()
    dist = OracleDistribution(tc, p)
    if check:
        _check_boundary(dist)
    return dist


def initial_state_distribution(tc: TruncatedChain, m0=None, k0=STATIONARY) -> np.ndarray:
    m0 = np.zeros(len(tc.caps), dtype=int) if m0 is None else np.asarray(m0, dtype=int)
    if np.any(m0 > np.array(tc.caps)):
        raise ValueError("initial counts exceed the caps")
    pk = _initial_distribution(k0, tc.chain)
    p = np.zeros(tc.state_count)
    base = tc.flat_index(m0, 0)
    p[base:base + tc.chain.state_count] = pk
    return p


def oracle_transient(tc: TruncatedChain, t: float, m0=None, k0=STATIONARY,
                     tol: float = 1e-10, check: bool = True) -> OracleDistribution:
    """Transient law by uniformization; the Poisson tail dropped is below ``tol``."""
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    p = initial_state_distribution(tc, m0, k0)
    if t == 0:
        return OracleDistribution(tc, p, 0.0)
    diag = -tc.generator.diagonal()
    rate = float(diag.max()) * 1.0001 + 1e-300
    P = (sp.identity(tc.state_count, format="csr") + tc.generator / rate).T.tocsr()
    lt = rate * t
    right = int(scipy.stats.poisson.isf(tol / 2, lt)) + 2
    weights = scipy.stats.poisson.pmf(np.arange(right + 1), lt)
    out = np.zeros_like(p)
    v = p
    for w in weights:
        out += w * v
        v = P @ v
    out /= weights.sum()
    dist = OracleDistribution(tc, out, float(t))
    if check:
        _check_boundary(dist)
    return dist


def _grid(n: int, points) -> np.ndarray:
    return np.array(list(itertools.product(points, repeat=n)), dtype=float)


def pgf_residual(dist: OracleDistribution, z_grid=None) -> float:
    """Largest residual of the stationary generating-function equations.

    For every ``z`` in the grid and background state ``k`` the generating
    function ``phi_k(z)`` and its partial derivatives are evaluated exactly
    from the probabilities and substituted into

    ``0 = sum_i lam_i (z_i - 1) phi_k + sum_{i != j} mu+_ijk (z_j - z_i) d_i phi_k
         + sum_i (mu_i0 + loss_ik) (1 - z_i) d_i phi_k + sum_l q_lk phi_l``.
    """
    tc = dist.tc
    net, chain = tc.net, tc.chain
    rates = state_rates(net)
    n, Kb = net.n, chain.state_count
    if z_grid is None:
        z_grid = _grid(n, (0.0, 0.25, 0.5, 0.75, 1.0))
    z_grid = np.atleast_2d(np.asarray(z_grid, dtype=float))
    counts = tc.counts
    bg = tc.background
    Q = np.asarray(chain.Q)
    worst = 0.0
    for z in z_grid:
        powers = [z[i] ** np.arange(tc.caps[i] + 1) for i in range(n)]
        # d/dz z^m = m z^(m-1), with the m = 0 term identically zero
        dpowers = [np.concatenate([[0.0], np.arange(1, tc.caps[i] + 1) * powers[i][:-1]])
                   for i in range(n)]
        mono = np.ones(tc.state_count)
        for i in range(n):
            mono = mono * powers[i][counts[:, i]]
        phi = np.bincount(bg, weights=dist.p * mono, minlength=Kb)
        dphi = np.empty((n, Kb))
        for i in range(n):
            w = np.ones(tc.state_count)
            for j in range(n):
                w = w * (dpowers[j] if j == i else powers[j])[counts[:, j]]
            dphi[i] = np.bincount(bg, weights=dist.p * w, minlength=Kb)
        res = phi @ Q
        for i in range(n):
            res += net.lam[i] * (z[i] - 1.0) * phi
            res += (rates.exit[:, i] + rates.loss[:, i]) * (1.0 - z[i]) * dphi[i]
            for j in range(n):
                if j != i:
                    res += rates.mu_plus[:, i, j] * (z[j] - z[i]) * dphi[i]
        worst = max(worst, float(np.abs(res).max()))
    return worst
