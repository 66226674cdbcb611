"""Factorial moments of the queue lengths (and of the loss count).

The factorial moment ``psi_k(r, t) = E[(L)_{r_0} prod_i (M_i)_{r_i} 1{X(t)=k}]``
obeys a linear ODE whose forcing comes from moments of total order one
lower, so all orders up to ``r_max`` are obtained either level by level
(stationary case) or through one block-triangular exponential (transient case).

Multi-indices are tuples ``(r_1, ..., r_n)``, or ``(r_0, r_1, ..., r_n)`` when
the loss count is included.  Within each total order they are listed in
colexicographic order: sorted by the last coordinate first, then the one
before it, and so on.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb, prod

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .background import BackgroundChain, NumericalFailure
from .model import Network, StateRates, state_rates

STATIONARY = "stationary"

MAX_LEVEL_DIM = 100_000


class CapacityError(RuntimeError):
    """A moment system is too large to assemble."""


def multi_indices(n: int, level: int, include_loss: bool = False) -> list[tuple[int, ...]]:
    """All multi-indices of total order ``level``, colexicographically ordered."""
    d = n + 1 if include_loss else n
    out = []
    for combo in itertools.combinations_with_replacement(range(d), level):
        r = [0] * d
        for pos in combo:
            r[pos] += 1
        out.append(tuple(r))
    out.sort(key=lambda c: c[::-1])
    return out


def index_count(n: int, level: int, include_loss: bool = False) -> int:
    d = n + 1 if include_loss else n
    return comb(d + level - 1, level)


def falling_factorial(m: int, r: int) -> int:
    return prod(range(m - r + 1, m + 1)) if r <= m else 0


def _initial_distribution(k0, chain: BackgroundChain) -> np.ndarray:
    if isinstance(k0, str):
        if k0 != STATIONARY:
            raise ValueError(f"unknown initial background {k0!r}")
        return chain.pi.copy()
    arr = np.asarray(k0, dtype=float)
    if arr.ndim == 0:
        k = int(k0)
        if not 0 <= k < chain.state_count:
            raise IndexError(f"background state {k} out of range")
        p = np.zeros(chain.state_count)
        p[k] = 1.0
        return p
    if arr.shape != (chain.state_count,) or np.any(arr < 0) or abs(arr.sum() - 1) > 1e-12:
        raise ValueError("initial background must be a state, 'stationary', or a distribution")
    return arr


def _initial_counts(m0, n: int) -> np.ndarray:
    if m0 is None:
        return np.zeros(n, dtype=int)
    m0 = np.asarray(m0)
    if m0.shape != (n,) or np.any(m0 < 0) or np.any(m0 != np.round(m0)):
        raise ValueError("initial counts must be n nonnegative integers")
    return m0.astype(int)


# ---------------------------------------------------------------------------
# first moments through the n*K-dimensional system

def first_moment_matrix(net: Network, chain: BackgroundChain,
                        rates: StateRates | None = None) -> np.ndarray:
    """The matrix ``N = M_plus - M_minus + M_0 - Q`` acting on row vectors.

    Row/column ``i * Kbar + k`` refers to node ``i`` in background state ``k``.
    The decay block of node i uses ``sum_j (mu+_ijk + f_ij mu-_ijk)`` so the
    same matrix covers blocked customers that retry.
    """
    rates = rates or state_rates(net)
    n, Kb = net.n, chain.state_count
    Q = np.asarray(chain.Q)
    N = np.zeros((n * Kb, n * Kb))
    for i in range(n):
        bi = slice(i * Kb, (i + 1) * Kb)
        N[bi, bi] = np.diag(rates.decay[:, i]) - Q
        for j in range(n):
            if j != i:
                N[bi, j * Kb:(j + 1) * Kb] = -np.diag(rates.mu_plus[:, i, j])
    return N


@dataclass(frozen=True)
class FirstMoments:
    """``v[i, k] = E[M_i 1{X = k}]``."""

    v: np.ndarray
    time: float | None = None

    @property
    def means(self) -> np.ndarray:
        return self.v.sum(axis=1)

    @property
    def flat(self) -> np.ndarray:
        return self.v.reshape(-1)


def stationary_first_moments(net: Network, chain: BackgroundChain) -> FirstMoments:
    """Solve ``(lambda (x) pi) = v N``."""
    N = first_moment_matrix(net, chain)
    rhs = np.kron(net.lam, chain.pi)
    try:
        v = scipy.linalg.solve(N.T, rhs)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
        raise NumericalFailure("first-moment system is singular") from exc
    if not np.all(np.isfinite(v)):
        raise NumericalFailure("first-moment system is singular")
    return FirstMoments(v.reshape(net.n, chain.state_count))


def transient_first_moments(net: Network, chain: BackgroundChain, t: float,
                            m0=None, k0=STATIONARY) -> FirstMoments:
    """Mean queue lengths at time ``t`` per background state.

    The pair ``(pi(t), v(t))`` satisfies the constant-coefficient system
    ``[pi, v]' = [pi, v] [[Q, lambda (x) I], [0, -N]]``, so one exponential of
    a ``Kbar (n + 1)`` square matrix gives the exact solution.
    """
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    Kb, n = chain.state_count, net.n
    p0 = _initial_distribution(k0, chain)
    m0 = _initial_counts(m0, n)
    N = first_moment_matrix(net, chain)
    G = np.zeros(((n + 1) * Kb, (n + 1) * Kb))
    G[:Kb, :Kb] = chain.Q
    G[:Kb, Kb:] = np.kron(net.lam[None, :], np.eye(Kb))
    G[Kb:, Kb:] = -N
    z0 = np.concatenate([p0, np.kron(m0, p0)])
    z = z0 @ scipy.linalg.expm(G * t)
    return FirstMoments(z[Kb:].reshape(n, Kb), time=float(t))


# ---------------------------------------------------------------------------
# factorial-moment recursion

@dataclass(frozen=True)
class MomentTable:
    """Factorial moments per multi-index and background state.

    ``values[p, k]`` belongs to ``indices[p]``; ``time`` is ``None`` for the
    stationary table.
    """

    n: int
    indices: tuple[tuple[int, ...], ...]
    values: np.ndarray
    time: float | None
    include_loss: bool

    @property
    def max_order(self) -> int:
        return max(sum(r) for r in self.indices)

    def _key(self, r) -> tuple[int, ...]:
        r = tuple(int(x) for x in r)
        if self.include_loss and len(r) == self.n:
            r = (0,) + r
        return r

    def state_values(self, r) -> np.ndarray:
        key = self._key(r)
        try:
            return self.values[self._lookup[key]]
        except KeyError:
            raise KeyError(f"multi-index {key} not in table") from None

    def value(self, r) -> float:
        """Factorial moment summed over background states."""
        return float(self.state_values(r).sum())

    @property
    def _lookup(self) -> dict:
        lk = self.__dict__.get("_lk")
        if lk is None:
            lk = {r: p for p, r in enumerate(self.indices)}
            object.__setattr__(self, "_lk", lk)
        return lk


def _unit(d: int, pos: int) -> np.ndarray:
    e = np.zeros(d, dtype=int)
    e[pos] = 1
    return e


def _level_operators(net: Network, chain: BackgroundChain, rates: StateRates,
                     cur: list, prev: list, include_loss: bool):
    """Same-level operator ``A`` and forcing ``B`` for ``x' = A x + B y``.

    ``x`` stacks ``psi_k(r)`` for the current level at position ``s*Kbar + k``,
    ``y`` does the same for the previous level.
    """
    Kb, n = chain.state_count, net.n
    off = 1 if include_loss else 0
    d = n + off
    pos_cur = {r: s for s, r in enumerate(cur)}
    pos_prev = {r: s for s, r in enumerate(prev)}
    ks = np.arange(Kb)
    Qt = sp.csr_matrix(np.asarray(chain.Q).T)

    a_rows, a_cols, a_vals = [], [], []
    b_rows, b_cols, b_vals = [], [], []

    def add(rows, cols, vals, s_row, s_col, coef):
        rows.append(s_row * Kb + ks)
        cols.append(s_col * Kb + ks)
        vals.append(np.broadcast_to(coef, (Kb,)).astype(float))

    units = [_unit(d, p) for p in range(d)]
    for s, r in enumerate(cur):
        ra = np.array(r)
        q = ra[off:]
        add(a_rows, a_cols, a_vals, s, s, -(rates.decay * q[None, :]).sum(axis=1))
        for i in range(n):
            # arrivals: r_i lambda_i psi(r - e_i)
            if q[i] > 0 and net.lam[i] > 0:
                add(b_rows, b_cols, b_vals, s, pos_prev[tuple(ra - units[off + i])],
                    q[i] * net.lam[i])
            # successful jumps i -> j: r_j mu+_ijk psi(r - e_j + e_i)
            for j in range(n):
                if j == i or q[j] == 0 or net.mu[i, j] == 0:
                    continue
                tgt = tuple(ra - units[off + j] + units[off + i])
                add(a_rows, a_cols, a_vals, s, pos_cur[tgt], q[j] * rates.mu_plus[:, i, j])
            # losses: r_0 f_ij mu-_ijk psi(r - e_0 + e_i)
            if include_loss and r[0] > 0 and np.any(rates.loss[:, i] > 0):
                tgt = tuple(ra - units[0] + units[off + i])
                add(a_rows, a_cols, a_vals, s, pos_cur[tgt], r[0] * rates.loss[:, i])

    size = len(cur) * Kb
    A = sp.coo_matrix((np.concatenate(a_vals), (np.concatenate(a_rows), np.concatenate(a_cols))),
                      shape=(size, size)).tocsr()
    A = A + sp.kron(sp.identity(len(cur)), Qt)
    if b_vals:
        B = sp.coo_matrix((np.concatenate(b_vals),
                           (np.concatenate(b_rows), np.concatenate(b_cols))),
                          shape=(size, len(prev) * Kb)).tocsr()
    else:
        B = sp.csr_matrix((size, len(prev) * Kb))
    return A.tocsr(), B


def _levels(n: int, r_max: int, include_loss: bool, Kb: int = 1) -> list[list]:
    for lv in range(r_max + 1):
        dim = index_count(n, lv, include_loss) * Kb
        if dim > MAX_LEVEL_DIM:
            raise CapacityError(f"level {lv} system has dimension {dim} > {MAX_LEVEL_DIM}")
    return [multi_indices(n, lv, include_loss) for lv in range(r_max + 1)]


def _assemble(net, chain, r_max, include_loss):
    levels = _levels(net.n, r_max, include_loss, chain.state_count)
    rates = state_rates(net)
    ops = [None] + [_level_operators(net, chain, rates, levels[lv], levels[lv - 1], include_loss)
                    for lv in range(1, r_max + 1)]
    return levels, ops


def _table(net, levels, flat, Kb, time, include_loss) -> MomentTable:
    indices = tuple(r for idx in levels for r in idx)
    values = np.asarray(flat).reshape(len(indices), Kb)
    return MomentTable(net.n, indices, values, time, include_loss)


def _stationary_table(net, chain, r_max, include_loss) -> MomentTable:
    if include_loss:
        raise ValueError("the loss count has no stationary distribution")
    levels, ops = _assemble(net, chain, r_max, include_loss)
    y = chain.pi.copy()
    parts = [y]
    for lv in range(1, r_max + 1):
        A, B = ops[lv]
        try:
            x = spla.spsolve(A.tocsc(), -(B @ y))
        except RuntimeError as exc:
            raise NumericalFailure(f"level {lv} system is singular") from exc
        x = np.atleast_1d(x)
        if not np.all(np.isfinite(x)):
            raise NumericalFailure(f"level {lv} system is singular")
        parts.append(x)
        y = x
    return _table(net, levels, np.concatenate(parts), chain.state_count, None, include_loss)


def _augmented(chain, levels, ops) -> sp.csr_matrix:
    blocks = [[None] * len(levels) for _ in levels]
    blocks[0][0] = sp.csr_matrix(np.asarray(chain.Q).T)
    for lv in range(1, len(levels)):
        A, B = ops[lv]
        blocks[lv][lv] = A
        blocks[lv][lv - 1] = B
    if len(levels) == 1:
        return blocks[0][0]
    return sp.bmat(blocks).tocsr()


def _initial_vector(levels, p0, m0, include_loss) -> np.ndarray:
    parts = []
    off = 1 if include_loss else 0
    for idx in levels:
        for r in idx:
            if include_loss and r[0] > 0:
                parts.append(np.zeros_like(p0))
            else:
                c = prod(falling_factorial(int(m), int(ri)) for m, ri in zip(m0, r[off:]))
                parts.append(c * p0)
    return np.concatenate(parts)


def _rk4(G: sp.csr_matrix, z0: np.ndarray, t: float, steps: int) -> np.ndarray:
    h = t / steps
    z = z0.copy()
    for _ in range(steps):
        k1 = G @ z
        k2 = G @ (z + 0.5 * h * k1)
        k3 = G @ (z + 0.5 * h * k2)
        k4 = G @ (z + h * k3)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return z


def _rk4_converged(G, z0, t, rtol=1e-10, max_halvings=12):
    if t == 0:
        return z0.copy()
    scale = max(float(abs(G).sum(axis=1).max()), 1e-12)
    steps = max(8, int(np.ceil(scale * t * 2)))
    z = _rk4(G, z0, t, steps)
    for _ in range(max_halvings):
        steps *= 2
        z2 = _rk4(G, z0, t, steps)
        if np.max(np.abs(z2 - z)) <= rtol * max(1.0, np.max(np.abs(z2))):
            return z2
        z = z2
    raise NumericalFailure("RK4 step halving did not converge")


def _transient_table(net, chain, r_max, t, m0, k0, include_loss, method) -> MomentTable:
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    levels, ops = _assemble(net, chain, r_max, include_loss)
    p0 = _initial_distribution(k0, chain)
    m0 = _initial_counts(m0, net.n)
    G = _augmented(chain, levels, ops)
    z0 = _initial_vector(levels, p0, m0, include_loss)
    if method == "expm":
        z = spla.expm_multiply(G * t, z0) if t > 0 else z0
    elif method == "rk4":
        z = _rk4_converged(G, z0, t)
    else:
        raise ValueError(f"unknown method {method!r}")
    return _table(net, levels, z, chain.state_count, float(t), include_loss)


def factorial_moments(net: Network, chain: BackgroundChain, r_max: int, t=STATIONARY,
                      m0=None, k0=STATIONARY, include_loss: bool = False,
                      method: str = "expm") -> MomentTable:
    """Factorial moments of all total orders ``0..r_max``.

    Parameters
    ----------
    t : float or ``STATIONARY``
    m0, k0 : initial counts and initial background (state index,
        ``STATIONARY``, or a distribution); ignored for the stationary table.
    include_loss : bool
        Add the loss count as coordinate ``r_0``.  Transient only.
    method : ``"expm"`` (exact exponential action) or ``"rk4"`` (step-halving
        cross-check).
    """
    if r_max < 0:
        raise ValueError("r_max must be >= 0")
    if isinstance(t, str):
        if t != STATIONARY:
            raise ValueError(f"unknown time {t!r}")
        return _stationary_table(net, chain, r_max, include_loss)
    return _transient_table(net, chain, r_max, float(t), m0, k0, include_loss, method)


def loss_mean(net: Network, chain: BackgroundChain, t: float, m0=None,
              k0=STATIONARY) -> float:
    """Expected number of customers lost in ``[0, t]``."""
    table = factorial_moments(net, chain, 1, t, m0=m0, k0=k0, include_loss=True)
    return table.value((1,) + (0,) * net.n)


def relaxation_rate(net: Network, chain: BackgroundChain) -> float:
    """Slowest decay rate among the background chain and the first-moment system."""
    ev = np.linalg.eigvals(first_moment_matrix(net, chain))
    return float(min(chain.spectral_gap, ev.real.min()))


def loss_fraction_limit(net: Network, chain: BackgroundChain, t: float | None = None) -> float:
    """``lim E L(t) / (lambda_bar t)`` from the transient loss mean.

    ``E L(t)`` grows linearly up to an additive constant, so the limit is read
    off as the increment over ``[t, 2t]`` divided by ``lambda_bar t``; the
    default ``t`` is ``100 / relaxation_rate``.
    """
    if t is None:
        t = 100.0 / relaxation_rate(net, chain)
    lam_bar = net.lam_total
    if lam_bar == 0:
        return 0.0
    return (loss_mean(net, chain, 2 * t) - loss_mean(net, chain, t)) / (lam_bar * t)


@dataclass(frozen=True)
class CentralMoments:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def var(self) -> np.ndarray:
        return np.diag(self.cov).copy()


def central_moments(table: MomentTable) -> CentralMoments:
    """Means and covariance matrix of the queue lengths from factorial moments."""
    if table.max_order < 2:
        raise ValueError("table needs moments up to order 2")
    n = table.n
    e = np.eye(n, dtype=int)
    mean = np.array([table.value(e[i]) for i in range(n)])
    cov = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            second = table.value(e[i] + e[j])
            c = second - mean[i] * mean[j] + (mean[i] if i == j else 0.0)
            cov[i, j] = cov[j, i] = c
    return CentralMoments(mean, cov)
