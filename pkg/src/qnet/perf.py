"""Loss probability and mean time until loss, seen by a single tagged client.

The tagged client sits at node ``i`` while the links are in state ``k``.  It
leaves the node to the outside at ``mu_i0``, jumps to ``j`` at ``mu+_ijk``, is
lost at ``f_ij mu-_ijk`` and retries (a self-loop, dropped here) at
``(1 - f_ij) mu-_ijk``; meanwhile the links move at the rates of ``Q``.
Both metrics are absorption functionals of this chain and solve linear
systems with the same matrix ``A = diag(sigma) - (routing + Q)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .background import BackgroundChain, NumericalFailure
from .model import Network, state_rates


@dataclass(frozen=True)
class LossMetrics:
    omega: np.ndarray
    """``(n, Kbar)`` probability that a client entering node i in state k is lost."""
    omega_agg: float
    tau: np.ndarray
    """``(n, Kbar)`` defective mean ``E[T 1{lost}]``, T the time spent in the network."""
    tau_agg: float
    sigma: np.ndarray
    """``(n, Kbar)`` total rate of state-changing events seen by the tagged client."""

    @property
    def conditional_tau(self) -> np.ndarray:
        """Mean time in the network given that the client is lost (nan where ``omega = 0``)."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.omega > 0, self.tau / self.omega, np.nan)

    @property
    def conditional_tau_agg(self) -> float:
        return self.tau_agg / self.omega_agg if self.omega_agg > 0 else float("nan")


@dataclass(frozen=True)
class _TaggedSystem:
    A: np.ndarray
    loss: np.ndarray
    sigma: np.ndarray
    idle: np.ndarray


def _tagged_system(net: Network, chain: BackgroundChain) -> _TaggedSystem:
    rates = state_rates(net)
    n, Kb = net.n, chain.state_count
    Q = np.asarray(chain.Q)
    qk = -np.diag(Q)
    # unknown (i, k) lives at flat position i * Kb + k
    sigma = (rates.exit + rates.mu_plus.sum(axis=2) + rates.loss).T + qk[None, :]
    A = np.zeros((n * Kb, n * Kb))
    for i in range(n):
        rows = slice(i * Kb, (i + 1) * Kb)
        A[rows, rows] = -(Q - np.diag(np.diag(Q)))
        for j in range(n):
            if j != i:
                A[rows, j * Kb:(j + 1) * Kb] -= np.diag(rates.mu_plus[:, i, j])
    A[np.diag_indices_from(A)] += sigma.ravel()
    # a node without service keeps its client forever: never lost, T 1{lost} = 0
    idle = np.repeat(net.mu_total == 0, Kb)
    A[idle] = 0.0
    A[idle, idle] = 1.0
    loss = rates.loss.T.ravel().copy()
    loss[idle] = 0.0
    _check_dominance(A)
    return _TaggedSystem(A, loss, sigma, idle)


def _check_dominance(A: np.ndarray) -> None:
    """Require weak chained diagonal dominance, which guarantees nonsingularity.

    Every row must be weakly dominant, and from every row a chain of nonzero
    off-diagonal entries must lead to a strictly dominant row.
    """
    diag = np.diag(A)
    off = np.abs(A).sum(axis=1) - np.abs(diag)
    scale = max(1.0, float(np.abs(diag).max()))
    tol = 1e-12 * scale
    if np.any(np.abs(diag) < off - tol):
        raise NumericalFailure("tagged-client matrix is not diagonally dominant")
    strict = np.abs(diag) > off + tol
    reached = strict.copy()
    adj = (np.abs(A) > 0) & ~np.eye(A.shape[0], dtype=bool)
    frontier = strict.copy()
    while frontier.any():
        # rows with an off-diagonal entry pointing into the reached set
        new = adj[:, frontier].any(axis=1) & ~reached
        reached |= new
        frontier = new
    if not reached.all():
        raise NumericalFailure("tagged-client matrix is singular: some states never leave")


def _aggregate(net: Network, chain: BackgroundChain, values: np.ndarray) -> float:
    lam_total = net.lam_total
    if lam_total == 0:
        return 0.0
    return float(chain.pi @ (net.lam @ values) / lam_total)


def loss_metrics(net: Network, chain: BackgroundChain) -> LossMetrics:
    """Loss probabilities and defective mean times until loss."""
    n, Kb = net.n, chain.state_count
    sys = _tagged_system(net, chain)
    lu = scipy.linalg.lu_factor(sys.A)
    omega = scipy.linalg.lu_solve(lu, sys.loss)
    # E[T 1{lost}]: each visit contributes its mean holding time 1/sigma times omega
    rhs = np.where(sys.idle, 0.0, omega)
    tau = scipy.linalg.lu_solve(lu, rhs)
    omega = np.clip(omega, 0.0, 1.0).reshape(n, Kb)
    tau = np.clip(tau, 0.0, None).reshape(n, Kb)
    tau[omega == 0] = 0.0
    return LossMetrics(omega, _aggregate(net, chain, omega), tau,
                       _aggregate(net, chain, tau), sys.sigma)


def loss_probability(net: Network, chain: BackgroundChain) -> LossMetrics:
    """Per-entry-state loss probabilities ``omega_ik`` and their aggregate."""
    return loss_metrics(net, chain)


def mean_time_to_loss(net: Network, chain: BackgroundChain) -> LossMetrics:
    """Per-entry-state ``tau_ik = E[T 1{lost}]`` and their aggregate."""
    return loss_metrics(net, chain)
