"""The modulating chain of link blocks.

Each block alternates between down (0) and up (1) with exponential holding
times; the joint chain on ``{0, 1}^K`` is the Kronecker sum of the per-block
2x2 generators.  State encoding is the one documented in :mod:`qnet.model`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .model import Network, block_status


class NumericalFailure(ArithmeticError):
    """A solve or integration could not be carried out to the required accuracy."""


def block_generator(q_up: float, q_down: float) -> np.ndarray:
    """2x2 generator in state order (down, up)."""
    return np.array([[-q_up, q_up], [q_down, -q_down]], dtype=float)


def build_generator(q_up, q_down) -> np.ndarray:
    """Kronecker sum of the per-block generators.

    ``K = 0`` gives the 1x1 zero generator (a single, always-up state).
    """
    q_up = np.atleast_1d(np.asarray(q_up, dtype=float))
    q_down = np.atleast_1d(np.asarray(q_down, dtype=float))
    K = q_up.size
    Q = np.zeros((2 ** K, 2 ** K))
    for b in range(K):
        Q += np.kron(np.kron(np.eye(2 ** b), block_generator(q_up[b], q_down[b])),
                     np.eye(2 ** (K - 1 - b)))
    return Q


def generator_by_bitflips(q_up, q_down) -> np.ndarray:
    """Generator built by enumerating single-block flips (reference construction)."""
    q_up = np.atleast_1d(np.asarray(q_up, dtype=float))
    q_down = np.atleast_1d(np.asarray(q_down, dtype=float))
    K = q_up.size
    Q = np.zeros((2 ** K, 2 ** K))
    for x in range(2 ** K):
        for b in range(K):
            bit = 1 << (K - 1 - b)
            if x & bit:
                Q[x, x ^ bit] += q_down[b]
            else:
                Q[x, x ^ bit] += q_up[b]
        Q[x, x] = -Q[x].sum()
    return Q


def stationary_nullspace(Q: np.ndarray) -> np.ndarray:
    """Solve ``pi Q = 0, sum(pi) = 1`` by a dense least-squares solve."""
    m = Q.shape[0]
    A = np.vstack([Q.T, np.ones((1, m))])
    b = np.zeros(m + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    return pi


@dataclass(frozen=True, eq=False)
class BackgroundChain:
    q_up: np.ndarray
    q_down: np.ndarray

    @classmethod
    def from_network(cls, net: Network) -> "BackgroundChain":
        return cls(np.array(net.q_up, dtype=float), np.array(net.q_down, dtype=float))

    @property
    def K(self) -> int:
        return int(self.q_up.size)

    @property
    def state_count(self) -> int:
        return 2 ** self.K

    @property
    def block_rate(self) -> np.ndarray:
        """``q^(m) = q_up + q_down`` per block."""
        return self.q_up + self.q_down

    @property
    def block_pi(self) -> np.ndarray:
        """Per-block stationary probability of being up."""
        return self.q_up / self.block_rate

    @property
    def spectral_gap(self) -> float:
        """Slowest relaxation rate of the chain; ``inf`` when K = 0."""
        return float(self.block_rate.min()) if self.K else np.inf

    @cached_property
    def Q(self) -> np.ndarray:
        Q = build_generator(self.q_up, self.q_down)
        Q.setflags(write=False)
        return Q

    @cached_property
    def up(self) -> np.ndarray:
        return block_status(self.K)

    @cached_property
    def pi(self) -> np.ndarray:
        return stationary(self)

    @cached_property
    def D(self) -> np.ndarray:
        return deviation_matrix(self)

    @cached_property
    def Sigma(self) -> np.ndarray:
        return fclt_sigma(self)

    def scaled(self, factor: float) -> "BackgroundChain":
        return BackgroundChain(self.q_up * factor, self.q_down * factor)


def stationary(chain: BackgroundChain) -> np.ndarray:
    """Product-form stationary vector."""
    p = chain.block_pi
    return np.where(chain.up, p[None, :], 1.0 - p[None, :]).prod(axis=1)


def _check_time(t):
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")


def transition_matrix(chain: BackgroundChain, t: float) -> np.ndarray:
    """``P(t)`` as a product of per-block 2x2 transition probabilities."""
    _check_time(t)
    p = chain.block_pi
    e = np.exp(-chain.block_rate * t)
    p11 = p + (1 - p) * e
    p00 = 1 - p + p * e
    # per block: [[p00, p01], [p10, p11]] indexed by (from, to)
    blk = np.empty((chain.K, 2, 2))
    blk[:, 0, 0], blk[:, 0, 1] = p00, 1 - p00
    blk[:, 1, 0], blk[:, 1, 1] = 1 - p11, p11
    up = chain.up.astype(int)
    P = np.ones((chain.state_count, chain.state_count))
    for b in range(chain.K):
        P *= blk[b][up[:, b][:, None], up[:, b][None, :]]
    return P


def transition_matrix_expm(chain: BackgroundChain, t: float) -> np.ndarray:
    """``P(t) = exp(Q t)`` by scaling and squaring."""
    _check_time(t)
    return scipy.linalg.expm(np.asarray(chain.Q) * t)


def deviation_matrix(chain: BackgroundChain) -> np.ndarray:
    """``D = (Pi - Q)^{-1} - Pi`` with ``Pi`` the matrix whose rows are ``pi``."""
    if chain.K and np.any(chain.block_rate <= 0):
        raise ValueError("every block needs q_up + q_down > 0")
    Pi = np.tile(chain.pi, (chain.state_count, 1))
    A = Pi - np.asarray(chain.Q)
    try:
        Z = np.linalg.solve(A, np.eye(chain.state_count))
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("fundamental matrix is singular") from exc
    return Z - Pi


def fclt_sigma(chain: BackgroundChain) -> np.ndarray:
    """``Sigma = diag(pi) D + D^T diag(pi)``."""
    A = chain.pi[:, None] * chain.D
    return A + A.T
