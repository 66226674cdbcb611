"""Closed-form results for tandem and symmetric networks.

These exist to be redundant with the general solvers in :mod:`qnet.moments`,
:mod:`qnet.fclt` and :mod:`qnet.oracle`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .moments import STATIONARY


@dataclass(frozen=True)
class SymmetricSpec:
    """Fully symmetric network parameters (single block, ``f`` in {0, 1})."""

    n: int
    lam: float
    nu: float
    mu0: float
    q_up: float
    q_down: float
    f: float = 1.0

    @property
    def sigma(self) -> float:
        return self.nu + self.mu0

    @property
    def pi(self) -> float:
        return self.q_up / (self.q_up + self.q_down)

    @property
    def q(self) -> float:
        return self.q_up + self.q_down

    @property
    def kappa(self) -> float:
        """Averaged per-customer departure rate ``nu (1 - pi) + mu0``."""
        return self.nu * (1.0 - self.pi) * self.f + self.mu0


def symmetric_mean(spec: SymmetricSpec, t=STATIONARY) -> float:
    """Per-node mean from the averaged balance ``v' = lam - kappa v``.

    With ``f = 0`` this is the exact mean ``(lam / mu0)(1 - exp(-mu0 t))``.
    With ``f = 1`` it treats the queue length and the link status as
    uncorrelated, which makes it the fluid (fast-modulation) mean; the exact
    mean of the unscaled network is larger, see
    :func:`qnet.moments.stationary_first_moments`.
    """
    if spec.f not in (0.0, 1.0):
        raise ValueError("closed form covers f = 0 and f = 1 only")
    rate = spec.kappa
    if isinstance(t, str):
        return spec.lam / rate
    return spec.lam / rate * (1.0 - np.exp(-rate * t))


def symmetric_fclt_xi(spec: SymmetricSpec, t) -> np.ndarray:
    """Coefficient of the all-ones matrix in the modulation part of the covariance."""
    if spec.f != 1.0:
        raise ValueError("closed form derived for f = 1")
    k = spec.kappa
    c = 2.0 * spec.q_up * spec.q_down * spec.lam ** 2 * spec.nu ** 2 / (k ** 2 * spec.q ** 3)
    t = np.asarray(t, dtype=float)
    e1, e2 = np.exp(-k * t), np.exp(-2 * k * t)
    return c * ((1 - e2) / (2 * k) - 2 * e1 * (1 - e1) / k + t * e2)


def symmetric_fclt_xi_limit(spec: SymmetricSpec) -> float:
    k = spec.kappa
    return spec.q_up * spec.q_down * spec.lam ** 2 * spec.nu ** 2 / (k ** 3 * spec.q ** 3)


@dataclass(frozen=True)
class TandemParams:
    lam: float
    mu1: float
    mu2: float
    q_up: float
    q_down: float

    @property
    def pi_up(self) -> float:
        return self.q_up / (self.q_up + self.q_down)

    def generator(self) -> np.ndarray:
        return np.array([[-self.q_up, self.q_up], [self.q_down, -self.q_down]])


@dataclass(frozen=True)
class TandemLossMeans:
    v10: float
    v11: float
    v20: float
    v21: float
    loss_rate: float


def tandem_stationary_means(p: TandemParams) -> TandemLossMeans:
    """Per-state stationary means of the tandem with blocked customers lost."""
    pi = np.array([1 - p.pi_up, p.pi_up])
    Q = p.generator()
    try:
        v1 = p.lam * np.linalg.solve((p.mu1 * np.eye(2) - Q).T, pi)
        v2 = np.linalg.solve((p.mu2 * np.eye(2) - Q).T, np.array([0.0, p.mu1 * v1[1]]))
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("singular tandem system") from exc
    return TandemLossMeans(v1[0], v1[1], v2[0], v2[1], p.mu1 * v1[0])


@dataclass(frozen=True)
class TandemNode1Law:
    """Node-1 stationary law of the retry tandem: Poisson plus a negative-binomial mixture."""

    poisson_mean: float
    nb_p: float
    nb_shape: float
    weights: tuple[float, float]
    """Mixture weights of the shapes ``nb_shape`` and ``nb_shape - 1``."""

    @classmethod
    def from_params(cls, p: TandemParams) -> "TandemNode1Law":
        q = p.q_up + p.q_down
        return cls(p.lam / p.mu1, p.q_up / (p.q_up + p.lam), p.q_down / p.mu1 + 1.0,
                   (p.q_down / q, p.q_up / q))

    @property
    def mean(self) -> float:
        odds = (1 - self.nb_p) / self.nb_p
        w0, w1 = self.weights
        return self.poisson_mean + odds * (w0 * self.nb_shape + w1 * (self.nb_shape - 1))

    @property
    def variance(self) -> float:
        odds = (1 - self.nb_p) / self.nb_p
        w0, w1 = self.weights
        second = 0.0
        for w, r in ((w0, self.nb_shape), (w1, self.nb_shape - 1)):
            m = r * odds
            second += w * (r * odds / self.nb_p + m * m)
        mb = self.mean - self.poisson_mean
        return self.poisson_mean + second - mb * mb


def _check_retry_params(p: TandemParams):
    if p.q_up <= 0 or p.q_down < 0 or p.lam < 0 or p.mu1 <= 0:
        raise ValueError("need q_up > 0, q_down >= 0, lam >= 0, mu1 > 0")


def tandem_node1_pgf(p: TandemParams, z) -> np.ndarray:
    """Generating function of the node-1 stationary count (blocked customers retry)."""
    _check_retry_params(p)
    z = np.asarray(z)
    base = p.q_up + p.lam * (1 - z)
    if np.any(np.abs(z) > 1) or np.any(np.real(base) <= 0):
        raise ValueError("need |z| <= 1 and q_up + lam (1 - z) > 0")
    q = p.q_up + p.q_down
    pi0, pi1 = p.q_down / q, p.q_up / q
    ratio = p.q_up / base
    s = p.q_down / p.mu1
    return np.exp(p.lam / p.mu1 * (z - 1)) * (pi0 * ratio ** (s + 1) + pi1 * ratio ** s)


def _log_nbinom(m: np.ndarray, shape: float, prob: float) -> np.ndarray:
    """log P(B = m), B counting failures before ``shape`` successes."""
    if shape == 0:
        return np.where(m == 0, 0.0, -np.inf)
    return (gammaln(m + shape) - gammaln(shape) - gammaln(m + 1)
            + shape * np.log(prob) + m * np.log1p(-prob))


def _pmf_array(law: TandemNode1Law, size: int) -> np.ndarray:
    m = np.arange(size)
    pois = np.exp(m * np.log(law.poisson_mean) - law.poisson_mean - gammaln(m + 1)) \
        if law.poisson_mean > 0 else (m == 0).astype(float)
    mix = np.zeros(size)
    for w, r in zip(law.weights, (law.nb_shape, law.nb_shape - 1)):
        if w > 0:
            mix += w * np.exp(_log_nbinom(m, r, law.nb_p))
    return np.convolve(pois, mix)[:size]


def tandem_node1_pmf(p: TandemParams, m=None, tail: float = 1e-12) -> np.ndarray:
    """Probabilities ``P(M_1 = m)``.

    With ``m = None`` the whole table is returned, extended until the dropped
    tail mass is below ``tail``.
    """
    _check_retry_params(p)
    law = TandemNode1Law.from_params(p)
    size = max(64, int(2 * law.mean) + 1)
    if m is not None:
        m = np.asarray(m, dtype=int)
        size = max(size, int(m.max()) + 1)
    while True:
        arr = _pmf_array(law, size)
        if m is not None or 1.0 - arr.sum() < tail:
            break
        size *= 2
    if m is None:
        return arr
    return arr[m]
