"""Fluid limit and Gaussian fluctuations of the scaled network.

With arrivals scaled by ``N`` and link rates by ``N**alpha``, the counts
divided by ``N`` follow ``rho' = lam + M rho`` where ``M`` holds the rates
averaged over the stationary link law.  The fluctuations around ``N rho`` are
Gaussian with covariance solving a Lyapunov differential equation whose
forcing depends on the regime:

``EQ1`` (alpha = 1)
    modulation noise ``M0 Sigma M0^T`` plus the Poisson part ``diag(rho)``.
``GT1`` (alpha > 1)
    Poisson part only; the links average out.
``LT1`` (alpha < 1)
    modulation noise only; it dominates the Poisson noise.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .background import BackgroundChain, NumericalFailure
from .model import Network, state_rates

RICHARDSON_RTOL = 1e-8
FAILURE_RTOL = 1e-6
STEPS_PER_SCALE = 200


class Regime(enum.Enum):
    LT1 = "LT1"
    EQ1 = "EQ1"
    GT1 = "GT1"

    @classmethod
    def parse(cls, value) -> "Regime":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"regime must be one of LT1, EQ1, GT1, got {value!r}") from None

    @property
    def modulation(self) -> bool:
        return self is not Regime.GT1

    @property
    def poisson(self) -> bool:
        return self is not Regime.LT1


def averaged_rates(net: Network, chain: BackgroundChain) -> tuple[np.ndarray, np.ndarray]:
    """``mu_bar[i, j]`` (successful jumps) and ``mu_bar_0[i]`` (exit plus loss)."""
    r = state_rates(net)
    pi = chain.pi
    return np.einsum("k,kij->ij", pi, r.mu_plus), pi @ r.exit_effective


def drift_matrix(net: Network, chain: BackgroundChain) -> np.ndarray:
    """``M[i, j] = mu_bar_ji`` off the diagonal, minus the total averaged outflow on it."""
    mb, mb0 = averaged_rates(net, chain)
    M = mb.T.copy()
    M[np.diag_indices(net.n)] = -(mb.sum(axis=1) + mb0)
    return M


def _require_stable(M: np.ndarray) -> None:
    ev = np.linalg.eigvals(M)
    if np.any(ev.real >= 0):
        raise NumericalFailure(
            f"drift matrix is not stable (max real eigenvalue {ev.real.max():.3g})")


def _augmented_step(M: np.ndarray, lam: np.ndarray, h: float) -> np.ndarray:
    """Matrix mapping ``(rho, 1)`` at time s to ``(rho, 1)`` at time s + h."""
    n = M.shape[0]
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = M
    A[:n, n] = lam
    return scipy.linalg.expm(A * h)


@dataclass(frozen=True)
class FluidResult:
    rho: np.ndarray
    drift: np.ndarray
    time: float


def fluid_limit(net: Network, chain: BackgroundChain, t: float, rho0=None) -> FluidResult:
    """``rho(t)`` from ``rho' = lam + M rho`` by one exponential of the augmented matrix."""
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    M = drift_matrix(net, chain)
    _require_stable(M)
    rho0 = np.zeros(net.n) if rho0 is None else np.asarray(rho0, dtype=float)
    if rho0.shape != (net.n,) or np.any(rho0 < 0):
        raise ValueError("rho0 must be a nonnegative vector with one entry per node")
    E = _augmented_step(M, net.lam, t)
    rho = E[:-1, :-1] @ rho0 + E[:-1, -1]
    return FluidResult(np.clip(rho, 0.0, None), M, float(t))


def stationary_fluid(net: Network, chain: BackgroundChain) -> np.ndarray:
    """Fixed point ``rho* = -M^{-1} lam``."""
    M = drift_matrix(net, chain)
    _require_stable(M)
    return np.linalg.solve(M, -net.lam)


def modulation_matrix(net: Network, chain: BackgroundChain, rho, rates=None) -> np.ndarray:
    """``M0[i, k] = sum_j rho_j mu+_jik - rho_i (sum_j mu+_ijk + mu_i0k)``.

    ``rho`` is the fluid level at the time of interest.
    """
    r = state_rates(net) if rates is None else rates
    rho = np.asarray(rho, dtype=float)
    inflow = np.einsum("j,kji->ik", rho, r.mu_plus)
    return inflow - rho[:, None] * r.decay.T


def modulation_matrix_at(net: Network, chain: BackgroundChain, t: float) -> np.ndarray:
    return modulation_matrix(net, chain, fluid_limit(net, chain, t).rho)


def diffusion_matrix(net: Network, chain: BackgroundChain, rho, averaged=None) -> np.ndarray:
    """Raw martingale diffusion ``G`` of the arrival, routing and exit streams."""
    mb, mb0 = averaged_rates(net, chain) if averaged is None else averaged
    rho = np.asarray(rho, dtype=float)
    flow = rho[:, None] * mb  # flow[i, j]: averaged flux i -> j
    G = -(flow + flow.T)
    G[np.diag_indices(net.n)] = net.lam + flow.sum(axis=0) + flow.sum(axis=1) + rho * mb0
    return G


@dataclass(frozen=True)
class FcltCovariance:
    regime: Regime
    time: float
    cov: np.ndarray
    modulation: np.ndarray
    """``M0(t)``, shape ``(n, Kbar)``."""
    rho: np.ndarray


def _step_size(M: np.ndarray, chain: BackgroundChain) -> float:
    rates = [float(np.abs(np.linalg.eigvals(M)).max())]
    if chain.K:
        rates.append(float(chain.block_rate.max()))
    fastest = max(max(rates), 1e-12)
    return 1.0 / (fastest * STEPS_PER_SCALE)


def _integrate(net, chain, times, h, regime: Regime, full_diffusion: bool):
    """RK4 for ``C' = M C + C M^T + F(s)`` with ``C(0) = 0`` over an increasing grid.

    ``rho`` at the RK4 stage times is propagated exactly with the augmented
    exponential, so only the covariance equation is discretized.
    """
    M = drift_matrix(net, chain)
    Sigma = chain.Sigma
    n = net.n
    rates = state_rates(net)
    averaged = averaged_rates(net, chain)
    inflow = np.ascontiguousarray(rates.mu_plus.transpose(2, 0, 1))  # (i, k, j)
    decay = rates.decay.T

    def forcing(rho):
        F = np.zeros((n, n))
        if regime.modulation:
            M0 = inflow @ rho - rho[:, None] * decay
            F += M0 @ Sigma @ M0.T
        if full_diffusion:
            F += diffusion_matrix(net, chain, rho, averaged)
        return F

    def rhs(C, F):
        MC = M @ C
        return MC + MC.T + F

    C = np.zeros((n, n))
    rho = np.zeros(n)
    now = 0.0
    out = []
    cache = {}
    for t in times:
        span = t - now
        steps = int(np.ceil(span / h - 1e-9)) if span > 0 else 0
        if steps:
            hs = span / steps
            if hs not in cache:
                cache[hs] = _augmented_step(M, net.lam, hs / 2)
            E = cache[hs]
            P, b = E[:n, :n], E[:n, n]
            F0 = forcing(rho)
            for _ in range(steps):
                rho_mid = P @ rho + b
                rho_end = P @ rho_mid + b
                Fm, F1 = forcing(rho_mid), forcing(rho_end)
                k1 = rhs(C, F0)
                k2 = rhs(C + 0.5 * hs * k1, Fm)
                k3 = rhs(C + 0.5 * hs * k2, Fm)
                k4 = rhs(C + hs * k3, F1)
                C = C + hs / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
                rho, F0 = rho_end, F1
        now = t
        out.append((0.5 * (C + C.T), rho.copy()))
    return out


def _rel_diff(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.abs(b).max()), 1e-300)
    return float(np.abs(a - b).max()) / scale if np.abs(b).max() > 0 else float(np.abs(a).max())


def _converged_path(net, chain, times, regime, full_diffusion):
    M = drift_matrix(net, chain)
    _require_stable(M)
    h = _step_size(M, chain)
    coarse = _integrate(net, chain, times, h, regime, full_diffusion)
    for _ in range(6):
        fine = _integrate(net, chain, times, h / 2, regime, full_diffusion)
        err = max(_rel_diff(c[0], f[0]) for c, f in zip(coarse, fine))
        coarse, h = fine, h / 2
        if err <= RICHARDSON_RTOL:
            break
    if err > FAILURE_RTOL:
        raise NumericalFailure(f"step halving changed the covariance by {err:.3g}")
    if err > RICHARDSON_RTOL:
        warnings.warn(f"covariance converged only to {err:.3g}", RuntimeWarning, stacklevel=3)
    return coarse


def fclt_covariance_path(net: Network, chain: BackgroundChain, times, regime="EQ1",
                         full_diffusion: bool = False) -> list[FcltCovariance]:
    """Covariance of the centred, scaled counts on an increasing time grid, empty start.

    ``full_diffusion=True`` replaces ``diag(rho)`` by the integral of the raw
    diffusion matrix, which must give the same answer; it is a check.
    """
    regime = Regime.parse(regime)
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be nonnegative and nondecreasing")
    use_ode = regime.modulation or full_diffusion
    if use_ode:
        path = _converged_path(net, chain, times, regime if regime.modulation else Regime.GT1,
                               full_diffusion)
    else:
        path = [(np.zeros((net.n, net.n)), fluid_limit(net, chain, t).rho) for t in times]
    out = []
    for t, (C, _) in zip(times, path):
        rho = fluid_limit(net, chain, t).rho
        cov = C.copy()
        if regime.poisson and not full_diffusion:
            cov += np.diag(rho)
        out.append(FcltCovariance(regime, float(t), cov,
                                  modulation_matrix(net, chain, rho), rho))
    return out


def fclt_covariance(net: Network, chain: BackgroundChain, t: float,
                    regime="EQ1") -> FcltCovariance:
    """Covariance of ``(M^(N)(t) - N rho(t)) / sqrt(N)`` in the limit, empty start."""
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    return fclt_covariance_path(net, chain, [t], regime)[0]


def covariance_full_diffusion(net: Network, chain: BackgroundChain, t: float,
                              regime="EQ1") -> np.ndarray:
    return fclt_covariance_path(net, chain, [t], regime, full_diffusion=True)[0].cov


def stationary_fclt_covariance(net: Network, chain: BackgroundChain,
                               regime="EQ1") -> FcltCovariance:
    """``t -> infinity`` limit from the algebraic Lyapunov equation."""
    regime = Regime.parse(regime)
    M = drift_matrix(net, chain)
    rho = stationary_fluid(net, chain)
    M0 = modulation_matrix(net, chain, rho)
    cov = np.zeros((net.n, net.n))
    if regime.modulation:
        F = M0 @ chain.Sigma @ M0.T
        cov = scipy.linalg.solve_continuous_lyapunov(M, -F)
        cov = 0.5 * (cov + cov.T)
    if regime.poisson:
        cov = cov + np.diag(rho)
    return FcltCovariance(regime, float("inf"), cov, M0, rho)


def gaussian_approx(net: Network, chain: BackgroundChain, t: float, N: float,
                    regime="EQ1") -> tuple[np.ndarray, np.ndarray]:
    """Gaussian surrogate ``(N rho(t), N Cov(t))`` for the counts of the ``N``-scaled network."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    res = fclt_covariance(net, chain, t, regime)
    return N * res.rho, N * res.cov
