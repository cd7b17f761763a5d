"""Mean-field side: the truncated Smoluchowski coalescence/shattering system
with multiplicative kernels, and its closed-form Catalan steady state.

Densities are numbers of clusters per unit of the mass scale ``M``
(sum_k k n_k = M). With K(i, j) = K_hat i j / M^2, F(i) = F_hat i / M and
shattering into monomers, the right-hand side depends on the state only
through the mass fractions x_k = k n_k / M.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import gammaln

__all__ = [
    "MeanFieldState",
    "SteadyStateSolution",
    "IntegrationError",
    "rhs",
    "integrate",
    "catalan",
    "log_catalan",
    "catalan_steady_state",
    "fixed_point_steady_state",
    "monomer_start",
]

NEGATIVITY_TOL = 1e-12


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class MeanFieldState:
    n: np.ndarray  # n[k-1] is the density of size-k clusters
    t: float = 0.0
    M: float = 1.0

    @property
    def K_c(self) -> int:
        return self.n.shape[0]

    @property
    def k(self) -> np.ndarray:
        return np.arange(1, self.K_c + 1, dtype=np.float64)

    @property
    def mass(self) -> float:
        return float(np.dot(self.k, self.n))

    @property
    def rho(self) -> np.ndarray:
        return self.k * self.n / self.M


def monomer_start(K_c: int = 1000, M: float = 1.0) -> MeanFieldState:
    n = np.zeros(K_c)
    n[0] = M
    return MeanFieldState(n, 0.0, M)


def _rhs_array(n: np.ndarray, K_hat: float, F_hat: float, M: float) -> np.ndarray:
    K_c = n.shape[0]
    k = np.arange(1, K_c + 1, dtype=np.float64)
    x = k * n / M
    nz = np.flatnonzero(x)
    L = int(nz[-1]) + 1 if nz.size else 0
    out = np.zeros(K_c)
    if L == 0:
        return out
    xs = x[:L]
    # gain_k = 1/2 K_hat sum_{i+j=k} x_i x_j ; conv index c <-> size c + 2
    conv = np.convolve(xs, xs)
    m = min(conv.shape[0], K_c - 1)
    out[1:1 + m] += 0.5 * K_hat * conv[:m]
    # loss_k = K_hat x_k sum_{i <= K_c - k} x_i (pairs beyond K_c are dropped)
    csum = np.cumsum(x)
    partner = np.zeros(K_c)
    partner[:K_c - 1] = csum[K_c - 2::-1]
    out -= K_hat * x * partner
    # shattering: k >= 2 lose F_hat x_k, monomers gain F_hat sum_{i>=2} i x_i
    out[1:] -= F_hat * x[1:]
    out[0] += F_hat * float(np.dot(k[1:], x[1:]))
    return out


def rhs(state: MeanFieldState, K_hat: float, F_hat: float) -> np.ndarray:
    """dn_k/dt for k = 1..K_c under the conservative truncation closure."""
    return _rhs_array(state.n, K_hat, F_hat, state.M)


def integrate(state: MeanFieldState, K_hat: float, F_hat: float, dt: float, T: float,
              *, check_every: int = 1) -> MeanFieldState:
    """Classical fixed-step RK4 from state.t to state.t + T.

    The final step is shortened so the end time is hit exactly. Raises
    IntegrationError if a density goes below -1e-12.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if T < 0:
        raise ValueError("T must be non-negative")
    if T == 0:
        return state
    M = state.M
    n = state.n.astype(np.float64, copy=True)
    nsteps = int(math.ceil(T / dt - 1e-9))
    f = lambda y: _rhs_array(y, K_hat, F_hat, M)
    for s in range(nsteps):
        h = dt if s < nsteps - 1 else T - dt * (nsteps - 1)
        k1 = f(n)
        k2 = f(n + 0.5 * h * k1)
        k3 = f(n + 0.5 * h * k2)
        k4 = f(n + h * k3)
        n = n + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if s % check_every == 0 and n.min() < -NEGATIVITY_TOL:
            raise IntegrationError(f"negative density {n.min():.3e} at step {s}; reduce dt")
    if n.min() < -NEGATIVITY_TOL:
        raise IntegrationError(f"negative density {n.min():.3e}; reduce dt")
    return replace(state, n=n, t=state.t + T)


def rk4_stability_dt(K_c: int, K_hat: float, F_hat: float, M: float = 1.0) -> float:
    """Step bound from the fastest linear decay rate, about K_c (K_hat + F_hat) / M."""
    return 2.5 * M / (K_c * (K_hat + F_hat))


# --------------------------------------------------------------------------
# Catalan closed form


def catalan(n: int) -> int:
    """n-th Catalan number, exact."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return math.comb(2 * n, n) // (n + 1)


def log_catalan(n) -> np.ndarray:
    n = np.asarray(n, dtype=np.float64)
    return gammaln(2 * n + 1) - 2 * gammaln(n + 1) - np.log(n + 1)


@dataclass(frozen=True)
class SteadyStateSolution:
    rho: np.ndarray  # rho[k-1] = k n_k / M
    gamma: float
    rho1: float

    @property
    def convergence(self) -> float:
        """4 gamma rho_1; the mass series converges when this is below 1."""
        return 4 * self.gamma * self.rho1

    def number_density(self, M: float = 1.0) -> np.ndarray:
        k = np.arange(1, self.rho.shape[0] + 1)
        return M * self.rho / k


def catalan_steady_state(K_hat: float, F_hat: float, k_max_out: int = 1000) -> SteadyStateSolution:
    """rho_k = C_{k-1} gamma^(k-1) rho_1^k with gamma = K_hat/2 / (F_hat + K_hat).

    Total mass one fixes rho_1: the generating function R(x) = sum rho_k x^k
    solves R = rho_1 x + gamma R^2, and R(1) = 1 gives rho_1 = 1 - gamma.
    """
    if F_hat <= 0:
        raise ValueError("F_hat must be positive (F_hat = 0 is the gelling limit)")
    if K_hat < 0:
        raise ValueError("K_hat must be non-negative")
    gamma = 0.5 * K_hat / (F_hat + K_hat)
    rho1 = 1.0 - gamma
    k = np.arange(1, k_max_out + 1, dtype=np.float64)
    if gamma == 0:
        rho = np.zeros(k_max_out)
        rho[0] = 1.0
        return SteadyStateSolution(rho, 0.0, 1.0)
    logr = log_catalan(k - 1) + (k - 1) * math.log(gamma) + k * math.log(rho1)
    return SteadyStateSolution(np.exp(logr), gamma, rho1)


def fixed_point_steady_state(K_hat: float, F_hat: float, k_max_out: int = 50,
                             tol: float = 1e-14, max_iter: int = 100_000) -> SteadyStateSolution:
    """Brute-force solution of the steady-state recurrence.

    Iterates rho_1 <- 1 - sum_{k>=2} rho_k(rho_1) with rho_k built from the
    convolution recurrence, truncated at ``k_max_out``. Independent of the
    Catalan closed form.
    """
    gamma = 0.5 * K_hat / (F_hat + K_hat)
    rho1 = 1.0
    rho = np.zeros(k_max_out)
    for _ in range(max_iter):
        rho[:] = 0.0
        rho[0] = rho1
        for kk in range(2, k_max_out + 1):
            rho[kk - 1] = gamma * np.dot(rho[: kk - 1], rho[kk - 2::-1][: kk - 1])
        new = rho1 + (1.0 - rho.sum())
        if abs(new - rho1) < tol:
            rho1 = new
            break
        rho1 = new
    rho[0] = rho1
    for kk in range(2, k_max_out + 1):
        rho[kk - 1] = gamma * np.dot(rho[: kk - 1], rho[kk - 2::-1][: kk - 1])
    return SteadyStateSolution(rho.copy(), gamma, rho1)


def write_density_csv(path: str | Path, values: np.ndarray, column: str = "n_k") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", column])
        for k, v in enumerate(values, start=1):
            w.writerow([k, repr(float(v))])
