"""Closed-form Gaussian stationary quantities for the zero-flux case.

With no transport term the chain is linear, its stationary law is a
centered Gaussian, and every quantity of interest (stationary covariances,
the expectation of the Gaussian test functional, quadratic Wasserstein
distances between the continuum, semi-discrete and split-step stationary
laws) has a closed form in terms of

  lambda   = (2 pi m0)^2            continuum decay rate of the forced mode,
  lambda_N = 2 N^2 (1 - cos(2 pi m0 / N))   its discrete counterpart,
  |g|^2    = (sin(pi m0 / N) / (pi m0 / N))^2   energy of the projected mode.

These are the oracles the Monte Carlo estimators are validated against.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid import GridSpec
from .linops import d2_eigenbasis
from .noise import DiscreteNoise


class ResolutionError(ValueError):
    """Grid too coarse to resolve the forced mode (needs N > 2 m0)."""


def lambda_n(n_cells: int, m0: int) -> float:
    """Decay rate ``2 N^2 (1 - cos(2 pi m0 / N))`` of the discrete mode.

    Requires the resolution condition ``N > 2 m0``; converges to
    ``(2 pi m0)^2`` as the grid is refined.
    """
    if m0 < 1:
        raise ValueError("m0 must be a positive integer")
    if n_cells <= 2 * m0:
        raise ResolutionError(f"need n_cells > {2 * m0} to resolve mode {m0}, got {n_cells}")
    return 2.0 * n_cells**2 * (1.0 - np.cos(2.0 * np.pi * m0 / n_cells))


@dataclass(frozen=True)
class AnalyticCase:
    """Parameters of the linear benchmark with a single sinusoidal mode
    ``sqrt(2) sin(2 pi m0 x)``."""

    nu: float
    m0: int
    n_cells: int
    dt: float | None = None

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        lambda_n(self.n_cells, self.m0)  # validates the resolution condition

    @cached_property
    def lambda_cont(self) -> float:
        return (2.0 * np.pi * self.m0) ** 2

    @cached_property
    def lambda_disc(self) -> float:
        return lambda_n(self.n_cells, self.m0)

    @cached_property
    def g_l2_sq(self) -> float:
        x = np.pi * self.m0 / self.n_cells
        return float((np.sin(x) / x) ** 2)

    @cached_property
    def kappa_semi(self) -> float:
        """Stationary energy of the semi-discrete chain, ``|g|^2/(2 nu lambda_N)``."""
        return self.g_l2_sq / (2.0 * self.nu * self.lambda_disc)

    @cached_property
    def kappa_split(self) -> float:
        """Stationary energy of the split-step chain at time step ``dt``."""
        if self.dt is None:
            raise ValueError("dt is not set on this case")
        x = 1.0 + self.nu * self.dt * self.lambda_disc
        return self.dt * x * x / (x * x - 1.0) * self.g_l2_sq

    @cached_property
    def epsilon_sign(self) -> float:
        """Sign of the overlap between the mode and its reconstruction
        (+1 whenever the mode is resolved)."""
        return 1.0 if self.g_l2_sq > 0 else -1.0


def stationary_phi(case: AnalyticCase, discretised: str = "semi") -> float:
    """Stationary expectation of ``exp(-|v|^2)``: ``1/sqrt(1 + 2 kappa)``
    with the semi-discrete or split-step energy ``kappa``."""
    if discretised == "semi":
        kappa = case.kappa_semi
    elif discretised == "split":
        kappa = case.kappa_split
    else:
        raise ValueError(f"discretised must be 'semi' or 'split', got {discretised!r}")
    return 1.0 / np.sqrt(1.0 + 2.0 * kappa)


def w2_space(case: AnalyticCase) -> float:
    """Quadratic Wasserstein distance between the discrete and continuum
    stationary laws (both rank-1 Gaussians).

    Exact per-cell integration of ``(a sqrt(2) sin(2 pi m0 x) - c_i)^2``
    through the antiderivatives of sin and sin^2; no quadrature error.
    """
    n, m0, nu = case.n_cells, case.m0, case.nu
    w = 2.0 * np.pi * m0
    amp_cont = np.sqrt(2.0) / np.sqrt(2.0 * nu * case.lambda_cont)
    # projected mode values (exact cell averages of sqrt(2) sin(2 pi m0 x))
    edges = np.arange(n + 1) / n
    anti_sin = -np.cos(w * edges) / w
    g_vals = np.sqrt(2.0) * n * (anti_sin[1:] - anti_sin[:-1])
    c = case.epsilon_sign * g_vals / np.sqrt(2.0 * nu * case.lambda_disc)
    # per-cell: amp^2 int sin^2 - 2 amp c int sin + c^2 width
    int_sin2 = (edges[1:] - edges[:-1]) / 2.0 - (np.sin(2 * w * edges[1:]) - np.sin(2 * w * edges[:-1])) / (4.0 * w)
    int_sin = anti_sin[1:] - anti_sin[:-1]
    cells = amp_cont**2 * int_sin2 - 2.0 * amp_cont * c * int_sin + c * c / n
    return float(np.sqrt(np.sum(cells)))


def w2_time(case: AnalyticCase) -> float:
    """Quadratic Wasserstein distance between the split-step and
    semi-discrete stationary laws; vanishes as dt -> 0 at first order with
    coefficient ``(3/4) sqrt(nu lambda_N / 2) |g|``."""
    if case.dt is None:
        raise ValueError("dt is not set on this case")
    x = 1.0 + case.nu * case.dt * case.lambda_disc
    semi_amp = np.sqrt(1.0 / (2.0 * case.nu * case.lambda_disc))
    split_amp = np.sqrt(case.dt * x * x / (x * x - 1.0))
    return float(abs(semi_amp - split_amp) * np.sqrt(case.g_l2_sq))


# ---------------------------------------------------------------------------
# stationary covariances for general finite mode lists
# ---------------------------------------------------------------------------

def lyapunov_covariance(dn: DiscreteNoise, nu: float, dt: float | None = None) -> np.ndarray:
    """Componentwise stationary covariance of the zero-flux chain.

    Solved mode by mode in the orthonormal eigenbasis of the second
    difference: the continuous-time balance gives entries
    ``Q~_{mn} / (nu (lambda_m + lambda_n))`` and the split-step geometric
    series gives ``dt Q~_{mn} / (1 - r_m r_n)`` with the resolvent factors
    ``r_m = 1 / (1 + nu dt lambda_m)``.  Noise energy on the constant mode
    (decay rate zero) makes the problem ill-posed and raises ``ValueError``.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    rates, basis = d2_eigenbasis(dn.spec)
    q_modal = basis @ dn.q_matrix @ basis.T
    scale = np.max(np.abs(q_modal)) + 1e-30
    if dt is None:
        denom = nu * (rates[:, None] + rates[None, :])
    else:
        r = 1.0 / (1.0 + nu * dt * rates)
        denom = (1.0 - r[:, None] * r[None, :]) / dt
    singular = denom <= 0
    if np.any(np.abs(q_modal[singular]) > 1e-12 * scale):
        raise ValueError("noise feeds the constant mode; stationary covariance is ill-posed")
    denom = np.where(singular, 1.0, denom)
    k_modal = np.where(singular, 0.0, q_modal / denom)
    return basis.T @ k_modal @ basis


def stationary_energy(covariance: np.ndarray) -> float:
    """Expected squared normalised l^2 norm under a centered Gaussian with
    the given componentwise covariance: ``trace(K)/N``."""
    return float(np.trace(covariance) / covariance.shape[0])


def gaussian_w2_commuting(cov_a: np.ndarray, cov_b: np.ndarray) -> float:
    """Quadratic Wasserstein distance (normalised l^2 norm) between two
    centered Gaussians with commuting covariance matrices.

    Raises ``ValueError`` when the covariances do not commute; the
    non-commuting Bures case is out of scope.
    """
    a = np.asarray(cov_a, dtype=float)
    b = np.asarray(cov_b, dtype=float)
    n = a.shape[0]
    comm = a @ b - b @ a
    if np.linalg.norm(comm) > 1e-10 * (np.linalg.norm(a) * np.linalg.norm(b) + 1e-30):
        raise ValueError("covariances do not commute; only the commuting case is supported")
    eig_a, vecs = np.linalg.eigh(a)  # ascending
    b_rot = vecs.T @ b @ vecs
    # commuting => b_rot is block diagonal over the eigenspaces of a;
    # re-diagonalise b inside each (near-)degenerate block so the two
    # spectra are paired in one joint eigenbasis
    eig_b = np.empty(n)
    start = 0
    tol = 1e-10 * (abs(eig_a[-1]) + 1.0)
    while start < n:
        stop = start + 1
        while stop < n and eig_a[stop] - eig_a[stop - 1] <= tol:
            stop += 1
        block = b_rot[start:stop, start:stop]
        eig_b[start:stop] = np.linalg.eigvalsh(0.5 * (block + block.T))
        start = stop
    # flush eigenvalue noise near zero before the square root amplifies it
    floor = 1e-13 * max(abs(eig_a[-1]), np.max(np.abs(eig_b)), 1e-300)
    eig_a = np.where(np.abs(eig_a) < floor, 0.0, np.clip(eig_a, 0.0, None))
    eig_b = np.where(np.abs(eig_b) < floor, 0.0, np.clip(eig_b, 0.0, None))
    return float(np.sqrt(np.sum((np.sqrt(eig_a) - np.sqrt(eig_b)) ** 2) / n))


def covariance_case_matrix(case: AnalyticCase, discretised: str = "semi") -> np.ndarray:
    """Rank-1 covariance of the single-mode benchmark, as a matrix."""
    from .grid import project_sinusoid

    g = project_sinusoid(np.sqrt(2.0), case.m0, "sin", GridSpec(case.n_cells)).values
    if discretised == "semi":
        amp = 1.0 / (2.0 * case.nu * case.lambda_disc)
    elif discretised == "split":
        if case.dt is None:
            raise ValueError("dt is not set on this case")
        x = 1.0 + case.nu * case.dt * case.lambda_disc
        amp = case.dt * x * x / (x * x - 1.0)
    else:
        raise ValueError(f"discretised must be 'semi' or 'split', got {discretised!r}")
    return amp * np.outer(g, g)
