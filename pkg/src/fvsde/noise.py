"""Spectral Wiener noise on the discrete torus.

A noise model is a finite list of sinusoidal modes; on a grid the forcing is
``dW = sum_k g^k dW^k`` with ``g^k`` the exact cell averages of the modes.
Increment sampling is counter-based: the normal draws for a given
``(seed, replica, step)`` never depend on how many steps or replicas were
simulated before, which makes replicas embarrassingly parallel, coupled
refinements exact (two grids fed from one stream see identical mode
variables) and checkpoint resume bit-reproducible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

from .grid import GridSpec, GridVector, d1_plus_values, project_sinusoid, recentre


@dataclass(frozen=True)
class NoiseMode:
    amplitude: float
    frequency: int
    phase: str = "sin"

    def __post_init__(self):
        if self.frequency < 1 or int(self.frequency) != self.frequency:
            raise ValueError("mode frequency must be a positive integer")
        if self.phase not in ("sin", "cos"):
            raise ValueError(f"phase must be 'sin' or 'cos', got {self.phase!r}")

    @property
    def h2_norm_sq(self) -> float:
        """Squared L^2 norm of the second derivative, ``amp^2 (2 pi m)^4 / 2``."""
        return 0.5 * self.amplitude**2 * (2.0 * np.pi * self.frequency) ** 4


@dataclass(frozen=True)
class NoiseModel:
    modes: tuple
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))


def default_noise(seed: int = 0, m0: int = 1) -> NoiseModel:
    """Single mode ``sqrt(2) sin(2 pi m0 x)``."""
    return NoiseModel((NoiseMode(np.sqrt(2.0), m0, "sin"),), seed)


def derive_seed(seed: int, tag: str) -> int:
    """Deterministic 63-bit child seed for an independent stream."""
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


# ---------------------------------------------------------------------------
# counter-based streams
# ---------------------------------------------------------------------------

_INV_2_53 = 2.0**-53


@dataclass(frozen=True)
class RngStream:
    """Splittable stream keyed by (seed, replica).

    Draws are indexed by the step counter: ``normals(step, k)`` is a pure
    function of (seed, replica, step), with ``blocks_per_step`` counter
    blocks reserved per step (4 values per block).
    """

    seed: int
    replica: int = 0

    def normals_block(self, step0: int, n_steps: int, count: int, blocks_per_step: int = 1) -> np.ndarray:
        """Standard normals of shape (n_steps, count) for consecutive steps."""
        if count > 4 * blocks_per_step:
            raise ValueError("count exceeds the per-step block budget")
        if n_steps == 0 or count == 0:
            return np.zeros((n_steps, count))
        bg = Philox(key=self.seed, counter=[step0 * blocks_per_step, 0, self.replica, 0])
        raw = bg.random_raw(n_steps * blocks_per_step * 4)
        raw = raw.reshape(n_steps, blocks_per_step * 4)[:, :count]
        u = (raw >> np.uint64(11)).astype(np.float64) * _INV_2_53 + 0.5 * _INV_2_53
        return ndtri(u)

    def normals(self, step: int, count: int, blocks_per_step: int = 1) -> np.ndarray:
        return self.normals_block(step, 1, count, blocks_per_step)[0]


# ---------------------------------------------------------------------------
# discretised noise
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteNoise:
    """Noise model projected to a grid.

    ``d_bound`` is the gradient-energy surrogate ``sum_k |d1_plus g^k|_2^2``
    that enters the discrete stationary estimates; ``h2_bound`` is the H^2
    trace of the underlying modes (finite for any sinusoidal list and an
    upper bound for ``d_bound``).
    """

    model: NoiseModel
    spec: GridSpec
    g_vecs: tuple = field(init=False)
    mode_matrix: np.ndarray = field(init=False)  # (K, N)
    d_bound: float = field(init=False)
    h2_bound: float = field(init=False)
    blocks_per_step: int = field(init=False)

    def __post_init__(self):
        gs = tuple(
            project_sinusoid(m.amplitude, m.frequency, m.phase, self.spec)
            for m in self.model.modes
        )
        mat = (
            np.array([g.values for g in gs])
            if gs
            else np.zeros((0, self.spec.n_cells))
        )
        mat.flags.writeable = False
        grads = d1_plus_values(mat, self.spec.n_cells) if len(gs) else mat
        object.__setattr__(self, "g_vecs", gs)
        object.__setattr__(self, "mode_matrix", mat)
        object.__setattr__(self, "d_bound", float(np.sum(grads * grads) / self.spec.n_cells))
        object.__setattr__(self, "h2_bound", float(sum(m.h2_norm_sq for m in self.model.modes)))
        object.__setattr__(self, "blocks_per_step", max(1, -(-len(gs) // 4)))

    @property
    def n_modes(self) -> int:
        return len(self.g_vecs)

    @property
    def seed(self) -> int:
        return self.model.seed

    @cached_property
    def q_matrix(self) -> np.ndarray:
        """Componentwise covariance ``Q = sum_k g^k (g^k)^T`` (N x N)."""
        return self.mode_matrix.T @ self.mode_matrix

    def stream(self, replica: int = 0) -> RngStream:
        return RngStream(self.model.seed, replica)

    def draw(self, stream: RngStream, step0: int, n_steps: int) -> np.ndarray:
        """Mode variables xi of shape (n_steps, K) for consecutive steps."""
        return stream.normals_block(step0, n_steps, self.n_modes, self.blocks_per_step)


def discretize(model: NoiseModel, spec: GridSpec) -> DiscreteNoise:
    """Project every mode onto the grid (exact sinusoid cell averages)."""
    return DiscreteNoise(model, spec)


def increments_from_xi(dn: DiscreteNoise, dt: float, xi: np.ndarray) -> np.ndarray:
    """Increments ``sqrt(dt) sum_k xi_k g^k`` for xi of shape (..., K)."""
    if dn.n_modes == 0:
        return np.zeros(xi.shape[:-1] + (dn.spec.n_cells,))
    return np.sqrt(dt) * (xi @ dn.mode_matrix)


def sample_increment(dn: DiscreteNoise, dt: float, stream: RngStream, step: int = 1) -> GridVector:
    """One Wiener increment over a step of length ``dt``.

    The mode variables depend only on (stream, step); grids sharing a stream
    therefore receive increments driven by identical mode variables.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    xi = dn.draw(stream, step, 1)[0]
    vals = increments_from_xi(dn, dt, xi)
    return GridVector(recentre(vals), dn.spec)
