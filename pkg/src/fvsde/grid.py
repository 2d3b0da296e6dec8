"""Discrete torus geometry: zero-mean grid vectors, difference operators,
norms, projection and reconstruction.

The unit torus is split into ``N`` cells ``(x_{i-1}, x_i]`` with interfaces
``x_i = i/N``.  States live in the zero-sum subspace of R^N and all norms and
inner products are normalised by ``1/N`` so that they are consistent with the
corresponding L^p norms of piecewise-constant reconstructions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

ZERO_MEAN_TOL = 1e-12
RECENTRE_TRIGGER = 1e-14

# nodes/weights of 5-point Gauss-Legendre on [0, 1]; exact for degree <= 9
_GL_NODES = (np.polynomial.legendre.leggauss(5)[0] + 1.0) / 2.0
_GL_WEIGHTS = np.polynomial.legendre.leggauss(5)[1] / 2.0


class InvalidFunctionError(ValueError):
    """Raised when a function handed to :func:`project` produces non-finite
    cell integrals."""


@dataclass(frozen=True)
class GridSpec:
    """Regular mesh of the unit torus with ``n_cells`` cells."""

    n_cells: int

    def __post_init__(self):
        if not isinstance(self.n_cells, (int, np.integer)) or self.n_cells < 2:
            raise ValueError(f"n_cells must be an integer >= 2, got {self.n_cells!r}")

    @property
    def cell_width(self) -> float:
        return 1.0 / self.n_cells

    @property
    def interfaces(self) -> np.ndarray:
        """Interface positions ``x_i = i/N`` for ``i = 1..N``."""
        return np.arange(1, self.n_cells + 1) / self.n_cells


@dataclass(frozen=True)
class GridVector:
    """Zero-mean real vector indexed by the discrete torus.

    The wrapped array is copied at construction and made read-only; all
    operations on grid vectors are pure functions.
    """

    values: np.ndarray
    spec: GridSpec

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64).copy()
        if arr.shape != (self.spec.n_cells,):
            raise ValueError(
                f"expected {self.spec.n_cells} values, got shape {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("grid vector entries must be finite")
        if abs(arr.mean()) > ZERO_MEAN_TOL:
            raise ValueError(
                f"grid vector mean {arr.mean():.3e} exceeds the zero-mean "
                f"tolerance {ZERO_MEAN_TOL:g}"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def n(self) -> int:
        return self.spec.n_cells

    @classmethod
    def zero(cls, spec: GridSpec) -> "GridVector":
        return cls(np.zeros(spec.n_cells), spec)


def recentre(values: np.ndarray) -> np.ndarray:
    """Subtract the mean along the last axis when it exceeds the drift
    trigger ``1e-14``; otherwise return the input unchanged."""
    mean = values.sum(axis=-1, keepdims=True) * (1.0 / values.shape[-1])
    if np.abs(mean).max() > RECENTRE_TRIGGER:
        return values - mean
    return values


# ---------------------------------------------------------------------------
# difference operators, inner product and norms
# ---------------------------------------------------------------------------

def shift_next(values: np.ndarray) -> np.ndarray:
    """Periodic gather of ``v_{i+1}`` along the last axis."""
    return np.concatenate((values[..., 1:], values[..., :1]), axis=-1)


def shift_prev(values: np.ndarray) -> np.ndarray:
    """Periodic gather of ``v_{i-1}`` along the last axis."""
    return np.concatenate((values[..., -1:], values[..., :-1]), axis=-1)


def d1_plus_values(values: np.ndarray, n_cells: int) -> np.ndarray:
    """Forward difference ``N (v_{i+1} - v_i)`` with periodic indexing."""
    return n_cells * (shift_next(values) - values)


def d1_minus_values(values: np.ndarray, n_cells: int) -> np.ndarray:
    """Backward difference ``N (v_i - v_{i-1})`` with periodic indexing."""
    return n_cells * (values - shift_prev(values))


def d2_values(values: np.ndarray, n_cells: int) -> np.ndarray:
    """Centered second difference ``N^2 (v_{i+1} - 2 v_i + v_{i-1})``."""
    return n_cells * n_cells * (shift_next(values) - 2.0 * values + shift_prev(values))


def d1_plus(v: GridVector) -> GridVector:
    return GridVector(d1_plus_values(v.values, v.n), v.spec)


def d1_minus(v: GridVector) -> GridVector:
    return GridVector(d1_minus_values(v.values, v.n), v.spec)


def d2(v: GridVector) -> GridVector:
    return GridVector(d2_values(v.values, v.n), v.spec)


def inner(v: GridVector | np.ndarray, w: GridVector | np.ndarray) -> float:
    """Normalised scalar product ``(1/N) sum_i v_i w_i``."""
    a = v.values if isinstance(v, GridVector) else np.asarray(v)
    b = w.values if isinstance(w, GridVector) else np.asarray(w)
    return float(np.dot(a, b) / a.shape[-1])


def lp_norm(v: GridVector | np.ndarray, p: float) -> float:
    """Normalised l^p norm ``((1/N) sum |v_i|^p)^{1/p}``; max norm for p=inf.

    Raises ``ValueError`` for ``p < 1``.
    """
    if p < 1:
        raise ValueError(f"lp_norm requires p >= 1, got {p}")
    a = v.values if isinstance(v, GridVector) else np.asarray(v)
    if np.isinf(p):
        return float(np.max(np.abs(a)))
    if p == 2:
        return float(np.sqrt(np.mean(a * a)))
    return float(np.mean(np.abs(a) ** p) ** (1.0 / p))


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def project(f, spec: GridSpec) -> GridVector:
    """Project an integrable zero-mean function onto cell averages.

    ``(project f)_i = N * integral of f over (x_{i-1}, x_i]``.  Objects
    exposing ``cell_averages(spec)`` (the reconstructions below) are
    integrated exactly; plain callables are integrated with 5-point
    Gauss-Legendre quadrature per cell.  The output is re-centered so the
    zero-mean invariant holds exactly.
    """
    if hasattr(f, "cell_averages"):
        avg = np.asarray(f.cell_averages(spec), dtype=np.float64)
    else:
        n = spec.n_cells
        left = np.arange(n) / n
        # quadrature nodes per cell, shape (n, 5)
        x = left[:, None] + _GL_NODES[None, :] / n
        vals = np.asarray(f(x), dtype=np.float64)
        if vals.shape != x.shape:
            vals = np.broadcast_to(vals, x.shape)
        avg = vals @ _GL_WEIGHTS
    if not np.all(np.isfinite(avg)):
        raise InvalidFunctionError("cell integrals are not finite")
    return GridVector(avg - avg.mean(), spec)


def project_sinusoid(amplitude: float, frequency: int, phase: str, spec: GridSpec) -> GridVector:
    """Exact cell averages of ``amplitude * sin/cos(2 pi m x)``.

    Uses the closed-form antiderivative, so the result is exact to machine
    precision (the quadrature path in :func:`project` is not exact for
    sinusoids).
    """
    if frequency < 1 or int(frequency) != frequency:
        raise ValueError("frequency must be a positive integer")
    if phase not in ("sin", "cos"):
        raise ValueError(f"phase must be 'sin' or 'cos', got {phase!r}")
    n = spec.n_cells
    w = 2.0 * np.pi * frequency
    edges = np.arange(n + 1) / n
    if phase == "sin":
        anti = -np.cos(w * edges) / w
    else:
        anti = np.sin(w * edges) / w
    vals = amplitude * n * (anti[1:] - anti[:-1])
    return GridVector(recentre(vals), spec)


# ---------------------------------------------------------------------------
# reconstruction operators
# ---------------------------------------------------------------------------

def _wrap_cells(x: np.ndarray, n: int):
    """Map positions to (cell index in 0..n-1, local coordinate in (0, 1])
    using right-closed cells ``(x_{i-1}, x_i]``."""
    frac = np.mod(np.asarray(x, dtype=np.float64), 1.0)
    frac = np.where(frac == 0.0, 1.0, frac)
    idx = np.ceil(frac * n).astype(int) - 1
    idx = np.clip(idx, 0, n - 1)
    s = frac * n - idx
    return idx, s


@dataclass(frozen=True)
class CellPolynomial:
    """Piecewise polynomial on the torus, one polynomial per cell.

    ``coeffs[i]`` holds the local coefficients ``(a, b, c)`` of
    ``a + b s + c s^2`` in the cell coordinate ``s = N x - (i - 1) in (0, 1]``.
    Covers the reconstruction orders 0 (constant), 1 (linear interpolant)
    and 2 (quadratic with curvature matching the second difference).
    """

    coeffs: np.ndarray  # (n, 3)
    spec: GridSpec
    order: int = field(default=0)

    def __call__(self, x):
        idx, s = _wrap_cells(x, self.spec.n_cells)
        a, b, c = self.coeffs[idx, 0], self.coeffs[idx, 1], self.coeffs[idx, 2]
        out = a + s * (b + s * c)
        return out if np.ndim(x) else float(out)

    def cell_averages(self, spec: GridSpec | None = None) -> np.ndarray:
        """Exact averages over this grid's own cells."""
        if spec is not None and spec != self.spec:
            raise ValueError("cell_averages is only exact on the native grid")
        a, b, c = self.coeffs.T
        return a + b / 2.0 + c / 3.0

    def _node_values(self) -> np.ndarray:
        # values at the quadrature nodes, shape (n, 5)
        s = _GL_NODES[None, :]
        a, b, c = (self.coeffs[:, k][:, None] for k in range(3))
        return a + s * (b + s * c)

    def l2_norm(self) -> float:
        vals = self._node_values()
        return float(np.sqrt(np.sum((vals * vals) @ _GL_WEIGHTS) / self.spec.n_cells))

    def l2_distance(self, other: "CellPolynomial") -> float:
        if other.spec != self.spec:
            raise ValueError("operands live on different grids")
        diff = self._node_values() - other._node_values()
        return float(np.sqrt(np.sum((diff * diff) @ _GL_WEIGHTS) / self.spec.n_cells))

    def derivative_l2_norm(self) -> float:
        """L^2 norm of the (piecewise) first derivative in x."""
        n = self.spec.n_cells
        s = _GL_NODES[None, :]
        b, c = self.coeffs[:, 1][:, None], self.coeffs[:, 2][:, None]
        dv = (b + 2.0 * s * c) * n  # d/dx = N d/ds
        return float(np.sqrt(np.sum((dv * dv) @ _GL_WEIGHTS) / n))

    def second_derivative_l2_norm(self) -> float:
        n = self.spec.n_cells
        c = self.coeffs[:, 2]
        d2v = 2.0 * c * n * n
        return float(np.sqrt(np.mean(d2v * d2v)))


def reconstruct(v: GridVector, order: int) -> CellPolynomial:
    """Reconstruction of a grid vector as a function on the torus.

    order 0
        piecewise constant, value ``v_i`` on ``(x_{i-1}, x_i]``. Projecting
        back with :func:`project` recovers ``v`` exactly.
    order 1
        continuous piecewise linear interpolant of the interface values
        ``v_i`` at ``x_i``.
    order 2
        continuous piecewise quadratic interpolant of the interface values
        whose curvature on cell ``i`` equals the centered second difference
        ``(d2 v)_i``.
    """
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    n = v.n
    vals = v.values
    prev = np.roll(vals, 1)
    coeffs = np.zeros((n, 3))
    if order == 0:
        coeffs[:, 0] = vals
    elif order == 1:
        coeffs[:, 0] = prev
        coeffs[:, 1] = vals - prev
    else:
        # a + b s + c s^2 with a = v_{i-1}, a + b + c = v_i and
        # curvature 2 c N^2 = (d2 v)_i
        curv = d2_values(vals, n)
        c = curv / (2.0 * n * n)
        coeffs[:, 0] = prev
        coeffs[:, 2] = c
        coeffs[:, 1] = vals - prev - c
    return CellPolynomial(coeffs, v.spec, order)


def pconst_l2_distance(coarse: GridVector, fine: GridVector) -> float:
    """L^2 distance of the piecewise-constant reconstructions of two vectors
    on nested grids (the finer cell count must be a multiple of the coarser).
    """
    nc, nf = coarse.n, fine.n
    if nf % nc != 0:
        raise ValueError(f"grids are not nested: {nc} does not divide {nf}")
    rep = np.repeat(coarse.values, nf // nc)
    diff = fine.values - rep
    return float(np.sqrt(np.mean(diff * diff)))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def to_csv(v: GridVector) -> str:
    """CSV rows ``i,x_i,v_i`` with 17 significant digits."""
    lines = ["i,x_i,v_i"]
    xs = v.spec.interfaces
    for i in range(v.n):
        lines.append(f"{i + 1},{xs[i]:.17g},{v.values[i]:.17g}")
    return "\n".join(lines) + "\n"


def from_csv(text: str, spec: GridSpec | None = None) -> GridVector:
    rows = [ln for ln in text.splitlines() if ln and not ln.startswith(("i,", "#"))]
    vals = np.array([float(ln.split(",")[2]) for ln in rows])
    return GridVector(vals, spec or GridSpec(len(vals)))


def to_snapshot(v: GridVector) -> bytes:
    """Little-endian binary snapshot: N as u64 followed by N float64."""
    return struct.pack("<Q", v.n) + v.values.astype("<f8").tobytes()


def from_snapshot(data: bytes) -> GridVector:
    (n,) = struct.unpack_from("<Q", data, 0)
    vals = np.frombuffer(data, dtype="<f8", count=n, offset=8)
    return GridVector(vals, GridSpec(int(n)))
