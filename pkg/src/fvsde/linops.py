"""Cyclic tridiagonal solves and the spectrum of the second-difference
operator.

No FFT is used anywhere: the experiments run at a few thousand cells at
most, so spectra come from the closed-form cosine formula and Fourier
vectors are synthesized directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-14
RESIDUAL_TOL = 1e-12
DENSE_FALLBACK_N = 8


class SolverError(RuntimeError):
    """Singular or numerically unusable cyclic tridiagonal system."""


@dataclass(frozen=True)
class CyclicTridiag:
    """Cyclic tridiagonal matrix stored by bands of shape ``(..., n)``.

    Row ``i`` holds ``lower[i]`` at column ``i-1``, ``diag[i]`` at ``i`` and
    ``upper[i]`` at ``i+1``, indices mod n (the corners ``(0, n-1)`` and
    ``(n-1, 0)`` come from ``lower[0]`` and ``upper[n-1]``).
    """

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        di = np.asarray(self.diag, dtype=np.float64)
        up = np.asarray(self.upper, dtype=np.float64)
        if not (lo.shape == di.shape == up.shape):
            raise ValueError("band shapes differ")
        if di.shape[-1] < 2:
            raise ValueError("need at least 2 unknowns")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "diag", di)
        object.__setattr__(self, "upper", up)

    @property
    def n(self) -> int:
        return self.diag.shape[-1]

    def identity_plus(self, scale: float) -> "CyclicTridiag":
        """Matrix ``I + scale * self`` (used for ``I - dt J``)."""
        return CyclicTridiag(scale * self.lower, 1.0 + scale * self.diag, scale * self.upper)

    def to_dense(self) -> np.ndarray:
        if self.diag.ndim != 1:
            raise ValueError("to_dense requires unbatched bands")
        n = self.n
        m = np.diag(self.diag)
        idx = np.arange(n)
        m[idx, (idx + 1) % n] += self.upper
        m[idx, (idx - 1) % n] += self.lower
        return m


def multiply(m: CyclicTridiag, x) -> np.ndarray:
    """Matrix-vector product along the last axis (batched)."""
    xv = x.values if hasattr(x, "values") else np.asarray(x, dtype=np.float64)
    return (
        m.diag * xv
        + m.lower * np.roll(xv, 1, axis=-1)
        + m.upper * np.roll(xv, -1, axis=-1)
    )


def _thomas(lo, di, up, rhs):
    """Non-cyclic tridiagonal solve; all arrays shaped (n, batch)."""
    n = di.shape[0]
    c = np.empty_like(di)
    y = np.empty_like(rhs)
    beta = di[0]
    if np.any(np.abs(beta) < PIVOT_TOL):
        raise SolverError("pivot below tolerance in tridiagonal elimination")
    c[0] = up[0] / beta
    y[0] = rhs[0] / beta
    for i in range(1, n):
        beta = di[i] - lo[i] * c[i - 1]
        if np.any(np.abs(beta) < PIVOT_TOL):
            raise SolverError("pivot below tolerance in tridiagonal elimination")
        c[i] = up[i] / beta
        y[i] = (rhs[i] - lo[i] * y[i - 1]) / beta
    for i in range(n - 2, -1, -1):
        y[i] -= c[i] * y[i + 1]
    return y


def solve_cyclic(m: CyclicTridiag, rhs) -> np.ndarray:
    """Solve ``m x = rhs`` along the last axis.

    Thomas elimination with a rank-1 corner correction; systems with
    ``n <= 8`` go through a dense solve instead.  The solution is verified
    by multiplying back: the max-norm residual must not exceed
    ``1e-12 (1 + |rhs|_inf)``.
    """
    b = rhs.values if hasattr(rhs, "values") else np.asarray(rhs, dtype=np.float64)
    n = m.n
    if b.shape[-1] != n:
        raise ValueError("rhs length does not match the matrix")
    batch_shape = np.broadcast_shapes(m.diag.shape[:-1], b.shape[:-1])

    if n <= DENSE_FALLBACK_N:
        x = _solve_dense(m, b, batch_shape)
    else:
        x = _solve_sherman_morrison(m, b, batch_shape)

    resid = np.max(np.abs(multiply(m, x) - b))
    if not np.isfinite(resid) or resid > RESIDUAL_TOL * (1.0 + np.max(np.abs(b))):
        raise SolverError(f"cyclic solve residual {resid:.3e} exceeds tolerance")
    return x


def _solve_dense(m, b, batch_shape):
    n = m.n
    lo = np.broadcast_to(m.lower, batch_shape + (n,)).reshape(-1, n)
    di = np.broadcast_to(m.diag, batch_shape + (n,)).reshape(-1, n)
    up = np.broadcast_to(m.upper, batch_shape + (n,)).reshape(-1, n)
    bb = np.broadcast_to(b, batch_shape + (n,)).reshape(-1, n)
    idx = np.arange(n)
    out = np.empty_like(bb)
    for k in range(bb.shape[0]):
        dense = np.diag(di[k])
        dense[idx, (idx + 1) % n] += up[k]
        dense[idx, (idx - 1) % n] += lo[k]
        try:
            out[k] = np.linalg.solve(dense, bb[k])
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular dense system: {exc}") from exc
    return out.reshape(batch_shape + (n,))


def _solve_sherman_morrison(m, b, batch_shape):
    n = m.n
    # work in (n, batch) layout so the elimination sweeps touch contiguous rows
    lo = np.ascontiguousarray(np.moveaxis(np.broadcast_to(m.lower, batch_shape + (n,)), -1, 0))
    di = np.ascontiguousarray(np.moveaxis(np.broadcast_to(m.diag, batch_shape + (n,)), -1, 0))
    up = np.ascontiguousarray(np.moveaxis(np.broadcast_to(m.upper, batch_shape + (n,)), -1, 0))
    bb = np.ascontiguousarray(np.moveaxis(np.broadcast_to(b, batch_shape + (n,)), -1, 0))

    # corner-correction shift; kept away from zero for stability
    gamma = np.where(np.abs(di[0]) >= 1.0, -di[0], np.where(di[0] >= 0.0, -1.0, 1.0))
    dmod = di.copy()
    dmod[0] = di[0] - gamma
    dmod[-1] = di[-1] - up[-1] * lo[0] / gamma

    # two right-hand sides: the actual rhs and the rank-1 column u
    rhs2 = np.zeros((n,) + (2,) + bb.shape[1:])
    rhs2[:, 0] = bb
    rhs2[0, 1] = gamma
    rhs2[-1, 1] = up[-1]
    sol = _thomas(lo[:, None], dmod[:, None], up[:, None], rhs2)
    y, z = sol[:, 0], sol[:, 1]

    vy = y[0] + lo[0] / gamma * y[-1]
    vz = 1.0 + z[0] + lo[0] / gamma * z[-1]
    if np.any(np.abs(vz) < PIVOT_TOL):
        raise SolverError("rank-1 corner correction is singular")
    x = y - z * (vy / vz)
    return np.moveaxis(x, 0, -1)


# ---------------------------------------------------------------------------
# spectrum of the second-difference operator
# ---------------------------------------------------------------------------

def circulant_spectrum(spec) -> np.ndarray:
    """Eigenvalues ``-2 N^2 (1 - cos(2 pi m / N))`` of the periodic
    second-difference stencil, for frequencies ``m = 0 .. N-1``."""
    n = spec.n_cells
    m = np.arange(n)
    return -2.0 * n * n * (1.0 - np.cos(2.0 * np.pi * m / n))


def fourier_mode(spec, m: int, kind: str = "cos") -> np.ndarray:
    """Discrete Fourier vector sampled at the interfaces ``x_i = i/N``."""
    n = spec.n_cells
    theta = 2.0 * np.pi * m * np.arange(1, n + 1) / n
    return np.cos(theta) if kind == "cos" else np.sin(theta)


def d2_eigenbasis(spec):
    """Orthonormal (Euclidean) real eigenbasis of the second-difference
    operator.

    Returns ``(rates, basis)`` where ``basis`` has eigenvectors as rows and
    ``rates[j] >= 0`` is the decay rate (the eigenvalue is ``-rates[j]``).
    """
    n = spec.n_cells
    rows = [np.full(n, 1.0 / np.sqrt(n))]
    rates = [0.0]
    for m in range(1, n // 2 + 1):
        lam = 2.0 * n * n * (1.0 - np.cos(2.0 * np.pi * m / n))
        if 2 * m == n:
            rows.append(fourier_mode(spec, m, "cos") / np.sqrt(n))
            rates.append(lam)
        else:
            rows.append(fourier_mode(spec, m, "cos") * np.sqrt(2.0 / n))
            rates.append(lam)
            rows.append(fourier_mode(spec, m, "sin") * np.sqrt(2.0 / n))
            rates.append(lam)
    return np.array(rates), np.vstack(rows)
