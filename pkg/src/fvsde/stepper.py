"""Split-step backward Euler integrator.

Each step first solves the implicit drift equation ``w = v + dt b(w)``
(damped Newton on the residual, cyclic tridiagonal Jacobian solves), then
adds the Wiener increment.  The drift solve dissipates energy
(``|w|^2 <= |v|^2 - 2 nu dt |d1_plus w|^2``) and coupled trajectories driven
by identical increments contract in the normalised l^1 norm, which is what
makes the chain's long-time statistics trustworthy.

All drivers are batched over replicas/rows internally; a single trajectory
is a batch of one, so stepping is bit-identical across both entry points.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .flux import NumericalFlux, drift_jacobian_bands, drift_values
from .grid import GridSpec, GridVector, recentre, shift_next, shift_prev
from .linops import CyclicTridiag, solve_cyclic
from .noise import DiscreteNoise, RngStream, increments_from_xi

_CHUNK = 512


class NewtonError(RuntimeError):
    """Implicit stage did not converge; carries the last residual."""

    def __init__(self, residual: float, iterations: int, step_index=None, rows=None, detail=""):
        self.residual = residual
        self.iterations = iterations
        self.step_index = step_index
        self.rows = rows
        msg = f"implicit stage failed after {iterations} iterations (residual {residual:.3e})"
        if step_index is not None:
            msg += f" at step {step_index}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


@dataclass(frozen=True)
class StepperConfig:
    nu: float
    dt: float
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    recentre_every: int = 64

    def __post_init__(self):
        if self.nu <= 0 or self.dt <= 0 or self.newton_tol <= 0:
            raise ValueError("nu, dt and newton_tol must be positive")
        if self.newton_max_iter < 1 or self.recentre_every < 1:
            raise ValueError("newton_max_iter and recentre_every must be >= 1")


@dataclass
class TrajectoryState:
    step_index: int
    u: GridVector
    u_half: GridVector
    rng: RngStream


@dataclass
class Observer:
    """Callback fired every ``stride`` steps (step 0 included); the records
    accumulate in order."""

    name: str
    fn: Callable[[int, GridVector], Any]
    stride: int = 1
    records: list = field(default_factory=list)


def _row_l2(values: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("...i,...i->...", values, values) / values.shape[-1])


# ---------------------------------------------------------------------------
# implicit stage
# ---------------------------------------------------------------------------

_resolvent_cache: dict = {}


def _viscous_resolvent(n: int, nu: float, dt: float):
    """Transposed dense inverse of ``A = I - nu dt D2`` plus the scalar
    stencil weight, for the constant-coefficient fast path."""
    key = (n, nu, dt)
    entry = _resolvent_cache.get(key)
    if entry is None:
        visc = nu * dt * n * n
        m = CyclicTridiag(
            np.full(n, -visc), np.full(n, 1.0 + 2.0 * visc), np.full(n, -visc)
        )
        mat = np.ascontiguousarray(np.linalg.inv(m.to_dense()).T)
        mat.flags.writeable = False
        entry = (mat, visc)
        _resolvent_cache[key] = entry
    return entry


def implicit_stage_batch(v_rows: np.ndarray, nf: NumericalFlux, cfg: StepperConfig, n_cells: int,
                         initial_guess: np.ndarray | None = None) -> np.ndarray:
    """Solve ``w = v + dt b(w)`` for every row of ``v_rows`` (B, N).

    Newton iteration from ``w0 = v`` with the exact Jacobian and a
    backtracking line search (halving, at most 20 halvings, a step is
    accepted only if the l^2 residual strictly decreases).  Convergence:
    ``|w - v - dt b(w)|_2 <= newton_tol (1 + |v|_2)`` per row.  Rows that
    fail to converge raise :class:`NewtonError` (never silently continue).
    """
    dt, nu = cfg.dt, cfg.nu
    v_rows = np.atleast_2d(v_rows)

    if nf.is_zero:
        rt, visc = _viscous_resolvent(n_cells, nu, dt)
        w = v_rows @ rt
        # residual of A w = v with the exact stencil (w - v - dt b(w))
        resid = (1.0 + 2.0 * visc) * w - visc * (shift_next(w) + shift_prev(w)) - v_rows
        rnorm = _row_l2(resid)
        target = cfg.newton_tol * (1.0 + _row_l2(v_rows))
        bad = rnorm > target
        if np.any(bad):
            raise NewtonError(float(np.max(rnorm[bad])), 1, rows=np.flatnonzero(bad))
        return recentre(w)

    w = v_rows.copy() if initial_guess is None else np.atleast_2d(initial_guess).copy()
    resid = w - v_rows - dt * drift_values(w, nf, nu, n_cells)
    rnorm = _row_l2(resid)
    target = cfg.newton_tol * (1.0 + _row_l2(v_rows))
    active = rnorm > target
    iters = 0
    while np.any(active):
        if iters >= cfg.newton_max_iter:
            rows = np.flatnonzero(active)
            raise NewtonError(float(np.max(rnorm[rows])), iters, rows=rows)
        iters += 1
        idx = np.flatnonzero(active)
        wa, va, ra = w[idx], v_rows[idx], resid[idx]
        lo, di, up = drift_jacobian_bands(wa, nf, nu, n_cells)
        system = CyclicTridiag(-dt * lo, 1.0 - dt * di, -dt * up)
        delta = solve_cyclic(system, -ra)

        steplen = np.ones(len(idx))
        accepted = np.zeros(len(idx), dtype=bool)
        w_next, r_next, rn_next = wa.copy(), ra.copy(), rnorm[idx].copy()
        for _ in range(21):  # full step plus up to 20 halvings
            pending = ~accepted
            if not pending.any():
                break
            wt = wa[pending] + steplen[pending, None] * delta[pending]
            rt = wt - va[pending] - dt * drift_values(wt, nf, nu, n_cells)
            rtn = _row_l2(rt)
            better = rtn < rnorm[idx][pending]
            take = np.flatnonzero(pending)[better]
            w_next[take], r_next[take] = wt[better], rt[better]
            rn_next[take] = rtn[better]
            accepted[take] = True
            steplen[~accepted] *= 0.5
        if not accepted.all():
            rows = idx[~accepted]
            raise NewtonError(float(np.max(rnorm[rows])), iters, rows=rows,
                              detail="line search found no residual decrease")
        w[idx], resid[idx] = w_next, r_next
        rnorm[idx] = rn_next
        active = rnorm > target
    return recentre(w)


def implicit_stage(v: GridVector, nf: NumericalFlux, cfg: StepperConfig,
                   initial_guess: GridVector | None = None) -> GridVector:
    """Single-state implicit stage; see :func:`implicit_stage_batch`."""
    guess = None if initial_guess is None else initial_guess.values[None, :]
    w = implicit_stage_batch(v.values[None, :], nf, cfg, v.n, guess)
    return GridVector(w[0], v.spec)


# ---------------------------------------------------------------------------
# stepping drivers
# ---------------------------------------------------------------------------

def step(state: TrajectoryState, nf: NumericalFlux, dn: DiscreteNoise,
         cfg: StepperConfig) -> TrajectoryState:
    """One split step: implicit drift solve, then the Wiener increment."""
    n_next = state.step_index + 1
    try:
        w = implicit_stage_batch(state.u.values[None, :], nf, cfg, state.u.n)
    except NewtonError as err:
        raise NewtonError(err.residual, err.iterations, step_index=n_next) from err
    xi = dn.draw(state.rng, n_next, 1)
    u = w + increments_from_xi(dn, cfg.dt, xi)
    if n_next % cfg.recentre_every == 0:
        u = recentre(u)
    spec = state.u.spec
    return TrajectoryState(n_next, GridVector(u[0], spec), GridVector(w[0], spec), state.rng)


def drive_rows(u_rows: np.ndarray, n_steps: int, nf: NumericalFlux, dn: DiscreteNoise,
               cfg: StepperConfig, replica_ids, observe=None, step0: int = 0,
               chunk: int = _CHUNK):
    """Advance a batch of rows (one per replica id) by ``n_steps`` steps.

    ``observe(step_index, rows)`` is called on the raw state array at step
    ``step0`` before stepping and after every step.  Returns the final rows
    and the most recent half-step rows (the initial rows when no step was
    taken).  Stepper failures carry the failing step index and replica ids.
    """
    u = np.atleast_2d(np.array(u_rows, dtype=np.float64))
    replica_ids = list(replica_ids)
    if u.shape[0] == 1 and len(replica_ids) > 1:
        u = np.repeat(u, len(replica_ids), axis=0)
    if observe is not None:
        observe(step0, u)
    n = dn.spec.n_cells
    streams = [dn.stream(r) for r in replica_ids]
    w = u
    done = 0
    while done < n_steps:
        span = min(chunk, n_steps - done)
        # increments for steps step0+done+1 .. step0+done+span
        xi = np.stack([dn.draw(s, step0 + done + 1, span) for s in streams])
        dw = increments_from_xi(dn, cfg.dt, xi)  # (B, span, N)
        for j in range(span):
            step_index = step0 + done + j + 1
            try:
                w = implicit_stage_batch(u, nf, cfg, n)
            except NewtonError as err:
                bad = [replica_ids[i] for i in (err.rows if err.rows is not None else [])]
                raise NewtonError(err.residual, err.iterations, step_index=step_index,
                                  rows=bad, detail=f"replicas {bad}") from err
            u = w + dw[:, j]
            if step_index % cfg.recentre_every == 0:
                u = recentre(u)
            if observe is not None:
                observe(step_index, u)
        done += span
    return u, w


def run_trajectory(u0: GridVector, n_steps: int, nf: NumericalFlux, dn: DiscreteNoise,
                   cfg: StepperConfig, observers=(), rng: RngStream | None = None) -> TrajectoryState:
    """Run one trajectory, firing the observers at their strides.

    With stride 1 an observer collects exactly ``n_steps + 1`` records (the
    initial state included).  Returns the final state.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    stream = rng if rng is not None else dn.stream(0)
    spec = u0.spec
    observers = list(observers)

    def observe(step_index, rows):
        gv = None
        for ob in observers:
            if step_index % ob.stride == 0:
                if gv is None:
                    gv = GridVector(recentre(rows[0]), spec)
                ob.records.append(ob.fn(step_index, gv))

    u, w = drive_rows(u0.values[None, :], n_steps, nf, dn, cfg, [stream.replica],
                      observe=observe if observers else None)
    return TrajectoryState(n_steps, GridVector(recentre(u[0]), spec),
                           GridVector(recentre(w[0]), spec), stream)


def run_coupled_pair(u0: GridVector, v0: GridVector, n_steps: int, nf: NumericalFlux,
                     dn: DiscreteNoise, cfg: StepperConfig,
                     rng: RngStream | None = None) -> np.ndarray:
    """Advance two trajectories with identical noise increments and return
    the normalised l^1 distance at every step (initial distance included)."""
    if u0.spec != v0.spec:
        raise ValueError("coupled states must share a grid")
    stream = rng if rng is not None else dn.stream(0)
    n = u0.n
    pair = np.vstack([u0.values, v0.values])
    dist = np.empty(n_steps + 1)
    dist[0] = np.mean(np.abs(pair[0] - pair[1]))
    done = 0
    while done < n_steps:
        span = min(_CHUNK, n_steps - done)
        xi = dn.draw(stream, done + 1, span)
        dw = increments_from_xi(dn, cfg.dt, xi)  # (span, N)
        for j in range(span):
            step_index = done + j + 1
            try:
                w = implicit_stage_batch(pair, nf, cfg, n)
            except NewtonError as err:
                raise NewtonError(err.residual, err.iterations, step_index=step_index) from err
            pair = w + dw[j]
            if step_index % cfg.recentre_every == 0:
                pair = recentre(pair)
            dist[step_index] = np.mean(np.abs(pair[0] - pair[1]))
        done += span
    return dist


def run_coupled_refinement(dn_coarse: DiscreteNoise, dn_fine: DiscreteNoise,
                           nf: NumericalFlux, cfg_coarse: StepperConfig,
                           cfg_fine: StepperConfig, t_final: float,
                           n_replicas: int = 1) -> np.ndarray:
    """Strong error between a coarse and a fine grid driven by one stream.

    Both grids see the projection of the same spectral noise: the mode
    variables are drawn once per fine step and the coarse increment uses
    their window sums.  Returns the per-replica L^2 distances of the
    piecewise-constant reconstructions at ``t_final``.
    """
    nc, nfine = dn_coarse.spec.n_cells, dn_fine.spec.n_cells
    if nfine % nc != 0:
        raise ValueError(f"fine grid {nfine} must refine the coarse grid {nc}")
    if dn_coarse.model != dn_fine.model:
        raise ValueError("both grids must share one noise model (same modes, same seed)")
    if cfg_coarse.nu != cfg_fine.nu:
        raise ValueError("viscosities differ between the two configurations")
    ratio_t = int(round(cfg_coarse.dt / cfg_fine.dt))
    if ratio_t < 1 or abs(cfg_coarse.dt - ratio_t * cfg_fine.dt) > 1e-12 * cfg_coarse.dt:
        raise ValueError("fine dt must divide the coarse dt")
    n_fine_steps = int(round(t_final / cfg_fine.dt))
    if n_fine_steps % ratio_t != 0:
        raise ValueError("t_final must hold a whole number of coarse steps")

    m = n_replicas
    uc = np.zeros((m, nc))
    uf = np.zeros((m, nfine))
    streams = [dn_fine.stream(r) for r in range(m)]
    sqrt_ratio = np.sqrt(float(ratio_t))
    xi_window = np.zeros((m, dn_fine.n_modes))
    done = 0
    while done < n_fine_steps:
        span = min(_CHUNK, n_fine_steps - done)
        xi = np.stack([dn_fine.draw(s, done + 1, span) for s in streams])  # (m, span, K)
        dw_f = increments_from_xi(dn_fine, cfg_fine.dt, xi)
        for j in range(span):
            step_index = done + j + 1
            uf = implicit_stage_batch(uf, nf, cfg_fine, nfine) + dw_f[:, j]
            xi_window += xi[:, j]
            if step_index % ratio_t == 0:
                dw_c = increments_from_xi(dn_coarse, cfg_coarse.dt, xi_window / sqrt_ratio)
                uc = implicit_stage_batch(uc, nf, cfg_coarse, nc) + dw_c
                xi_window[:] = 0.0
            if step_index % cfg_fine.recentre_every == 0:
                uf = recentre(uf)
                uc = recentre(uc)
        done += span
    rep = np.repeat(uc, nfine // nc, axis=1)
    diff = uf - rep
    return np.sqrt(np.mean(diff * diff, axis=1))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"FVSDECK1"


def save_checkpoint(path, state: TrajectoryState):
    """Binary snapshot plus step index and rng counter for exact resume."""
    n = state.u.n
    blob = _CKPT_MAGIC + struct.pack(
        "<QqQ", n, state.rng.seed, state.rng.replica
    ) + struct.pack("<Q", state.step_index)
    blob += state.u.values.astype("<f8").tobytes()
    blob += state.u_half.values.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path) -> TrajectoryState:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _CKPT_MAGIC:
        raise ValueError("not a checkpoint file")
    n, seed, replica = struct.unpack_from("<QqQ", blob, 8)
    (step_index,) = struct.unpack_from("<Q", blob, 32)
    spec = GridSpec(int(n))
    off = 40
    u = np.frombuffer(blob, dtype="<f8", count=n, offset=off)
    u_half = np.frombuffer(blob, dtype="<f8", count=n, offset=off + 8 * n)
    return TrajectoryState(int(step_index), GridVector(u, spec), GridVector(u_half, spec),
                           RngStream(int(seed), int(replica)))
