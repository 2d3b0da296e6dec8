"""Ergodic Monte Carlo estimation of stationary expectations.

One replica produces the time average of an observable along a single
trajectory; M independent replicas give a mean, a standard error and a
normal-theory confidence interval.  Replicas are reduced in replica-id
order so the floating-point result does not depend on scheduling, and the
counter-based noise streams make every replica's trajectory a pure function
of (seed, replica), which is what lets the worker pool reproduce the
single-process result bit for bit.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .flux import NumericalFlux, engquist_osher, flux_from_descriptor
from .grid import GridSpec, GridVector, d1_plus_values
from .noise import NoiseModel, derive_seed, discretize
from .stepper import NewtonError, StepperConfig, drive_rows


def phi(v) -> float | np.ndarray:
    """Gaussian test functional ``exp(-|v|^2)`` (normalised l^2 norm);
    values in (0, 1].  Accepts a grid vector or raw rows (..., N)."""
    vals = v.values if isinstance(v, GridVector) else np.asarray(v)
    out = np.exp(-np.mean(vals * vals, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def energy(v) -> float | np.ndarray:
    vals = v.values if isinstance(v, GridVector) else np.asarray(v)
    out = np.mean(vals * vals, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def h1_energy(v) -> float | np.ndarray:
    vals = v.values if isinstance(v, GridVector) else np.asarray(v)
    grad = d1_plus_values(vals, vals.shape[-1])
    out = np.mean(grad * grad, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


OBSERVABLES = {"phi": phi, "energy": energy, "h1_energy": h1_energy}


@dataclass(frozen=True)
class EstimatorResult:
    mean: float
    std_error: float
    ci_low: float
    ci_high: float
    n_replicas: int
    horizon: float
    burn_in: float
    replica_values: np.ndarray | None = None

    def __post_init__(self):
        if self.std_error < 0 or not (self.ci_low <= self.mean <= self.ci_high):
            raise ValueError("inconsistent estimator result")


def _steps(t: float, dt: float) -> int:
    n = int(round(t / dt))
    if abs(n * dt - t) > 1e-9 * max(t, dt):
        raise ValueError(f"horizon {t} is not a whole number of steps of {dt}")
    return n


def _replica_chunk(u0_vals, nf, model, n_cells, cfg, n_burn, n_avg, replica_ids, observable):
    """Time averages of the observable for a contiguous block of replicas."""
    dn = discretize(model, GridSpec(n_cells))
    total = n_burn + n_avg
    sums = np.zeros(len(replica_ids))

    def observe(step_index, rows):
        if n_burn <= step_index < total:
            sums[:] += observable(rows)

    try:
        drive_rows(np.array(u0_vals)[None, :], total, nf, dn, cfg, replica_ids, observe=observe)
    except NewtonError as err:
        raise NewtonError(err.residual, err.iterations, step_index=err.step_index,
                          rows=err.rows, detail=f"replica(s) {err.rows}") from err
    return sums / n_avg


def _pool_worker(args):
    (u0_vals, flux_desc, model, n_cells, cfg, n_burn, n_avg, replica_ids, obs_name) = args
    nf = engquist_osher(flux_from_descriptor(flux_desc))
    return _replica_chunk(u0_vals, nf, model, n_cells, cfg, n_burn, n_avg,
                          replica_ids, OBSERVABLES[obs_name])


def ergodic_estimate(u0: GridVector, nf: NumericalFlux, model: NoiseModel,
                     cfg: StepperConfig, t_horizon: float, burn_in: float,
                     n_replicas: int, observable="phi", z: float = 1.96,
                     threads: int = 1) -> EstimatorResult:
    """Estimate a stationary expectation from M independent replicas.

    Each replica averages the observable over the ``t_horizon / dt`` states
    that follow the burn-in window (the state at the start of the window
    included); mean, standard error and the z-interval are taken across
    replicas.  ``observable`` is a name from :data:`OBSERVABLES` or a
    callable on raw state rows (callables require ``threads == 1``).
    """
    if n_replicas < 2:
        raise ValueError("need at least 2 replicas for a standard error")
    if burn_in < 0 or t_horizon <= 0:
        raise ValueError("need t_horizon > burn_in >= 0")
    n_burn = _steps(burn_in, cfg.dt)
    n_avg = _steps(t_horizon, cfg.dt)
    obs_fn = OBSERVABLES[observable] if isinstance(observable, str) else observable

    replica_ids = list(range(n_replicas))
    if threads > 1 and n_replicas >= 2 * threads:
        if not isinstance(observable, str):
            raise ValueError("custom observables run with threads=1")
        if nf.source.descriptor is None:
            raise ValueError("flux has no descriptor; run with threads=1")
        chunks = np.array_split(np.array(replica_ids), threads)
        jobs = [
            (u0.values, nf.source.descriptor, model, u0.n, cfg, n_burn, n_avg,
             [int(r) for r in chunk], observable)
            for chunk in chunks if len(chunk)
        ]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_pool_worker, jobs))
        values = np.concatenate(parts)
    else:
        values = _replica_chunk(u0.values, nf, model, u0.n, cfg, n_burn, n_avg,
                                replica_ids, obs_fn)

    mean = float(np.mean(values))
    std_error = float(np.std(values, ddof=1) / np.sqrt(n_replicas))
    return EstimatorResult(mean, std_error, mean - z * std_error, mean + z * std_error,
                           n_replicas, t_horizon, burn_in, replica_values=values)


def running_phi_average(u0: GridVector, nf: NumericalFlux, model: NoiseModel,
                        cfg: StepperConfig, t_horizon: float, stride: int = 1,
                        replica: int = 0):
    """Running time average of the test functional along one trajectory.

    Returns ``(times, averages)`` where ``averages[j]`` is the mean of the
    functional over the states before time ``times[j]``.
    """
    n_steps = _steps(t_horizon, cfg.dt)
    dn = discretize(model, GridSpec(u0.n))
    acc = {"sum": 0.0, "count": 0}
    times, avgs = [], []

    def observe(step_index, rows):
        # the average at time n dt runs over the n states before it
        if step_index > 0 and step_index % stride == 0:
            times.append(step_index * cfg.dt)
            avgs.append(acc["sum"] / acc["count"])
        if step_index < n_steps:
            acc["sum"] += float(phi(rows[0]))
            acc["count"] += 1

    drive_rows(u0.values[None, :], n_steps, nf, dn, cfg, [replica], observe=observe)
    return np.array(times), np.array(avgs)


def weak_error(u0: GridVector, nf: NumericalFlux, model: NoiseModel, nu: float,
               dt: float, dt_ref: float, t_horizon: float, burn_in: float,
               n_replicas: int, z: float = 1.96, threads: int = 1) -> EstimatorResult:
    """Absolute difference of the stationary test-functional expectations at
    two time steps, with the two standard errors combined in quadrature.

    The two estimates use seeds derived from the time step, so they are
    independent whenever ``dt != dt_ref`` and identical (difference exactly
    zero) when the steps coincide.
    """
    parts = []
    for step_size in (dt, dt_ref):
        seed = derive_seed(model.seed, f"weak-dt={step_size:.17g}")
        model_s = NoiseModel(model.modes, seed)
        cfg = StepperConfig(nu=nu, dt=step_size)
        parts.append(ergodic_estimate(u0, nf, model_s, cfg, t_horizon, burn_in,
                                      n_replicas, observable="phi", z=z, threads=threads))
    a, b = parts
    mean = abs(a.mean - b.mean)
    se = float(np.hypot(a.std_error, b.std_error))
    return EstimatorResult(mean, se, mean - z * se, mean + z * se,
                           n_replicas, t_horizon, burn_in)


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])
