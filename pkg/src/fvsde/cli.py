"""Command line experiment drivers.

Subcommands: simulate | ergodic | weak-error | space-rate | analytic |
selfcheck.  Every command takes a TOML config plus flag overrides, honours
``--seed``, ``--out`` and ``--threads``, echoes the resolved configuration
into each CSV header, and renders a matplotlib figure next to the CSV.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure,
4 acceptance-check failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import _report, analytic, selfcheck
from .estimator import energy, ergodic_estimate, fit_loglog_slope, h1_energy, phi, running_phi_average
from .flux import FluxModel, burgers, engquist_osher, polynomial_flux
from .grid import GridSpec, GridVector, InvalidFunctionError, lp_norm, project_sinusoid
from .linops import SolverError
from .noise import NoiseMode, NoiseModel, derive_seed, discretize
from .stepper import NewtonError, Observer, StepperConfig, run_coupled_refinement, run_trajectory

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CHECK = 4

NU_DEFAULT = 0.1
DT_DEFAULT = 2.0**-10
SQRT2 = float(np.sqrt(2.0))


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}") from exc


def _build_flux(cfg: dict, alpha_override=None) -> FluxModel:
    if alpha_override is not None:
        return burgers(_positive_or_zero(alpha_override, "alpha"))
    spec = cfg.get("flux", {"kind": "burgers", "alpha": NU_DEFAULT**1.5})
    kind = spec.get("kind")
    try:
        if kind == "burgers":
            return burgers(float(spec["alpha"]))
        if kind == "polynomial":
            return polynomial_flux(spec["coefficients"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad flux table {spec!r}: {exc}") from exc
    raise ConfigError(f"unknown flux kind {kind!r} (expected 'burgers' or 'polynomial')")


def _build_noise(cfg: dict, seed: int, m0_override=None) -> NoiseModel:
    entries = cfg.get("noise")
    if m0_override is not None or entries is None:
        m0 = 1 if m0_override is None else int(m0_override)
        entries = [{"amp": SQRT2, "m": m0, "phase": "sin"}]
    modes = []
    for k, entry in enumerate(entries):
        try:
            modes.append(NoiseMode(float(entry["amp"]), int(entry["m"]),
                                   str(entry.get("phase", "sin"))))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad noise mode #{k}: {entry!r}: {exc}") from exc
    return NoiseModel(tuple(modes), seed)


def _positive_or_zero(x, name):
    x = float(x)
    if x < 0:
        raise ConfigError(f"{name} must be nonnegative, got {x}")
    return x


def _resolve(args, command_defaults: dict):
    """Merge defaults, config file and flags into one flat parameter dict;
    returns the parameters and the raw config tables."""
    cfg = _load_config(args.config)
    params = dict(command_defaults)
    for key in params:
        if key in cfg:
            params[key] = cfg[key]
    for key in params:
        val = getattr(args, key, None)
        if val is not None:
            params[key] = val
    params["flux"] = cfg.get("flux")
    params["noise"] = cfg.get("noise")
    try:
        params["seed"] = int(params["seed"])
        params["n_cells"] = int(params["n_cells"])
        params["nu"] = float(params["nu"])
        params["dt"] = float(params["dt"])
        if params["nu"] <= 0 or params["dt"] <= 0:
            raise ValueError("nu and dt must be positive")
        if params["n_cells"] < 2:
            raise ValueError("n_cells must be >= 2")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if params.get("threads") in (None, 0):
        params["threads"] = os.cpu_count() or 1
    return params, cfg


def _echo_pairs(params: dict, extra=()):
    pairs = [(k, v) for k, v in sorted(params.items()) if k not in ("flux", "noise")]
    flux_cfg = params.get("flux")
    noise_cfg = params.get("noise")
    if flux_cfg:
        pairs.append(("flux", repr(flux_cfg)))
    if noise_cfg:
        pairs.append(("noise", repr(noise_cfg)))
    return pairs + list(extra)


def _initial_state(cfg: dict, spec: GridSpec) -> GridVector:
    u0_cfg = cfg.get("u0") if cfg else None
    if not u0_cfg:
        return GridVector.zero(spec)
    try:
        return project_sinusoid(float(u0_cfg["amp"]), int(u0_cfg["m"]),
                                str(u0_cfg.get("phase", "sin")), spec)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad u0 table {u0_cfg!r}: {exc}") from exc


def _parse_grid_list(text, cast):
    # accepts "8,16,32" and "2^-8,2^-7"
    out = []
    for token in str(text).split(","):
        token = token.strip()
        if "^" in token:
            base, exp = token.split("^")
            out.append(cast(float(base) ** float(exp)))
        else:
            out.append(cast(token))
    if not out:
        raise ConfigError(f"empty grid list: {text!r}")
    return out


def _regime_alphas(nu: float, text=None):
    if text is not None:
        return _parse_grid_list(text, float)
    base = nu**1.5
    return [0.0, 0.01 * base, base, 100.0 * base]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    params, file_cfg = _resolve(args, {
        "seed": 0, "n_cells": 32, "nu": NU_DEFAULT, "dt": DT_DEFAULT,
        "t_final": 1.0, "stride": 1, "threads": 1,
    })
    spec = GridSpec(params["n_cells"])
    model = _build_noise(file_cfg, params["seed"], args.m0)
    alpha_default = params["nu"] ** 1.5 if (args.alpha is None and not file_cfg.get("flux")) else args.alpha
    nf = engquist_osher(_build_flux(file_cfg, alpha_default))
    cfg = StepperConfig(nu=params["nu"], dt=params["dt"])
    dn = discretize(model, spec)
    u0 = _initial_state(file_cfg, spec)
    n_steps = int(round(params["t_final"] / params["dt"]))
    stride = max(1, int(params["stride"]))

    def sample(step, u):
        return (step * cfg.dt, energy(u), h1_energy(u), phi(u), lp_norm(u, np.inf))

    obs = Observer("series", sample, stride)
    run_trajectory(u0, n_steps, nf, dn, cfg, observers=[obs])
    rows = [rec for rec in obs.records if rec[0] > 0.0]

    _report.ensure_dir(args.out)
    csv_path = os.path.join(args.out, "simulate.csv")
    pairs = _echo_pairs(params, [("flux_label", nf.source.label)])
    _report.write_csv(csv_path, pairs, ["t", "energy", "h1_seminorm", "phi", "linf"], rows)
    if rows:
        data = np.array(rows)
        _report.plot_trajectory(os.path.join(args.out, "simulate.png"), data[:, 0], {
            "energy": data[:, 1], "h1 seminorm^2": data[:, 2],
            "exp(-|u|^2)": data[:, 3], "max |u|": data[:, 4]})
    print(f"wrote {csv_path} ({len(rows)} rows)")
    return EXIT_OK


def cmd_ergodic(args) -> int:
    params, file_cfg = _resolve(args, {
        "seed": 0, "n_cells": 32, "nu": NU_DEFAULT, "dt": DT_DEFAULT,
        "t_final": 256.0, "stride": 0, "threads": 1,
    })
    spec = GridSpec(params["n_cells"])
    alphas = _regime_alphas(params["nu"], args.regimes)
    n_steps = int(round(params["t_final"] / params["dt"]))
    stride = int(params["stride"]) or max(1, n_steps // 2048)
    u0 = _initial_state(file_cfg, spec)

    curves = {}
    columns = ["t"]
    for alpha in alphas:
        nf = engquist_osher(burgers(alpha))
        seed = derive_seed(params["seed"], f"ergodic-alpha={alpha:.17g}")
        model = _build_noise(file_cfg, seed, args.m0)
        cfg = StepperConfig(nu=params["nu"], dt=params["dt"])
        label = f"alpha={alpha:.6g}"
        curves[label] = running_phi_average(u0, nf, model, cfg, params["t_final"], stride)
        columns.append(label)

    analytic_value = None
    if any(a == 0.0 for a in alphas):
        m0 = int(args.m0 or 1)
        case = analytic.AnalyticCase(params["nu"], m0, params["n_cells"], params["dt"])
        analytic_value = analytic.stationary_phi(case, "split")
        columns.append("analytic")

    times = next(iter(curves.values()))[0]
    rows = []
    for j, t in enumerate(times):
        row = [t] + [curves[c][1][j] for c in list(curves)]
        if analytic_value is not None:
            row.append(analytic_value)
        rows.append(tuple(row))

    _report.ensure_dir(args.out)
    csv_path = os.path.join(args.out, "ergodic.csv")
    _report.write_csv(csv_path, _echo_pairs(params, [("regimes", ",".join(f"{a:.6g}" for a in alphas))]),
                      columns, rows)
    _report.plot_running_averages(os.path.join(args.out, "ergodic.png"), curves, analytic_value)
    print(f"wrote {csv_path} ({len(rows)} rows, {len(alphas)} regimes)")
    return EXIT_OK


def cmd_weak_error(args) -> int:
    params, file_cfg = _resolve(args, {
        "seed": 0, "n_cells": 32, "nu": NU_DEFAULT, "dt": DT_DEFAULT,
        "t_final": 256.0, "burn_in": -1.0, "replicas": 200, "threads": 0,
    })
    spec = GridSpec(params["n_cells"])
    u0 = GridVector.zero(spec)
    burn = params["burn_in"] if params["burn_in"] >= 0 else 0.1 * params["t_final"]
    burn = round(burn / params["dt"]) * params["dt"]  # whole number of the finest steps
    dts = _parse_grid_list(args.dt_grid, float) if args.dt_grid else [2.0**-k for k in range(8, 0, -1)]
    dt_ref = float(args.dt_ref) if args.dt_ref else DT_DEFAULT
    alphas = _regime_alphas(params["nu"], args.regimes)
    m0 = int(args.m0 or 1)
    replicas = int(params["replicas"])

    rows, slope_pairs, figure_data = [], [], {}
    analytic_curve = None
    for alpha in alphas:
        nf = engquist_osher(burgers(alpha))
        regime_seed = derive_seed(params["seed"], f"weak-alpha={alpha:.17g}")
        estimates = {}
        for dt in [dt_ref] + dts:
            if dt in estimates:
                continue
            seed = derive_seed(regime_seed, f"weak-dt={dt:.17g}")
            model = _build_noise(file_cfg, seed, args.m0)
            cfg = StepperConfig(nu=params["nu"], dt=dt)
            estimates[dt] = ergodic_estimate(u0, nf, model, cfg, params["t_final"],
                                             burn, replicas, "phi",
                                             threads=int(params["threads"]))
        ref = estimates[dt_ref]
        means, ses = [], []
        for dt in dts:
            est = estimates[dt]
            err = abs(est.mean - ref.mean)
            se = float(np.hypot(est.std_error, ref.std_error))
            analytic_err = None
            if alpha == 0.0:
                case_a = analytic.AnalyticCase(params["nu"], m0, params["n_cells"], dt)
                case_b = analytic.AnalyticCase(params["nu"], m0, params["n_cells"], dt_ref)
                analytic_err = abs(analytic.stationary_phi(case_a, "split")
                                   - analytic.stationary_phi(case_b, "split"))
            rows.append((f"{alpha:.6g}", dt, err, se, err - 1.96 * se, err + 1.96 * se, analytic_err))
            means.append(err)
            ses.append(se)
        label = f"alpha={alpha:.6g}"
        figure_data[label] = (means, ses)
        positive = [(d, m) for d, m in zip(dts, means) if m > 0]
        if len(positive) >= 2:
            slope_pairs.append((f"slope {label}", fit_loglog_slope(*zip(*positive))))
        if alpha == 0.0:
            analytic_curve = [r[6] for r in rows[-len(dts):]]
            if len(dts) >= 2:
                slope_pairs.append((f"slope analytic {label}",
                                    fit_loglog_slope(dts, analytic_curve)))

    _report.ensure_dir(args.out)
    csv_path = os.path.join(args.out, "weak_error.csv")
    pairs = _echo_pairs({**params, "burn_in": burn, "dt_ref": dt_ref}, slope_pairs)
    _report.write_csv(csv_path, pairs,
                      ["alpha", "dt", "mean", "std_error", "ci_low", "ci_high", "analytic_value"],
                      rows)
    _report.plot_weak_error(os.path.join(args.out, "weak_error.png"), dts, figure_data, analytic_curve)
    print(f"wrote {csv_path} ({len(rows)} rows)")
    for name, value in slope_pairs:
        print(f"{name}: {value:.4f}")
    return EXIT_OK


def cmd_space_rate(args) -> int:
    params, file_cfg = _resolve(args, {
        "seed": 0, "n_cells": 32, "nu": NU_DEFAULT, "dt": 2.0**-6,
        "t_final": 8.0, "replicas": 32, "threads": 1,
    })
    n_grid = _parse_grid_list(args.n_grid, int) if args.n_grid else [8, 16, 32, 64, 128]
    m0 = int(args.m0 or 1)
    nu = params["nu"]
    refine = int(args.refine)
    limit = 1.0 / np.sqrt(24.0 * nu)

    rows, w2s, scaled, mcs = [], [], [], []
    for n in n_grid:
        case = analytic.AnalyticCase(nu, m0, n)
        w2 = analytic.w2_space(case)
        mc_mean = mc_se = None
        if args.with_mc:
            seed = derive_seed(params["seed"], f"refine-N={n}")
            model = _build_noise(file_cfg, seed, args.m0)
            cfg = StepperConfig(nu=nu, dt=params["dt"])
            nf = engquist_osher(burgers(0.0))
            dists = run_coupled_refinement(
                discretize(model, GridSpec(n)), discretize(model, GridSpec(n * refine)),
                nf, cfg, cfg, params["t_final"], int(params["replicas"]))
            mc_mean = float(np.mean(dists))
            mc_se = float(np.std(dists, ddof=1) / np.sqrt(len(dists))) if len(dists) > 1 else 0.0
        rows.append((n, w2, n * w2, mc_mean, mc_se))
        w2s.append(w2)
        scaled.append(n * w2)
        mcs.append(mc_mean)

    extra = [("n_w2_limit", limit),
             ("slope_w2", fit_loglog_slope(n_grid, w2s))]
    if args.with_mc:
        extra.append(("refine", refine))
        if all(m is not None and m > 0 for m in mcs):
            extra.append(("slope_strong_error", fit_loglog_slope(n_grid, mcs)))

    _report.ensure_dir(args.out)
    csv_path = os.path.join(args.out, "space_rate.csv")
    _report.write_csv(csv_path, _echo_pairs(params, extra),
                      ["n_cells", "w2_space", "n_times_w2", "strong_error", "strong_error_se"],
                      rows)
    _report.plot_space_rate(os.path.join(args.out, "space_rate.png"), n_grid, w2s, scaled,
                            limit, mcs if args.with_mc else None)
    print(f"wrote {csv_path} ({len(rows)} rows)")
    return EXIT_OK


def cmd_analytic(args) -> int:
    params, _ = _resolve(args, {
        "seed": 0, "n_cells": 32, "nu": NU_DEFAULT, "dt": DT_DEFAULT, "threads": 1,
    })
    m0 = int(args.m0 or 1)
    case = analytic.AnalyticCase(params["nu"], m0, params["n_cells"], params["dt"])
    quantities = [
        ("lambda", case.lambda_cont),
        ("lambda_N", case.lambda_disc),
        ("g_l2_sq", case.g_l2_sq),
        ("kappa_N", case.kappa_semi),
        ("kappa_N_dt", case.kappa_split),
        ("phi_semi", analytic.stationary_phi(case, "semi")),
        ("phi_split", analytic.stationary_phi(case, "split")),
        ("w2_space", analytic.w2_space(case)),
        ("n_times_w2_space", case.n_cells * analytic.w2_space(case)),
        ("n_w2_limit", 1.0 / np.sqrt(24.0 * params["nu"])),
        ("w2_time", analytic.w2_time(case)),
        ("epsilon_sign", case.epsilon_sign),
    ]
    _report.ensure_dir(args.out)
    csv_path = os.path.join(args.out, "analytic.csv")
    _report.write_csv(csv_path, _echo_pairs({**params, "m0": m0}), ["quantity", "value"], quantities)
    for name, value in quantities:
        print(f"{name},{_report.format_value(value)}")
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    sign_fn = None
    if args.corrupt_sign_zero:
        sign_fn = lambda z: np.where(np.asarray(z) > 0, 1.0, -1.0)  # noqa: E731
    results = selfcheck.run_all(seed=args.seed if args.seed is not None else 0,
                                sign_fn=sign_fn, fast=args.fast)
    print(selfcheck.format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fvsde",
        description="Finite-volume split-step sampling of stochastically forced "
                    "viscous conservation laws on the torus.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--seed", type=int, help="master seed (default 0)")
        p.add_argument("--out", default=".", help="output directory (default .)")
        p.add_argument("--threads", type=int, help="replica parallelism (0 = auto)")
        p.add_argument("--n-cells", dest="n_cells", type=int)
        p.add_argument("--nu", type=float)
        p.add_argument("--dt", type=float)
        p.add_argument("--alpha", type=float, help="quadratic flux strength")
        p.add_argument("--m0", type=int, help="noise mode frequency (default 1)")
        p.add_argument("--t-final", dest="t_final", type=float)

    p = sub.add_parser("simulate", help="one trajectory, per-stride diagnostics CSV")
    common(p)
    p.add_argument("--stride", type=int)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("ergodic", help="running stationary averages per flux regime")
    common(p)
    p.add_argument("--stride", type=int)
    p.add_argument("--regimes", help="comma list of alpha values")
    p.set_defaults(fn=cmd_ergodic)

    p = sub.add_parser("weak-error", help="stationary weak error against a fine time step")
    common(p)
    p.add_argument("--burn-in", dest="burn_in", type=float)
    p.add_argument("--replicas", type=int)
    p.add_argument("--dt-grid", dest="dt_grid", help="comma list, e.g. 2^-8,2^-7")
    p.add_argument("--dt-ref", dest="dt_ref", type=float)
    p.add_argument("--regimes", help="comma list of alpha values")
    p.set_defaults(fn=cmd_weak_error)

    p = sub.add_parser("space-rate", help="Wasserstein/strong error against the cell count")
    common(p)
    p.add_argument("--n-grid", dest="n_grid", help="comma list of cell counts")
    p.add_argument("--with-mc", dest="with_mc", action="store_true",
                   help="add the coupled-refinement Monte Carlo column")
    p.add_argument("--refine", type=int, default=4, help="fine/coarse grid ratio")
    p.add_argument("--replicas", type=int)
    p.set_defaults(fn=cmd_space_rate)

    p = sub.add_parser("analytic", help="closed-form stationary quantities (linear case)")
    common(p)
    p.set_defaults(fn=cmd_analytic)

    p = sub.add_parser("selfcheck", help="run the invariant suites")
    p.add_argument("--seed", type=int)
    p.add_argument("--fast", action="store_true", help="reduced sample counts")
    p.add_argument("--corrupt-sign-zero", dest="corrupt_sign_zero", action="store_true",
                   help="debug: inject sign(0) = -1 into the contraction suite")
    p.set_defaults(fn=cmd_selfcheck)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NewtonError, SolverError, InvalidFunctionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
