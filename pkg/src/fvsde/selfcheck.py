"""Named invariant suites covering the structural identities and
inequalities the scheme is built on.  The CLI ``selfcheck`` command runs
all of them and reports a pass/fail table."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import analytic, estimator, flux, grid, linops, noise, stepper

SLACK = 1e-10


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _rand_states(rng, n, count):
    v = rng.standard_normal((count, n))
    return v - v.mean(axis=1, keepdims=True)


def _gv(row, spec):
    return grid.GridVector(row - row.mean(), spec)


def run_all(seed: int = 0, sign_fn=None, fast: bool = False) -> list[CheckResult]:
    """Run every named check; ``sign_fn`` overrides the sign convention used
    by the contraction suite (debugging hook)."""
    sign = sign_fn if sign_fn is not None else flux.sign_vector
    rng = np.random.default_rng(seed)
    spec = grid.GridSpec(32)
    n = spec.n_cells
    trials = 100 if fast else 1000
    results: list[CheckResult] = []

    def add(name, passed, detail=""):
        results.append(CheckResult(name, bool(passed), detail))

    # --- exact identities -------------------------------------------------
    v = _rand_states(rng, n, trials)
    w = _rand_states(rng, n, trials)
    lhs = np.mean(grid.d1_plus_values(v, n) * w, axis=1)
    rhs = -np.mean(v * grid.d1_minus_values(w, n), axis=1)
    err = np.max(np.abs(lhs - rhs) / (1.0 + np.abs(rhs)))
    add("summation-by-parts", err <= 1e-13, f"max rel err {err:.2e}")

    lhs = np.mean(grid.d1_plus_values(v, n) * grid.d1_plus_values(w, n), axis=1)
    rhs = -np.mean(grid.d2_values(v, n) * w, axis=1)
    err = np.max(np.abs(lhs - rhs) / (1.0 + np.abs(rhs)))
    add("gradient-adjoint-identity", err <= 1e-13, f"max rel err {err:.2e}")

    sv = _gv(v[0], spec)
    rec = grid.reconstruct(sv, 0)
    iso = abs(rec.l2_norm() - grid.lp_norm(sv, 2))
    rt = np.max(np.abs(grid.project(rec, spec).values - sv.values))
    add("reconstruction-isometry", iso <= 1e-13 and rt <= 1e-13,
        f"norm gap {iso:.2e}, round trip {rt:.2e}")

    lin = grid.reconstruct(sv, 1)
    defect = lin.l2_distance(rec) ** 2
    expect = grid.lp_norm(grid.d1_plus(sv), 2) ** 2 / (3.0 * n * n)
    err = abs(defect - expect) / expect
    add("linear-interpolant-defect", err <= 1e-12, f"rel err {err:.2e}")

    lams = linops.circulant_spectrum(spec)
    worst = 0.0
    for m in (1, 3, n // 2):
        mode = linops.fourier_mode(spec, m, "cos")
        mode = mode - mode.mean()
        worst = max(worst, np.max(np.abs(grid.d2_values(mode, n) - lams[m] * mode)))
    add("second-difference-spectrum", worst <= 1e-9 * n * n, f"max defect {worst:.2e}")

    # --- inequality suites ------------------------------------------------
    p_ord = [1, 2, 4, np.inf]
    norms = np.array([[grid.lp_norm(row, p) for p in p_ord] for row in v[:trials]])
    ok = np.all(np.diff(norms, axis=1) >= -SLACK)
    add("norm-ordering", ok)

    g1 = grid.d1_plus_values(v, n)
    poin = np.sqrt(np.mean(v * v, axis=1)) - np.sqrt(np.mean(g1 * g1, axis=1))
    add("discrete-poincare", np.max(poin) <= SLACK, f"max gap {np.max(poin):.2e}")

    grad = np.max(np.abs(v), axis=1) - np.mean(np.abs(g1), axis=1)
    add("gradient-estimate", np.max(grad) <= SLACK, f"max gap {np.max(grad):.2e}")

    worst = -np.inf
    for p in (2, 4, 6, 8):
        lhs = np.mean(grid.d1_plus_values(v ** (p - 1), n) * g1, axis=1)
        rhs = 4.0 * (p - 1) / p**2 * np.mean(np.abs(v) ** p, axis=1)
        worst = max(worst, np.max(rhs - lhs))
    add("lp-poincare", worst <= SLACK, f"max gap {worst:.2e}")

    smooth = [lambda x: np.sqrt(2) * np.sin(2 * np.pi * x),
              lambda x: np.cos(2 * np.pi * x) + 0.5 * np.sin(6 * np.pi * x)]
    ok = True
    xs = (np.arange(200000) + 0.5) / 200000
    for f in smooth:
        pv = grid.project(f, spec)
        fx = np.abs(f(xs))
        for p in (1.0, 2.0, 4.0):
            ok &= grid.lp_norm(pv, p) <= np.mean(fx**p) ** (1 / p) + 1e-6
        ok &= grid.lp_norm(pv, np.inf) <= np.max(fx) + 1e-6
    add("projection-contraction", ok)

    # --- flux suites --------------------------------------------------------
    model = flux.burgers(1.0)
    nf = flux.engquist_osher(model)
    vs = np.linspace(-5, 5, 101)
    vv, ww = np.meshgrid(vs, vs)
    cons = np.max(np.abs(nf.abar(vs, vs) - model.a(vs)))
    add("flux-consistency", cons <= 1e-12, f"max gap {cons:.2e}")
    mono = min(np.min(nf.d1_abar(vv, ww)), np.min(-nf.d2_abar(vv, ww)))
    add("flux-monotonicity", mono >= -1e-12, f"min partial {mono:.2e}")
    growth = np.max(np.abs(nf.d1_abar(vv, ww)) - model.growth_constant * (1 + np.abs(vv)))
    add("flux-growth-bound", growth <= 1e-9, f"max excess {growth:.2e}")

    nu = 0.1
    worst = -np.inf
    for q in (2, 4, 6):
        interface = nf.abar(v, np.roll(v, -1, axis=1))
        term = np.mean(v ** (q - 1) * grid.d1_minus_values(interface, n), axis=1)
        worst = max(worst, np.max(-term))
    add("transport-stability", worst <= SLACK, f"max gap {worst:.2e}")

    bv = flux.drift_values(v, nf, nu, n)
    diss = np.mean(v * bv, axis=1) + nu * np.mean(g1 * g1, axis=1)
    add("drift-dissipativity", np.max(diss) <= SLACK, f"max gap {np.max(diss):.2e}")

    # contraction premise: the convention sign(0) = +1 is part of the check
    convention_ok = float(np.asarray(sign(np.array([0.0]))).item()) == 1.0
    pairs = v[: trials // 2], w[: trials // 2]
    # exact ties exercise the sign(0) convention
    tied = pairs[1].copy()
    tied[:, ::3] = pairs[0][:, ::3]
    contr = -np.inf
    for vv_, ww_ in ((pairs[0], pairs[1]), (pairs[0], tied)):
        s = sign(vv_ - ww_)
        gap = np.mean(s * (flux.drift_values(vv_, nf, nu, n) - flux.drift_values(ww_, nf, nu, n)), axis=1)
        contr = max(contr, np.max(gap))
    add("l1-drift-contraction", convention_ok and contr <= SLACK,
        f"max gap {contr:.2e}, sign(0)=+1 {convention_ok}")

    # --- stepper suites -----------------------------------------------------
    cfg = stepper.StepperConfig(nu=nu, dt=2.0**-4)
    count = 50 if fast else 200
    states = _rand_states(rng, n, count)
    dts = 2.0 ** rng.uniform(-10, -1, count)
    worst = -np.inf
    for row, dt in zip(states, dts):
        c = stepper.StepperConfig(nu=nu, dt=float(dt))
        wrow = stepper.implicit_stage_batch(row[None, :], nf, c, n)[0]
        gw = grid.d1_plus_values(wrow, n)
        gap = np.mean(wrow * wrow) - np.mean(row * row) + 2 * nu * dt * np.mean(gw * gw)
        worst = max(worst, gap)
    add("implicit-energy-decay", worst <= SLACK, f"max gap {worst:.2e}")

    v0 = _rand_states(rng, n, 1)[0]
    c5 = stepper.StepperConfig(nu=nu, dt=0.5)
    w_a = stepper.implicit_stage_batch(v0[None, :], nf, c5, n)[0]
    w_b = stepper.implicit_stage_batch(v0[None, :], nf, c5, n, np.zeros((1, n)))[0]
    gap = np.sqrt(np.mean((w_a - w_b) ** 2))
    add("implicit-stage-uniqueness", gap <= 10 * c5.newton_tol, f"init gap {gap:.2e}")

    model_noise = noise.default_noise(seed=seed)
    dn = noise.discretize(model_noise, spec)
    n_steps = 200 if fast else 2000
    dist = stepper.run_coupled_pair(_gv(v0, spec), _gv(states[0], spec), n_steps, nf, dn, cfg)
    add("coupled-l1-contraction", np.max(np.diff(dist)) <= SLACK,
        f"max increase {np.max(np.diff(dist)):.2e}")

    sums = np.sum(dn.mode_matrix**2, axis=0)
    ok = np.max(sums) <= dn.d_bound + SLACK and dn.d_bound <= dn.h2_bound + SLACK
    add("noise-covariance-bounds", ok,
        f"max_i sum_k g_i^2 {np.max(sums):.3f} <= D {dn.d_bound:.3f} <= H2 {dn.h2_bound:.1f}")

    t_avg = 8.0 if fast else 16.0
    res = estimator.ergodic_estimate(grid.GridVector.zero(spec), nf, model_noise, cfg,
                                     t_avg, 0.0, 4, observable="h1_energy")
    bound = dn.d_bound / (2 * nu) + cfg.dt * dn.d_bound
    add("stationary-gradient-bound", res.mean <= bound + 3 * res.std_error,
        f"avg {res.mean:.3f} <= {bound:.3f} + 3se")

    sys_lo, sys_di, sys_up = (rng.uniform(0.1, 0.5, (20, 257)), rng.uniform(3.0, 4.0, (20, 257)),
                              rng.uniform(0.1, 0.5, (20, 257)))
    m = linops.CyclicTridiag(sys_lo, sys_di, sys_up)
    rhs = rng.standard_normal((20, 257))
    x = linops.solve_cyclic(m, rhs)
    resid = np.max(np.abs(linops.multiply(m, x) - rhs))
    add("cyclic-solver-residual", resid <= 1e-12 * (1 + np.max(np.abs(rhs))),
        f"residual {resid:.2e}")

    case = analytic.AnalyticCase(nu=nu, m0=1, n_cells=n, dt=2.0**-6)
    w2 = analytic.w2_time(case)
    w2_mat = analytic.gaussian_w2_commuting(
        analytic.covariance_case_matrix(case, "semi"),
        analytic.covariance_case_matrix(case, "split"))
    err = abs(w2 - w2_mat) / w2
    add("gaussian-distance-consistency", err <= 1e-9, f"rel err {err:.2e}")

    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check'.ljust(width)}  status  detail",
             f"{'-' * width}  ------  ------"]
    for r in results:
        lines.append(f"{r.name.ljust(width)}  {'PASS' if r.passed else 'FAIL':6s}  {r.detail}")
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results)} checks, {len(results) - n_fail} passed, {n_fail} failed")
    return "\n".join(lines)
