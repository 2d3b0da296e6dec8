import numpy as np
import pytest

from fvsde import (
    AnalyticCase,
    GridSpec,
    ResolutionError,
    StepperConfig,
    burgers,
    default_noise,
    discretize,
    engquist_osher,
    ergodic_estimate,
    gaussian_w2_commuting,
    lambda_n,
    lyapunov_covariance,
    stationary_energy,
    stationary_phi,
    w2_space,
    w2_time,
)
from fvsde.analytic import covariance_case_matrix
from fvsde.estimator import fit_loglog_slope
from fvsde.grid import GridVector, project_sinusoid
from fvsde.noise import NoiseMode, NoiseModel

NU = 0.1
LAMBDA_32_1 = 39.35174573418404
KAPPA_SEMI = 0.12665147955292221
PHI_SEMI = 0.8932478251502334
KAPPA_SPLIT_2P10 = 0.12738201806015863
PHI_SPLIT_2P10 = 0.89272761418912513
W2_SPACE_N128 = 0.00504287112001
N_W2_LIMIT = 0.6454972243679028  # 1/sqrt(24 nu) at nu = 0.1
# first-order coefficient of the time-discretisation distance,
# (3/4) sqrt(nu lambda_N / 2) |g| at N = 32
W2_TIME_RATE = 1.05034119869
W2_TIME_SLOPE = 0.9475095497  # least-squares log-log slope over dt in 2^-8..2^-1


class TestLambda:
    def test_refinement_limit(self):
        assert lambda_n(2**20, 1) == pytest.approx(4 * np.pi**2, abs=1e-4)

    def test_frozen_value(self):
        assert lambda_n(32, 1) == pytest.approx(LAMBDA_32_1, rel=1e-14)

    def test_resolution_condition(self):
        with pytest.raises(ResolutionError):
            lambda_n(4, 2)


class TestStationaryPhi:
    def test_strong_viscosity_limit(self):
        case = AnalyticCase(nu=1e9, m0=1, n_cells=32)
        assert stationary_phi(case, "semi") == pytest.approx(1.0, abs=1e-9)

    def test_semi_discrete_value(self):
        case = AnalyticCase(nu=NU, m0=1, n_cells=32)
        assert case.kappa_semi == pytest.approx(KAPPA_SEMI, rel=1e-13)
        assert stationary_phi(case, "semi") == pytest.approx(PHI_SEMI, rel=1e-13)
        assert stationary_phi(case, "semi") == pytest.approx(0.89326, abs=2e-5)

    def test_split_step_value(self):
        case = AnalyticCase(nu=NU, m0=1, n_cells=32, dt=2.0**-10)
        assert case.kappa_split == pytest.approx(KAPPA_SPLIT_2P10, rel=1e-13)
        assert stationary_phi(case, "split") == pytest.approx(PHI_SPLIT_2P10, rel=1e-13)
        assert stationary_phi(case, "split") == pytest.approx(0.89273, abs=1e-5)

    def test_split_requires_dt(self):
        with pytest.raises(ValueError):
            stationary_phi(AnalyticCase(nu=NU, m0=1, n_cells=32), "split")


class TestW2Space:
    def test_against_collapsed_formula(self):
        # independent route: expand |a g - b Psi g|^2 using exact integrals
        for n in (8, 32, 128):
            case = AnalyticCase(nu=NU, m0=1, n_cells=n)
            g2 = case.g_l2_sq
            collapsed = np.sqrt(
                1.0 / (2 * NU * case.lambda_cont)
                - 2.0 * g2 / np.sqrt(4 * NU**2 * case.lambda_cont * case.lambda_disc)
                + g2 / (2 * NU * case.lambda_disc)
            )
            assert w2_space(case) == pytest.approx(collapsed, rel=1e-11)

    def test_scaled_limit(self):
        case = AnalyticCase(nu=NU, m0=1, n_cells=128)
        assert w2_space(case) == pytest.approx(W2_SPACE_N128, rel=1e-9)
        assert 128 * w2_space(case) == pytest.approx(N_W2_LIMIT, rel=0.02)

    def test_strictly_decreasing(self):
        values = [w2_space(AnalyticCase(nu=NU, m0=1, n_cells=n)) for n in (8, 16, 32, 64, 128)]
        assert np.all(np.diff(values) < 0)

    def test_overlap_sign(self):
        for n in (8, 16, 64, 256):
            assert AnalyticCase(nu=NU, m0=1, n_cells=n).epsilon_sign == 1.0


class TestW2Time:
    def test_vanishes_with_dt(self):
        values = [w2_time(AnalyticCase(NU, 1, 32, dt)) for dt in (2.0**-4, 2.0**-8, 2.0**-12)]
        assert values[0] > values[1] > values[2]
        assert values[2] < 1e-3

    def test_first_order_coefficient(self):
        dt = 2.0**-20
        ratio = w2_time(AnalyticCase(NU, 1, 32, dt)) / dt
        assert ratio == pytest.approx(W2_TIME_RATE, rel=1e-5)
        case = AnalyticCase(NU, 1, 32, dt)
        coeff = 0.75 * np.sqrt(NU * case.lambda_disc / 2.0) * np.sqrt(case.g_l2_sq)
        assert ratio == pytest.approx(coeff, rel=1e-5)

    def test_loglog_slope(self):
        dts = [2.0**-k for k in range(8, 0, -1)]
        values = [w2_time(AnalyticCase(NU, 1, 32, dt)) for dt in dts]
        slope = fit_loglog_slope(dts, values)
        assert slope == pytest.approx(W2_TIME_SLOPE, abs=1e-3)
        assert 0.9 <= slope <= 1.05


class TestLyapunovCovariance:
    def test_single_mode_rank_one(self):
        spec = GridSpec(16)
        dn = discretize(default_noise(seed=0), spec)
        cov = lyapunov_covariance(dn, NU)
        g = dn.mode_matrix[0]
        lam = lambda_n(16, 1)
        assert np.allclose(cov, np.outer(g, g) / (2 * NU * lam), atol=1e-12)

    def test_split_single_mode(self):
        spec = GridSpec(16)
        dn = discretize(default_noise(seed=0), spec)
        dt = 2.0**-5
        cov = lyapunov_covariance(dn, NU, dt)
        g = dn.mode_matrix[0]
        x = 1.0 + NU * dt * lambda_n(16, 1)
        expected = dt * x * x / (x * x - 1.0) * np.outer(g, g)
        assert np.allclose(cov, expected, atol=1e-12)

    def test_multi_mode_superposition(self):
        spec = GridSpec(24)
        model = NoiseModel((NoiseMode(np.sqrt(2.0), 1, "sin"), NoiseMode(1.3, 2, "cos")), 0)
        dn = discretize(model, spec)
        cov = lyapunov_covariance(dn, NU)
        expected = sum(
            np.outer(g, g) / (2 * NU * lambda_n(24, mode.frequency))
            for g, mode in zip(dn.mode_matrix, model.modes)
        )
        assert np.allclose(cov, expected, atol=1e-12)

    def test_split_converges_to_semi_at_first_order(self):
        dn = discretize(default_noise(seed=0), GridSpec(16))
        semi = lyapunov_covariance(dn, NU)
        err = [np.max(np.abs(lyapunov_covariance(dn, NU, dt) - semi))
               for dt in (2.0**-6, 2.0**-7)]
        assert 1.8 <= err[0] / err[1] <= 2.2

    def test_psd_with_constant_kernel(self):
        dn = discretize(default_noise(seed=0), GridSpec(16))
        cov = lyapunov_covariance(dn, NU)
        eig = np.linalg.eigvalsh(cov)
        assert eig.min() >= -1e-12
        assert np.max(np.abs(cov @ np.ones(16))) <= 1e-12

    def test_rejects_constant_mode_energy(self):
        class Stub:
            spec = GridSpec(8)
            q_matrix = np.ones((8, 8))

        with pytest.raises(ValueError, match="constant mode"):
            lyapunov_covariance(Stub(), NU)

    def test_full_covariance_against_simulation(self):
        # entrywise match between the long-run sample covariance of the
        # chain and the closed-form split-step stationary covariance
        from fvsde.stepper import drive_rows

        spec = GridSpec(8)
        model = NoiseModel((NoiseMode(np.sqrt(2.0), 1, "sin"),
                            NoiseMode(0.9, 2, "cos")), 99)
        dn = discretize(model, spec)
        nf = engquist_osher(burgers(0.0))
        cfg = StepperConfig(nu=NU, dt=2.0**-4)
        acc = np.zeros((8, 8))
        count = [0]

        def observe(step, rows):
            if step >= 200:
                acc[:] += rows.T @ rows
                count[0] += rows.shape[0]

        drive_rows(np.zeros((16, 8)), 20_200, nf, dn, cfg, list(range(16)),
                   observe=observe)
        empirical = acc / count[0]
        exact = lyapunov_covariance(dn, NU, cfg.dt)
        rel = np.max(np.abs(empirical - exact)) / np.max(np.abs(exact))
        assert rel < 0.03

    def test_trace_against_simulation(self):
        # long-run Monte Carlo average of the squared norm vs trace(K)/N
        spec = GridSpec(16)
        model = default_noise(seed=5)
        dn = discretize(model, spec)
        nf = engquist_osher(burgers(0.0))
        cfg = StepperConfig(nu=NU, dt=2.0**-8)
        res = ergodic_estimate(GridVector.zero(spec), nf, model, cfg, 64.0, 0.0, 8,
                               observable="energy")
        target = stationary_energy(lyapunov_covariance(dn, NU))
        assert abs(res.mean - target) <= 3 * res.std_error


class TestGaussianW2:
    def test_matches_time_distance(self):
        case = AnalyticCase(NU, 1, 32, 2.0**-6)
        w_direct = w2_time(case)
        w_matrix = gaussian_w2_commuting(covariance_case_matrix(case, "semi"),
                                         covariance_case_matrix(case, "split"))
        assert w_matrix == pytest.approx(w_direct, rel=1e-9)

    def test_zero_for_identical(self):
        case = AnalyticCase(NU, 1, 16)
        cov = covariance_case_matrix(case, "semi")
        assert gaussian_w2_commuting(cov, cov) == pytest.approx(0.0, abs=1e-12)

    def test_rejects_non_commuting(self):
        u = project_sinusoid(np.sqrt(2.0), 1, "sin", GridSpec(8)).values
        v = project_sinusoid(np.sqrt(2.0), 1, "cos", GridSpec(8)).values
        w = u + 0.5 * v
        with pytest.raises(ValueError, match="commute"):
            gaussian_w2_commuting(np.outer(u, u), np.outer(w, w))
