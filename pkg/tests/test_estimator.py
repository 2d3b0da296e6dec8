import numpy as np
import pytest

from fvsde import (
    AnalyticCase,
    EstimatorResult,
    GridSpec,
    GridVector,
    StepperConfig,
    burgers,
    default_noise,
    engquist_osher,
    ergodic_estimate,
    lp_norm,
    phi,
    running_phi_average,
    stationary_phi,
    weak_error,
)
from fvsde.noise import NoiseModel

from conftest import zero_mean_rows

NU = 0.1


@pytest.fixture
def nf_linear():
    return engquist_osher(burgers(0.0))


class TestPhi:
    def test_zero_state(self, spec32):
        assert phi(GridVector.zero(spec32)) == 1.0

    def test_two_cell_value(self):
        v = GridVector(np.array([1.0, -1.0]), GridSpec(2))
        assert phi(v) == pytest.approx(0.36787944117144233, rel=1e-15)

    def test_lipschitz_bound(self, rng, spec32):
        rows = zero_mean_rows(rng, 32, 500)
        for a, b in zip(rows[:250], rows[250:]):
            va, vb = GridVector(a, spec32), GridVector(b, spec32)
            gap = abs(phi(va) - phi(vb))
            dist = lp_norm(GridVector(a - b, spec32), 2)
            assert gap <= dist + 1e-12


class TestErgodicEstimate:
    def test_constant_observable(self, nf_linear, spec32):
        res = ergodic_estimate(GridVector.zero(spec32), nf_linear, default_noise(seed=0),
                               StepperConfig(nu=NU, dt=0.25), 2.0, 0.0, 4,
                               observable=lambda rows: np.full(rows.shape[0], 3.5))
        assert res.mean == 3.5
        assert res.std_error == 0.0
        assert res.ci_low == res.ci_high == 3.5

    def test_reproducible(self, nf_linear, spec32):
        args = (GridVector.zero(spec32), nf_linear, default_noise(seed=3),
                StepperConfig(nu=NU, dt=2.0**-6), 4.0, 0.5, 6)
        a = ergodic_estimate(*args)
        b = ergodic_estimate(*args)
        assert a.mean == b.mean and a.std_error == b.std_error
        assert np.array_equal(a.replica_values, b.replica_values)

    def test_thread_pool_matches_serial(self, nf_linear, spec32):
        args = (GridVector.zero(spec32), nf_linear, default_noise(seed=3),
                StepperConfig(nu=NU, dt=2.0**-6), 2.0, 0.0, 8)
        serial = ergodic_estimate(*args, threads=1)
        pooled = ergodic_estimate(*args, threads=4)
        assert np.array_equal(serial.replica_values, pooled.replica_values)

    def test_se_shrinks_with_replicas(self, nf_linear, spec32):
        # doubling M divides the standard error by about sqrt(2)
        cfg = StepperConfig(nu=NU, dt=2.0**-5)
        small = ergodic_estimate(GridVector.zero(spec32), nf_linear, default_noise(seed=1),
                                 cfg, 4.0, 0.0, 24)
        large = ergodic_estimate(GridVector.zero(spec32), nf_linear, default_noise(seed=1),
                                 cfg, 4.0, 0.0, 48)
        ratio = small.std_error / large.std_error
        assert ratio == pytest.approx(np.sqrt(2.0), rel=0.2)

    def test_variance_scales_with_horizon(self, nf_linear):
        # replica variance decays like 1/T across a horizon doubling ladder
        spec = GridSpec(16)
        cfg = StepperConfig(nu=NU, dt=2.0**-4)
        variances = []
        for t in (64.0, 128.0, 256.0):
            res = ergodic_estimate(GridVector.zero(spec), nf_linear, default_noise(seed=2),
                                   cfg, t, 0.0, 16)
            variances.append(np.var(res.replica_values, ddof=1))
        assert 2.0 <= variances[0] / variances[2] <= 8.0

    def test_ci_coverage(self, nf_linear):
        # 50 independent meta repetitions at reduced scale: the analytic
        # value must fall inside the 95% interval at least 40 times
        spec = GridSpec(16)
        cfg = StepperConfig(nu=NU, dt=2.0**-4)
        target = stationary_phi(AnalyticCase(NU, 1, 16, cfg.dt), "split")
        hits = 0
        for rep in range(50):
            res = ergodic_estimate(GridVector.zero(spec), nf_linear,
                                   default_noise(seed=1000 + rep), cfg, 8.0, 2.0, 8)
            hits += res.ci_low <= target <= res.ci_high
        assert hits >= 40

    def test_validation(self, nf_linear, spec32):
        with pytest.raises(ValueError):
            ergodic_estimate(GridVector.zero(spec32), nf_linear, default_noise(),
                             StepperConfig(nu=NU, dt=0.25), 2.0, 0.0, 1)
        with pytest.raises(ValueError):
            EstimatorResult(1.0, -0.1, 0.9, 1.1, 4, 1.0, 0.0)


class TestRunningAverage:
    def test_tracks_the_stationary_value(self, nf_linear, spec32):
        cfg = StepperConfig(nu=NU, dt=2.0**-8)
        times, avgs = running_phi_average(GridVector.zero(spec32), nf_linear,
                                          default_noise(seed=0), cfg, 8.0, stride=64)
        assert len(times) == len(avgs) == 8 * 2**8 // 64
        target = stationary_phi(AnalyticCase(NU, 1, 32, cfg.dt), "split")
        assert abs(avgs[-1] - target) < 0.05


class TestWeakError:
    def test_equal_steps_shared_seed_vanish(self, nf_linear, spec32):
        res = weak_error(GridVector.zero(spec32), nf_linear, default_noise(seed=7), NU,
                         2.0**-4, 2.0**-4, 2.0, 0.0, 4)
        assert res.mean == 0.0

    def test_matches_analytic_difference(self, nf_linear, spec32):
        dt, dt_ref = 2.0**-3, 2.0**-6
        res = weak_error(GridVector.zero(spec32), nf_linear, default_noise(seed=7), NU,
                         dt, dt_ref, 16.0, 0.0, 8)
        expected = abs(stationary_phi(AnalyticCase(NU, 1, 32, dt), "split")
                       - stationary_phi(AnalyticCase(NU, 1, 32, dt_ref), "split"))
        assert abs(res.mean - expected) <= 3 * res.std_error
