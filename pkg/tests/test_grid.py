import numpy as np
import pytest

from fvsde import (
    GridSpec,
    GridVector,
    InvalidFunctionError,
    d1_minus,
    d1_plus,
    d2,
    inner,
    lp_norm,
    pconst_l2_distance,
    project,
    project_sinusoid,
    reconstruct,
)
from fvsde.grid import from_csv, from_snapshot, to_csv, to_snapshot

from conftest import zero_mean_rows

# exact cell average of sqrt(2) sin(2 pi x) on quarter cells: 2 sqrt(2) / pi
PROJ_SIN_N4 = 0.90031631615710607
# (sin(pi/32) / (pi/32))^2
MODE_ENERGY_N32 = 0.99679136404496079


class TestGridSpec:
    def test_cell_width(self):
        spec = GridSpec(4)
        assert spec.cell_width * spec.n_cells == 1.0
        assert np.allclose(spec.interfaces, [0.25, 0.5, 0.75, 1.0])

    @pytest.mark.parametrize("bad", [0, 1, -3])
    def test_too_small(self, bad):
        with pytest.raises(ValueError):
            GridSpec(bad)


class TestGridVector:
    def test_rejects_nonzero_mean(self):
        with pytest.raises(ValueError, match="zero-mean"):
            GridVector(np.array([1.0, 1.0, 0.0, 0.0]), GridSpec(4))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            GridVector(np.array([np.nan, 0.0, 0.0, 0.0]), GridSpec(4))

    def test_immutable(self):
        v = GridVector(np.array([1.0, -1.0]), GridSpec(2))
        with pytest.raises(ValueError):
            v.values[0] = 3.0


class TestProject:
    def test_zero_function(self):
        out = project(lambda x: 0.0 * x, GridSpec(4))
        assert np.array_equal(out.values, np.zeros(4))

    def test_sin_quarter_cells(self):
        out = project(lambda x: np.sqrt(2) * np.sin(2 * np.pi * x), GridSpec(4))
        expected = PROJ_SIN_N4 * np.array([1.0, 1.0, -1.0, -1.0])
        assert np.allclose(out.values, expected, atol=1e-10)
        exact = project_sinusoid(np.sqrt(2), 1, "sin", GridSpec(4))
        assert np.allclose(exact.values, expected, rtol=1e-15)

    def test_mode_energy(self):
        g = project_sinusoid(np.sqrt(2), 1, "sin", GridSpec(32))
        assert lp_norm(g, 2) ** 2 == pytest.approx(MODE_ENERGY_N32, abs=1e-14)
        assert lp_norm(g, 2) ** 2 == pytest.approx(0.99679, abs=1e-5)

    def test_non_finite_function(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            with pytest.raises(InvalidFunctionError):
                project(lambda x: 1.0 / (x - x), GridSpec(4))

    def test_contraction_against_lp(self):
        # projections never increase the l^p norms of smooth functions
        xs = (np.arange(400000) + 0.5) / 400000
        for f in (lambda x: np.sqrt(2) * np.sin(2 * np.pi * x),
                  lambda x: np.cos(2 * np.pi * x) - 0.3 * np.sin(8 * np.pi * x)):
            v = project(f, GridSpec(16))
            fx = np.abs(f(xs))
            for p in (1.0, 2.0, 4.0):
                assert lp_norm(v, p) <= np.mean(fx**p) ** (1 / p) + 1e-6
            assert lp_norm(v, np.inf) <= np.max(fx) + 1e-9


class TestDifferenceOperators:
    def test_d2_annihilates_constants(self):
        v = GridVector(np.zeros(4), GridSpec(4))
        assert np.array_equal(d2(v).values, np.zeros(4))

    def test_alternating_eigenvector(self):
        v = GridVector(np.array([1.0, -1.0, 1.0, -1.0]), GridSpec(4))
        assert np.allclose(d2(v).values, -64.0 * v.values, rtol=1e-14)

    def test_two_cell_forward_difference(self):
        v = GridVector(np.array([1.0, -1.0]), GridSpec(2))
        assert np.array_equal(d1_plus(v).values, np.array([-4.0, 4.0]))

    def test_summation_by_parts(self, rng):
        n = 32
        for row_v, row_w in zip(zero_mean_rows(rng, n, 50), zero_mean_rows(rng, n, 50)):
            v = GridVector(row_v, GridSpec(n))
            w = GridVector(row_w, GridSpec(n))
            lhs = inner(d1_plus(v), w)
            rhs = -inner(v, d1_minus(w))
            assert lhs == pytest.approx(rhs, rel=1e-13, abs=1e-13)
            lhs2 = inner(d1_plus(v), d1_plus(w))
            rhs2 = -inner(d2(v), w)
            assert lhs2 == pytest.approx(rhs2, rel=1e-13, abs=1e-11)


class TestNorms:
    def test_zero(self):
        v = GridVector(np.zeros(8), GridSpec(8))
        for p in (1, 2, 4, np.inf):
            assert lp_norm(v, p) == 0.0

    def test_two_cell(self):
        v = GridVector(np.array([1.0, -1.0]), GridSpec(2))
        assert lp_norm(v, 2) == 1.0

    def test_rejects_p_below_one(self, random_state):
        with pytest.raises(ValueError):
            lp_norm(random_state, 0.5)

    def test_norm_ordering(self, rng):
        for row in zero_mean_rows(rng, 16, 200):
            v = GridVector(row, GridSpec(16))
            assert lp_norm(v, 1) <= lp_norm(v, 2) + 1e-12
            assert lp_norm(v, 2) <= lp_norm(v, np.inf) + 1e-12


class TestDiscreteInequalities:
    def test_poincare(self, rng):
        for row in zero_mean_rows(rng, 24, 1000):
            v = GridVector(row, GridSpec(24))
            assert lp_norm(v, 2) <= lp_norm(d1_plus(v), 2) + 1e-10

    def test_gradient_estimate(self, rng):
        for row in zero_mean_rows(rng, 24, 1000):
            v = GridVector(row, GridSpec(24))
            assert lp_norm(v, np.inf) <= lp_norm(d1_plus(v), 1) + 1e-10

    @pytest.mark.parametrize("p", [2, 4, 6, 8])
    def test_lp_poincare(self, rng, p):
        n = 16
        rows = zero_mean_rows(rng, n, 1000)
        lhs = np.mean(
            (n * (np.roll(rows ** (p - 1), -1, axis=1) - rows ** (p - 1)))
            * (n * (np.roll(rows, -1, axis=1) - rows)),
            axis=1,
        )
        rhs = 4.0 * (p - 1) / p**2 * np.mean(np.abs(rows) ** p, axis=1)
        assert np.all(lhs >= rhs - 1e-10)


class TestReconstruct:
    def test_project_inverts_constant_reconstruction(self, random_state):
        rec = reconstruct(random_state, 0)
        back = project(rec, random_state.spec)
        assert np.allclose(back.values, random_state.values, atol=1e-15)

    def test_isometry(self, random_state):
        rec = reconstruct(random_state, 0)
        assert rec.l2_norm() == pytest.approx(lp_norm(random_state, 2), rel=1e-13)

    def test_right_closed_cells(self):
        v = GridVector(np.array([1.0, 3.0, -1.0, -3.0]), GridSpec(4))
        rec = reconstruct(v, 0)
        assert rec(0.25) == 1.0          # right endpoint belongs to cell 1
        assert rec(0.25 + 1e-9) == 3.0   # just past the interface
        assert rec(1.0) == -3.0
        assert rec(0.05) == 1.0
        assert rec(1.25) == 1.0          # periodic wrap

    def test_interpolants_hit_interface_values(self, random_state):
        xs = random_state.spec.interfaces
        for order in (1, 2):
            rec = reconstruct(random_state, order)
            assert np.allclose(rec(xs), random_state.values, atol=1e-12)

    def test_linear_defect_identity(self, rng):
        # |linear - constant|^2 == |d1_plus v|^2 / (3 N^2), exactly
        n = 16
        for row in zero_mean_rows(rng, n, 20):
            v = GridVector(row, GridSpec(n))
            defect = reconstruct(v, 1).l2_distance(reconstruct(v, 0)) ** 2
            expected = lp_norm(d1_plus(v), 2) ** 2 / (3.0 * n * n)
            assert defect == pytest.approx(expected, rel=1e-12)

    def test_derivative_norm_identities(self, rng):
        for row in zero_mean_rows(rng, 16, 20):
            v = GridVector(row, GridSpec(16))
            assert reconstruct(v, 1).derivative_l2_norm() == pytest.approx(
                lp_norm(d1_plus(v), 2), rel=1e-12)
            assert reconstruct(v, 2).second_derivative_l2_norm() == pytest.approx(
                lp_norm(d2(v), 2), rel=1e-12)

    def test_quadratic_defect_bound(self, rng):
        # |quadratic - constant|^2 <= 3/(20 N^4) |d2 v|^2 + 1/(2 N^2) |d1 v|^2
        n = 16
        for row in zero_mean_rows(rng, n, 50):
            v = GridVector(row, GridSpec(n))
            defect = reconstruct(v, 2).l2_distance(reconstruct(v, 0)) ** 2
            bound = (3.0 / (20.0 * n**4) * lp_norm(d2(v), 2) ** 2
                     + 0.5 / n**2 * lp_norm(d1_plus(v), 2) ** 2)
            assert defect <= bound + 1e-12

    def test_rejects_bad_order(self, random_state):
        with pytest.raises(ValueError):
            reconstruct(random_state, 3)

    def test_nested_pconst_distance(self):
        coarse = GridVector(np.array([1.0, -1.0]), GridSpec(2))
        fine = GridVector(np.array([1.0, 1.0, -1.0, -1.0]), GridSpec(4))
        assert pconst_l2_distance(coarse, fine) == 0.0
        with pytest.raises(ValueError):
            pconst_l2_distance(GridVector(np.zeros(3), GridSpec(3)), fine)


class TestSerialization:
    def test_csv_round_trip(self, random_state):
        text = to_csv(random_state)
        assert text.splitlines()[0] == "i,x_i,v_i"
        back = from_csv(text)
        assert np.array_equal(back.values, random_state.values)

    def test_snapshot_round_trip(self, random_state):
        blob = to_snapshot(random_state)
        assert len(blob) == 8 + 8 * random_state.n
        back = from_snapshot(blob)
        assert np.array_equal(back.values, random_state.values)
        assert back.spec == random_state.spec
