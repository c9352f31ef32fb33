import numpy as np
import pytest

from mdqueue import (
    GridPath,
    ModelParams,
    TimeGrid,
    oscillation,
    rate_function,
    sup_norm,
    time_change_rho,
)
from mdqueue.paths import path_from_function, path_from_slopes, path_from_values, zero_path


def grid(T=1.0, n=4):
    return TimeGrid(T, n)


class TestTimeGrid:
    def test_endpoints(self):
        g = TimeGrid(2.0, 8)
        assert g.t[0] == 0.0
        assert g.t[-1] == 2.0
        assert np.all(np.diff(g.t) > 0)

    @pytest.mark.parametrize("T,n", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, -3)])
    def test_rejects_bad_arguments(self, T, n):
        with pytest.raises(ValueError):
            TimeGrid(T, n)


class TestGridPath:
    def test_shape_and_finiteness(self):
        g = grid()
        with pytest.raises(ValueError):
            GridPath(g, np.zeros((3, 1)))
        with pytest.raises(ValueError):
            GridPath(g, np.full((5, 1), np.nan))
        with pytest.raises(ValueError):
            GridPath(g, np.zeros((5, 1)), kind="wavelet")

    def test_values_are_immutable(self):
        p = zero_path(grid(), 2)
        with pytest.raises(ValueError):
            p.values[0, 0] = 1.0

    def test_step_evaluation_is_right_continuous(self):
        g = grid(1.0, 4)
        p = path_from_values(g, [0, 1, 1, 2, 2], kind="step")
        out = p.evaluate([0.1, 0.25, 0.26])
        assert out[:, 0].tolist() == [0.0, 1.0, 1.0]

    def test_csv_roundtrip(self, tmp_path):
        g = grid(1.0, 3)
        p = path_from_values(g, np.column_stack([[0, 0.1, -0.2, 1 / 3], [1, 2, 3, 4]]))
        f = tmp_path / "p.csv"
        p.to_csv(f)
        lines = f.read_text().strip().split("\n")
        assert lines[0] == "t,v1,v2"
        data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
        assert np.array_equal(data[:, 1:], p.values)


class TestSupNorm:
    def test_constant_path(self):
        p = path_from_values(grid(), np.tile([3.0, 4.0], (5, 1)))
        assert sup_norm(p) == pytest.approx(5.0)
        assert sup_norm(p, 2) == pytest.approx(5.0)

    def test_zero_path(self):
        assert sup_norm(zero_path(grid(), 3)) == 0.0

    def test_hand_example(self):
        p = path_from_values(TimeGrid(3.0, 3), [0.0, -1.0, 0.5, -2.0])
        assert sup_norm(p, 3) == pytest.approx(2.0)
        assert sup_norm(p, 1) == pytest.approx(1.0)

    def test_monotone_in_index(self):
        rng = np.random.default_rng(0)
        p = path_from_slopes(TimeGrid(1.0, 50), rng.normal(size=(50, 2)))
        vals = [sup_norm(p, j) for j in range(51)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            sup_norm(zero_path(grid(), 1), 9)


class TestOscillation:
    def test_constant_path(self):
        p = path_from_values(grid(), np.full((5, 1), 2.5))
        assert oscillation(p, 0.3) == 0.0

    def test_linear_path(self):
        p = path_from_function(TimeGrid(1.0, 8), lambda t: t)
        assert oscillation(p, 0.25) == pytest.approx(0.25)

    def test_hand_example(self):
        p = path_from_values(TimeGrid(1.0, 3), [0.0, 1.0, 0.0, 1.0])
        assert oscillation(p, 1.0 / 3.0) == pytest.approx(1.0)

    def test_monotone_in_window_and_bounded(self):
        rng = np.random.default_rng(1)
        p = path_from_slopes(TimeGrid(1.0, 64), rng.normal(size=(64, 2)))
        vals = [oscillation(p, eta) for eta in (0.05, 0.1, 0.3, 0.7, 1.0)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))
        assert vals[-1] <= 2.0 * sup_norm(p) + 1e-12

    def test_rejects_nonpositive_window(self):
        with pytest.raises(ValueError):
            oscillation(zero_path(grid(), 1), 0.0)


def unit_params(I=1):
    return ModelParams(
        lam=np.ones(I) / I,
        mu=np.ones(I),
        sigma2_ia=np.ones(I),
        sigma2_st=np.ones(I),
        lam_tilde=np.zeros(I),
        mu_tilde=np.zeros(I),
        x0=np.zeros(I),
    )


class TestModelParams:
    def test_derived_quantities(self):
        p = ModelParams(
            lam=np.array([1.0, 0.5]),
            mu=np.array([2.0, 1.0]),
            sigma2_ia=np.array([1.0, 0.5]),
            sigma2_st=np.array([0.5, 1.0]),
            lam_tilde=np.array([0.2, -0.1]),
            mu_tilde=np.array([0.4, 0.3]),
            x0=np.array([1.0, 0.0]),
        )
        assert np.allclose(p.rho, [0.5, 0.5])
        assert np.allclose(p.theta, [0.5, 1.0])
        assert np.allclose(p.y, p.lam_tilde - p.rho * p.mu_tilde)

    def test_rejects_subcritical_load(self):
        with pytest.raises(ValueError, match="critical load"):
            ModelParams(
                lam=np.array([0.98]), mu=np.array([1.0]),
                sigma2_ia=np.array([1.0]), sigma2_st=np.array([1.0]),
                lam_tilde=np.zeros(1), mu_tilde=np.zeros(1), x0=np.zeros(1),
            )

    def test_rejects_bad_rates_and_state(self):
        base = dict(sigma2_ia=np.array([1.0]), sigma2_st=np.array([1.0]),
                    lam_tilde=np.zeros(1), mu_tilde=np.zeros(1), x0=np.zeros(1))
        with pytest.raises(ValueError):
            ModelParams(lam=np.array([-1.0]), mu=np.array([-1.0]), **base)
        with pytest.raises(ValueError):
            ModelParams(lam=np.array([1.0]), mu=np.array([1.0]),
                        sigma2_ia=np.array([0.0]), sigma2_st=np.array([1.0]),
                        lam_tilde=np.zeros(1), mu_tilde=np.zeros(1), x0=np.zeros(1))
        with pytest.raises(ValueError):
            ModelParams(lam=np.array([1.0]), mu=np.array([1.0]),
                        sigma2_ia=np.array([1.0]), sigma2_st=np.array([1.0]),
                        lam_tilde=np.zeros(1), mu_tilde=np.zeros(1),
                        x0=np.array([-0.1]))

    def test_json_schema_roundtrip(self):
        doc = {
            "I": 2,
            "lambda": [1.0, 0.5],
            "mu": [2.0, 1.0],
            "sigma2_ia": [1.0, 1.0],
            "sigma2_st": [1.0, 1.0],
            "lambda_tilde": [0.0, 0.0],
            "mu_tilde": [0.0, 0.0],
            "x0": [0.5, 0.5],
            "horizon": 1.0,
        }
        params, horizon = ModelParams.from_dict(doc)
        assert horizon == 1.0
        assert params.I == 2
        with pytest.raises(ValueError, match="missing"):
            ModelParams.from_dict({k: v for k, v in doc.items() if k != "mu"})


class TestRateFunction:
    def test_zero_path(self):
        assert rate_function(zero_path(grid(), 2), unit_params()) == 0.0

    def test_constant_slope_closed_form(self):
        g = TimeGrid(1.0, 16)
        psi = path_from_slopes(g, np.column_stack([np.full(16, 2.0), np.zeros(16)]))
        assert rate_function(psi, unit_params(), form="direct") == pytest.approx(2.0)
        assert rate_function(psi, unit_params(), form="time_changed") == pytest.approx(2.0)

    def test_jump_cost_diverges_with_refinement(self):
        vals = []
        for n in (10, 100, 1000):
            g = TimeGrid(1.0, n)
            slopes = np.zeros((n, 2))
            slopes[0, 0] = 1.0 / g.dt  # unit jump squeezed into one step
            vals.append(rate_function(path_from_slopes(g, slopes), unit_params()))
        assert vals[0] < vals[1] < vals[2]
        assert vals[2] / vals[1] == pytest.approx(10.0, rel=1e-9)

    def test_quadratic_scaling(self):
        rng = np.random.default_rng(3)
        p = unit_params(2)
        g = TimeGrid(1.0, 32)
        psi = path_from_slopes(g, rng.normal(size=(32, 4)))
        base = rate_function(psi, p)
        for c in (0.5, 2.0, 3.7):
            scaled = GridPath(g, c * psi.values)
            assert rate_function(scaled, p) == pytest.approx(c**2 * base, rel=1e-12)

    def test_nonzero_start_is_infinite_and_flagged(self):
        g = grid()
        p = path_from_values(g, np.ones((5, 2)))
        with pytest.warns(UserWarning, match="start"):
            assert rate_function(p, unit_params()) == np.inf

    def test_wrong_dimension_rejected(self):
        with pytest.raises(ValueError):
            rate_function(zero_path(grid(), 3), unit_params())

    def test_direct_equals_time_changed_after_inverse_time_change(self):
        # rho = (1/4, 3/4) with N divisible by both, so the composition's
        # kink falls on a grid node and only smooth interpolation error is left
        params = ModelParams(
            lam=np.array([0.5, 1.5]), mu=np.array([2.0, 2.0]),
            sigma2_ia=np.array([1.0, 1.0]), sigma2_st=np.array([0.8, 1.2]),
            lam_tilde=np.zeros(2), mu_tilde=np.zeros(2), x0=np.zeros(2),
        )
        rho = params.rho
        assert np.allclose(rho, [0.25, 0.75])
        n = 2400
        g = TimeGrid(1.0, n)
        alpha = np.array([0.4, -0.4])
        beta = np.array([0.3, 0.9])

        def quad(i, t):
            return alpha[i] * t**2 + beta[i] * t

        t = g.t
        psi1 = np.column_stack([0.2 * t**2, -0.5 * t])
        direct = np.column_stack([psi1, quad(0, t), quad(1, t)])
        pre = np.column_stack(
            [psi1, quad(0, np.minimum(t / rho[0], 1.0)), quad(1, np.minimum(t / rho[1], 1.0))]
        )
        r_direct = rate_function(GridPath(g, direct), params, form="direct")
        r_pre = rate_function(GridPath(g, pre), params, form="time_changed")
        assert abs(r_direct - r_pre) <= 1e-6

        back = time_change_rho(GridPath(g, pre[:, 2:]), params)
        assert np.abs(back.values - direct[:, 2:]).max() <= 1e-5


class TestTimeChange:
    def test_identity_when_rho_is_one(self):
        p = unit_params(1)  # single class: rho = 1
        g = TimeGrid(1.0, 16)
        psi = path_from_function(g, lambda t: np.array([t**2]))
        out = time_change_rho(psi, p)
        assert np.allclose(out.values, psi.values)

    def test_linear_path_composition(self):
        # two equal classes, rho_i = 1/2: t -> t/2
        params = unit_params(2)
        g = TimeGrid(1.0, 32)
        psi = path_from_function(g, lambda t: np.array([t, t]))
        out = time_change_rho(psi, params)
        assert np.allclose(out.values, psi.values / 2.0, atol=1e-12)

    def test_quadratic_composition_with_uneven_rho(self):
        params = ModelParams(
            lam=np.array([0.5, 1.5]), mu=np.array([2.0, 2.0]),
            sigma2_ia=np.ones(2), sigma2_st=np.ones(2),
            lam_tilde=np.zeros(2), mu_tilde=np.zeros(2), x0=np.zeros(2),
        )
        n = 256
        g = TimeGrid(1.0, n)
        psi = path_from_function(g, lambda t: np.array([t**2, t**2]))
        out = time_change_rho(psi, params)
        t = g.t
        expect = np.column_stack([t**2 / 16.0, 9.0 * t**2 / 16.0])
        assert np.abs(out.values - expect).max() <= 2.0 / n**2

    def test_linear_operator_and_start_preserved(self):
        params = unit_params(2)
        g = TimeGrid(1.0, 16)
        rng = np.random.default_rng(5)
        a = path_from_slopes(g, rng.normal(size=(16, 2)))
        b = path_from_slopes(g, rng.normal(size=(16, 2)))
        combo = GridPath(g, 2.0 * a.values + 3.0 * b.values)
        lhs = time_change_rho(combo, params).values
        rhs = 2.0 * time_change_rho(a, params).values + 3.0 * time_change_rho(b, params).values
        assert np.allclose(lhs, rhs, atol=1e-12)
        assert np.allclose(time_change_rho(a, params).values[0], a.values[0])
