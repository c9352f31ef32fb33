import numpy as np
import pytest

from mdqueue import TimeGrid, lipschitz_check, minimality_check, reflect
from mdqueue.paths import path_from_function, path_from_slopes, path_from_values, zero_path


def random_path(rng, n=128, scale=2.0):
    return path_from_slopes(TimeGrid(1.0, n), rng.normal(0.0, scale, size=(n, 1)))


class TestReflect:
    def test_nonnegative_input_is_fixed_point(self):
        z = path_from_function(TimeGrid(1.0, 16), lambda t: t)
        res = reflect(z)
        assert np.allclose(res.reflected.values, z.values)
        assert np.allclose(res.regulator.values, 0.0)

    def test_pure_drain(self):
        z = path_from_function(TimeGrid(1.0, 16), lambda t: -t)
        res = reflect(z)
        assert np.allclose(res.reflected.values, 0.0)
        assert np.allclose(res.regulator.values[:, 0], z.grid.t)

    def test_hand_example(self):
        z = path_from_values(TimeGrid(3.0, 3), [0.0, -1.0, 0.5, -2.0])
        res = reflect(z)
        assert np.allclose(res.regulator.values[:, 0], [0.0, 1.0, 1.0, 2.0])
        assert np.allclose(res.reflected.values[:, 0], [0.0, 0.0, 1.5, 0.0])

    def test_rejects_vector_paths(self):
        with pytest.raises(ValueError):
            reflect(zero_path(TimeGrid(1.0, 4), 2))

    def test_reflected_is_decomposition(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            z = random_path(rng)
            res = reflect(z)
            assert np.all(res.reflected.values >= 0.0)
            assert np.all(np.diff(res.regulator.values[:, 0]) >= 0.0)
            assert np.allclose(
                res.reflected.values, z.values + res.regulator.values, atol=0.0)

    def test_idempotence(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            res = reflect(random_path(rng))
            again = reflect(res.reflected)
            assert np.array_equal(again.reflected.values, res.reflected.values)
            assert np.all(again.regulator.values == 0.0)

    def test_complementarity(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            res = reflect(random_path(rng))
            reg = res.regulator.values[:, 0]
            refl = res.reflected.values[:, 0]
            increases = np.diff(reg) > 1e-12
            at_zero = (refl[:-1] <= 1e-12) | (refl[1:] <= 1e-12)
            assert np.all(~increases | at_zero)

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            z = random_path(rng)
            base = reflect(z).regulator.values
            for c in (0.1, 1.0, 5.0):
                shifted = reflect(z.with_values(z.values + c)).regulator.values
                assert np.all(shifted <= base + 1e-15)


class TestLipschitz:
    def test_identical_paths(self):
        z = random_path(np.random.default_rng(6))
        assert lipschitz_check(z, z)

    def test_drain_versus_zero(self):
        g = TimeGrid(1.0, 16)
        z = path_from_function(g, lambda t: -t)
        assert lipschitz_check(z, zero_path(g, 1))

    def test_random_pairs(self):
        rng = np.random.default_rng(7)
        assert all(lipschitz_check(random_path(rng), random_path(rng)) for _ in range(300))

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            lipschitz_check(zero_path(TimeGrid(1.0, 4), 1), zero_path(TimeGrid(1.0, 8), 1))


class TestMinimality:
    def test_regulator_is_minimal(self):
        z = random_path(np.random.default_rng(8))
        res = reflect(z)
        assert minimality_check(z, res.regulator)

    def test_strictly_larger_regulator(self):
        z = random_path(np.random.default_rng(9))
        reg = reflect(z).regulator
        assert minimality_check(z, reg.with_values(reg.values + 1.0))

    def test_random_dominating_processes(self):
        rng = np.random.default_rng(10)
        for _ in range(300):
            z = random_path(rng)
            base = np.maximum.accumulate(np.maximum(-z.values[:, 0], 0.0))
            noise = np.concatenate([[0.0], np.cumsum(np.abs(rng.normal(0, 0.2, z.grid.steps)))])
            assert minimality_check(z, z.with_values(base + noise))

    def test_precondition_violations_raise(self):
        g = TimeGrid(1.0, 4)
        z = path_from_values(g, [0.0, -1.0, -0.5, -2.0, 0.0])
        with pytest.raises(ValueError):
            minimality_check(z, path_from_values(g, [-1.0, 3.0, 3.0, 3.0, 3.0]))
        with pytest.raises(ValueError):
            minimality_check(z, path_from_values(g, [3.0, 2.0, 3.0, 3.0, 3.0]))
        with pytest.raises(ValueError):
            minimality_check(z, zero_path(g, 1))
