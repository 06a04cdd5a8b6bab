import numpy as np
import pytest

from tiebout import (PiecewiseConstantDensity, TabulatedDensity, TypeSpace,
                     build_grid_measure, build_monte_carlo_measure,
                     disk_predicate, measure_of, merge_measures)
from tiebout.errors import ConfigError, SupportEmptyError


def unit_interval(**kw):
    return TypeSpace(index=1, lo=[0.0], hi=[1.0], **kw)


def unit_square(**kw):
    return TypeSpace(index=1, lo=[0.0, 0.0], hi=[1.0, 1.0], **kw)


class TestGridMeasure:
    def test_uniform_interval_midpoints(self):
        mu = build_grid_measure(unit_interval(), 4)
        s = mu.single()
        assert np.allclose(np.sort(s.points[:, 0]), [0.125, 0.375, 0.625, 0.875])
        assert np.allclose(s.weights, 0.25)

    def test_uniform_square_two_cells(self):
        mu = build_grid_measure(unit_square(), 2)
        s = mu.single()
        assert len(s.points) == 4
        assert np.allclose(s.weights, 0.25)

    def test_disk_predicate_raw_mass(self):
        # midpoint counting of the unit disk inside [-1,1]^2: the raw
        # (pre-normalization) mass should match the analytic area ratio
        space = TypeSpace(index=1, lo=[-1, -1], hi=[1, 1],
                          predicate=disk_predicate([0, 0], 1.0))
        mu = build_grid_measure(space, 100)
        s = mu.single()
        assert abs(s.mass - 1.0) < 1e-12
        raw_mass = s.space.mass_share / s.density_scale
        box_mass = 4.0
        assert abs(raw_mass / box_mass - np.pi / 4.0) < 0.01

    def test_support_empty(self):
        space = TypeSpace(index=1, lo=[0, 0], hi=[1, 1],
                          predicate=lambda pts: np.zeros(len(pts), dtype=bool))
        with pytest.raises(SupportEmptyError):
            build_grid_measure(space, 8)

    def test_cells_lower_bound(self):
        with pytest.raises(ConfigError):
            build_grid_measure(unit_interval(), 1)

    def test_refinement_converges_on_disk(self):
        space = TypeSpace(index=1, lo=[-1, -1], hi=[1, 1],
                          predicate=disk_predicate([0, 0], 1.0))
        errors = []
        for cells in (25, 50, 100, 200):
            s = build_grid_measure(space, cells).single()
            raw = s.space.mass_share / s.density_scale
            errors.append(abs(raw - np.pi))
        for cells, err in zip((25, 50, 100, 200), errors):
            assert err < 4.0 / cells
        assert errors[-1] < errors[0]


class TestMonteCarloMeasure:
    def test_mean_within_clt_band(self):
        mu = build_monte_carlo_measure(unit_interval(), 1000, seed=7)
        s = mu.single()
        assert abs(float(np.mean(s.points[:, 0])) - 0.5) < 0.05

    def test_same_seed_same_points(self):
        a = build_monte_carlo_measure(unit_interval(), 500, seed=3).single()
        b = build_monte_carlo_measure(unit_interval(), 500, seed=3).single()
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.weights, b.weights)

    def test_single_draw(self):
        s = build_monte_carlo_measure(unit_interval(), 1, seed=0).single()
        assert len(s.points) == 1
        assert abs(s.weights[0] - 1.0) < 1e-15

    def test_hopeless_acceptance_rate_raises(self):
        from tiebout.errors import RejectionRateExceededError
        space = TypeSpace(index=1, lo=[0, 0], hi=[1, 1],
                          predicate=disk_predicate([0.5, 0.5], 1e-4))
        with pytest.raises(RejectionRateExceededError):
            build_monte_carlo_measure(space, 50, seed=1)


class TestMeasureOf:
    def test_full_and_empty(self):
        mu = build_grid_measure(unit_square(), 20)
        assert measure_of(mu, lambda pts: np.ones(len(pts), bool)) == pytest.approx(1.0)
        assert measure_of(mu, lambda pts: np.zeros(len(pts), bool)) == 0.0

    def test_half_square_exact_on_midpoint_grid(self):
        mu = build_grid_measure(unit_square(), 100)
        val = measure_of(mu, lambda pts: pts[:, 0] < 0.5)
        assert abs(val - 0.5) < 1e-9

    def test_additive_and_monotone(self):
        mu = build_grid_measure(unit_square(), 40)
        rng = np.random.default_rng(11)
        for _ in range(20):
            t = rng.uniform(0.1, 0.9)
            left = measure_of(mu, lambda pts: pts[:, 0] < t)
            right = measure_of(mu, lambda pts: pts[:, 0] >= t)
            assert left + right == pytest.approx(1.0, abs=1e-12)
            t2 = rng.uniform(t, 0.95)
            wider = measure_of(mu, lambda pts: pts[:, 0] < t2)
            assert wider >= left - 1e-15


class TestDensities:
    def test_piecewise_constant_mass_split(self):
        density = PiecewiseConstantDensity(boxes=(([0.0], [0.5]),),
                                           levels=(3.0,), background=1.0)
        mu = build_grid_measure(unit_interval(density=density), 1000)
        left = measure_of(mu, lambda pts: pts[:, 0] < 0.5)
        # left half carries 3x the density: 3/4 of total mass
        assert abs(left - 0.75) < 1e-9

    def test_tabulated_interpolates(self):
        density = TabulatedDensity(axes=(np.array([0.0, 1.0]),),
                                   table=np.array([1.0, 3.0]))
        vals = density.values(np.array([[0.0], [0.5], [1.0]]))
        assert np.allclose(vals, [1.0, 2.0, 3.0])

    def test_total_mass_normalized(self):
        density = PiecewiseConstantDensity(boxes=(([0.2], [0.4]),),
                                           levels=(5.0,), background=0.5)
        mu = build_grid_measure(unit_interval(density=density), 777)
        assert abs(mu.total_mass - 1.0) < 1e-12


class TestMergedPopulations:
    def test_shares_must_sum_to_one(self):
        a = build_grid_measure(TypeSpace(index=1, lo=[0.0], hi=[1.0],
                                         mass_share=0.6), 50)
        b = build_grid_measure(TypeSpace(index=2, lo=[0.0], hi=[1.0],
                                         mass_share=0.4), 50)
        merged = merge_measures([a, b])
        assert merged.q == 2
        assert abs(merged.total_mass - 1.0) < 1e-12
        with pytest.raises(ConfigError):
            merge_measures([a, a])

    def test_csv_dump(self, tmp_path):
        mu = build_grid_measure(unit_interval(), 8)
        path = tmp_path / "measure.csv"
        mu.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "type,x_1,w"
        assert len(lines) == 9
