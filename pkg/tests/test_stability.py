import numpy as np
import pytest

from tiebout import (DeviationCandidate, StabilitySettings, classify_stability,
                     solve_basic, strong_stability_condition,
                     strong_stability_search, verify_deviation,
                     weak_stability_search)

from instances import (interval_measure, interval_model,
                       square_border_integral_oracle, square_measure,
                       square_model, solver_config)


def certified(model, mu, target_m1=0.5):
    reports = solve_basic(model, mu, solver_config())
    return min(reports, key=lambda r: abs(r.state.m[0] - target_m1))


@pytest.fixture(scope="module")
def square_small_g():
    model = square_model(0.05)
    mu = square_measure()
    return model, mu, certified(model, mu)


@pytest.fixture(scope="module")
def square_large_g():
    model = square_model(1.0)
    mu = square_measure()
    return model, mu, certified(model, mu)


class TestVerifyDeviation:
    def test_empty_candidate_is_vacuous(self, square_small_g):
        model, mu, eq = square_small_g
        cand = DeviationCandidate(source=0, target=1,
                                  member_indices=np.array([], dtype=int), mass=0.0)
        verify_deviation(model, mu, eq, cand)
        assert cand.worst_member_gain == -np.inf

    def test_interior_point_loses(self, square_small_g):
        model, mu, eq = square_small_g
        s = mu.single()
        labels = eq.partition.labels[0]
        interior = np.nonzero((labels == 0) & (s.points[:, 0] < 0.1))[0][:1]
        cand = DeviationCandidate(source=0, target=1, member_indices=interior,
                                  mass=0.0)
        verify_deviation(model, mu, eq, cand)
        assert cand.worst_member_gain < 0

    def test_border_strip_profits_at_large_fixed_cost(self, square_large_g):
        model, mu, eq = square_large_g
        s = mu.single()
        labels = eq.partition.labels[0]
        members = np.nonzero(labels == 0)[0]
        c = model.cost_matrix(s.points[members], eq.state)
        band = c[:, 1] - c[:, 0]
        order = np.argsort(band)
        masses = np.cumsum(s.weights[members][order])
        count = int(np.searchsorted(masses, 0.1, side="right"))
        cand = DeviationCandidate(source=0, target=1,
                                  member_indices=members[order[:count]], mass=0.0)
        verify_deviation(model, mu, eq, cand)
        # oracle: worst member pays the band cutoff ~ dm/0.7395 and gains
        # g*dm/(m_j*(m_j+dm)) = 1.0*0.1/(0.5*0.6)
        dm = cand.mass
        oracle = -dm / square_border_integral_oracle() + 1.0 * dm / (0.5 * (0.5 + dm))
        assert cand.worst_member_gain > 0
        assert cand.worst_member_gain == pytest.approx(oracle, abs=0.02)


class TestWeakStability:
    def test_small_fixed_cost_stable(self, square_small_g):
        model, mu, eq = square_small_g
        res = weak_stability_search(model, mu, eq, eps_ball=0.02, trials=500,
                                    seed=11)
        assert not res.found

    def test_large_fixed_cost_still_weakly_stable(self, square_large_g):
        model, mu, eq = square_large_g
        res = weak_stability_search(model, mu, eq, eps_ball=0.02, trials=500,
                                    seed=11)
        assert not res.found

    def test_reproducible(self, square_large_g):
        model, mu, eq = square_large_g
        a = weak_stability_search(model, mu, eq, 0.02, 50, seed=3)
        b = weak_stability_search(model, mu, eq, 0.02, 50, seed=3)
        assert a.found == b.found and a.trials_run == b.trials_run


class TestStrongCondition:
    def test_certificate_components(self, square_small_g):
        model, mu, eq = square_small_g
        cond = strong_stability_condition(model, mu, eq, 0, 1)
        assert cond.integral_value == pytest.approx(
            square_border_integral_oracle(), abs=0.01)
        assert cond.scale_term == pytest.approx(-5.0, abs=1e-6)
        assert cond.satisfied

    def test_certificate_fails_at_large_fixed_cost(self, square_large_g):
        model, mu, eq = square_large_g
        cond = strong_stability_condition(model, mu, eq, 0, 1)
        assert cond.scale_term == pytest.approx(-0.25, abs=1e-6)
        assert cond.condition_sum == pytest.approx(0.7395 - 0.25, abs=0.01)
        assert not cond.satisfied

    def test_symmetry_of_ordered_pairs(self, square_small_g):
        model, mu, eq = square_small_g
        a = strong_stability_condition(model, mu, eq, 0, 1)
        b = strong_stability_condition(model, mu, eq, 1, 0)
        assert a.integral_value == pytest.approx(b.integral_value, abs=1e-6)
        assert a.scale_term == pytest.approx(b.scale_term, abs=1e-9)

    def test_threshold_between_regimes(self):
        # sign flip of integral - 1/(4g) at g* = 1/(4*integral)
        mu = square_measure()
        oracle = 0.25 / square_border_integral_oracle()
        lo_model = square_model(oracle - 0.01)
        hi_model = square_model(oracle + 0.01)
        lo = strong_stability_condition(lo_model, mu, certified(lo_model, mu), 0, 1)
        hi = strong_stability_condition(hi_model, mu, certified(hi_model, mu), 0, 1)
        assert lo.satisfied and not hi.satisfied

    def test_interval_point_formula(self):
        model = interval_model(0.1)
        mu = interval_measure()
        eq = certified(model, mu)
        cond = strong_stability_condition(model, mu, eq, 0, 1)
        assert cond.dimension_extension
        # f(x*)/|c2' - c1'| + 1/(dc/dm) = 1/2 - m^2/g = 0.5 - 2.5
        assert cond.integral_value == pytest.approx(0.5, abs=1e-9)
        assert cond.scale_term == pytest.approx(-2.5, abs=1e-9)
        assert cond.satisfied

    def test_scale_term_always_negative(self, square_large_g):
        model, mu, eq = square_large_g
        for i, j in ((0, 1), (1, 0)):
            assert strong_stability_condition(model, mu, eq, i, j).scale_term < 0


class TestStrongSearch:
    def test_no_deviation_when_certificate_holds(self, square_small_g):
        model, mu, eq = square_small_g
        res = strong_stability_search(model, mu, eq, eps_mass=0.05, trials=200,
                                      seed=5)
        assert not res.found

    def test_profitable_strip_when_certificate_fails(self, square_large_g):
        model, mu, eq = square_large_g
        res = strong_stability_search(model, mu, eq, eps_mass=0.05, trials=200,
                                      seed=5)
        assert res.found
        cand = res.counterexample
        verify_deviation(model, mu, eq, cand)
        assert cand.worst_member_gain > 0  # replay confirms mutual benefit

    def test_sub_resolution_mass_is_vacuous(self, square_small_g):
        model, mu, eq = square_small_g
        res = strong_stability_search(model, mu, eq,
                                      eps_mass=mu.max_weight / 2,
                                      trials=10, seed=5)
        assert not res.found
        assert res.resolution_warning


class TestClassification:
    def test_strongly_stable_at_small_g(self, square_small_g):
        model, mu, eq = square_small_g
        verdict = classify_stability(model, mu, eq,
                                     StabilitySettings(trials=200, seed=9))
        assert verdict.classification == "strongly-stable"

    def test_weakly_stable_only_at_large_g(self, square_large_g):
        model, mu, eq = square_large_g
        verdict = classify_stability(model, mu, eq,
                                     StabilitySettings(trials=200, seed=9))
        assert verdict.classification == "weakly-stable-only"
        assert verdict.strong_search.found

    def test_interval_symmetric_strongly_stable(self):
        model = interval_model(0.1)
        mu = interval_measure()
        eq = certified(model, mu)
        verdict = classify_stability(model, mu, eq,
                                     StabilitySettings(trials=200, seed=9))
        assert verdict.classification == "strongly-stable"
        assert any("one-dimensional" in note for note in verdict.notes)

    def test_interval_asymmetric_outside_guarantee(self):
        # moving into the small community profits even for tiny balls when
        # the space is one-dimensional: gains and losses are the same order
        model = interval_model(0.1)
        mu = interval_measure()
        eq = certified(model, mu, target_m1=0.1127)
        verdict = classify_stability(model, mu, eq,
                                     StabilitySettings(trials=300, seed=9))
        assert verdict.classification == "unstable"
        assert any("k >= 2" in note for note in verdict.notes)
        cand = verdict.weak.counterexample
        verify_deviation(model, mu, eq, cand)
        assert cand.worst_member_gain > 0
