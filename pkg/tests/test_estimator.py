import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_frame
from ipscurve.dataset import AnalysisFrame
from ipscurve.estimator import (
    DeltaGrid,
    EstimationError,
    LearnerConfig,
    NuisanceEstimates,
    assign_folds,
    cross_fit_nuisances,
    estimate_curve,
    estimate_from_nuisances,
    influence_value,
    plug_in_effect,
    shift_propensity,
)
from ipscurve.learners import LearnerSpec
from ipscurve.simulate import oracle_nuisances, sample_dgp, single_cell_dgp

CONSTANT_ONLY = LearnerConfig.uniform([LearnerSpec("constant")])
RIDGE_ONLY = LearnerConfig.uniform([LearnerSpec("ridge_logistic")])


class TestShift:
    def test_identity_at_one(self):
        assert shift_propensity(1.0, 0.3) == 0.3

    def test_hand_values(self):
        assert shift_propensity(10.0, 0.5) == pytest.approx(5 / 5.5, abs=1e-12)
        assert round(float(shift_propensity(10.0, 0.5)), 6) == 0.909091
        assert round(float(shift_propensity(0.1, 0.2642)), 6) == 0.034662

    def test_boundaries_absorb(self):
        assert shift_propensity(5.0, 0.0) == 0.0
        assert shift_propensity(5.0, 1.0) == 1.0

    @settings(max_examples=300, deadline=None)
    @given(st.floats(math.log(0.1), math.log(10.0)), st.floats(0.01, 0.99))
    def test_odds_and_inverse(self, log_delta, pi):
        delta = math.exp(log_delta)
        q = float(shift_propensity(delta, pi))
        assert q / (1 - q) == pytest.approx(delta * pi / (1 - pi), rel=1e-12)
        assert float(shift_propensity(1 / delta, q)) == pytest.approx(pi, abs=1e-12)


class TestPlugIn:
    def test_two_units(self):
        nuis = NuisanceEstimates([0.5, 0.5], [1.0, 1.0], [0.0, 0.0])
        assert plug_in_effect(nuis, 1.0) == 0.5
        assert plug_in_effect(nuis, 1e8) == pytest.approx(1.0, abs=1e-6)

    def test_flat_when_arms_agree(self):
        nuis = NuisanceEstimates([0.2, 0.7, 0.9], [0.4, 0.1, 0.6], [0.4, 0.1, 0.6])
        vals = [plug_in_effect(nuis, d) for d in (0.1, 1.0, 7.0)]
        assert max(vals) - min(vals) < 1e-15


class TestInfluenceValue:
    @settings(max_examples=200, deadline=None)
    @given(
        st.integers(0, 1), st.integers(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)
    )
    def test_collapses_to_y_at_one(self, a, y, pi, mu1, mu0):
        assert float(influence_value(1.0, a, y, pi, mu1, mu0)) == pytest.approx(y, abs=1e-12)

    def test_hand_treated(self):
        assert float(influence_value(2.0, 1, 1, 0.5, 0.5, 0.5)) == pytest.approx(0.5 + (2 / 1.5) * 0.5, abs=1e-12)
        assert round(float(influence_value(2.0, 1, 1, 0.5, 0.5, 0.5)), 6) == 1.166667

    def test_hand_untreated(self):
        assert float(influence_value(2.0, 0, 0, 0.5, 0.8, 0.2)) == pytest.approx(0.2, abs=1e-12)

    def test_monte_carlo_mean_matches_truth(self):
        dgp = single_cell_dgp()
        frame, cells = sample_dgp(dgp, 20000, seed=1, return_cells=True)
        phi = influence_value(3.0, frame.a, frame.y, dgp.pi[cells], dgp.mu1[cells], dgp.mu0[cells])
        assert abs(phi.mean() - 0.65) <= 3 * phi.std(ddof=1) / math.sqrt(phi.size)

    def test_bounded_at_extreme_propensity(self):
        vals = influence_value(np.array([0.1, 10.0])[:, None], 1, 0, np.array([0.0, 1.0]), 1.0, 0.0)
        assert np.all(np.isfinite(vals))


class TestGrid:
    def test_default_grid(self):
        g = DeltaGrid.from_range()
        assert len(g) == 101
        assert g.values[0] == 0.1 and g.values[-1] == 10.0
        assert g.values[g.index_of(1.0)] == 1.0
        assert np.all(np.diff(g.values) > 0)

    def test_off_grid_names_nearest(self):
        with pytest.raises(ValueError, match="nearest grid point"):
            DeltaGrid.from_range().index_of(0.5)

    def test_invalid(self):
        with pytest.raises(ValueError):
            DeltaGrid.from_range(min=2, max=1)
        with pytest.raises(ValueError):
            DeltaGrid(np.array([1.0, 1.0]))
        with pytest.raises(ValueError):
            DeltaGrid(np.array([-1.0]))


class TestCrossFitting:
    def test_folds_cover_both_arms(self):
        a = np.array([1, 0, 1, 0])
        f = assign_folds(a, 2, seed=3)
        for k in range(2):
            assert set(a[f.fold_of == k]) == {0, 1}
        np.testing.assert_array_equal(assign_folds(a, 2, seed=3).fold_of, f.fold_of)

    def test_too_few_units_per_arm(self):
        with pytest.raises(EstimationError, match="treated"):
            assign_folds(np.array([1, 0, 0, 0]), 2, seed=0)

    def test_constant_learner_gives_out_of_fold_share(self):
        a = np.array([1, 1, 0, 0, 1, 0])
        frame = AnalysisFrame(x=np.arange(6.0), a=a, y=[0, 1, 1, 0, 1, 0])
        nuis = cross_fit_nuisances(frame, CONSTANT_ONLY, k_folds=2, seed=4)
        for k in range(2):
            test = nuis.folds.fold_of == k
            np.testing.assert_allclose(nuis.pi_hat[test], a[~test].mean(), rtol=0, atol=1e-15)

    def test_no_leakage(self):
        frame = make_frame(200, seed=2)
        base = cross_fit_nuisances(frame, RIDGE_ONLY, k_folds=2, seed=5)
        i = 17
        y = frame.y.copy()
        y[i] = 1 - y[i]
        a = frame.a.copy()
        a[i] = 1 - a[i]
        flipped = cross_fit_nuisances(AnalysisFrame(x=frame.x, a=frame.a, y=y), RIDGE_ONLY, k_folds=2, seed=5)
        assert flipped.mu1_hat[i] == base.mu1_hat[i] and flipped.mu0_hat[i] == base.mu0_hat[i]
        assert flipped.pi_hat[i] == base.pi_hat[i]

    def test_per_arm_mode(self):
        frame = make_frame(300, seed=6)
        cfg = LearnerConfig.uniform([LearnerSpec("ridge_logistic")], outcome_mode="per_arm")
        nuis = cross_fit_nuisances(frame, cfg, seed=1)
        assert "treated" in nuis.provenance["folds"][0]["outcome"]

    def test_parallel_folds_match_serial(self):
        frame = make_frame(300, seed=7)
        a = cross_fit_nuisances(frame, seed=2, n_jobs=1)
        b = cross_fit_nuisances(frame, seed=2, n_jobs=2)
        np.testing.assert_array_equal(a.pi_hat, b.pi_hat)
        np.testing.assert_array_equal(a.mu1_hat, b.mu1_hat)


class TestCurve:
    def test_collapse_at_one(self, frame):
        curve, _ = estimate_curve(frame, seed=1)
        assert curve.at(1.0) == pytest.approx(frame.y.mean(), abs=1e-12)
        sd = frame.y.std(ddof=1)
        assert curve.sigma[DeltaGrid.from_range().index_of(1.0)] == pytest.approx(sd, abs=1e-12)

    def test_oracle_single_cell(self):
        dgp = single_cell_dgp()
        frame, cells = sample_dgp(dgp, 5000, seed=11, return_cells=True)
        grid = DeltaGrid(np.array([1.0, 3.0]))
        curve, _ = estimate_from_nuisances(frame, oracle_nuisances(dgp, cells), grid)
        assert abs(curve.at(3.0) - 0.65) <= 3 * curve.std_error[1]

    def test_degenerate_outcome_gives_zero_curve(self):
        frame = make_frame(200, seed=8)
        zero = AnalysisFrame(x=frame.x, a=frame.a, y=np.zeros(frame.n, int))
        curve, _ = estimate_curve(zero, seed=0, learner_config=RIDGE_ONLY)
        assert np.max(np.abs(curve.estimate)) < 1e-5

    def test_extreme_delta_matches_aipw(self):
        rng = np.random.default_rng(9)
        n = 500
        pi = rng.uniform(0.05, 0.95, n)
        mu1, mu0 = rng.uniform(0.1, 0.9, n), rng.uniform(0.1, 0.9, n)
        a = (rng.random(n) < pi).astype(int)
        y = (rng.random(n) < np.where(a == 1, mu1, mu0)).astype(int)
        frame = AnalysisFrame(x=np.zeros((n, 1)), a=a, y=y)
        grid = DeltaGrid(np.array([1e-8, 1.0, 1e8]))
        curve, _ = estimate_from_nuisances(frame, NuisanceEstimates(pi, mu1, mu0), grid)
        aipw1 = np.mean(mu1 + a * (y - mu1) / pi)
        aipw0 = np.mean(mu0 + (1 - a) * (y - mu0) / (1 - pi))
        assert curve.at(1e8) == pytest.approx(aipw1, abs=1e-6)
        assert curve.at(1e-8) == pytest.approx(aipw0, abs=1e-6)

    def test_metadata_records_provenance(self, frame):
        curve, infl = estimate_curve(frame, seed=3, learner_config=RIDGE_ONLY)
        assert curve.metadata["seed"] == 3
        assert infl.phi.shape == (frame.n, 101)
        assert len(curve.metadata["nuisance_provenance"]["folds"]) == 2
