import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipscurve.estimator import DeltaGrid
from ipscurve.inference import BootstrapConfig
from ipscurve.simulate import (
    BUNDLED_DGPS,
    Cell,
    DgpSpec,
    SimulationConfig,
    expected_influence,
    literal_extra_term,
    misspecification_config,
    nuisance_limits,
    probation_like_dgp,
    replicate_seeds,
    run_replications,
    sample_dgp,
    single_cell_dgp,
    true_effect,
    two_cell_dgp,
)

GRID = DeltaGrid.from_range()

cells = st.builds(
    lambda m, pi, mu1, mu0: (m, pi, mu1, mu0),
    st.floats(0.05, 1.0),
    st.floats(0.0, 1.0),
    st.floats(0.0, 1.0),
    st.floats(0.0, 1.0),
)


def dgp_from(raw):
    total = sum(r[0] for r in raw)
    return DgpSpec(tuple(Cell(r[0] / total, (float(i),), r[1], r[2], r[3]) for i, r in enumerate(raw)))


class TestTruth:
    def test_single_cell_values(self):
        t = true_effect(single_cell_dgp(), [1.0, 3.0, 1e-9])
        assert t.psi[0] == pytest.approx(0.5, abs=1e-15)
        assert t.psi[1] == pytest.approx(0.65, abs=1e-15)
        assert t.psi[2] == pytest.approx(0.2, abs=1e-8)

    def test_large_delta_limit(self):
        dgp = two_cell_dgp()
        assert true_effect(dgp, [1e12]).psi[0] == pytest.approx(float(dgp.mass @ dgp.mu1), abs=1e-10)

    def test_flat_when_no_effect(self):
        dgp = DgpSpec((Cell(0.4, (0.0,), 0.2, 0.3, 0.3), Cell(0.6, (1.0,), 0.7, 0.8, 0.8)))
        psi = true_effect(dgp, GRID).psi
        assert np.ptp(psi) < 1e-15

    def test_status_quo_identity(self):
        dgp = probation_like_dgp()
        expect = float(np.sum(dgp.mass * (dgp.pi * dgp.mu1 + (1 - dgp.pi) * dgp.mu0)))
        assert true_effect(dgp, [1.0]).psi[0] == pytest.approx(expect, abs=1e-15)

    def test_permutation_invariance(self):
        dgp = probation_like_dgp()
        perm = DgpSpec(tuple(reversed(dgp.cells)))
        np.testing.assert_allclose(true_effect(perm, GRID).psi, true_effect(dgp, GRID).psi, rtol=0, atol=1e-15)

    @pytest.mark.parametrize("name", sorted(BUNDLED_DGPS))
    def test_influence_expectation_is_truth(self, name):
        dgp = BUNDLED_DGPS[name]()
        np.testing.assert_allclose(expected_influence(dgp, GRID), true_effect(dgp, GRID).psi, rtol=0, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(cells, min_size=1, max_size=6))
    def test_influence_expectation_random_dgps(self, raw):
        dgp = dgp_from(raw)
        grid = [0.1, 0.5, 1.0, 4.0, 10.0]
        np.testing.assert_allclose(expected_influence(dgp, grid), true_effect(dgp, grid).psi, rtol=0, atol=1e-12)
        assert np.all((true_effect(dgp, grid).psi >= 0) & (true_effect(dgp, grid).psi <= 1))

    def test_validation(self):
        with pytest.raises(ValueError, match="sum to 1"):
            DgpSpec((Cell(0.5, (0.0,), 0.5, 0.5, 0.5),))
        with pytest.raises(ValueError, match="distinct"):
            DgpSpec((Cell(0.5, (0.0,), 0.5, 0.5, 0.5), Cell(0.5, (0.0,), 0.5, 0.5, 0.5)))
        with pytest.raises(ValueError):
            DgpSpec((Cell(1.0, (0.0,), 1.5, 0.5, 0.5),))


class TestProbationCalibration:
    def test_anchors(self):
        dgp = probation_like_dgp()
        t = true_effect(dgp, GRID)
        assert dgp.treated_share() == pytest.approx(0.264, abs=0.005)
        assert t.at(1.0) == pytest.approx(0.58, abs=0.005)
        assert t.at(0.1) == pytest.approx(0.56, abs=0.01)
        assert t.at(10.0) == pytest.approx(0.65, abs=0.01)
        assert t.at(10.0) - t.at(0.1) == pytest.approx(0.09, abs=0.02)

    def test_monotone(self):
        assert np.all(np.diff(true_effect(probation_like_dgp(), GRID).psi) >= 0)


class TestLiteralForm:
    @pytest.mark.parametrize("name", sorted(BUNDLED_DGPS))
    def test_extra_term_is_exact(self, name):
        dgp = BUNDLED_DGPS[name]()
        gap = expected_influence(dgp, GRID, formula="literal") - true_effect(dgp, GRID).psi
        np.testing.assert_allclose(gap, literal_extra_term(dgp, GRID), rtol=0, atol=1e-12)

    def test_large_at_ten_on_single_cell(self):
        assert abs(literal_extra_term(single_cell_dgp(), [10.0])[0]) > 0.05


class TestMisspecificationLimits:
    def test_outcome_wrong_is_unbiased(self):
        dgp = two_cell_dgp()
        lim = nuisance_limits(dgp, "true", "constant")
        np.testing.assert_allclose(expected_influence(dgp, GRID, *lim), true_effect(dgp, GRID).psi, atol=1e-12)

    def test_propensity_wrong_leaves_second_order_bias(self):
        dgp = two_cell_dgp()
        bias = expected_influence(dgp, GRID, *nuisance_limits(dgp, "constant", "true")) - true_effect(dgp, GRID).psi
        assert 0 < np.max(np.abs(bias)) < 0.015
        assert abs(bias[GRID.index_of(1.0)]) < 1e-15

    def test_both_wrong_is_far_off(self):
        dgp = two_cell_dgp()
        bias = expected_influence(dgp, GRID, *nuisance_limits(dgp, "constant", "constant")) - true_effect(dgp, GRID).psi
        assert np.max(np.abs(bias)) > 3 * 0.015


class TestSampling:
    def test_treated_share(self):
        f = sample_dgp(single_cell_dgp(), 100_000, seed=1)
        assert abs(f.a.mean() - 0.5) < 0.005

    def test_cell_frequencies(self):
        dgp = DgpSpec((Cell(0.3, (0.0,), 0.5, 0.5, 0.5), Cell(0.7, (1.0,), 0.5, 0.5, 0.5)))
        _, c = sample_dgp(dgp, 100_000, seed=2, return_cells=True)
        assert abs((c == 0).mean() - 0.3) < 0.01

    def test_deterministic(self):
        f1, f2 = sample_dgp(probation_like_dgp(), 500, 3), sample_dgp(probation_like_dgp(), 500, 3)
        assert f1.x.tobytes() == f2.x.tobytes() and f1.y.tobytes() == f2.y.tobytes()


class TestReplications:
    def test_oracle_report_shape_and_rmse(self):
        rep = run_replications(two_cell_dgp(), SimulationConfig(nuisance="oracle"), 30, 500, seed=4)
        assert rep.delta.size == 101 and rep.replicates == 30
        assert np.all(rep.rmse >= np.abs(rep.bias))
        assert np.all((rep.pointwise_coverage >= 0) & (rep.pointwise_coverage <= 1))

    def test_bitwise_reproducible(self):
        cfg = SimulationConfig(nuisance="oracle")
        a = run_replications(single_cell_dgp(), cfg, 10, 300, seed=5)
        b = run_replications(single_cell_dgp(), cfg, 10, 300, seed=5, n_jobs=3)
        assert a.to_csv() == b.to_csv()

    def test_collapse_column_is_bernoulli_wald(self):
        cfg = SimulationConfig(nuisance="oracle")
        rep = run_replications(single_cell_dgp(), cfg, 20, 400, seed=6)
        j = GRID.index_of(1.0)
        for r in range(20):
            y = sample_dgp(single_cell_dgp(), 400, replicate_seeds(6, r)[0]).y
            assert rep.raw.estimates[r, j] == pytest.approx(y.mean(), abs=1e-12)
            assert rep.raw.std_errors[r, j] == pytest.approx(y.std(ddof=1) / 20, abs=1e-12)

    def test_uniform_coverage_recorded_with_bootstrap(self):
        cfg = SimulationConfig(nuisance="oracle", bootstrap=BootstrapConfig(replicates=200))
        rep = run_replications(single_cell_dgp(), cfg, 5, 300, seed=7)
        assert rep.uniform_coverage is not None and rep.to_dict()["schema_version"] == 1

    def test_misspecification_config_modes(self):
        cfg = misspecification_config("ps_wrong")
        assert cfg.learners.propensity[0].kind == "constant"
        assert cfg.learners.outcome[0].kind == "ridge_logistic"
        assert misspecification_config("literal_formula").formula == "literal"
        with pytest.raises(ValueError):
            misspecification_config("nope")

    def test_needs_two_replicates(self):
        with pytest.raises(ValueError):
            run_replications(single_cell_dgp(), SimulationConfig(nuisance="oracle"), 1, 100, seed=0)
