"""Test cases for domain types and validation"""
import numpy as np
import pytest

from regimebound.errors import ModelError, UnsupportedDynamicsError
from regimebound.model import (
    CEV,
    GBM,
    Driftless,
    Monotonicity,
    PayoffSpec,
    ProblemSpec,
    Put,
    RateBoxes,
    RateMatrix,
    Table,
    is_admissible,
    linear_growth_constant,
    sigma_monotonicity,
    validate_rate_matrix,
)


class TestRateMatrixValidation:
    """Test Q-matrix validation"""

    @pytest.mark.unit
    def test_conservative_matrix_is_ok(self):
        """Test a two-regime matrix with zero row sums"""
        report = validate_rate_matrix(RateMatrix(m=2, q=[[-1.0, 1.0], [2.0, -2.0]]))
        assert report.ok
        assert bool(report)

    @pytest.mark.unit
    def test_negative_off_diagonal_reported_at_cell(self):
        """Test that a negative rate is reported at its (row, col)"""
        report = validate_rate_matrix(RateMatrix(m=2, q=[[-1.0, 1.0], [-2.0, 2.0]]))
        assert not report.ok
        cells = [(v.row, v.col) for v in report.violations]
        assert (2, 1) in cells
        assert any("negative" in v.reason for v in report.violations)

    @pytest.mark.unit
    def test_band_width_violation(self):
        """Test that a rate skipping a regime is rejected"""
        q = np.array([[-1.5, 1.0, 0.5], [1.0, -2.0, 1.0], [0.0, 1.0, -1.0]])
        report = validate_rate_matrix(RateMatrix(m=3, q=q))
        assert [(v.row, v.col) for v in report.violations] == [(1, 3)]
        assert "band-width" in str(report.violations[0])

    @pytest.mark.unit
    def test_row_sum_violation(self):
        """Test that a non-conservative row is reported as a row"""
        report = validate_rate_matrix(RateMatrix(m=2, q=[[-1.0, 1.1], [0.5, -0.5]]))
        assert len(report.violations) == 1
        assert report.violations[0].col is None
        assert str(report.violations[0]).startswith("row 1")

    @pytest.mark.unit
    def test_from_rates_rows_sum_to_zero(self):
        """Test the tridiagonal constructor"""
        q = RateMatrix.from_rates([0.5, 1.5], [0.3, 2.0])
        assert q.m == 3
        assert np.all(np.abs(q.q.sum(axis=1)) <= 1e-12)
        np.testing.assert_array_equal(q.plus_rates(), [0.5, 1.5, 0.0])
        np.testing.assert_array_equal(q.minus_rates(), [0.0, 0.3, 2.0])

    @pytest.mark.unit
    def test_matrix_is_read_only(self):
        """Test immutability of stored rates"""
        q = RateMatrix.from_rates([1.0], [1.0])
        with pytest.raises(ValueError):
            q.q[0, 1] = 3.0

    @pytest.mark.unit
    def test_shape_mismatch(self):
        """Test that a non-square matrix is refused"""
        with pytest.raises(ModelError):
            RateMatrix(m=2, q=[[0.0, 0.0]])


class TestRateBoxes:
    """Test uncertainty boxes and admissibility"""

    @pytest.mark.unit
    def test_lower_endpoint_is_admissible(self, boxes):
        """Test closed-interval membership at the lower end"""
        assert is_admissible(RateMatrix.from_rates([0.5], [0.3]), boxes)

    @pytest.mark.unit
    def test_below_lower_endpoint(self, boxes):
        """Test a rate just below its box"""
        assert not is_admissible(RateMatrix.from_rates([0.4], [0.5]), boxes)

    @pytest.mark.unit
    def test_singleton_boxes(self):
        """Test degenerate intervals"""
        single = RateBoxes(plus=((1.0, 1.0),), minus=((1.0, 1.0),))
        assert is_admissible(RateMatrix.from_rates([1.0], [1.0]), single)
        assert single.grid_samples(5) == [RateMatrix.from_rates([1.0], [1.0])]

    @pytest.mark.unit
    def test_admissibility_monotone_in_boxes(self, boxes):
        """Test that enlarging every interval keeps admissible matrices admissible"""
        wider = RateBoxes(plus=((0.1, 3.0),), minus=((0.1, 2.0),))
        for q in boxes.grid_samples(4):
            assert is_admissible(q, boxes)
            assert is_admissible(q, wider)

    @pytest.mark.unit
    def test_dimension_mismatch(self, boxes):
        """Test that comparing across regime counts is an error"""
        with pytest.raises(ModelError):
            is_admissible(RateMatrix.from_rates([1.0, 1.0], [1.0, 1.0]), boxes)

    @pytest.mark.unit
    def test_invalid_intervals(self):
        """Test non-compact or reversed intervals"""
        with pytest.raises(ModelError):
            RateBoxes(plus=((0.0, 1.0),), minus=((0.5, 1.0),))
        with pytest.raises(ModelError):
            RateBoxes(plus=((2.0, 1.0),), minus=((0.5, 1.0),))
        with pytest.raises(ModelError):
            RateBoxes(plus=((1.0, 2.0),), minus=())

    @pytest.mark.unit
    def test_grid_samples_order(self, boxes):
        """Test that plus boxes vary slowest in the Cartesian product"""
        samples = boxes.grid_samples(2)
        assert boxes.sample_count(2) == 4
        rates = [(q.q[0, 1], q.q[1, 0]) for q in samples]
        assert rates == [(0.5, 0.3), (0.5, 1.0), (2.0, 0.3), (2.0, 1.0)]

    @pytest.mark.unit
    def test_uniform_samples_are_admissible(self, boxes):
        """Test random draws stay inside the boxes"""
        rng = np.random.Generator(np.random.Philox(3))
        for _ in range(50):
            assert is_admissible(boxes.sample_uniform(rng), boxes)


class TestSigmaMonotonicity:
    """Test volatility ordering classification"""

    @pytest.mark.unit
    @pytest.mark.parametrize(
        "sigma, expected",
        [
            ([0.2, 0.4], Monotonicity.INCREASING),
            ([0.4, 0.2], Monotonicity.DECREASING),
            ([0.2, 0.5, 0.3], Monotonicity.NON_MONOTONE),
            ([0.2, 0.2], Monotonicity.NON_MONOTONE),
            ([0.3], Monotonicity.TRIVIAL),
        ],
    )
    def test_classification(self, sigma, expected):
        """Test strict orderings and the single-regime case"""
        assert sigma_monotonicity(sigma) is expected

    @pytest.mark.unit
    def test_rejects_nonpositive(self):
        """Test that zero volatility is refused"""
        with pytest.raises(ModelError):
            sigma_monotonicity([0.2, 0.0])


class TestPayoffAndProblem:
    """Test payoffs, dynamics and problem validation"""

    @pytest.mark.unit
    def test_put_is_exact(self):
        """Test that the put equals max(K - x, 0) at grid points"""
        payoff = PayoffSpec(Put(100.0))
        x = np.linspace(50.0, 150.0, 101)
        np.testing.assert_array_equal(payoff.evaluate(x), np.maximum(100.0 - x, 0.0))
        assert payoff.is_put
        assert payoff.scale_on(x) == 100.0

    @pytest.mark.unit
    def test_table_interpolates_and_extends_flat(self):
        """Test the piecewise-linear payoff"""
        payoff = PayoffSpec(Table(((0.0, 1.0), (1.0, 0.0))), holder_beta=0.5)
        np.testing.assert_allclose(payoff.evaluate([-1.0, 0.25, 2.0]), [1.0, 0.75, 0.0])
        assert not payoff.is_put

    @pytest.mark.unit
    def test_table_validation(self):
        """Test negative values and unsorted breakpoints"""
        with pytest.raises(ModelError):
            Table(((0.0, -1.0), (1.0, 0.0)))
        with pytest.raises(ModelError):
            Table(((1.0, 0.0), (0.0, 1.0)))

    @pytest.mark.unit
    def test_holder_beta_range(self):
        """Test the declared Hoelder exponent"""
        with pytest.raises(ModelError):
            PayoffSpec(Put(1.0), holder_beta=1.5)

    @pytest.mark.unit
    def test_problem_invariants(self, put_problem):
        """Test horizon, discount, regime and level checks"""
        with pytest.raises(ModelError):
            put_problem(horizon=0.0)
        with pytest.raises(ModelError):
            put_problem(alpha=-0.1)
        with pytest.raises(ModelError):
            put_problem(y0=2)
        with pytest.raises(ModelError):
            put_problem(x0=0.0)
        with pytest.raises(ModelError):
            CEV(gamma=1.0)

    @pytest.mark.unit
    def test_driftless_allows_negative_levels(self):
        """Test that the driftless model accepts any starting level"""
        problem = ProblemSpec(Driftless(a_scale=2.0), (0.3,), PayoffSpec(Put(1.0)), 1.0, 0.0, x0=-1.0)
        np.testing.assert_allclose(problem.diffusion(np.array([0.0, 5.0]), 0), [0.6, 0.6])
        np.testing.assert_array_equal(problem.drift([1.0, 2.0]), [0.0, 0.0])

    @pytest.mark.unit
    def test_linear_growth_constants(self, put_problem):
        """Test the growth constant per dynamics family"""
        assert linear_growth_constant(put_problem(sigma=(0.2, 0.4))) == pytest.approx(0.4)
        driftless = ProblemSpec(Driftless(a_scale=2.0), (0.3,), PayoffSpec(Put(1.0)), 1.0, 0.0, x0=1.0)
        assert linear_growth_constant(driftless) == pytest.approx(0.6)
        cev = ProblemSpec(CEV(gamma=1.5), (0.2,), PayoffSpec(Put(1.0)), 1.0, 0.0, x0=1.0)
        with pytest.raises(UnsupportedDynamicsError):
            linear_growth_constant(cev)

    @pytest.mark.unit
    def test_gbm_drift(self):
        """Test the GBM drift term"""
        problem = ProblemSpec(GBM(mu=0.1), (0.2,), PayoffSpec(Put(1.0)), 1.0, 0.0, x0=1.0)
        np.testing.assert_allclose(problem.drift([2.0]), [0.2])
