"""Test cases for extremal matrices and bang-bang rate selection"""
import numpy as np
import pytest

from regimebound.errors import ExtremalError, ModelError
from regimebound.extremal import (
    bang_bang_field,
    extremal_matrix,
    opposite_extremal_matrix,
    pointwise_rates,
    rate_field_from_surface,
)
from regimebound.model import Monotonicity, RateBoxes, RateMatrix, is_admissible, validate_rate_matrix


class TestExtremalMatrix:
    """Test the worst-case constant matrix"""

    @pytest.mark.unit
    def test_increasing(self, boxes):
        """Test inf of the up boxes and sup of the down boxes"""
        q = extremal_matrix(boxes, Monotonicity.INCREASING)
        np.testing.assert_array_equal(q.q, [[-0.5, 0.5], [1.0, -1.0]])

    @pytest.mark.unit
    def test_decreasing(self, boxes):
        """Test the swapped endpoints"""
        q = extremal_matrix(boxes, Monotonicity.DECREASING)
        np.testing.assert_array_equal(q.q, [[-2.0, 2.0], [0.3, -0.3]])

    @pytest.mark.unit
    def test_singleton_boxes_give_unique_matrix(self):
        """Test that both orderings agree when every box is a point"""
        single = RateBoxes(plus=((1.0, 1.0), (0.7, 0.7)), minus=((0.4, 0.4), (1.2, 1.2)))
        unique = RateMatrix.from_rates([1.0, 0.7], [0.4, 1.2])
        assert extremal_matrix(single, Monotonicity.INCREASING) == unique
        assert extremal_matrix(single, Monotonicity.DECREASING) == unique

    @pytest.mark.unit
    def test_trivial(self):
        """Test the single-regime case"""
        q = extremal_matrix(RateBoxes(plus=(), minus=()), Monotonicity.TRIVIAL)
        assert q == RateMatrix.zeros(1)

    @pytest.mark.unit
    def test_non_monotone_refused(self, boxes):
        """Test that no constant extremizer is claimed for unordered sigma"""
        with pytest.raises(ExtremalError, match="not monotone"):
            extremal_matrix(boxes, Monotonicity.NON_MONOTONE)

    @pytest.mark.unit
    @pytest.mark.parametrize("mono", [Monotonicity.INCREASING, Monotonicity.DECREASING])
    def test_result_valid_and_admissible(self, mono):
        """Test validity and admissibility for a three-regime box"""
        boxes = RateBoxes(plus=((0.5, 2.0), (0.1, 0.4)), minus=((0.3, 1.0), (1.5, 2.5)))
        q = extremal_matrix(boxes, mono)
        assert validate_rate_matrix(q).ok
        assert is_admissible(q, boxes)

    @pytest.mark.unit
    def test_opposite(self, boxes):
        """Test that the opposite matrix is the other ordering's extremal"""
        assert opposite_extremal_matrix(boxes, Monotonicity.INCREASING) == extremal_matrix(
            boxes, Monotonicity.DECREASING
        )


class TestPointwiseRates:
    """Test the bang-bang minimiser"""

    @pytest.mark.unit
    def test_positive_difference_picks_inf(self, boxes):
        """Test c > 0 minimises at the lower end"""
        assert pointwise_rates(0.2, 0.0, 1, boxes)[0] == 0.5

    @pytest.mark.unit
    def test_negative_difference_picks_sup(self, boxes):
        """Test c < 0 minimises at the upper end"""
        assert pointwise_rates(-0.1, 0.0, 1, boxes)[0] == 2.0

    @pytest.mark.unit
    def test_tie_defaults_to_inf(self, boxes):
        """Test the default tie-break"""
        assert pointwise_rates(0.0, 0.0, 1, boxes)[0] == 0.5
        assert pointwise_rates(0.0, 0.0, 2, boxes)[1] == 0.3

    @pytest.mark.unit
    def test_ordering_aware_tie_break(self, boxes):
        """Test ties resolve to the extremal endpoints of the given ordering"""
        assert pointwise_rates(0.0, 0.0, 2, boxes, Monotonicity.INCREASING)[1] == 1.0
        assert pointwise_rates(0.0, 0.0, 1, boxes, Monotonicity.DECREASING)[0] == 2.0

    @pytest.mark.unit
    def test_boundary_regimes_have_no_outward_rate(self, boxes):
        """Test that the top regime never jumps up and the bottom never down"""
        assert pointwise_rates(1.0, -1.0, 1, boxes)[1] == 0.0
        assert pointwise_rates(-1.0, 1.0, 2, boxes)[0] == 0.0

    @pytest.mark.unit
    def test_regime_out_of_range(self, boxes):
        """Test regime index validation"""
        with pytest.raises(ModelError):
            pointwise_rates(0.0, 0.0, 3, boxes)

    @pytest.mark.unit
    def test_tie_tolerance(self, boxes):
        """Test that differences within tie_tol count as ties"""
        assert pointwise_rates(-1e-12, 0.0, 1, boxes, tie_tol=1e-10)[0] == 0.5


class TestRateField:
    """Test vectorised selection over value slices"""

    @pytest.mark.unit
    def test_regime_increasing_surface_gives_extremal_rates(self, boxes):
        """Test that a surface increasing in regime yields the increasing extremal matrix at every node"""
        x = np.linspace(0.5, 1.5, 11)
        values = np.stack([np.maximum(1.0 - x, 0.0) + 0.01, np.maximum(1.0 - x, 0.0) + 0.02], axis=1)
        plus, minus = rate_field_from_surface(values, boxes, Monotonicity.INCREASING)
        ext = extremal_matrix(boxes, Monotonicity.INCREASING)
        np.testing.assert_array_equal(plus, np.broadcast_to(ext.plus_rates(), plus.shape))
        np.testing.assert_array_equal(minus, np.broadcast_to(ext.minus_rates(), minus.shape))

    @pytest.mark.unit
    def test_field_shape_check(self, boxes):
        """Test that the trailing regime axis must match the boxes"""
        with pytest.raises(ModelError):
            bang_bang_field(np.zeros((4, 3)), np.zeros((4, 3)), boxes)
