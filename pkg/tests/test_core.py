import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ferrytwin.core import (
    CoreError,
    GeoPoint,
    Metrics,
    angle_diff_deg,
    bearing_deg,
    haversine_m,
    metrics,
    quantile,
)

finite_lat = st.floats(min_value=-89.0, max_value=89.0)
finite_lon = st.floats(min_value=-179.0, max_value=179.0)
geopoints = st.builds(GeoPoint, lat=finite_lat, lon=finite_lon)


class TestHaversine:
    def test_identity_is_zero(self):
        p = GeoPoint(49.2, -123.5)
        assert haversine_m(p, p) == 0.0

    def test_one_degree_latitude(self):
        # Closed form for a pure-latitude displacement: R * dphi.
        expected = 6_371_000.0 * math.radians(1.0)
        got = haversine_m(GeoPoint(0.0, 0.0), GeoPoint(1.0, 0.0))
        assert got == pytest.approx(expected, abs=0.1)
        assert got == pytest.approx(111_194.9, abs=0.1)

    @given(a=geopoints, b=geopoints)
    def test_symmetry(self, a, b):
        assert haversine_m(a, b) == pytest.approx(haversine_m(b, a), rel=1e-12)

    @given(a=geopoints, b=geopoints, c=geopoints)
    @settings(max_examples=200)
    def test_triangle_inequality(self, a, b, c):
        ab, bc, ac = haversine_m(a, b), haversine_m(b, c), haversine_m(a, c)
        assert ac <= ab + bc + 1e-6 * max(1.0, ac)

    def test_geopoint_validation(self):
        with pytest.raises(CoreError):
            GeoPoint(91.0, 0.0)
        with pytest.raises(CoreError):
            GeoPoint(0.0, 200.0)
        with pytest.raises(CoreError):
            GeoPoint(float("nan"), 0.0)


class TestQuantile:
    def test_hand_case(self):
        # position 0.5 * 3 = 1.5 -> midpoint of 2 and 3
        assert quantile([1, 2, 3, 4], 0.5) == 2.5

    def test_extremes(self):
        vals = [3.0, 7.0, 9.0, 20.0]
        assert quantile(vals, 0.0) == 3.0
        assert quantile(vals, 1.0) == 20.0

    def test_empty_errors(self):
        with pytest.raises(CoreError, match="empty input"):
            quantile([], 0.5)

    @given(
        vals=st.lists(st.floats(min_value=-1e6, max_value=1e6), min_size=1, max_size=40),
        q1=st.floats(min_value=0, max_value=1),
        q2=st.floats(min_value=0, max_value=1),
    )
    def test_monotone_in_q(self, vals, q1, q2):
        vals = sorted(vals)
        lo, hi = min(q1, q2), max(q1, q2)
        assert quantile(vals, lo) <= quantile(vals, hi) + 1e-9


class TestMetrics:
    def test_perfect_prediction(self):
        m = metrics([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert m == Metrics(rmse=0.0, std=0.0, r2=1.0)

    def test_mean_predictor_r2_zero(self):
        truth = [1.0, 2.0, 3.0, 6.0]
        mean = sum(truth) / len(truth)
        m = metrics([mean] * 4, truth)
        assert m.r2 == pytest.approx(0.0, abs=1e-12)

    def test_hand_case(self):
        m = metrics([0.0, 0.0], [0.0, 2.0])
        assert m.rmse == pytest.approx(math.sqrt(2.0), abs=1e-4)
        assert m.std == pytest.approx(1.0, abs=1e-12)

    def test_constant_truth_undefined_r2(self):
        m = metrics([1.0, 2.0], [5.0, 5.0])
        assert m.r2 is None

    def test_length_mismatch(self):
        with pytest.raises(CoreError):
            metrics([1.0], [1.0, 2.0])

    @given(
        pairs=st.lists(
            st.tuples(
                st.floats(min_value=-100, max_value=100),
                st.floats(min_value=-100, max_value=100),
            ),
            min_size=1,
            max_size=50,
        )
    )
    def test_rmse_dominates_std(self, pairs):
        pred = [p for p, _ in pairs]
        truth = [t for _, t in pairs]
        m = metrics(pred, truth)
        # rmse^2 = bias^2 + variance of errors
        assert m.rmse**2 >= m.std**2 - 1e-9 * max(1.0, m.std**2)


class TestAngles:
    def test_angle_diff_wraps(self):
        assert angle_diff_deg(10.0, 350.0) == pytest.approx(20.0)
        assert angle_diff_deg(350.0, 10.0) == pytest.approx(-20.0)

    def test_bearing_cardinal(self):
        a = GeoPoint(0.0, 0.0)
        assert bearing_deg(a, GeoPoint(1.0, 0.0)) == pytest.approx(0.0, abs=1e-9)
        assert bearing_deg(a, GeoPoint(0.0, 1.0)) == pytest.approx(90.0, abs=1e-9)
