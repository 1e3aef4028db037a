import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import mp_oracle as mpo
from hybridlink.errors import DomainError
from hybridlink.linkmath import (DeviceLink, FadingModel, LogScalar, per_feedback,
                                 per_feedback_approx, per_feedback_eval, per_forward,
                                 per_forward_approx, q_tail, q_tail_approx, q_tail_eval,
                                 throughput, throughput_dk)

# (k, n, snr, p, r) with r from the 50-digit reference at zeta = 0.05
GOLDEN_RATES = [
    (3, 8, 1.21, 0.39, 2.5924461396175065),
    (3, 3, 9.512, 0.37, 2.7753352982903722),
    (2, 3, 2.591, 0.09, 1.8392790866279734),
    (47, 90, 0.857, 0.42, 4.2224180223804618),
    (2, 8, 0.528, 0.63, 1.3913482934099943),
    (29, 90, 0.409, 0.4, 2.0224224946725477),
    (1, 8, 0.384, 0.29, 0.8646442549341362),
    (5, 16, 0.515, 0.56, 2.8415427573289711),
    (22, 90, 0.485, 0.64, 17.324364314363147),
    (3, 3, 3.062, 0.56, 1.9795853280022718),
    (66, 90, 2.475, 0.43, 62.575972162000863),
    (34, 40, 3.581, 0.36, 32.205852368906371),
]


class TestQTail:
    def test_zero(self):
        assert q_tail(0.0) == 0.5

    @pytest.mark.parametrize("x", [0.5, 1.0, 3.0])
    def test_reflection(self, x):
        assert q_tail(-x) == pytest.approx(1.0 - q_tail(x), abs=1e-15)

    def test_golden(self):
        assert abs(q_tail(1.959964) - 0.024999999096442404) < 1e-8
        assert q_tail(3.0) == pytest.approx(0.0013498980316300945, rel=1e-13)

    def test_saturates_to_exact_zero(self):
        tail = q_tail_eval(45.0)
        assert tail.value == 0.0 and tail.saturated
        assert not q_tail_eval(39.0).saturated

    @pytest.mark.parametrize("bad", [math.inf, -math.inf, math.nan])
    def test_rejects_non_finite(self, bad):
        with pytest.raises(DomainError):
            q_tail(bad)

    @given(st.floats(-5, 37), st.floats(1e-3, 2.0))
    def test_strictly_decreasing(self, x, dx):
        assert q_tail(x + dx) < q_tail(x)

    @given(st.floats(-60, 60), st.floats(0, 5))
    def test_nonincreasing_in_double_precision(self, x, dx):
        assert q_tail(x + dx) <= q_tail(x)


class TestQTailApprox:
    def test_values(self):
        assert q_tail_approx(0.0) == 0.5
        assert q_tail_approx(2.0) == pytest.approx(0.5 * math.exp(-2.0), rel=1e-15)
        assert q_tail_approx(-2.0) == pytest.approx(1 - 0.5 * math.exp(-2.0), rel=1e-15)

    def test_upper_bounds_tail(self):
        rng = np.random.default_rng(3)
        for x in rng.uniform(0, 12, 200):
            assert q_tail_approx(x) >= float(mpo.q(x))

    def test_rejects_non_finite(self):
        with pytest.raises(DomainError):
            q_tail_approx(math.nan)


class TestPerForward:
    def test_at_capacity_is_half(self):
        assert per_forward(10, 10, 3.0) == 0.5

    @pytest.mark.parametrize("k,n,snr", [(5, 20, 1.0), (100, 64, 10.0), (7.5, 33.3, 0.7)])
    def test_against_reference(self, k, n, snr):
        assert per_forward(k, n, snr) == pytest.approx(float(mpo.per_forward(k, n, snr)),
                                                       rel=1e-12)

    def test_zero_blocklength(self):
        with pytest.raises(DomainError):
            per_forward(1, 0, 1.0)

    @given(st.floats(1, 200), st.floats(1, 200), st.floats(0.01, 100))
    def test_in_unit_interval(self, k, n, snr):
        assert 0.0 <= per_forward(k, n, snr) <= 1.0

    def test_approx_follows_argument_sign(self):
        # below capacity (positive argument) the approximation is the small branch
        assert per_forward_approx(2, 20, 3.0) < 0.5 < per_forward_approx(30, 10, 3.0)
        assert per_forward_approx(10, 10, 3.0) == 0.5


class TestPerFeedback:
    def test_single_symbol(self):
        assert per_feedback(1, 1, 4.0) == pytest.approx(0.0227501319481792072, rel=1e-12)

    def test_deep_tail(self):
        assert per_feedback(3, 10, 1.5) == pytest.approx(1.099746841140610419e-67, rel=1e-9)

    def test_saturated_zero(self):
        res = per_feedback_eval(4, 256, 1.0)
        assert res.value == 0.0 and res.saturated

    def test_clamped_to_one(self):
        # The leading factor approaches 2 while Q(s) -> 1/2 for s -> 0.
        res = per_feedback_eval(400, 2, 1.0)
        assert res.value <= 1.0

    def test_no_overflow_at_large_n(self):
        for n in (512, 1024, 2048):
            assert math.isfinite(per_feedback(2048, n, 1000.0))

    def test_approx_value(self):
        assert per_feedback_approx(1, 1, 1.0) == pytest.approx(0.5 * math.exp(-0.5), rel=1e-14)
        assert per_feedback_approx(2, 2048, 1000.0) == 0.0


class TestThroughput:
    @pytest.mark.parametrize("k,n,snr,p,expected", GOLDEN_RATES)
    def test_golden(self, k, n, snr, p, expected):
        assert throughput(k, n, DeviceLink(snr, p, 0.05)).r == pytest.approx(expected, rel=1e-10)

    def test_forward_only_when_always_blocked(self):
        rep = throughput(10, 10, DeviceLink(3.0, 1.0, 0.05))
        assert rep.per_feedback is None and rep.r_feedback is None
        assert rep.r == rep.r_forward == pytest.approx(5.0, rel=1e-12)

    def test_duration_scales_rate(self):
        a = throughput(12, 24, DeviceLink(2.0, 0.2, 0.05)).r
        b = throughput(12, 24, DeviceLink(2.0, 0.2, 0.05, duration=4.0)).r
        assert b == pytest.approx(a / 4.0, rel=1e-14)

    def test_mixture(self):
        rep = throughput(20, 40, DeviceLink(8.0, 0.6, 0.05))
        assert rep.r == pytest.approx(0.6 * rep.r_forward + 0.4 * rep.r_feedback, rel=1e-15)

    @pytest.mark.parametrize("k,n", [(0.5, 10), (10, 0.5), (math.nan, 10)])
    def test_rejects_below_one(self, k, n):
        with pytest.raises(DomainError):
            throughput(k, n, DeviceLink(1.0))

    @given(st.floats(1, 600), st.floats(1, 300), st.floats(0.01, 50),
           st.floats(0, 1), st.floats(0, 0.9))
    @settings(max_examples=200)
    def test_rate_bounded_by_payload(self, k, n, snr, p, zeta):
        r = throughput(k, n, DeviceLink(snr, p, zeta)).r
        assert 0.0 <= r <= k * (1 + 1e-12)

    def test_zeta_never_helps(self):
        lo = throughput(30, 40, DeviceLink(2.0, 0.3, 0.0)).r
        hi = throughput(30, 40, DeviceLink(2.0, 0.3, 0.2)).r
        assert hi < lo


class TestDerivative:
    @pytest.mark.parametrize("k,n,snr,p", [(12, 24, 2.0, 0.2), (20, 40, 8.0, 0.6),
                                           (47, 90, 0.857, 0.42), (5.5, 16, 0.515, 0.0),
                                           (30, 30, 3.0, 1.0)])
    def test_matches_reference_difference(self, k, n, snr, p):
        fd = float(mpo.rate_dk(k, n, snr, p, "0.05"))
        assert throughput_dk(k, n, DeviceLink(snr, p, 0.05)) == pytest.approx(fd, rel=1e-5,
                                                                             abs=1e-12)


class TestTypes:
    @pytest.mark.parametrize("kwargs", [dict(snr=0.0), dict(snr=1.0, block_prob=1.5),
                                        dict(snr=1.0, feedback_cost=1.0),
                                        dict(snr=1.0, duration=0.0)])
    def test_link_validation(self, kwargs):
        with pytest.raises(DomainError):
            DeviceLink(**kwargs)

    def test_link_replace(self):
        link = DeviceLink(2.0, 0.1, 0.05).replace(block_prob=1.0)
        assert link == DeviceLink(2.0, 1.0, 0.05)

    def test_fading_validation(self):
        with pytest.raises(DomainError):
            FadingModel(1.0, "rician")
        with pytest.raises(DomainError):
            FadingModel(-1.0)

    @given(st.floats(1e-300, 1e300))
    def test_log_scalar_round_trip(self, x):
        assert LogScalar.from_value(x).exp() == pytest.approx(x, rel=1e-12)

    def test_log_scalar_zero_and_overflow(self):
        assert LogScalar.from_value(0.0).is_zero
        assert LogScalar(800.0).exp() == math.inf
        assert (LogScalar(1.0) * LogScalar(2.0)).log == 3.0
        with pytest.raises(DomainError):
            LogScalar.from_value(-1.0)
