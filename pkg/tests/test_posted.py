import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tdauction.curves import preset
from tdauction.distributions import ValuationDistribution, fit_mle
from tdauction.market import BidStream
from tdauction.posted import (
    FixedPrice,
    LearningPosted,
    compensation_per_buyer,
    dynamic_posted,
    dynamic_reservation_schedule,
    expected_max_price,
    fixed_price_revenue,
    fixed_reservation_price,
    semi_truthful_posted,
    semi_truthful_schedule,
    slot_index,
)
from tdauction.probes import winner_utility_monotone

U = ValuationDistribution.uniform()
grids = st.lists(st.floats(0.01, 1.0), min_size=1, max_size=40).map(lambda v: np.sort(v)[::-1])


class TestFixedPrice:
    def test_two_slot_optimum(self):
        x, rev = fixed_reservation_price(U, [1.0, 0.5])
        assert x == pytest.approx(1 / math.sqrt(6), abs=1e-3)
        assert rev == pytest.approx((1 - 2 * x**2) * x, abs=1e-6)
        assert rev == pytest.approx(0.2722, abs=1e-3)

    def test_single_buyer(self):
        assert fixed_reservation_price(U, [1.0])[0] == pytest.approx(0.5, abs=1e-6)

    def test_point_mass_sits_just_below_atom(self):
        x, rev = fixed_reservation_price(ValuationDistribution.empirical([2.0, 2.0]), [1.0])
        assert x < 2.0 and x == pytest.approx(2.0)
        assert rev == pytest.approx(2.0)

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            fixed_reservation_price(U, [])

    def test_brute_force_normal(self):
        dist = ValuationDistribution.normal(100, 20)
        d = np.linspace(1, 0.2, 30)
        grid = np.linspace(0, 250, 250_001)
        brute = fixed_price_revenue(dist, d, grid).max()
        assert fixed_reservation_price(dist, d)[1] == pytest.approx(brute, rel=1e-6)

    @given(st.floats(1.0, 5.0), st.floats(0.0, 0.99))
    def test_payment_independent_of_bid(self, scale, base):
        m = FixedPrice(0.4)
        lo = m.run(BidStream.from_prices([0.41 + base]))
        hi = m.run(BidStream.from_prices([(0.41 + base) * scale]))
        assert lo.payment == hi.payment == 0.4

    def test_two_step_lower_bound_on_uniform(self):
        d = np.array([1.0, 0.7, 0.6, 0.2])
        _, rev = fixed_reservation_price(U, d)
        assert rev >= (1 - d[1] / d[0]) * d[1]


class TestDynamicSchedule:
    def test_single_slot(self):
        s = dynamic_reservation_schedule(U, [1.0])
        assert s.thresholds[0] == 0.5 and s.ladder[1] == 0.25

    def test_two_equal_slots(self):
        s = dynamic_reservation_schedule(U, [1.0, 1.0])
        assert s.ladder[1] == 0.25 and s.thresholds[0] == 0.625
        assert s.ladder[2] == pytest.approx(25 / 64)

    def test_two_decreasing_slots(self):
        s = dynamic_reservation_schedule(U, [1.0, 0.5])
        assert s.ladder[1] == 0.125 and s.thresholds[0] == 0.5625
        assert s.ladder[2] == pytest.approx(0.31640625)

    def test_empty(self):
        s = dynamic_reservation_schedule(U, [])
        assert s.n == 0 and s.ladder.tolist() == [0.0]

    @pytest.mark.parametrize("d1", [0.3, 1.0])
    def test_constant_discount_error_decays_harmonically(self, d1):
        R = dynamic_reservation_schedule(U, np.full(1000, d1)).ladder
        e = d1 - R
        # e -> e - e^2/(4 d1) gives e_m ~ 4 d1 / m
        assert e[1000] == pytest.approx(4 * d1 / 1000, rel=0.1)
        assert R[1000] >= 0.95 * d1

    def test_uniform_rescales(self):
        d = np.array([1.0, 0.8, 0.3])
        a = dynamic_reservation_schedule(U, d)
        b = dynamic_reservation_schedule(ValuationDistribution.uniform(0, 200), d)
        assert np.allclose(b.thresholds, 200 * a.thresholds)
        assert np.allclose(b.ladder, 200 * a.ladder)

    def test_numeric_step_matches_closed_form(self):
        # a uniform law on a shifted support forces the numeric path; compare with brute force
        dist = ValuationDistribution.uniform(0.2, 1.2)
        d = np.array([1.0, 0.6, 0.5])
        s = dynamic_reservation_schedule(dist, d)
        R = 0.0
        for m in range(1, 4):
            j = 3 - m
            xs = np.linspace(0, 1.3, 130_001)
            vals = dist.sf(xs) * xs * d[j] + dist.cdf(xs) * R
            R = vals.max()
            assert s.ladder[m] == pytest.approx(R, abs=1e-6)

    @given(grids)
    @settings(max_examples=100, deadline=None)
    def test_ladder_properties(self, d):
        s = dynamic_reservation_schedule(U, d)
        n = d.size
        assert np.all(np.diff(s.ladder) > 0)
        assert np.all(np.diff(s.thresholds * d) <= 1e-15)
        m = np.arange(1, n + 1)
        assert np.all(s.ladder[m] < d[n - m])


class TestSemiTruthful:
    def test_two_slot_payments(self):
        s = semi_truthful_schedule(U, [1.0, 0.5])
        assert s.payments[1] == 0.5
        assert s.payments[0] == pytest.approx(0.53125)

    def test_constant_discount_payments_stay_at_last_threshold(self):
        s = semi_truthful_schedule(U, np.full(20, 0.7))
        assert np.allclose(s.payments, s.thresholds[-1])
        assert np.all(s.payments <= s.thresholds)

    def test_payments_exceed_half_on_strictly_decreasing_grid(self):
        d = np.linspace(1.0, 0.1, 50)
        s = semi_truthful_schedule(U, d)
        assert np.all(s.payments[:-1] > 0.5)

    def test_uncapped_recursion_can_exceed_posted_price(self):
        d = np.array([0.984, 0.211, 0.138, 0.052, 0.003])
        raw = semi_truthful_schedule(U, d, ir_cap=False)
        capped = semi_truthful_schedule(U, d)
        assert np.any(raw.payments > raw.thresholds)
        assert np.all(capped.payments <= capped.thresholds)

    @given(grids)
    @settings(max_examples=100, deadline=None)
    def test_waiting_never_helps_a_winner(self, d):
        assert winner_utility_monotone(semi_truthful_schedule(U, d)) == []

    def test_payment_ladder_below_revenue_ladder(self):
        s = semi_truthful_schedule(U, np.linspace(1, 0.2, 30))
        assert np.all(s.payment_ladder <= s.ladder + 1e-12)

    def test_csv_columns(self):
        rows = semi_truthful_schedule(U, [1.0, 0.5]).to_csv().splitlines()
        assert rows[0] == "j,t_j,d_j,x_j,rho_j,R_m,R_prime_m"
        assert len(rows) == 3


class TestScheduleMechanisms:
    def test_posted_price_and_payment(self):
        d = np.array([1.0, 0.5])
        m = semi_truthful_posted(U, d)
        out = m.run(BidStream(np.array([1.0, 2.0]), np.array([0.5, 0.4])))
        assert out.winner == 2
        assert out.payment == pytest.approx(0.5 * 0.5)

    def test_dynamic_posted_pays_threshold(self):
        d = np.array([1.0, 0.5])
        out = dynamic_posted(U, d).run(BidStream(np.array([1.0, 2.0]), np.array([0.6, 0.1])))
        assert (out.winner, out.payment) == (1, pytest.approx(0.5625))

    def test_slot_index(self):
        assert slot_index(np.array([0.2, 1.0, 1.5, 2.0, 9.0]), 1.0, 3).tolist() == [0, 0, 1, 1, 2]


class TestLearning:
    def test_uniform_mle(self):
        dist = fit_mle("uniform", [0.2, 0.8, 0.5])
        assert dist.support == (0.0, 0.8)

    def test_compensation_vanishes_on_flat_thresholds(self):
        s = semi_truthful_schedule(U, np.full(5, 0.5))
        s.thresholds[:] = 0.5
        assert compensation_per_buyer(s, 3) == 0.0
        assert compensation_per_buyer(s, 1) == 0.0

    def test_no_winner_no_compensation(self):
        curve = preset("D1", horizon=16.0)
        m = LearningPosted(curve, 16, "uniform")
        out = m.run(BidStream(np.arange(1, 17.0), np.zeros(16)))
        assert not out.sold and out.compensation == 0.0 and out.revenue == 0.0

    def test_revenue_is_payment_minus_compensation(self):
        curve = preset("D1", horizon=16.0)
        m = LearningPosted(curve, 16, "uniform")
        t = np.arange(1, 17.0)
        rng = np.random.default_rng(4)
        for _ in range(30):
            out = m.run(BidStream(t, rng.uniform(0, 1, 16) * curve.values(t)))
            if out.sold:
                assert out.revenue == pytest.approx(out.payment - out.compensation)
                assert out.winner > m.n_s
                assert np.all(out.utilities[: m.n_s] >= 0)

    def test_short_stream(self):
        m = LearningPosted(preset("D1", horizon=16.0), 16)
        out = m.run(BidStream(np.array([1.0, 2.0]), np.array([0.3, 0.2])))
        assert not out.sold and out.note == "short-stream"

    def test_bad_family(self):
        with pytest.raises(ValueError):
            LearningPosted(preset("D1"), 100, "empirical")


def test_expected_max_price_uniform_single_slot():
    assert expected_max_price(U, [1.0, 1.0]) == pytest.approx(2 / 3, abs=1e-8)


def test_expected_max_price_atoms():
    dist = ValuationDistribution.empirical([0.0, 4.0])
    # max of two draws from {0, 4} is 4 with prob 3/4
    assert expected_max_price(dist, [1.0, 0.5]) == pytest.approx(0.5 * 4 + 0.25 * 2)
