import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tdauction.coins import enumerate_outcomes
from tdauction.curves import DomainError, preset, step_curve
from tdauction.instances import halving_needle
from tdauction.market import (
    BidStream,
    MarketInstance,
    Transcript,
    exact_expected_observe_select,
    exact_expected_vickrey,
    grid_arrivals,
    make_stream,
    observe_select_expected_revenue,
    opt1,
    reported_price,
    utility,
    vickrey_offline,
)
from tdauction.online import observe_then_select

D1 = preset("D1", horizon=2000.0)


def flat_instance(v, d=None):
    n = len(v)
    d = np.ones(n) if d is None else np.asarray(d, float)
    curve = step_curve(float(n), [(j + 1.0, dj) for j, dj in enumerate(d)])
    return MarketInstance(np.asarray(v, float), np.arange(1, n + 1.0), curve, 1.0, float(n))


class TestPricesAndUtility:
    def test_reported_price_d1_midpoint(self):
        assert reported_price(100, 1000, D1) == pytest.approx(50.0)

    def test_reported_price_no_discount(self):
        assert reported_price(7, 0, preset("D4")) == 7.0

    def test_reported_price_half(self):
        curve = step_curve(10.0, [(10.0, 0.5)])
        assert reported_price(10, 3, curve) == 5.0

    def test_reported_price_outside_horizon(self):
        with pytest.raises(DomainError):
            reported_price(1, 2001, D1)

    @pytest.mark.parametrize("won,pay,d,expected", [(True, 4, 0.5, 1.0), (False, 4, 0.5, 0.0), (True, 8, 1, 0.0)])
    def test_utility(self, won, pay, d, expected):
        v = 8 if pay == 8 else 10
        assert utility(v, d, pay, won) == expected


class TestVickrey:
    def test_second_price(self):
        out = vickrey_offline(BidStream.from_prices([5.0, 3.0, 4.0]))
        assert (out.winner, out.payment) == (1, 4.0)

    def test_tie_goes_to_earliest(self):
        out = vickrey_offline(BidStream.from_prices([5.0, 5.0]))
        assert (out.winner, out.payment) == (1, 5.0)

    def test_lone_bidder_pays_zero(self):
        out = vickrey_offline(BidStream.from_prices([7.0]))
        assert (out.winner, out.payment) == (1, 0.0)

    def test_empty_stream(self):
        out = vickrey_offline(BidStream.from_prices([]))
        assert not out.sold and out.revenue == 0

    def test_opt1(self):
        assert opt1(BidStream.from_prices([5, 3, 4])) == 5
        assert opt1(BidStream.from_prices([0, 0])) == 0
        assert opt1(BidStream.from_prices([])) == 0

    def test_opt1_needle_instance(self):
        inst = halving_needle(16)
        assert opt1(make_stream(inst)) == pytest.approx(16.0**4)

    def test_exact_expected_examples(self):
        assert exact_expected_vickrey(flat_instance([3, 2, 1])) == pytest.approx(2.0)
        assert exact_expected_vickrey(flat_instance([3, 2, 1], [1, 1, 0.5])) == pytest.approx(1.5)
        assert exact_expected_vickrey(flat_instance([5], [0.3])) == 0.0

    def test_exact_refuses_large_n(self):
        with pytest.raises(ValueError):
            exact_expected_vickrey(flat_instance(np.ones(9)))

    def test_exact_matches_brute_force(self):
        rng = np.random.default_rng(0)
        v = rng.uniform(0, 10, 5)
        d = np.sort(rng.uniform(0.1, 1, 5))[::-1]
        brute = np.mean([np.sort(v[list(p)] * d)[-2] for p in itertools.permutations(range(5))])
        assert exact_expected_vickrey(flat_instance(v, d)) == pytest.approx(brute)

    @given(st.lists(st.floats(0, 1e6), min_size=2, max_size=7), st.randoms())
    @settings(max_examples=50, deadline=None)
    def test_constant_discount_is_permutation_invariant(self, v, rnd):
        p = list(v)
        rnd.shuffle(p)
        a = vickrey_offline(BidStream.from_prices(v)).revenue
        b = vickrey_offline(BidStream.from_prices(p)).revenue
        assert a == b

    @given(st.lists(st.floats(0, 1e6), min_size=1, max_size=20))
    def test_payment_never_exceeds_winner_price(self, prices):
        out = vickrey_offline(BidStream.from_prices(prices))
        assert out.payment <= prices[out.winner - 1]
        assert out.revenue <= opt1(BidStream.from_prices(prices))


class TestObserveSelectOracle:
    def test_conditioned_order_example(self):
        assert observe_select_expected_revenue([2, 5, 3, 7]) == pytest.approx((2 / 3) ** 2 * 5)

    def test_single_buyer_class(self):
        assert observe_select_expected_revenue([4.0]) == 0.0
        assert observe_select_expected_revenue([]) == 0.0

    @pytest.mark.parametrize("n", [2, 3, 4, 5, 8])
    def test_equal_prices(self, n):
        x = n // 2
        assert observe_select_expected_revenue([3.0] * n) == pytest.approx((x / (x + 1)) ** x * 3.0)

    def test_matches_coin_enumeration_over_permutations(self):
        # independent path: every order, every coin branch, through the mechanism
        v = np.array([4.0, 9.0, 1.0, 6.0, 2.0])
        inst = flat_instance(v)
        total = 0.0
        perms = list(itertools.permutations(range(5)))
        for p in perms:
            outs = enumerate_outcomes(lambda c: observe_then_select(v[list(p)], coins=c).revenue)
            total += sum(pr * r for pr, r in outs)
        expected = total / len(perms)
        assert exact_expected_observe_select(inst, range(1, 6)) == pytest.approx(expected)

    def test_empty_class(self):
        assert exact_expected_observe_select(flat_instance([1, 2, 3]), []) == 0.0


class TestInstanceAndTranscripts:
    def test_json_roundtrip(self):
        inst = flat_instance([3, 2, 1], [1, 0.5, 0.25])
        back = MarketInstance.from_json(inst.to_json())
        assert np.array_equal(back.valuations, inst.valuations)
        assert np.allclose(back.discounts, inst.discounts)
        assert set(json.loads(inst.to_json())) >= {"valuations", "arrivals", "curve", "lambda", "horizon"}

    def test_rejects_negative_valuations(self):
        with pytest.raises((ValueError, DomainError)):
            flat_instance([-1.0, 2.0])

    def test_grid_arrivals(self):
        assert grid_arrivals(1.0, 3.0).tolist() == [1, 2, 3]
        assert grid_arrivals(1.0, 2.5).tolist() == [1, 2]

    def test_transcript_jsonl_has_one_line_per_arrival(self):
        out = vickrey_offline(BidStream.from_prices([5.0, 3.0, 4.0]))
        lines = out.transcript.to_jsonl().strip().splitlines()
        assert len(lines) == 3
        assert isinstance(out.transcript, Transcript)
        rows = [json.loads(s) for s in lines]
        assert [r["decision"] for r in rows] == ["accept", "reject", "reject"]

    def test_make_stream_is_seeded(self):
        inst = flat_instance([1, 2, 3, 4, 5])
        a = make_stream(inst, rng=np.random.default_rng(3)).prices
        b = make_stream(inst, rng=np.random.default_rng(3)).prices
        assert np.array_equal(a, b)
