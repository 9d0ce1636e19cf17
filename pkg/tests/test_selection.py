import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedselect.errors import InvalidArgumentError
from fedselect.selection import (
    ClientPerf,
    ShareSpec,
    StrategyConfig,
    decay_count,
    dynamic_layer_count,
    filter_clients,
    make_share_spec,
    oort_utility,
    select_acsp,
    select_clients,
    select_oort_lite,
    select_poc,
    select_random_k,
)


def perfs(accs=None, losses=None, durations=None):
    n = len(accs or losses or durations)
    accs = accs or [0.5] * n
    losses = losses or [1.0] * n
    durations = durations or [0.0] * n
    return [ClientPerf(i, a, l, d) for i, (a, l, d) in enumerate(zip(accs, losses, durations))]


ACSP = StrategyConfig("acsp_fl", decay=0.005)


class TestFilter:
    def test_below_mean(self):
        assert filter_clients(perfs([0.5, 0.9, 0.7])) == [0, 2]

    def test_all_equal(self):
        assert filter_clients(perfs([0.3] * 5)) == [0, 1, 2, 3, 4]

    def test_equal_values_that_float_mean_rounds_below(self):
        # the float mean of ten 0.1s is 0.09999999999999999
        assert filter_clients(perfs([0.1] * 10)) == list(range(10))

    def test_single(self):
        assert filter_clients([ClientPerf(7, 0.4, 1.0)]) == [7]

    def test_worst_first_ties_by_id(self):
        assert filter_clients(perfs([0.3, 0.1, 0.1, 0.9])) == [1, 2, 0]

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            filter_clients([])


class TestDecay:
    @pytest.mark.parametrize("t,expected", [(0, 100), (50, 78), (100, 61), (200, 37)])
    def test_table(self, t, expected):
        assert decay_count(100, t, 0.005) == expected

    def test_zero_decay(self):
        assert all(decay_count(17, t, 0.0) == 17 for t in range(0, 500, 37))

    def test_size_one(self):
        assert all(decay_count(1, t, 0.5) == 1 for t in range(50))

    @pytest.mark.parametrize("decay", [-0.1, 1.0, 1.5])
    def test_invalid(self, decay):
        with pytest.raises(InvalidArgumentError):
            decay_count(10, 0, decay)


class TestAcsp:
    def test_round_zero(self):
        assert select_acsp(perfs([0.2, 0.4, 0.6, 0.8]), 0, ACSP) == [0, 1]

    def test_round_139(self):
        assert select_acsp(perfs([0.2, 0.4, 0.6, 0.8]), 139, ACSP) == [0]

    def test_all_perfect_then_truncated(self):
        p = perfs([1.0] * 10)
        assert select_acsp(p, 0, ACSP) == list(range(10))
        assert select_acsp(p, 200, ACSP) == [0, 1, 2, 3]

    def test_wrong_kind(self):
        with pytest.raises(InvalidArgumentError):
            select_acsp(perfs([0.1]), 0, StrategyConfig("poc"))


class TestRandomK:
    def test_full_fraction(self):
        assert select_random_k([4, 2, 9], 1.0, 3, 0) == [2, 4, 9]

    def test_half_of_thirty(self):
        picked = select_random_k(range(30), 0.5, 0, 1)
        assert len(picked) == 15 and len(set(picked)) == 15 and picked == sorted(picked)

    def test_deterministic(self):
        assert select_random_k(range(30), 0.3, 5, 2) == select_random_k(range(30), 0.3, 5, 2)
        assert select_random_k(range(30), 0.3, 5, 2) != select_random_k(range(30), 0.3, 6, 2)

    def test_float_noise_in_count(self):
        assert len(select_random_k(range(30), 0.1, 0, 0)) == 3

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            select_random_k([], 0.5, 0, 0)


class TestPoc:
    def test_highest_loss(self):
        assert select_poc(perfs(losses=[0.1, 2.0, 1.0]), 1 / 3) == [1]

    def test_tie_by_id(self):
        assert select_poc(perfs(losses=[1.0, 1.0, 1.0]), 2 / 3) == [0, 1]

    def test_full_is_loss_descending(self):
        assert select_poc(perfs(losses=[0.3, 0.9, 0.1, 0.5]), 1.0) == [1, 3, 0, 2]

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            select_poc([], 0.5)


class TestOort:
    def test_zero_exponent_matches_poc(self):
        p = perfs(losses=[0.3, 0.9, 0.1, 0.5], durations=[5.0, 0.1, 9.0, 2.0])
        cfg = StrategyConfig("oort_lite", k_fraction=0.5, oort_delay_exponent=0.0)
        assert select_oort_lite(p, 0.5, cfg) == select_poc(p, 0.5)

    def test_slow_client_ranks_after(self):
        p = perfs(losses=[1.0, 1.0], durations=[2.0, 1.0])
        cfg = StrategyConfig("oort_lite", oort_delay_target=1.0, oort_delay_exponent=1.0)
        assert select_oort_lite(p, 1.0, cfg) == [1, 0]
        assert oort_utility(p[0], 1.0, 1.0) == pytest.approx(0.5)

    def test_fast_clients_not_boosted(self):
        assert oort_utility(ClientPerf(0, 0.5, 2.0, 0.01), 1.0, 2.0) == 2.0

    def test_full_fraction(self):
        cfg = StrategyConfig("oort_lite")
        assert sorted(select_oort_lite(perfs(losses=[1, 2, 3]), 1.0, cfg)) == [0, 1, 2]


class TestDispatch:
    def test_full(self):
        assert select_clients(StrategyConfig("full"), perfs([0.1, 0.9, 0.5]), 4) == [0, 1, 2]

    def test_deev_matches_acsp(self):
        p = perfs([0.2, 0.4, 0.6, 0.8])
        deev = StrategyConfig("deev", decay=0.005)
        assert select_clients(deev, p, 139) == select_clients(ACSP, p, 139) == [0]

    def test_result_sorted(self):
        p = perfs(losses=[0.3, 0.9, 0.1, 0.5])
        assert select_clients(StrategyConfig("poc", k_fraction=0.5), p, 0) == [1, 3]

    def test_config_validation(self):
        with pytest.raises(InvalidArgumentError):
            StrategyConfig("greedy")
        with pytest.raises(InvalidArgumentError):
            StrategyConfig("acsp_fl", decay=1.5)
        with pytest.raises(InvalidArgumentError):
            StrategyConfig("random_k", k_fraction=0.0)


class TestLayers:
    @pytest.mark.parametrize("acc,expected", [(0.2, 4), (0.25, 4), (0.34, 3), (0.5, 2),
                                              (0.92, 2), (1.0, 1)])
    def test_dld_table(self, acc, expected):
        assert dynamic_layer_count(acc, 4) == expected

    def test_dld_clamped(self):
        assert dynamic_layer_count(0.3, 2) == 2
        assert dynamic_layer_count(0.0, 3) == 3

    @pytest.mark.parametrize("acc", [-0.01, 1.01])
    def test_dld_invalid(self, acc):
        with pytest.raises(InvalidArgumentError):
            dynamic_layer_count(acc, 4)

    def test_share_spec_head(self):
        assert make_share_spec(2, 4).layer_indices == (0, 1)
        assert make_share_spec(4, 4) == ShareSpec.full(4)

    def test_share_spec_tail(self):
        assert make_share_spec(2, 4, "tail").layer_indices == (2, 3)

    @pytest.mark.parametrize("count", [0, 5])
    def test_share_spec_invalid(self, count):
        with pytest.raises(InvalidArgumentError):
            make_share_spec(count, 4)

    def test_share_spec_validation(self):
        with pytest.raises(InvalidArgumentError):
            ShareSpec((1, 0), 3)
        with pytest.raises(InvalidArgumentError):
            ShareSpec((3,), 3)


accuracy_lists = st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=1, max_size=40)


@settings(max_examples=200, deadline=None)
@given(accs=accuracy_lists)
def test_filter_properties(accs):
    picked = filter_clients(perfs(accs))
    mean = sum(Fraction(a) for a in accs) / len(accs)
    assert picked
    assert all(Fraction(accs[i]) <= mean for i in picked)
    assert [accs[i] for i in picked] == sorted(accs[i] for i in picked)
    assert len(set(picked)) == len(picked)


@settings(max_examples=200, deadline=None)
@given(size=st.integers(1, 500), t=st.integers(0, 2000),
       decay=st.floats(0.0, 0.999, allow_nan=False))
def test_decay_properties(size, t, decay):
    count = decay_count(size, t, decay)
    assert 1 <= count <= size
    assert decay_count(size, t + 1, decay) <= count
    assert count == max(1, math.ceil(size * (1 - decay) ** t))


@settings(max_examples=100, deadline=None)
@given(accs=accuracy_lists, t=st.integers(0, 1000))
def test_acsp_is_prefix_of_filter(accs, t):
    p = perfs(accs)
    chosen = select_acsp(p, t, ACSP)
    assert chosen == filter_clients(p)[: len(chosen)]
    assert len(chosen) == decay_count(len(filter_clients(p)), t, 0.005)


@settings(max_examples=100, deadline=None)
@given(acc=st.floats(0.0, 1.0, allow_nan=False), total=st.integers(1, 8))
def test_dld_range(acc, total):
    assert 1 <= dynamic_layer_count(acc, total) <= total
