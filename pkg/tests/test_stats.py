import itertools
import math
import random

import pytest

from sddkit.stats import (
    Pair,
    PairedSample,
    WilcoxonResult,
    _ranks,
    wilcoxon_signed_rank,
)


def _sample(diffs):
    return PairedSample([Pair(task_id=f"t{i}", a=0.0, b=d) for i, d in enumerate(diffs)])


def _brute_force_p(diffs: list[float]) -> tuple[float, float]:
    """Exact two-sided p by enumerating all 2^n sign assignments.

    Returns (statistic, p). Zero differences are dropped; tied absolute
    magnitudes get averaged ranks — the independent reference path.
    """
    nonzero = [d for d in diffs if d != 0.0]
    n = len(nonzero)
    magnitudes = [abs(d) for d in nonzero]
    ranks = _rank_oracle(magnitudes)
    w_plus = sum(r for d, r in zip(nonzero, ranks) if d > 0)
    w_minus = sum(r for d, r in zip(nonzero, ranks) if d < 0)
    observed = min(w_plus, w_minus)
    total = sum(ranks)
    count = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = sum(r for s, r in zip(signs, ranks) if s)
        if min(w, total - w) <= observed:
            count += 1
    return observed, count / (2 ** n)


def _rank_oracle(values: list[float]) -> list[float]:
    out = []
    for v in values:
        less = sum(1 for o in values if o < v)
        equal = sum(1 for o in values if o == v)
        out.append(less + (equal + 1) / 2.0)
    return out


def test_ranks_average_ties():
    assert _ranks([10.0, 20.0, 20.0, 30.0]) == [1.0, 2.5, 2.5, 4.0]
    assert _ranks([5.0, 5.0, 5.0]) == [2.0, 2.0, 2.0]


def test_three_positive_diffs_give_exact_quarter():
    result = wilcoxon_signed_rank(_sample([1.0, 2.0, 3.0]))
    assert result.method == "exact"
    assert result.statistic == 0.0
    assert result.p_two_sided == 0.25


def test_zero_differences_dropped():
    result = wilcoxon_signed_rank(_sample([0.0, 0.0, 1.0, 2.0, 3.0]))
    assert result.n_effective == 3
    assert result.p_two_sided == 0.25


def test_all_zero_is_degenerate():
    result = wilcoxon_signed_rank(_sample([0.0, 0.0]))
    assert result.degenerate
    assert result.p_two_sided is None


def test_exact_matches_brute_force_over_random_sets():
    rng = random.Random(99)
    for _ in range(500):
        n = rng.randint(1, 12)
        # coarse grid forces ties and zeros
        diffs = [rng.choice([-3, -2, -1, 0, 1, 2, 3]) * 0.5 for _ in range(n)]
        result = wilcoxon_signed_rank(_sample(diffs), method="exact")
        if all(d == 0 for d in diffs):
            assert result.degenerate
            continue
        statistic, expected_p = _brute_force_p(diffs)
        assert result.statistic == statistic
        assert result.p_two_sided == pytest.approx(expected_p, abs=1e-12), diffs


def test_exact_vs_approximate_at_n20():
    rng = random.Random(4)
    for _ in range(20):
        diffs = [rng.choice([-4, -3, -2, -1, 1, 2, 3, 4]) + rng.random() * 0.25
                 for _ in range(20)]
        exact = wilcoxon_signed_rank(_sample(diffs), method="exact")
        approx = wilcoxon_signed_rank(_sample(diffs), method="approximate")
        assert exact.p_two_sided is not None and approx.p_two_sided is not None
        assert abs(exact.p_two_sided - approx.p_two_sided) < 0.02


def test_auto_switches_method():
    small = wilcoxon_signed_rank(_sample([1, 2, 3, -4]))
    assert small.method == "exact"
    big = wilcoxon_signed_rank(_sample([(-1) ** i * (i + 1) for i in range(13)]))
    assert big.method == "approximate"


def test_tie_correction_applied():
    # heavy ties at n > 12: variance must shrink vs the tie-free formula
    diffs = [1.0] * 10 + [-1.0] * 8
    result = wilcoxon_signed_rank(_sample(diffs), method="approximate")
    assert result.p_two_sided is not None
    n = 18
    mean = n * (n + 1) / 4.0
    var_no_ties = n * (n + 1) * (2 * n + 1) / 24.0
    tie_term = (18 ** 3 - 18) / 48.0
    sd = math.sqrt(var_no_ties - tie_term)
    z = (result.statistic - mean + 0.5) / sd
    expected = 2.0 * (0.5 * math.erfc(-z / math.sqrt(2.0)))
    assert result.p_two_sided == pytest.approx(min(1.0, expected), abs=1e-9)


def test_p_value_capped_at_one():
    result = wilcoxon_signed_rank(_sample([1.0, -1.0]))
    assert result.p_two_sided is not None
    assert result.p_two_sided <= 1.0
