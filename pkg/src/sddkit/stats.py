"""Paired nonparametric statistics: the Wilcoxon signed-rank test.

The exact path computes the two-sided p from the signed-rank distribution
via dynamic programming over (doubled) ranks; the approximate path uses
the normal approximation with tie correction and continuity correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

EXACT_THRESHOLD = 12


@dataclass(frozen=True)
class Pair:
    task_id: str
    a: float
    b: float


@dataclass
class PairedSample:
    pairs: list[Pair]

    def differences(self) -> list[float]:
        return [p.b - p.a for p in self.pairs]


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_two_sided: Optional[float]
    n_effective: int
    method: str  # exact | approximate | degenerate
    w_plus: float
    w_minus: float

    @property
    def degenerate(self) -> bool:
        return self.method == "degenerate"

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_two_sided": self.p_two_sided,
            "n_effective": self.n_effective,
            "method": self.method,
            "w_plus": self.w_plus,
            "w_minus": self.w_minus,
        }


def _ranks(values: list[float]) -> list[float]:
    """Ascending ranks with ties averaged."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j + 2) / 2.0  # ranks are 1-based
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def wilcoxon_signed_rank(
    sample: PairedSample,
    method: str = "auto",
    exact_threshold: int = EXACT_THRESHOLD,
) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on b - a differences.

    Zero differences are dropped; n_effective counts the remainder. With
    n_effective <= exact_threshold (or method="exact") the p-value is exact;
    otherwise the normal approximation is used. method may be "auto",
    "exact", or "approximate".
    """
    if not sample.pairs:
        raise ValueError("sample must contain at least one pair")
    if method not in ("auto", "exact", "approximate"):
        raise ValueError(f"unknown method: {method}")

    diffs = [d for d in sample.differences() if d != 0]
    n = len(diffs)
    if n == 0:
        return WilcoxonResult(
            statistic=0.0, p_two_sided=None, n_effective=0,
            method="degenerate", w_plus=0.0, w_minus=0.0,
        )

    abs_diffs = [abs(d) for d in diffs]
    ranks = _ranks(abs_diffs)
    w_plus = sum(r for r, d in zip(ranks, diffs) if d > 0)
    total = n * (n + 1) / 2.0
    w_minus = total - w_plus
    statistic = min(w_plus, w_minus)

    use_exact = method == "exact" or (method == "auto" and n <= exact_threshold)
    if use_exact:
        p = _exact_p(ranks, statistic)
        chosen = "exact"
    else:
        p = _approximate_p(ranks, statistic, n)
        chosen = "approximate"
    return WilcoxonResult(
        statistic=statistic, p_two_sided=p, n_effective=n,
        method=chosen, w_plus=w_plus, w_minus=w_minus,
    )


def _exact_p(ranks: list[float], statistic: float) -> float:
    """P[min(W+, W-) <= observed] over all equally likely sign assignments.

    Works on doubled ranks so tied (half-integer) ranks stay integral.
    """
    doubled = [int(round(2 * r)) for r in ranks]
    total = sum(doubled)
    # counts[s] = number of sign assignments with doubled W+ == s
    counts = [0] * (total + 1)
    counts[0] = 1
    for d in doubled:
        nxt = counts[:]
        for s in range(total - d + 1):
            if counts[s]:
                nxt[s + d] += counts[s]
        counts = nxt
    m = int(round(2 * statistic))
    n_assignments = 2 ** len(ranks)
    low = sum(counts[: m + 1])
    high = sum(counts[total - m:])
    p = (low + high) / n_assignments
    return min(1.0, p)


def _approximate_p(ranks: list[float], statistic: float, n: int) -> float:
    """Normal approximation with tie correction and continuity correction."""
    mean = n * (n + 1) / 4.0
    variance = n * (n + 1) * (2 * n + 1) / 24.0
    # tie correction: subtract sum(t^3 - t)/48 over groups of tied ranks
    groups: dict[float, int] = {}
    for r in ranks:
        groups[r] = groups.get(r, 0) + 1
    variance -= sum(t**3 - t for t in groups.values() if t > 1) / 48.0
    if variance <= 0:
        return 1.0
    z = (statistic - mean + 0.5) / math.sqrt(variance)
    p = 2.0 * (0.5 * math.erfc(-z / math.sqrt(2.0)))
    return min(1.0, p)
