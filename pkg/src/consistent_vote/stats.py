"""Vote counting and the exact two-sided binomial test behind selective prediction."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class VoteTally:
    """Per-class vote counts from an ensemble at one input."""

    counts: tuple[int, ...]
    num_models: int

    def __post_init__(self):
        if len(self.counts) < 2:
            raise ValueError("a tally needs at least 2 classes")
        if any(c < 0 for c in self.counts):
            raise ValueError(f"negative vote count in {self.counts}")
        if sum(self.counts) != self.num_models:
            raise ValueError(
                f"counts {self.counts} sum to {sum(self.counts)}, expected {self.num_models}"
            )

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    def argmax(self) -> int:
        return top_two(self)[0]


def tally(labels: Sequence[int], num_classes: int) -> VoteTally:
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    labels = [int(v) for v in labels]
    if not labels:
        raise ValueError("cannot tally an empty sequence of labels")
    counts = [0] * num_classes
    for label in labels:
        if not 0 <= label < num_classes:
            raise ValueError(f"label {label} outside [0, {num_classes})")
        counts[label] += 1
    return VoteTally(tuple(counts), len(labels))


def top_two(t: VoteTally) -> tuple[int, int, int, int]:
    """Return ``(class_a, n_a, class_b, n_b)`` for the two largest counts.

    Equal counts are ordered by lowest class index.
    """
    order = sorted(range(t.num_classes), key=lambda c: (-t.counts[c], c))
    a, b = order[0], order[1]
    return a, t.counts[a], b, t.counts[b]


# Stirling-series remainder log(n!) - log(sqrt(2 pi n) (n/e)^n) and the
# deviance term bd0 follow C. Loader, "Fast and Accurate Computation of
# Binomial Probabilities" (2000). Together they give log-pmf values with full
# relative precision, which plain lgamma differences do not for large t.
_S0, _S1, _S2, _S3, _S4 = 1 / 12, 1 / 360, 1 / 1260, 1 / 1680, 1 / 1188
_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)
_LOG_HALF = math.log(0.5)

EXACT_LIMIT = 1024  # below this the tail is summed with exact integers


def _stirlerr(n: int) -> float:
    if n <= 15:
        return math.lgamma(n + 1) - (n + 0.5) * math.log(n) + n - _LOG_SQRT_2PI
    nn = n * n
    if n > 500:
        return (_S0 - _S1 / nn) / n
    if n > 80:
        return (_S0 - (_S1 - _S2 / nn) / nn) / n
    if n > 35:
        return (_S0 - (_S1 - (_S2 - _S3 / nn) / nn) / nn) / n
    return (_S0 - (_S1 - (_S2 - (_S3 - _S4 / nn) / nn) / nn) / nn) / n


def _bd0(x: float, mean: float) -> float:
    """x log(x / mean) + mean - x, without cancellation when x is near mean."""
    if abs(x - mean) < 0.1 * (x + mean):
        v = (x - mean) / (x + mean)
        s = (x - mean) * v
        ej = 2 * x * v
        v *= v
        j = 1
        while True:
            ej *= v
            s1 = s + ej / (2 * j + 1)
            if s1 == s:
                return s1
            s = s1
            j += 1
    return x * math.log(x / mean) + mean - x


def log_binom_pmf_half(i: int, t: int) -> float:
    """log P[X = i] for X ~ Binomial(t, 1/2)."""
    if i == 0 or i == t:
        return t * _LOG_HALF
    half = t / 2
    lc = _stirlerr(t) - _stirlerr(i) - _stirlerr(t - i) - _bd0(i, half) - _bd0(t - i, half)
    lf = 2 * _LOG_SQRT_2PI + math.log(i) + math.log1p(-i / t)
    return lc - 0.5 * lf


@lru_cache(maxsize=65536)
def binom_p_value(k: int, t: int) -> float:
    """Exact two-sided p-value of ``k`` successes in ``t`` fair-coin trials.

    Defined as ``min(1, 2 P[X >= max(k, t - k)])`` for X ~ Binomial(t, 1/2),
    which equals the sum of pmf(i) over all i no more probable than k.
    For t up to ``EXACT_LIMIT`` the tail is an exact integer sum; beyond
    that it is accumulated in log space, smallest terms first.
    """
    k, t = int(k), int(t)
    if t < 1:
        raise ValueError(f"total count must be >= 1, got {t}")
    if not 0 <= k <= t:
        raise ValueError(f"success count {k} outside [0, {t}]")
    m = max(k, t - k)
    if 2 * m <= t + 1:
        # m is the centre (or one past it for odd t): the tail holds >= half the mass
        return 1.0
    if m == t:
        return math.ldexp(1.0, 1 - t)
    if t <= EXACT_LIMIT:
        # integer tail, rounded once on conversion
        c = total = 1
        for i in range(t, m, -1):
            c = c * i // (t - i + 1)
            total += c
        return min(1.0, total / (1 << (t - 1)))
    top = log_binom_pmf_half(m, t)
    logs = []
    for i in range(m, t + 1):
        lp = log_binom_pmf_half(i, t)
        if lp < top - 745.0:  # below exp underflow relative to the leading term
            break
        logs.append(lp)
    tail = math.fsum(math.exp(lp - top) for lp in reversed(logs))
    return min(1.0, 2.0 * math.exp(top) * tail)


def p_value_table(n: int) -> np.ndarray:
    """``table[a, s] = binom_p_value(a, s)`` for ``0 <= a <= s <= n`` (1.0 elsewhere)."""
    table = np.ones((n + 1, n + 1))
    for s in range(1, n + 1):
        for a in range(s + 1):
            table[a, s] = binom_p_value(a, s)
    return table
