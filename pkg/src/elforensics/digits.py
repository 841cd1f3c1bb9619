"""Second-significant-digit Benford test on per-station abstentions + nulls."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .model import ElectionDataset, ForensicsError
from .special import chi2_sf

MIN_STATIONS = 50
DF = 9


class NoSecondDigit(ForensicsError):
    pass


class InsufficientData(ForensicsError):
    pass


def benford2_law() -> np.ndarray:
    """P(second significant digit = d) for d = 0..9."""
    return np.array(
        [math.fsum(math.log10(1 + 1 / (10 * j + d)) for j in range(1, 10)) for d in range(10)]
    )


def second_digit(x: int) -> int:
    x = int(x)
    if x < 10:
        raise NoSecondDigit(f"{x} has no second significant digit")
    while x >= 100:
        x //= 10
    return x % 10


def second_digits(values: np.ndarray) -> np.ndarray:
    """Vectorized :func:`second_digit` for an integer array with every value >= 10."""
    v = np.asarray(values, dtype=np.int64)
    if v.size and v.min() < 10:
        raise NoSecondDigit("values below 10 have no second significant digit")
    # integer-only reduction; log10 would misplace exact powers of ten
    while v.size and v.max() >= 100:
        v = np.where(v >= 100, v // 10, v)
    return v % 10


@dataclass(frozen=True)
class DigitTestReport:
    counts: tuple[int, ...]
    expected: tuple[float, ...]
    n_used: int
    n_skipped: int
    chi2: float | None
    p_value: float | None
    insufficient: bool = False

    @property
    def observed_freq(self) -> np.ndarray:
        c = np.asarray(self.counts, dtype=float)
        return c / c.sum() if self.n_used else c

    def to_dict(self) -> dict:
        return {
            "counts": list(self.counts),
            "expected": list(self.expected),
            "n_used": self.n_used,
            "n_skipped": self.n_skipped,
            "chi2": self.chi2,
            "p_value": self.p_value,
            "df": DF,
            "insufficient_data": self.insufficient,
        }


def chi_square_test(counts: Iterable[int], n_skipped: int = 0, min_n: int = MIN_STATIONS) -> DigitTestReport:
    """Pearson chi-square of digit ``counts`` against the second-digit law."""
    counts = tuple(int(c) for c in counts)
    if len(counts) != 10:
        raise ValueError("need one count per digit 0-9")
    law = benford2_law()
    n = sum(counts)
    if n < min_n:
        return DigitTestReport(counts, tuple(law), n, n_skipped, None, None, insufficient=True)
    exp = n * law
    chi2 = float(np.sum((np.asarray(counts) - exp) ** 2 / exp))
    return DigitTestReport(counts, tuple(law), n, n_skipped, chi2, chi2_sf(chi2, DF))


def benford_values_test(values: Iterable[int], min_n: int = MIN_STATIONS) -> DigitTestReport:
    v = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=np.int64)
    used = v[v >= 10]
    counts = np.bincount(second_digits(used), minlength=10)
    return chi_square_test(counts, n_skipped=int(v.size - used.size), min_n=min_n)


def benford_test(ds: ElectionDataset, min_n: int = MIN_STATIONS) -> DigitTestReport:
    """Second-digit test over O = registered - valid of every retained station.

    Stations with O < 10 are skipped and counted.  Below ``min_n`` usable
    stations the report carries ``insufficient=True`` and no p-value.
    """
    return benford_values_test(ds.arrays.O, min_n=min_n)
